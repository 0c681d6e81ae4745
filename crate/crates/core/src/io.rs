//! Binary containers (little-endian) and CSV exports.
//!
//! `MKS1` trajectory: magic, `N: u64`, `dt: f64`, `seed: u64`,
//! `n_times: u64`, the times, then per snapshot all `x` followed by all `y`.
//!
//! `MKF1` field: magic, `half_extent: f64`, `n: u64`, `n²` values row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::grid::{Field, GridSpec};
use crate::particles::{Snapshot, Trajectory};
use crate::vec2::Vec2;

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"MKS1";
pub const FIELD_MAGIC: &[u8; 4] = b"MKF1";

/// Contents of an `MKS1` container.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub n_particles: usize,
    pub dt: f64,
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
}

impl From<&Trajectory> for TrajectoryRecord {
    fn from(t: &Trajectory) -> Self {
        Self {
            n_particles: t.n_particles,
            dt: t.dt,
            seed: t.seed,
            snapshots: t.snapshots.clone(),
        }
    }
}

fn check_magic(r: &mut impl Read, want: &[u8; 4]) -> Result<()> {
    let mut got = [0u8; 4];
    r.read_exact(&mut got)?;
    if &got != want {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(want)
        )));
    }
    Ok(())
}

fn read_len(r: &mut impl Read, what: &str, limit: u64) -> Result<usize> {
    let v = r.read_u64::<LE>()?;
    if v > limit {
        return Err(Error::Format(format!("{what} = {v} is implausibly large")));
    }
    Ok(v as usize)
}

pub fn write_trajectory(w: &mut impl Write, rec: &TrajectoryRecord) -> Result<()> {
    for s in &rec.snapshots {
        if s.positions.len() != rec.n_particles {
            return Err(Error::Format(format!(
                "snapshot at t={} has {} particles, header says {}",
                s.t,
                s.positions.len(),
                rec.n_particles
            )));
        }
    }
    w.write_all(TRAJECTORY_MAGIC)?;
    w.write_u64::<LE>(rec.n_particles as u64)?;
    w.write_f64::<LE>(rec.dt)?;
    w.write_u64::<LE>(rec.seed)?;
    w.write_u64::<LE>(rec.snapshots.len() as u64)?;
    for s in &rec.snapshots {
        w.write_f64::<LE>(s.t)?;
    }
    for s in &rec.snapshots {
        for p in &s.positions {
            w.write_f64::<LE>(p.x)?;
        }
        for p in &s.positions {
            w.write_f64::<LE>(p.y)?;
        }
    }
    Ok(())
}

pub fn read_trajectory(r: &mut impl Read) -> Result<TrajectoryRecord> {
    check_magic(r, TRAJECTORY_MAGIC)?;
    let n = read_len(r, "N", 1 << 32)?;
    let dt = r.read_f64::<LE>()?;
    let seed = r.read_u64::<LE>()?;
    let nt = read_len(r, "n_times", 1 << 32)?;
    let mut times = vec![0.0; nt];
    r.read_f64_into::<LE>(&mut times)?;
    let mut xs = vec![0.0; n];
    let mut ys = vec![0.0; n];
    let mut snapshots = Vec::with_capacity(nt);
    for t in times {
        r.read_f64_into::<LE>(&mut xs)?;
        r.read_f64_into::<LE>(&mut ys)?;
        let positions = xs.iter().zip(&ys).map(|(&x, &y)| Vec2::new(x, y)).collect();
        snapshots.push(Snapshot { t, positions });
    }
    Ok(TrajectoryRecord {
        n_particles: n,
        dt,
        seed,
        snapshots,
    })
}

pub fn write_field(w: &mut impl Write, field: &Field) -> Result<()> {
    w.write_all(FIELD_MAGIC)?;
    w.write_f64::<LE>(field.grid.half_extent)?;
    w.write_u64::<LE>(field.grid.n as u64)?;
    for &v in &field.values {
        w.write_f64::<LE>(v)?;
    }
    Ok(())
}

pub fn read_field(r: &mut impl Read) -> Result<Field> {
    check_magic(r, FIELD_MAGIC)?;
    let l = r.read_f64::<LE>()?;
    let n = read_len(r, "n", 1 << 16)?;
    let grid = GridSpec::new(l, n).map_err(|e| Error::Format(e.to_string()))?;
    let mut values = vec![0.0; grid.len()];
    r.read_f64_into::<LE>(&mut values)?;
    Field::new(grid, values)
}

pub fn save_trajectory(path: impl AsRef<Path>, rec: &TrajectoryRecord) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_trajectory(&mut w, rec)?;
    w.flush()?;
    Ok(())
}

pub fn load_trajectory(path: impl AsRef<Path>) -> Result<TrajectoryRecord> {
    read_trajectory(&mut BufReader::new(File::open(path)?))
}

pub fn save_field(path: impl AsRef<Path>, field: &Field) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field(&mut w, field)?;
    w.flush()?;
    Ok(())
}

pub fn load_field(path: impl AsRef<Path>) -> Result<Field> {
    read_field(&mut BufReader::new(File::open(path)?))
}

/// `t,i,x,y` rows, one per particle per snapshot.
pub fn write_positions_csv(w: &mut impl Write, snapshots: &[Snapshot]) -> Result<()> {
    writeln!(w, "t,i,x,y")?;
    for s in snapshots {
        for (i, p) in s.positions.iter().enumerate() {
            writeln!(w, "{},{},{:e},{:e}", s.t, i, p.x, p.y)?;
        }
    }
    Ok(())
}

/// `x,y,value` rows in storage order.
pub fn write_field_csv(w: &mut impl Write, field: &Field) -> Result<()> {
    writeln!(w, "x,y,value")?;
    let g = field.grid;
    for j in 0..g.n {
        for k in 0..g.n {
            let x = g.node(j, k);
            writeln!(w, "{},{},{:e}", x.x, x.y, field.at(j, k))?;
        }
    }
    Ok(())
}

/// Two-column CSV with a header.
pub fn write_series_csv(w: &mut impl Write, header: (&str, &str), rows: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "{},{}", header.0, header.1)?;
    for (a, b) in rows {
        writeln!(w, "{a},{b:e}")?;
    }
    Ok(())
}

/// One row of a kernel test-vector table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureRow {
    pub input: Vec2,
    /// The cutoff level `A` or the mollifier width `ε`, depending on the table.
    pub param: f64,
    pub out: Vec2,
}

pub const FIXTURE_HEADER: &str = "input_x,input_y,A_or_eps,out_x,out_y";

/// Parse a table with the columns of [`FIXTURE_HEADER`].
pub fn parse_fixture_csv(text: &str) -> Result<Vec<FixtureRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(FIXTURE_HEADER) {
        return Err(Error::Format(format!("fixture header must be `{FIXTURE_HEADER}`")));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: Vec<f64> = l
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("fixture line {}: {e}", i + 2)))?;
            if v.len() != 5 {
                return Err(Error::Format(format!("fixture line {}: expected 5 columns, got {}", i + 2, v.len())));
            }
            Ok(FixtureRow {
                input: Vec2::new(v[0], v[1]),
                param: v[2],
                out: Vec2::new(v[3], v[4]),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(n: usize, times: &[f64], seed: u64) -> TrajectoryRecord {
        let snapshots = times
            .iter()
            .enumerate()
            .map(|(s, &t)| Snapshot {
                t,
                positions: (0..n)
                    .map(|i| Vec2::new(i as f64 * 0.5 - s as f64, (i * s) as f64 * 1e-3))
                    .collect(),
            })
            .collect();
        TrajectoryRecord {
            n_particles: n,
            dt: 0.01,
            seed,
            snapshots,
        }
    }

    #[test]
    fn bad_magic_and_truncation_are_format_errors() {
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &record(3, &[0.0, 0.5], 1)).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_trajectory(&mut bad.as_slice()), Err(Error::Format(_))));
        buf.truncate(buf.len() - 4);
        assert!(read_trajectory(&mut buf.as_slice()).is_err());
        assert!(read_field(&mut &b"MKS1...."[..]).is_err());
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &record(2, &[0.25], 7)).unwrap();
        assert_eq!(&buf[..4], b"MKS1");
        assert_eq!(u64::from_le_bytes(buf[4..12].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(buf[12..20].try_into().unwrap()), 0.01);
        assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 7);
        assert_eq!(u64::from_le_bytes(buf[28..36].try_into().unwrap()), 1);
        assert_eq!(buf.len(), 36 + 8 + 2 * 2 * 8);
    }

    #[test]
    fn csv_shapes() {
        let mut out = Vec::new();
        write_positions_csv(&mut out, &record(2, &[0.0, 1.0], 0).snapshots).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 1 + 4);
        assert_eq!(text.lines().next(), Some("t,i,x,y"));
        let g = GridSpec::new(1.0, 16).unwrap();
        let mut out = Vec::new();
        write_field_csv(&mut out, &Field::zeros(g)).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1 + 256);
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rec = record(5, &[0.0, 0.1, 0.2], 3);
        let p = dir.path().join("t.mks");
        save_trajectory(&p, &rec).unwrap();
        assert_eq!(load_trajectory(&p).unwrap(), rec);
        let g = GridSpec::new(2.0, 16).unwrap();
        let f = Field::from_fn(g, |x| x.x * x.y);
        let p = dir.path().join("f.mkf");
        save_field(&p, &f).unwrap();
        assert_eq!(load_field(&p).unwrap(), f);
    }

    proptest! {
        #[test]
        fn trajectory_round_trips_bit_for_bit(
            n in 0usize..20,
            nt in 0usize..4,
            seed in any::<u64>(),
            dt in 1e-6f64..1.0,
            coords in proptest::collection::vec(any::<f64>(), 0..160),
        ) {
            let snapshots = (0..nt).map(|s| Snapshot {
                t: s as f64 * 0.1,
                positions: (0..n).map(|i| {
                    let c = |k: usize| coords.get((2 * (s * n + i) + k) % coords.len().max(1)).copied().unwrap_or(0.0);
                    Vec2::new(c(0), c(1))
                }).collect(),
            }).collect();
            let rec = TrajectoryRecord { n_particles: n, dt, seed, snapshots };
            let mut buf = Vec::new();
            write_trajectory(&mut buf, &rec).unwrap();
            let back = read_trajectory(&mut buf.as_slice()).unwrap();
            // Compare bit patterns so NaN payloads count too.
            prop_assert_eq!(back.n_particles, n);
            prop_assert_eq!(back.seed, seed);
            prop_assert_eq!(back.dt.to_bits(), dt.to_bits());
            for (a, b) in back.snapshots.iter().zip(&rec.snapshots) {
                prop_assert_eq!(a.t.to_bits(), b.t.to_bits());
                for (p, q) in a.positions.iter().zip(&b.positions) {
                    prop_assert_eq!(p.x.to_bits(), q.x.to_bits());
                    prop_assert_eq!(p.y.to_bits(), q.y.to_bits());
                }
            }
        }

        #[test]
        fn field_round_trips(l in 0.1f64..100.0, seed in any::<u64>()) {
            let g = GridSpec::new(l, 16).unwrap();
            let f = Field::from_fn(g, |x| ((x.x * 1.7 + x.y) * (seed % 1000) as f64).sin());
            let mut buf = Vec::new();
            write_field(&mut buf, &f).unwrap();
            prop_assert_eq!(read_field(&mut buf.as_slice()).unwrap(), f);
        }
    }
}
