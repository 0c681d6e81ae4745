use mks_core::density::{mollified_empirical, DepositMethod};
use mks_core::grid::{h_norm, l2_norm, Field, GridSpec};
use mks_core::kernel::{MollifierSpec, Profile};
use mks_core::Vec2;
use proptest::prelude::*;

fn grid(n: usize) -> GridSpec {
    GridSpec::new(5.0, n).unwrap()
}

fn random_field(n: usize) -> impl Strategy<Value = Field> {
    prop::collection::vec(-10.0f64..10.0, n * n).prop_map(move |v| Field::new(grid(n), v).unwrap())
}

fn positions(max: usize) -> impl Strategy<Value = Vec<Vec2>> {
    prop::collection::vec((-2.5f64..2.5, -2.5f64..2.5).prop_map(|(x, y)| Vec2::new(x, y)), 1..max)
}

fn spec(n: usize) -> MollifierSpec {
    MollifierSpec {
        alpha: 0.15,
        n_particles: n,
        profile: Profile::Gaussian { sigma: 1.0 },
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sobolev_norms_increase_with_order(f in random_field(16), a in -3.0f64..3.0, d in 0.0f64..3.0) {
        let (lo, hi) = (h_norm(&f, a), h_norm(&f, a + d));
        prop_assert!(lo <= hi * (1.0 + 1e-14), "{} > {}", lo, hi);
    }

    #[test]
    fn parseval_at_order_zero(f in random_field(16)) {
        let (a, b) = (h_norm(&f, 0.0), l2_norm(&f));
        prop_assert!((a - b).abs() <= 1e-10 * b);
    }

    #[test]
    fn fft_round_trip(f in random_field(32)) {
        let back = f.to_spectral().to_field();
        let scale = f.max_abs();
        for (a, b) in f.values.iter().zip(&back.values) {
            prop_assert!((a - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn fast_deposit_matches_direct(pos in positions(1000), mass in 0.1f64..20.0) {
        let s = spec(pos.len());
        let g = GridSpec::new(6.0, 64).unwrap();
        let direct = mollified_empirical(&pos, &s, g, mass, DepositMethod::Direct).field;
        let fast = mollified_empirical(&pos, &s, g, mass, DepositMethod::Fast).field;
        let tol = 1e-8 * direct.max_abs();
        for (a, b) in direct.values.iter().zip(&fast.values) {
            prop_assert!((a - b).abs() <= tol);
        }
    }

    #[test]
    fn mollified_density_is_nonnegative_with_the_right_mass(pos in positions(400), mass in 0.1f64..20.0) {
        let s = spec(pos.len());
        let g = GridSpec::new(8.0, 64).unwrap();
        for method in [DepositMethod::Direct, DepositMethod::Fast] {
            let d = mollified_empirical(&pos, &s, g, mass, method);
            prop_assert_eq!(d.truncated, 0);
            prop_assert!(d.field.min() >= -1e-12);
            prop_assert!((d.field.integral() - mass).abs() <= 1e-9 * mass);
        }
    }
}
