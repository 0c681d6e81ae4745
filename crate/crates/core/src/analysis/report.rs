//! Sample statistics and pass/fail reporting (plain text and JUnit XML).

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// Mean and standard error of a sample, with its size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation over `√n`; 0 for fewer than two samples.
    pub stderr: f64,
}

impl Stat {
    /// Summed in input order, so the result is reproducible.
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, stderr: f64::NAN };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { n, mean, stderr }
    }

    /// `mean / stderr`; 0 when both vanish.
    pub fn z_score(&self) -> f64 {
        if self.stderr > 0.0 {
            self.mean / self.stderr
        } else if self.mean == 0.0 {
            0.0
        } else {
            f64::INFINITY.copysign(self.mean)
        }
    }
}

/// Standard error of the difference of two independent means.
pub fn combined_stderr(a: &Stat, b: &Stat) -> f64 {
    (a.stderr.powi(2) + b.stderr.powi(2)).sqrt()
}

/// `true` if every step `a → b` satisfies `b.mean ≤ a.mean + k·σ_{a,b}`.
pub fn non_increasing_within(stats: &[Stat], k: f64) -> bool {
    stats
        .windows(2)
        .all(|w| w[1].mean <= w[0].mean + k * combined_stderr(&w[0], &w[1]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteResult {
    pub name: String,
    pub cases: Vec<CaseResult>,
}

impl SuiteResult {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            cases: Vec::new(),
        }
    }

    pub fn push(&mut self, case: CaseResult) {
        self.cases.push(case);
    }

    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CaseResult> {
        self.cases.iter().filter(|c| !c.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for c in &self.cases {
            let _ = writeln!(
                s,
                "[{}] {} ({:.1}s): {}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.seconds,
                c.detail
            );
        }
        let failed = self.failures().count();
        let _ = writeln!(s, "{}: {} passed, {} failed", self.name, self.cases.len() - failed, failed);
        s
    }

    pub fn to_junit_xml(&self) -> String {
        let failed = self.failures().count();
        let total: f64 = self.cases.iter().map(|c| c.seconds).sum();
        let mut s = String::from("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
        let _ = writeln!(
            s,
            "<testsuite name=\"{}\" tests=\"{}\" failures=\"{}\" time=\"{:.3}\">",
            xml_escape(&self.name),
            self.cases.len(),
            failed,
            total
        );
        for c in &self.cases {
            let _ = write!(
                s,
                "  <testcase name=\"{}\" classname=\"{}\" time=\"{:.3}\"",
                xml_escape(&c.name),
                xml_escape(&self.name),
                c.seconds
            );
            if c.passed {
                let _ = writeln!(s, ">\n    <system-out>{}</system-out>\n  </testcase>", xml_escape(&c.detail));
            } else {
                let _ = writeln!(
                    s,
                    ">\n    <failure message=\"{}\"/>\n  </testcase>",
                    xml_escape(&c.detail)
                );
            }
        }
        s.push_str("</testsuite>\n");
        s
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stat_values() {
        let s = Stat::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert!((s.stderr - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(Stat::of(&[0.0, 0.0]).z_score(), 0.0);
        assert_eq!(Stat::of(&[7.0]).stderr, 0.0);
    }

    #[test]
    fn monotone_check_uses_combined_stderr() {
        let a = Stat { n: 4, mean: 1.0, stderr: 0.3 };
        let b = Stat { n: 4, mean: 1.4, stderr: 0.4 };
        assert!(non_increasing_within(&[a, b], 1.0));
        assert!(!non_increasing_within(&[a, b], 0.5));
    }

    #[test]
    fn junit_escapes_and_counts() {
        let mut s = SuiteResult::new("suite");
        s.push(CaseResult { name: "a<b".into(), passed: true, detail: "ok & fine".into(), seconds: 0.5 });
        s.push(CaseResult { name: "c".into(), passed: false, detail: "\"bad\"".into(), seconds: 1.0 });
        let xml = s.to_junit_xml();
        assert!(xml.contains("tests=\"2\" failures=\"1\""));
        assert!(xml.contains("a&lt;b") && xml.contains("ok &amp; fine") && xml.contains("&quot;bad&quot;"));
        assert!(!s.passed());
        assert!(s.to_text().contains("[FAIL] c"));
    }
}
