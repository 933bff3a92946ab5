//! Result records with re-derivable pass/fail semantics, plus CSV/JSON
//! writers. Output is byte-reproducible for a fixed config and seed (no
//! timestamps; deterministic float formatting).

use crate::error::{QgError, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

pub const BUILD_ID: &str = concat!("qgwnd-", env!("CARGO_PKG_VERSION"));

/// One scalar result. `pass` is present iff `target` and `tolerance` are, and
/// always equals `|value - target| <= tolerance`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportRecord {
    pub kind: String,
    pub name: String,
    pub value: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stderr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub target: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<bool>,
    pub seed: u64,
    pub build_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ReportRecord {
    pub fn new(kind: &str, name: impl Into<String>, value: f64, seed: u64) -> Self {
        assert!(value.is_finite(), "report values must be finite ({kind}/{})", name.into());
        ReportRecord {
            kind: kind.to_string(),
            name: String::new(),
            value,
            stderr: None,
            target: None,
            tolerance: None,
            pass: None,
            seed,
            build_id: BUILD_ID.to_string(),
            note: None,
        }
    }

    pub fn named(kind: &str, name: impl Into<String>, value: f64, seed: u64) -> Self {
        let mut r = ReportRecord::new(kind, "", value, seed);
        r.name = name.into();
        r
    }

    pub fn with_stderr(mut self, se: f64) -> Self {
        self.stderr = Some(se);
        self
    }

    /// Pass iff |value - target| <= tolerance.
    pub fn with_target(mut self, target: f64, tolerance: f64) -> Self {
        self.target = Some(target);
        self.tolerance = Some(tolerance);
        self.pass = Some((self.value - target).abs() <= tolerance);
        self
    }

    /// Pass iff value lies in [lo, hi] (stored as midpoint/half-width).
    pub fn with_range(self, lo: f64, hi: f64) -> Self {
        self.with_target(0.5 * (lo + hi), 0.5 * (hi - lo))
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// Write the summary JSON for one experiment run.
pub fn write_summary(dir: &Path, kind: &str, records: &[ReportRecord]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{kind}_summary.json"));
    let doc = serde_json::to_string_pretty(records)?;
    std::fs::write(path, doc + "\n")?;
    Ok(())
}

/// Write a plot-ready CSV series with an explicit header.
pub fn write_series(dir: &Path, kind: &str, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{kind}_series.csv"));
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "{header}")?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(f, "{}", line.join(","))?;
    }
    Ok(())
}

/// Render records as aligned console lines (one per record).
pub fn format_records(records: &[ReportRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let status = match r.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "    ",
        };
        let se = r.stderr.map(|s| format!(" +- {s:.3e}")).unwrap_or_default();
        let tgt = match (r.target, r.tolerance) {
            (Some(t), Some(tol)) => format!("  (target {t:.6e} tol {tol:.2e})"),
            _ => String::new(),
        };
        let note = r.note.as_deref().map(|n| format!("  [{n}]")).unwrap_or_default();
        out.push_str(&format!("{status}  {:<32} {:.6e}{se}{tgt}{note}\n", r.name, r.value));
    }
    out
}

/// Verify the stored pass flags are re-derivable from value/target/tolerance.
pub fn check_consistency(records: &[ReportRecord]) -> Result<()> {
    for r in records {
        if !r.value.is_finite() {
            return Err(QgError::Config(format!("record {} has a non-finite value", r.name)));
        }
        if let (Some(t), Some(tol), Some(p)) = (r.target, r.tolerance, r.pass) {
            if p != ((r.value - t).abs() <= tol) {
                return Err(QgError::Config(format!("record {} has an inconsistent pass flag", r.name)));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_pass_semantics() {
        let r = ReportRecord::named("spectrum", "lambda", -0.111, 7).with_target(-1.0 / 9.0, 5e-3);
        assert_eq!(r.pass, Some(true));
        let r = ReportRecord::named("spectrum", "lambda", -0.2, 7).with_target(-1.0 / 9.0, 5e-3);
        assert_eq!(r.pass, Some(false));
        let r = ReportRecord::named("decay", "slope", -0.5, 7).with_range(-0.65, -0.35);
        assert_eq!(r.pass, Some(true));
        check_consistency(&[r]).unwrap();
    }

    #[test]
    fn writers_are_deterministic() {
        let dir = std::env::temp_dir().join("qgwnd_report_test");
        let recs =
            vec![ReportRecord::named("spectrum", "n_neg", 1.0, 3).with_target(1.0, 0.0)];
        write_summary(&dir, "spectrum", &recs).unwrap();
        let a = std::fs::read(dir.join("spectrum_summary.json")).unwrap();
        write_summary(&dir, "spectrum", &recs).unwrap();
        let b = std::fs::read(dir.join("spectrum_summary.json")).unwrap();
        assert_eq!(a, b);
        write_series(&dir, "spectrum", "index,lambda,is_point", &[vec![0.0, -0.1, 1.0]]).unwrap();
        let s = std::fs::read_to_string(dir.join("spectrum_series.csv")).unwrap();
        assert!(s.starts_with("index,lambda,is_point\n0,-0.1,1\n"));
        std::fs::remove_dir_all(&dir).ok();
    }
}
