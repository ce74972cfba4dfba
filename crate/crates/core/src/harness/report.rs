//! Human-readable summaries.

use std::fmt::Write;

use crate::harness::montecarlo::McSummary;
use crate::params::Param;

/// Table with one column per scenario and one row per statistic: the
/// global χ² followed by the four min-max statistics. Values above their
/// threshold are marked with `*`.
pub fn summary_table(summaries: &[McSummary]) -> String {
    let mut out = String::new();
    let width = summaries.iter().map(|s| s.label.len()).max().unwrap_or(0).max(12) + 2;
    let _ = write!(out, "{:<16}", "statistic");
    for s in summaries {
        let _ = write!(out, "{:>width$}", s.label);
    }
    out.push('\n');
    let _ = write!(out, "{:<16}", "chi2 global");
    for s in summaries {
        let mark = if s.mean_detected() { "*" } else { " " };
        let _ = write!(out, "{:>width$}", format!("{:.3}{mark}", s.mean_chi2_global));
    }
    out.push('\n');
    for p in Param::ALL {
        let _ = write!(out, "{:<16}", format!("minmax {}", p.name()));
        for s in summaries {
            let v = s.mean_chi2_minmax[p.index()];
            let mark = if v > s.thresholds.isolation { "*" } else { " " };
            let _ = write!(out, "{:>width$}", format!("{v:.3}{mark}"));
        }
        out.push('\n');
    }
    let _ = write!(out, "{:<16}", "detection rate");
    for s in summaries {
        let _ = write!(out, "{:>width$}", format!("{:.2} ", s.detection_rate));
    }
    out.push('\n');
    let _ = write!(out, "{:<16}", "runs (failed)");
    for s in summaries {
        let _ = write!(out, "{:>width$}", format!("{} ({}) ", s.n_runs, s.failures.len()));
    }
    out.push('\n');
    if let Some(s) = summaries.first() {
        let _ = writeln!(
            out,
            "thresholds: {:.3} (global, 4 dof), {:.3} (min-max, 1 dof); * marks values above threshold",
            s.thresholds.global, s.thresholds.isolation
        );
    }
    out
}
