//! `report.json` and `summary.csv` writers.

use std::fmt::Write as _;
use std::path::Path;

use super::{McReport, QMLE_LABEL};
use crate::error::{QlaError, Result};

fn fmt(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        String::new()
    }
}

/// Columns `n, loss_id, coord, mean, var, ks, discrepancy_vs_qmle`; the last
/// is the mean `|ũ - û|` and is empty on QMLE rows.
pub fn summary_csv(report: &McReport) -> String {
    let dim = report.d1 + report.d2;
    let mut out = String::from("n,loss_id,coord,mean,var,ks,discrepancy_vs_qmle\n");
    for cell in &report.cells {
        for c in 0..dim {
            let disc = if cell.estimator == QMLE_LABEL {
                String::new()
            } else {
                report
                    .discrepancy(cell.n, &cell.estimator, QMLE_LABEL, c + 1)
                    .map_or(String::new(), |d| fmt(d.mean_abs))
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                cell.n,
                cell.estimator,
                c + 1,
                fmt(cell.mean[c]),
                fmt(cell.covariance[c * dim + c]),
                fmt(cell.ks[c]),
                disc
            );
        }
    }
    out
}

/// Writes `report.json` and `summary.csv` into `dir` (created if needed).
pub fn write_outputs(report: &McReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| QlaError::Io(format!("{}: {e}", dir.display())))?;
    let json = serde_json::to_string_pretty(report).map_err(|e| QlaError::Io(e.to_string()))?;
    let write = |name: &str, text: &str| {
        let p = dir.join(name);
        std::fs::write(&p, text).map_err(|e| QlaError::Io(format!("{}: {e}", p.display())))
    };
    write("report.json", &json)?;
    write("summary.csv", &summary_csv(report))
}
