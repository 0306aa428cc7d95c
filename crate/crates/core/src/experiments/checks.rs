//! Pass/fail verdicts over a [`McReport`].

use serde::Serialize;

use super::stats::{ks_critical, ks_critical_two_sample, ks_two_sample};
use super::{Cell, McReport, QMLE_LABEL};
use crate::error::{QlaError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckItem {
    pub label: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub items: Vec<CheckItem>,
}

impl CheckResult {
    fn new(name: &str, items: Vec<CheckItem>) -> Self {
        Self {
            name: name.to_string(),
            passed: items.iter().all(|i| i.passed),
            items,
        }
    }

    /// Items that failed, one per line.
    pub fn failures(&self) -> String {
        self.items
            .iter()
            .filter(|i| !i.passed)
            .map(|i| format!("{}: {} (bound {})", i.label, i.value, i.bound))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{}: {}", self.name, if self.passed { "PASS" } else { "FAIL" })?;
        for i in &self.items {
            writeln!(
                f,
                "  [{}] {} = {:.5} ({})",
                if i.passed { "ok" } else { "!!" },
                i.label,
                i.value,
                i.bound
            )?;
        }
        Ok(())
    }
}

fn item(label: String, value: f64, bound: String, passed: bool) -> CheckItem {
    CheckItem {
        label,
        value,
        bound,
        passed: passed && value.is_finite(),
    }
}

/// `[lo, hi]` times each limit variance.
pub fn relative_bands(limit_variance: &[f64], band: [f64; 2]) -> Vec<(f64, f64)> {
    limit_variance.iter().map(|v| (band[0] * v, band[1] * v)).collect()
}

/// Loss-independence of the Bayes estimates: median discrepancies between
/// every pair of losses and against the QMLE are non-increasing in `n` (up to
/// the configured slack) and small at the largest `n`, and the loss variants'
/// samples are close in two-sample KS distance there.
pub fn theorem1_check(report: &McReport) -> Result<CheckResult> {
    let ns = &report.config.n_list;
    if ns.len() < 2 || report.primary.len() < 2 {
        return Err(QlaError::Precondition(format!(
            "needs at least 2 values of n and 2 losses, got {} and {}",
            ns.len(),
            report.primary.len()
        )));
    }
    let th = &report.config.thresholds;
    let dim = report.d1 + report.d2;
    let mut pairs: Vec<(String, String)> = Vec::new();
    for (i, a) in report.primary.iter().enumerate() {
        for b in report.primary.iter().skip(i + 1) {
            pairs.push((a.clone(), b.clone()));
        }
    }
    pairs.extend(report.primary.iter().map(|a| (a.clone(), QMLE_LABEL.to_string())));
    let largest = report.largest_n();
    let mut items = Vec::new();
    for (a, b) in &pairs {
        for c in 1..=dim {
            let med: Vec<f64> = ns
                .iter()
                .map(|n| report.discrepancy(*n, a, b, c).map_or(f64::NAN, |d| d.median_abs))
                .collect();
            // 0/0 (identical estimators) contributes nothing
            let worst = med.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
            items.push(item(
                format!("median |{a} - {b}| u{c} step ratio over n = {ns:?} (medians {med:.4?})"),
                worst,
                format!("<= {}", 1.0 + th.monotone_slack),
                med.windows(2).all(|w| w[1] <= (1.0 + th.monotone_slack) * w[0]),
            ));
            let last = *med.last().expect("non-empty");
            items.push(item(
                format!("median |{a} - {b}| u{c} at n = {largest}"),
                last,
                format!("< {}", th.discrepancy),
                last < th.discrepancy,
            ));
        }
    }
    for (i, a) in report.primary.iter().enumerate() {
        for b in report.primary.iter().skip(i + 1) {
            let (ca, cb) = match (report.cell(largest, a), report.cell(largest, b)) {
                (Some(x), Some(y)) => (x, y),
                _ => continue,
            };
            let crit = ks_critical_two_sample(ca.samples.len().min(cb.samples.len()));
            for c in 0..dim {
                let d = ks_two_sample(&ca.column(c), &cb.column(c));
                items.push(item(
                    format!("two-sample KS {a} vs {b} u{} at n = {largest}", c + 1),
                    d,
                    format!("< {crit:.4}"),
                    d < crit,
                ));
            }
        }
    }
    Ok(CheckResult::new("theorem1", items))
}

/// Variance in the per-coordinate band, KS distance to the limit normal below
/// `1.63/√R`, and pairwise sample correlations below `2/√R`.
pub fn normality_check(cell: &Cell, limit_variance: &[f64], bands: &[(f64, f64)]) -> Result<CheckResult> {
    let r = cell.samples.len();
    if r < 200 {
        return Err(QlaError::Precondition(format!("normality check needs R >= 200, got {r}")));
    }
    let dim = cell.dim();
    if limit_variance.len() != dim || bands.len() != dim {
        return Err(QlaError::InvalidArgument("variance and band lengths must match the sample dimension".into()));
    }
    let name = &cell.estimator;
    let mut items = Vec::new();
    let ks_crit = ks_critical(r);
    let rho_crit = 2.0 / (r as f64).sqrt();
    for a in 0..dim {
        let v = cell.covariance[a * dim + a];
        let (lo, hi) = bands[a];
        items.push(item(
            format!("{name} var u{} (limit {})", a + 1, limit_variance[a]),
            v,
            format!("in [{lo}, {hi}]"),
            v >= lo && v <= hi,
        ));
        items.push(item(
            format!("{name} KS u{}", a + 1),
            cell.ks[a],
            format!("< {ks_crit:.4}"),
            cell.ks[a] < ks_crit,
        ));
    }
    for a in 0..dim {
        for b in a + 1..dim {
            let rho = cell.covariance[a * dim + b] / (cell.covariance[a * dim + a] * cell.covariance[b * dim + b]).sqrt();
            items.push(item(
                format!("{name} |corr(u{}, u{})|", a + 1, b + 1),
                rho.abs(),
                format!("< {rho_crit:.4}"),
                rho.abs() < rho_crit,
            ));
        }
    }
    Ok(CheckResult::new("normality", items))
}

/// Empirical against Gaussian moments at the largest `n` (relative tolerance
/// from the thresholds), and `max/min` of `E|u|⁴` across `n` below the
/// configured ratio.
pub fn moment_check(report: &McReport, estimator: &str) -> Result<CheckResult> {
    let th = &report.config.thresholds;
    let largest = report.largest_n();
    let mut items = Vec::new();
    for row in report.moments.iter().filter(|m| m.n == largest && m.estimator == estimator) {
        let tol = th.moment_rel_tol * row.target.abs().max(1e-12);
        items.push(item(
            format!("{estimator} E[{}] at n = {largest} (target {})", row.function, row.target),
            row.empirical,
            format!("within {} relative", th.moment_rel_tol),
            (row.empirical - row.target).abs() <= tol,
        ));
    }
    let abs4: Vec<f64> = report
        .config
        .n_list
        .iter()
        .map(|n| report.cell(*n, estimator).map_or(f64::NAN, |c| c.abs4))
        .collect();
    if abs4.iter().any(|v| v.is_nan()) {
        return Err(QlaError::Precondition(format!("no samples for `{estimator}` at some n")));
    }
    let ratio = abs4.iter().copied().fold(f64::NEG_INFINITY, f64::max) / abs4.iter().copied().fold(f64::INFINITY, f64::min);
    items.push(item(
        format!("{estimator} max/min E|u|^4 over n (values {abs4:.4?})"),
        ratio,
        format!("< {}", th.moment_ratio),
        ratio < th.moment_ratio,
    ));
    Ok(CheckResult::new("moments", items))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn synthetic(var: [f64; 2], r: usize, seed: u64) -> Cell {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n1 = Normal::new(0.0, var[0].sqrt()).unwrap();
        let n2 = Normal::new(0.0, var[1].sqrt()).unwrap();
        let samples: Vec<Vec<f64>> = (0..r).map(|_| vec![n1.sample(&mut rng), n2.sample(&mut rng)]).collect();
        Cell::summarize(20000, "synthetic", (0..r).collect(), samples, &[0.5, 2.0])
    }

    #[test]
    fn null_case_passes() {
        let lv = [0.5, 2.0];
        let cell = synthetic([0.5, 2.0], 400, 3);
        let res = normality_check(&cell, &lv, &relative_bands(&lv, [0.75, 1.33])).unwrap();
        assert!(res.passed, "{res}");
    }

    #[test]
    fn doubled_variance_fails() {
        let lv = [0.5, 2.0];
        let cell = synthetic([1.0, 4.0], 400, 3);
        let res = normality_check(&cell, &lv, &relative_bands(&lv, [0.75, 1.33])).unwrap();
        assert!(!res.passed);
        assert!(res.items.iter().any(|i| i.label.contains("var u1") && !i.passed));
    }

    #[test]
    fn too_few_replicates() {
        let lv = [0.5, 2.0];
        let cell = synthetic([0.5, 2.0], 100, 3);
        assert!(matches!(
            normality_check(&cell, &lv, &relative_bands(&lv, [0.75, 1.33])),
            Err(QlaError::Precondition(_))
        ));
    }
}
