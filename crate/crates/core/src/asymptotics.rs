//! Limit quantities: the invariant measure, the information matrices `Γ¹`,
//! `Γ²`, the identifiability functionals `Y¹`, `Y²` and the limit covariance
//! `diag((Γ¹)⁻¹, (Γ²)⁻¹)`.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{QlaError, Result};
use crate::integrate::{adaptive, kronrod_rule};
use crate::linalg::{cholesky_in_place, cholesky_log_det, cholesky_solve_in_place, outer_self, pairwise_sum, spd_inverse, symmetric_eigenvalues, symmetrize};
use crate::models::{cartesian, DiffusionModel, TrueParameter, FD_STEP};
use crate::simulator::{simulate_long_path, ObservationSet};

/// Panels of the composite Kronrod rule used against analytic densities.
pub const DENSITY_PANELS: usize = 512;
const TAIL_MASS: f64 = 1e-8;
const MAX_DOUBLINGS: usize = 24;

/// Stationary law of the diffusion: a density on an interval (integrated by a
/// composite Kronrod rule) or the empirical law of a long path.
#[derive(Clone)]
pub struct InvariantMeasure {
    kind: MeasureKind,
}

#[derive(Clone)]
enum MeasureKind {
    Analytic {
        density: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
        support: (f64, f64),
        nodes: Vec<f64>,
        weights: Vec<f64>,
    },
    Empirical {
        states: Vec<f64>,
        dim: usize,
    },
}

impl std::fmt::Debug for InvariantMeasure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.kind {
            MeasureKind::Analytic { support, .. } => write!(f, "InvariantMeasure::Analytic({support:?})"),
            MeasureKind::Empirical { states, dim } => {
                write!(f, "InvariantMeasure::Empirical({} states, dim {dim})", states.len() / dim)
            }
        }
    }
}

fn composite_rule(a: f64, b: f64, panels: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = kronrod_rule();
    let width = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * 15);
    let mut weights = Vec::with_capacity(panels * 15);
    for p in 0..panels {
        let lo = a + width * p as f64;
        let c = lo + 0.5 * width;
        for k in 0..15 {
            nodes.push(c + 0.5 * width * x[k]);
            weights.push(0.5 * width * w[k]);
        }
    }
    (nodes, weights)
}

impl InvariantMeasure {
    /// Scalar density on `support`; must integrate to 1 within 1e-6.
    pub fn analytic(density: Arc<dyn Fn(f64) -> f64 + Send + Sync>, support: (f64, f64)) -> Result<Self> {
        if !(support.0 < support.1) {
            return Err(QlaError::InvalidArgument(format!("empty support {support:?}")));
        }
        let (nodes, base) = composite_rule(support.0, support.1, DENSITY_PANELS);
        let weights: Vec<f64> = nodes.iter().zip(&base).map(|(x, w)| w * density(*x)).collect();
        let mass = pairwise_sum(&weights);
        if !((mass - 1.0).abs() <= 1e-6) {
            return Err(QlaError::InternalConsistency(format!(
                "density integrates to {mass} on {support:?}"
            )));
        }
        Ok(Self {
            kind: MeasureKind::Analytic {
                density,
                support,
                nodes,
                weights,
            },
        })
    }

    /// Empirical law of the states of `path`.
    pub fn empirical(path: &ObservationSet) -> Self {
        Self {
            kind: MeasureKind::Empirical {
                states: path.values().to_vec(),
                dim: path.dim(),
            },
        }
    }

    /// Empirical law of a long simulated path (10% burn-in discarded).
    pub fn from_long_path(
        model: &DiffusionModel,
        truth: &TrueParameter,
        total_time: f64,
        step: f64,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self::empirical(&simulate_long_path(model, truth, total_time, step, seed)?))
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self.kind, MeasureKind::Analytic { .. })
    }

    pub fn state_dim(&self) -> usize {
        match &self.kind {
            MeasureKind::Analytic { .. } => 1,
            MeasureKind::Empirical { dim, .. } => *dim,
        }
    }

    pub fn support(&self) -> Option<(f64, f64)> {
        match &self.kind {
            MeasureKind::Analytic { support, .. } => Some(*support),
            MeasureKind::Empirical { .. } => None,
        }
    }

    /// Density value (analytic kind only).
    pub fn density(&self, x: f64) -> Option<f64> {
        match &self.kind {
            MeasureKind::Analytic { density, .. } => Some(density(x)),
            MeasureKind::Empirical { .. } => None,
        }
    }

    /// `∫ g dν` for a vector-valued `g` writing `len` components.
    pub fn expect_vec(&self, len: usize, g: &dyn Fn(&[f64], &mut [f64])) -> Vec<f64> {
        let mut buf = vec![0.0; len];
        let (count, terms): (usize, Vec<Vec<f64>>) = match &self.kind {
            MeasureKind::Analytic { nodes, weights, .. } => (
                1,
                nodes
                    .iter()
                    .zip(weights)
                    .map(|(x, w)| {
                        g(std::slice::from_ref(x), &mut buf);
                        buf.iter().map(|v| v * w).collect()
                    })
                    .collect(),
            ),
            MeasureKind::Empirical { states, dim } => (
                states.len() / dim,
                states
                    .chunks(*dim)
                    .map(|x| {
                        g(x, &mut buf);
                        buf.clone()
                    })
                    .collect(),
            ),
        };
        let mut column = vec![0.0; terms.len()];
        (0..len)
            .map(|c| {
                for (k, t) in terms.iter().enumerate() {
                    column[k] = t[c];
                }
                pairwise_sum(&column) / count as f64
            })
            .collect()
    }

    /// `∫ g dν` for scalar `g`.
    pub fn expect(&self, g: &dyn Fn(&[f64]) -> f64) -> f64 {
        self.expect_vec(1, &|x, out| out[0] = g(x))[0]
    }
}

/// `B(x, θ₁)` for a scalar state.
fn scalar_b(model: &DiffusionModel, x: f64, theta1: &[f64]) -> f64 {
    let b = model.diffusion(&[x], theta1);
    b.iter().map(|v| v * v).sum()
}

/// Tabulated scale function `s(x) = ∫₀ˣ 2a/B` on panel endpoints of
/// `[-L, L]`, with intermediate values by adaptive quadrature from the nearest
/// endpoint.
struct ScaleFunction {
    model: DiffusionModel,
    theta1: Vec<f64>,
    theta2: Vec<f64>,
    lo: f64,
    width: f64,
    at_edges: Vec<f64>,
}

impl ScaleFunction {
    fn integrand(&self, s: f64) -> f64 {
        2.0 * self.model.drift(&[s], &self.theta2)[0] / scalar_b(&self.model, s, &self.theta1)
    }

    fn new(model: &DiffusionModel, truth: &TrueParameter, half: f64, panels: usize) -> Self {
        let mut sf = Self {
            model: model.clone(),
            theta1: truth.theta1_star.clone(),
            theta2: truth.theta2_star.clone(),
            lo: -half,
            width: 2.0 * half / panels as f64,
            at_edges: vec![0.0; panels + 1],
        };
        // panels is even, so x = 0 is the middle edge
        let mid = panels / 2;
        let f = |s: f64| sf.integrand(s);
        let mut edges = vec![0.0; panels + 1];
        for k in mid..panels {
            let a = -half + sf.width * k as f64;
            edges[k + 1] = edges[k] + adaptive(&f, a, a + sf.width, 1e-15, 1e-14, 64).value;
        }
        for k in (0..mid).rev() {
            let a = -half + sf.width * k as f64;
            edges[k] = edges[k + 1] - adaptive(&f, a, a + sf.width, 1e-15, 1e-14, 64).value;
        }
        sf.at_edges = edges;
        sf
    }

    fn eval(&self, x: f64) -> f64 {
        let panels = self.at_edges.len() - 1;
        let k = (((x - self.lo) / self.width).floor().max(0.0) as usize).min(panels);
        let a = self.lo + self.width * k as f64;
        let f = |s: f64| self.integrand(s);
        self.at_edges[k] + adaptive(&f, a, x, 1e-15, 1e-14, 64).value
    }
}

fn scale_sigma(model: &DiffusionModel, truth: &TrueParameter) -> f64 {
    let e = FD_STEP;
    let slope = (model.drift(&[e], &truth.theta2_star)[0] - model.drift(&[-e], &truth.theta2_star)[0]) / (2.0 * e);
    let b0 = scalar_b(model, 0.0, &truth.theta1_star);
    if slope < 0.0 && b0 > 0.0 {
        (b0 / (-2.0 * slope)).sqrt()
    } else {
        1.0
    }
}

/// Unnormalized mass `∫_{-L}^{L} exp(s)/B` and the scale function used.
fn unnormalized_mass(model: &DiffusionModel, truth: &TrueParameter, half: f64) -> (f64, ScaleFunction) {
    let sf = ScaleFunction::new(model, truth, half, DENSITY_PANELS);
    let (nodes, weights) = composite_rule(-half, half, DENSITY_PANELS);
    let terms: Vec<f64> = nodes
        .iter()
        .zip(&weights)
        .map(|(x, w)| w * sf.eval(*x).exp() / scalar_b(model, *x, &truth.theta1_star))
        .collect();
    (pairwise_sum(&terms), sf)
}

/// Stationary density `∝ exp(∫₀ˣ 2a/B) / B` of a scalar diffusion at the true
/// parameter. The support `[-L, L]` starts at `L = 4σ̂` (σ̂ from the drift
/// slope at 0) and doubles until the mass added by a doubling is below 1e-8.
pub fn invariant_density_1d(model: &DiffusionModel, truth: &TrueParameter) -> Result<InvariantMeasure> {
    if model.state_dim() != 1 {
        return Err(QlaError::Precondition(format!(
            "stationary density formula needs a scalar state, model {} has dimension {}",
            model.name(),
            model.state_dim()
        )));
    }
    truth.validate(model)?;
    let mut half = 4.0 * scale_sigma(model, truth);
    let mut mass = unnormalized_mass(model, truth, half).0;
    for _ in 0..MAX_DOUBLINGS {
        let (next, next_sf) = unnormalized_mass(model, truth, 2.0 * half);
        if !next.is_finite() || !mass.is_finite() {
            break;
        }
        let settled = (next - mass).abs() <= TAIL_MASS * next;
        half *= 2.0;
        mass = next;
        if settled {
            let norm = mass;
            let m = model.clone();
            let th1 = truth.theta1_star.clone();
            let sf = Arc::new(next_sf);
            let support = (-half, half);
            let density = Arc::new(move |x: f64| {
                if x < support.0 || x > support.1 {
                    return 0.0;
                }
                sf.eval(x).exp() / scalar_b(&m, x, &th1) / norm
            });
            return InvariantMeasure::analytic(density, support);
        }
    }
    Err(QlaError::NotErgodic(format!(
        "normalizing mass of exp(∫2a/B)/B keeps growing up to |x| = {half:.3e} (last {mass:.3e})"
    )))
}

/// Information matrices `Γ¹` (`d₁ x d₁`) and `Γ²` (`d₂ x d₂`), row-major.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InformationMatrices {
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub d1: usize,
    pub d2: usize,
}

impl InformationMatrices {
    pub fn new(gamma1: Vec<f64>, gamma2: Vec<f64>) -> Result<Self> {
        let d1 = (gamma1.len() as f64).sqrt() as usize;
        let d2 = (gamma2.len() as f64).sqrt() as usize;
        if d1 * d1 != gamma1.len() || d2 * d2 != gamma2.len() || d1 == 0 || d2 == 0 {
            return Err(QlaError::InvalidArgument("information blocks must be square".into()));
        }
        Ok(Self { gamma1, gamma2, d1, d2 })
    }
}

struct PointWork {
    b: Vec<f64>,
    big: Vec<f64>,
    db: Vec<f64>,
    da: Vec<f64>,
}

/// `B⁻¹ ∂_j B` for every θ₁ component at `x`; returns the factor of `B`.
fn ratio_matrices(model: &DiffusionModel, x: &[f64], theta1: &[f64], w: &mut PointWork) -> Result<Vec<Vec<f64>>> {
    let (m, r, d1) = (model.state_dim(), model.noise_dim(), model.d1());
    model.diffusion_into(x, theta1, &mut w.b);
    outer_self(&w.b, m, r, &mut w.big);
    if !cholesky_in_place(&mut w.big, m) {
        return Err(QlaError::Ellipticity(format!("B(x={x:?}) is singular")));
    }
    model.diffusion_jacobian_into(x, theta1, &mut w.db);
    let mut out = Vec::with_capacity(d1);
    for j in 0..d1 {
        let dbj = &w.db[j * m * r..(j + 1) * m * r];
        let mut dbig = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                dbig[i * m + k] = (0..r).map(|l| dbj[i * r + l] * w.b[k * r + l] + w.b[i * r + l] * dbj[k * r + l]).sum();
            }
        }
        let mut s = vec![0.0; m * m];
        let mut col = vec![0.0; m];
        for c in 0..m {
            for i in 0..m {
                col[i] = dbig[i * m + c];
            }
            cholesky_solve_in_place(&w.big, m, &mut col);
            for i in 0..m {
                s[i * m + c] = col[i];
            }
        }
        out.push(s);
    }
    Ok(out)
}

/// `Γ¹_{jk} = 1/2 ∫ tr(B⁻¹ ∂_j B B⁻¹ ∂_k B) dν`, `Γ² = ∫ (∂a)ᵀ B⁻¹ ∂a dν`
/// at the true parameter.
pub fn gamma_matrices(model: &DiffusionModel, truth: &TrueParameter, measure: &InvariantMeasure) -> Result<InformationMatrices> {
    if measure.state_dim() != model.state_dim() {
        return Err(QlaError::InvalidArgument("measure and model state dimensions differ".into()));
    }
    let (m, r, d1, d2) = (model.state_dim(), model.noise_dim(), model.d1(), model.d2());
    let th1 = &truth.theta1_star;
    let th2 = &truth.theta2_star;
    let failure = std::sync::Mutex::new(None::<QlaError>);
    let g = |x: &[f64], out: &mut [f64]| {
        let mut w = PointWork {
            b: vec![0.0; m * r],
            big: vec![0.0; m * m],
            db: vec![0.0; d1 * m * r],
            da: vec![0.0; m * d2],
        };
        let ratios = match ratio_matrices(model, x, th1, &mut w) {
            Ok(v) => v,
            Err(e) => {
                *failure.lock().expect("poisoned") = Some(e);
                out.iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
        };
        for j in 0..d1 {
            for k in 0..d1 {
                let (a, b) = (&ratios[j], &ratios[k]);
                let mut tr = 0.0;
                for p in 0..m {
                    for q in 0..m {
                        tr += a[p * m + q] * b[q * m + p];
                    }
                }
                out[j * d1 + k] = 0.5 * tr;
            }
        }
        model.drift_jacobian_into(x, th2, &mut w.da);
        let mut cols = vec![0.0; d2 * m];
        for l in 0..d2 {
            for i in 0..m {
                cols[l * m + i] = w.da[i * d2 + l];
            }
            cholesky_solve_in_place(&w.big, m, &mut cols[l * m..(l + 1) * m]);
        }
        for l in 0..d2 {
            for k in 0..d2 {
                out[d1 * d1 + l * d2 + k] = (0..m).map(|i| w.da[i * d2 + l] * cols[k * m + i]).sum();
            }
        }
    };
    let all = measure.expect_vec(d1 * d1 + d2 * d2, &g);
    if let Some(e) = failure.into_inner().expect("poisoned") {
        return Err(e);
    }
    let mut gamma1 = all[..d1 * d1].to_vec();
    let mut gamma2 = all[d1 * d1..].to_vec();
    symmetrize(&mut gamma1, d1);
    symmetrize(&mut gamma2, d2);
    for (name, mat, d) in [("Γ¹", &gamma1, d1), ("Γ²", &gamma2, d2)] {
        let ev = symmetric_eigenvalues(mat, d);
        if !(ev[0] > 0.0) {
            return Err(QlaError::Identifiability(format!(
                "{name} is not positive definite (smallest eigenvalue {})",
                ev[0]
            )));
        }
    }
    InformationMatrices::new(gamma1, gamma2)
}

/// Block-diagonal `diag((Γ¹)⁻¹, (Γ²)⁻¹)`, row-major `(d₁+d₂)²`.
pub fn limit_covariance(info: &InformationMatrices) -> Result<Vec<f64>> {
    let (d1, d2) = (info.d1, info.d2);
    let inv1 = spd_inverse(&info.gamma1, d1)
        .ok_or_else(|| QlaError::Identifiability("Γ¹ is singular".into()))?;
    let inv2 = spd_inverse(&info.gamma2, d2)
        .ok_or_else(|| QlaError::Identifiability("Γ² is singular".into()))?;
    let d = d1 + d2;
    let mut out = vec![0.0; d * d];
    for j in 0..d1 {
        for k in 0..d1 {
            out[j * d + k] = inv1[j * d1 + k];
        }
    }
    for j in 0..d2 {
        for k in 0..d2 {
            out[(d1 + j) * d + d1 + k] = inv2[j * d2 + k];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanPoint {
    pub theta: Vec<f64>,
    pub y: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentifiabilityReport {
    pub y1: Vec<ScanPoint>,
    pub y2: Vec<ScanPoint>,
    /// Largest `Y^k` at grid points more than one cell away from the truth.
    pub max_y1_off_truth: f64,
    pub max_y2_off_truth: f64,
    /// `min -Y^k / |θ_k - θ_k*|²` over the grid, truth excluded.
    pub chi1: f64,
    pub chi2: f64,
}

const Y_TOLERANCE: f64 = 1e-8;

/// Evenly spaced axes with the truth inserted so that it is a grid point.
fn axis_grid(lower: &[f64], upper: &[f64], truth: &[f64], count: usize) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..lower.len())
        .map(|a| {
            let (lo, hi) = (lower[a], upper[a]);
            let mut axis: Vec<f64> = (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect();
            axis.retain(|v| (v - truth[a]).abs() > 1e-12 * (hi - lo));
            axis.push(truth[a]);
            axis.sort_by(f64::total_cmp);
            axis
        })
        .collect();
    cartesian(&axes)
}

fn summarize(points: &[ScanPoint], truth: &[f64], cell: &[f64]) -> (f64, f64) {
    let mut max_off = f64::NEG_INFINITY;
    let mut chi = f64::INFINITY;
    for p in points {
        let d2: f64 = p.theta.iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
        let near = p.theta.iter().zip(truth).zip(cell).all(|((a, b), c)| (a - b).abs() <= *c);
        if !near {
            max_off = max_off.max(p.y);
        }
        if d2 > 0.0 {
            chi = chi.min(-p.y / d2);
        }
    }
    (max_off, chi)
}

/// `Y¹(θ₁) = -1/2 ∫ tr(B(θ₁)⁻¹B(θ₁*) - I) + log(det B(θ₁) / det B(θ₁*)) dν`
/// and `Y²(θ₂) = -1/2 ∫ B(θ₁*)⁻¹[(a(θ₂) - a(θ₂*))^⊗2] dν` on `count` points
/// per axis (box endpoints included).
pub fn identifiability_scan(
    model: &DiffusionModel,
    truth: &TrueParameter,
    measure: &InvariantMeasure,
    count: usize,
) -> Result<IdentifiabilityReport> {
    if count < 3 {
        return Err(QlaError::Precondition("scan needs at least 3 points per axis".into()));
    }
    let (m, r) = (model.state_dim(), model.noise_dim());
    let b1 = model.theta1_box();
    let b2 = model.theta2_box();
    let th1 = &truth.theta1_star;
    let th2 = &truth.theta2_star;
    let factor = |x: &[f64], t: &[f64]| -> Option<Vec<f64>> {
        let b = model.diffusion(x, t);
        let mut big = vec![0.0; m * m];
        outer_self(&b, m, r, &mut big);
        cholesky_in_place(&mut big, m).then_some(big)
    };
    let y1_at = |t1: &[f64]| -> f64 {
        let g = |x: &[f64]| -> f64 {
            let (Some(l), Some(ls)) = (factor(x, t1), factor(x, th1)) else {
                return f64::NAN;
            };
            let bs = {
                let b = model.diffusion(x, th1);
                let mut big = vec![0.0; m * m];
                outer_self(&b, m, r, &mut big);
                big
            };
            let mut tr = 0.0;
            let mut col = vec![0.0; m];
            for c in 0..m {
                for i in 0..m {
                    col[i] = bs[i * m + c];
                }
                cholesky_solve_in_place(&l, m, &mut col);
                tr += col[c];
            }
            (tr - m as f64) + (cholesky_log_det(&l, m) - cholesky_log_det(&ls, m))
        };
        -0.5 * measure.expect(&g)
    };
    let y2_at = |t2: &[f64]| -> f64 {
        let g = |x: &[f64]| -> f64 {
            let Some(ls) = factor(x, th1) else {
                return f64::NAN;
            };
            let diff: Vec<f64> = model
                .drift(x, t2)
                .iter()
                .zip(model.drift(x, th2))
                .map(|(a, b)| a - b)
                .collect();
            let mut q = diff.clone();
            cholesky_solve_in_place(&ls, m, &mut q);
            diff.iter().zip(&q).map(|(a, b)| a * b).sum()
        };
        -0.5 * measure.expect(&g)
    };
    let y1: Vec<ScanPoint> = axis_grid(b1.lower(), b1.upper(), th1, count)
        .into_iter()
        .map(|t| ScanPoint { y: y1_at(&t), theta: t })
        .collect();
    let y2: Vec<ScanPoint> = axis_grid(b2.lower(), b2.upper(), th2, count)
        .into_iter()
        .map(|t| ScanPoint { y: y2_at(&t), theta: t })
        .collect();
    for (k, pts) in [(1, &y1), (2, &y2)] {
        if let Some(p) = pts.iter().find(|p| !(p.y <= Y_TOLERANCE)) {
            return Err(QlaError::InternalConsistency(format!(
                "Y{k}({:?}) = {} exceeds the tolerance {Y_TOLERANCE}",
                p.theta, p.y
            )));
        }
    }
    let cell1: Vec<f64> = (0..b1.dim()).map(|a| b1.width(a) / (count - 1) as f64).collect();
    let cell2: Vec<f64> = (0..b2.dim()).map(|a| b2.width(a) / (count - 1) as f64).collect();
    let (max_y1_off_truth, chi1) = summarize(&y1, th1, &cell1);
    let (max_y2_off_truth, chi2) = summarize(&y2, th2, &cell2);
    Ok(IdentifiabilityReport {
        y1,
        y2,
        max_y1_off_truth,
        max_y2_off_truth,
        chi1,
        chi2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bou_model, ou_model, polynomial_model, ParameterBox};

    fn defaults() -> TrueParameter {
        TrueParameter {
            theta1_star: vec![1.0],
            theta2_star: vec![1.0],
            x0: vec![0.0],
        }
    }

    #[test]
    fn kronrod_table_matches_rule() {
        let (x, w) = kronrod_rule();
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        assert!(x.iter().any(|v| *v == 0.0));
    }

    #[test]
    fn ou_density_is_gaussian() {
        let model = ou_model();
        let nu = invariant_density_1d(&model, &defaults()).unwrap();
        let oracle = model.stationary_density().unwrap();
        for i in 0..=80 {
            let x = -4.0 + 0.1 * i as f64;
            let got = nu.density(x).unwrap();
            let want = oracle(&[1.0], &[1.0], x);
            assert!((got - want).abs() < 1e-8, "x={x}: {got} vs {want}");
        }
        assert!((nu.expect(&|x| x[0] * x[0]) - 0.5).abs() < 1e-6);
        assert!((nu.expect(&|_| 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_drift_is_not_ergodic() {
        let bx = ParameterBox::interval(0.2, 5.0).unwrap();
        let model = polynomial_model("flat", &[0.0], &[1.0, 0.0], bx.clone(), bx).unwrap();
        assert!(matches!(invariant_density_1d(&model, &defaults()), Err(QlaError::NotErgodic(_))));
    }

    #[test]
    fn bou_density_symmetric_and_normalized() {
        let nu = invariant_density_1d(&bou_model(), &defaults()).unwrap();
        assert!((nu.expect(&|_| 1.0) - 1.0).abs() < 1e-6);
        for x in [0.3, 1.1, 2.5] {
            let (a, b) = (nu.density(x).unwrap(), nu.density(-x).unwrap());
            assert!((a - b).abs() < 1e-6 * a.max(1e-300), "{a} vs {b}");
        }
    }

    #[test]
    fn ou_gamma_and_covariance() {
        let model = ou_model();
        let t = defaults();
        let nu = invariant_density_1d(&model, &t).unwrap();
        let info = gamma_matrices(&model, &t, &nu).unwrap();
        assert!((info.gamma1[0] - 2.0).abs() < 1e-6);
        assert!((info.gamma2[0] - 0.5).abs() < 1e-6);
        let cov = limit_covariance(&info).unwrap();
        assert!((cov[0] - 0.5).abs() < 1e-6 && (cov[3] - 2.0).abs() < 1e-5);
        assert_eq!(cov[1], 0.0);

        let t2 = TrueParameter {
            theta1_star: vec![2.0],
            ..t.clone()
        };
        let nu2 = invariant_density_1d(&model, &t2).unwrap();
        assert!((gamma_matrices(&model, &t2, &nu2).unwrap().gamma1[0] - 0.5).abs() < 1e-6);

        let t3 = TrueParameter {
            theta1_star: vec![0.7071],
            ..t
        };
        let nu3 = invariant_density_1d(&model, &t3).unwrap();
        let cov3 = limit_covariance(&gamma_matrices(&model, &t3, &nu3).unwrap()).unwrap();
        assert!((cov3[0] - 0.25).abs() < 1e-4);
    }

    #[test]
    fn bou_gamma1_is_parameter_ratio() {
        let model = bou_model();
        let t = defaults();
        let nu = invariant_density_1d(&model, &t).unwrap();
        let info = gamma_matrices(&model, &t, &nu).unwrap();
        assert!((info.gamma1[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn identity_covariance() {
        let info = InformationMatrices::new(vec![1.0], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let cov = limit_covariance(&info).unwrap();
        assert_eq!(cov, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn ou_identifiability() {
        let model = ou_model();
        let t = defaults();
        let nu = invariant_density_1d(&model, &t).unwrap();
        let rep = identifiability_scan(&model, &t, &nu, 49).unwrap();
        assert!((rep.chi2 - 0.25).abs() < 1e-6);
        let at_truth = rep.y2.iter().find(|p| p.theta == vec![1.0]).unwrap();
        assert_eq!(at_truth.y, 0.0);
        let y1_at_2 = rep.y1.iter().find(|p| (p.theta[0] - 2.0).abs() < 1e-12).unwrap();
        let oracle = -0.5 * (0.25 - 1.0 + 4f64.ln());
        assert!((y1_at_2.y - oracle).abs() < 1e-6);
        assert!(rep.max_y1_off_truth < 0.0 && rep.max_y2_off_truth < 0.0);
    }
}
