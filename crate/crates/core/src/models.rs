//! Diffusion model family `dX = a(X, θ₂) dt + b(X, θ₁) dW` and the built-in
//! registry.
//!
//! Coefficients are stored as shared callbacks writing into caller buffers so
//! that a model can be evaluated millions of times without allocating.
//! Layouts (all row-major):
//!
//! * drift `a`: `m`
//! * diffusion `b`: `m x r`
//! * drift Jacobian `∂a/∂θ₂`: `m x d₂`
//! * drift Hessian: `m x d₂ x d₂`
//! * diffusion Jacobian `∂b/∂θ₁`: `d₁` stacked `m x r` blocks
//! * diffusion Hessian: `d₁ x d₁` stacked `m x r` blocks

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::linalg;

pub type CoefFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;
/// Stationary density `(θ₁, θ₂, x) -> ν(x)` for scalar models.
pub type StationaryDensityFn = dyn Fn(&[f64], &[f64], f64) -> f64 + Send + Sync;

/// Relative central-difference step used when a model has no analytic derivatives.
pub const FD_STEP: f64 = 1e-5;

/// Axis-aligned open box `(lower, upper)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl ParameterBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(QlaError::InvalidArgument(
                "box bounds must be non-empty and of equal length".into(),
            ));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(QlaError::InvalidArgument(format!(
                    "box axis {i}: need finite lower < upper, got ({lo}, {hi})"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo], vec![hi])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|i| self.width(i)).product()
    }

    pub fn contains_open(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| l < t && t < u)
    }

    pub fn contains_closed(&self, theta: &[f64]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(t, (l, u))| l <= t && t <= u)
    }

    pub fn project(&self, theta: &mut [f64]) {
        for (i, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Sub-box intersection; `None` if empty.
    pub fn intersect(&self, lower: &[f64], upper: &[f64]) -> Option<Self> {
        let lo: Vec<f64> = self.lower.iter().zip(lower).map(|(a, b)| a.max(*b)).collect();
        let hi: Vec<f64> = self.upper.iter().zip(upper).map(|(a, b)| a.min(*b)).collect();
        Self::new(lo, hi).ok()
    }
}

/// Analytic θ-derivatives of the coefficients.
#[derive(Clone)]
pub struct Derivatives {
    pub drift_jacobian: Arc<CoefFn>,
    pub drift_hessian: Arc<CoefFn>,
    pub diffusion_jacobian: Arc<CoefFn>,
    pub diffusion_hessian: Arc<CoefFn>,
}

#[derive(Clone)]
pub struct DiffusionModel {
    name: String,
    state_dim: usize,
    noise_dim: usize,
    theta1_box: ParameterBox,
    theta2_box: ParameterBox,
    drift: Arc<CoefFn>,
    diffusion: Arc<CoefFn>,
    derivatives: Option<Derivatives>,
    stationary_density: Option<Arc<StationaryDensityFn>>,
}

impl fmt::Debug for DiffusionModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffusionModel")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("theta1_box", &self.theta1_box)
            .field("theta2_box", &self.theta2_box)
            .field("analytic_derivatives", &self.derivatives.is_some())
            .finish()
    }
}

impl DiffusionModel {
    pub fn new(
        name: impl Into<String>,
        state_dim: usize,
        noise_dim: usize,
        theta1_box: ParameterBox,
        theta2_box: ParameterBox,
        drift: Arc<CoefFn>,
        diffusion: Arc<CoefFn>,
    ) -> Result<Self> {
        if state_dim == 0 || noise_dim == 0 {
            return Err(QlaError::InvalidArgument(
                "state and noise dimensions must be positive".into(),
            ));
        }
        Ok(Self {
            name: name.into(),
            state_dim,
            noise_dim,
            theta1_box,
            theta2_box,
            drift,
            diffusion,
            derivatives: None,
            stationary_density: None,
        })
    }

    pub fn with_derivatives(mut self, derivatives: Derivatives) -> Self {
        self.derivatives = Some(derivatives);
        self
    }

    pub fn with_stationary_density(mut self, density: Arc<StationaryDensityFn>) -> Self {
        self.stationary_density = Some(density);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }
    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }
    pub fn theta1_box(&self) -> &ParameterBox {
        &self.theta1_box
    }
    pub fn theta2_box(&self) -> &ParameterBox {
        &self.theta2_box
    }
    pub fn d1(&self) -> usize {
        self.theta1_box.dim()
    }
    pub fn d2(&self) -> usize {
        self.theta2_box.dim()
    }
    pub fn has_analytic_derivatives(&self) -> bool {
        self.derivatives.is_some()
    }
    pub fn stationary_density(&self) -> Option<&Arc<StationaryDensityFn>> {
        self.stationary_density.as_ref()
    }

    #[inline]
    pub fn drift_into(&self, x: &[f64], theta2: &[f64], out: &mut [f64]) {
        (self.drift)(x, theta2, out)
    }

    #[inline]
    pub fn diffusion_into(&self, x: &[f64], theta1: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, theta1, out)
    }

    pub fn drift(&self, x: &[f64], theta2: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim];
        self.drift_into(x, theta2, &mut out);
        out
    }

    pub fn diffusion(&self, x: &[f64], theta1: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.state_dim * self.noise_dim];
        self.diffusion_into(x, theta1, &mut out);
        out
    }

    /// `B(x, θ₁) = b bᵀ`, checked for finiteness and positive definiteness.
    pub fn eval_b(&self, x: &[f64], theta1: &[f64]) -> Result<Vec<f64>> {
        let m = self.state_dim;
        let b = self.diffusion(x, theta1);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(QlaError::ModelEvaluation(format!(
                "diffusion at x={x:?}, θ₁={theta1:?}"
            )));
        }
        let mut big_b = vec![0.0; m * m];
        linalg::outer_self(&b, m, self.noise_dim, &mut big_b);
        let mut l = big_b.clone();
        if !linalg::cholesky_in_place(&mut l, m) {
            return Err(QlaError::Ellipticity(format!(
                "B not positive definite at x={x:?}, θ₁={theta1:?}"
            )));
        }
        Ok(big_b)
    }

    /// `∂a/∂θ₂` (`m x d₂`), analytic or central differences.
    pub fn drift_jacobian_into(&self, x: &[f64], theta2: &[f64], out: &mut [f64]) {
        if let Some(d) = &self.derivatives {
            (d.drift_jacobian)(x, theta2, out);
            return;
        }
        let (m, d2) = (self.state_dim, self.d2());
        central_jacobian(&*self.drift, x, theta2, m, d2, out);
    }

    /// `∂²a/∂θ₂²` (`m x d₂ x d₂`).
    pub fn drift_hessian_into(&self, x: &[f64], theta2: &[f64], out: &mut [f64]) {
        if let Some(d) = &self.derivatives {
            (d.drift_hessian)(x, theta2, out);
            return;
        }
        let (m, d2) = (self.state_dim, self.d2());
        central_hessian(&*self.drift, x, theta2, m, d2, out);
    }

    /// `∂b/∂θ₁` (`d₁` blocks of `m x r`).
    pub fn diffusion_jacobian_into(&self, x: &[f64], theta1: &[f64], out: &mut [f64]) {
        if let Some(d) = &self.derivatives {
            (d.diffusion_jacobian)(x, theta1, out);
            return;
        }
        let (mr, d1) = (self.state_dim * self.noise_dim, self.d1());
        let mut tmp = vec![0.0; mr * d1];
        central_jacobian(&*self.diffusion, x, theta1, mr, d1, &mut tmp);
        // central_jacobian writes (output index, parameter) row-major; transpose to blocks.
        for j in 0..d1 {
            for e in 0..mr {
                out[j * mr + e] = tmp[e * d1 + j];
            }
        }
    }

    /// `∂²b/∂θ₁²` (`d₁ x d₁` blocks of `m x r`).
    pub fn diffusion_hessian_into(&self, x: &[f64], theta1: &[f64], out: &mut [f64]) {
        if let Some(d) = &self.derivatives {
            (d.diffusion_hessian)(x, theta1, out);
            return;
        }
        let (mr, d1) = (self.state_dim * self.noise_dim, self.d1());
        let mut tmp = vec![0.0; mr * d1 * d1];
        central_hessian(&*self.diffusion, x, theta1, mr, d1, &mut tmp);
        for j in 0..d1 {
            for k in 0..d1 {
                for e in 0..mr {
                    out[(j * d1 + k) * mr + e] = tmp[(e * d1 + j) * d1 + k];
                }
            }
        }
    }
}

fn fd_step(theta: f64) -> f64 {
    FD_STEP * (1.0 + theta.abs())
}

fn central_jacobian(
    f: &CoefFn,
    x: &[f64],
    theta: &[f64],
    out_len: usize,
    d: usize,
    out: &mut [f64],
) {
    let mut tp = theta.to_vec();
    let mut fp = vec![0.0; out_len];
    let mut fm = vec![0.0; out_len];
    for j in 0..d {
        let step = fd_step(theta[j]);
        tp[j] = theta[j] + step;
        f(x, &tp, &mut fp);
        tp[j] = theta[j] - step;
        f(x, &tp, &mut fm);
        tp[j] = theta[j];
        for e in 0..out_len {
            out[e * d + j] = (fp[e] - fm[e]) / (2.0 * step);
        }
    }
}

fn central_hessian(
    f: &CoefFn,
    x: &[f64],
    theta: &[f64],
    out_len: usize,
    d: usize,
    out: &mut [f64],
) {
    let mut tp = theta.to_vec();
    let mut f0 = vec![0.0; out_len];
    let mut buf = vec![0.0; out_len];
    f(x, theta, &mut f0);
    for j in 0..d {
        for k in j..d {
            let (sj, sk) = (fd_step(theta[j]), fd_step(theta[k]));
            let mut acc = vec![0.0; out_len];
            if j == k {
                for (sign, w) in [(1.0, 1.0), (-1.0, 1.0)] {
                    tp[j] = theta[j] + sign * sj;
                    f(x, &tp, &mut buf);
                    for e in 0..out_len {
                        acc[e] += w * buf[e];
                    }
                }
                tp[j] = theta[j];
                for e in 0..out_len {
                    let v = (acc[e] - 2.0 * f0[e]) / (sj * sj);
                    out[(e * d + j) * d + j] = v;
                }
            } else {
                for (a, b, w) in [(1.0, 1.0, 1.0), (1.0, -1.0, -1.0), (-1.0, 1.0, -1.0), (-1.0, -1.0, 1.0)]
                {
                    tp[j] = theta[j] + a * sj;
                    tp[k] = theta[k] + b * sk;
                    f(x, &tp, &mut buf);
                    for e in 0..out_len {
                        acc[e] += w * buf[e];
                    }
                }
                tp[j] = theta[j];
                tp[k] = theta[k];
                for e in 0..out_len {
                    let v = acc[e] / (4.0 * sj * sk);
                    out[(e * d + j) * d + k] = v;
                    out[(e * d + k) * d + j] = v;
                }
            }
        }
    }
}

/// True parameter and initial state of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueParameter {
    pub theta1_star: Vec<f64>,
    pub theta2_star: Vec<f64>,
    pub x0: Vec<f64>,
}

impl TrueParameter {
    pub fn validate(&self, model: &DiffusionModel) -> Result<()> {
        if !model.theta1_box().contains_open(&self.theta1_star) {
            return Err(QlaError::Domain(format!(
                "θ₁* = {:?} is not interior to {:?}",
                self.theta1_star,
                model.theta1_box()
            )));
        }
        if !model.theta2_box().contains_open(&self.theta2_star) {
            return Err(QlaError::Domain(format!(
                "θ₂* = {:?} is not interior to {:?}",
                self.theta2_star,
                model.theta2_box()
            )));
        }
        if self.x0.len() != model.state_dim() || self.x0.iter().any(|v| !v.is_finite()) {
            return Err(QlaError::InvalidArgument(format!(
                "initial state must be a finite vector of length {}",
                model.state_dim()
            )));
        }
        Ok(())
    }
}

fn default_box() -> ParameterBox {
    ParameterBox::interval(0.2, 5.0).expect("static box")
}

fn zero_coef(_: &[f64], _: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
}

/// Scalar model `a(x, θ₂) = -θ₂ · p(x)`, `b(x, θ₁) = θ₁ · q(x)`; both
/// coefficients are linear in their parameter so second derivatives vanish.
fn linear_in_parameter_model(
    name: &str,
    theta1_box: ParameterBox,
    theta2_box: ParameterBox,
    p: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    q: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
) -> Result<DiffusionModel> {
    let (p1, p2) = (p.clone(), p);
    let (q1, q2) = (q.clone(), q);
    let drift: Arc<CoefFn> = Arc::new(move |x, th, out| out[0] = -th[0] * p1(x[0]));
    let diffusion: Arc<CoefFn> = Arc::new(move |x, th, out| out[0] = th[0] * q1(x[0]));
    let derivatives = Derivatives {
        drift_jacobian: Arc::new(move |x, _th, out| out[0] = -p2(x[0])),
        drift_hessian: Arc::new(zero_coef),
        diffusion_jacobian: Arc::new(move |x, _th, out| out[0] = q2(x[0])),
        diffusion_hessian: Arc::new(zero_coef),
    };
    Ok(DiffusionModel::new(name, 1, 1, theta1_box, theta2_box, drift, diffusion)?
        .with_derivatives(derivatives))
}

/// Ornstein–Uhlenbeck: `a = -θ₂ x`, `b = θ₁`.
pub fn ou_model() -> DiffusionModel {
    linear_in_parameter_model("OU", default_box(), default_box(), Arc::new(|x| x), Arc::new(|_| 1.0))
        .expect("static model")
        .with_stationary_density(Arc::new(|th1, th2, x| {
            let var = th1[0] * th1[0] / (2.0 * th2[0]);
            (-0.5 * x * x / var).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        }))
}

/// Bounded-volatility OU: `a = -θ₂ x`, `b = θ₁ (2 + cos x) / 2`. Its stationary
/// density has no closed form; use the speed-measure construction in
/// [`crate::asymptotics::invariant_density_1d`].
pub fn bou_model() -> DiffusionModel {
    linear_in_parameter_model(
        "BOU",
        default_box(),
        default_box(),
        Arc::new(|x| x),
        Arc::new(|x| (2.0 + x.cos()) / 2.0),
    )
    .expect("static model")
}

/// Scalar model from coefficient tables:
/// `a(x, θ₂) = -θ₂ Σ cₖ xᵏ`, `b(x, θ₁) = θ₁ (d₀ + d₁ cos x)`.
pub fn polynomial_model(
    name: &str,
    drift_coeffs: &[f64],
    diff_coeffs: &[f64],
    theta1_box: ParameterBox,
    theta2_box: ParameterBox,
) -> Result<DiffusionModel> {
    if drift_coeffs.is_empty() {
        return Err(QlaError::InvalidArgument("drift coefficient table is empty".into()));
    }
    if diff_coeffs.len() != 2 {
        return Err(QlaError::InvalidArgument(
            "diff table must have exactly two entries [d0, d1]".into(),
        ));
    }
    let (d0, d1) = (diff_coeffs[0], diff_coeffs[1]);
    if !(d0.abs() > d1.abs()) {
        return Err(QlaError::Ellipticity(format!(
            "d0 + d1 cos x vanishes somewhere unless |d0| > |d1| (got {d0}, {d1})"
        )));
    }
    if theta1_box.dim() != 1 || theta2_box.dim() != 1 {
        return Err(QlaError::InvalidArgument("polynomial models are scalar in θ".into()));
    }
    let coeffs = drift_coeffs.to_vec();
    let poly = move |x: f64| coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c);
    linear_in_parameter_model(
        name,
        theta1_box,
        theta2_box,
        Arc::new(poly),
        Arc::new(move |x| d0 + d1 * x.cos()),
    )
}

/// Built-in models with their default true parameters.
pub fn builtin_models() -> Vec<(String, DiffusionModel, TrueParameter)> {
    let defaults = TrueParameter {
        theta1_star: vec![1.0],
        theta2_star: vec![1.0],
        x0: vec![0.0],
    };
    vec![
        ("OU".to_string(), ou_model(), defaults.clone()),
        ("BOU".to_string(), bou_model(), defaults),
    ]
}

pub fn builtin_model(name: &str) -> Result<(DiffusionModel, TrueParameter)> {
    builtin_models()
        .into_iter()
        .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
        .map(|(_, m, t)| (m, t))
        .ok_or_else(|| QlaError::UnknownModel(name.to_string()))
}

/// Scalar polynomial-drift model given in a config file:
/// `drift = [c0, c1, ...]` for `a = -θ₂ Σ cₖ xᵏ`, `diff = [d0, d1]` for
/// `b = θ₁ (d0 + d1 cos x)`. Boxes default to `[0.2, 5]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialSpec {
    pub name: String,
    pub drift: Vec<f64>,
    pub diff: Vec<f64>,
    #[serde(default)]
    pub theta1_box: Option<[f64; 2]>,
    #[serde(default)]
    pub theta2_box: Option<[f64; 2]>,
}

impl PolynomialSpec {
    pub fn build(&self) -> Result<DiffusionModel> {
        let bx = |b: Option<[f64; 2]>| match b {
            Some([lo, hi]) => ParameterBox::interval(lo, hi),
            None => Ok(default_box()),
        };
        polynomial_model(&self.name, &self.drift, &self.diff, bx(self.theta1_box)?, bx(self.theta2_box)?)
    }
}

/// Model by name: the custom model when its name matches, else a built-in.
/// A custom model's default truth is the box centers with `x0 = 0`.
pub fn resolve_model(name: &str, custom: Option<&PolynomialSpec>) -> Result<(DiffusionModel, TrueParameter)> {
    match custom {
        Some(spec) if spec.name.eq_ignore_ascii_case(name) => {
            let model = spec.build()?;
            let truth = TrueParameter {
                theta1_star: model.theta1_box().center(),
                theta2_star: model.theta2_box().center(),
                x0: vec![0.0],
            };
            Ok((model, truth))
        }
        _ => builtin_model(name),
    }
}

/// One probe of [`check_regularity`].
#[derive(Debug, Clone)]
pub struct ProbePoint {
    pub x: Vec<f64>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
}

/// Growth exponent used in the `|∂a| / (1 + |x|)^C` probe.
pub const GROWTH_EXPONENT: i32 = 3;
const ELLIPTICITY_FLOOR: f64 = 1e-12;
const LIPSCHITZ_CAP: f64 = 1e6;
const GROWTH_CAP: f64 = 1e6;

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub min_eigenvalue_b: f64,
    pub min_eigenvalue_at: Vec<f64>,
    pub lipschitz_drift: f64,
    pub lipschitz_diffusion: f64,
    pub growth_ratio: f64,
    pub violations: Vec<String>,
}

impl RegularityReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Default probe grid: each state axis on 21 points of `[-5, 5]`, each
/// parameter axis on 5 points of its closed box.
pub fn default_probe_grid(model: &DiffusionModel) -> Vec<ProbePoint> {
    let xs: Vec<f64> = (0..21).map(|i| -5.0 + 0.5 * i as f64).collect();
    let axis_points = |b: &ParameterBox| -> Vec<Vec<f64>> {
        let per_axis: Vec<Vec<f64>> = (0..b.dim())
            .map(|a| (0..5).map(|i| b.lower()[a] + b.width(a) * i as f64 / 4.0).collect())
            .collect();
        cartesian(&per_axis)
    };
    let t1 = axis_points(model.theta1_box());
    let t2 = axis_points(model.theta2_box());
    let m = model.state_dim();
    let mut states = Vec::new();
    for &v in &xs {
        for axis in 0..m {
            let mut x = vec![0.0; m];
            x[axis] = v;
            states.push(x);
        }
    }
    let mut grid = Vec::new();
    for x in &states {
        for a in &t1 {
            for b in &t2 {
                grid.push(ProbePoint {
                    x: x.clone(),
                    theta1: a.clone(),
                    theta2: b.clone(),
                });
            }
        }
    }
    grid
}

pub(crate) fn cartesian(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![Vec::new()], |acc, axis| {
        acc.iter()
            .flat_map(|prefix| {
                axis.iter().map(move |v| {
                    let mut p = prefix.clone();
                    p.push(*v);
                    p
                })
            })
            .collect()
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Probes ellipticity, Lipschitz continuity in `x` and polynomial growth of the
/// θ-derivatives on a grid. Report-only.
pub fn check_regularity(model: &DiffusionModel, probe_grid: &[ProbePoint]) -> RegularityReport {
    let (m, r) = (model.state_dim(), model.noise_dim());
    let mut min_eig = f64::INFINITY;
    let mut min_at = Vec::new();
    let mut growth = 0.0_f64;
    let mut violations = Vec::new();
    let mut evals = Vec::with_capacity(probe_grid.len());
    let mut jac_a = vec![0.0; m * model.d2()];
    let mut jac_b = vec![0.0; m * r * model.d1()];
    let mut big_b = vec![0.0; m * m];

    for p in probe_grid {
        let a = model.drift(&p.x, &p.theta2);
        let b = model.diffusion(&p.x, &p.theta1);
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            violations.push(format!("non-finite coefficient at x={:?}", p.x));
        }
        linalg::outer_self(&b, m, r, &mut big_b);
        let ev = linalg::symmetric_eigenvalues(&big_b, m)[0];
        if ev < min_eig || (ev.is_nan() && min_eig.is_finite()) {
            min_eig = ev;
            min_at = p.x.iter().chain(&p.theta1).copied().collect();
        }
        model.drift_jacobian_into(&p.x, &p.theta2, &mut jac_a);
        model.diffusion_jacobian_into(&p.x, &p.theta1, &mut jac_b);
        let scale = (1.0 + norm(&p.x)).powi(GROWTH_EXPONENT);
        growth = growth.max(norm(&jac_a) / scale).max(norm(&jac_b) / scale);
        evals.push((a, b));
    }

    if !(min_eig > ELLIPTICITY_FLOOR) {
        violations.push(format!(
            "ellipticity: min eigenvalue of B is {min_eig} at (x, θ₁) = {min_at:?}"
        ));
    }

    let mut lip_a = 0.0_f64;
    let mut lip_b = 0.0_f64;
    for i in 0..probe_grid.len() {
        for j in (i + 1)..probe_grid.len() {
            let (pi, pj) = (&probe_grid[i], &probe_grid[j]);
            let dx: Vec<f64> = pi.x.iter().zip(&pj.x).map(|(a, b)| a - b).collect();
            let dist = norm(&dx);
            if dist == 0.0 {
                continue;
            }
            if pi.theta2 == pj.theta2 {
                let da: Vec<f64> = evals[i].0.iter().zip(&evals[j].0).map(|(a, b)| a - b).collect();
                lip_a = lip_a.max(norm(&da) / dist);
            }
            if pi.theta1 == pj.theta1 {
                let db: Vec<f64> = evals[i].1.iter().zip(&evals[j].1).map(|(a, b)| a - b).collect();
                lip_b = lip_b.max(norm(&db) / dist);
            }
        }
    }
    if !(lip_a <= LIPSCHITZ_CAP) {
        violations.push(format!("drift Lipschitz quotient {lip_a}"));
    }
    if !(lip_b <= LIPSCHITZ_CAP) {
        violations.push(format!("diffusion Lipschitz quotient {lip_b}"));
    }
    if !(growth <= GROWTH_CAP) {
        violations.push(format!("derivative growth ratio {growth}"));
    }

    RegularityReport {
        min_eigenvalue_b: min_eig,
        min_eigenvalue_at: min_at,
        lipschitz_drift: lip_a,
        lipschitz_diffusion: lip_b,
        growth_ratio: growth,
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_b_examples() {
        let ou = ou_model();
        assert_eq!(ou.eval_b(&[0.3], &[1.0]).unwrap(), vec![1.0]);
        assert_eq!(ou.eval_b(&[0.3], &[2.0]).unwrap(), vec![4.0]);
        let bou = bou_model();
        assert_eq!(bou.eval_b(&[0.0], &[1.0]).unwrap(), vec![2.25]);
    }

    #[test]
    fn eval_b_reports_degeneracy_and_nan() {
        let deg = DiffusionModel::new(
            "deg",
            1,
            1,
            default_box(),
            default_box(),
            Arc::new(|x, th, out| out[0] = -th[0] * x[0]),
            Arc::new(|x, _th, out| out[0] = x[0]),
        )
        .unwrap();
        assert!(matches!(deg.eval_b(&[0.0], &[1.0]), Err(QlaError::Ellipticity(_))));
        assert!(matches!(
            deg.eval_b(&[f64::NAN], &[1.0]),
            Err(QlaError::ModelEvaluation(_))
        ));
    }

    #[test]
    fn builtin_lookup() {
        let (ou, truth) = builtin_model("OU").unwrap();
        assert_eq!(ou.drift(&[0.5], &[1.0]), vec![-0.5]);
        let dens = ou.stationary_density().unwrap();
        // N(0, 0.5) density at 0 is 1/sqrt(π)
        let v = dens(&truth.theta1_star, &truth.theta2_star, 0.0);
        assert!((v - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-15);
        assert!(matches!(builtin_model("XYZ"), Err(QlaError::UnknownModel(_))));
    }

    #[test]
    fn regularity_of_builtins() {
        for (name, model, _) in builtin_models() {
            let rep = check_regularity(&model, &default_probe_grid(&model));
            assert!(rep.ok(), "{name}: {:?}", rep.violations);
        }
        let ou = ou_model();
        let rep = check_regularity(&ou, &default_probe_grid(&ou));
        assert!((rep.min_eigenvalue_b - 0.04).abs() < 1e-15);
        let bou = bou_model();
        assert!(check_regularity(&bou, &default_probe_grid(&bou)).min_eigenvalue_b > 0.0);
    }

    #[test]
    fn regularity_flags_degenerate_diffusion() {
        let deg = DiffusionModel::new(
            "deg",
            1,
            1,
            default_box(),
            default_box(),
            Arc::new(|x, th, out| out[0] = -th[0] * x[0]),
            Arc::new(|x, _th, out| out[0] = x[0]),
        )
        .unwrap();
        let rep = check_regularity(&deg, &default_probe_grid(&deg));
        assert!(rep.violations.iter().any(|v| v.starts_with("ellipticity")));
    }

    #[test]
    fn finite_difference_fallback_matches_analytic() {
        let numeric = DiffusionModel::new(
            "bou-fd",
            1,
            1,
            default_box(),
            default_box(),
            Arc::new(|x, th, out| out[0] = -th[0] * x[0] * x[0] * x[0] - th[0] * x[0]),
            Arc::new(|x, th, out| out[0] = th[0] * th[0] * (2.0 + x[0].cos()) / 2.0),
        )
        .unwrap();
        let (x, t) = ([0.7], [1.3]);
        let mut j = [0.0];
        numeric.drift_jacobian_into(&x, &t, &mut j);
        assert!((j[0] - (-(0.343 + 0.7))).abs() < 1e-9);
        numeric.diffusion_jacobian_into(&x, &t, &mut j);
        let c = (2.0 + 0.7f64.cos()) / 2.0;
        assert!((j[0] - 2.0 * 1.3 * c).abs() < 1e-9);
        numeric.diffusion_hessian_into(&x, &t, &mut j);
        assert!((j[0] - 2.0 * c).abs() < 1e-5);
    }

    #[test]
    fn polynomial_model_grammar() {
        let m = polynomial_model("p", &[0.0, 1.0], &[1.0, 0.0], default_box(), default_box()).unwrap();
        assert_eq!(m.drift(&[0.5], &[2.0]), vec![-1.0]);
        assert_eq!(m.diffusion(&[0.5], &[2.0]), vec![2.0]);
        assert!(polynomial_model("bad", &[1.0], &[1.0, 1.0], default_box(), default_box()).is_err());
    }

    #[test]
    fn evaluations_are_pure() {
        let bou = bou_model();
        let a = bou.diffusion(&[1.234], &[0.77]);
        let b = bou.diffusion(&[1.234], &[0.77]);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }
}
