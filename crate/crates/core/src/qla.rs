//! Gaussian quasi-likelihood of discretely observed diffusions
//!
//! ```text
//! H_n(θ) = -1/2 Σ { h⁻¹ B(X_{i-1}, θ₁)⁻¹[(ΔX_i - h a(X_{i-1}, θ₂))^⊗2] + log det B(X_{i-1}, θ₁) }
//! ```
//!
//! with `B = b bᵀ`, together with its θ-derivatives, the scaled log
//! likelihood-ratio field and the observed information.
//!
//! Sums are taken over fixed chunks of observations; each chunk is summed
//! sequentially and the chunk totals are combined with a pairwise tree, so
//! results do not depend on the number of worker threads.

use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{QlaError, Result};
use crate::linalg::{cholesky_in_place, cholesky_log_det, cholesky_solve_in_place, outer_self, pairwise_sum};
use crate::models::DiffusionModel;
use crate::simulator::ObservationSet;

pub const CHUNK: usize = 1024;

/// Estimation stage: 1 integrates over the diffusion parameter θ₁, 2 over the
/// drift parameter θ₂.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Stage {
    Diffusion,
    Drift,
}

impl Stage {
    pub fn index(self) -> usize {
        match self {
            Stage::Diffusion => 1,
            Stage::Drift => 2,
        }
    }
}

/// Rates `√n` and `√(nh)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Scaling {
    pub rate1: f64,
    pub rate2: f64,
}

impl Scaling {
    pub fn new(n: usize, h: f64) -> Result<Self> {
        if n == 0 || !(h > 0.0 && h.is_finite()) {
            return Err(QlaError::InvalidArgument(format!(
                "scaling needs n >= 1 and h > 0 (n={n}, h={h})"
            )));
        }
        let nf = n as f64;
        Ok(Self {
            rate1: nf.sqrt(),
            rate2: (nf * h).sqrt(),
        })
    }

    pub fn for_obs(obs: &ObservationSet) -> Self {
        Self::new(obs.n(), obs.h()).expect("observation sets have n >= 1 and h > 0")
    }

    pub fn rate(&self, stage: Stage) -> f64 {
        match stage {
            Stage::Diffusion => self.rate1,
            Stage::Drift => self.rate2,
        }
    }

    /// Diagonal of `a_n^k`.
    pub fn inverse_rate(&self, stage: Stage) -> f64 {
        1.0 / self.rate(stage)
    }
}

/// Value, gradients and Hessian blocks of `H_n`. Matrices are row-major:
/// `hess11` is `d₁ x d₁`, `hess22` is `d₂ x d₂`, `hess12` is `d₁ x d₂`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContrastEvaluation {
    pub value: f64,
    pub grad1: Vec<f64>,
    pub grad2: Vec<f64>,
    pub hess11: Vec<f64>,
    pub hess22: Vec<f64>,
    pub hess12: Vec<f64>,
}

fn check_inputs(model: &DiffusionModel, obs: &ObservationSet, theta1: &[f64], theta2: &[f64]) -> Result<()> {
    if obs.dim() != model.state_dim() {
        return Err(QlaError::InvalidArgument(format!(
            "observations have dimension {} but model {} has state dimension {}",
            obs.dim(),
            model.name(),
            model.state_dim()
        )));
    }
    if theta1.len() != model.d1() || !model.theta1_box().contains_closed(theta1) {
        return Err(QlaError::Domain(format!("θ₁ = {theta1:?} outside {:?}", model.theta1_box())));
    }
    if theta2.len() != model.d2() || !model.theta2_box().contains_closed(theta2) {
        return Err(QlaError::Domain(format!("θ₂ = {theta2:?} outside {:?}", model.theta2_box())));
    }
    Ok(())
}

fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect()
}

fn chunked_sum<F>(n: usize, f: F) -> Result<f64>
where
    F: Fn(Range<usize>) -> Result<f64> + Sync + Send,
{
    let parts: Vec<f64> = chunk_ranges(n).into_par_iter().map(f).collect::<Result<_>>()?;
    Ok(pairwise_sum(&parts))
}

fn finite_or(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(QlaError::Evaluation(format!("{what} is not finite ({value})")))
    }
}

struct Work {
    a: Vec<f64>,
    b: Vec<f64>,
    big: Vec<f64>,
    v: Vec<f64>,
    q: Vec<f64>,
}

impl Work {
    fn new(model: &DiffusionModel) -> Self {
        let (m, r) = (model.state_dim(), model.noise_dim());
        Self {
            a: vec![0.0; m],
            b: vec![0.0; m * r],
            big: vec![0.0; m * m],
            v: vec![0.0; m],
            q: vec![0.0; m],
        }
    }
}

fn is_scalar(model: &DiffusionModel) -> bool {
    model.state_dim() == 1 && model.noise_dim() == 1
}

fn bad_b(x: &[f64], theta1: &[f64], b: &[f64]) -> QlaError {
    if b.iter().any(|v| !v.is_finite()) {
        QlaError::ModelEvaluation(format!("b(x={x:?}, θ₁={theta1:?}) = {b:?}"))
    } else {
        QlaError::Ellipticity(format!("B(x={x:?}, θ₁={theta1:?}) is singular"))
    }
}

/// Evaluates `B(x, θ₁)` and leaves its Cholesky factor in `w.big`
/// (scalar models: `B` itself). Returns `log det B`.
#[inline]
fn factor_b(model: &DiffusionModel, x: &[f64], theta1: &[f64], w: &mut Work) -> Result<f64> {
    model.diffusion_into(x, theta1, &mut w.b);
    let m = model.state_dim();
    if is_scalar(model) {
        let bb = w.b[0] * w.b[0];
        if !(bb > 0.0) || !bb.is_finite() {
            return Err(bad_b(x, theta1, &w.b));
        }
        w.big[0] = bb;
        return Ok(bb.ln());
    }
    outer_self(&w.b, m, model.noise_dim(), &mut w.big);
    if !cholesky_in_place(&mut w.big, m) {
        return Err(bad_b(x, theta1, &w.b));
    }
    Ok(cholesky_log_det(&w.big, m))
}

/// `vᵀ B⁻¹ v` with `B` factored by [`factor_b`]; leaves `B⁻¹ v` in `w.q`.
#[inline]
fn quad_form(scalar: bool, m: usize, factor: &[f64], v: &[f64], q: &mut [f64]) -> f64 {
    if scalar {
        q[0] = v[0] / factor[0];
        return v[0] * q[0];
    }
    q.copy_from_slice(v);
    cholesky_solve_in_place(factor, m, q);
    v.iter().zip(q.iter()).map(|(a, b)| a * b).sum()
}

#[inline]
fn residual_into(model: &DiffusionModel, obs: &ObservationSet, i: usize, theta2: &[f64], w: &mut Work) {
    let h = obs.h();
    let x = obs.state(i);
    let y = obs.state(i + 1);
    model.drift_into(x, theta2, &mut w.a);
    for k in 0..x.len() {
        w.v[k] = (y[k] - x[k]) - h * w.a[k];
    }
}

/// `H_n(θ₁, θ₂)`.
pub fn contrast(model: &DiffusionModel, obs: &ObservationSet, theta1: &[f64], theta2: &[f64]) -> Result<f64> {
    check_inputs(model, obs, theta1, theta2)?;
    let h = obs.h();
    let scalar = is_scalar(model);
    let m = model.state_dim();
    let total = chunked_sum(obs.n(), |range| {
        let mut w = Work::new(model);
        let mut s = 0.0;
        for i in range {
            residual_into(model, obs, i, theta2, &mut w);
            let logdet = factor_b(model, obs.state(i), theta1, &mut w)?;
            let quad = quad_form(scalar, m, &w.big, &w.v, &mut w.q);
            s += quad / h + logdet;
        }
        Ok(s)
    })?;
    finite_or(-0.5 * total, "contrast")
}

/// Per-observation buffers for the derivative pass.
struct DerivWork {
    base: Work,
    da: Vec<f64>,
    dda: Vec<f64>,
    db: Vec<f64>,
    ddb: Vec<f64>,
    // ∂_j B, B⁻¹ ∂_j B, ∂_j ∂_k B
    dbig: Vec<f64>,
    sdbig: Vec<f64>,
    ddbig: Vec<f64>,
    // B⁻¹ ∂_l a
    sa: Vec<f64>,
    tmp: Vec<f64>,
    tmp2: Vec<f64>,
}

impl DerivWork {
    fn new(model: &DiffusionModel) -> Self {
        let (m, r, d1, d2) = (model.state_dim(), model.noise_dim(), model.d1(), model.d2());
        Self {
            base: Work::new(model),
            da: vec![0.0; m * d2],
            dda: vec![0.0; m * d2 * d2],
            db: vec![0.0; d1 * m * r],
            ddb: vec![0.0; d1 * d1 * m * r],
            dbig: vec![0.0; d1 * m * m],
            sdbig: vec![0.0; d1 * m * m],
            ddbig: vec![0.0; d1 * d1 * m * m],
            sa: vec![0.0; d2 * m],
            tmp: vec![0.0; m],
            tmp2: vec![0.0; m],
        }
    }
}

/// `out = X Yᵀ + Y Xᵀ` for `m x r` matrices.
fn sym_product(x: &[f64], y: &[f64], m: usize, r: usize, out: &mut [f64]) {
    for i in 0..m {
        for j in 0..m {
            let mut s = 0.0;
            for k in 0..r {
                s += x[i * r + k] * y[j * r + k] + y[i * r + k] * x[j * r + k];
            }
            out[i * m + j] = s;
        }
    }
}

fn mat_vec(a: &[f64], m: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..m {
        out[i] = (0..m).map(|k| a[i * m + k] * v[k]).sum();
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Accumulates one observation's contribution to
/// `[value, grad1, grad2, hess11, hess22, hess12]` (before the `-1/2` factor
/// of the value, which the caller applies to every block uniformly by
/// accumulating `-2 ×` the derivative terms).
#[allow(clippy::too_many_arguments)]
fn derivative_term(
    model: &DiffusionModel,
    obs: &ObservationSet,
    i: usize,
    theta1: &[f64],
    theta2: &[f64],
    w: &mut DerivWork,
    acc: &mut [f64],
) -> Result<()> {
    let (m, r, d1, d2) = (model.state_dim(), model.noise_dim(), model.d1(), model.d2());
    let h = obs.h();
    let scalar = is_scalar(model);
    let x = obs.state(i);
    residual_into(model, obs, i, theta2, &mut w.base);
    let logdet = factor_b(model, x, theta1, &mut w.base)?;
    let quad = {
        let Work { big, v, q, .. } = &mut w.base;
        quad_form(scalar, m, big, v, q)
    };
    model.drift_jacobian_into(x, theta2, &mut w.da);
    model.drift_hessian_into(x, theta2, &mut w.dda);
    model.diffusion_jacobian_into(x, theta1, &mut w.db);
    model.diffusion_hessian_into(x, theta1, &mut w.ddb);

    let (o_g1, o_g2) = (1, 1 + d1);
    let o_h11 = o_g2 + d2;
    let o_h22 = o_h11 + d1 * d1;
    let o_h12 = o_h22 + d2 * d2;

    // Everything below is accumulated as -2 × (derivative of the summand of H)
    // so that the final -1/2 factor applies uniformly.
    acc[0] += quad / h + logdet;

    let mm = m * m;
    let mr = m * r;
    for j in 0..d1 {
        let dbj = &w.db[j * mr..(j + 1) * mr];
        sym_product(dbj, &w.base.b, m, r, &mut w.dbig[j * mm..(j + 1) * mm]);
        for k in 0..=j {
            let dbk = &w.db[k * mr..(k + 1) * mr];
            let ddb = &w.ddb[(j * d1 + k) * mr..(j * d1 + k + 1) * mr];
            let mut t1 = vec![0.0; mm];
            let mut t2 = vec![0.0; mm];
            sym_product(ddb, &w.base.b, m, r, &mut t1);
            sym_product(dbj, dbk, m, r, &mut t2);
            let out = &mut w.ddbig[(j * d1 + k) * mm..(j * d1 + k + 1) * mm];
            for e in 0..mm {
                out[e] = t1[e] + t2[e];
            }
            if k != j {
                let (lo, hi) = w.ddbig.split_at_mut((j * d1 + k) * mm);
                let src = &hi[..mm];
                lo[(k * d1 + j) * mm..(k * d1 + j + 1) * mm].copy_from_slice(src);
            }
        }
    }
    // S ∂_j B, column by column
    for j in 0..d1 {
        for c in 0..m {
            if scalar {
                w.sdbig[j] = w.dbig[j] / w.base.big[0];
                continue;
            }
            for rix in 0..m {
                w.tmp[rix] = w.dbig[j * mm + rix * m + c];
            }
            cholesky_solve_in_place(&w.base.big, m, &mut w.tmp);
            for rix in 0..m {
                w.sdbig[j * mm + rix * m + c] = w.tmp[rix];
            }
        }
    }
    // S ∂_l a
    for l in 0..d2 {
        for rix in 0..m {
            w.sa[l * m + rix] = w.da[rix * d2 + l];
        }
        let sl = &mut w.sa[l * m..(l + 1) * m];
        if scalar {
            sl[0] /= w.base.big[0];
        } else {
            cholesky_solve_in_place(&w.base.big, m, sl);
        }
    }

    let q = &w.base.q;
    for j in 0..d1 {
        let dbj = &w.dbig[j * mm..(j + 1) * mm];
        let sdbj = &w.sdbig[j * mm..(j + 1) * mm];
        mat_vec(dbj, m, q, &mut w.tmp);
        let q_dbj_q = dot(q, &w.tmp);
        let tr_j: f64 = (0..m).map(|e| sdbj[e * m + e]).sum();
        acc[o_g1 + j] += -q_dbj_q / h + tr_j;
        // w.tmp = ∂_j B q
        for k in 0..d1 {
            let sdbk = &w.sdbig[k * mm..(k + 1) * mm];
            let ddb = &w.ddbig[(j * d1 + k) * mm..(j * d1 + k + 1) * mm];
            mat_vec(sdbk, m, q, &mut w.tmp2);
            let cross = dot(&w.tmp, &w.tmp2);
            let mut q_ddb_q = 0.0;
            let mut tr_s_ddb = 0.0;
            let mut tr_prod = 0.0;
            for a in 0..m {
                for b in 0..m {
                    q_ddb_q += q[a] * ddb[a * m + b] * q[b];
                    tr_prod += sdbj[a * m + b] * sdbk[b * m + a];
                }
            }
            if scalar {
                tr_s_ddb = ddb[0] / w.base.big[0];
            } else {
                for c in 0..m {
                    for rix in 0..m {
                        w.tmp2[rix] = ddb[rix * m + c];
                    }
                    cholesky_solve_in_place(&w.base.big, m, &mut w.tmp2);
                    tr_s_ddb += w.tmp2[c];
                }
            }
            acc[o_h11 + j * d1 + k] += (2.0 * cross - q_ddb_q) / h - tr_prod + tr_s_ddb;
        }
        for l in 0..d2 {
            // ∂_j ∂_l H = -(S ∂_l a)ᵀ ∂_j B q
            let sl = &w.sa[l * m..(l + 1) * m];
            acc[o_h12 + j * d2 + l] += 2.0 * dot(sl, &w.tmp);
        }
    }
    for l in 0..d2 {
        let al: f64 = (0..m).map(|e| w.da[e * d2 + l] * q[e]).sum();
        acc[o_g2 + l] += -2.0 * al;
        for k in 0..d2 {
            let ddal: f64 = (0..m).map(|e| w.dda[(e * d2 + l) * d2 + k] * q[e]).sum();
            let asa: f64 = (0..m).map(|e| w.da[e * d2 + l] * w.sa[k * m + e]).sum();
            acc[o_h22 + l * d2 + k] += -2.0 * (ddal - h * asa);
        }
    }
    Ok(())
}

/// `H_n` with gradients and Hessian blocks. Coefficient derivatives are the
/// model's analytic ones when supplied, central differences otherwise.
pub fn contrast_with_derivatives(
    model: &DiffusionModel,
    obs: &ObservationSet,
    theta1: &[f64],
    theta2: &[f64],
) -> Result<ContrastEvaluation> {
    check_inputs(model, obs, theta1, theta2)?;
    let (d1, d2) = (model.d1(), model.d2());
    let len = 1 + d1 + d2 + d1 * d1 + d2 * d2 + d1 * d2;
    let parts: Vec<Vec<f64>> = chunk_ranges(obs.n())
        .into_par_iter()
        .map(|range| {
            let mut w = DerivWork::new(model);
            let mut acc = vec![0.0; len];
            for i in range {
                derivative_term(model, obs, i, theta1, theta2, &mut w, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![0.0; len];
    let mut column = vec![0.0; parts.len()];
    for (c, t) in total.iter_mut().enumerate() {
        for (k, p) in parts.iter().enumerate() {
            column[k] = p[c];
        }
        *t = -0.5 * pairwise_sum(&column);
        finite_or(*t, "contrast derivative")?;
    }
    let mut it = total.into_iter();
    let mut take = |k: usize| it.by_ref().take(k).collect::<Vec<f64>>();
    let value = take(1)[0];
    let grad1 = take(d1);
    let grad2 = take(d2);
    let mut hess11 = take(d1 * d1);
    let mut hess22 = take(d2 * d2);
    let hess12 = take(d1 * d2);
    crate::linalg::symmetrize(&mut hess11, d1);
    crate::linalg::symmetrize(&mut hess22, d2);
    Ok(ContrastEvaluation {
        value,
        grad1,
        grad2,
        hess11,
        hess22,
        hess12,
    })
}

/// `H_n(anchor with θ_k + a_n^k u) - H_n(anchor)`; exactly 0 at `u = 0`.
pub fn log_ratio_field(
    model: &DiffusionModel,
    obs: &ObservationSet,
    stage: Stage,
    anchor1: &[f64],
    anchor2: &[f64],
    u: &[f64],
    scaling: &Scaling,
) -> Result<f64> {
    let scale = scaling.inverse_rate(stage);
    let (base, bx) = match stage {
        Stage::Diffusion => (anchor1, model.theta1_box()),
        Stage::Drift => (anchor2, model.theta2_box()),
    };
    if u.len() != base.len() {
        return Err(QlaError::InvalidArgument(format!(
            "u has length {} but stage {} has dimension {}",
            u.len(),
            stage.index(),
            base.len()
        )));
    }
    let shifted: Vec<f64> = base.iter().zip(u).map(|(t, v)| t + scale * v).collect();
    if !bx.contains_closed(&shifted) {
        return Err(QlaError::Domain(format!(
            "shifted stage-{} parameter {shifted:?} leaves {bx:?}",
            stage.index()
        )));
    }
    if u.iter().all(|v| *v == 0.0) {
        check_inputs(model, obs, anchor1, anchor2)?;
        return Ok(0.0);
    }
    let h0 = contrast(model, obs, anchor1, anchor2)?;
    let h1 = match stage {
        Stage::Diffusion => contrast(model, obs, &shifted, anchor2)?,
        Stage::Drift => contrast(model, obs, anchor1, &shifted)?,
    };
    Ok(h1 - h0)
}

/// `(Γ_n¹, Γ_n²) = (-hess11 / n, -hess22 / (n h))`.
pub fn observed_information(
    model: &DiffusionModel,
    obs: &ObservationSet,
    theta1: &[f64],
    theta2: &[f64],
    scaling: &Scaling,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let ev = contrast_with_derivatives(model, obs, theta1, theta2)?;
    let s1 = scaling.rate1 * scaling.rate1;
    let s2 = scaling.rate2 * scaling.rate2;
    Ok((
        ev.hess11.iter().map(|v| -v / s1).collect(),
        ev.hess22.iter().map(|v| -v / s2).collect(),
    ))
}

enum StageCache {
    /// Residuals `ΔX_i - h a(X_{i-1}, θ₂)` for fixed θ₂.
    Residuals(Vec<f64>),
    /// Factors of `B(X_{i-1}, θ₁)` and their log-determinants for fixed θ₁.
    Factors { factors: Vec<f64>, logdets: Vec<f64> },
}

/// `H_n` as a function of one stage's parameter with the other held fixed.
/// Agrees bitwise with [`contrast`] while caching the fixed half of the work.
pub struct StageContrast<'a> {
    model: &'a DiffusionModel,
    obs: &'a ObservationSet,
    stage: Stage,
    fixed: Vec<f64>,
    cache: StageCache,
}

impl<'a> StageContrast<'a> {
    pub fn new(model: &'a DiffusionModel, obs: &'a ObservationSet, stage: Stage, fixed: &[f64]) -> Result<Self> {
        let (probe1, probe2) = match stage {
            Stage::Diffusion => (model.theta1_box().center(), fixed.to_vec()),
            Stage::Drift => (fixed.to_vec(), model.theta2_box().center()),
        };
        check_inputs(model, obs, &probe1, &probe2)?;
        let m = model.state_dim();
        let n = obs.n();
        let cache = match stage {
            Stage::Diffusion => {
                let mut res = vec![0.0; n * m];
                let mut w = Work::new(model);
                for i in 0..n {
                    residual_into(model, obs, i, fixed, &mut w);
                    res[i * m..(i + 1) * m].copy_from_slice(&w.v);
                }
                StageCache::Residuals(res)
            }
            Stage::Drift => {
                let mut factors = vec![0.0; n * m * m];
                let mut logdets = vec![0.0; n];
                let mut w = Work::new(model);
                for i in 0..n {
                    logdets[i] = factor_b(model, obs.state(i), fixed, &mut w)?;
                    factors[i * m * m..(i + 1) * m * m].copy_from_slice(&w.big);
                }
                StageCache::Factors { factors, logdets }
            }
        };
        Ok(Self {
            model,
            obs,
            stage,
            fixed: fixed.to_vec(),
            cache,
        })
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn fixed(&self) -> &[f64] {
        &self.fixed
    }

    pub fn eval(&self, theta_k: &[f64]) -> Result<f64> {
        let model = self.model;
        let obs = self.obs;
        let m = model.state_dim();
        let h = obs.h();
        let scalar = is_scalar(model);
        let bx = match self.stage {
            Stage::Diffusion => model.theta1_box(),
            Stage::Drift => model.theta2_box(),
        };
        if theta_k.len() != bx.dim() || !bx.contains_closed(theta_k) {
            return Err(QlaError::Domain(format!("θ_{} = {theta_k:?} outside {bx:?}", self.stage.index())));
        }
        let total = match &self.cache {
            StageCache::Residuals(res) => chunked_sum(obs.n(), |range| {
                let mut w = Work::new(model);
                let mut s = 0.0;
                for i in range {
                    let v = &res[i * m..(i + 1) * m];
                    let logdet = factor_b(model, obs.state(i), theta_k, &mut w)?;
                    let quad = quad_form(scalar, m, &w.big, v, &mut w.q);
                    s += quad / h + logdet;
                }
                Ok(s)
            })?,
            StageCache::Factors { factors, logdets } => chunked_sum(obs.n(), |range| {
                let mut w = Work::new(model);
                let mut s = 0.0;
                for i in range {
                    residual_into(model, obs, i, theta_k, &mut w);
                    let f = &factors[i * m * m..(i + 1) * m * m];
                    let quad = quad_form(scalar, m, f, &w.v, &mut w.q);
                    s += quad / h + logdets[i];
                }
                Ok(s)
            })?,
        };
        finite_or(-0.5 * total, "contrast")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bou_model, ou_model};

    fn five_point() -> ObservationSet {
        ObservationSet::from_scalar(vec![0.0, 0.1, -0.05, 0.02, 0.03], 0.1).unwrap()
    }

    #[test]
    fn ou_five_point_matches_scalar_formula() {
        let obs = five_point();
        let xs = obs.values();
        let (t1, t2, h) = (1.0, 1.0, 0.1);
        let mut oracle = 0.0;
        for i in 0..4 {
            let v = xs[i + 1] - xs[i] + h * t2 * xs[i];
            oracle += v * v / (h * t1 * t1) + (t1 * t1).ln();
        }
        oracle *= -0.5;
        let got = contrast(&ou_model(), &obs, &[t1], &[t2]).unwrap();
        assert!((got - oracle).abs() <= 1e-12 * oracle.abs());
    }

    #[test]
    fn quadratic_term_vanishes_on_exact_drift() {
        // one observation with ΔX = h a(X₀, θ₂)
        let (t1, t2, h) = (2.0, 1.5, 0.2);
        let x0 = 0.7;
        let obs = ObservationSet::from_scalar(vec![x0, x0 - h * t2 * x0], h).unwrap();
        let got = contrast(&ou_model(), &obs, &[t1], &[t2]).unwrap();
        assert!((got + f64::ln(t1)).abs() < 1e-14);
    }

    #[test]
    fn stage_cache_is_bitwise_equal() {
        let xs: Vec<f64> = (0..3001).map(|i| ((i as f64) * 0.37).sin()).collect();
        let obs = ObservationSet::from_scalar(xs, 0.01).unwrap();
        for model in [ou_model(), bou_model()] {
            let s1 = StageContrast::new(&model, &obs, Stage::Diffusion, &[1.3]).unwrap();
            let s2 = StageContrast::new(&model, &obs, Stage::Drift, &[0.8]).unwrap();
            for t in [0.2, 0.9, 4.5] {
                let direct1 = contrast(&model, &obs, &[t], &[1.3]).unwrap();
                let direct2 = contrast(&model, &obs, &[0.8], &[t]).unwrap();
                assert_eq!(s1.eval(&[t]).unwrap().to_bits(), direct1.to_bits());
                assert_eq!(s2.eval(&[t]).unwrap().to_bits(), direct2.to_bits());
            }
            assert!(matches!(s1.eval(&[5.5]), Err(QlaError::Domain(_))));
        }
    }

    #[test]
    fn derivatives_value_matches_contrast() {
        let obs = five_point();
        let ev = contrast_with_derivatives(&ou_model(), &obs, &[1.2], &[0.7]).unwrap();
        let v = contrast(&ou_model(), &obs, &[1.2], &[0.7]).unwrap();
        assert!((ev.value - v).abs() <= 1e-14 * v.abs().max(1.0));
    }

    #[test]
    fn ou_grad2_closed_form() {
        let obs = five_point();
        let (t1, t2, h) = (1.4, 0.9, 0.1);
        let xs = obs.values();
        let mut oracle = 0.0;
        for i in 0..4 {
            oracle += xs[i] * (xs[i + 1] - xs[i] + h * t2 * xs[i]);
        }
        oracle *= -1.0 / (t1 * t1);
        let ev = contrast_with_derivatives(&ou_model(), &obs, &[t1], &[t2]).unwrap();
        assert!((ev.grad2[0] - oracle).abs() < 1e-14);
    }

    #[test]
    fn zero_variation_information() {
        // constant path at x = 0: only -1/2 log θ₁² per step survives, whose
        // second derivative gives Γ_n¹ = -1/θ₁² (the data-driven half of the
        // information, 3/θ₁² · v²/(hθ₁²), is absent)
        let obs = ObservationSet::from_scalar(vec![0.0; 101], 0.05).unwrap();
        let sc = Scaling::for_obs(&obs);
        let (g1, g2) = observed_information(&ou_model(), &obs, &[1.5], &[1.0], &sc).unwrap();
        assert!((g1[0] + 1.0 / 2.25).abs() < 1e-13);
        assert_eq!(g2[0], 0.0);
    }

    #[test]
    fn field_zero_and_domain() {
        let obs = five_point();
        let sc = Scaling::for_obs(&obs);
        let m = ou_model();
        assert_eq!(log_ratio_field(&m, &obs, Stage::Diffusion, &[1.0], &[1.0], &[0.0], &sc).unwrap(), 0.0);
        assert!(matches!(
            log_ratio_field(&m, &obs, Stage::Drift, &[1.0], &[1.0], &[100.0], &sc),
            Err(QlaError::Domain(_))
        ));
    }

    #[test]
    fn scaling_order() {
        let s = Scaling::new(1000, 1000f64.powf(-0.6)).unwrap();
        assert!(s.rate1 >= s.rate2 && s.rate2 > 0.0);
        assert!(Scaling::new(0, 0.1).is_err());
    }

    #[test]
    fn degenerate_diffusion_is_ellipticity_error() {
        let obs = five_point();
        let model = crate::models::polynomial_model(
            "flat",
            &[0.0, 1.0],
            &[1.0, 0.5],
            crate::models::ParameterBox::interval(-1.0, 1.0).unwrap(),
            crate::models::ParameterBox::interval(0.2, 5.0).unwrap(),
        )
        .unwrap();
        assert!(matches!(contrast(&model, &obs, &[0.0], &[1.0]), Err(QlaError::Ellipticity(_))));
    }
}
