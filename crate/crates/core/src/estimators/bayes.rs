//! Adaptive Bayes-type estimator
//!
//! Stage 1 minimizes `z ↦ ∫ w₁(√n (z - θ₁)) exp(H_n(θ₁, θ₂⁰)) π₁(θ₁) dθ₁` and
//! stage 2 minimizes `z ↦ ∫ w₂(√(nh) (z - θ₂)) exp(H_n(θ̃₁, θ₂)) π₂(θ₂) dθ₂`.
//! Integrals use a midpoint rule; the common factor `exp(max H)` is dropped.
//!
//! By default the grid is laid over a window of the box found by successive
//! coarse scans: nodes whose log posterior is more than `window_log_drop`
//! below the maximum carry relative mass below `exp(-window_log_drop)` and are
//! cut away, so the full node budget resolves the posterior bulk even when it
//! is much narrower than the box.
//!
//! On regular one-dimensional grids the loss minimization does not use the
//! node masses directly. Their objective is piecewise constant (indicator) or
//! piecewise linear (absolute loss) between nodes, which pins the estimate to
//! a node. Instead the log posterior is interpolated by local parabolas through
//! neighbouring nodes, and loss times density is integrated with a two-point
//! Gauss rule on sub-cells split at the loss kinks. Log-quadratic posteriors
//! are reproduced exactly.

use serde::{Deserialize, Serialize};

use super::{PriorDensity, QuadratureGrid};
use crate::error::{QlaError, Result};
use crate::linalg::pairwise_sum;
use crate::loss::LossFunction;
use crate::models::{DiffusionModel, ParameterBox, TrueParameter};
use crate::qla::{Scaling, Stage, StageContrast};
use crate::simulator::ObservationSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesConfig {
    /// Final nodes per axis when the stage dimension is 1.
    pub nodes_1d: usize,
    /// Final nodes per axis when the stage dimension is 2.
    pub nodes_2d: usize,
    /// Zoom the grid onto the posterior bulk instead of covering the box.
    pub adaptive_window: bool,
    pub coarse_nodes_1d: usize,
    pub coarse_nodes_2d: usize,
    pub window_log_drop: f64,
}

impl Default for BayesConfig {
    fn default() -> Self {
        Self {
            nodes_1d: 401,
            nodes_2d: 101,
            adaptive_window: true,
            coarse_nodes_1d: 101,
            coarse_nodes_2d: 31,
            window_log_drop: 40.0,
        }
    }
}

impl BayesConfig {
    fn counts(&self, d: usize, coarse: bool) -> Result<Vec<usize>> {
        match (d, coarse) {
            (1, false) => Ok(vec![self.nodes_1d]),
            (1, true) => Ok(vec![self.coarse_nodes_1d]),
            (2, false) => Ok(vec![self.nodes_2d; 2]),
            (2, true) => Ok(vec![self.coarse_nodes_2d; 2]),
            _ => Err(QlaError::InvalidArgument(format!(
                "Bayes quadrature supports stage dimension 1 or 2, got {d}"
            ))),
        }
    }
}

/// Stabilized posterior weights `exp(H - H_max) π w` at quadrature nodes.
#[derive(Debug, Clone)]
pub struct PosteriorTable {
    grid: QuadratureGrid,
    contrast: Vec<f64>,
    mass: Vec<f64>,
    h_max: f64,
    center: Vec<f64>,
    bx: ParameterBox,
    fine: Option<FineTable>,
    warnings: Vec<String>,
}

const SUBCELLS: usize = 8;

/// One-dimensional posterior density interpolated in the log by a parabola
/// per cell (through the cell's node and its neighbours).
#[derive(Debug, Clone)]
struct FineTable {
    lower: f64,
    cell: f64,
    /// `(node, log density, slope, curvature)` per cell, in cell units.
    parabola: Vec<[f64; 4]>,
}

impl FineTable {
    fn build(grid: &QuadratureGrid, log_density: &[f64]) -> Option<Self> {
        let n = grid.len();
        if grid.dim() != 1 || n < 3 || log_density.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let s = grid.spacing()[0];
        let regular = (1..n).all(|i| ((grid.node(i)[0] - grid.node(i - 1)[0]) - s).abs() <= 1e-9 * s)
            && grid.weights().iter().all(|w| (w - s).abs() <= 1e-9 * s);
        if !regular {
            return None;
        }
        let parabola = (0..n)
            .map(|i| {
                let j = i.clamp(1, n - 2);
                let (l0, l1, l2) = (log_density[j - 1], log_density[j], log_density[j + 1]);
                [grid.node(j)[0], l1, 0.5 * (l2 - l0), 0.5 * (l2 - 2.0 * l1 + l0)]
            })
            .collect();
        Some(Self {
            lower: grid.node(0)[0] - 0.5 * s,
            cell: s,
            parabola,
        })
    }

    fn upper(&self) -> f64 {
        self.lower + self.cell * self.parabola.len() as f64
    }

    /// `∫ w(rate (z - θ)) p(θ) dθ` with two Gauss points per piece; cells are
    /// split into sub-cells and at the loss kinks.
    fn objective(&self, z: f64, w: &LossFunction, rate: f64) -> f64 {
        const G: f64 = 0.288_675_134_594_812_9; // 1 / (2√3)
        let mut cuts: Vec<f64> = w.kinks_1d().iter().map(|k| z - k / rate).collect();
        cuts.sort_by(f64::total_cmp);
        let width = self.cell / SUBCELLS as f64;
        let mut next = 0;
        let terms: Vec<f64> = self
            .parabola
            .iter()
            .enumerate()
            .map(|(i, &[node, l, slope, curv])| {
                let f = |theta: f64| {
                    let t = (theta - node) / self.cell;
                    w.eval(&[rate * (z - theta)]) * (l + t * (slope + t * curv)).exp()
                };
                let piece = |a: f64, b: f64| {
                    let (m, r) = (0.5 * (a + b), b - a);
                    0.5 * r * (f(m - G * r) + f(m + G * r))
                };
                let mut acc = 0.0;
                for k in 0..SUBCELLS {
                    let a = self.lower + (i * SUBCELLS + k) as f64 * width;
                    let b = a + width;
                    while next < cuts.len() && cuts[next] <= a {
                        next += 1;
                    }
                    let mut left = a;
                    let mut c = next;
                    while c < cuts.len() && cuts[c] < b {
                        acc += piece(left, cuts[c]);
                        left = cuts[c];
                        c += 1;
                    }
                    acc += piece(left, b);
                }
                acc
            })
            .collect();
        pairwise_sum(&terms)
    }
}

impl PosteriorTable {
    /// Table from contrast values at the grid nodes; `bx` is the stage's
    /// parameter box (used for projection and tie-breaking).
    pub fn from_values(grid: QuadratureGrid, contrast: Vec<f64>, prior: &PriorDensity, bx: ParameterBox) -> Result<Self> {
        if contrast.len() != grid.len() {
            return Err(QlaError::InvalidArgument("one contrast value per node required".into()));
        }
        if contrast.iter().any(|v| !v.is_finite()) {
            return Err(QlaError::Evaluation("non-finite contrast at a quadrature node".into()));
        }
        let h_max = contrast.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mass: Vec<f64> = (0..grid.len())
            .map(|i| (contrast[i] - h_max).exp() * prior.density(grid.node(i)) * grid.weight(i))
            .collect();
        if !(pairwise_sum(&mass) > 0.0) {
            return Err(QlaError::Evaluation("posterior mass vanishes on the grid".into()));
        }
        let center = bx.center();
        let log_density: Vec<f64> = (0..grid.len())
            .map(|i| contrast[i] - h_max + prior.density(grid.node(i)).ln())
            .collect();
        let fine = FineTable::build(&grid, &log_density);
        let mut table = Self {
            grid,
            contrast,
            mass,
            h_max,
            center,
            bx,
            fine,
            warnings: Vec::new(),
        };
        table.check_resolution();
        Ok(table)
    }

    fn check_resolution(&mut self) {
        let mean = self.mean();
        let sd = self.sd();
        for a in 0..self.grid.dim() {
            let mut coords: Vec<f64> = (0..self.grid.len())
                .map(|i| self.grid.node(i)[a])
                .filter(|c| (c - mean[a]).abs() <= 3.0 * sd[a])
                .collect();
            coords.sort_by(f64::total_cmp);
            coords.dedup();
            if coords.len() < 5 {
                self.warnings.push(format!(
                    "grid too coarse: {} nodes within 3 posterior sd ({:.3e}) on axis {a}",
                    coords.len(),
                    sd[a]
                ));
            }
        }
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn contrast(&self) -> &[f64] {
        &self.contrast
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn h_max(&self) -> f64 {
        self.h_max
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Interpolated sub-cell objective; `None` unless the grid is regular and
    /// one-dimensional.
    pub fn interpolated_objective(&self, z: f64, w: &LossFunction, rate: f64) -> Option<f64> {
        self.fine.as_ref().map(|f| f.objective(z, w, rate))
    }

    /// `Σ w(rate (z - θ_i)) exp(H_i - H_max) π_i weight_i`.
    pub fn objective(&self, z: &[f64], w: &LossFunction, rate: f64) -> f64 {
        let d = self.grid.dim();
        let mut u = vec![0.0; d];
        let terms: Vec<f64> = (0..self.grid.len())
            .map(|i| {
                let node = self.grid.node(i);
                for a in 0..d {
                    u[a] = rate * (z[a] - node[a]);
                }
                w.eval(&u) * self.mass[i]
            })
            .collect();
        pairwise_sum(&terms)
    }

    pub fn mean(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let total = pairwise_sum(&self.mass);
        (0..d)
            .map(|a| {
                let t: Vec<f64> = (0..self.grid.len()).map(|i| self.grid.node(i)[a] * self.mass[i]).collect();
                pairwise_sum(&t) / total
            })
            .collect()
    }

    pub fn sd(&self) -> Vec<f64> {
        let d = self.grid.dim();
        let total = pairwise_sum(&self.mass);
        let mean = self.mean();
        (0..d)
            .map(|a| {
                let t: Vec<f64> = (0..self.grid.len())
                    .map(|i| (self.grid.node(i)[a] - mean[a]).powi(2) * self.mass[i])
                    .collect();
                (pairwise_sum(&t) / total).sqrt()
            })
            .collect()
    }
}

fn stage_box(model: &DiffusionModel, stage: Stage) -> &ParameterBox {
    match stage {
        Stage::Diffusion => model.theta1_box(),
        Stage::Drift => model.theta2_box(),
    }
}

fn evaluate_grid(sc: &StageContrast<'_>, grid: &QuadratureGrid) -> Result<Vec<f64>> {
    (0..grid.len()).map(|i| sc.eval(grid.node(i))).collect()
}

/// Log posterior (up to a constant) at the grid nodes.
fn log_posterior(values: &[f64], grid: &QuadratureGrid, prior: &PriorDensity) -> Vec<f64> {
    (0..grid.len()).map(|i| values[i] + prior.density(grid.node(i)).ln()).collect()
}

/// Bounding box of the nodes within `drop` of the maximum, padded by one cell
/// and clipped to `bx`.
fn significant_window(lp: &[f64], grid: &QuadratureGrid, drop: f64, bx: &ParameterBox) -> Result<ParameterBox> {
    let d = grid.dim();
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for (i, v) in lp.iter().enumerate() {
        if v - max > -drop {
            for a in 0..d {
                lo[a] = lo[a].min(grid.node(i)[a]);
                hi[a] = hi[a].max(grid.node(i)[a]);
            }
        }
    }
    for a in 0..d {
        lo[a] = (lo[a] - grid.spacing()[a]).max(bx.lower()[a]);
        hi[a] = (hi[a] + grid.spacing()[a]).min(bx.upper()[a]);
    }
    ParameterBox::new(lo, hi)
}

/// Largest log posterior on the window faces that lie strictly inside `bx`,
/// relative to the maximum.
fn edge_excess(lp: &[f64], grid: &QuadratureGrid, window: &ParameterBox, bx: &ParameterBox) -> f64 {
    let d = grid.dim();
    let max = lp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut worst = f64::NEG_INFINITY;
    for (i, v) in lp.iter().enumerate() {
        let node = grid.node(i);
        let on_inner_face = (0..d).any(|a| {
            let s = grid.spacing()[a];
            (node[a] - window.lower()[a] < s && window.lower()[a] > bx.lower()[a])
                || (window.upper()[a] - node[a] < s && window.upper()[a] < bx.upper()[a])
        });
        if on_inner_face {
            worst = worst.max(v - max);
        }
    }
    worst
}

/// Posterior table for one stage with the other stage's parameter fixed.
pub fn stage_table(
    model: &DiffusionModel,
    obs: &ObservationSet,
    stage: Stage,
    fixed: &[f64],
    prior: &PriorDensity,
    config: &BayesConfig,
) -> Result<PosteriorTable> {
    let bx = stage_box(model, stage).clone();
    if prior.parameter_box() != &bx {
        return Err(QlaError::InvalidArgument(format!(
            "prior box {:?} differs from the stage-{} box {:?}",
            prior.parameter_box(),
            stage.index(),
            bx
        )));
    }
    let sc = StageContrast::new(model, obs, stage, fixed)?;
    let d = bx.dim();
    let final_counts = config.counts(d, false)?;
    if !config.adaptive_window {
        let grid = QuadratureGrid::midpoint(&bx, &final_counts)?;
        let values = evaluate_grid(&sc, &grid)?;
        return PosteriorTable::from_values(grid, values, prior, bx);
    }
    let coarse_counts = config.counts(d, true)?;
    let mut window = bx.clone();
    for _ in 0..8 {
        let grid = QuadratureGrid::midpoint(&window, &coarse_counts)?;
        let lp = log_posterior(&evaluate_grid(&sc, &grid)?, &grid, prior);
        let next = significant_window(&lp, &grid, config.window_log_drop, &bx)?;
        let settled = (0..d).all(|a| next.width(a) >= 0.5 * window.width(a));
        window = next;
        if settled {
            break;
        }
    }
    for _ in 0..4 {
        let grid = QuadratureGrid::midpoint(&window, &final_counts)?;
        let values = evaluate_grid(&sc, &grid)?;
        let lp = log_posterior(&values, &grid, prior);
        if edge_excess(&lp, &grid, &window, &bx) < -0.5 * config.window_log_drop || window == bx {
            return PosteriorTable::from_values(grid, values, prior, bx);
        }
        let lo: Vec<f64> = (0..d)
            .map(|a| (window.lower()[a] - window.width(a)).max(bx.lower()[a]))
            .collect();
        let hi: Vec<f64> = (0..d)
            .map(|a| (window.upper()[a] + window.width(a)).min(bx.upper()[a]))
            .collect();
        window = ParameterBox::new(lo, hi)?;
    }
    let grid = QuadratureGrid::midpoint(&window, &final_counts)?;
    let values = evaluate_grid(&sc, &grid)?;
    let mut table = PosteriorTable::from_values(grid, values, prior, bx)?;
    table
        .warnings
        .push("posterior mass reaches the edge of the quadrature window".into());
    Ok(table)
}

/// Loss-weighted posterior objective at `z` on an explicit grid.
#[allow(clippy::too_many_arguments)]
pub fn bayes_objective(
    model: &DiffusionModel,
    obs: &ObservationSet,
    stage: Stage,
    z: &[f64],
    w: &LossFunction,
    prior: &PriorDensity,
    fixed: &[f64],
    grid: &QuadratureGrid,
    scaling: &Scaling,
) -> Result<f64> {
    let bx = stage_box(model, stage).clone();
    if z.len() != bx.dim() || !bx.contains_closed(z) {
        return Err(QlaError::Domain(format!("z = {z:?} outside {bx:?}")));
    }
    let sc = StageContrast::new(model, obs, stage, fixed)?;
    let table = PosteriorTable::from_values(grid.clone(), evaluate_grid(&sc, grid)?, prior, bx)?;
    Ok(table.objective(z, w, scaling.rate(stage)))
}

/// Posterior mean of one stage (the quadratic-loss Bayes estimate).
pub fn posterior_mean(
    model: &DiffusionModel,
    obs: &ObservationSet,
    stage: Stage,
    prior: &PriorDensity,
    fixed: &[f64],
    config: &BayesConfig,
) -> Result<Vec<f64>> {
    Ok(stage_table(model, obs, stage, fixed, prior, config)?.mean())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageEstimate {
    pub z: Vec<f64>,
    pub objective: f64,
    /// Several scan points attained the minimum; the one closest to the box
    /// center was kept.
    pub tie_broken: bool,
}

const GOLDEN: f64 = 0.618_033_988_749_894_9;

/// Golden-section search on `[a, b]`; returns the best point seen.
fn golden<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let (mut best, mut fbest) = if fc <= fd { (c, fc) } else { (d, fd) };
    while (b - a).abs() > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c);
            if fc < fbest {
                best = c;
                fbest = fc;
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d);
            if fd < fbest {
                best = d;
                fbest = fd;
            }
        }
    }
    (best, fbest)
}

const MAX_SCAN: usize = 4096;

/// Scan over the table's nodes, then golden-section refinement: of the
/// interpolated objective to `1e-6 / rate` on regular 1-D grids, else of the
/// node objective along each axis to `1e-3 / rate`.
pub fn minimize_objective(table: &PosteriorTable, w: &LossFunction, rate: f64) -> Result<StageEstimate> {
    let d = table.grid.dim();
    if w.dim() != d {
        return Err(QlaError::InvalidArgument(format!(
            "loss {} has dimension {} but the stage has dimension {d}",
            w.id(),
            w.dim()
        )));
    }
    let stride = table.grid.len().div_ceil(MAX_SCAN);
    let dist = |z: &[f64]| -> f64 { z.iter().zip(&table.center).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut ties = 0usize;
    for i in (0..table.grid.len()).step_by(stride) {
        let z = table.grid.node(i);
        let v = table.objective(z, w, rate);
        match &best {
            None => {
                best = Some((z.to_vec(), v));
                ties = 1;
            }
            Some((bz, bv)) => {
                if v < *bv {
                    best = Some((z.to_vec(), v));
                    ties = 1;
                } else if v == *bv {
                    ties += 1;
                    if dist(z) < dist(bz) {
                        best = Some((z.to_vec(), v));
                    }
                }
            }
        }
    }
    let (mut z, _) = best.expect("non-empty grid");
    if let Some(fine) = &table.fine {
        // the smooth minimizer can sit well away from the best node when the
        // node objective is flat, so search a bracket of one posterior sd
        let reach = 2.0 * table.grid.spacing()[0] + table.sd()[0];
        let lo = (z[0] - reach).max(fine.lower).max(table.bx.lower()[0]);
        let hi = (z[0] + reach).min(fine.upper()).min(table.bx.upper()[0]);
        let (za, va) = golden(|t| fine.objective(t, w, rate), lo, hi, 1e-6 / rate);
        let at_node = fine.objective(z[0], w, rate);
        let (z, value) = if va <= at_node { (vec![za], va) } else { (z, at_node) };
        let mut z = z;
        table.bx.project(&mut z);
        return Ok(StageEstimate {
            z,
            objective: value,
            tie_broken: ties > 1,
        });
    }
    let tol = 1e-3 / rate;
    let mut value = table.objective(&z, w, rate);
    let sweeps = if d == 1 { 1 } else { 3 };
    for _ in 0..sweeps {
        for a in 0..d {
            let s = table.grid.spacing()[a] * stride as f64;
            let lo = (z[a] - s).max(table.bx.lower()[a]);
            let hi = (z[a] + s).min(table.bx.upper()[a]);
            if hi - lo <= tol {
                continue;
            }
            let mut probe = z.clone();
            let (za, va) = golden(
                |t| {
                    probe[a] = t;
                    table.objective(&probe, w, rate)
                },
                lo,
                hi,
                tol,
            );
            if va < value {
                z[a] = za;
                value = va;
            }
        }
    }
    table.bx.project(&mut z);
    Ok(StageEstimate {
        z,
        objective: value,
        tie_broken: ties > 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BayesResult {
    pub theta_tilde1: Vec<f64>,
    pub theta_tilde2: Vec<f64>,
    pub loss_ids: [String; 2],
    pub objective: [f64; 2],
    pub pilot: Vec<f64>,
    pub tie_broken: [bool; 2],
    /// `(√n (θ̃₁ - θ₁*), √(nh) (θ̃₂ - θ₂*))` when the truth is supplied.
    pub scaled_error: Option<[Vec<f64>; 2]>,
    pub warnings: Vec<String>,
}

/// Two-stage adaptive Bayes estimate with losses `(w₁, w₂)`, priors
/// `(π₁, π₂)` and stage-1 pilot `θ₂⁰`.
#[allow(clippy::too_many_arguments)]
pub fn bayes_adaptive(
    model: &DiffusionModel,
    obs: &ObservationSet,
    losses: [&LossFunction; 2],
    priors: [&PriorDensity; 2],
    pilot: &[f64],
    config: &BayesConfig,
    scaling: &Scaling,
    truth: Option<&TrueParameter>,
) -> Result<BayesResult> {
    if !model.theta2_box().contains_closed(pilot) || pilot.len() != model.d2() {
        return Err(QlaError::Domain(format!(
            "pilot θ₂⁰ = {pilot:?} outside {:?}",
            model.theta2_box()
        )));
    }
    let t1 = stage_table(model, obs, Stage::Diffusion, pilot, priors[0], config)?;
    let e1 = minimize_objective(&t1, losses[0], scaling.rate1)?;
    let t2 = stage_table(model, obs, Stage::Drift, &e1.z, priors[1], config)?;
    let e2 = minimize_objective(&t2, losses[1], scaling.rate2)?;
    let mut warnings: Vec<String> = t1.warnings().iter().map(|w| format!("stage 1: {w}")).collect();
    warnings.extend(t2.warnings().iter().map(|w| format!("stage 2: {w}")));
    let scaled_error = truth.map(|t| {
        [
            e1.z.iter().zip(&t.theta1_star).map(|(a, b)| scaling.rate1 * (a - b)).collect(),
            e2.z.iter().zip(&t.theta2_star).map(|(a, b)| scaling.rate2 * (a - b)).collect(),
        ]
    });
    Ok(BayesResult {
        theta_tilde1: e1.z,
        theta_tilde2: e2.z,
        loss_ids: [losses[0].id(), losses[1].id()],
        objective: [e1.objective, e2.objective],
        pilot: pilot.to_vec(),
        tie_broken: [e1.tie_broken, e2.tie_broken],
        scaled_error,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::Arc;

    fn unit_box() -> ParameterBox {
        ParameterBox::interval(0.0, 2.0).unwrap()
    }

    #[test]
    fn three_node_hand_grid() {
        let grid = QuadratureGrid::from_nodes(vec![0.5, 1.0, 1.5], vec![0.5; 3]).unwrap();
        let prior = PriorDensity::uniform(unit_box()).scaled(2.0); // π ≡ 1
        let table = PosteriorTable::from_values(grid, vec![0.0, 1.0, 0.0], &prior, unit_box()).unwrap();
        let w = LossFunction::power(2.0, 1).unwrap();
        let v = table.objective(&[1.0], &w, 2.0);
        assert!((v - (-1f64).exp()).abs() < 1e-15, "{v}");
    }

    fn gaussian_table(mu: f64, sd: f64, n: usize) -> PosteriorTable {
        let bx = ParameterBox::interval(mu - 12.0 * sd, mu + 12.0 * sd).unwrap();
        let grid = QuadratureGrid::midpoint(&bx, &[n]).unwrap();
        let h: Vec<f64> = (0..grid.len())
            .map(|i| -0.5 * ((grid.node(i)[0] - mu) / sd).powi(2) + 1234.5)
            .collect();
        PosteriorTable::from_values(grid, h, &PriorDensity::uniform(bx.clone()), bx).unwrap()
    }

    #[test]
    fn posterior_mean_of_gaussian() {
        let t = gaussian_table(0.7, 0.05, 2001);
        assert!((t.mean()[0] - 0.7).abs() < 1e-6);
        assert!((t.sd()[0] - 0.05).abs() < 1e-6);
        assert!(t.warnings().is_empty());
    }

    #[test]
    fn quadratic_loss_argmin_is_mean() {
        // skewed posterior so that mean and mode differ
        let bx = ParameterBox::interval(0.0, 3.0).unwrap();
        let grid = QuadratureGrid::midpoint(&bx, &[601]).unwrap();
        let h: Vec<f64> = (0..grid.len())
            .map(|i| {
                let x = grid.node(i)[0];
                3.0 * x.ln() - 4.0 * x
            })
            .collect();
        let table = PosteriorTable::from_values(grid, h, &PriorDensity::uniform(bx.clone()), bx).unwrap();
        let w = LossFunction::power(2.0, 1).unwrap();
        let est = minimize_objective(&table, &w, 10.0).unwrap();
        assert!((est.z[0] - table.mean()[0]).abs() < 2e-4, "{:?} vs {:?}", est.z, table.mean());
    }

    #[test]
    fn indicator_symmetric_posterior() {
        let t = gaussian_table(1.3, 0.1, 801);
        let w = LossFunction::indicator(vec![1.0]).unwrap();
        let est = minimize_objective(&t, &w, 10.0).unwrap();
        assert!((est.z[0] - 1.3).abs() <= t.grid().spacing()[0], "{:?}", est);
    }

    #[test]
    fn scaling_invariance_bitwise() {
        let t = gaussian_table(0.4, 0.2, 401);
        for w in [LossFunction::power(2.0, 1).unwrap(), LossFunction::power(1.0, 1).unwrap()] {
            let base = minimize_objective(&t, &w, 3.0).unwrap();
            let inner = w.clone();
            let scaled = LossFunction::custom("scaled", 1, 2.0, Arc::new(move |u| 8.0 * inner.eval(u)));
            let s = minimize_objective(&t, &scaled, 3.0).unwrap();
            assert_eq!(base.z[0].to_bits(), s.z[0].to_bits());
            assert_eq!((8.0 * base.objective).to_bits(), s.objective.to_bits());
        }
    }

    #[test]
    fn stabilization_shift() {
        let a = gaussian_table(0.4, 0.2, 401);
        let bx = ParameterBox::interval(0.4 - 2.4, 0.4 + 2.4).unwrap();
        let shifted: Vec<f64> = a.contrast().iter().map(|v| v + 1e6).collect();
        let b = PosteriorTable::from_values(a.grid().clone(), shifted, &PriorDensity::uniform(bx.clone()), bx).unwrap();
        let w = LossFunction::power(2.0, 1).unwrap();
        let (ea, eb) = (minimize_objective(&a, &w, 1.0).unwrap(), minimize_objective(&b, &w, 1.0).unwrap());
        assert!((ea.z[0] - eb.z[0]).abs() < 1e-9);
        let r1 = a.objective(&[0.1], &w, 1.0) / a.objective(&[0.9], &w, 1.0);
        let r2 = b.objective(&[0.1], &w, 1.0) / b.objective(&[0.9], &w, 1.0);
        assert!((r1 - r2).abs() < 1e-9 * r1.abs());
    }

    #[test]
    fn coarse_grid_warning() {
        let t = gaussian_table(0.4, 0.2, 3);
        assert!(!t.warnings().is_empty());
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, _) = golden(|t| (t - 0.3).powi(2), -1.0, 1.0, 1e-9);
        assert!((x - 0.3).abs() < 1e-8);
    }

    fn log_density_table(lo: f64, hi: f64, n: usize, log_density: impl Fn(f64) -> f64) -> PosteriorTable {
        let bx = ParameterBox::interval(lo, hi).unwrap();
        let grid = QuadratureGrid::midpoint(&bx, &[n]).unwrap();
        let h: Vec<f64> = (0..grid.len()).map(|i| log_density(grid.node(i)[0])).collect();
        PosteriorTable::from_values(grid, h, &PriorDensity::uniform(bx.clone()), bx).unwrap()
    }

    #[test]
    fn off_node_gaussian_center_recovered() {
        // the centre sits 0.37 cells from the nearest node
        let (mu, sd, n) = (1.0, 0.1, 101);
        let s = 2.4 / n as f64;
        let t = log_density_table(mu - 1.2 + 0.13 * s, mu + 1.2 + 0.13 * s, n, |x| -0.5 * ((x - mu) / sd).powi(2));
        for (w, tol) in [
            (LossFunction::power(1.0, 1).unwrap(), 1e-6),
            (LossFunction::power(1.5, 1).unwrap(), 1e-4),
            (LossFunction::indicator(vec![1.0]).unwrap(), 1e-6),
            (LossFunction::indicator(vec![0.3]).unwrap(), 1e-6),
        ] {
            let est = minimize_objective(&t, &w, 10.0).unwrap();
            assert!((est.z[0] - mu).abs() < tol * sd, "{} {:?}", w.id(), est);
        }
    }

    #[test]
    fn absolute_loss_gives_truncated_gamma_median() {
        use statrs::distribution::{ContinuousCDF, Gamma};
        let (shape, lo, hi) = (20.0, 8.0, 40.0);
        let g = Gamma::new(shape, 1.0).unwrap();
        let median = g.inverse_cdf(0.5 * (g.cdf(lo) + g.cdf(hi)));
        let t = log_density_table(lo, hi, 401, |x| (shape - 1.0) * x.ln() - x);
        let est = minimize_objective(&t, &LossFunction::power(1.0, 1).unwrap(), 1.0).unwrap();
        let cell = t.grid().spacing()[0];
        assert!((est.z[0] - median).abs() < 1e-5 * cell, "{} vs {median}", est.z[0]);
    }

    #[test]
    fn interpolated_objective_only_on_regular_grids() {
        let t = gaussian_table(0.5, 0.1, 41);
        let w = LossFunction::power(2.0, 1).unwrap();
        let v = t.interpolated_objective(0.5, &w, 1.0).unwrap();
        // sd² times the mass √(2π) sd, with uniform prior density 1 / 2.4
        let exact = 0.01 * (2.0 * std::f64::consts::PI).sqrt() * 0.1 / 2.4;
        assert!((v - exact).abs() < 1e-9 * exact, "{v} vs {exact}");
        let hand = QuadratureGrid::from_nodes(vec![0.5, 1.0, 1.6], vec![0.5; 3]).unwrap();
        let prior = PriorDensity::uniform(unit_box()).scaled(2.0);
        let t = PosteriorTable::from_values(hand, vec![0.0, 1.0, 0.0], &prior, unit_box()).unwrap();
        assert!(t.interpolated_objective(1.0, &w, 1.0).is_none());
    }
}
