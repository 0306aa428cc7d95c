//! Euler–Maruyama simulation on a fine grid with subsampling, plus CSV I/O for
//! observation records.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::models::{DiffusionModel, TrueParameter};

/// Observation schedule of one simulated record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    n: usize,
    h: f64,
    substeps: usize,
    seed: u64,
}

pub const DEFAULT_SUBSTEPS: usize = 10;

impl PathConfig {
    pub fn new(n: usize, h: f64, substeps: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(QlaError::InvalidArgument("n must be at least 1".into()));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(QlaError::InvalidArgument(format!("h must be positive, got {h}")));
        }
        if substeps == 0 {
            return Err(QlaError::InvalidArgument("substeps must be at least 1".into()));
        }
        Ok(Self { n, h, substeps, seed })
    }

    /// `h = n^{-γ}` with `γ ∈ (1/2, 1)`, so that `h → 0`, `nh → ∞` and `nh² → 0`.
    pub fn rate_regime(n: usize, gamma: f64, substeps: usize, seed: u64) -> Result<Self> {
        check_gamma(gamma)?;
        Self::new(n, (n as f64).powf(-gamma), substeps, seed)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn substeps(&self) -> usize {
        self.substeps
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
}

pub fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.5 && gamma < 1.0 {
        Ok(())
    } else {
        Err(QlaError::InvalidArgument(format!(
            "gamma must be in (0.5, 1), got {gamma}"
        )))
    }
}

/// Discrete record `X_0, X_h, ..., X_{nh}` (row-major, `n + 1` rows of `m`).
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    values: Vec<f64>,
    dim: usize,
    h: f64,
}

impl ObservationSet {
    pub fn new(values: Vec<f64>, dim: usize, h: f64) -> Result<Self> {
        if dim == 0 || values.len() % dim != 0 || values.len() / dim < 2 {
            return Err(QlaError::InvalidArgument(
                "observation set needs at least two states of a positive dimension".into(),
            ));
        }
        if !(h > 0.0 && h.is_finite()) {
            return Err(QlaError::InvalidArgument(format!("h must be positive, got {h}")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(QlaError::InvalidArgument(format!(
                "non-finite observation at row {}",
                i / dim
            )));
        }
        Ok(Self { values, dim, h })
    }

    pub fn from_scalar(values: Vec<f64>, h: f64) -> Result<Self> {
        Self::new(values, 1, h)
    }

    /// Number of observation intervals.
    pub fn n(&self) -> usize {
        self.values.len() / self.dim - 1
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Sub-record over observation indices `start..=end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if end <= start || end > self.n() {
            return Err(QlaError::InvalidArgument(format!(
                "invalid slice {start}..={end} of {} intervals",
                self.n()
            )));
        }
        Self::new(
            self.values[start * self.dim..(end + 1) * self.dim].to_vec(),
            self.dim,
            self.h,
        )
    }

    /// CSV with header `t,x_1,...,x_m`; numbers use the shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for j in 1..=self.dim {
            let _ = write!(out, ",x_{j}");
        }
        out.push('\n');
        for i in 0..=self.n() {
            let _ = write!(out, "{:?}", i as f64 * self.h);
            for v in self.state(i) {
                let _ = write!(out, ",{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| QlaError::Parse("empty CSV".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") || cols.len() < 2 {
            return Err(QlaError::Parse("line 1: header must be `t,x_1,...`".into()));
        }
        for (j, c) in cols.iter().enumerate().skip(1) {
            if *c != format!("x_{j}") {
                return Err(QlaError::Parse(format!("line 1: unexpected column `{c}`")));
            }
        }
        let dim = cols.len() - 1;
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != dim + 1 {
                return Err(QlaError::Parse(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 1,
                    dim + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| QlaError::Parse(format!("line {}: {e}", lineno + 1)))
            };
            times.push(parse(fields[0])?);
            for f in &fields[1..] {
                values.push(parse(f)?);
            }
        }
        if times.len() < 2 {
            return Err(QlaError::Parse("need at least two observation rows".into()));
        }
        let h = times[1] - times[0];
        Self::new(values, dim, h)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())
            .map_err(|e| QlaError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| QlaError::Io(format!("{}: {e}", path.display())))?;
        Self::from_csv(&text)
    }
}

/// Gaussian increments keyed by `(seed, replicate)`; the position within the
/// ChaCha keystream plays the role of the step counter.
pub struct NoiseStream {
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64, replicate: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(replicate);
        Self { rng }
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }
}

/// Simulation switches that are not part of the observation schedule.
#[derive(Debug, Clone, Copy, Default)]
pub struct SimulationOptions {
    /// Drop the diffusion term (deterministic Euler recursion); debugging aid.
    pub zero_noise: bool,
    pub replicate: u64,
}

/// Euler–Maruyama on a fine grid of step `h / substeps`, recording every
/// `substeps`-th state.
pub fn simulate_observations(
    model: &DiffusionModel,
    truth: &TrueParameter,
    cfg: &PathConfig,
) -> Result<ObservationSet> {
    simulate_observations_with(model, truth, cfg, SimulationOptions::default())
}

pub fn simulate_observations_with(
    model: &DiffusionModel,
    truth: &TrueParameter,
    cfg: &PathConfig,
    opts: SimulationOptions,
) -> Result<ObservationSet> {
    truth.validate(model)?;
    let delta = cfg.h / cfg.substeps as f64;
    let mut noise = NoiseStream::new(cfg.seed, opts.replicate);
    let mut stepper = EulerStepper::new(model, truth, delta, opts.zero_noise);
    let m = model.state_dim();
    let mut values = Vec::with_capacity((cfg.n + 1) * m);
    values.extend_from_slice(&truth.x0);
    let mut step = 0usize;
    for _ in 0..cfg.n {
        for _ in 0..cfg.substeps {
            step += 1;
            stepper.step(&mut noise, step)?;
        }
        values.extend_from_slice(&stepper.x);
    }
    ObservationSet::new(values, m, cfg.h)
}

/// Burn-in settings for [`simulate_long_path_with`].
#[derive(Debug, Clone, Copy)]
pub struct LongPathOptions {
    pub burn_in_fraction: f64,
    pub replicate: u64,
}

impl Default for LongPathOptions {
    fn default() -> Self {
        Self {
            burn_in_fraction: 0.1,
            replicate: 0,
        }
    }
}

/// One long trajectory at resolution `step`, with the first 10% discarded.
pub fn simulate_long_path(
    model: &DiffusionModel,
    truth: &TrueParameter,
    total_time: f64,
    step: f64,
    seed: u64,
) -> Result<ObservationSet> {
    simulate_long_path_with(model, truth, total_time, step, seed, LongPathOptions::default())
}

pub fn simulate_long_path_with(
    model: &DiffusionModel,
    truth: &TrueParameter,
    total_time: f64,
    step: f64,
    seed: u64,
    opts: LongPathOptions,
) -> Result<ObservationSet> {
    if !(total_time > 0.0 && total_time.is_finite()) {
        return Err(QlaError::Precondition(format!(
            "total_time must be positive, got {total_time}"
        )));
    }
    if !(step > 0.0 && step < total_time) {
        return Err(QlaError::Precondition(format!(
            "step must be in (0, total_time), got {step}"
        )));
    }
    if !(0.0..1.0).contains(&opts.burn_in_fraction) {
        return Err(QlaError::Precondition("burn-in fraction must be in [0, 1)".into()));
    }
    truth.validate(model)?;
    let steps = (total_time / step).round() as usize;
    let burn = (steps as f64 * opts.burn_in_fraction).floor() as usize;
    if steps - burn < 2 {
        return Err(QlaError::Precondition("path too short after burn-in".into()));
    }
    let m = model.state_dim();
    let mut noise = NoiseStream::new(seed, opts.replicate);
    let mut stepper = EulerStepper::new(model, truth, step, false);
    let mut values = Vec::with_capacity((steps - burn + 1) * m);
    if burn == 0 {
        values.extend_from_slice(&truth.x0);
    }
    for k in 1..=steps {
        stepper.step(&mut noise, k)?;
        if k >= burn {
            values.extend_from_slice(&stepper.x);
        }
    }
    ObservationSet::new(values, m, step)
}

struct EulerStepper<'a> {
    model: &'a DiffusionModel,
    theta1: &'a [f64],
    theta2: &'a [f64],
    delta: f64,
    sqrt_delta: f64,
    zero_noise: bool,
    x: Vec<f64>,
    drift: Vec<f64>,
    diff: Vec<f64>,
    xi: Vec<f64>,
}

impl<'a> EulerStepper<'a> {
    fn new(model: &'a DiffusionModel, truth: &'a TrueParameter, delta: f64, zero_noise: bool) -> Self {
        let (m, r) = (model.state_dim(), model.noise_dim());
        Self {
            model,
            theta1: &truth.theta1_star,
            theta2: &truth.theta2_star,
            delta,
            sqrt_delta: delta.sqrt(),
            zero_noise,
            x: truth.x0.clone(),
            drift: vec![0.0; m],
            diff: vec![0.0; m * r],
            xi: vec![0.0; r],
        }
    }

    #[inline]
    fn step(&mut self, noise: &mut NoiseStream, index: usize) -> Result<()> {
        let (m, r) = (self.model.state_dim(), self.model.noise_dim());
        self.model.drift_into(&self.x, self.theta2, &mut self.drift);
        self.model.diffusion_into(&self.x, self.theta1, &mut self.diff);
        for k in 0..r {
            self.xi[k] = noise.next_normal();
        }
        for i in 0..m {
            let mut dw = 0.0;
            if !self.zero_noise {
                for k in 0..r {
                    dw += self.diff[i * r + k] * self.xi[k];
                }
            }
            self.x[i] += self.drift[i] * self.delta + dw * self.sqrt_delta;
        }
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(QlaError::Explosion { step: index });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bou_model, ou_model};

    fn ou_truth(x0: f64) -> TrueParameter {
        TrueParameter {
            theta1_star: vec![1.0],
            theta2_star: vec![1.0],
            x0: vec![x0],
        }
    }

    #[test]
    fn zero_noise_single_step() {
        let cfg = PathConfig::new(1, 0.1, 1, 3).unwrap();
        let obs = simulate_observations_with(
            &ou_model(),
            &ou_truth(1.0),
            &cfg,
            SimulationOptions {
                zero_noise: true,
                replicate: 0,
            },
        )
        .unwrap();
        assert_eq!(obs.state(1)[0], 0.9);
    }

    #[test]
    fn zero_noise_matches_recursion_bitwise() {
        let cfg = PathConfig::new(20, 0.1, 3, 3).unwrap();
        let obs = simulate_observations_with(
            &ou_model(),
            &ou_truth(1.0),
            &cfg,
            SimulationOptions {
                zero_noise: true,
                replicate: 0,
            },
        )
        .unwrap();
        let delta = 0.1 / 3.0;
        let mut x = 1.0f64;
        for i in 1..=20 {
            for _ in 0..3 {
                x += -x * delta + 0.0 * delta.sqrt();
            }
            assert_eq!(obs.state(i)[0].to_bits(), x.to_bits());
        }
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(PathConfig::new(0, 0.1, 1, 0).is_err());
        assert!(PathConfig::new(10, 0.0, 1, 0).is_err());
        assert!(PathConfig::new(10, 0.1, 0, 0).is_err());
        assert!(PathConfig::rate_regime(100, 0.4, 1, 0).is_err());
        assert!(simulate_long_path(&ou_model(), &ou_truth(0.0), 0.0, 0.01, 1).is_err());
    }

    #[test]
    fn seed_determinism_and_distinct_seeds() {
        let model = ou_model();
        let truth = ou_truth(0.0);
        let cfg = PathConfig::new(100, 0.05, 2, 11).unwrap();
        let a = simulate_observations(&model, &truth, &cfg).unwrap();
        let b = simulate_observations(&model, &truth, &cfg).unwrap();
        assert_eq!(a, b);
        for s in 0..10u64 {
            let c1 = PathConfig::new(100, 0.05, 1, 2 * s).unwrap();
            let c2 = PathConfig::new(100, 0.05, 1, 2 * s + 1).unwrap();
            let p1 = simulate_observations(&model, &truth, &c1).unwrap();
            let p2 = simulate_observations(&model, &truth, &c2).unwrap();
            assert!((1..=100).any(|i| p1.state(i) != p2.state(i)));
        }
    }

    #[test]
    fn explosion_reports_step() {
        let model = crate::models::DiffusionModel::new(
            "blowup",
            1,
            1,
            crate::models::ParameterBox::interval(0.2, 5.0).unwrap(),
            crate::models::ParameterBox::interval(0.2, 5.0).unwrap(),
            std::sync::Arc::new(|x, _t, out| out[0] = x[0] * x[0] * 1e10),
            std::sync::Arc::new(|_x, t, out| out[0] = t[0]),
        )
        .unwrap();
        let cfg = PathConfig::new(50, 0.1, 1, 1).unwrap();
        let err = simulate_observations(&model, &ou_truth(1.0), &cfg).unwrap_err();
        assert!(matches!(err, QlaError::Explosion { step } if step >= 1 && step <= 50));
    }

    #[test]
    fn csv_roundtrip_is_bit_exact() {
        let cfg = PathConfig::rate_regime(500, 0.6, 2, 5).unwrap();
        let obs = simulate_observations(&bou_model(), &ou_truth(0.3), &cfg).unwrap();
        let back = ObservationSet::from_csv(&obs.to_csv()).unwrap();
        assert_eq!(back.h().to_bits(), obs.h().to_bits());
        assert!(obs
            .values()
            .iter()
            .zip(back.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn csv_parse_errors_name_line() {
        let err = ObservationSet::from_csv("t,x_1\n0,1\n0.1,abc\n").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn ou_stationary_variance() {
        let cfg = PathConfig::new(100_000, 0.05, 10, 2024).unwrap();
        let obs = simulate_observations(&ou_model(), &ou_truth(0.0), &cfg).unwrap();
        let xs = obs.values();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        assert!((var - 0.5).abs() < 0.025, "variance {var}");
    }

    #[test]
    fn long_path_time_averages() {
        let ou = simulate_long_path(&ou_model(), &ou_truth(0.0), 5000.0, 0.01, 17).unwrap();
        let mean = ou.values().iter().sum::<f64>() / ou.values().len() as f64;
        assert!(mean.abs() < 0.05, "mean {mean}");

        let m2 = |seed| {
            let p = simulate_long_path(&bou_model(), &ou_truth(0.0), 5000.0, 0.01, seed).unwrap();
            p.values().iter().map(|x| x * x).sum::<f64>() / p.values().len() as f64
        };
        let (a, b) = (m2(1), m2(2));
        assert!(a.is_finite() && b.is_finite());
        assert!((a - b).abs() / a.max(b) < 0.10, "{a} vs {b}");
    }

    #[test]
    fn long_path_discards_burn_in() {
        let p = simulate_long_path(&ou_model(), &ou_truth(0.0), 100.0, 0.01, 3).unwrap();
        assert_eq!(p.values().len(), 10_000 - 1000 + 1);
    }
}
