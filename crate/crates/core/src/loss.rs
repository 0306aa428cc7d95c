//! Loss functions for Bayes-type estimation and probabilistic checks of the
//! loss-class properties (zero at the origin, symmetry, convex and bounded
//! sublevel sets, polynomial growth) plus the two tail conditions used for
//! consistency and moment convergence.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{QlaError, Result};

pub type LossFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

#[derive(Clone)]
pub enum LossKind {
    /// `|u|^p` (Euclidean norm).
    Power(f64),
    /// `0` inside the centred box `|u_i| <= r_i`, `1` outside.
    IndicatorBox(Vec<f64>),
    /// `0` inside the centred ellipsoid `Σ (u_i / r_i)^2 <= 1`, `1` outside.
    IndicatorEllipsoid(Vec<f64>),
    Custom {
        name: String,
        func: Arc<LossFn>,
        growth: f64,
    },
}

#[derive(Clone)]
pub struct LossFunction {
    kind: LossKind,
    dim: usize,
}

impl fmt::Debug for LossFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "LossFunction({}, dim={})", self.id(), self.dim)
    }
}

impl LossFunction {
    pub fn power(p: f64, dim: usize) -> Result<Self> {
        if !(p > 0.0 && p.is_finite()) || dim == 0 {
            return Err(QlaError::InvalidArgument(format!(
                "power loss needs p > 0 and dim >= 1 (p={p}, dim={dim})"
            )));
        }
        Ok(Self {
            kind: LossKind::Power(p),
            dim,
        })
    }

    pub fn indicator(radii: Vec<f64>) -> Result<Self> {
        check_radii(&radii)?;
        Ok(Self {
            dim: radii.len(),
            kind: LossKind::IndicatorBox(radii),
        })
    }

    pub fn indicator_ellipsoid(radii: Vec<f64>) -> Result<Self> {
        check_radii(&radii)?;
        Ok(Self {
            dim: radii.len(),
            kind: LossKind::IndicatorEllipsoid(radii),
        })
    }

    pub fn custom(name: impl Into<String>, dim: usize, growth: f64, func: Arc<LossFn>) -> Self {
        Self {
            kind: LossKind::Custom {
                name: name.into(),
                func,
                growth,
            },
            dim,
        }
    }

    /// Named custom losses, mostly counterexamples to the loss-class properties:
    ///
    /// * `zero`: identically zero
    /// * `asymmetric`: `min(|u|, |u - 3 e₁|)`
    /// * `truncated`: `|u|² 1{|u| <= 5}`
    /// * `saturating`: `1 - exp(-|u|²)`
    pub fn named_custom(name: &str, dim: usize) -> Result<Self> {
        let func: Arc<LossFn> = match name {
            "zero" => Arc::new(|_u| 0.0),
            "asymmetric" => Arc::new(|u| {
                let shifted: f64 = u
                    .iter()
                    .enumerate()
                    .map(|(i, v)| if i == 0 { (v - 3.0).powi(2) } else { v * v })
                    .sum();
                euclid(u).min(shifted.sqrt())
            }),
            "truncated" => Arc::new(|u| {
                let r2 = sq_norm(u);
                if r2 <= 25.0 {
                    r2
                } else {
                    0.0
                }
            }),
            "saturating" => Arc::new(|u| 1.0 - (-sq_norm(u)).exp()),
            other => {
                return Err(QlaError::InvalidArgument(format!(
                    "unknown custom loss `{other}` (known: zero, asymmetric, truncated, saturating)"
                )))
            }
        };
        let growth = match name {
            "asymmetric" => 1.0,
            "truncated" => 2.0,
            _ => 0.0,
        };
        Ok(Self::custom(name, dim, growth, func))
    }

    /// Parses `power:<p>`, `indicator:<r1>,<r2>,...`, `ellipsoid:<r1>,...` or
    /// `custom:<name>`. A single indicator radius is broadcast to `dim` axes.
    pub fn parse(spec: &str, dim: usize) -> Result<Self> {
        let (kind, arg) = spec
            .split_once(':')
            .ok_or_else(|| QlaError::Parse(format!("loss `{spec}`: expected <kind>:<args>")))?;
        let floats = |s: &str| -> Result<Vec<f64>> {
            s.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|e| QlaError::Parse(format!("loss `{spec}`: {e}")))
                })
                .collect()
        };
        let broadcast = |mut r: Vec<f64>| {
            if r.len() == 1 && dim > 1 {
                r = vec![r[0]; dim];
            }
            r
        };
        let loss = match kind.trim() {
            "power" => {
                let p = floats(arg)?;
                if p.len() != 1 {
                    return Err(QlaError::Parse(format!("loss `{spec}`: one exponent expected")));
                }
                Self::power(p[0], dim)?
            }
            "indicator" => Self::indicator(broadcast(floats(arg)?))?,
            "ellipsoid" => Self::indicator_ellipsoid(broadcast(floats(arg)?))?,
            "custom" => Self::named_custom(arg.trim(), dim)?,
            other => return Err(QlaError::Parse(format!("unknown loss kind `{other}`"))),
        };
        if loss.dim != dim {
            return Err(QlaError::InvalidArgument(format!(
                "loss `{spec}` has dimension {} but {dim} is required",
                loss.dim
            )));
        }
        Ok(loss)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &LossKind {
        &self.kind
    }

    pub fn id(&self) -> String {
        let join = |r: &[f64]| r.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(",");
        match &self.kind {
            LossKind::Power(p) => format!("power:{p}"),
            LossKind::IndicatorBox(r) => format!("indicator:{}", join(r)),
            LossKind::IndicatorEllipsoid(r) => format!("ellipsoid:{}", join(r)),
            LossKind::Custom { name, .. } => format!("custom:{name}"),
        }
    }

    /// Declared growth exponent; indicator losses are bounded and report 0.
    pub fn growth_exponent(&self) -> f64 {
        match &self.kind {
            LossKind::Power(p) => *p,
            LossKind::IndicatorBox(_) | LossKind::IndicatorEllipsoid(_) => 0.0,
            LossKind::Custom { growth, .. } => *growth,
        }
    }

    /// Exponent `p` to validate against: the growth exponent, or 1 for bounded
    /// losses (which lie in every class `W_p`).
    pub fn class_exponent(&self) -> f64 {
        let g = self.growth_exponent();
        if g > 0.0 {
            g
        } else {
            1.0
        }
    }

    /// Unchecked evaluation.
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        match &self.kind {
            LossKind::Power(p) => {
                let s = sq_norm(u);
                if *p == 2.0 {
                    s
                } else if *p == 1.0 {
                    s.sqrt()
                } else {
                    s.powf(0.5 * p)
                }
            }
            LossKind::IndicatorBox(r) => {
                if u.iter().zip(r).all(|(v, ri)| v.abs() <= *ri) {
                    0.0
                } else {
                    1.0
                }
            }
            LossKind::IndicatorEllipsoid(r) => {
                let s: f64 = u.iter().zip(r).map(|(v, ri)| (v / ri) * (v / ri)).sum();
                if s <= 1.0 {
                    0.0
                } else {
                    1.0
                }
            }
            LossKind::Custom { func, .. } => func(u),
        }
    }

    /// Points where the one-dimensional loss is not smooth.
    pub fn kinks_1d(&self) -> Vec<f64> {
        match &self.kind {
            LossKind::Power(_) => vec![0.0],
            LossKind::IndicatorBox(r) | LossKind::IndicatorEllipsoid(r) => vec![-r[0], r[0]],
            LossKind::Custom { name, .. } => match name.as_str() {
                "asymmetric" => vec![0.0, 1.5, 3.0],
                "truncated" => vec![-5.0, 0.0, 5.0],
                _ => vec![0.0],
            },
        }
    }

    /// Checked evaluation: rejects negative or non-finite values.
    pub fn try_eval(&self, u: &[f64]) -> Result<f64> {
        if u.len() != self.dim {
            return Err(QlaError::InvalidArgument(format!(
                "loss of dimension {} evaluated at a {}-vector",
                self.dim,
                u.len()
            )));
        }
        let v = self.eval(u);
        if !(v >= 0.0) || !v.is_finite() {
            return Err(QlaError::LossClassViolation(format!(
                "{} returned {v} at u = {u:?}",
                self.id()
            )));
        }
        Ok(v)
    }
}

fn check_radii(radii: &[f64]) -> Result<()> {
    if radii.is_empty() || radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
        return Err(QlaError::InvalidArgument(format!(
            "indicator radii must be positive, got {radii:?}"
        )));
    }
    Ok(())
}

#[inline]
fn sq_norm(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

#[inline]
fn euclid(u: &[f64]) -> f64 {
    sq_norm(u).sqrt()
}

/// A probe that violated a property.
#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub points: Vec<Vec<f64>>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PropertyCheck {
    pub property: String,
    pub passed: bool,
    pub detail: String,
    pub witness: Option<Witness>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub loss: String,
    pub p: f64,
    pub probes: usize,
    pub growth_constant: f64,
    pub checks: Vec<PropertyCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, property: &str) -> Option<&PropertyCheck> {
        self.checks.iter().find(|c| c.property == property)
    }
}

fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = euclid(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn scaled(dir: &[f64], r: f64) -> Vec<f64> {
    dir.iter().map(|d| d * r).collect()
}

/// Directions used by the deterministic probes: `±e₁` in one dimension,
/// otherwise the signed axes plus `extra` random unit vectors.
fn probe_directions(dim: usize, extra: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut dirs = Vec::new();
    for i in 0..dim {
        for s in [1.0, -1.0] {
            let mut e = vec![0.0; dim];
            e[i] = s;
            dirs.push(e);
        }
    }
    if dim > 1 {
        dirs.extend((0..extra).map(|_| random_direction(rng, dim)));
    }
    dirs
}

pub const MIN_PROBES: usize = 1000;
const FAR_RADII: (f64, f64) = (1e3, 1e6);

/// Monte Carlo checks of the four loss-class properties. Report-only.
pub fn validate_loss_class(
    w: &LossFunction,
    p: f64,
    probe_count: usize,
    seed: u64,
) -> Result<ValidationReport> {
    if probe_count < MIN_PROBES {
        return Err(QlaError::Precondition(format!(
            "probe_count must be at least {MIN_PROBES}"
        )));
    }
    if !(p > 0.0) {
        return Err(QlaError::Precondition(format!("growth exponent must be positive, got {p}")));
    }
    let dim = w.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probes: Vec<Vec<f64>> = (0..probe_count)
        .map(|_| {
            let r = 10f64.powf(rng.gen_range(-3.0..3.0));
            scaled(&random_direction(&mut rng, dim), r)
        })
        .collect();
    let values: Vec<f64> = probes.iter().map(|u| w.eval(u)).collect();
    let mut checks = Vec::new();

    if let Some(i) = values.iter().position(|v| !(*v >= 0.0) || !v.is_finite()) {
        checks.push(PropertyCheck {
            property: "nonnegative".into(),
            passed: false,
            detail: "loss returned a negative or non-finite value".into(),
            witness: Some(Witness {
                points: vec![probes[i].clone()],
                values: vec![values[i]],
            }),
        });
    }

    let w0 = w.eval(&vec![0.0; dim]);
    checks.push(PropertyCheck {
        property: "zero_at_origin".into(),
        passed: w0 == 0.0,
        detail: format!("w(0) = {w0}"),
        witness: (w0 != 0.0).then(|| Witness {
            points: vec![vec![0.0; dim]],
            values: vec![w0],
        }),
    });

    let nonzero = values.iter().position(|v| *v > 0.0);
    checks.push(PropertyCheck {
        property: "not_identically_zero".into(),
        passed: nonzero.is_some(),
        detail: match nonzero {
            Some(i) => format!("w = {} at probe {i}", values[i]),
            None => format!("w vanished on all {probe_count} probes"),
        },
        witness: None,
    });

    let asym = probes.iter().zip(&values).find_map(|(u, v)| {
        let neg: Vec<f64> = u.iter().map(|x| -x).collect();
        let vn = w.eval(&neg);
        (vn != *v).then(|| Witness {
            points: vec![u.clone(), neg],
            values: vec![*v, vn],
        })
    });
    checks.push(PropertyCheck {
        property: "symmetry".into(),
        passed: asym.is_none(),
        detail: match &asym {
            Some(wit) => format!("w(u) = {} but w(-u) = {}", wit.values[0], wit.values[1]),
            None => "w(u) = w(-u) on all probes".into(),
        },
        witness: asym,
    });

    // growth: compare the ratio on a far shell with the ratio near the origin
    let far: Vec<Vec<f64>> = (0..probe_count / 4)
        .map(|_| {
            let r = 10f64.powf(rng.gen_range(FAR_RADII.0.log10()..FAR_RADII.1.log10()));
            scaled(&random_direction(&mut rng, dim), r)
        })
        .collect();
    let far_values: Vec<f64> = far.iter().map(|u| w.eval(u)).collect();
    let ratio = |u: &[f64], v: f64| v / (1.0 + euclid(u).powf(p));
    let mut growth_max = 0.0_f64;
    let mut near_max = 0.0_f64;
    for (u, v) in probes.iter().zip(&values) {
        let r = ratio(u, *v);
        growth_max = growth_max.max(r);
        if euclid(u) <= 10.0 {
            near_max = near_max.max(r);
        }
    }
    let mut far_max = 0.0_f64;
    let mut far_arg = 0;
    for (i, (u, v)) in far.iter().zip(&far_values).enumerate() {
        let r = ratio(u, *v);
        if r > far_max {
            far_max = r;
            far_arg = i;
        }
    }
    growth_max = growth_max.max(far_max);
    let growth_ok = growth_max.is_finite() && far_max <= 10.0 * near_max.max(1.0);
    checks.push(PropertyCheck {
        property: "polynomial_growth".into(),
        passed: growth_ok,
        detail: format!(
            "max w/(1+|u|^{p}) = {growth_max:.6e} (near origin {near_max:.3e}, far shell {far_max:.3e})"
        ),
        witness: (!growth_ok).then(|| Witness {
            points: vec![far[far_arg].clone()],
            values: vec![far_values[far_arg]],
        }),
    });

    // quasi-convexity: every sublevel set convex iff w(mid) <= max(w(u), w(v))
    let pool: Vec<(Vec<f64>, f64)> = probes
        .iter()
        .take(200)
        .cloned()
        .zip(values.iter().copied())
        .collect();
    let mut convex_witness = None;
    'outer: for i in 0..pool.len() {
        for j in (i + 1)..pool.len() {
            let (u, wu) = &pool[i];
            let (v, wv) = &pool[j];
            let mid: Vec<f64> = u.iter().zip(v).map(|(a, b)| 0.5 * (a + b)).collect();
            let wm = w.eval(&mid);
            let bound = wu.max(*wv);
            if wm > bound * (1.0 + 1e-12) + 1e-300 {
                convex_witness = Some(Witness {
                    points: vec![u.clone(), v.clone(), mid],
                    values: vec![*wu, *wv, wm],
                });
                break 'outer;
            }
        }
    }
    checks.push(PropertyCheck {
        property: "convex_sublevels".into(),
        passed: convex_witness.is_none(),
        detail: match &convex_witness {
            Some(wit) => format!(
                "w(u)={}, w(v)={} but w((u+v)/2)={}",
                wit.values[0], wit.values[1], wit.values[2]
            ),
            None => "midpoint probes consistent with convex sublevel sets".into(),
        },
        witness: convex_witness,
    });

    let smallest_positive = values
        .iter()
        .copied()
        .filter(|v| *v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let level = 0.5 * smallest_positive;
    let unbounded = if level.is_finite() {
        far.iter()
            .zip(&far_values)
            .find(|(_, v)| **v < level)
            .map(|(u, v)| Witness {
                points: vec![u.clone()],
                values: vec![*v],
            })
    } else {
        None
    };
    checks.push(PropertyCheck {
        property: "bounded_sublevels".into(),
        passed: level.is_finite() && unbounded.is_none(),
        detail: match (&unbounded, level.is_finite()) {
            (_, false) => "no positive loss value to define a small level".into(),
            (Some(wit), _) => format!(
                "{{w < {level:.3e}}} contains the far point with |u| = {:.3e}",
                euclid(&wit.points[0])
            ),
            (None, _) => format!("{{w < {level:.3e}}} excludes every probe with |u| >= 1e3"),
        },
        witness: unbounded,
    });

    Ok(ValidationReport {
        loss: w.id(),
        p,
        probes: probe_count,
        growth_constant: growth_max,
        checks,
    })
}

/// Probe layout for [`check_c1`].
#[derive(Debug, Clone, Copy)]
pub struct C1Grid {
    /// Radii span `[r0, r0 * r_max_factor]` geometrically.
    pub r_max_factor: f64,
    pub r_steps: usize,
    pub u_radii: usize,
    /// Random directions in dimension > 1 (ignored for d = 1).
    pub directions: usize,
    pub seed: u64,
}

impl Default for C1Grid {
    fn default() -> Self {
        Self {
            r_max_factor: 50.0,
            r_steps: 24,
            u_radii: 9,
            directions: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct C1Report {
    pub holds: bool,
    pub worst_margin: f64,
    /// `(r, u, z)` at the worst margin.
    pub witness: Option<(f64, Vec<f64>, Vec<f64>)>,
}

/// Probes `w(u - z) - w(u) >= 0` for `|u| <= r^η`, `|z| ∈ {r, 2r}`, `r >= r0`.
/// `z` is only probed on the two spheres, which is where the infimum sits for
/// radially monotone losses.
pub fn check_c1(w: &LossFunction, eta: f64, r0: f64, grid: &C1Grid) -> Result<C1Report> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(QlaError::Precondition(format!("eta must be in (0, 1), got {eta}")));
    }
    if !(r0 > 1.0) {
        return Err(QlaError::Precondition(format!("r0 must exceed 1, got {r0}")));
    }
    let dim = w.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(grid.seed);
    let dirs = probe_directions(dim, grid.directions, &mut rng);
    let steps = grid.r_steps.max(2);
    let mut worst = f64::INFINITY;
    let mut witness = None;
    let mut holds = true;
    for s in 0..steps {
        let r = r0 * grid.r_max_factor.powf(s as f64 / (steps - 1) as f64);
        let u_max = r.powf(eta);
        for k in 0..grid.u_radii.max(1) {
            let ur = u_max * k as f64 / (grid.u_radii.max(2) - 1) as f64;
            for du in &dirs {
                let u = scaled(du, ur.min(u_max));
                let wu = w.eval(&u);
                for zr in [r, 2.0 * r] {
                    for dz in &dirs {
                        let z = scaled(dz, zr);
                        let diff: Vec<f64> = u.iter().zip(&z).map(|(a, b)| a - b).collect();
                        let margin = w.eval(&diff) - wu;
                        if margin < worst {
                            worst = margin;
                            witness = Some((r, u.clone(), z.clone()));
                        }
                        if margin < -1e-9 * (1.0 + wu.abs()) {
                            holds = false;
                        }
                    }
                }
            }
        }
    }
    Ok(C1Report {
        holds,
        worst_margin: worst,
        witness: if holds { None } else { witness },
    })
}

/// Cap on `M'` relative to `M` in [`check_a5`].
pub const A5_CAP_FACTOR: f64 = 1e3;

/// Smallest probed `M' >= M` on the grid `M · 1.25^k` with
/// `sup_{|u| <= M} w - inf_{|u| >= M'} w <= 0`.
pub fn check_a5(w: &LossFunction, m: f64) -> Result<f64> {
    if !(m > 0.0 && m.is_finite()) {
        return Err(QlaError::Precondition(format!("M must be positive, got {m}")));
    }
    let dim = w.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA5);
    let dirs = probe_directions(dim, 32, &mut rng);
    let mut sup_inner = f64::NEG_INFINITY;
    for k in 0..=400 {
        let r = m * k as f64 / 400.0;
        for d in &dirs {
            sup_inner = sup_inner.max(w.eval(&scaled(d, r)));
        }
    }
    let cap = m * A5_CAP_FACTOR;
    let mut candidate = m;
    while candidate <= cap {
        let mut inf_outer = f64::INFINITY;
        for k in 0..=400 {
            // shell radii from M' out to 1e4 M'
            let r = candidate * 1e4f64.powf(k as f64 / 400.0);
            for d in &dirs {
                inf_outer = inf_outer.min(w.eval(&scaled(d, r)));
            }
        }
        if sup_inner - inf_outer <= 0.0 {
            return Ok(candidate);
        }
        candidate *= 1.25;
    }
    Err(QlaError::A5NotSatisfied { cap })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_examples() {
        assert_eq!(LossFunction::power(2.0, 2).unwrap().eval(&[3.0, 4.0]), 25.0);
        let ind = LossFunction::indicator(vec![1.0, 1.0]).unwrap();
        assert_eq!(ind.eval(&[0.5, -0.5]), 0.0);
        assert_eq!(ind.eval(&[0.5, -1.5]), 1.0);
        assert_eq!(LossFunction::power(1.0, 1).unwrap().eval(&[0.0]), 0.0);
        let ell = LossFunction::indicator_ellipsoid(vec![1.0, 2.0]).unwrap();
        assert_eq!(ell.eval(&[0.5, 1.0]), 0.0);
        assert_eq!(ell.eval(&[0.9, 1.5]), 1.0);
    }

    #[test]
    fn negative_custom_is_rejected() {
        let bad = LossFunction::custom("neg", 1, 1.0, Arc::new(|u| -u[0].abs()));
        assert!(matches!(bad.try_eval(&[1.0]), Err(QlaError::LossClassViolation(_))));
    }

    #[test]
    fn parse_specs() {
        assert_eq!(LossFunction::parse("power:2", 1).unwrap().id(), "power:2");
        assert_eq!(
            LossFunction::parse("indicator:1.0,1.0", 2).unwrap().id(),
            "indicator:1,1"
        );
        assert_eq!(LossFunction::parse("indicator:1", 2).unwrap().dim(), 2);
        assert!(LossFunction::parse("indicator:1,2", 1).is_err());
        assert!(LossFunction::parse("custom:nope", 1).is_err());
        assert!(LossFunction::parse("cube:3", 1).is_err());
    }

    #[test]
    fn validation_of_example_losses() {
        for w in [
            LossFunction::power(2.0, 1).unwrap(),
            LossFunction::power(2.0, 2).unwrap(),
            LossFunction::indicator(vec![1.0]).unwrap(),
        ] {
            let rep = validate_loss_class(&w, 2.0, 1000, 1).unwrap();
            assert!(rep.all_passed(), "{:?}", rep.checks);
        }
        let rep = validate_loss_class(&LossFunction::power(2.0, 1).unwrap(), 2.0, 1000, 1).unwrap();
        assert!(rep.growth_constant <= 1.0);
    }

    #[test]
    fn validation_finds_counterexamples() {
        let zero = LossFunction::named_custom("zero", 1).unwrap();
        let rep = validate_loss_class(&zero, 1.0, 1000, 2).unwrap();
        assert!(!rep.check("not_identically_zero").unwrap().passed);

        let asym = LossFunction::named_custom("asymmetric", 1).unwrap();
        let rep = validate_loss_class(&asym, 1.0, 1000, 2).unwrap();
        let sym = rep.check("symmetry").unwrap();
        assert!(!sym.passed && sym.witness.is_some());

        let trunc = LossFunction::named_custom("truncated", 1).unwrap();
        let rep = validate_loss_class(&trunc, 2.0, 1000, 2).unwrap();
        assert!(!rep.check("convex_sublevels").unwrap().passed);
        assert!(!rep.check("bounded_sublevels").unwrap().passed);

        let quad = LossFunction::power(2.0, 1).unwrap();
        let rep = validate_loss_class(&quad, 1.0, 1000, 2).unwrap();
        assert!(!rep.check("polynomial_growth").unwrap().passed);
    }

    #[test]
    fn asymmetric_witness_at_three() {
        let asym = LossFunction::named_custom("asymmetric", 1).unwrap();
        assert_eq!(asym.eval(&[3.0]), 0.0);
        assert_eq!(asym.eval(&[-3.0]), 3.0);
    }

    #[test]
    fn c1_examples() {
        let grid = C1Grid::default();
        let quad = LossFunction::power(2.0, 1).unwrap();
        let rep = check_c1(&quad, 0.5, 4.0, &grid).unwrap();
        assert!(rep.holds && rep.worst_margin >= 0.0, "{rep:?}");
        let ind = LossFunction::indicator(vec![1.0]).unwrap();
        assert!(check_c1(&ind, 0.5, 4.0, &grid).unwrap().holds);
        let trunc = LossFunction::named_custom("truncated", 1).unwrap();
        let rep = check_c1(&trunc, 0.9, 2.0, &grid).unwrap();
        assert!(!rep.holds && rep.witness.is_some());
        // at r = 2 the band |u| <= √2 reaches within 0.59 of a |z| = 2 shift
        assert!(!check_c1(&quad, 0.5, 2.0, &grid).unwrap().holds);
        assert!(check_c1(&quad, 0.5, 1.0, &grid).is_err());
    }

    #[test]
    fn c1_in_two_dimensions() {
        let grid = C1Grid::default();
        let quad = LossFunction::power(2.0, 2).unwrap();
        assert!(check_c1(&quad, 0.5, 4.0, &grid).unwrap().holds);
    }

    #[test]
    fn a5_examples() {
        let quad = LossFunction::power(2.0, 1).unwrap();
        assert_eq!(check_a5(&quad, 3.0).unwrap(), 3.0);
        let ind = LossFunction::indicator(vec![1.0]).unwrap();
        assert!(check_a5(&ind, 0.5).unwrap() <= 2.0);
        let trunc = LossFunction::named_custom("truncated", 1).unwrap();
        assert!(matches!(check_a5(&trunc, 1.0), Err(QlaError::A5NotSatisfied { .. })));
        // radially increasing bounded losses satisfy the condition with M' = M
        let sat = LossFunction::named_custom("saturating", 1).unwrap();
        assert_eq!(check_a5(&sat, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn power_homogeneity() {
        for p in [1.0f64, 2.0] {
            let w = LossFunction::power(p, 2).unwrap();
            let u = [0.3, -1.7];
            for lambda in [0.5f64, 2.0, 3.7] {
                let lu = [lambda * u[0], lambda * u[1]];
                let expect = lambda.powf(p) * w.eval(&u);
                assert!((w.eval(&lu) - expect).abs() <= 4.0 * f64::EPSILON * expect);
            }
        }
    }
}
