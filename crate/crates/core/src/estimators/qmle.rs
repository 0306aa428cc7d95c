//! Box-constrained maximization of the quasi-likelihood by projected Newton
//! with an Armijo line search, restarted from the box center and a Halton
//! sequence.

use serde::{Deserialize, Serialize};

use crate::error::{QlaError, Result};
use crate::linalg::{cholesky_in_place, cholesky_solve_in_place};
use crate::models::{DiffusionModel, ParameterBox, TrueParameter};
use crate::qla::{contrast, contrast_with_derivatives, ContrastEvaluation, Scaling};
use crate::simulator::ObservationSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QmleConfig {
    pub starts: usize,
    pub max_iterations: usize,
    /// Threshold on the rate-scaled projected gradient norm.
    pub gradient_tolerance: f64,
}

impl Default for QmleConfig {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iterations: 100,
            gradient_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QmleResult {
    pub theta_hat1: Vec<f64>,
    pub theta_hat2: Vec<f64>,
    pub contrast_at_max: f64,
    pub converged: bool,
    pub starts_converged: usize,
    /// `(√n (θ̂₁ - θ₁*), √(nh) (θ̂₂ - θ₂*))` when the truth is supplied.
    pub scaled_error: Option<[Vec<f64>; 2]>,
}

fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let mut inv = 1.0 / base as f64;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * inv;
        i /= base;
        inv /= base as f64;
    }
    out
}

const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

/// Box center followed by Halton points (indices 1, 2, ...) mapped into the
/// middle 90% of each axis.
fn start_points(b1: &ParameterBox, b2: &ParameterBox, count: usize) -> Vec<Vec<f64>> {
    let lower: Vec<f64> = b1.lower().iter().chain(b2.lower()).copied().collect();
    let upper: Vec<f64> = b1.upper().iter().chain(b2.upper()).copied().collect();
    let d = lower.len();
    let mut out = Vec::with_capacity(count);
    let center: Vec<f64> = b1.center().into_iter().chain(b2.center()).collect();
    out.push(center);
    for k in 1..count {
        out.push(
            (0..d)
                .map(|a| {
                    let u = radical_inverse(k, PRIMES[a % PRIMES.len()]);
                    lower[a] + (upper[a] - lower[a]) * (0.05 + 0.9 * u)
                })
                .collect(),
        );
    }
    out
}

struct Problem<'a> {
    model: &'a DiffusionModel,
    obs: &'a ObservationSet,
    d1: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    rates: Vec<f64>,
}

impl Problem<'_> {
    fn split<'t>(&self, theta: &'t [f64]) -> (&'t [f64], &'t [f64]) {
        theta.split_at(self.d1)
    }

    fn value(&self, theta: &[f64]) -> Result<f64> {
        let (t1, t2) = self.split(theta);
        contrast(self.model, self.obs, t1, t2)
    }

    fn derivatives(&self, theta: &[f64]) -> Result<ContrastEvaluation> {
        let (t1, t2) = self.split(theta);
        contrast_with_derivatives(self.model, self.obs, t1, t2)
    }

    fn project(&self, theta: &mut [f64]) {
        for (a, t) in theta.iter_mut().enumerate() {
            *t = t.clamp(self.lower[a], self.upper[a]);
        }
    }

    /// Coordinates held at a bound because the gradient pushes outward.
    fn active(&self, theta: &[f64], grad: &[f64]) -> Vec<bool> {
        (0..theta.len())
            .map(|a| (theta[a] <= self.lower[a] && grad[a] < 0.0) || (theta[a] >= self.upper[a] && grad[a] > 0.0))
            .collect()
    }

    fn scaled_projected_norm(&self, grad: &[f64], active: &[bool]) -> f64 {
        grad.iter()
            .zip(active)
            .zip(&self.rates)
            .filter(|((_, act), _)| !**act)
            .map(|((g, _), r)| (g / r) * (g / r))
            .sum::<f64>()
            .sqrt()
    }
}

fn full_gradient(ev: &ContrastEvaluation) -> Vec<f64> {
    ev.grad1.iter().chain(&ev.grad2).copied().collect()
}

fn full_hessian(ev: &ContrastEvaluation, d1: usize, d2: usize) -> Vec<f64> {
    let d = d1 + d2;
    let mut h = vec![0.0; d * d];
    for j in 0..d1 {
        for k in 0..d1 {
            h[j * d + k] = ev.hess11[j * d1 + k];
        }
        for l in 0..d2 {
            h[j * d + d1 + l] = ev.hess12[j * d2 + l];
            h[(d1 + l) * d + j] = ev.hess12[j * d2 + l];
        }
    }
    for l in 0..d2 {
        for m in 0..d2 {
            h[(d1 + l) * d + d1 + m] = ev.hess22[l * d2 + m];
        }
    }
    h
}

/// Ascent direction on the free coordinates: Newton when `-H` restricted to
/// them is positive definite, otherwise gradient scaled by the diagonal.
fn direction(grad: &[f64], hess: &[f64], active: &[bool]) -> Vec<f64> {
    let d = grad.len();
    let free: Vec<usize> = (0..d).filter(|a| !active[*a]).collect();
    let f = free.len();
    let mut dir = vec![0.0; d];
    if f == 0 {
        return dir;
    }
    let mut neg = vec![0.0; f * f];
    for (i, &a) in free.iter().enumerate() {
        for (j, &b) in free.iter().enumerate() {
            neg[i * f + j] = -hess[a * d + b];
        }
    }
    let mut rhs: Vec<f64> = free.iter().map(|&a| grad[a]).collect();
    if cholesky_in_place(&mut neg, f) {
        cholesky_solve_in_place(&neg, f, &mut rhs);
        for (i, &a) in free.iter().enumerate() {
            dir[a] = rhs[i];
        }
    } else {
        for &a in &free {
            let scale = hess[a * d + a].abs().max(1e-8 * grad[a].abs()).max(f64::MIN_POSITIVE);
            dir[a] = grad[a] / scale;
        }
    }
    dir
}

struct LocalResult {
    theta: Vec<f64>,
    value: f64,
    converged: bool,
}

fn ascend(problem: &Problem<'_>, start: Vec<f64>, cfg: &QmleConfig) -> LocalResult {
    let d = start.len();
    let d2 = d - problem.d1;
    let mut theta = start;
    problem.project(&mut theta);
    let mut ev = match problem.derivatives(&theta) {
        Ok(ev) => ev,
        Err(_) => {
            return LocalResult {
                theta,
                value: f64::NEG_INFINITY,
                converged: false,
            }
        }
    };
    for _ in 0..cfg.max_iterations {
        let grad = full_gradient(&ev);
        let active = problem.active(&theta, &grad);
        if problem.scaled_projected_norm(&grad, &active) < cfg.gradient_tolerance {
            return LocalResult {
                theta,
                value: ev.value,
                converged: true,
            };
        }
        let hess = full_hessian(&ev, problem.d1, d2);
        let dir = direction(&grad, &hess, &active);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut trial: Vec<f64> = theta.iter().zip(&dir).map(|(t, s)| t + alpha * s).collect();
            problem.project(&mut trial);
            let gain: f64 = grad.iter().zip(trial.iter().zip(&theta)).map(|(g, (a, b))| g * (a - b)).sum();
            if let Ok(v) = problem.value(&trial) {
                if v >= ev.value + 1e-4 * gain && v > ev.value - 1e-12 * ev.value.abs() && trial != theta {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        let Some(next) = accepted else {
            // no ascent possible at machine precision
            let converged = problem.scaled_projected_norm(&grad, &active) < cfg.gradient_tolerance * 1e3;
            return LocalResult {
                theta,
                value: ev.value,
                converged,
            };
        };
        theta = next;
        ev = match problem.derivatives(&theta) {
            Ok(ev) => ev,
            Err(_) => {
                return LocalResult {
                    theta,
                    value: f64::NEG_INFINITY,
                    converged: false,
                }
            }
        };
    }
    let grad = full_gradient(&ev);
    let active = problem.active(&theta, &grad);
    LocalResult {
        converged: problem.scaled_projected_norm(&grad, &active) < cfg.gradient_tolerance,
        theta,
        value: ev.value,
    }
}

/// Quasi-maximum likelihood estimate over the closed parameter box.
pub fn qmle(
    model: &DiffusionModel,
    obs: &ObservationSet,
    cfg: &QmleConfig,
    truth: Option<&TrueParameter>,
) -> Result<QmleResult> {
    let (d1, d2) = (model.d1(), model.d2());
    if obs.n() < d1 + d2 {
        return Err(QlaError::Precondition(format!(
            "need at least {} observations, got {}",
            d1 + d2,
            obs.n()
        )));
    }
    let scaling = Scaling::for_obs(obs);
    let (b1, b2) = (model.theta1_box(), model.theta2_box());
    let problem = Problem {
        model,
        obs,
        d1,
        lower: b1.lower().iter().chain(b2.lower()).copied().collect(),
        upper: b1.upper().iter().chain(b2.upper()).copied().collect(),
        rates: std::iter::repeat(scaling.rate1)
            .take(d1)
            .chain(std::iter::repeat(scaling.rate2).take(d2))
            .collect(),
    };
    let mut best: Option<LocalResult> = None;
    let mut best_any: Option<LocalResult> = None;
    let mut converged_count = 0;
    for start in start_points(b1, b2, cfg.starts.max(1)) {
        let local = ascend(&problem, start, cfg);
        if local.converged {
            converged_count += 1;
            if best.as_ref().is_none_or(|b| local.value > b.value) {
                best = Some(LocalResult {
                    theta: local.theta.clone(),
                    value: local.value,
                    converged: true,
                });
            }
        }
        if best_any.as_ref().is_none_or(|b| local.value > b.value) {
            best_any = Some(local);
        }
    }
    let Some(best) = best else {
        let b = best_any.expect("at least one start");
        return Err(QlaError::OptimizationFailure {
            best: b.theta,
            value: b.value,
        });
    };
    let (t1, t2) = best.theta.split_at(d1);
    let scaled_error = truth.map(|t| {
        [
            t1.iter().zip(&t.theta1_star).map(|(a, b)| scaling.rate1 * (a - b)).collect(),
            t2.iter().zip(&t.theta2_star).map(|(a, b)| scaling.rate2 * (a - b)).collect(),
        ]
    });
    Ok(QmleResult {
        theta_hat1: t1.to_vec(),
        theta_hat2: t2.to_vec(),
        contrast_at_max: best.value,
        converged: true,
        starts_converged: converged_count,
        scaled_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ou_model;

    #[test]
    fn halton_points_are_inside() {
        let b = ParameterBox::interval(0.2, 5.0).unwrap();
        let pts = start_points(&b, &b, 8);
        assert_eq!(pts[0], vec![2.6, 2.6]);
        assert!((radical_inverse(1, 2) - 0.5).abs() < 1e-15);
        assert!((radical_inverse(5, 3) - (2.0 / 3.0 + 1.0 / 9.0)).abs() < 1e-15);
        for p in &pts {
            assert!(p.iter().all(|v| *v > 0.2 && *v < 5.0));
        }
    }

    #[test]
    fn constant_path_hits_lower_bound() {
        let obs = ObservationSet::from_scalar(vec![0.0; 50], 0.1).unwrap();
        let r = qmle(&ou_model(), &obs, &QmleConfig::default(), None).unwrap();
        assert_eq!(r.theta_hat1, vec![0.2]);
    }

    #[test]
    fn too_few_observations() {
        let obs = ObservationSet::from_scalar(vec![0.0, 0.1], 0.1).unwrap();
        assert!(matches!(
            qmle(&ou_model(), &obs, &QmleConfig::default(), None),
            Err(QlaError::Precondition(_))
        ));
    }
}
