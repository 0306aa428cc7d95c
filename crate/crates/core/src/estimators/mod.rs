//! Quasi-maximum likelihood and adaptive Bayes-type estimators.

mod bayes;
mod qmle;

pub use bayes::{
    bayes_adaptive, bayes_objective, minimize_objective, posterior_mean, stage_table, BayesConfig, BayesResult,
    PosteriorTable, StageEstimate,
};
pub use qmle::{qmle, QmleConfig, QmleResult};

use serde::Serialize;

use crate::error::{QlaError, Result};
use crate::models::ParameterBox;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum PriorKind {
    Uniform,
    TruncatedGaussian { center: Vec<f64>, sd: Vec<f64> },
}

/// Prior density on one stage's box, up to a positive constant factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriorDensity {
    kind: PriorKind,
    bx: ParameterBox,
    factor: f64,
}

impl PriorDensity {
    pub fn uniform(bx: ParameterBox) -> Self {
        let factor = 1.0 / bx.volume();
        Self {
            kind: PriorKind::Uniform,
            bx,
            factor,
        }
    }

    pub fn truncated_gaussian(bx: ParameterBox, center: Vec<f64>, sd: Vec<f64>) -> Result<Self> {
        if center.len() != bx.dim() || sd.len() != bx.dim() || sd.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(QlaError::InvalidArgument(format!(
                "truncated Gaussian prior needs {} centers and positive sds",
                bx.dim()
            )));
        }
        Ok(Self {
            kind: PriorKind::TruncatedGaussian { center, sd },
            bx,
            factor: 1.0,
        })
    }

    /// `uniform` or `gaussian:<center>,<sd>` (broadcast over axes).
    pub fn parse(spec: &str, bx: ParameterBox) -> Result<Self> {
        let spec = spec.trim();
        if spec == "uniform" {
            return Ok(Self::uniform(bx));
        }
        if let Some(args) = spec.strip_prefix("gaussian:") {
            let vals: Vec<f64> = args
                .split(',')
                .map(|t| t.trim().parse::<f64>().map_err(|e| QlaError::Parse(format!("prior `{spec}`: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != 2 {
                return Err(QlaError::Parse(format!("prior `{spec}`: expected gaussian:<center>,<sd>")));
            }
            let d = bx.dim();
            return Self::truncated_gaussian(bx, vec![vals[0]; d], vec![vals[1]; d]);
        }
        Err(QlaError::Parse(format!("unknown prior `{spec}` (uniform | gaussian:<center>,<sd>)")))
    }

    /// Same prior multiplied by `c > 0`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.factor *= c;
        out
    }

    pub fn kind(&self) -> &PriorKind {
        &self.kind
    }

    pub fn parameter_box(&self) -> &ParameterBox {
        &self.bx
    }

    pub fn density(&self, theta: &[f64]) -> f64 {
        if !self.bx.contains_closed(theta) {
            return 0.0;
        }
        match &self.kind {
            PriorKind::Uniform => self.factor,
            PriorKind::TruncatedGaussian { center, sd } => {
                let q: f64 = theta
                    .iter()
                    .zip(center.iter().zip(sd))
                    .map(|(t, (c, s))| ((t - c) / s).powi(2))
                    .sum();
                self.factor * (-0.5 * q).exp()
            }
        }
    }
}

/// Tensor-product quadrature nodes with positive weights.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureGrid {
    dim: usize,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    spacing: Vec<f64>,
}

impl QuadratureGrid {
    /// Midpoint rule with `counts[i]` cells along axis `i`; weights sum to the
    /// box volume.
    pub fn midpoint(bx: &ParameterBox, counts: &[usize]) -> Result<Self> {
        let d = bx.dim();
        if counts.len() != d || counts.iter().any(|c| *c == 0) {
            return Err(QlaError::InvalidArgument(format!(
                "need {d} positive node counts, got {counts:?}"
            )));
        }
        let axes: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                let w = bx.width(a) / counts[a] as f64;
                (0..counts[a]).map(|i| bx.lower()[a] + (i as f64 + 0.5) * w).collect()
            })
            .collect();
        let spacing: Vec<f64> = (0..d).map(|a| bx.width(a) / counts[a] as f64).collect();
        let cell: f64 = spacing.iter().product();
        let total: usize = counts.iter().product();
        let mut nodes = Vec::with_capacity(total * d);
        let mut idx = vec![0usize; d];
        for _ in 0..total {
            for a in 0..d {
                nodes.push(axes[a][idx[a]]);
            }
            for a in (0..d).rev() {
                idx[a] += 1;
                if idx[a] < counts[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        Ok(Self {
            dim: d,
            nodes,
            weights: vec![cell; total],
            spacing,
        })
    }

    /// Explicit one-dimensional nodes and weights.
    pub fn from_nodes(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.is_empty() || nodes.len() != weights.len() || weights.iter().any(|w| !(*w > 0.0)) {
            return Err(QlaError::InvalidArgument(
                "nodes and positive weights must have equal non-zero length".into(),
            ));
        }
        let spacing = if nodes.len() > 1 {
            nodes.windows(2).map(|w| (w[1] - w[0]).abs()).fold(f64::INFINITY, f64::min)
        } else {
            weights[0]
        };
        Ok(Self {
            dim: 1,
            nodes,
            weights,
            spacing: vec![spacing],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Node spacing per axis (smallest gap for explicit grids).
    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn midpoint_weights_sum_to_volume() {
        let bx = ParameterBox::new(vec![0.2, -1.0], vec![5.0, 1.0]).unwrap();
        let g = QuadratureGrid::midpoint(&bx, &[7, 5]).unwrap();
        assert_eq!(g.len(), 35);
        let s: f64 = g.weights().iter().sum();
        assert!((s - bx.volume()).abs() < 1e-12);
        assert!((g.node(0)[0] - (0.2 + 4.8 / 14.0)).abs() < 1e-15);
        assert!((g.node(1)[1] - (-1.0 + 3.0 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn priors() {
        let bx = ParameterBox::interval(0.2, 5.0).unwrap();
        let u = PriorDensity::uniform(bx.clone());
        assert!((u.density(&[1.0]) - 1.0 / 4.8).abs() < 1e-15);
        assert_eq!(u.density(&[6.0]), 0.0);
        let g = PriorDensity::parse("gaussian:1,0.5", bx.clone()).unwrap();
        assert_eq!(g.density(&[1.0]), 1.0);
        assert!(g.density(&[5.0]) > 0.0);
        assert!(PriorDensity::parse("beta", bx).is_err());
    }
}
