//! Sample statistics, Kolmogorov–Smirnov distances and Gaussian moments of
//! polynomial test functions.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{QlaError, Result};
use crate::linalg::pairwise_sum;

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// Median; NaN for an empty slice.
pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

/// Sample covariance (divisor `n - 1`) of row vectors, row-major `dim x dim`.
pub fn covariance(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let n = rows.len();
    let mut out = vec![f64::NAN; dim * dim];
    if n < 2 {
        return out;
    }
    let mu: Vec<f64> = (0..dim)
        .map(|a| mean(&rows.iter().map(|r| r[a]).collect::<Vec<_>>()))
        .collect();
    for a in 0..dim {
        for b in a..dim {
            let prods: Vec<f64> = rows.iter().map(|r| (r[a] - mu[a]) * (r[b] - mu[b])).collect();
            let c = pairwise_sum(&prods) / (n - 1) as f64;
            out[a * dim + b] = c;
            out[b * dim + a] = c;
        }
    }
    out
}

/// `sup |F_n - F|` for the empirical law of `xs` against a continuous CDF.
pub fn ks_one_sample(xs: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in v.iter().enumerate() {
        let f = cdf(*x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// KS distance to `Normal(0, variance)`.
pub fn ks_normal(xs: &[f64], variance: f64) -> f64 {
    match Normal::new(0.0, variance.sqrt()) {
        Ok(dist) => ks_one_sample(xs, |x| dist.cdf(x)),
        Err(_) => f64::NAN,
    }
}

/// `sup |F_a - F_b|` between two empirical laws.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    if x.is_empty() || y.is_empty() {
        return f64::NAN;
    }
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (na, nb) = (x.len() as f64, y.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < x.len() && j < y.len() {
        let t = x[i].min(y[j]);
        while i < x.len() && x[i] <= t {
            i += 1;
        }
        while j < y.len() && y[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// 1%-level one-sample KS critical value `1.63 / √R`.
pub fn ks_critical(r: usize) -> f64 {
    1.63 / (r as f64).sqrt()
}

/// 1%-level two-sample KS critical value for equal sizes, `1.63 √(2/R)`.
pub fn ks_critical_two_sample(r: usize) -> f64 {
    1.63 * (2.0 / r as f64).sqrt()
}

/// Monomial `c · Π u_i^{e_i}` over 0-based coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Monomial {
    pub coefficient: f64,
    pub powers: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.powers.iter().map(|p| p.1).sum()
    }
}

/// Polynomial test function in the scaled error `u = (u1, u2, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    pub source: String,
    pub terms: Vec<Monomial>,
}

impl Polynomial {
    /// Parses sums of products such as `u1^2`, `1`, `u1^2*u2^2`, `2*u1*u2 + u2^4`.
    /// Coordinates are 1-based in the text.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |msg: &str| QlaError::Parse(format!("moment `{text}`: {msg}"));
        let mut terms = Vec::new();
        for term in text.split('+') {
            let term = term.trim();
            if term.is_empty() {
                return Err(bad("empty term"));
            }
            let mut coefficient = 1.0;
            let mut powers: Vec<(usize, u32)> = Vec::new();
            for factor in term.split('*') {
                let factor = factor.trim();
                if let Some(rest) = factor.strip_prefix('u') {
                    let (idx, pow) = match rest.split_once('^') {
                        Some((i, p)) => (i, p.trim().parse::<u32>().map_err(|_| bad("bad exponent"))?),
                        None => (rest, 1),
                    };
                    let idx: usize = idx.trim().parse().map_err(|_| bad("bad coordinate index"))?;
                    if idx == 0 {
                        return Err(bad("coordinates start at u1"));
                    }
                    match powers.iter_mut().find(|p| p.0 == idx - 1) {
                        Some(p) => p.1 += pow,
                        None => powers.push((idx - 1, pow)),
                    }
                } else {
                    coefficient *= factor.parse::<f64>().map_err(|_| bad(&format!("cannot read factor `{factor}`")))?;
                }
            }
            powers.retain(|p| p.1 > 0);
            powers.sort();
            terms.push(Monomial { coefficient, powers });
        }
        Ok(Self {
            source: text.trim().to_string(),
            terms,
        })
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Largest 0-based coordinate index used, if any.
    pub fn max_index(&self) -> Option<usize> {
        self.terms.iter().flat_map(|t| t.powers.iter().map(|p| p.0)).max()
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coefficient * t.powers.iter().map(|(i, e)| u[*i].powi(*e as i32)).product::<f64>())
            .sum()
    }

    /// `E f(ζ)` for `ζ ~ Normal(0, cov)` (row-major `dim x dim`).
    pub fn gaussian_expectation(&self, cov: &[f64], dim: usize) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let mut idx = Vec::new();
                for (i, e) in &t.powers {
                    idx.extend(std::iter::repeat(*i).take(*e as usize));
                }
                t.coefficient * isserlis(&idx, cov, dim)
            })
            .sum()
    }
}

/// `E Π ζ_{idx[k]}` for a centered Gaussian: the sum over perfect matchings of
/// products of pair covariances.
pub fn isserlis(idx: &[usize], cov: &[f64], dim: usize) -> f64 {
    if idx.is_empty() {
        return 1.0;
    }
    if idx.len() % 2 == 1 {
        return 0.0;
    }
    let first = idx[0];
    let rest = &idx[1..];
    let mut total = 0.0;
    for k in 0..rest.len() {
        let c = cov[first * dim + rest[k]];
        if c == 0.0 {
            continue;
        }
        let remaining: Vec<usize> = rest.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| *v).collect();
        total += c * isserlis(&remaining, cov, dim);
    }
    total
}
