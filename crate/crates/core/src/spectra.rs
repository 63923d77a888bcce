//! Covariance spectra and signal vectors: identity, power law,
//! Marchenko–Pastur (eigenvalues or full matrix), explicit lists, sparse signal.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::model::Covariance;
use crate::rng;

/// Seeds only matter for the random kinds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SpectrumSpec {
    Identity,
    PowerLaw {
        exponent: f64,
        #[serde(default)]
        seed: u64,
    },
    MarchenkoPastur {
        sigma: f64,
        diagonal_only: bool,
        #[serde(default)]
        seed: u64,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl SpectrumSpec {
    pub fn identity() -> Self {
        SpectrumSpec::Identity
    }

    pub fn generate(&self, d: usize) -> Result<Covariance> {
        match self {
            SpectrumSpec::Identity => Ok(Covariance::Diagonal(vec![1.0; d])),
            SpectrumSpec::PowerLaw { exponent, seed } => {
                Ok(Covariance::Diagonal(sample_power_law(d, *exponent, *seed)?))
            }
            SpectrumSpec::MarchenkoPastur { sigma, diagonal_only, seed } => {
                sample_marchenko_pastur(d, *sigma, *seed, *diagonal_only)
            }
            SpectrumSpec::Explicit { values } => {
                if values.len() != d {
                    return Err(DlnError::Dimension(format!(
                        "explicit spectrum has {} values, d = {d}",
                        values.len()
                    )));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(DlnError::Parameter("explicit spectrum must be finite and >= 0".into()));
                }
                Ok(Covariance::Diagonal(values.clone()))
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, SpectrumSpec::Identity)
    }
}

/// Inverse-CDF map for the density (1−β)λ^{−β} on [0, 1].
#[inline]
pub fn power_law_quantile(u: f64, beta: f64) -> f64 {
    u.powf(1.0 / (1.0 - beta))
}

pub fn power_law_cdf(lambda: f64, beta: f64) -> f64 {
    lambda.clamp(0.0, 1.0).powf(1.0 - beta)
}

pub fn sample_power_law(d: usize, beta: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&beta) {
        return Err(DlnError::Parameter(format!("power-law exponent must lie in [0, 1), got {beta}")));
    }
    let mut r = rng::stream(seed, rng::stream_id(&[0x5350_4543, 1]));
    Ok((0..d).map(|_| power_law_quantile(r.random::<f64>(), beta)).collect())
}

/// K = (1/d) X Xᵀ with X ∈ ℝ^{d×d} i.i.d. N(0, σ²). With `diagonal_only` the
/// eigenvalues (ascending) are returned as a diagonal spectrum.
pub fn sample_marchenko_pastur(d: usize, sigma: f64, seed: u64, diagonal_only: bool) -> Result<Covariance> {
    if d < 2 {
        return Err(DlnError::Parameter("Marchenko-Pastur sampling needs d >= 2".into()));
    }
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(DlnError::Parameter(format!("sigma must be positive, got {sigma}")));
    }
    let mut r = rng::stream(seed, rng::stream_id(&[0x5350_4543, 2]));
    let x = DMatrix::<f64>::from_fn(d, d, |_, _| { let z: f64 = StandardNormal.sample(&mut r); sigma * z });
    let mut k = &x * x.transpose() / d as f64;
    // exact symmetry, so downstream eigensolvers see a symmetric matrix
    for i in 0..d {
        for j in 0..i {
            let m = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = m;
            k[(j, i)] = m;
        }
    }
    if !diagonal_only {
        return Ok(Covariance::Full(k));
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(k).eigenvalues.iter().map(|x| x.max(0.0)).collect();
    ev.sort_by(f64::total_cmp);
    Ok(Covariance::Diagonal(ev))
}

pub fn sparse_signal(d: usize, k_nonzero: usize) -> Result<Vec<f64>> {
    if k_nonzero == 0 || k_nonzero > d {
        return Err(DlnError::Parameter(format!("need 1 <= k <= d, got k={k_nonzero}, d={d}")));
    }
    Ok((0..d).map(|i| if i < k_nonzero { 1.0 } else { 0.0 }).collect())
}

/// Two-sided Kolmogorov–Smirnov distance of a sample against a CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter().enumerate().fold(0.0, |m, (i, &x)| {
        let f = cdf(x);
        m.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs())
    })
}
