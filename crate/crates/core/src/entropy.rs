//! Entropy barrier for the isotropic squared model (ψ = u² − v², β* = 1,
//! K = I, u0 = v0 = 1).
//!
//! Along the diffusion U_iV_i = e^{−4γ²I_t} with I_t = ∫₀ᵗ R, so each
//! coordinate is described by one real number Z through
//! U² = (ρ+1)/2·e^Z, V² = (ρ−1)/2·e^{−Z}, ρ = √(1 + 4e^{−8γ²I_t}).
//! The entropy density is h = Φ_ρ(Z) = ρ(cosh Z − 1) + sinh Z − Z and the
//! empirical entropy H_t is its coordinate average.

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::model::{Covariance, Iterate, ModelConfig, ProblemInstance};
use crate::schedule::StepSchedule;

/// Golden ratio (√5 + 1)/2, the largest normalizing factor.
pub const GOLDEN: f64 = 1.618_033_988_749_895;

/// Entropy at u0 = v0 = 1: 2 − √5 + log((√5+1)/2).
pub fn h0() -> f64 {
    2.0 - 5f64.sqrt() + GOLDEN.ln()
}

/// f_c(x) = x − c − c·log(x/c), the Bregman divergence of −c·log at c.
#[inline]
pub fn f_c(c: f64, x: f64) -> f64 {
    (x - c) - c * (x / c).ln()
}

/// Φ_ρ(z) = ρ(cosh z − 1) + sinh z − z, written to avoid cancellation near 0.
#[inline]
pub fn phi(rho: f64, z: f64) -> f64 {
    let half = (0.5 * z).sinh();
    let cosh_m1 = 2.0 * half * half;
    let sinh_m_z = if z.abs() < 0.1 {
        let z2 = z * z;
        z * z2 / 6.0 * (1.0 + z2 / 20.0 * (1.0 + z2 / 42.0 * (1.0 + z2 / 72.0)))
    } else {
        z.sinh() - z
    };
    rho * cosh_m1 + sinh_m_z
}

/// ρ(I) = √(1 + 4e^{−8γ²I}).
#[inline]
pub fn rho(gamma: f64, integral: f64) -> f64 {
    (1.0 + 4.0 * (-8.0 * gamma * gamma * integral).exp()).sqrt()
}

/// (ρ sinh z + cosh z − 1)² / Φ_ρ(z): the coordinate quotient written in z.
/// Tends to 2ρ as z → 0.
pub fn coercivity_quotient(rho: f64, z: f64) -> f64 {
    let half = (0.5 * z).sinh();
    let num = rho * z.sinh() + 2.0 * half * half;
    let den = phi(rho, z);
    if den == 0.0 {
        2.0 * rho
    } else {
        num * num / den
    }
}

/// Checks that `(config, inst)` is the isotropic squared setting with unit
/// initialization and returns the constant stepsize.
pub fn isotropic_gamma(config: &ModelConfig, inst: &ProblemInstance) -> Result<f64> {
    if *config != ModelConfig::squared() {
        return Err(DlnError::Config("entropy analysis needs the squared preset with loss scale 1/4".into()));
    }
    let unit_k = matches!(&inst.cov, Covariance::Diagonal(k) if k.iter().all(|x| *x == 1.0));
    if !unit_k || inst.beta_star.iter().any(|b| *b != 1.0) {
        return Err(DlnError::Config("entropy analysis needs K = I and beta* = 1".into()));
    }
    if inst.x0.u.iter().chain(&inst.x0.v).any(|x| *x != 1.0) {
        return Err(DlnError::Config("entropy analysis needs u0 = v0 = 1".into()));
    }
    match inst.schedule {
        StepSchedule::Constant(g) => Ok(g),
        _ => Err(DlnError::Config("entropy analysis needs a constant stepsize".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub gamma: f64,
    pub d: usize,
    pub times: Vec<f64>,
    /// R(X_t) = (1/4d)Σ(U² − V² − 1)².
    pub risk: Vec<f64>,
    /// I_t by the trapezoid rule on `times`.
    pub risk_integral: Vec<f64>,
    pub rho: Vec<f64>,
    /// H_t = (1/d)Σ h_{t,i}.
    pub entropy: Vec<f64>,
    pub max_h: Vec<f64>,
    /// max_i |U²V² − e^{−8γ²I_t}|.
    pub product_residual: Vec<f64>,
    /// Largest relative residual of Φ_ρ(Z) = f_{(ρ+1)/2}(U²) + f_{(ρ−1)/2}(V²)
    /// with V² = (ρ−1)/2·e^{−Z}, together with the normalizing-factor
    /// identity (ρ+1)/2·(ρ−1)/2 = e^{−8γ²I_t}.
    pub identity_residual: Vec<f64>,
    /// min_i (U² + V²).
    pub min_sum_sq: Vec<f64>,
    /// (U² − V² − 1)²/h for every coordinate (NaN where h = 0).
    #[serde(skip)]
    pub quotients: Vec<Vec<f64>>,
}

impl EntropyReport {
    /// 4R/H, which the coercivity constants bracket.
    pub fn ratio(&self) -> Vec<f64> {
        self.risk.iter().zip(&self.entropy).map(|(r, h)| 4.0 * r / h).collect()
    }
}

/// Builds the entropy time series from iterates recorded at `times`.
pub fn entropy_series(config: &ModelConfig, inst: &ProblemInstance, times: &[f64], paths: &[Iterate]) -> Result<EntropyReport> {
    let gamma = isotropic_gamma(config, inst)?;
    if times.len() != paths.len() || times.is_empty() {
        return Err(DlnError::Alignment(format!("{} times but {} recorded iterates", times.len(), paths.len())));
    }
    let d = inst.d;
    let n = times.len();
    let mut rep = EntropyReport {
        gamma,
        d,
        times: times.to_vec(),
        risk: Vec::with_capacity(n),
        risk_integral: Vec::with_capacity(n),
        rho: Vec::with_capacity(n),
        entropy: Vec::with_capacity(n),
        max_h: Vec::with_capacity(n),
        product_residual: Vec::with_capacity(n),
        identity_residual: Vec::with_capacity(n),
        min_sum_sq: Vec::with_capacity(n),
        quotients: Vec::with_capacity(n),
    };
    let g2 = gamma * gamma;
    let mut integral = 0.0;
    for (j, (t, x)) in times.iter().zip(paths).enumerate() {
        if x.d() != d {
            return Err(DlnError::Dimension(format!("iterate at t={t} has dimension {}", x.d())));
        }
        let r = x.u.iter().zip(&x.v).map(|(u, v)| (u * u - v * v - 1.0).powi(2)).sum::<f64>() / (4.0 * d as f64);
        if j > 0 {
            integral += 0.5 * (t - times[j - 1]) * (r + rep.risk[j - 1]);
        }
        let target = (-8.0 * g2 * integral).exp();
        let rh = (1.0 + 4.0 * target).sqrt();
        let (c1, c2) = (0.5 * (rh + 1.0), 0.5 * (rh - 1.0));
        let norm_res = (c1 * c2 - target).abs();
        let mut h_sum = 0.0;
        let mut h_max = f64::NEG_INFINITY;
        let mut prod_res = 0.0_f64;
        let mut id_res = norm_res;
        let mut min_sum = f64::INFINITY;
        let mut q = Vec::with_capacity(d);
        for (i, (u, v)) in x.u.iter().zip(&x.v).enumerate() {
            let (u2, v2) = (u * u, v * v);
            if !(u2 > 0.0 && v2 > 0.0 && u2.is_finite() && v2.is_finite()) {
                return Err(DlnError::SaddleContact { t: *t, coordinate: i });
            }
            let z = (u2 / c1).ln();
            let h = phi(rh, z);
            let v2_implied = c2 * (-z).exp();
            let (f1, f2) = (f_c(c1, u2), f_c(c2, v2_implied));
            id_res = id_res.max((h - f1 - f2).abs() / (f1.abs() + f2.abs()).max(1.0));
            prod_res = prod_res.max((u2 * v2 - target).abs());
            min_sum = min_sum.min(u2 + v2);
            h_sum += h;
            h_max = h_max.max(h);
            let e = u2 - v2 - 1.0;
            q.push(if h > 0.0 { e * e / h } else { f64::NAN });
        }
        rep.risk.push(r);
        rep.risk_integral.push(integral);
        rep.rho.push(rh);
        rep.entropy.push(h_sum / d as f64);
        rep.max_h.push(h_max);
        rep.product_residual.push(prod_res);
        rep.identity_residual.push(id_res);
        rep.min_sum_sq.push(min_sum);
        rep.quotients.push(q);
    }
    Ok(rep)
}

/// Barrier levels on H_t (below `h_star`, above `h_min`) and on max_i h_{t,i}.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Barrier {
    pub h_min: f64,
    pub h_star: f64,
    pub l_star: f64,
}

impl Default for Barrier {
    fn default() -> Self {
        let h = h0();
        Barrier { h_min: 0.1 * h, h_star: 2.0 * h, l_star: 10.0 * h }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coercivity {
    /// m: lower quantile of the pooled quotients.
    pub m: f64,
    /// M: upper quantile.
    pub m_upper: f64,
    pub samples: usize,
    /// Number of (run, time) pairs inside the window.
    pub window: usize,
}

/// Pools the quotients (U² − V² − 1)²/h over every (run, time) inside the
/// barrier window and returns the `lower`/`upper` quantiles.
pub fn coercivity_estimate(reports: &[EntropyReport], barrier: &Barrier, lower: f64, upper: f64) -> Result<Coercivity> {
    if !(0.0..=1.0).contains(&lower) || !(0.0..=1.0).contains(&upper) || lower > upper {
        return Err(DlnError::Parameter(format!("bad quantile pair ({lower}, {upper})")));
    }
    let mut pool = Vec::new();
    let mut window = 0;
    for rep in reports {
        for j in 0..rep.times.len() {
            let h = rep.entropy[j];
            if h >= barrier.h_min && h <= barrier.h_star && rep.max_h[j] <= barrier.l_star {
                window += 1;
                pool.extend(rep.quotients[j].iter().copied().filter(|q| q.is_finite()));
            }
        }
    }
    if pool.is_empty() {
        return Err(DlnError::EmptyWindow(format!(
            "no recorded time has {} <= H <= {} and max h <= {}",
            barrier.h_min, barrier.h_star, barrier.l_star
        )));
    }
    pool.sort_by(f64::total_cmp);
    Ok(Coercivity {
        m: crate::det_equiv::concentration::quantile_sorted(&pool, lower),
        m_upper: crate::det_equiv::concentration::quantile_sorted(&pool, upper),
        samples: pool.len(),
        window,
    })
}

/// The chain that bounds max_i h_{t,i} along the whole trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RemovalChain {
    /// Bound on ∫₀^∞ R: (M/4)H*/μ.
    pub v: f64,
    pub r: f64,
    pub p: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub c_low: f64,
    pub c_high: f64,
    /// 2·sup f_c(x) over c ∈ [c_low, c_high], x ∈ [p²/B, B].
    pub level: f64,
    /// L* > level: the coordinate barrier is never the binding one.
    pub self_consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayConstants {
    pub gamma: f64,
    pub delta: f64,
    pub d: usize,
    pub h_star: f64,
    pub l_star: f64,
    pub m: f64,
    pub m_upper: f64,
    pub theta: f64,
    pub gamma_bar: f64,
    pub lambda: f64,
    pub sigma2: f64,
    pub mu: f64,
    /// γ < γ̄.
    pub admissible: bool,
    /// Present when μ > 0.
    pub chain: Option<RemovalChain>,
}

impl DecayConstants {
    /// (M/4)·H*·e^{−μt}.
    pub fn envelope(&self, t: f64) -> f64 {
        0.25 * self.m_upper * self.h_star * (-self.mu * t).exp()
    }

    /// Decay is certified: admissible stepsize and μ > 0.
    pub fn certified(&self) -> bool {
        self.admissible && self.mu > 0.0
    }
}

const C_GRID: usize = 256;

pub fn decay_constants(gamma: f64, delta: f64, barrier: &Barrier, d: usize, m: f64, m_upper: f64) -> Result<DecayConstants> {
    let h = h0();
    if !(barrier.h_star > h && barrier.l_star > h) {
        return Err(DlnError::Parameter(format!(
            "barriers H* = {}, L* = {} must exceed H0 = {h}",
            barrier.h_star, barrier.l_star
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(DlnError::Parameter(format!("gamma must be nonnegative, got {gamma}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(DlnError::Parameter(format!("delta must lie in (0, 1), got {delta}")));
    }
    if d == 0 || !(m > 0.0 && m <= m_upper && m_upper.is_finite()) {
        return Err(DlnError::Parameter(format!("need d >= 1 and 0 < m <= M, got d={d}, m={m}, M={m_upper}")));
    }
    let hs = barrier.h_star;
    let sqrt5 = 5f64.sqrt();
    let base = 2.0 * hs + 2.0 * sqrt5 * 2f64.ln() + sqrt5;
    let df = d as f64;
    let theta = (2.0 / delta).ln() / (hs / h).ln();
    let gamma_bar = 2.0 / (base + 2.0 * m_upper * m_upper / (df * m) * theta);
    let lambda = gamma * (8.0 - 4.0 * gamma * base) * m / 4.0;
    let sigma2 = 4.0 * gamma * gamma * m_upper * m_upper / df;
    let mu = lambda - 0.5 * theta * sigma2;
    let chain = (mu > 0.0).then(|| removal_chain(gamma, delta, d, hs, barrier.l_star, m_upper, mu));
    Ok(DecayConstants {
        gamma,
        delta,
        d,
        h_star: hs,
        l_star: barrier.l_star,
        m,
        m_upper,
        theta,
        gamma_bar,
        lambda,
        sigma2,
        mu,
        admissible: gamma < gamma_bar,
        chain,
    })
}

fn removal_chain(gamma: f64, delta: f64, d: usize, h_star: f64, l_star: f64, m_upper: f64, mu: f64) -> RemovalChain {
    let eta = 0.5 * delta;
    let v = 0.25 * m_upper * h_star / mu;
    let r = (2.0 * v * (4.0 * d as f64 / eta).ln()).sqrt();
    let p = (-4.0 * gamma * gamma * v).exp();
    let a = (1.0 / (2.0 * p)).asinh();
    let b = 2.0 * (a + 8.0 * gamma * r).cosh();
    let c = p * p / b;
    let c_low = 0.5 * ((1.0 + 4.0 * p * p).sqrt() - 1.0);
    let c_high = GOLDEN;
    // f_c is convex in x, so its sup over [c, b] sits at an endpoint
    let sup = (0..C_GRID)
        .map(|k| c_low + (c_high - c_low) * k as f64 / (C_GRID - 1) as f64)
        .map(|cc| f_c(cc, c).max(f_c(cc, b)))
        .fold(f64::NEG_INFINITY, f64::max);
    let level = 2.0 * sup;
    RemovalChain { v, r, p, a, b, c, c_low, c_high, level, self_consistent: l_star > level }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaddleSeparation {
    /// min over recorded times and coordinates of U² + V².
    pub min_sum_sq: f64,
    /// 2·exp(−4γ²Î∞) with Î∞ the run's final risk integral.
    pub bound: f64,
    pub holds: bool,
}

/// Compares the closest approach to the saddle with its lower bound, allowing
/// an absolute `slack` for time discretization.
pub fn saddle_separation(report: &EntropyReport, slack: f64) -> SaddleSeparation {
    let i_inf = report.risk_integral.last().copied().unwrap_or(0.0);
    let bound = separation_bound(report.gamma, i_inf);
    let min_sum_sq = report.min_sum_sq.iter().copied().fold(f64::INFINITY, f64::min);
    SaddleSeparation { min_sum_sq, bound, holds: min_sum_sq >= bound - slack }
}

/// 2·exp(−4γ²I).
pub fn separation_bound(gamma: f64, integral: f64) -> f64 {
    2.0 * (-4.0 * gamma * gamma * integral).exp()
}
