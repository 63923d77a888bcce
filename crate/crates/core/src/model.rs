//! Diagonal-network model family: the inner map ψ, its Jacobian, the summary
//! matrices W and B, risk, noise coefficient and Hessian trace.
//!
//! Conventions: R(x) = (s/d)(ψ−β*)ᵀK(ψ−β*) = s·(B11 − B12 − B21 + B22) and
//! I(x) = 4s·R(x), where s is the loss scale of the configuration.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::schedule::StepSchedule;

pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// ψ = u⊙v
    Hadamard,
    /// ψ = u² − v²
    Squared,
    /// ψ = u, v inert
    Linear,
}

impl std::str::FromStr for Preset {
    type Err = DlnError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hadamard" => Ok(Preset::Hadamard),
            "squared" => Ok(Preset::Squared),
            "linear" => Ok(Preset::Linear),
            other => Err(DlnError::Config(format!("unknown model preset `{other}`"))),
        }
    }
}

/// ψ_i = q11 u² + 2 q12 uv + q22 v² + l1 u + l2 v + c, applied coordinatewise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub q11: f64,
    pub q12: f64,
    pub q22: f64,
    pub l1: f64,
    pub l2: f64,
    pub c: f64,
    pub loss_scale: f64,
}

impl ModelConfig {
    /// Builds a config from a full 2×2 matrix, rejecting asymmetric input.
    pub fn new(q: [[f64; 2]; 2], l: [f64; 2], c: f64, loss_scale: f64) -> Result<Self> {
        if q[0][1] != q[1][0] {
            return Err(DlnError::Parameter("Q must be symmetric".into()));
        }
        let cfg = ModelConfig {
            q11: q[0][0],
            q12: q[0][1],
            q22: q[1][1],
            l1: l[0],
            l2: l[1],
            c,
            loss_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.q11, self.q12, self.q22, self.l1, self.l2, self.c];
        if all.iter().any(|x| !x.is_finite()) {
            return Err(DlnError::Parameter("non-finite model coefficient".into()));
        }
        if !(self.loss_scale.is_finite() && self.loss_scale > 0.0) {
            return Err(DlnError::Parameter(format!(
                "loss scale must be positive, got {}",
                self.loss_scale
            )));
        }
        Ok(())
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Hadamard => Self::hadamard(),
            Preset::Squared => Self::squared(),
            Preset::Linear => Self::linear(),
        }
    }

    pub fn hadamard() -> Self {
        ModelConfig { q11: 0.0, q12: 0.5, q22: 0.0, l1: 0.0, l2: 0.0, c: 0.0, loss_scale: 0.5 }
    }

    pub fn squared() -> Self {
        ModelConfig { q11: 1.0, q12: 0.0, q22: -1.0, l1: 0.0, l2: 0.0, c: 0.0, loss_scale: 0.25 }
    }

    pub fn linear() -> Self {
        ModelConfig { q11: 0.0, q12: 0.0, q22: 0.0, l1: 1.0, l2: 0.0, c: 0.0, loss_scale: 0.5 }
    }

    #[inline(always)]
    pub fn psi1(&self, u: f64, v: f64) -> f64 {
        self.q11 * u * u + 2.0 * self.q12 * u * v + self.q22 * v * v + self.l1 * u + self.l2 * v + self.c
    }

    /// (∂ψ/∂u, ∂ψ/∂v) for one coordinate.
    #[inline(always)]
    pub fn grad1(&self, u: f64, v: f64) -> (f64, f64) {
        (
            2.0 * self.q11 * u + 2.0 * self.q12 * v + self.l1,
            2.0 * self.q12 * u + 2.0 * self.q22 * v + self.l2,
        )
    }

    /// ψ as a polynomial in (u, v): `coef[j][k]` multiplies u^j v^k.
    pub fn psi_poly(&self) -> [[f64; 3]; 3] {
        let mut p = [[0.0; 3]; 3];
        p[0][0] = self.c;
        p[1][0] = self.l1;
        p[0][1] = self.l2;
        p[2][0] = self.q11;
        p[1][1] = 2.0 * self.q12;
        p[0][2] = self.q22;
        p
    }
}

/// Data covariance. Most of the crate requires the diagonal form; the full
/// form feeds the non-diagonal SDE and SGD on correlated data.
#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl Covariance {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(k) => k.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    #[inline]
    pub fn diag_entry(&self, i: usize) -> f64 {
        match self {
            Covariance::Diagonal(k) => k[i],
            Covariance::Full(m) => m[(i, i)],
        }
    }

    pub fn diagonal(&self) -> Option<&[f64]> {
        match self {
            Covariance::Diagonal(k) => Some(k),
            Covariance::Full(_) => None,
        }
    }

    pub fn require_diagonal(&self) -> Result<&[f64]> {
        self.diagonal()
            .ok_or_else(|| DlnError::Parameter("operation requires a diagonal covariance".into()))
    }

    /// K·x
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Covariance::Diagonal(k) => k.iter().zip(x).map(|(a, b)| a * b).collect(),
            Covariance::Full(m) => {
                let v = m * nalgebra::DVector::from_column_slice(x);
                v.as_slice().to_vec()
            }
        }
    }

    /// xᵀ K y
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Covariance::Diagonal(k) => k.iter().zip(x).zip(y).map(|((k, a), b)| k * a * b).sum(),
            Covariance::Full(_) => self.apply(y).iter().zip(x).map(|(a, b)| a * b).sum(),
        }
    }

    pub fn op_norm(&self) -> f64 {
        match self {
            Covariance::Diagonal(k) => k.iter().fold(0.0, |m, x| m.max(x.abs())),
            Covariance::Full(m) => SymmetricEigen::new(m.clone())
                .eigenvalues
                .iter()
                .fold(0.0, |a, x| a.max(x.abs())),
        }
    }

    pub fn mean_diag(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|i| self.diag_entry(i)).sum::<f64>() / d as f64
    }

    /// Symmetric square root (K^{1/2}) as a matrix; eigenvalues clamped at 0.
    pub fn sqrt_full(&self) -> DMatrix<f64> {
        match self {
            Covariance::Diagonal(k) => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(k.len(), k.iter().map(|x| x.max(0.0).sqrt())))
            }
            Covariance::Full(m) => psd_sqrt(m).expect("covariance must be PSD").0,
        }
    }
}

/// Symmetric PSD square root by eigendecomposition. Slightly negative
/// eigenvalues (roundoff) are clamped to zero; anything below `-1e-6·‖A‖`
/// is a model violation. Returns the root and the smallest eigenvalue seen.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let eig = SymmetricEigen::new(a.clone());
    let norm = eig.eigenvalues.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < -1e-6 * norm {
        return Err(DlnError::ModelViolation(format!(
            "covariance eigenvalue {min:e} below -1e-6·‖Σ‖ = {:e}",
            -1e-6 * norm
        )));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let q = &eig.eigenvectors;
    let root = q * DMatrix::from_diagonal(&roots) * q.transpose();
    Ok((root, min))
}

/// Parameters (u, v) of the network, each of length d.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl Iterate {
    pub fn new(u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != v.len() || u.is_empty() {
            return Err(DlnError::Dimension(format!("u has {} entries, v has {}", u.len(), v.len())));
        }
        Ok(Iterate { u, v })
    }

    pub fn constant(d: usize, u0: f64, v0: f64) -> Self {
        Iterate { u: vec![u0; d], v: vec![v0; d] }
    }

    pub fn d(&self) -> usize {
        self.u.len()
    }

    pub fn inf_norm(&self) -> f64 {
        self.u.iter().chain(&self.v).fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub d: usize,
    pub beta_star: Vec<f64>,
    pub cov: Covariance,
    pub x0: Iterate,
    pub schedule: StepSchedule,
    /// Declared bound on the covariance diagonal, used by the audit.
    pub k_bar: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceAudit {
    pub k_max: f64,
    pub k_mean: f64,
    pub k_bar: f64,
    pub within_bound: bool,
    pub trace_ok: bool,
    pub beta_inf: f64,
    pub x0_inf: f64,
}

impl InstanceAudit {
    pub fn ok(&self) -> bool {
        self.within_bound && self.trace_ok
    }
}

impl ProblemInstance {
    pub fn new(beta_star: Vec<f64>, cov: Covariance, x0: Iterate, schedule: StepSchedule) -> Result<Self> {
        let d = beta_star.len();
        if d == 0 {
            return Err(DlnError::Dimension("d must be at least 1".into()));
        }
        if cov.dim() != d || x0.d() != d {
            return Err(DlnError::Dimension(format!(
                "beta has {d} entries, covariance {}, x0 {}",
                cov.dim(),
                x0.d()
            )));
        }
        if beta_star.iter().any(|b| !b.is_finite()) {
            return Err(DlnError::Parameter("beta_star must be finite".into()));
        }
        if (0..d).any(|i| !(cov.diag_entry(i) >= 0.0)) {
            return Err(DlnError::Parameter("covariance diagonal must be nonnegative".into()));
        }
        schedule.validate()?;
        let k_bar = (0..d).map(|i| cov.diag_entry(i)).fold(1.0, f64::max);
        Ok(ProblemInstance { d, beta_star, cov, x0, schedule, k_bar })
    }

    pub fn with_k_bar(mut self, k_bar: f64) -> Self {
        self.k_bar = k_bar;
        self
    }

    /// K = I, β* = 1, u0 = v0 = α: the isotropic configuration.
    pub fn isotropic(d: usize, alpha: f64, gamma: f64) -> Result<Self> {
        Self::new(
            vec![1.0; d],
            Covariance::Diagonal(vec![1.0; d]),
            Iterate::constant(d, alpha, alpha),
            StepSchedule::Constant(gamma),
        )
    }

    pub fn k_diag(&self) -> Option<&[f64]> {
        self.cov.diagonal()
    }

    pub fn beta_inf(&self) -> f64 {
        self.beta_star.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Flags (never rejects) violations of the covariance bounds.
    pub fn audit(&self) -> InstanceAudit {
        let k_max = (0..self.d).map(|i| self.cov.diag_entry(i)).fold(0.0, f64::max);
        let k_mean = self.cov.mean_diag();
        InstanceAudit {
            k_max,
            k_mean,
            k_bar: self.k_bar,
            within_bound: k_max <= self.k_bar,
            trace_ok: (0.1..=10.0).contains(&k_mean),
            beta_inf: self.beta_inf(),
            x0_inf: self.x0.inf_norm(),
        }
    }
}

fn check_len(u: &[f64], v: &[f64]) -> Result<()> {
    if u.len() != v.len() {
        return Err(DlnError::Dimension(format!("u has {} entries, v has {}", u.len(), v.len())));
    }
    Ok(())
}

fn check_iterate(inst: &ProblemInstance, x: &Iterate) -> Result<()> {
    check_len(&x.u, &x.v)?;
    if x.d() != inst.d {
        return Err(DlnError::Dimension(format!("iterate has d={}, instance d={}", x.d(), inst.d)));
    }
    Ok(())
}

pub fn psi(config: &ModelConfig, u: &[f64], v: &[f64]) -> Result<Vec<f64>> {
    check_len(u, v)?;
    Ok(u.iter().zip(v).map(|(&a, &b)| config.psi1(a, b)).collect())
}

/// Diagonals of ∇_uψ and ∇_vψ.
pub fn grad_psi(config: &ModelConfig, u: &[f64], v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(u, v)?;
    Ok(u.iter().zip(v).map(|(&a, &b)| config.grad1(a, b)).unzip())
}

/// Residual ψ(x) − β*.
pub fn residual(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> Vec<f64> {
    x.u.iter()
        .zip(&x.v)
        .zip(&inst.beta_star)
        .map(|((&a, &b), &beta)| config.psi1(a, b) - beta)
        .collect()
}

pub fn risk(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> Result<f64> {
    check_iterate(inst, x)?;
    Ok(risk_unchecked(config, inst, x))
}

pub(crate) fn risk_unchecked(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> f64 {
    let s = config.loss_scale;
    let d = inst.d as f64;
    match &inst.cov {
        Covariance::Diagonal(k) => {
            let mut acc = 0.0;
            for i in 0..inst.d {
                let e = config.psi1(x.u[i], x.v[i]) - inst.beta_star[i];
                acc += k[i] * e * e;
            }
            s * acc / d
        }
        Covariance::Full(_) => {
            let e = residual(config, inst, x);
            s * inst.cov.bilinear(&e, &e) / d
        }
    }
}

pub fn noise_coeff(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> Result<f64> {
    Ok(4.0 * config.loss_scale * risk(config, inst, x)?)
}

/// h_s(B) = s·(B11 − B12 − B21 + B22).
#[inline]
pub fn h_of_b(loss_scale: f64, b: &Mat3) -> f64 {
    loss_scale * (b[0][0] - b[0][1] - b[1][0] + b[1][1])
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryMatrices {
    /// Rows w_i = (ψ_i, β*_i, 1).
    pub w: Vec<[f64; 3]>,
    /// (1/d) Wᵀ K W
    pub b: Mat3,
}

pub fn summary_matrices(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> Result<SummaryMatrices> {
    check_iterate(inst, x)?;
    let w: Vec<[f64; 3]> = (0..inst.d)
        .map(|i| [config.psi1(x.u[i], x.v[i]), inst.beta_star[i], 1.0])
        .collect();
    let d = inst.d as f64;
    let mut b = [[0.0; 3]; 3];
    match &inst.cov {
        Covariance::Diagonal(k) => {
            for (wi, ki) in w.iter().zip(k) {
                for a in 0..3 {
                    for c in a..3 {
                        b[a][c] += ki * wi[a] * wi[c];
                    }
                }
            }
        }
        Covariance::Full(_) => {
            let cols: Vec<Vec<f64>> = (0..3).map(|a| w.iter().map(|r| r[a]).collect()).collect();
            for a in 0..3 {
                let kc = inst.cov.apply(&cols[a]);
                for c in a..3 {
                    b[a][c] = kc.iter().zip(&cols[c]).map(|(x, y)| x * y).sum();
                }
            }
        }
    }
    for a in 0..3 {
        for c in a..3 {
            b[a][c] /= d;
            b[c][a] = b[a][c];
        }
    }
    Ok(SummaryMatrices { w, b })
}

/// ∇R = (2s/d)(∇ψ)ᵀK(ψ − β*), returned as (∂R/∂u, ∂R/∂v).
pub fn risk_gradient(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> Result<(Vec<f64>, Vec<f64>)> {
    check_iterate(inst, x)?;
    let ke = inst.cov.apply(&residual(config, inst, x));
    let scale = 2.0 * config.loss_scale / inst.d as f64;
    Ok((0..inst.d)
        .map(|i| {
            let (gu, gv) = config.grad1(x.u[i], x.v[i]);
            (scale * gu * ke[i], scale * gv * ke[i])
        })
        .unzip())
}

/// tr ∇²R(x) = (2s/d)ΣK_ii[(∂_uψ_i)² + (∂_vψ_i)²] + (4s/d)(q11+q22)ΣK_ii(ψ_i − β*_i).
pub fn hessian_trace(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> Result<f64> {
    check_iterate(inst, x)?;
    let s = config.loss_scale;
    let mut curv = 0.0;
    let mut resid = 0.0;
    for i in 0..inst.d {
        let k = inst.cov.diag_entry(i);
        let (gu, gv) = config.grad1(x.u[i], x.v[i]);
        curv += k * (gu * gu + gv * gv);
        resid += k * (config.psi1(x.u[i], x.v[i]) - inst.beta_star[i]);
    }
    let d = inst.d as f64;
    Ok(2.0 * s * curv / d + 4.0 * s * (config.q11 + config.q22) * resid / d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst1(beta: f64, k: f64, u: f64, v: f64) -> ProblemInstance {
        ProblemInstance::new(
            vec![beta],
            Covariance::Diagonal(vec![k]),
            Iterate::constant(1, u, v),
            StepSchedule::Constant(0.1),
        )
        .unwrap()
    }

    #[test]
    fn psi_examples() {
        assert_eq!(psi(&ModelConfig::squared(), &[1.0], &[1.0]).unwrap(), vec![0.0]);
        assert_eq!(psi(&ModelConfig::hadamard(), &[2.0], &[3.0]).unwrap(), vec![6.0]);
        assert_eq!(psi(&ModelConfig::squared(), &[0.6, 0.6], &[0.6, 0.6]).unwrap(), vec![0.0, 0.0]);
        assert!(psi(&ModelConfig::squared(), &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn grad_psi_examples() {
        assert_eq!(grad_psi(&ModelConfig::squared(), &[1.0], &[1.0]).unwrap(), (vec![2.0], vec![-2.0]));
        assert_eq!(grad_psi(&ModelConfig::hadamard(), &[2.0], &[3.0]).unwrap(), (vec![3.0], vec![2.0]));
        let (gu, gv) = grad_psi(&ModelConfig::linear(), &[0.3, -7.0], &[4.0, 1.0]).unwrap();
        assert_eq!(gu, vec![1.0, 1.0]);
        assert_eq!(gv, vec![0.0, 0.0]);
    }

    #[test]
    fn risk_examples() {
        let sq = ModelConfig::squared();
        let iso = ProblemInstance::isotropic(10, 0.6, 0.1).unwrap();
        assert!((risk(&sq, &iso, &iso.x0).unwrap() - 0.25).abs() < 1e-15);
        assert!((noise_coeff(&sq, &iso, &iso.x0).unwrap() - 0.25).abs() < 1e-15);
        let had = ModelConfig::hadamard();
        let i1 = inst1(1.0, 1.0, 2.0, 0.0);
        assert_eq!(risk(&had, &i1, &i1.x0).unwrap(), 0.5);
        assert_eq!(noise_coeff(&had, &i1, &i1.x0).unwrap(), 1.0);
        let at = inst1(6.0, 1.0, 2.0, 3.0);
        assert_eq!(risk(&had, &at, &at.x0).unwrap(), 0.0);
    }

    #[test]
    fn hessian_trace_examples() {
        // squared preset at u = v = α: (2s/d)·Σ(4α² + 4α²) = 4α² with s = 1/4
        let sq = ModelConfig::squared();
        let iso = ProblemInstance::isotropic(7, 0.6, 0.1).unwrap();
        assert!((hessian_trace(&sq, &iso, &iso.x0).unwrap() - 1.44).abs() < 1e-12);
        let had = ModelConfig::hadamard();
        let x = Iterate::new(vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.5]).unwrap();
        let inst = ProblemInstance::new(
            vec![1.0, 0.0, 2.0],
            Covariance::Diagonal(vec![1.0; 3]),
            x.clone(),
            StepSchedule::Constant(0.1),
        )
        .unwrap();
        let want = x.u.iter().zip(&x.v).map(|(a, b)| a * a + b * b).sum::<f64>() / 3.0;
        assert!((hessian_trace(&had, &inst, &x).unwrap() - want).abs() < 1e-14);
        let zero = ProblemInstance::isotropic(3, 0.0, 0.1).unwrap();
        assert_eq!(hessian_trace(&sq, &zero, &zero.x0).unwrap(), 0.0);
    }

    #[test]
    fn b33_is_mean_trace() {
        let inst = ProblemInstance::new(
            vec![1.0, 2.0, 0.0],
            Covariance::Diagonal(vec![0.5, 1.5, 3.0]),
            Iterate::constant(3, 0.2, 0.1),
            StepSchedule::Constant(0.1),
        )
        .unwrap();
        let sm = summary_matrices(&ModelConfig::squared(), &inst, &inst.x0).unwrap();
        assert_eq!(sm.b[2][2], (0.5 + 1.5 + 3.0) / 3.0);
    }

    #[test]
    fn audit_flags_without_rejecting() {
        let inst = ProblemInstance::new(
            vec![1.0; 2],
            Covariance::Diagonal(vec![50.0, 50.0]),
            Iterate::constant(2, 0.0, 0.0),
            StepSchedule::Constant(0.1),
        )
        .unwrap()
        .with_k_bar(10.0);
        let a = inst.audit();
        assert!(!a.within_bound && !a.trace_ok && !a.ok());
    }

    #[test]
    fn asymmetric_q_rejected() {
        assert!(ModelConfig::new([[1.0, 0.5], [0.4, 0.0]], [0.0, 0.0], 0.0, 0.5).is_err());
        assert!(ModelConfig::new([[1.0, 0.5], [0.5, 0.0]], [0.0, 0.0], 0.0, 0.0).is_err());
    }
}
