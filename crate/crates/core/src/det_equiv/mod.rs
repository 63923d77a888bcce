//! Deterministic equivalents: the d → ∞ limit curves ℬ(t), ℛ(t), ℐ(t) and
//! registered statistics φ(t), computed by two independent backends.
//!
//! * [`mean_field`]: particles for the coordinatewise HSGD law with ℛ taken
//!   from the ensemble itself (self-consistent).
//! * [`contour_pde`]: the closed evolution of the resolvent transform on the
//!   (z1, z2) contour grid.

pub mod concentration;
pub mod contour_pde;
pub mod mean_field;

use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::model::{h_of_b, Covariance, Mat3, ProblemInstance};
use crate::schedule::StepSchedule;

pub use concentration::{concentration_report, log_log_slope, ConcentrationRow};
pub use contour_pde::{solve_contour_pde, PdeOptions};
pub use mean_field::{solve_mean_field, MeanFieldOptions};

/// One (β*, K, u0, v0) class of coordinates carrying a fraction `weight`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawGroup {
    pub weight: f64,
    pub beta: f64,
    pub k: f64,
    pub u0: f64,
    pub v0: f64,
}

/// An instance described as a law over finitely many coordinate classes.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceLaw {
    pub groups: Vec<LawGroup>,
    pub schedule: StepSchedule,
}

impl InstanceLaw {
    pub fn new(groups: Vec<LawGroup>, schedule: StepSchedule) -> Result<Self> {
        if groups.is_empty() {
            return Err(DlnError::Parameter("law needs at least one group".into()));
        }
        let total: f64 = groups.iter().map(|g| g.weight).sum();
        if groups.iter().any(|g| !(g.weight > 0.0)) || (total - 1.0).abs() > 1e-12 {
            return Err(DlnError::Parameter(format!("group weights must be positive and sum to 1, got {total}")));
        }
        schedule.validate()?;
        Ok(InstanceLaw { groups, schedule })
    }

    /// Groups coordinates of a diagonal instance by exact (β*, K, u0, v0).
    pub fn from_instance(inst: &ProblemInstance) -> Result<Self> {
        let k = match &inst.cov {
            Covariance::Diagonal(k) => k,
            Covariance::Full(_) => {
                return Err(DlnError::Parameter("deterministic equivalents need a diagonal covariance".into()))
            }
        };
        let mut groups: Vec<(LawGroup, usize)> = Vec::new();
        for i in 0..inst.d {
            let key = [inst.beta_star[i], k[i], inst.x0.u[i], inst.x0.v[i]];
            let same = |g: &LawGroup| {
                [g.beta, g.k, g.u0, g.v0].iter().zip(&key).all(|(a, b)| a.to_bits() == b.to_bits())
            };
            match groups.iter_mut().find(|(g, _)| same(g)) {
                Some((_, c)) => *c += 1,
                None => groups.push((LawGroup { weight: 0.0, beta: key[0], k: key[1], u0: key[2], v0: key[3] }, 1)),
            }
        }
        let d = inst.d as f64;
        let groups = groups
            .into_iter()
            .map(|(mut g, c)| {
                g.weight = c as f64 / d;
                g
            })
            .collect::<Vec<_>>();
        // fix rounding so the weights sum to exactly one
        let total: f64 = groups.iter().map(|g| g.weight).sum();
        let mut groups = groups;
        groups[0].weight += 1.0 - total;
        Self::new(groups, inst.schedule.clone())
    }

    pub fn isotropic(alpha: f64, gamma: f64) -> Self {
        InstanceLaw {
            groups: vec![LawGroup { weight: 1.0, beta: 1.0, k: 1.0, u0: alpha, v0: alpha }],
            schedule: StepSchedule::Constant(gamma),
        }
    }

    pub fn u_v_inf(&self) -> f64 {
        self.groups.iter().fold(0.0, |m, g| m.max(g.u0.abs()).max(g.v0.abs()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    MeanField,
    ContourPde,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverDiagnostics {
    pub steps: u64,
    /// sup_t of one Monte-Carlo standard error of ℛ(t) (mean-field only).
    pub mc_band: Option<f64>,
    /// Largest relative Fourier mass in the top quarter of frequencies seen
    /// on either circle (contour PDE only).
    pub aliasing: Option<f64>,
    pub diverged_at: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeterministicCurve {
    pub times: Vec<f64>,
    pub b: Vec<Mat3>,
    pub loss_scale: f64,
    pub names: Vec<String>,
    pub stats: Vec<Vec<f64>>,
    pub backend: Backend,
    pub diagnostics: SolverDiagnostics,
}

impl DeterministicCurve {
    /// ℛ(t) = h_s(ℬ(t)).
    pub fn risk(&self) -> Vec<f64> {
        self.b.iter().map(|b| h_of_b(self.loss_scale, b)).collect()
    }

    /// ℐ(t) = 4s·ℛ(t).
    pub fn noise_coeff(&self) -> Vec<f64> {
        self.risk().into_iter().map(|r| 4.0 * self.loss_scale * r).collect()
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.stats[i].as_slice())
    }
}

/// Times at which both theory backends stop: the record grid itself, with
/// equal substeps of at most `dt_max` between consecutive grid times.
pub(crate) fn substeps(t0: f64, t1: f64, dt_max: f64) -> (u64, f64) {
    let span = t1 - t0;
    if span <= 0.0 {
        return (0, 0.0);
    }
    let n = (span / dt_max - 1e-9).ceil().max(1.0) as u64;
    (n, span / n as f64)
}
