//! Streaming SGD with the √d-scaled update
//! x_{k+1} = x_k − (γ_k/√d)·∂_{r1}f(r_k)·(∇ψ(x_k))ᵀ a_{k+1},
//! one fresh Gaussian sample a ~ N(0, K) per step, clocked by t = k/d.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{DlnError, Result};
use crate::model::{Covariance, Iterate, ModelConfig, ProblemInstance};
use crate::rng::{self, Rng};
use crate::statistic::StatRegistry;
use crate::trajectory::{RecordGrid, Recorder, TrajectoryRecord};

#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub k: u64,
    pub x: Iterate,
}

impl SgdState {
    pub fn new(x: Iterate) -> Self {
        SgdState { k: 0, x }
    }

    pub fn time(&self, d: usize) -> f64 {
        self.k as f64 / d as f64
    }
}

/// Draws a ~ N(0, K) using a precomputed square root of K.
#[derive(Clone, Debug)]
pub enum DataSampler {
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl DataSampler {
    pub fn new(cov: &Covariance) -> Self {
        match cov {
            Covariance::Diagonal(k) => DataSampler::Diagonal(k.iter().map(|x| x.max(0.0).sqrt()).collect()),
            Covariance::Full(_) => DataSampler::Full(cov.sqrt_full()),
        }
    }

    pub fn sample(&self, rng: &mut Rng, out: &mut [f64]) {
        match self {
            DataSampler::Diagonal(sk) => {
                for (o, s) in out.iter_mut().zip(sk) {
                    let xi: f64 = StandardNormal.sample(rng);
                    *o = s * xi;
                }
            }
            DataSampler::Full(root) => {
                let xi = DVector::from_iterator(out.len(), (0..out.len()).map(|_| StandardNormal.sample(rng)));
                out.copy_from_slice((root * xi).as_slice());
            }
        }
    }
}

/// One SGD step with a given data sample `a`. Returns false when the step
/// produced a non-finite gradient scale (divergence).
pub fn sgd_step_with_sample(state: &mut SgdState, config: &ModelConfig, inst: &ProblemInstance, a: &[f64]) -> bool {
    let d = inst.d;
    let sqrt_d = (d as f64).sqrt();
    let gamma = inst.schedule.at(state.time(d));
    let x = &mut state.x;
    let (mut r1, mut r2) = (0.0, 0.0);
    for i in 0..d {
        r1 += config.psi1(x.u[i], x.v[i]) * a[i];
        r2 += inst.beta_star[i] * a[i];
    }
    let df = 2.0 * config.loss_scale * (r1 - r2) / sqrt_d;
    let scale = gamma / sqrt_d * df;
    state.k += 1;
    if !scale.is_finite() {
        return false;
    }
    if scale != 0.0 {
        for i in 0..d {
            let (gu, gv) = config.grad1(x.u[i], x.v[i]);
            x.u[i] -= scale * gu * a[i];
            x.v[i] -= scale * gv * a[i];
        }
    }
    true
}

pub fn sgd_step(state: &mut SgdState, config: &ModelConfig, inst: &ProblemInstance, sampler: &DataSampler, rng: &mut Rng, buf: &mut [f64]) -> bool {
    sampler.sample(rng, buf);
    sgd_step_with_sample(state, config, inst, buf)
}

/// Runs ⌊T·d⌋ steps, recording every registered statistic at x_{⌊t·d⌋}.
/// The run's RNG stream is derived from (seed, run_id).
pub fn run_sgd(
    config: &ModelConfig,
    inst: &ProblemInstance,
    horizon: f64,
    grid: &RecordGrid,
    registry: &StatRegistry,
    seed: u64,
    run_id: u64,
) -> Result<TrajectoryRecord> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(DlnError::Parameter(format!("horizon must be positive, got {horizon}")));
    }
    grid.check_within(horizon)?;
    let d = inst.d;
    let total = step_count(horizon, d);
    let mut rec = Recorder::new(grid, grid.sgd_steps(d), registry, run_id, false);
    let sampler = DataSampler::new(&inst.cov);
    let mut rng = rng::stream(seed, run_id);
    let mut buf = vec![0.0; d];
    let mut state = SgdState::new(inst.x0.clone());
    let mut alive = rec.observe(0, 0.0, config, inst, &state.x);
    while alive && state.k < total {
        if !sgd_step(&mut state, config, inst, &sampler, &mut rng, &mut buf) {
            rec.censor(state.time(d));
            alive = false;
        } else if !rec.done() {
            alive = rec.observe(state.k, state.time(d), config, inst, &state.x);
        }
    }
    Ok(rec.finish().0)
}

/// Total number of SGD steps for a horizon.
pub fn step_count(horizon: f64, d: usize) -> u64 {
    let x = horizon * d as f64;
    (x + 1e-9 * x.max(1.0)).floor() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::risk;
    use crate::schedule::StepSchedule;

    fn one_dim(gamma: f64) -> ProblemInstance {
        ProblemInstance::new(
            vec![1.0],
            Covariance::Diagonal(vec![1.0]),
            Iterate::constant(1, 1.0, 1.0),
            StepSchedule::Constant(gamma),
        )
        .unwrap()
    }

    #[test]
    fn hand_evaluated_step() {
        let inst = one_dim(0.5);
        let mut s = SgdState::new(inst.x0.clone());
        assert!(sgd_step_with_sample(&mut s, &ModelConfig::squared(), &inst, &[1.0]));
        assert_eq!(s.x.u, vec![1.5]);
        assert_eq!(s.x.v, vec![0.5]);
        assert_eq!(s.k, 1);
    }

    #[test]
    fn linear_preset_leaves_v() {
        let inst = ProblemInstance::new(
            vec![1.0, -1.0],
            Covariance::Diagonal(vec![1.0, 1.0]),
            Iterate::new(vec![0.2, 0.3], vec![5.0, 6.0]).unwrap(),
            StepSchedule::Constant(0.3),
        )
        .unwrap();
        let mut s = SgdState::new(inst.x0.clone());
        sgd_step_with_sample(&mut s, &ModelConfig::linear(), &inst, &[0.7, -1.2]);
        assert_eq!(s.x.v, vec![5.0, 6.0]);
        assert_ne!(s.x.u, inst.x0.u);
    }

    #[test]
    fn exact_step_count_and_clock() {
        let cfg = ModelConfig::squared();
        let inst = ProblemInstance::isotropic(4, 0.6, 0.1).unwrap();
        assert_eq!(step_count(1.0, 4), 4);
        let grid = RecordGrid::from_times(vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let reg = StatRegistry::from_names(&["risk"], &cfg).unwrap();
        let rec = run_sgd(&cfg, &inst, 1.0, &grid, &reg, 3, 0).unwrap();
        // replay step by step with the same stream
        let sampler = DataSampler::new(&inst.cov);
        let mut rng = rng::stream(3, 0);
        let mut buf = vec![0.0; 4];
        let mut s = SgdState::new(inst.x0.clone());
        let mut want = vec![reg.eval_all(&cfg, &inst, &s.x).unwrap()[0]];
        for _ in 0..4 {
            sgd_step(&mut s, &cfg, &inst, &sampler, &mut rng, &mut buf);
            want.push(reg.eval_all(&cfg, &inst, &s.x).unwrap()[0]);
        }
        assert!((want[4] - risk(&cfg, &inst, &s.x).unwrap()).abs() < 1e-15);
        assert_eq!(s.k, 4);
        assert_eq!(rec.series("risk").unwrap(), want.as_slice());
    }

    #[test]
    fn zero_stepsize_is_constant() {
        let cfg = ModelConfig::squared();
        let inst = ProblemInstance::isotropic(8, 0.6, 0.0).unwrap();
        let grid = RecordGrid::uniform(2.0, 9).unwrap();
        let reg = StatRegistry::from_names(&["risk", "hessian_trace"], &cfg).unwrap();
        let rec = run_sgd(&cfg, &inst, 2.0, &grid, &reg, 1, 0).unwrap();
        for s in &rec.values {
            assert!(s.iter().all(|v| *v == s[0]));
        }
    }

    #[test]
    fn divergence_censors_with_infinity() {
        let cfg = ModelConfig::squared();
        let inst = ProblemInstance::isotropic(16, 0.6, 50.0).unwrap();
        let grid = RecordGrid::uniform(5.0, 11).unwrap();
        let reg = StatRegistry::from_names(&["risk"], &cfg).unwrap();
        let rec = run_sgd(&cfg, &inst, 5.0, &grid, &reg, 1, 0).unwrap();
        assert!(rec.diverged());
        let r = rec.series("risk").unwrap();
        assert_eq!(r.len(), 11);
        assert_eq!(*r.last().unwrap(), f64::INFINITY);
    }

    #[test]
    fn bad_horizon() {
        let cfg = ModelConfig::squared();
        let inst = ProblemInstance::isotropic(4, 0.6, 0.1).unwrap();
        let grid = RecordGrid::uniform(1.0, 3).unwrap();
        let reg = StatRegistry::from_names(&["risk"], &cfg).unwrap();
        assert!(run_sgd(&cfg, &inst, 0.0, &grid, &reg, 1, 0).is_err());
        assert!(run_sgd(&cfg, &inst, 0.5, &grid, &reg, 1, 0).is_err());
    }
}
