//! Shared builders for the integration tests.
#![allow(dead_code)]

use dln::model::{risk, risk_gradient};
use dln::sde::diffusion_matrix;
use dln::spectra::sample_marchenko_pastur;
use dln::{rng, Covariance, Iterate, ModelConfig, Preset, ProblemInstance, StepSchedule};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const PRESETS: [Preset; 3] = [Preset::Squared, Preset::Hadamard, Preset::Linear];

/// Random diagonal instance with K in [0.1, 2], β* in [-1, 1] and the
/// iterate in [-bound, bound].
pub fn random_instance(preset: Preset, d: usize, bound: f64, seed: u64) -> (ModelConfig, ProblemInstance, Iterate) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
    let beta: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
    let u: Vec<f64> = (0..d).map(|_| rng.random_range(-bound..bound)).collect();
    let v: Vec<f64> = (0..d).map(|_| rng.random_range(-bound..bound)).collect();
    let x = Iterate::new(u, v).unwrap();
    let inst = ProblemInstance::new(beta, Covariance::Diagonal(k), x.clone(), StepSchedule::Constant(0.1)).unwrap();
    (ModelConfig::preset(preset), inst, x)
}

pub fn preset_strategy() -> impl Strategy<Value = Preset> {
    prop::sample::select(PRESETS.to_vec())
}

/// |a − b| / max(|a|, floor).
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(floor)
}

pub fn median(v: &[f64]) -> f64 {
    dln::det_equiv::concentration::quantile(v, 0.5)
}

pub const FD_STEP: f64 = 1e-5;

pub fn fd_risk_gradient(cfg: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> (Vec<f64>, Vec<f64>) {
    let d = x.d();
    let mut gu = vec![0.0; d];
    let mut gv = vec![0.0; d];
    for i in 0..d {
        for (which, out) in [(0, &mut gu), (1, &mut gv)] {
            let mut p = x.clone();
            let mut m = x.clone();
            if which == 0 {
                p.u[i] += FD_STEP;
                m.u[i] -= FD_STEP;
            } else {
                p.v[i] += FD_STEP;
                m.v[i] -= FD_STEP;
            }
            out[i] = (risk(cfg, inst, &p).unwrap() - risk(cfg, inst, &m).unwrap()) / (2.0 * FD_STEP);
        }
    }
    (gu, gv)
}

pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0_f64, |m, x| m.max(x.abs())).max(1e-300);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

pub fn normals(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(r)).collect()
}

/// Hadamard model on a full Marchenko-Pastur covariance with a generic
/// iterate near u = 1, v = 0.
pub fn full_mp_instance(d: usize, seed: u64) -> (ModelConfig, ProblemInstance, Iterate) {
    let cfg = ModelConfig::hadamard();
    let cov = sample_marchenko_pastur(d, 1.0, seed, false).unwrap();
    let mut r = rng::stream(seed, 99);
    let u: Vec<f64> = normals(&mut r, d).iter().map(|z| 1.0 + 0.3 * z).collect();
    let v: Vec<f64> = normals(&mut r, d).iter().map(|z| 0.5 * z).collect();
    let x = Iterate::new(u, v).unwrap();
    let beta: Vec<f64> = (0..d).map(|i| if i % 3 == 0 { 1.0 } else { 0.0 }).collect();
    let inst = ProblemInstance::new(beta, cov, x.clone(), StepSchedule::Constant(0.2)).unwrap();
    (cfg, inst, x)
}

/// Largest entrywise gap, in standard errors, between the Monte-Carlo
/// d·Cov of the per-sample gradient and the closed-form diffusion matrix.
pub fn isserlis_worst_se(d: usize, n: usize, seed: u64) -> f64 {
    let (cfg, inst, x) = full_mp_instance(d, seed);
    let Covariance::Full(k) = &inst.cov else { unreachable!() };
    let chol = k.clone().cholesky().expect("K is positive definite").l();
    let s = cfg.loss_scale;
    let e: Vec<f64> = (0..d).map(|i| cfg.psi1(x.u[i], x.v[i]) - inst.beta_star[i]).collect();
    let jac: Vec<f64> = (0..d).map(|i| cfg.grad1(x.u[i], x.v[i]).0).chain((0..d).map(|i| cfg.grad1(x.u[i], x.v[i]).1)).collect();
    let (gu, gv) = risk_gradient(&cfg, &inst, &x).unwrap();
    let mean: Vec<f64> = gu.iter().chain(&gv).copied().collect();

    let m = 2 * d;
    let mut r = rng::stream(seed + 4, 0);
    let mut sum = DMatrix::<f64>::zeros(m, m);
    let mut sum_sq = DMatrix::<f64>::zeros(m, m);
    let mut g = vec![0.0; m];
    for _ in 0..n {
        let a = &chol * DVector::from_vec(normals(&mut r, d));
        let ea: f64 = e.iter().zip(a.iter()).map(|(p, q)| p * q).sum();
        for j in 0..m {
            g[j] = 2.0 * s / d as f64 * jac[j] * a[j % d] * ea - mean[j];
        }
        for p in 0..m {
            for q in p..m {
                let v = g[p] * g[q] * d as f64;
                sum[(p, q)] += v;
                sum_sq[(p, q)] += v * v;
            }
        }
    }
    let sigma = diffusion_matrix(&cfg, &inst, &x);
    let nf = n as f64;
    let mut worst = 0.0_f64;
    for p in 0..m {
        for q in p..m {
            let est = sum[(p, q)] / nf;
            let se = ((sum_sq[(p, q)] / nf - est * est).max(0.0) / nf).sqrt();
            worst = worst.max((est - sigma[(p, q)]).abs() / se);
        }
    }
    worst
}

