//! Cauchy recovery of the summary matrix and of polynomial statistics
//! against direct evaluation.

mod common;

use common::{preset_strategy, random_instance};
use dln::model::{summary_matrices, Mat3};
use dln::resolvent::{build_contour, eval_s, max_gap, mesh_nodes, recover_b, recover_b_dense, recover_statistic, DEFAULT_M};
use dln::statistic::{eval_statistic, Poly, StatTerm, StatisticSpec};
use dln::{Iterate, ModelConfig, Preset, ProblemInstance};
use proptest::prelude::*;

fn frob_diff(a: &Mat3, b: &Mat3) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn roundtrip_error(cfg: &ModelConfig, inst: &ProblemInstance, x: &Iterate, nodes: usize) -> f64 {
    let contour = build_contour(DEFAULT_M, &inst.beta_star, &inst.cov, nodes).unwrap();
    let field = eval_s(cfg, inst, x, &contour).unwrap();
    let b = recover_b(&field).unwrap();
    frob_diff(&b, &summary_matrices(cfg, inst, x).unwrap().b)
}

#[test]
fn roundtrip_at_default_resolution() {
    for (k, preset) in common::PRESETS.into_iter().enumerate() {
        let (cfg, inst, x) = random_instance(preset, 16, 1.0, 100 + k as u64);
        let err = roundtrip_error(&cfg, &inst, &x, 100);
        assert!(err <= 1e-8, "{preset:?}: {err:e}");
    }
}

#[test]
fn roundtrip_error_decays_geometrically() {
    let (cfg, inst, x) = random_instance(Preset::Hadamard, 16, 1.0, 7);
    let e16 = roundtrip_error(&cfg, &inst, &x, 16);
    let e32 = roundtrip_error(&cfg, &inst, &x, 32);
    assert!(e16 >= 10.0 * e32, "N=16 {e16:e}, N=32 {e32:e}");
}

#[test]
fn grouped_and_dense_quadrature_agree() {
    let (cfg, inst, x) = random_instance(Preset::Squared, 3, 1.0, 3);
    let contour = build_contour(DEFAULT_M, &inst.beta_star, &inst.cov, 48).unwrap();
    let dense = recover_b_dense(&cfg, &inst, &x, &contour).unwrap();
    let grouped = recover_b(&eval_s(&cfg, &inst, &x, &contour).unwrap()).unwrap();
    assert!(frob_diff(&dense, &grouped) <= 1e-10, "{dense:?} vs {grouped:?}");
}

#[test]
fn iterate_outside_contour_is_rejected() {
    let (cfg, inst, mut x) = random_instance(Preset::Hadamard, 4, 1.0, 1);
    x.u[2] = 1.5;
    let contour = build_contour(DEFAULT_M, &inst.beta_star, &inst.cov, 32).unwrap();
    assert!(eval_s(&cfg, &inst, &x, &contour).is_err());
}

#[test]
fn mesh_spacing_is_respected() {
    for r in [0.5, 2.6, 10.0] {
        for spacing in [0.3, 0.05, 0.001] {
            let n = mesh_nodes(r, spacing);
            assert!(max_gap(r, n) <= spacing);
        }
        for n in [8, 100, 1000] {
            assert!(max_gap(r, n) <= 2.0 * std::f64::consts::PI * r / n as f64);
        }
    }
}

/// One term q1(U)q2(V)q4(K) with monomials of degree ≤ 3 and a fixed
/// coefficient matrix.
fn monomial_statistic(j: usize, k: usize, l: usize) -> StatisticSpec {
    let coef = [[0.3, -0.2, 0.1], [0.0, 0.5, -0.4], [0.7, 0.2, 0.9]];
    let t = StatTerm::new(Poly::monomial(j), Poly::monomial(k), Poly::monomial(l));
    StatisticSpec::linear("mono", vec![(t, coef)]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn roundtrip_on_random_instances(preset in preset_strategy(), d in 1usize..24, seed in any::<u64>()) {
        let (cfg, inst, x) = random_instance(preset, d, 1.0, seed);
        prop_assert!(roundtrip_error(&cfg, &inst, &x, 64) <= 1e-8);
    }

    #[test]
    fn low_degree_statistics_recovered(
        preset in preset_strategy(), seed in any::<u64>(), j in 0usize..4, k in 0usize..4, l in 0usize..4,
    ) {
        let (cfg, inst, x) = random_instance(preset, 8, 1.0, seed);
        let spec = monomial_statistic(j, k, l);
        let contour = build_contour(DEFAULT_M, &inst.beta_star, &inst.cov, 64).unwrap();
        let field = eval_s(&cfg, &inst, &x, &contour).unwrap();
        let via_contour = recover_statistic(&spec, &field).unwrap();
        let direct = eval_statistic(&spec, &cfg, &inst, &x).unwrap();
        prop_assert!((via_contour - direct).abs() <= 1e-10 * (1.0 + direct.abs()), "{via_contour} vs {direct}");
    }

    #[test]
    fn preset_statistics_recovered(preset in preset_strategy(), seed in any::<u64>()) {
        let (cfg, inst, x) = random_instance(preset, 12, 1.0, seed);
        let contour = build_contour(DEFAULT_M, &inst.beta_star, &inst.cov, 64).unwrap();
        let field = eval_s(&cfg, &inst, &x, &contour).unwrap();
        for name in dln::statistic::PRESET_NAMES {
            let spec = StatisticSpec::preset(name, &cfg).unwrap();
            let a = recover_statistic(&spec, &field).unwrap();
            let b = eval_statistic(&spec, &cfg, &inst, &x).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()), "{name}: {a} vs {b}");
        }
    }

    /// Every node value is bounded by 2⁴‖W‖²_F/d.
    #[test]
    fn node_values_bounded_by_w(preset in preset_strategy(), d in 1usize..16, seed in any::<u64>()) {
        let (cfg, inst, x) = random_instance(preset, d, 1.0, seed);
        let contour = build_contour(DEFAULT_M, &inst.beta_star, &inst.cov, 16).unwrap();
        let field = eval_s(&cfg, &inst, &x, &contour).unwrap();
        let w = summary_matrices(&cfg, &inst, &x).unwrap().w;
        let w_sq: f64 = w.iter().flatten().map(|v| v * v).sum();
        let bound = 16.0 * w_sq / d as f64;
        let (c3, c4) = (contour.circle(2), contour.circle(3));
        let mut worst = 0.0_f64;
        for n1 in (0..16).step_by(3) {
            for n2 in (0..16).step_by(5) {
                for z3 in c3.iter().step_by(4) {
                    for z4 in c4.iter().step_by(4) {
                        let s = field.at(n1, n2, *z3, *z4);
                        let f: f64 = s.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                        worst = worst.max(f);
                    }
                }
            }
        }
        prop_assert!(worst <= bound, "{worst} > {bound}");
    }
}
