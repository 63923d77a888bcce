//! Entropy-barrier identities: closed forms on grids and on simulated
//! HSGD paths.

use dln::entropy::{
    coercivity_estimate, coercivity_quotient, decay_constants, entropy_series, f_c, h0, phi, rho, saddle_separation,
    Barrier, EntropyReport, GOLDEN,
};
use dln::sde::{hsgd_step, run_sde_paths, Dynamics, SdeConfig, SdeState};
use dln::{rng, Iterate, ModelConfig, ProblemInstance, RecordGrid, StatRegistry};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

const SQRT5: f64 = 2.236_067_977_499_79;

fn hsgd_report(d: usize, gamma: f64, horizon: f64, dt: f64, run: u64) -> EntropyReport {
    let cfg = ModelConfig::squared();
    let inst = ProblemInstance::isotropic(d, 1.0, gamma).unwrap();
    let grid = RecordGrid::uniform(horizon, 129).unwrap();
    let reg = StatRegistry::from_names(&["risk"], &cfg).unwrap();
    let run = run_sde_paths(&cfg, &inst, &SdeConfig::new(Dynamics::Hsgd, dt).unwrap(), horizon, &grid, &reg, 17, run).unwrap();
    entropy_series(&cfg, &inst, &grid.times, &run.paths.unwrap()).unwrap()
}

#[test]
fn initial_entropy_value() {
    assert!((h0() - 0.245_143_847_559_813_67).abs() < 1e-15);
    assert!((phi(SQRT5, -GOLDEN.ln()) - h0()).abs() < 1e-15);
    assert!((GOLDEN - (1.0 + SQRT5) / 2.0).abs() < 1e-15);
}

#[test]
fn pointwise_control_of_the_sum_of_squares() {
    let two_log2 = 2.0 * 2f64.ln();
    for a in 0..=60 {
        let r = 1.0 + (SQRT5 - 1.0) * a as f64 / 60.0;
        for b in 0..=2000 {
            let z = -10.0 + 20.0 * b as f64 / 2000.0;
            let lhs = r * z.cosh() + z.sinh();
            let rhs = 2.0 * phi(r, z) + r * two_log2;
            assert!(lhs <= rhs * (1.0 + 1e-14), "rho {r}, z {z}: {lhs} > {rhs}");
        }
    }
}

#[test]
fn phi_basic_shape() {
    for r in [1.0, 1.5, SQRT5] {
        assert_eq!(phi(r, 0.0), 0.0);
        // Φ''(0) = ρ by a symmetric second difference
        for e in [1e-2, 1e-3] {
            let second = (phi(r, e) + phi(r, -e)) / (e * e);
            assert!((second - r).abs() <= r * e * e, "rho {r}, e {e}: {second}");
        }
        // convexity on a grid
        let h = 0.01;
        for k in -500..500 {
            let z = k as f64 * h;
            let dd = phi(r, z + h) - 2.0 * phi(r, z) + phi(r, z - h);
            assert!(dd >= 0.0, "rho {r}, z {z}");
        }
        // agrees with the textbook expression away from 0
        for z in [-3.0_f64, -0.5, 0.2, 1.0, 4.0] {
            let naive = r * (z.cosh() - 1.0) + z.sinh() - z;
            assert!((phi(r, z) - naive).abs() <= 1e-14 * naive.abs().max(1.0));
        }
    }
}

#[test]
fn bregman_divergence_shape() {
    for c in [0.1, 0.5, 1.0, GOLDEN] {
        assert_eq!(f_c(c, c), 0.0);
        for x in [0.01, 0.3, 0.9, 2.0, 7.0] {
            assert!(f_c(c, x) >= 0.0);
        }
        let h = 1e-3;
        for k in 1..2000 {
            let x = 2.0 * h + k as f64 * 5e-3;
            assert!(f_c(c, x + h) - 2.0 * f_c(c, x) + f_c(c, x - h) >= 0.0, "c {c}, x {x}");
        }
    }
}

#[test]
fn quotient_limits_and_representation() {
    assert!((coercivity_quotient(SQRT5, 0.0) - 2.0 * SQRT5).abs() < 1e-15);
    assert!((coercivity_quotient(SQRT5, 1e-6) - 2.0 * SQRT5).abs() < 1e-5);
    // (U² − V² − 1)²/h with U² = (ρ+1)/2·e^z, V² = (ρ−1)/2·e^{−z}
    for r in [1.2, 2.0, SQRT5] {
        for z in [-2.0_f64, -0.3, 0.7, 3.0] {
            let u2 = 0.5 * (r + 1.0) * z.exp();
            let v2 = 0.5 * (r - 1.0) * (-z).exp();
            let direct = (u2 - v2 - 1.0).powi(2) / phi(r, z);
            assert!((coercivity_quotient(r, z) - direct).abs() <= 1e-12 * direct);
        }
    }
}

#[test]
fn identities_hold_on_simulated_paths() {
    for run in 0..4 {
        let rep = hsgd_report(300, 0.1, 8.0, 1.0 / 256.0, run);
        let worst = rep.identity_residual.iter().copied().fold(0.0, f64::max);
        assert!(worst <= 1e-12, "identity residual {worst:e}");
        for (j, r) in rep.rho.iter().enumerate() {
            assert!((r - rho(0.1, rep.risk_integral[j])).abs() < 1e-15);
            assert!((1.0..=SQRT5 + 1e-15).contains(r));
        }
        assert!((rep.entropy[0] - h0()).abs() < 1e-14);
    }
}

/// HSGD moves u_i and v_i with one shared driver; with independent drivers
/// the product identity breaks at the O(1) level instead of O(√dt).
#[test]
fn product_identity_detects_independent_drivers() {
    let (d, gamma, dt, horizon) = (200, 0.2, 1.0 / 256.0, 4.0);
    let cfg = ModelConfig::squared();
    let inst = ProblemInstance::isotropic(d, 1.0, gamma).unwrap();
    let steps = (horizon / dt) as usize;
    let times: Vec<f64> = (0..=16).map(|k| k as f64 * horizon / 16.0).collect();
    let every = steps / 16;

    let mut r = rng::stream(4, 0);
    let mut shared = SdeState::new(inst.x0.clone(), dt);
    let mut split = inst.x0.clone();
    let (mut p_shared, mut p_split) = (vec![inst.x0.clone()], vec![inst.x0.clone()]);
    for k in 1..=steps {
        let xi: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        let xi2: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        hsgd_step(&mut shared, &cfg, &inst, &xi).unwrap();
        // same drift and noise size, but v_i gets its own driver
        let risk = split.u.iter().zip(&split.v).map(|(u, v)| (u * u - v * v - 1.0).powi(2)).sum::<f64>() / (4.0 * d as f64);
        let noise = gamma * risk.sqrt() * dt.sqrt();
        for i in 0..d {
            let (u, v) = (split.u[i], split.v[i]);
            let e = u * u - v * v - 1.0;
            split.u[i] += -gamma * 0.5 * e * 2.0 * u * dt + noise * 2.0 * u * xi[i];
            split.v[i] += gamma * 0.5 * e * 2.0 * v * dt - noise * 2.0 * v * xi2[i];
        }
        if k % every == 0 {
            p_shared.push(shared.x.clone());
            p_split.push(Iterate::new(split.u.clone(), split.v.clone()).unwrap());
        }
    }
    let a = entropy_series(&cfg, &inst, &times, &p_shared).unwrap();
    let b = entropy_series(&cfg, &inst, &times, &p_split).unwrap();
    let worst = |rep: &EntropyReport| rep.product_residual.iter().copied().fold(0.0, f64::max);
    assert!(worst(&a) < 0.02, "shared drivers: {:e}", worst(&a));
    assert!(worst(&b) > 10.0 * worst(&a), "independent {:e} vs shared {:e}", worst(&b), worst(&a));
}

#[test]
fn saddle_stays_separated() {
    // At γ = 0.5 and dt = 2⁻⁸ the Euler-Maruyama path dips about 5% below
    // the bound; from dt = 2⁻⁹ on every probed run clears it.
    let dt = 1.0 / 1024.0;
    for (gamma, run) in [(0.1, 0), (0.3, 1), (0.5, 2)] {
        let rep = hsgd_report(200, gamma, 10.0, dt, run);
        let sep = saddle_separation(&rep, 10.0 * dt);
        assert!(sep.holds, "gamma {gamma}: min {} < bound {}", sep.min_sum_sq, sep.bound);
    }
}

#[test]
fn coercivity_brackets_the_ratio() {
    let reps: Vec<EntropyReport> = (0..6).map(|r| hsgd_report(300, 0.05, 10.0, 1.0 / 256.0, r)).collect();
    let barrier = Barrier::default();
    let c = coercivity_estimate(&reps, &barrier, 0.01, 0.99).unwrap();
    assert!(c.m > 0.0 && c.m <= c.m_upper);
    let mut ratios: Vec<f64> = reps
        .iter()
        .flat_map(|rep| {
            let rr = rep.ratio();
            (0..rep.times.len())
                .filter(|j| rep.entropy[*j] >= barrier.h_min && rep.entropy[*j] <= barrier.h_star && rep.max_h[*j] <= barrier.l_star)
                .map(|j| rr[j])
                .collect::<Vec<_>>()
        })
        .collect();
    ratios.sort_by(f64::total_cmp);
    let med = ratios[ratios.len() / 2];
    assert!(c.m <= med && med <= c.m_upper, "m {} median {med} M {}", c.m, c.m_upper);
}

#[test]
fn decay_constants_behave() {
    let b = Barrier::default();
    let small = decay_constants(0.01, 0.5, &b, 1000, 4.0, 4.4).unwrap();
    assert!(small.mu > 0.0 && small.certified());
    assert!((small.envelope(0.0) - 0.25 * 4.4 * b.h_star).abs() < 1e-15);
    assert!(small.envelope(10.0) < small.envelope(1.0));
    // the decay rate grows with γ while γ is small, and the stepsize bound is fixed by the barrier
    let larger = decay_constants(0.02, 0.5, &b, 1000, 4.0, 4.4).unwrap();
    assert!(larger.mu > small.mu);
    assert_eq!(larger.gamma_bar, small.gamma_bar);
    // beyond the admissible range nothing is certified
    let big = decay_constants(0.5, 0.5, &b, 1000, 4.0, 4.4).unwrap();
    assert!(!big.certified());
    // barriers must sit above H0
    let low = Barrier { h_star: 0.9 * h0(), ..b };
    assert!(decay_constants(0.01, 0.5, &low, 1000, 4.0, 4.4).is_err());
}

#[test]
fn rejects_non_isotropic_settings_and_saddle_contact() {
    let cfg = ModelConfig::squared();
    let inst = ProblemInstance::isotropic(4, 1.0, 0.1).unwrap();
    let ok = vec![inst.x0.clone()];
    assert!(entropy_series(&ModelConfig::hadamard(), &inst, &[0.0], &ok).is_err());
    let shifted = ProblemInstance::isotropic(4, 0.5, 0.1).unwrap();
    assert!(entropy_series(&cfg, &shifted, &[0.0], std::slice::from_ref(&shifted.x0)).is_err());
    let mut at_saddle = inst.x0.clone();
    at_saddle.v[1] = 0.0;
    let err = entropy_series(&cfg, &inst, &[0.0, 1.0], &[inst.x0.clone(), at_saddle]).unwrap_err();
    assert!(matches!(err, dln::DlnError::SaddleContact { coordinate: 1, .. }), "{err:?}");
    assert!(entropy_series(&cfg, &inst, &[0.0, 1.0], &ok).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn phi_decomposes_into_bregman_terms(r in 1.0f64..SQRT5, z in -8.0f64..8.0) {
        let (c1, c2) = (0.5 * (r + 1.0), 0.5 * (r - 1.0));
        prop_assume!(c2 > 1e-6);
        let (u2, v2) = (c1 * z.exp(), c2 * (-z).exp());
        let lhs = phi(r, z);
        let rhs = f_c(c1, u2) + f_c(c2, v2);
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
    }

    #[test]
    fn normalizing_factors_multiply_to_the_target(gamma in 0.0f64..2.0, integral in 0.0f64..50.0) {
        let r = rho(gamma, integral);
        let target = (-8.0 * gamma * gamma * integral).exp();
        prop_assert!((0.25 * (r + 1.0) * (r - 1.0) - target).abs() <= 1e-15);
    }
}
