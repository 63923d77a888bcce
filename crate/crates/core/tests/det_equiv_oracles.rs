//! The two deterministic-equivalent backends checked against each other,
//! against refinement, and against closed-form invariants.

use dln::det_equiv::{solve_contour_pde, solve_mean_field, DeterministicCurve, InstanceLaw, LawGroup, MeanFieldOptions, PdeOptions};
use dln::{ModelConfig, RecordGrid, StatRegistry, StepSchedule};

fn registry(cfg: &ModelConfig) -> StatRegistry {
    StatRegistry::from_names(&["risk", "noise_coeff", "hessian_trace"], cfg).unwrap()
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mean_field(cfg: &ModelConfig, law: &InstanceLaw, grid: &RecordGrid, particles: usize, seed: u64) -> DeterministicCurve {
    let opts = MeanFieldOptions { particles, seed, chunk: particles.min(8192), ..Default::default() };
    solve_mean_field(cfg, law, grid, &registry(cfg), &opts).unwrap()
}

fn pde(cfg: &ModelConfig, law: &InstanceLaw, grid: &RecordGrid, nodes: usize) -> DeterministicCurve {
    let opts = PdeOptions { nodes, dt: 1e-2, ..Default::default() };
    solve_contour_pde(cfg, law, grid, &registry(cfg), &opts).unwrap()
}

#[test]
fn backends_agree_on_a_short_horizon() {
    let cfg = ModelConfig::squared();
    let law = InstanceLaw::isotropic(0.6, 0.1);
    let grid = RecordGrid::uniform(2.0, 65).unwrap();
    let mf = mean_field(&cfg, &law, &grid, 100_000, 1);
    let pd = pde(&cfg, &law, &grid, 100);
    let band = mf.diagnostics.mc_band.unwrap();
    let gap = sup_diff(&mf.risk(), &pd.risk());
    assert!(gap <= (2e-2_f64).max(3.0 * band), "sup gap {gap:e}, band {band:e}");
    // the curves should in fact agree to Monte-Carlo accuracy
    assert!(gap <= 4.0 * band + 1e-4, "sup gap {gap:e}, band {band:e}");
}

#[test]
fn backends_agree_on_a_two_group_law() {
    let cfg = ModelConfig::hadamard();
    let groups = vec![
        LawGroup { weight: 0.25, beta: 1.0, k: 1.0, u0: 0.5, v0: 0.2 },
        LawGroup { weight: 0.75, beta: 0.0, k: 0.4, u0: 0.3, v0: -0.1 },
    ];
    let law = InstanceLaw::new(groups, StepSchedule::Constant(0.3)).unwrap();
    let grid = RecordGrid::uniform(0.5, 17).unwrap();
    let mf = mean_field(&cfg, &law, &grid, 60_000, 2);
    let pd = pde(&cfg, &law, &grid, 64);
    let band = mf.diagnostics.mc_band.unwrap();
    for name in ["risk", "hessian_trace"] {
        let gap = sup_diff(mf.series(name).unwrap(), pd.series(name).unwrap());
        assert!(gap <= (2e-2_f64).max(3.0 * band), "{name}: sup gap {gap:e}, band {band:e}");
    }
}

#[test]
fn pde_grid_refinement_converges() {
    let cfg = ModelConfig::squared();
    let law = InstanceLaw::isotropic(0.6, 0.1);
    let grid = RecordGrid::uniform(1.0, 33).unwrap();
    let coarse = pde(&cfg, &law, &grid, 64);
    let fine = pde(&cfg, &law, &grid, 128);
    let gap = sup_diff(&coarse.risk(), &fine.risk());
    let aliasing = coarse.diagnostics.aliasing.unwrap();
    assert!(aliasing <= dln::det_equiv::contour_pde::ALIASING_BOUND, "aliasing {aliasing:e}");
    assert!(gap <= 1e-6, "N vs 2N gap {gap:e}");
}

#[test]
fn mean_field_particle_refinement() {
    let cfg = ModelConfig::squared();
    let law = InstanceLaw::isotropic(0.6, 0.2);
    let grid = RecordGrid::uniform(5.0, 65).unwrap();
    let a = mean_field(&cfg, &law, &grid, 50_000, 3);
    let b = mean_field(&cfg, &law, &grid, 100_000, 4);
    let band = a.diagnostics.mc_band.unwrap().hypot(b.diagnostics.mc_band.unwrap());
    let gap = sup_diff(&a.risk(), &b.risk());
    assert!(gap <= 4.0 * band, "N_p vs 2N_p gap {gap:e}, band {band:e}");
    assert!(b.diagnostics.mc_band.unwrap() < a.diagnostics.mc_band.unwrap());
}

#[test]
fn noise_coefficient_is_four_s_risk_on_both_backends() {
    for cfg in [ModelConfig::squared(), ModelConfig::hadamard()] {
        let law = InstanceLaw::isotropic(0.6, 0.1);
        let grid = RecordGrid::uniform(0.5, 17).unwrap();
        for curve in [mean_field(&cfg, &law, &grid, 16_384, 5), pde(&cfg, &law, &grid, 64)] {
            let r = curve.risk();
            let i = curve.series("noise_coeff").unwrap();
            for (a, b) in r.iter().zip(i) {
                assert!((b - 4.0 * cfg.loss_scale * a).abs() <= 1e-12 * (1.0 + b.abs()), "{:?}", curve.backend);
            }
        }
    }
}

#[test]
fn zero_risk_is_absorbing_on_both_backends() {
    let cfg = ModelConfig::squared();
    let law = InstanceLaw::new(vec![LawGroup { weight: 1.0, beta: 1.0, k: 1.0, u0: 1.0, v0: 0.0 }], StepSchedule::Constant(0.3)).unwrap();
    // Truncating the Laurent band cuts the moment hierarchy, and the top
    // retained mode then grows at a rate proportional to the band even at
    // rest; round-off reaches about 1e-8 by t = 0.25.
    let grid = RecordGrid::uniform(0.25, 17).unwrap();
    let mf = mean_field(&cfg, &law, &grid, 8192, 6);
    assert!(mf.risk().iter().all(|r| *r == 0.0));
    let pd = pde(&cfg, &law, &grid, 100);
    assert!(pd.risk().iter().all(|r| r.abs() <= 1e-8), "{:?}", pd.risk());
    assert!(pd.risk()[..5].iter().all(|r| r.abs() <= 1e-13), "{:?}", pd.risk());
}

#[test]
fn mean_field_is_seed_deterministic() {
    let cfg = ModelConfig::squared();
    let law = InstanceLaw::isotropic(0.6, 0.1);
    let grid = RecordGrid::uniform(1.0, 9).unwrap();
    let a = mean_field(&cfg, &law, &grid, 20_000, 9);
    let b = mean_field(&cfg, &law, &grid, 20_000, 9);
    assert_eq!(a, b);
}

#[test]
fn pde_rejects_initialization_outside_contour() {
    let cfg = ModelConfig::squared();
    let law = InstanceLaw::isotropic(1.5, 0.1);
    let grid = RecordGrid::uniform(0.5, 5).unwrap();
    let opts = PdeOptions::default();
    assert!(solve_contour_pde(&cfg, &law, &grid, &registry(&cfg), &opts).is_err());
}
