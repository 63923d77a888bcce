//! Terminal risk of SGD, homogenized SGD and stochastic gradient flow on the
//! sparse-signal setting, across stepsizes.

use dln::det_equiv::concentration::quantile;
use dln::experiments::{build_instance, ExperimentConfig, Recipe};
use dln::sde::{run_sde, Dynamics, SdeConfig};
use dln::sgd::run_sgd;
use dln::{RecordGrid, StatRegistry};

fn main() -> dln::Result<()> {
    let cfg = ExperimentConfig::recipe(Recipe::Fig4SdeGap);
    let model = cfg.model_config();
    let registry = StatRegistry::from_names(&["risk"], &model)?;
    let grid = RecordGrid::uniform(cfg.horizon, 2)?;
    let runs = 10;
    println!("{:>6} {:>12} {:>12} {:>12}", "gamma", "|SGD-HSGD|", "|SGD-SGF|", "SGD risk");
    for gamma in [0.1, 0.5, 0.9] {
        let inst = build_instance(&cfg, 100, gamma)?;
        let mut gaps = [Vec::new(), Vec::new()];
        let mut sgd_risk = Vec::new();
        for r in 0..runs {
            let sgd = run_sgd(&model, &inst, cfg.horizon, &grid, &registry, 1, r)?.last("risk").unwrap();
            sgd_risk.push(sgd);
            for (k, dynamics) in [Dynamics::Hsgd, Dynamics::Sgf].into_iter().enumerate() {
                let sde = SdeConfig::new(dynamics, cfg.dt)?;
                let end = run_sde(&model, &inst, &sde, cfg.horizon, &grid, &registry, 2, r)?.last("risk").unwrap();
                gaps[k].push((sgd - end).abs());
            }
        }
        println!(
            "{gamma:>6} {:>12.3e} {:>12.3e} {:>12.3e}",
            quantile(&gaps[0], 0.5),
            quantile(&gaps[1], 0.5),
            quantile(&sgd_risk, 0.5)
        );
    }
    Ok(())
}
