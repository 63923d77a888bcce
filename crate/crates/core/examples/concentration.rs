//! Sup-deviation of SGD risk from the mean-field deterministic curve as d
//! grows, with a log-log slope fit.

use dln::det_equiv::concentration::{concentration_report, log_log_slope};
use dln::det_equiv::{solve_mean_field, InstanceLaw, MeanFieldOptions};
use dln::sgd::run_sgd;
use dln::{ModelConfig, ProblemInstance, RecordGrid, StatRegistry};

fn main() -> dln::Result<()> {
    let config = ModelConfig::squared();
    let registry = StatRegistry::from_names(&["risk"], &config)?;
    let grid = RecordGrid::uniform(5.0, 65)?;
    let opts = MeanFieldOptions { particles: 50_000, ..Default::default() };
    let curve = solve_mean_field(&config, &InstanceLaw::isotropic(0.6, 0.1), &grid, &registry, &opts)?;
    let dims = [50, 200, 800];
    let sweep = dims
        .iter()
        .map(|d| {
            let inst = ProblemInstance::isotropic(*d, 0.6, 0.1)?;
            let runs = (0..10).map(|r| run_sgd(&config, &inst, 5.0, &grid, &registry, 11, r)).collect::<dln::Result<Vec<_>>>()?;
            Ok((*d, runs))
        })
        .collect::<dln::Result<Vec<_>>>()?;
    let rows = concentration_report(&sweep, &curve)?;
    for row in &rows {
        println!("d = {:>4}: median sup deviation {:.4} (q10 {:.4}, q90 {:.4})", row.d, row.median, row.q10, row.q90);
    }
    let x: Vec<f64> = rows.iter().map(|r| r.d as f64).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.median).collect();
    println!("log-log slope {:.2}; Monte-Carlo band of the curve {:.1e}", log_log_slope(&x, &y)?, curve.diagnostics.mc_band.unwrap());
    Ok(())
}
