//! One-pass SGD risk curves on the rescaled clock t = k/d for a few dimensions.

use dln::sgd::run_sgd;
use dln::{ModelConfig, ProblemInstance, RecordGrid, StatRegistry};

fn main() -> dln::Result<()> {
    let config = ModelConfig::squared();
    let registry = StatRegistry::from_names(&["risk", "hessian_trace"], &config)?;
    let grid = RecordGrid::uniform(10.0, 11)?;
    let dims = [100, 400, 1600];
    let runs: Vec<_> = dims
        .iter()
        .map(|d| run_sgd(&config, &ProblemInstance::isotropic(*d, 0.6, 0.1)?, 10.0, &grid, &registry, 7, 0))
        .collect::<dln::Result<_>>()?;
    print!("{:>6}", "t");
    for d in dims {
        print!(" {:>12}", format!("risk d={d}"));
    }
    println!();
    for (j, t) in grid.times.iter().enumerate() {
        print!("{t:>6.1}");
        for r in &runs {
            print!(" {:>12.6}", r.series("risk").unwrap()[j]);
        }
        println!();
    }
    println!("final Hessian trace at d = 1600: {:.4}", runs[2].last("hessian_trace").unwrap());
    Ok(())
}
