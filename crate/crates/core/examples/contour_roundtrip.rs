//! Evaluates the resolvent field S on the product contour and recovers B and
//! a few statistics from it by Cauchy quadrature, at several resolutions.

use dln::model::summary_matrices;
use dln::resolvent::{build_contour, eval_s, recover_b, recover_statistic, DEFAULT_M};
use dln::spectra::sample_power_law;
use dln::statistic::eval_statistic;
use dln::{Covariance, Iterate, ModelConfig, ProblemInstance, StatisticSpec, StepSchedule};

fn main() -> dln::Result<()> {
    let d = 16;
    let config = ModelConfig::hadamard();
    let k = sample_power_law(d, 0.5, 3)?;
    let beta: Vec<f64> = (0..d).map(|i| if i < 4 { 1.0 } else { 0.0 }).collect();
    let x = Iterate::new((0..d).map(|i| 0.9 - 0.05 * i as f64).collect(), vec![0.2; d])?;
    let inst = ProblemInstance::new(beta, Covariance::Diagonal(k), x.clone(), StepSchedule::constant(0.1))?;
    let exact = summary_matrices(&config, &inst, &x)?.b;
    let spec = StatisticSpec::preset("hessian_trace", &config)?;
    let direct = eval_statistic(&spec, &config, &inst, &x)?;
    println!("{:>5} {:>12} {:>14}", "N", "|B err|_F", "tr Hess err");
    for n in [8, 16, 32, 64, 100] {
        let contour = build_contour(DEFAULT_M, &inst.beta_star, &inst.cov, n)?;
        let field = eval_s(&config, &inst, &x, &contour)?;
        let b = recover_b(&field)?;
        let err = b.iter().flatten().zip(exact.iter().flatten()).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        let stat = recover_statistic(&spec, &field)?;
        println!("{n:>5} {err:>12.3e} {:>14.3e}", (stat - direct).abs());
    }
    Ok(())
}
