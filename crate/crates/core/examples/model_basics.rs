//! Risk, gradient, summary matrix and preset statistics for one iterate.

use dln::model::{grad_psi, hessian_trace, noise_coeff, risk, risk_gradient, summary_matrices};
use dln::statistic::{eval_statistic, PRESET_NAMES};
use dln::{Iterate, ModelConfig, ProblemInstance, StatisticSpec};

fn main() -> dln::Result<()> {
    let d = 8;
    for config in [ModelConfig::squared(), ModelConfig::hadamard(), ModelConfig::linear()] {
        let inst = ProblemInstance::isotropic(d, 0.6, 0.1)?;
        let x = Iterate::new((0..d).map(|i| 0.6 + 0.05 * i as f64).collect(), vec![0.3; d])?;
        let (gu, gv) = risk_gradient(&config, &inst, &x)?;
        let (pu, pv) = grad_psi(&config, &x.u[..1], &x.v[..1])?;
        println!("loss scale s = {}", config.loss_scale);
        println!("  R = {:.6}, I = 4sR = {:.6}", risk(&config, &inst, &x)?, noise_coeff(&config, &inst, &x)?);
        println!("  dpsi/du, dpsi/dv at coordinate 0: {:.3}, {:.3}", pu[0], pv[0]);
        println!("  grad R at coordinate 0: ({:.5}, {:.5})", gu[0], gv[0]);
        println!("  tr Hess R = {:.5}", hessian_trace(&config, &inst, &x)?);
        let b = summary_matrices(&config, &inst, &x)?.b;
        println!("  B = (1/d) W^T K W:");
        for row in b {
            println!("    [{:>9.5} {:>9.5} {:>9.5}]", row[0], row[1], row[2]);
        }
        for name in PRESET_NAMES {
            let spec = StatisticSpec::preset(name, &config)?;
            println!("  {name:<14} {:.6}", eval_statistic(&spec, &config, &inst, &x)?);
        }
    }
    Ok(())
}
