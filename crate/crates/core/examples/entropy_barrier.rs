//! Entropy pipeline on HSGD paths of the isotropic squared model: empirical
//! entropy, coercivity constants, decay rate and the risk envelope.

use dln::experiments::{run_experiment, ExperimentConfig, Recipe, RunLabel, Source};

fn main() -> dln::Result<()> {
    let mut cfg = ExperimentConfig::recipe(Recipe::Fig5Entropy);
    cfg.gamma = vec![0.02, 0.01];
    cfg.runs = 10;
    cfg.record_points = 7;
    let out = run_experiment(&cfg)?;
    for c in &out.constants {
        let k = &c.decay;
        println!("gamma {}: m {:.3}, M {:.3}, mu {:.4}, gamma_bar {:.4}", c.gamma, c.coercivity.m, c.coercivity.m_upper, k.mu, k.gamma_bar);
        println!("  envelope holds on {}/{} runs; certified: {}", c.envelope_runs, c.runs, k.certified());
        let h = out.find(Source::Hsgd, RunLabel::Median, c.d, c.gamma, "entropy").unwrap();
        let r = out.find(Source::Hsgd, RunLabel::Median, c.d, c.gamma, "risk").unwrap();
        let env = out.find(Source::Theory, RunLabel::Run(0), c.d, c.gamma, "envelope").unwrap();
        for j in 0..h.times.len() {
            println!("  t {:>5.1}: entropy {:.5}  risk {:.3e}  envelope {:.3e}", h.times[j], h.values[j], r.values[j], env.values[j]);
        }
    }
    Ok(())
}
