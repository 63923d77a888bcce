//! Power-law and Marchenko-Pastur spectra with their goodness-of-fit checks.

use dln::spectra::{ks_distance, power_law_cdf, sample_marchenko_pastur, sample_power_law};
use dln::Covariance;

fn main() -> dln::Result<()> {
    for exponent in [0.0, 0.3, 0.7] {
        // same seed, so the same uniforms: KS is invariant under the monotone inverse CDF
        let s = sample_power_law(100_000, exponent, 1)?;
        let ks = ks_distance(&s, |x| power_law_cdf(x, exponent));
        println!("power law, exponent {exponent}: KS distance {ks:.4} over {} samples", s.len());
    }
    for sigma in [0.5, 1.0, 2.0] {
        let Covariance::Diagonal(ev) = sample_marchenko_pastur(1000, sigma, 2, true)? else { unreachable!() };
        let mean = ev.iter().sum::<f64>() / ev.len() as f64;
        println!(
            "MP sigma {sigma}: mean eigenvalue {mean:.4} (sigma^2 = {:.4}), range [{:.4}, {:.4}], edge 4 sigma^2 = {:.4}",
            sigma * sigma,
            ev[0],
            ev[ev.len() - 1],
            4.0 * sigma * sigma
        );
    }
    Ok(())
}
