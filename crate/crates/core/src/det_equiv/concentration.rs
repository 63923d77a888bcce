//! How far finite-d trajectories sit from the deterministic curve.

use serde::{Deserialize, Serialize};

use super::DeterministicCurve;
use crate::error::{DlnError, Result};
use crate::trajectory::TrajectoryRecord;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationRow {
    pub d: usize,
    pub statistic: String,
    /// sup over the grid of |trajectory − curve|, one entry per run.
    pub per_run: Vec<f64>,
    pub median: f64,
    pub q10: f64,
    pub q90: f64,
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// One row per (d, statistic) with the sup-deviation of every run.
pub fn concentration_report(sweep: &[(usize, Vec<TrajectoryRecord>)], curve: &DeterministicCurve) -> Result<Vec<ConcentrationRow>> {
    let mut rows = Vec::new();
    for (d, runs) in sweep {
        for name in &curve.names {
            let reference = curve.series(name).expect("curve names index its stats");
            let mut per_run = Vec::with_capacity(runs.len());
            for run in runs {
                if run.times.len() != curve.times.len()
                    || run.times.iter().zip(&curve.times).any(|(a, b)| (a - b).abs() > 1e-9 * b.abs().max(1.0))
                {
                    return Err(DlnError::Alignment(format!("run {} at d={d} is on a different time grid", run.run_id)));
                }
                let series = run
                    .series(name)
                    .ok_or_else(|| DlnError::Alignment(format!("run {} at d={d} lacks statistic `{name}`", run.run_id)))?;
                let sup = series.iter().zip(reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                per_run.push(sup);
            }
            let mut sorted = per_run.clone();
            sorted.sort_by(f64::total_cmp);
            rows.push(ConcentrationRow {
                d: *d,
                statistic: name.clone(),
                median: quantile_sorted(&sorted, 0.5),
                q10: quantile_sorted(&sorted, 0.1),
                q90: quantile_sorted(&sorted, 0.9),
                per_run,
            });
        }
    }
    Ok(rows)
}

/// Least-squares slope of log y against log x.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(DlnError::Parameter("slope fit needs at least two paired points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(DlnError::Parameter("slope fit needs positive finite values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(DlnError::Parameter("slope fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::det_equiv::{Backend, SolverDiagnostics};

    fn curve(vals: Vec<f64>) -> DeterministicCurve {
        DeterministicCurve {
            times: vec![0.0, 1.0, 2.0],
            b: vec![[[0.0; 3]; 3]; 3],
            loss_scale: 0.25,
            names: vec!["risk".into()],
            stats: vec![vals],
            backend: Backend::MeanField,
            diagnostics: SolverDiagnostics::default(),
        }
    }

    fn run(id: u64, vals: Vec<f64>) -> TrajectoryRecord {
        TrajectoryRecord { run_id: id, times: vec![0.0, 1.0, 2.0], names: vec!["risk".into()], values: vec![vals], diverged_at: None }
    }

    #[test]
    fn identical_inputs_give_zero() {
        let c = curve(vec![0.25, 0.1, 0.05]);
        let rows = concentration_report(&[(10, vec![run(0, vec![0.25, 0.1, 0.05])])], &c).unwrap();
        assert_eq!(rows[0].median, 0.0);
    }

    #[test]
    fn sup_and_quantiles() {
        let c = curve(vec![0.0, 0.0, 0.0]);
        let runs = (0..5).map(|i| run(i, vec![0.0, i as f64, -0.5])).collect();
        let rows = concentration_report(&[(10, runs)], &c).unwrap();
        assert_eq!(rows[0].per_run, vec![0.5, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(rows[0].median, 2.0);
        assert!((rows[0].q10 - 0.7).abs() < 1e-12);
    }

    #[test]
    fn misaligned_grid() {
        let c = curve(vec![0.0; 3]);
        let mut r = run(0, vec![0.0; 3]);
        r.times[1] = 1.5;
        assert!(matches!(concentration_report(&[(10, vec![r])], &c), Err(DlnError::Alignment(_))));
    }

    #[test]
    fn slope_of_power_law() {
        let x = [100.0, 400.0, 1600.0];
        let y: Vec<f64> = x.iter().map(|d: &f64| 3.0 * d.powf(-0.5)).collect();
        assert!((log_log_slope(&x, &y).unwrap() + 0.5).abs() < 1e-12);
    }
}
