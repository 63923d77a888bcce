//! Experiment orchestration: recipes for each figure family, run fan-out on a
//! worker pool, aggregation, and CSV/JSON emission.
//!
//! Every run draws from its own stream keyed by (seed, source, d, γ, run),
//! and results are assembled in a fixed order, so the output bytes do not
//! depend on the number of workers.

pub mod config;
pub mod emit;

use rayon::prelude::*;
use serde::Serialize;

use crate::det_equiv::{self, concentration::quantile_sorted, DeterministicCurve, InstanceLaw, MeanFieldOptions, PdeOptions};
use crate::entropy::{self, Coercivity, DecayConstants, EntropyReport};
use crate::error::{DlnError, Result};
use crate::model::{Iterate, ProblemInstance};
use crate::rng;
use crate::schedule::StepSchedule;
use crate::sde::{self, Dynamics, SdeConfig};
use crate::sgd;
use crate::spectra;
use crate::statistic::StatRegistry;
use crate::trajectory::{RecordGrid, TrajectoryRecord};

pub use config::{
    config_from_value, parse_spectrum, set_param, validate_and_echo, EntropyOptions, ExperimentConfig, Format, Init,
    OutputOptions, Recipe, Signal, Source, TheoryBackend, TheoryOptions,
};
pub use emit::{to_csv, to_json, write_output};

/// Which run a series belongs to, or which across-run summary it is.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunLabel {
    Run(u64),
    Median,
    Q10,
    Q90,
}

impl std::fmt::Display for RunLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunLabel::Run(r) => write!(f, "{r}"),
            RunLabel::Median => f.write_str("median"),
            RunLabel::Q10 => f.write_str("q10"),
            RunLabel::Q90 => f.write_str("q90"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Series {
    pub source: Source,
    pub run: RunLabel,
    pub d: usize,
    pub gamma: f64,
    pub statistic: String,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

/// Entropy constants for one stepsize.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EntropyConstants {
    pub d: usize,
    pub gamma: f64,
    pub coercivity: Coercivity,
    pub decay: DecayConstants,
    /// Runs whose risk stays below the envelope at every recorded time.
    pub envelope_runs: usize,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub series: Vec<Series>,
    pub constants: Vec<EntropyConstants>,
}

impl ExperimentOutput {
    pub fn find(&self, source: Source, run: RunLabel, d: usize, gamma: f64, statistic: &str) -> Option<&Series> {
        self.series
            .iter()
            .find(|s| s.source == source && s.run == run && s.d == d && s.gamma == gamma && s.statistic == statistic)
    }
}

/// Builds the problem instance for one (d, γ) cell.
pub fn build_instance(cfg: &ExperimentConfig, d: usize, gamma: f64) -> Result<ProblemInstance> {
    let beta = match cfg.signal {
        Signal::Ones => vec![1.0; d],
        Signal::Sparse { k } => spectra::sparse_signal(d, k)?,
    };
    let cov = cfg.spectrum.generate(d)?;
    ProblemInstance::new(beta, cov, Iterate::constant(d, cfg.init.u0, cfg.init.v0), StepSchedule::Constant(gamma))
}

/// Runs on a dedicated pool of `threads` workers (all cores when None).
pub fn run_experiment_with_threads(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<ExperimentOutput> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(DlnError::Config("threads must be at least 1".into()));
        }
        b = b.num_threads(n);
    }
    let pool = b.build().map_err(|e| DlnError::Config(e.to_string()))?;
    pool.install(|| run_experiment(cfg))
}

/// Runs on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let model = cfg.model_config();
    let registry = StatRegistry::from_names(&cfg.stats, &model)?;
    let grid = RecordGrid::uniform(cfg.horizon, cfg.record_points)?;
    let cells: Vec<(usize, f64)> = cfg.d.iter().flat_map(|d| cfg.gamma.iter().map(move |g| (*d, *g))).collect();
    let instances: Vec<ProblemInstance> =
        cells.iter().map(|(d, g)| build_instance(cfg, *d, *g)).collect::<Result<_>>()?;

    if cfg.recipe == Recipe::Fig5Entropy {
        return run_entropy(cfg, &grid, &registry, &cells, &instances);
    }

    let sim_sources: Vec<Source> = cfg.sources.iter().copied().filter(|s| *s != Source::Theory).collect();
    let jobs: Vec<(usize, Source, u64)> = (0..cells.len())
        .flat_map(|c| sim_sources.iter().flat_map(move |s| (0..cfg.runs as u64).map(move |r| (c, *s, r))))
        .collect();
    let records: Vec<TrajectoryRecord> = jobs
        .par_iter()
        .map(|(c, s, r)| {
            let inst = &instances[*c];
            let seed = run_seed(cfg.seed, *s, cells[*c]);
            match s {
                Source::Sgd => sgd::run_sgd(&model, inst, cfg.horizon, &grid, &registry, seed, *r),
                _ => {
                    let dynamics = match s {
                        Source::Hsgd => Dynamics::Hsgd,
                        Source::Sgf => Dynamics::Sgf,
                        _ => Dynamics::Nondiag,
                    };
                    sde::run_sde(&model, inst, &SdeConfig::new(dynamics, cfg.dt)?, cfg.horizon, &grid, &registry, seed, *r)
                }
            }
        })
        .collect::<Result<_>>()?;

    let theory = if cfg.has(Source::Theory) { solve_theory(cfg, &grid, &registry, &instances)? } else { Vec::new() };

    let mut series = Vec::new();
    let mut k = 0;
    for (c, (d, gamma)) in cells.iter().enumerate() {
        let mut by_source: Vec<(Source, &[TrajectoryRecord])> = Vec::new();
        for s in &sim_sources {
            let runs = &records[k..k + cfg.runs];
            k += cfg.runs;
            by_source.push((*s, runs));
            push_runs(&mut series, *s, *d, *gamma, runs);
        }
        push_gaps(&mut series, *d, *gamma, &by_source, cfg.horizon);
        if let Some(curve) = theory.get(c) {
            for (name, vals) in curve.names.iter().zip(&curve.stats) {
                series.push(Series {
                    source: Source::Theory,
                    run: RunLabel::Run(0),
                    d: *d,
                    gamma: *gamma,
                    statistic: name.clone(),
                    times: curve.times.clone(),
                    values: vals.clone(),
                });
            }
        }
    }
    Ok(ExperimentOutput { config: cfg.clone(), series, constants: Vec::new() })
}

fn run_seed(seed: u64, source: Source, (d, gamma): (usize, f64)) -> u64 {
    rng::stream_id(&[seed, source as u64, d as u64, gamma.to_bits()])
}

fn solve_theory(
    cfg: &ExperimentConfig,
    grid: &RecordGrid,
    registry: &StatRegistry,
    instances: &[ProblemInstance],
) -> Result<Vec<DeterministicCurve>> {
    let model = cfg.model_config();
    let mut cache: Vec<(InstanceLaw, DeterministicCurve)> = Vec::new();
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        let law = InstanceLaw::from_instance(inst)?;
        if let Some((_, c)) = cache.iter().find(|(l, _)| *l == law) {
            out.push(c.clone());
            continue;
        }
        let t = &cfg.theory;
        let curve = match t.backend {
            TheoryBackend::MeanField => {
                let per_group = t.particles.div_ceil(law.groups.len()).max(2).next_multiple_of(2);
                let opts = MeanFieldOptions { particles: per_group, dt: t.dt, seed: cfg.seed, chunk: per_group.min(8192) };
                det_equiv::solve_mean_field(&model, &law, grid, registry, &opts)?
            }
            TheoryBackend::ContourPde => {
                let opts = PdeOptions { m: t.contour_m, nodes: t.contour_n, band: None, dt: t.pde_dt };
                det_equiv::solve_contour_pde(&model, &law, grid, registry, &opts)?
            }
        };
        cache.push((law, curve.clone()));
        out.push(curve);
    }
    Ok(out)
}

fn push_runs(series: &mut Vec<Series>, source: Source, d: usize, gamma: f64, runs: &[TrajectoryRecord]) {
    let Some(first) = runs.first() else { return };
    for name in &first.names {
        let per_run: Vec<&[f64]> = runs.iter().map(|r| r.series(name).expect("runs share names")).collect();
        for (r, vals) in runs.iter().zip(&per_run) {
            series.push(Series {
                source,
                run: RunLabel::Run(r.run_id),
                d,
                gamma,
                statistic: name.clone(),
                times: r.times.clone(),
                values: vals.to_vec(),
            });
        }
        push_summaries(series, source, d, gamma, name, &first.times, &per_run);
    }
}

/// Median and 10–90% band across runs, time by time.
fn push_summaries(series: &mut Vec<Series>, source: Source, d: usize, gamma: f64, name: &str, times: &[f64], per_run: &[&[f64]]) {
    let mut cols: Vec<Vec<f64>> = (0..3).map(|_| Vec::with_capacity(times.len())).collect();
    let mut buf = Vec::with_capacity(per_run.len());
    for j in 0..times.len() {
        buf.clear();
        buf.extend(per_run.iter().map(|v| v[j]));
        buf.sort_by(f64::total_cmp);
        for (col, q) in cols.iter_mut().zip([0.5, 0.1, 0.9]) {
            col.push(quantile_sorted(&buf, q));
        }
    }
    for (label, values) in [RunLabel::Median, RunLabel::Q10, RunLabel::Q90].into_iter().zip(cols) {
        series.push(Series { source, run: label, d, gamma, statistic: name.to_string(), times: times.to_vec(), values });
    }
}

/// |risk_SGD(T) − risk_X(T)| for each diffusion X, pairing runs by index.
fn push_gaps(series: &mut Vec<Series>, d: usize, gamma: f64, by_source: &[(Source, &[TrajectoryRecord])], horizon: f64) {
    let Some((_, sgd_runs)) = by_source.iter().find(|(s, _)| *s == Source::Sgd) else { return };
    for (s, runs) in by_source {
        if matches!(s, Source::Sgd | Source::Nondiag) {
            continue;
        }
        let gaps: Vec<f64> = sgd_runs
            .iter()
            .zip(runs.iter())
            .filter_map(|(a, b)| Some((a.last("risk")? - b.last("risk")?).abs()))
            .collect();
        if gaps.is_empty() {
            continue;
        }
        for (r, g) in gaps.iter().enumerate() {
            series.push(Series {
                source: *s,
                run: RunLabel::Run(r as u64),
                d,
                gamma,
                statistic: "risk_gap".into(),
                times: vec![horizon],
                values: vec![*g],
            });
        }
        let cols: Vec<&[f64]> = gaps.iter().map(std::slice::from_ref).collect();
        push_summaries(series, *s, d, gamma, "risk_gap", &[horizon], &cols);
    }
}

fn run_entropy(
    cfg: &ExperimentConfig,
    grid: &RecordGrid,
    registry: &StatRegistry,
    cells: &[(usize, f64)],
    instances: &[ProblemInstance],
) -> Result<ExperimentOutput> {
    let model = cfg.model_config();
    let sde_cfg = SdeConfig::new(Dynamics::Hsgd, cfg.dt)?;
    let jobs: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| (0..cfg.runs as u64).map(move |r| (c, r))).collect();
    let results: Vec<(TrajectoryRecord, EntropyReport)> = jobs
        .par_iter()
        .map(|(c, r)| {
            let inst = &instances[*c];
            let seed = run_seed(cfg.seed, Source::Hsgd, cells[*c]);
            let run = sde::run_sde_paths(&model, inst, &sde_cfg, cfg.horizon, grid, registry, seed, *r)?;
            let paths = run.paths.expect("paths were requested");
            if paths.len() != grid.len() {
                return Err(DlnError::ModelViolation(format!(
                    "hsgd run {r} at gamma={} diverged at t={:?}",
                    cells[*c].1, run.record.diverged_at
                )));
            }
            let rep = entropy::entropy_series(&model, inst, &grid.times, &paths)?;
            Ok((run.record, rep))
        })
        .collect::<Result<_>>()?;

    let e = &cfg.entropy;
    let (all_records, mut reports): (Vec<TrajectoryRecord>, Vec<EntropyReport>) = results.into_iter().unzip();
    // pooled over every stepsize and run
    let coercivity = entropy::coercivity_estimate(&reports, &e.barrier(), e.lower_quantile, e.upper_quantile)?;
    for r in reports.iter_mut() {
        r.quotients = Vec::new();
    }

    let mut series = Vec::new();
    let mut constants = Vec::new();
    for (c, (d, gamma)) in cells.iter().enumerate() {
        let span = c * cfg.runs..(c + 1) * cfg.runs;
        push_runs(&mut series, Source::Hsgd, *d, *gamma, &all_records[span.clone()]);
        let decay = entropy::decay_constants(*gamma, e.delta, &e.barrier(), *d, coercivity.m, coercivity.m_upper)?;
        let envelope: Vec<f64> = grid.times.iter().map(|t| decay.envelope(*t)).collect();
        let mut envelope_runs = 0;
        let mut extra: Vec<(&str, Vec<Vec<f64>>)> = ["entropy", "max_h", "ratio", "product_residual", "min_sum_sq"]
            .iter()
            .map(|n| (*n, Vec::new()))
            .collect();
        for rep in &reports[span] {
            if rep.risk.iter().zip(&envelope).all(|(r, env)| r <= env) {
                envelope_runs += 1;
            }
            extra[0].1.push(rep.entropy.clone());
            extra[1].1.push(rep.max_h.clone());
            extra[2].1.push(rep.ratio());
            extra[3].1.push(rep.product_residual.clone());
            extra[4].1.push(rep.min_sum_sq.clone());
        }
        for (name, per_run) in &extra {
            for (r, vals) in per_run.iter().enumerate() {
                series.push(Series {
                    source: Source::Hsgd,
                    run: RunLabel::Run(r as u64),
                    d: *d,
                    gamma: *gamma,
                    statistic: name.to_string(),
                    times: grid.times.clone(),
                    values: vals.clone(),
                });
            }
            let cols: Vec<&[f64]> = per_run.iter().map(|v| v.as_slice()).collect();
            push_summaries(&mut series, Source::Hsgd, *d, *gamma, name, &grid.times, &cols);
        }
        let theory = |statistic: &str, times: Vec<f64>, values: Vec<f64>| Series {
            source: Source::Theory,
            run: RunLabel::Run(0),
            d: *d,
            gamma: *gamma,
            statistic: statistic.into(),
            times,
            values,
        };
        series.push(theory("envelope", grid.times.clone(), envelope));
        for (name, v) in [
            ("h_star", e.h_star),
            ("l_star", e.l_star),
            ("m", coercivity.m),
            ("m_upper", coercivity.m_upper),
            ("mu", decay.mu),
        ] {
            series.push(theory(name, vec![0.0], vec![v]));
        }
        constants.push(EntropyConstants {
            d: *d,
            gamma: *gamma,
            coercivity: coercivity.clone(),
            decay,
            envelope_runs,
            runs: cfg.runs,
        });
    }
    Ok(ExperimentOutput { config: cfg.clone(), series, constants })
}
