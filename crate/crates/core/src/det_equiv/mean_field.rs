//! Self-consistent particle backend.
//!
//! Each group carries N_p particles following the one-coordinate HSGD law
//! du = −γ 2s K (ψ−β) ψ_u dt + γ √(ℐ K) ψ_u dB (same for v), where ℐ = 4sℛ is
//! recomputed from the whole ensemble before every step. Particles come in
//! antithetic pairs (±ξ) and live in fixed-size chunks, each with its own
//! random stream; all reductions are summed in chunk order, so the output
//! does not depend on the thread count.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{substeps, Backend, DeterministicCurve, InstanceLaw, SolverDiagnostics};
use crate::error::{DlnError, Result};
use crate::model::{Mat3, ModelConfig};
use crate::rng::{self, Rng};
use crate::sde::DEFAULT_DT;
use crate::statistic::StatRegistry;
use crate::trajectory::RecordGrid;

#[derive(Clone, Debug, PartialEq)]
pub struct MeanFieldOptions {
    /// Particles per group, rounded up to a multiple of the chunk size.
    pub particles: usize,
    pub dt: f64,
    pub seed: u64,
    pub chunk: usize,
}

impl Default for MeanFieldOptions {
    fn default() -> Self {
        MeanFieldOptions { particles: 200_000, dt: DEFAULT_DT, seed: 0, chunk: 8192 }
    }
}

struct Chunk {
    group: usize,
    u: Vec<f64>,
    v: Vec<f64>,
    rng: Rng,
}

#[derive(Clone)]
struct Moments {
    b: Mat3,
    stats: Vec<Vec<Mat3>>,
}

pub fn solve_mean_field(
    config: &ModelConfig,
    law: &InstanceLaw,
    grid: &RecordGrid,
    registry: &StatRegistry,
    opts: &MeanFieldOptions,
) -> Result<DeterministicCurve> {
    config.validate()?;
    if opts.chunk == 0 || !opts.chunk.is_multiple_of(2) {
        return Err(DlnError::Parameter(format!("chunk size must be positive and even, got {}", opts.chunk)));
    }
    if opts.particles == 0 {
        return Err(DlnError::Parameter("need at least one particle".into()));
    }
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(DlnError::Parameter(format!("dt must be positive, got {}", opts.dt)));
    }
    let s = config.loss_scale;
    let n_chunks = opts.particles.div_ceil(opts.chunk);
    let n_p = n_chunks * opts.chunk;
    let mut chunks: Vec<Chunk> = Vec::with_capacity(n_chunks * law.groups.len());
    for (gi, g) in law.groups.iter().enumerate() {
        for c in 0..n_chunks {
            chunks.push(Chunk {
                group: gi,
                u: vec![g.u0; opts.chunk],
                v: vec![g.v0; opts.chunk],
                rng: rng::stream(opts.seed, rng::stream_id(&[gi as u64, c as u64])),
            });
        }
    }

    let risk_of = |partials: &[f64]| -> f64 {
        let mut per_group = vec![0.0; law.groups.len()];
        for (c, p) in chunks_groups(law.groups.len(), n_chunks).zip(partials) {
            per_group[c] += p;
        }
        law.groups.iter().zip(&per_group).map(|(g, e2)| s * g.weight * g.k * e2 / n_p as f64).sum()
    };

    let mut times = Vec::with_capacity(grid.len());
    let mut bs = Vec::with_capacity(grid.len());
    let mut stats = vec![Vec::with_capacity(grid.len()); registry.len()];
    let mut mc_band = 0.0_f64;
    let mut steps = 0_u64;
    let mut diverged_at = None;

    let partials: Vec<f64> = chunks.par_iter().map(|c| chunk_err_sq(config, law, c)).collect();
    let mut risk = risk_of(&partials);
    let mut t = 0.0;
    for &t_rec in &grid.times {
        if diverged_at.is_none() {
            let (n, h) = substeps(t, t_rec, opts.dt);
            for j in 0..n {
                let t_pre = t + j as f64 * h;
                let gamma = law.schedule.at(t_pre);
                let noise = 4.0 * s * risk;
                let partials: Vec<f64> = chunks
                    .par_iter_mut()
                    .map(|c| {
                        step_chunk(config, law, c, gamma, noise, h);
                        chunk_err_sq(config, law, c)
                    })
                    .collect();
                steps += 1;
                risk = risk_of(&partials);
                if !risk.is_finite() {
                    diverged_at = Some(t_pre + h);
                    break;
                }
            }
            t = t_rec;
        }
        times.push(t_rec);
        if diverged_at.is_some() {
            bs.push([[f64::INFINITY; 3]; 3]);
            for s in stats.iter_mut() {
                s.push(f64::INFINITY);
            }
            continue;
        }
        let parts: Vec<Moments> = chunks.par_iter().map(|c| chunk_moments(config, law, registry, c, n_p)).collect();
        let total = parts.into_iter().reduce(add_moments).expect("at least one chunk");
        // one standard error of ℛ from the antithetic pair means
        let pairs = (n_p / 2) as f64;
        let mut se2 = 0.0;
        let mut idx = 0;
        for g in &law.groups {
            let (sum, sq) = group_pair_sums(&chunks, idx, n_chunks, config, g.beta, g.k);
            idx += n_chunks;
            let mean = sum / pairs;
            let var = (sq / pairs - mean * mean).max(0.0) * pairs / (pairs - 1.0).max(1.0);
            se2 += (s * g.weight).powi(2) * var / pairs;
        }
        mc_band = mc_band.max(se2.sqrt());
        bs.push(total.b);
        for (i, spec) in registry.specs().iter().enumerate() {
            stats[i].push(spec.apply_outer(&total.stats[i]));
        }
    }
    Ok(DeterministicCurve {
        times,
        b: bs,
        loss_scale: s,
        names: registry.names(),
        stats,
        backend: Backend::MeanField,
        diagnostics: SolverDiagnostics { steps, mc_band: Some(mc_band), aliasing: None, diverged_at },
    })
}

fn chunks_groups(groups: usize, per: usize) -> impl Iterator<Item = usize> {
    (0..groups).flat_map(move |g| std::iter::repeat_n(g, per))
}

#[inline]
fn step_chunk(config: &ModelConfig, law: &InstanceLaw, c: &mut Chunk, gamma: f64, noise: f64, h: f64) {
    let g = &law.groups[c.group];
    let drift = -gamma * 2.0 * config.loss_scale * g.k * h;
    let diff = gamma * (noise * g.k * h).sqrt();
    for p in (0..c.u.len()).step_by(2) {
        let xi: f64 = StandardNormal.sample(&mut c.rng);
        for (q, sign) in [(p, 1.0), (p + 1, -1.0)] {
            let (u, v) = (c.u[q], c.v[q]);
            let e = config.psi1(u, v) - g.beta;
            let (pu, pv) = config.grad1(u, v);
            let a = drift * e + diff * sign * xi;
            c.u[q] = u + a * pu;
            c.v[q] = v + a * pv;
        }
    }
}

fn chunk_err_sq(config: &ModelConfig, law: &InstanceLaw, c: &Chunk) -> f64 {
    let beta = law.groups[c.group].beta;
    c.u.iter().zip(&c.v).map(|(u, v)| (config.psi1(*u, *v) - beta).powi(2)).sum()
}

fn chunk_moments(config: &ModelConfig, law: &InstanceLaw, registry: &StatRegistry, c: &Chunk, n_p: usize) -> Moments {
    let g = &law.groups[c.group];
    let wt = g.weight / n_p as f64;
    let mut b = [[0.0; 3]; 3];
    let mut stats: Vec<Vec<Mat3>> = registry.specs().iter().map(|s| vec![[[0.0; 3]; 3]; s.terms.len()]).collect();
    for (u, v) in c.u.iter().zip(&c.v) {
        let w = [config.psi1(*u, *v), g.beta, 1.0];
        for a in 0..3 {
            for bb in 0..3 {
                b[a][bb] += wt * g.k * w[a] * w[bb];
            }
        }
        for (spec, acc) in registry.specs().iter().zip(stats.iter_mut()) {
            spec.accumulate(w, *u, *v, g.k, wt, acc);
        }
    }
    Moments { b, stats }
}

fn group_pair_sums(chunks: &[Chunk], start: usize, n: usize, config: &ModelConfig, beta: f64, k: f64) -> (f64, f64) {
    let parts: Vec<(f64, f64)> = chunks[start..start + n]
        .par_iter()
        .map(|c| {
            let mut sum = 0.0;
            let mut sq = 0.0;
            for p in (0..c.u.len()).step_by(2) {
                let e0 = config.psi1(c.u[p], c.v[p]) - beta;
                let e1 = config.psi1(c.u[p + 1], c.v[p + 1]) - beta;
                let y = k * 0.5 * (e0 * e0 + e1 * e1);
                sum += y;
                sq += y * y;
            }
            (sum, sq)
        })
        .collect();
    parts.into_iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d))
}

fn add_moments(mut a: Moments, b: Moments) -> Moments {
    for i in 0..3 {
        for j in 0..3 {
            a.b[i][j] += b.b[i][j];
        }
    }
    for (x, y) in a.stats.iter_mut().zip(&b.stats) {
        for (m, n) in x.iter_mut().zip(y) {
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += n[i][j];
                }
            }
        }
    }
    a
}
