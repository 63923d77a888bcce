//! The closed evolution of the resolvent transform on the (z1, z2) grid.
//!
//! Per group g the state is G(z1, z2) = E_g[R1 R2], R1 = (z1−u)⁻¹,
//! R2 = (z2−v)⁻¹, which is the (3,3) entry of the group's block of 𝒮 divided
//! by the group weight. Every other entry of 𝒮 is E_g[p(u,v) R1 R2] for a
//! polynomial p in ψ, so G carries the whole state.
//!
//! Itô's formula for the coordinatewise HSGD gives ∂_t G = E_g[𝓛(R1R2)] with
//!
//! ```text
//! 𝓛(R1R2) = b_u R1²R2 + b_v R1R2²
//!         + σ_u² R1³R2 + σ_u σ_v R1²R2² + σ_v² R1R2³,
//! b_· = −2γsK (ψ−β) ψ_·,   σ_· σ_· = γ² ℐ K ψ_· ψ_·.
//! ```
//!
//! The right side reduces to G through T(j,k,a,b) = E[u^j v^k R1^a R2^b]:
//! * u R1 = z1 R1 − 1 lowers j (and a);
//! * R1^a = (−1)^{a−1}/(a−1)! ∂^{a−1}_{z1} R1 turns powers into derivatives,
//!   taken spectrally on each circle;
//! * with no resolvent left in z1, E[u^j …] = (2πi)⁻¹∮ z1^j E[R1 …] dz1.

use std::collections::HashMap;
use std::rc::Rc;
use std::sync::Arc;

use num_complex::Complex64 as C64;
use rustfft::{Fft, FftPlanner};

use super::{substeps, Backend, DeterministicCurve, InstanceLaw, SolverDiagnostics};
use crate::error::{DlnError, Result};
use crate::model::ModelConfig;
use crate::resolvent::{circle_nodes, recover_b, recover_statistic, CMat3, ContourSpec, GroupKernel, SField, DEFAULT_M, DEFAULT_NODES};
use crate::statistic::StatRegistry;
use crate::trajectory::RecordGrid;

/// Largest relative Fourier mass allowed in the top quarter of frequencies.
pub const ALIASING_BOUND: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct PdeOptions {
    pub m: f64,
    pub nodes: usize,
    /// Retained Laurent band |q| ≤ K on each circle; `None` means N/4.
    /// Mode q of the state is amplified roughly like e^{2q²γ²∫ℐ} by the
    /// multiplicative noise at the saddle u = v = 0, so round-off outside
    /// a modest band would swamp the solution.
    pub band: Option<usize>,
    /// Largest RK4 step. The explicit scheme is stable while
    /// dt · γ²ℐK‖ψ'‖² (N/2M)² stays below about 2.8.
    pub dt: f64,
}

impl Default for PdeOptions {
    fn default() -> Self {
        PdeOptions { m: DEFAULT_M, nodes: DEFAULT_NODES, band: None, dt: 1e-3 }
    }
}

/// Bivariate polynomial, `c[j][k]` multiplies u^j v^k, total degree ≤ 4.
type P2 = [[f64; 5]; 5];

fn p2_from_psi(config: &ModelConfig) -> P2 {
    let mut p = [[0.0; 5]; 5];
    for (j, row) in config.psi_poly().iter().enumerate() {
        for (k, c) in row.iter().enumerate() {
            p[j][k] = *c;
        }
    }
    p
}

fn p2_du(p: &P2) -> P2 {
    let mut o = [[0.0; 5]; 5];
    for j in 1..5 {
        for k in 0..5 {
            o[j - 1][k] = j as f64 * p[j][k];
        }
    }
    o
}

fn p2_dv(p: &P2) -> P2 {
    let mut o = [[0.0; 5]; 5];
    for j in 0..5 {
        for k in 1..5 {
            o[j][k - 1] = k as f64 * p[j][k];
        }
    }
    o
}

fn p2_mul(a: &P2, b: &P2) -> P2 {
    let mut o = [[0.0; 5]; 5];
    for j1 in 0..5 {
        for k1 in 0..5 {
            if a[j1][k1] == 0.0 {
                continue;
            }
            for j2 in 0..5 {
                for k2 in 0..5 {
                    if b[j2][k2] == 0.0 {
                        continue;
                    }
                    assert!(j1 + j2 + k1 + k2 <= 4, "polynomial degree above 4");
                    o[j1 + j2][k1 + k2] += a[j1][k1] * b[j2][k2];
                }
            }
        }
    }
    o
}

fn nonzero(p: &P2) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    (0..5).flat_map(move |j| (0..5).filter_map(move |k| (p[j][k] != 0.0).then_some((j, k, p[j][k]))))
}

/// Per-group polynomial coefficients of the generator.
struct GroupPolys {
    psi: P2,
    psi_sq: P2,
    err_sq: P2,
    drift_u: P2,
    drift_v: P2,
    diff_uu: P2,
    diff_uv: P2,
    diff_vv: P2,
}

impl GroupPolys {
    fn new(config: &ModelConfig, beta: f64) -> Self {
        let psi = p2_from_psi(config);
        let mut err = psi;
        err[0][0] -= beta;
        let pu = p2_du(&psi);
        let pv = p2_dv(&psi);
        GroupPolys {
            psi,
            psi_sq: p2_mul(&psi, &psi),
            err_sq: p2_mul(&err, &err),
            drift_u: p2_mul(&err, &pu),
            drift_v: p2_mul(&err, &pv),
            diff_uu: p2_mul(&pu, &pu),
            diff_uv: p2_mul(&pu, &pv),
            diff_vv: p2_mul(&pv, &pv),
        }
    }
}

/// Grid geometry and FFT plans shared by all groups.
struct Ops {
    n: usize,
    z1: Vec<C64>,
    z2: Vec<C64>,
    /// `w1[j][m] = z1_m^{j+1} / N`, trapezoid weights for ∮ z^j (·) dz / 2πi.
    w1: Vec<Vec<C64>>,
    w2: Vec<Vec<C64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    /// Laurent exponent of each FFT bin: bin 0 ↦ 0, bin m ↦ m − N.
    freq: Vec<f64>,
    band: usize,
}

const MAX_POW: usize = 5;

impl Ops {
    fn new(r: f64, n: usize, band: usize) -> Self {
        let z1 = circle_nodes(r, n);
        let z2 = z1.clone();
        let weights = |z: &[C64]| -> Vec<Vec<C64>> {
            (0..=MAX_POW).map(|j| z.iter().map(|z| z.powu(j as u32 + 1) / n as f64).collect()).collect()
        };
        let mut planner = FftPlanner::new();
        Ops {
            n,
            w1: weights(&z1),
            w2: weights(&z2),
            z1,
            z2,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
            freq: (0..n).map(|m| if m == 0 { 0.0 } else { m as f64 - n as f64 }).collect(),
            band,
        }
    }

    fn transpose(&self, a: &mut [C64]) {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                a.swap(i * n + j, j * n + i);
            }
        }
    }

    /// Unnormalized 2D transform in place.
    fn fft2(&self, a: &mut [C64], plan: &Arc<dyn Fft<f64>>) {
        plan.process(a);
        self.transpose(a);
        plan.process(a);
        self.transpose(a);
    }

    /// ∂^p_{z1} ∂^q_{z2} G from the spectrum of G.
    fn derivative(&self, spec: &[C64], p: usize, q: usize) -> Vec<C64> {
        let n = self.n;
        let falling = |f: f64, k: usize| (0..k).fold(1.0, |acc, i| acc * (f - i as f64));
        let f1: Vec<f64> = self.freq.iter().map(|f| falling(*f, p)).collect();
        let f2: Vec<f64> = self.freq.iter().map(|f| falling(*f, q)).collect();
        let mut out: Vec<C64> = spec.to_vec();
        for m1 in 0..n {
            for m2 in 0..n {
                out[m1 * n + m2] *= f1[m1] * f2[m2];
            }
        }
        self.fft2(&mut out, &self.inv);
        let scale = 1.0 / (n * n) as f64;
        for n1 in 0..n {
            let a = self.z1[n1].powi(-(p as i32));
            for n2 in 0..n {
                let b = self.z2[n2].powi(-(q as i32));
                out[n1 * n + n2] *= a * b * scale;
            }
        }
        out
    }

    fn in_band(&self, m: usize) -> bool {
        m != 0 && self.freq[m] >= -(self.band as f64)
    }

    /// Zeroes every mode outside the retained band. The exact state has real
    /// Laurent coefficients (u, v, β*, K are real), so the imaginary part of
    /// each kept coefficient is round-off and is dropped too.
    fn band_limit(&self, g: &mut [C64]) {
        let n = self.n;
        self.fft2(g, &self.fwd);
        let scale = 1.0 / (n * n) as f64;
        for m1 in 0..n {
            for m2 in 0..n {
                let keep = self.in_band(m1) && self.in_band(m2);
                let x = &mut g[m1 * n + m2];
                *x = if keep { C64::new(x.re * scale, 0.0) } else { C64::new(0.0, 0.0) };
            }
        }
        self.fft2(g, &self.inv);
    }

    /// Relative ℓ² mass in the top quarter of the band, |q| > 3K/4, along
    /// either axis; modes outside the band count as well.
    fn aliasing(&self, spec: &[C64]) -> f64 {
        let n = self.n;
        let edge = 0.75 * self.band as f64;
        let top = |m: usize| m == 0 || self.freq[m] < -edge;
        let mut total = 0.0;
        let mut a1 = 0.0;
        let mut a2 = 0.0;
        for m1 in 0..n {
            for m2 in 0..n {
                let e = spec[m1 * n + m2].norm_sqr();
                total += e;
                if top(m1) {
                    a1 += e;
                }
                if top(m2) {
                    a2 += e;
                }
            }
        }
        if total == 0.0 {
            0.0
        } else {
            (a1.max(a2) / total).sqrt()
        }
    }
}

/// Memoized T(j,k,a,b) for one group state within one right-side evaluation.
struct Reducer<'a> {
    ops: &'a Ops,
    g: &'a [C64],
    spec: Option<Vec<C64>>,
    memo: HashMap<[usize; 4], Rc<Vec<C64>>>,
}

impl<'a> Reducer<'a> {
    fn new(ops: &'a Ops, g: &'a [C64]) -> Self {
        Reducer { ops, g, spec: None, memo: HashMap::new() }
    }

    fn spectrum(&mut self) -> &[C64] {
        if self.spec.is_none() {
            let mut s = self.g.to_vec();
            self.ops.fft2(&mut s, &self.ops.fwd);
            self.spec = Some(s);
        }
        self.spec.as_deref().unwrap()
    }

    /// E[u^j v^k] by double trapezoid.
    fn moment(&self, j: usize, k: usize) -> C64 {
        let n = self.ops.n;
        let mut acc = C64::new(0.0, 0.0);
        for n1 in 0..n {
            let row = &self.g[n1 * n..(n1 + 1) * n];
            let inner: C64 = row.iter().zip(&self.ops.w2[k]).map(|(g, w)| g * w).sum();
            acc += self.ops.w1[j][n1] * inner;
        }
        acc
    }

    fn t(&mut self, j: usize, k: usize, a: usize, b: usize) -> Rc<Vec<C64>> {
        if let Some(v) = self.memo.get(&[j, k, a, b]) {
            return v.clone();
        }
        let n = self.ops.n;
        let out: Vec<C64> = if a == 0 && b == 0 {
            vec![self.moment(j, k); n * n]
        } else if a == 0 {
            // E[u^j v^k R2^b] = ∮ z1^j T(0,k,1,b) dz1, constant in z1
            let base = self.t(0, k, 1, b);
            let mut line = vec![C64::new(0.0, 0.0); n];
            for m in 0..n {
                let w = self.ops.w1[j][m];
                for n2 in 0..n {
                    line[n2] += w * base[m * n + n2];
                }
            }
            (0..n * n).map(|i| line[i % n]).collect()
        } else if b == 0 {
            let base = self.t(j, 0, a, 1);
            let line: Vec<C64> = (0..n)
                .map(|n1| (0..n).map(|m| self.ops.w2[k][m] * base[n1 * n + m]).sum())
                .collect();
            (0..n * n).map(|i| line[i / n]).collect()
        } else if j > 0 {
            let x = self.t(j - 1, k, a, b);
            let y = self.t(j - 1, k, a - 1, b);
            (0..n * n).map(|i| self.ops.z1[i / n] * x[i] - y[i]).collect()
        } else if k > 0 {
            let x = self.t(j, k - 1, a, b);
            let y = self.t(j, k - 1, a, b - 1);
            (0..n * n).map(|i| self.ops.z2[i % n] * x[i] - y[i]).collect()
        } else {
            let c = power_factor(a) * power_factor(b);
            let (p, q) = (a - 1, b - 1);
            let mut d = if p == 0 && q == 0 { self.g.to_vec() } else { self.ops.derivative(self.spectrum(), p, q) };
            if c != 1.0 {
                d.iter_mut().for_each(|x| *x *= c);
            }
            d
        };
        let out = Rc::new(out);
        self.memo.insert([j, k, a, b], out.clone());
        out
    }

    /// Σ p[j][k] T(j,k,a,b).
    fn combine(&mut self, p: &P2, a: usize, b: usize, scale: f64, acc: &mut [C64]) {
        for (j, k, c) in nonzero(p) {
            let t = self.t(j, k, a, b);
            let f = scale * c;
            for (x, y) in acc.iter_mut().zip(t.iter()) {
                *x += f * y;
            }
        }
    }
}

/// (−1)^{a−1}/(a−1)!
fn power_factor(a: usize) -> f64 {
    let fact: f64 = (1..a).map(|i| i as f64).product();
    if (a - 1).is_multiple_of(2) {
        1.0 / fact
    } else {
        -1.0 / fact
    }
}

struct Solver<'a> {
    config: &'a ModelConfig,
    law: &'a InstanceLaw,
    ops: Ops,
    polys: Vec<GroupPolys>,
}

impl Solver<'_> {
    fn risk(&self, state: &[Vec<C64>]) -> f64 {
        let s = self.config.loss_scale;
        let mut r = 0.0;
        for ((g, p), grid) in self.law.groups.iter().zip(&self.polys).zip(state) {
            let red = Reducer::new(&self.ops, grid);
            let e2: C64 = nonzero(&p.err_sq).map(|(j, k, c)| red.moment(j, k) * c).sum();
            r += s * g.weight * g.k * e2.re;
        }
        r
    }

    fn rhs(&self, state: &[Vec<C64>], gamma: f64) -> (Vec<Vec<C64>>, f64) {
        let s = self.config.loss_scale;
        let risk = self.risk(state);
        let noise = 4.0 * s * risk;
        let n = self.ops.n;
        let out = self
            .law
            .groups
            .iter()
            .zip(&self.polys)
            .zip(state)
            .map(|((g, p), grid)| {
                let mut red = Reducer::new(&self.ops, grid);
                let mut acc = vec![C64::new(0.0, 0.0); n * n];
                let drift = -2.0 * gamma * s * g.k;
                let diff = gamma * gamma * noise * g.k;
                red.combine(&p.drift_u, 2, 1, drift, &mut acc);
                red.combine(&p.drift_v, 1, 2, drift, &mut acc);
                if diff != 0.0 {
                    red.combine(&p.diff_uu, 3, 1, diff, &mut acc);
                    red.combine(&p.diff_uv, 2, 2, diff, &mut acc);
                    red.combine(&p.diff_vv, 1, 3, diff, &mut acc);
                }
                acc
            })
            .collect();
        (out, risk)
    }

    fn field(&self, state: &[Vec<C64>], contour: &ContourSpec) -> SField {
        let groups = self
            .law
            .groups
            .iter()
            .zip(&self.polys)
            .zip(state)
            .map(|((g, p), grid)| {
                let mut red = Reducer::new(&self.ops, grid);
                let nn = grid.len();
                let mut e_psi = vec![C64::new(0.0, 0.0); nn];
                let mut e_psi2 = vec![C64::new(0.0, 0.0); nn];
                red.combine(&p.psi, 1, 1, 1.0, &mut e_psi);
                red.combine(&p.psi_sq, 1, 1, 1.0, &mut e_psi2);
                let w = g.weight;
                let b = g.beta;
                let cells = (0..nn)
                    .map(|i| {
                        let (p2, p1, g0) = (e_psi2[i] * w, e_psi[i] * w, grid[i] * w);
                        let m: CMat3 = [[p2, p1 * b, p1], [p1 * b, g0 * b * b, g0 * b], [p1, g0 * b, g0]];
                        m
                    })
                    .collect();
                GroupKernel { beta: g.beta, k: g.k, count: 0, grid: cells }
            })
            .collect();
        SField { contour: contour.clone(), z1: self.ops.z1.clone(), z2: self.ops.z2.clone(), groups }
    }

    fn aliasing(&self, state: &[Vec<C64>]) -> f64 {
        state
            .iter()
            .map(|g| {
                let mut s = g.clone();
                self.ops.fft2(&mut s, &self.ops.fwd);
                self.ops.aliasing(&s)
            })
            .fold(0.0, f64::max)
    }
}

fn axpy(y: &[Vec<C64>], h: f64, k: &[Vec<C64>]) -> Vec<Vec<C64>> {
    y.iter().zip(k).map(|(a, b)| a.iter().zip(b).map(|(x, d)| x + d * h).collect()).collect()
}

/// Integrates the grid system with classical RK4 and reports curves at the
/// record grid through Cauchy recovery.
pub fn solve_contour_pde(
    config: &ModelConfig,
    law: &InstanceLaw,
    grid: &RecordGrid,
    registry: &StatRegistry,
    opts: &PdeOptions,
) -> Result<DeterministicCurve> {
    config.validate()?;
    if !(opts.dt > 0.0 && opts.dt.is_finite()) {
        return Err(DlnError::Parameter(format!("dt must be positive, got {}", opts.dt)));
    }
    if opts.nodes < 8 {
        return Err(DlnError::Parameter(format!("need at least 8 nodes per circle, got {}", opts.nodes)));
    }
    if !(opts.m > law.u_v_inf()) {
        return Err(DlnError::ContourViolation { which: 'u', coordinate: 0, value: law.u_v_inf(), m: opts.m });
    }
    let r = 2.0 * opts.m;
    let beta_inf = law.groups.iter().fold(0.0_f64, |a, g| a.max(g.beta.abs()));
    let k_inf = law.groups.iter().fold(0.0_f64, |a, g| a.max(g.k.abs()));
    let contour = ContourSpec {
        radii: [r, r, (2.0 * beta_inf).max(1.0), (2.0 * k_inf).max(1.0)],
        nodes: [opts.nodes; 4],
        m: opts.m,
    };
    let band = opts.band.unwrap_or(opts.nodes / 4);
    if band < 4 || band >= opts.nodes / 2 {
        return Err(DlnError::Parameter(format!("band must lie in [4, N/2), got {band} with N = {}", opts.nodes)));
    }
    let ops = Ops::new(r, opts.nodes, band);
    let n = opts.nodes;
    let mut state: Vec<Vec<C64>> = law
        .groups
        .iter()
        .map(|g| {
            let mut s: Vec<C64> = (0..n * n).map(|i| 1.0 / ((ops.z1[i / n] - g.u0) * (ops.z2[i % n] - g.v0))).collect();
            ops.band_limit(&mut s);
            s
        })
        .collect();
    let solver = Solver { config, law, polys: law.groups.iter().map(|g| GroupPolys::new(config, g.beta)).collect(), ops };

    let mut times = Vec::with_capacity(grid.len());
    let mut bs = Vec::with_capacity(grid.len());
    let mut stats = vec![Vec::with_capacity(grid.len()); registry.len()];
    let mut steps = 0_u64;
    let mut worst_alias = 0.0_f64;
    let mut diverged_at = None;
    let mut t = 0.0;
    for &t_rec in &grid.times {
        if diverged_at.is_none() {
            let (nsteps, h) = substeps(t, t_rec, opts.dt);
            for j in 0..nsteps {
                let t0 = t + j as f64 * h;
                let g0 = law.schedule.at(t0);
                let gm = law.schedule.at(t0 + 0.5 * h);
                let g1 = law.schedule.at(t0 + h);
                let (k1, risk) = solver.rhs(&state, g0);
                let (k2, _) = solver.rhs(&axpy(&state, 0.5 * h, &k1), gm);
                let (k3, _) = solver.rhs(&axpy(&state, 0.5 * h, &k2), gm);
                let (k4, _) = solver.rhs(&axpy(&state, h, &k3), g1);
                for (gi, s) in state.iter_mut().enumerate() {
                    for (i, x) in s.iter_mut().enumerate() {
                        *x += (k1[gi][i] + 2.0 * k2[gi][i] + 2.0 * k3[gi][i] + k4[gi][i]) * (h / 6.0);
                    }
                    solver.ops.band_limit(s);
                }
                steps += 1;
                if !risk.is_finite() || state.iter().flatten().any(|x| !x.is_finite()) {
                    diverged_at = Some(t0 + h);
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
        let alias = solver.aliasing(&state);
        worst_alias = worst_alias.max(alias);
        if alias > ALIASING_BOUND {
            return Err(DlnError::Resolution(format!(
                "aliasing {alias:.2e} above {ALIASING_BOUND:.0e} at t = {t_rec} with N = {n}, band {band}; \
                 increase N and the band, or shorten the horizon if the band edge is growing"
            )));
        }
        let field = solver.field(&state, &contour);
        bs.push(recover_b(&field)?);
        for (i, spec) in registry.specs().iter().enumerate() {
            stats[i].push(recover_statistic(spec, &field)?);
        }
    }
    Ok(DeterministicCurve {
        times,
        b: bs,
        loss_scale: config.loss_scale,
        names: registry.names(),
        stats,
        backend: Backend::ContourPde,
        diagnostics: SolverDiagnostics { steps, mc_band: None, aliasing: Some(worst_alias), diverged_at },
    })
}
