//! Multi-resolvent statistic
//!
//! S(x, z) = (1/d) Σ_i w_i w_iᵀ / ((z1−u_i)(z2−v_i)(z3−β*_i)(z4−K_ii)),
//! w_i = (ψ_i, β*_i, 1), on the product contour Γ of four circles, and
//! Cauchy recovery of B and composite statistics.
//!
//! Contours are parametrized z = r e^{iθ}, dz = i z dθ, so the
//! (2π)^{-4}∮…dz normalization is the product of four (2πi)^{-1}∮ because
//! i⁴ = 1. Each (2πi)^{-1}∮ f dz is approximated by the periodic trapezoid
//! rule (1/N) Σ_n f(z_n) z_n.
//!
//! Coordinates sharing a (β*_i, K_ii) value form a group; the z3, z4 factors
//! of a group are constant on it, so only the (z1, z2) torus is gridded and
//! the z3, z4 integrals are taken by residues.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::model::{Covariance, Iterate, Mat3, ModelConfig, ProblemInstance};
use crate::statistic::{Poly, StatisticSpec};

pub const DEFAULT_M: f64 = 1.3;
pub const DEFAULT_NODES: usize = 100;

pub type CMat3 = [[C64; 3]; 3];

const CZERO: C64 = C64::new(0.0, 0.0);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContourSpec {
    pub radii: [f64; 4],
    pub nodes: [usize; 4],
    pub m: f64,
}

/// r1 = r2 = 2M, r3 = max(1, 2‖β*‖∞), r4 = max(1, 2‖K‖).
pub fn build_contour(m: f64, beta_star: &[f64], cov: &Covariance, nodes: usize) -> Result<ContourSpec> {
    if !(m.is_finite() && m > 0.0) {
        return Err(DlnError::Parameter(format!("contour bound M must be positive, got {m}")));
    }
    if nodes < 4 {
        return Err(DlnError::Parameter(format!("need at least 4 nodes per circle, got {nodes}")));
    }
    let beta_inf = beta_star.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
    Ok(ContourSpec {
        radii: [2.0 * m, 2.0 * m, (2.0 * beta_inf).max(1.0), (2.0 * cov.op_norm()).max(1.0)],
        nodes: [nodes; 4],
        m,
    })
}

/// Nodes z_n = r e^{2πi n/N}, n = 0..N.
pub fn circle_nodes(r: f64, n: usize) -> Vec<C64> {
    (0..n).map(|j| C64::from_polar(r, 2.0 * PI * j as f64 / n as f64)).collect()
}

/// Largest distance between consecutive nodes (chord length).
pub fn max_gap(r: f64, n: usize) -> f64 {
    2.0 * r * (PI / n as f64).sin()
}

/// Node count so that consecutive nodes are at most `spacing` apart.
pub fn mesh_nodes(r: f64, spacing: f64) -> usize {
    ((2.0 * PI * r / spacing).ceil() as usize).max(4)
}

impl ContourSpec {
    pub fn circle(&self, j: usize) -> Vec<C64> {
        circle_nodes(self.radii[j], self.nodes[j])
    }

    pub fn with_nodes(mut self, n: usize) -> Self {
        self.nodes = [n; 4];
        self
    }

    /// Rejects iterates with any |u_i| or |v_i| ≥ M and data outside the
    /// z3, z4 circles.
    pub fn audit(&self, inst: &ProblemInstance, x: &Iterate) -> Result<()> {
        for (which, vals) in [('u', &x.u), ('v', &x.v)] {
            if let Some((i, v)) = vals.iter().enumerate().find(|(_, v)| !(v.abs() < self.m)) {
                return Err(DlnError::ContourViolation { which, coordinate: i, value: *v, m: self.m });
            }
        }
        if let Some((i, b)) = inst.beta_star.iter().enumerate().find(|(_, b)| !(b.abs() < self.radii[2])) {
            return Err(DlnError::ContourViolation { which: 'b', coordinate: i, value: *b, m: self.radii[2] });
        }
        for i in 0..inst.d {
            let k = inst.cov.diag_entry(i);
            if !(k.abs() < self.radii[3]) {
                return Err(DlnError::ContourViolation { which: 'k', coordinate: i, value: k, m: self.radii[3] });
            }
        }
        Ok(())
    }
}

/// Largest resolvent factor |z − λ|^{-1} over all circles and coordinates,
/// found from the closest approach of each circle to its spectrum.
pub fn max_resolvent_factor(contour: &ContourSpec, inst: &ProblemInstance, x: &Iterate) -> [f64; 4] {
    let inf = |v: &mut dyn Iterator<Item = f64>| v.fold(0.0_f64, |a, b| a.max(b.abs()));
    let spectra = [
        inf(&mut x.u.iter().copied()),
        inf(&mut x.v.iter().copied()),
        inf(&mut inst.beta_star.iter().copied()),
        inf(&mut (0..inst.d).map(|i| inst.cov.diag_entry(i))),
    ];
    let mut out = [0.0; 4];
    for j in 0..4 {
        out[j] = 1.0 / (contour.radii[j] - spectra[j]);
    }
    out
}

/// The (z1, z2)-grid part of S for one (β*, K) group, already divided by d:
/// `grid[n1 * N2 + n2] = (1/d) Σ_{i∈g} w_i w_iᵀ / ((z1−u_i)(z2−v_i))`.
#[derive(Clone, Debug)]
pub struct GroupKernel {
    pub beta: f64,
    pub k: f64,
    pub count: usize,
    pub grid: Vec<CMat3>,
}

#[derive(Clone, Debug)]
pub struct SField {
    pub contour: ContourSpec,
    pub z1: Vec<C64>,
    pub z2: Vec<C64>,
    pub groups: Vec<GroupKernel>,
}

impl SField {
    /// Full S at grid node (n1, n2) and arbitrary (z3, z4).
    pub fn at(&self, n1: usize, n2: usize, z3: C64, z4: C64) -> CMat3 {
        let n2s = self.z2.len();
        let mut out = [[CZERO; 3]; 3];
        for g in &self.groups {
            let f = 1.0 / ((z3 - g.beta) * (z4 - g.k));
            let m = &g.grid[n1 * n2s + n2];
            for a in 0..3 {
                for b in 0..3 {
                    out[a][b] += m[a][b] * f;
                }
            }
        }
        out
    }
}

/// Partitions coordinates by exact (β*_i, K_ii) value, in first-seen order.
pub fn group_indices(inst: &ProblemInstance) -> Vec<(f64, f64, Vec<usize>)> {
    let mut groups: Vec<(f64, f64, Vec<usize>)> = Vec::new();
    for i in 0..inst.d {
        let key = (inst.beta_star[i], inst.cov.diag_entry(i));
        match groups.iter_mut().find(|g| g.0.to_bits() == key.0.to_bits() && g.1.to_bits() == key.1.to_bits()) {
            Some(g) => g.2.push(i),
            None => groups.push((key.0, key.1, vec![i])),
        }
    }
    groups
}

pub fn eval_s(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate, contour: &ContourSpec) -> Result<SField> {
    inst.cov.require_diagonal()?;
    if x.d() != inst.d {
        return Err(DlnError::Dimension(format!("iterate has d={}, instance d={}", x.d(), inst.d)));
    }
    contour.audit(inst, x)?;
    let z1 = contour.circle(0);
    let z2 = contour.circle(1);
    let inv_d = 1.0 / inst.d as f64;
    let groups = group_indices(inst)
        .into_iter()
        .map(|(beta, k, idx)| {
            let mut grid = vec![[[CZERO; 3]; 3]; z1.len() * z2.len()];
            let mut r2 = vec![CZERO; z2.len()];
            for &i in &idx {
                let w = [config.psi1(x.u[i], x.v[i]), beta, 1.0];
                let mut ww = [[0.0; 3]; 3];
                for a in 0..3 {
                    for b in 0..3 {
                        ww[a][b] = inv_d * w[a] * w[b];
                    }
                }
                for (n2, z) in z2.iter().enumerate() {
                    r2[n2] = 1.0 / (z - x.v[i]);
                }
                for (n1, z) in z1.iter().enumerate() {
                    let r1 = 1.0 / (z - x.u[i]);
                    for n2 in 0..z2.len() {
                        let f = r1 * r2[n2];
                        let m = &mut grid[n1 * z2.len() + n2];
                        for a in 0..3 {
                            for b in 0..3 {
                                m[a][b] += f * ww[a][b];
                            }
                        }
                    }
                }
            }
            GroupKernel { beta, k, count: idx.len(), grid }
        })
        .collect();
    Ok(SField { contour: contour.clone(), z1, z2, groups })
}

/// S at a single point z ∈ ℂ⁴ by direct summation.
pub fn eval_s_point(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate, z: [C64; 4]) -> CMat3 {
    let mut out = [[CZERO; 3]; 3];
    let inv_d = 1.0 / inst.d as f64;
    for i in 0..inst.d {
        let w = [config.psi1(x.u[i], x.v[i]), inst.beta_star[i], 1.0];
        let f = inv_d / ((z[0] - x.u[i]) * (z[1] - x.v[i]) * (z[2] - inst.beta_star[i]) * (z[3] - inst.cov.diag_entry(i)));
        for a in 0..3 {
            for b in 0..3 {
                out[a][b] += f * (w[a] * w[b]);
            }
        }
    }
    out
}

fn finish_real(acc: &CMat3) -> Result<Mat3> {
    let mut re = [[0.0; 3]; 3];
    let mut norm = 0.0_f64;
    let mut imag = 0.0_f64;
    for a in 0..3 {
        for b in 0..3 {
            re[a][b] = acc[a][b].re;
            norm = norm.max(acc[a][b].re.abs());
            imag = imag.max(acc[a][b].im.abs());
        }
    }
    // relative audit with a tiny absolute floor for B = 0 entries
    let threshold = 1e-8 * norm + 1e-13;
    if imag > threshold {
        return Err(DlnError::Quadrature { residue: imag, threshold });
    }
    Ok(re)
}

/// (2πi)^{-2}∮∮ q1(z1) q2(z2) S_g(z1, z2) dz1 dz2 for each group, by trapezoid.
fn torus_integrals(field: &SField, q1: &Poly, q2: &Poly) -> Vec<CMat3> {
    let w1: Vec<C64> = field.z1.iter().map(|z| q1.eval_c(*z) * z / field.z1.len() as f64).collect();
    let w2: Vec<C64> = field.z2.iter().map(|z| q2.eval_c(*z) * z / field.z2.len() as f64).collect();
    field
        .groups
        .iter()
        .map(|g| {
            let mut acc = [[CZERO; 3]; 3];
            for (n1, a1) in w1.iter().enumerate() {
                for (n2, a2) in w2.iter().enumerate() {
                    let f = a1 * a2;
                    let m = &g.grid[n1 * w2.len() + n2];
                    for a in 0..3 {
                        for b in 0..3 {
                            acc[a][b] += f * m[a][b];
                        }
                    }
                }
            }
            acc
        })
        .collect()
}

/// B = (2π)^{-4}∮_Γ z4 S dz. The z3 residue is 1 and the z4 residue is K_g.
pub fn recover_b(field: &SField) -> Result<Mat3> {
    let one = Poly::one();
    let per_group = torus_integrals(field, &one, &one);
    let mut acc = [[CZERO; 3]; 3];
    for (g, m) in field.groups.iter().zip(&per_group) {
        for a in 0..3 {
            for b in 0..3 {
                acc[a][b] += m[a][b] * g.k;
            }
        }
    }
    finish_real(&acc)
}

/// g((2π)^{-4}∮ q1(z1)q2(z2)q4(z4) S dz), termwise.
pub fn recover_statistic(spec: &StatisticSpec, field: &SField) -> Result<f64> {
    let limit = field.contour.nodes[0].min(field.contour.nodes[1]) / 4;
    if spec.max_degree() > limit {
        return Err(DlnError::Resolution(format!(
            "statistic `{}` has degree {} > N/4 = {limit}",
            spec.name,
            spec.max_degree()
        )));
    }
    let mut mats = Vec::with_capacity(spec.terms.len());
    for t in &spec.terms {
        let per_group = torus_integrals(field, &t.q1, &t.q2);
        let mut acc = [[CZERO; 3]; 3];
        for (g, m) in field.groups.iter().zip(&per_group) {
            let q4 = t.q4.eval(g.k);
            for a in 0..3 {
                for b in 0..3 {
                    acc[a][b] += m[a][b] * q4;
                }
            }
        }
        mats.push(finish_real(&acc)?);
    }
    Ok(spec.apply_outer(&mats))
}

/// Dense 4-torus quadrature without group factoring; cross-check path for d ≤ 4.
pub fn recover_b_dense(config: &ModelConfig, inst: &ProblemInstance, x: &Iterate, contour: &ContourSpec) -> Result<Mat3> {
    if inst.d > 4 {
        return Err(DlnError::Parameter(format!("dense contour path is limited to d <= 4, got {}", inst.d)));
    }
    inst.cov.require_diagonal()?;
    contour.audit(inst, x)?;
    let circles: Vec<Vec<C64>> = (0..4).map(|j| contour.circle(j)).collect();
    let norm: f64 = contour.nodes.iter().map(|n| *n as f64).product();
    let mut acc = [[CZERO; 3]; 3];
    for z1 in &circles[0] {
        for z2 in &circles[1] {
            for z3 in &circles[2] {
                for z4 in &circles[3] {
                    let s = eval_s_point(config, inst, x, [*z1, *z2, *z3, *z4]);
                    let f = z1 * z2 * z3 * z4 * z4 / norm;
                    for a in 0..3 {
                        for b in 0..3 {
                            acc[a][b] += f * s[a][b];
                        }
                    }
                }
            }
        }
    }
    finish_real(&acc)
}
