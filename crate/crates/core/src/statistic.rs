//! Composite statistics φ(x) = g(M_1, …, M_J) with
//! M_j = (1/d) Wᵀ q1_j(diag u) q2_j(diag v) q4_j(K) W.
//!
//! A single term (J = 1) is the basic composite form. Finite sums are needed
//! for statistics like the Hessian trace, whose coordinate weight mixes u and v.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DlnError, Result};
use crate::model::{Covariance, Iterate, Mat3, ModelConfig, ProblemInstance};

pub const MAX_DEGREE: usize = 8;

/// Real polynomial, coefficients in ascending order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn one() -> Self {
        Poly(vec![1.0])
    }

    pub fn z() -> Self {
        Poly(vec![0.0, 1.0])
    }

    pub fn monomial(k: usize) -> Self {
        let mut c = vec![0.0; k + 1];
        c[k] = 1.0;
        Poly(c)
    }

    pub fn degree(&self) -> usize {
        self.0.iter().rposition(|c| *c != 0.0).unwrap_or(0)
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    #[inline]
    pub fn eval_c(&self, z: Complex64) -> Complex64 {
        self.0.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatTerm {
    pub q1: Poly,
    pub q2: Poly,
    pub q4: Poly,
}

impl StatTerm {
    pub fn new(q1: Poly, q2: Poly, q4: Poly) -> Self {
        StatTerm { q1, q2, q4 }
    }
}

pub type OuterFn = Arc<dyn Fn(&[Mat3]) -> f64 + Send + Sync>;

/// The outer function g.
#[derive(Clone)]
pub enum Outer {
    /// Σ_j ⟨C_j, M_j⟩_F, one coefficient matrix per term.
    Linear(Vec<Mat3>),
    Func(OuterFn),
}

impl fmt::Debug for Outer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outer::Linear(c) => f.debug_tuple("Linear").field(c).finish(),
            Outer::Func(_) => f.write_str("Func(..)"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct StatisticSpec {
    pub name: String,
    pub terms: Vec<StatTerm>,
    pub outer: Outer,
}

pub const PRESET_NAMES: [&str; 5] = ["risk", "noise_coeff", "hessian_trace", "psi_norm_sq", "psi_err_sq"];

fn entry(a: usize, b: usize, value: f64) -> Mat3 {
    let mut m = [[0.0; 3]; 3];
    m[a][b] = value;
    m
}

/// Coefficients of D = B11 − B12 − B21 + B22, scaled.
fn residual_form(scale: f64) -> Mat3 {
    [[scale, -scale, 0.0], [-scale, scale, 0.0], [0.0; 3]]
}

impl StatisticSpec {
    pub fn linear(name: &str, terms: Vec<(StatTerm, Mat3)>) -> Result<Self> {
        let (terms, coefs): (Vec<_>, Vec<_>) = terms.into_iter().unzip();
        let spec = StatisticSpec { name: name.to_string(), terms, outer: Outer::Linear(coefs) };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_fn(name: &str, terms: Vec<StatTerm>, g: OuterFn) -> Result<Self> {
        let spec = StatisticSpec { name: name.to_string(), terms, outer: Outer::Func(g) };
        spec.validate()?;
        Ok(spec)
    }

    /// The B entry (a, b), zero-based, with q1 = q2 = 1 and q4(z) = z.
    pub fn b_entry(a: usize, b: usize) -> Self {
        let t = StatTerm::new(Poly::one(), Poly::one(), Poly::z());
        Self::linear(&format!("b{}{}", a + 1, b + 1), vec![(t, entry(a, b, 1.0))]).unwrap()
    }

    pub fn risk(config: &ModelConfig) -> Self {
        let t = StatTerm::new(Poly::one(), Poly::one(), Poly::z());
        Self::linear("risk", vec![(t, residual_form(config.loss_scale))]).unwrap()
    }

    pub fn noise_coeff(config: &ModelConfig) -> Self {
        let s = config.loss_scale;
        let t = StatTerm::new(Poly::one(), Poly::one(), Poly::z());
        Self::linear("noise_coeff", vec![(t, residual_form(4.0 * s * s))]).unwrap()
    }

    pub fn psi_norm_sq() -> Self {
        let t = StatTerm::new(Poly::one(), Poly::one(), Poly::one());
        Self::linear("psi_norm_sq", vec![(t, entry(0, 0, 1.0))]).unwrap()
    }

    pub fn psi_err_sq() -> Self {
        let t = StatTerm::new(Poly::one(), Poly::one(), Poly::one());
        Self::linear("psi_err_sq", vec![(t, residual_form(1.0))]).unwrap()
    }

    /// tr ∇²R as a sum of six monomial terms in (u, v) weighted by K.
    pub fn hessian_trace(config: &ModelConfig) -> Self {
        let s = config.loss_scale;
        let (a1, b1, l1) = (2.0 * config.q11, 2.0 * config.q12, config.l1);
        let (a2, b2, l2) = (2.0 * config.q12, 2.0 * config.q22, config.l2);
        let c = 2.0 * s;
        let mono = |j: usize, k: usize, w: f64| {
            (StatTerm::new(Poly::monomial(j), Poly::monomial(k), Poly::z()), entry(2, 2, c * w))
        };
        let mut terms = vec![
            mono(2, 0, a1 * a1 + a2 * a2),
            mono(1, 1, 2.0 * (a1 * b1 + a2 * b2)),
            mono(0, 2, b1 * b1 + b2 * b2),
            mono(1, 0, 2.0 * (a1 * l1 + a2 * l2)),
            mono(0, 1, 2.0 * (b1 * l1 + b2 * l2)),
        ];
        let (t, mut m) = mono(0, 0, l1 * l1 + l2 * l2);
        let r = 4.0 * s * (config.q11 + config.q22);
        m[0][2] = r;
        m[1][2] = -r;
        terms.push((t, m));
        Self::linear("hessian_trace", terms).unwrap()
    }

    pub fn preset(name: &str, config: &ModelConfig) -> Result<Self> {
        Ok(match name {
            "risk" => Self::risk(config),
            "noise_coeff" => Self::noise_coeff(config),
            "hessian_trace" => Self::hessian_trace(config),
            "psi_norm_sq" => Self::psi_norm_sq(),
            "psi_err_sq" => Self::psi_err_sq(),
            other => return Err(DlnError::Config(format!("unknown statistic `{other}`"))),
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.terms.is_empty() {
            return Err(DlnError::Parameter(format!("statistic `{}` has no terms", self.name)));
        }
        for t in &self.terms {
            for q in [&t.q1, &t.q2, &t.q4] {
                if q.degree() > MAX_DEGREE {
                    return Err(DlnError::Parameter(format!(
                        "statistic `{}`: polynomial degree {} exceeds {MAX_DEGREE}",
                        self.name,
                        q.degree()
                    )));
                }
            }
        }
        if let Outer::Linear(c) = &self.outer {
            if c.len() != self.terms.len() {
                return Err(DlnError::Parameter(format!(
                    "statistic `{}`: {} coefficient matrices for {} terms",
                    self.name,
                    c.len(),
                    self.terms.len()
                )));
            }
        }
        Ok(())
    }

    pub fn max_degree(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| [t.q1.degree(), t.q2.degree()])
            .max()
            .unwrap_or(0)
    }

    /// Applies g to the per-term matrices.
    pub fn apply_outer(&self, m: &[Mat3]) -> f64 {
        match &self.outer {
            Outer::Linear(c) => c
                .iter()
                .zip(m)
                .map(|(c, m)| (0..3).flat_map(|a| (0..3).map(move |b| c[a][b] * m[a][b])).sum::<f64>())
                .sum(),
            Outer::Func(g) => g(m),
        }
    }

    /// Adds `weight · q1(u)q2(v)q4(k) w wᵀ` to each term's accumulator.
    #[inline]
    pub fn accumulate(&self, w: [f64; 3], u: f64, v: f64, k: f64, weight: f64, acc: &mut [Mat3]) {
        for (t, m) in self.terms.iter().zip(acc.iter_mut()) {
            let c = weight * t.q1.eval(u) * t.q2.eval(v) * t.q4.eval(k);
            for a in 0..3 {
                for b in a..3 {
                    let x = c * w[a] * w[b];
                    m[a][b] += x;
                    if b != a {
                        m[b][a] += x;
                    }
                }
            }
        }
    }
}

/// g((1/d) Wᵀ q1(U) q2(V) q4(K) W) in one sweep over coordinates.
pub fn eval_statistic(spec: &StatisticSpec, config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> Result<f64> {
    if x.d() != inst.d {
        return Err(DlnError::Dimension(format!("iterate has d={}, instance d={}", x.d(), inst.d)));
    }
    let d = inst.d;
    let mut acc = vec![[[0.0; 3]; 3]; spec.terms.len()];
    match &inst.cov {
        Covariance::Diagonal(k) => {
            for i in 0..d {
                let w = [config.psi1(x.u[i], x.v[i]), inst.beta_star[i], 1.0];
                spec.accumulate(w, x.u[i], x.v[i], k[i], 1.0, &mut acc);
                if acc.iter().flatten().flatten().any(|v| !v.is_finite()) {
                    return Err(DlnError::Overflow { coordinate: i, what: spec.name.clone() });
                }
            }
        }
        Covariance::Full(kmat) => {
            let w: Vec<[f64; 3]> =
                (0..d).map(|i| [config.psi1(x.u[i], x.v[i]), inst.beta_star[i], 1.0]).collect();
            for (t, m) in spec.terms.iter().zip(acc.iter_mut()) {
                // q4(K)W column by column with Horner's rule
                let mut kw = vec![vec![0.0; d]; 3];
                for (a, col) in kw.iter_mut().enumerate() {
                    let wa = nalgebra::DVector::from_iterator(d, w.iter().map(|r| r[a]));
                    let mut h = nalgebra::DVector::zeros(d);
                    for c in t.q4.0.iter().rev() {
                        h = kmat * h + &wa * *c;
                    }
                    col.copy_from_slice(h.as_slice());
                }
                for i in 0..d {
                    let c = t.q1.eval(x.u[i]) * t.q2.eval(x.v[i]);
                    for a in 0..3 {
                        for b in 0..3 {
                            m[a][b] += c * w[i][a] * kw[b][i];
                        }
                    }
                    if m.iter().flatten().any(|v| !v.is_finite()) {
                        return Err(DlnError::Overflow { coordinate: i, what: spec.name.clone() });
                    }
                }
            }
        }
    }
    // normalize once at the end so B entries come out bit-identical to
    // summary_matrices
    for m in acc.iter_mut() {
        for row in m.iter_mut() {
            for v in row.iter_mut() {
                *v /= d as f64;
            }
        }
    }
    let out = spec.apply_outer(&acc);
    if !out.is_finite() {
        return Err(DlnError::Overflow { coordinate: d.saturating_sub(1), what: spec.name.clone() });
    }
    Ok(out)
}

/// Named statistics, unique by name, in registration order.
#[derive(Clone, Debug, Default)]
pub struct StatRegistry {
    specs: Vec<StatisticSpec>,
}

impl StatRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<S: AsRef<str>>(names: &[S], config: &ModelConfig) -> Result<Self> {
        let mut r = Self::new();
        for n in names {
            r.register(StatisticSpec::preset(n.as_ref(), config)?)?;
        }
        Ok(r)
    }

    pub fn register(&mut self, spec: StatisticSpec) -> Result<()> {
        if self.specs.iter().any(|s| s.name == spec.name) {
            return Err(DlnError::Config(format!("duplicate statistic `{}`", spec.name)));
        }
        spec.validate()?;
        self.specs.push(spec);
        Ok(())
    }

    pub fn specs(&self) -> &[StatisticSpec] {
        &self.specs
    }

    pub fn names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn eval_all(&self, config: &ModelConfig, inst: &ProblemInstance, x: &Iterate) -> Result<Vec<f64>> {
        self.specs.iter().map(|s| eval_statistic(s, config, inst, x)).collect()
    }
}
