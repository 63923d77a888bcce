//! Experiment configuration, recipe defaults, overrides and validation.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::entropy::{h0, Barrier};
use crate::error::{DlnError, Result};
use crate::model::{ModelConfig, Preset};
use crate::sde::{DEFAULT_DT, MAX_DT, NONDIAG_MAX_D};
use crate::spectra::SpectrumSpec;
use crate::statistic::StatRegistry;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    Fig1Left,
    Fig1Mid,
    Fig1Right,
    Fig2Curvature,
    Fig3Nondiag,
    Fig4SdeGap,
    Fig5Entropy,
    Custom,
}

impl Recipe {
    pub const ALL: [Recipe; 8] = [
        Recipe::Fig1Left,
        Recipe::Fig1Mid,
        Recipe::Fig1Right,
        Recipe::Fig2Curvature,
        Recipe::Fig3Nondiag,
        Recipe::Fig4SdeGap,
        Recipe::Fig5Entropy,
        Recipe::Custom,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Recipe::Fig1Left => "fig1_left",
            Recipe::Fig1Mid => "fig1_mid",
            Recipe::Fig1Right => "fig1_right",
            Recipe::Fig2Curvature => "fig2_curvature",
            Recipe::Fig3Nondiag => "fig3_nondiag",
            Recipe::Fig4SdeGap => "fig4_sde_gap",
            Recipe::Fig5Entropy => "fig5_entropy",
            Recipe::Custom => "custom",
        }
    }
}

impl std::str::FromStr for Recipe {
    type Err = DlnError;
    fn from_str(s: &str) -> Result<Self> {
        Recipe::ALL
            .iter()
            .find(|r| r.name() == s)
            .copied()
            .ok_or_else(|| DlnError::Config(format!("unknown recipe `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Sgd,
    Hsgd,
    Sgf,
    Nondiag,
    Theory,
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Source::Sgd => "sgd",
            Source::Hsgd => "hsgd",
            Source::Sgf => "sgf",
            Source::Nondiag => "nondiag",
            Source::Theory => "theory",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Signal {
    Ones,
    /// β*_i = 1 for the first `k` coordinates, 0 after.
    Sparse { k: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Init {
    pub u0: f64,
    pub v0: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryBackend {
    MeanField,
    ContourPde,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryOptions {
    pub backend: TheoryBackend,
    /// Total mean-field particle budget, split evenly over coordinate groups.
    pub particles: usize,
    /// Mean-field time step.
    pub dt: f64,
    pub pde_dt: f64,
    #[serde(rename = "M")]
    pub contour_m: f64,
    #[serde(rename = "N")]
    pub contour_n: usize,
}

impl Default for TheoryOptions {
    fn default() -> Self {
        TheoryOptions {
            backend: TheoryBackend::MeanField,
            particles: 200_000,
            dt: DEFAULT_DT,
            pde_dt: 1e-3,
            contour_m: 1.3,
            contour_n: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntropyOptions {
    pub delta: f64,
    pub h_min: f64,
    pub h_star: f64,
    pub l_star: f64,
    pub lower_quantile: f64,
    pub upper_quantile: f64,
}

impl Default for EntropyOptions {
    fn default() -> Self {
        let b = Barrier::default();
        EntropyOptions {
            delta: 0.5,
            h_min: b.h_min,
            h_star: b.h_star,
            l_star: b.l_star,
            lower_quantile: 0.01,
            upper_quantile: 0.99,
        }
    }
}

impl EntropyOptions {
    pub fn barrier(&self) -> Barrier {
        Barrier { h_min: self.h_min, h_star: self.h_star, l_star: self.l_star }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputOptions {
    /// None writes to stdout.
    pub path: Option<String>,
    pub format: Format,
}

/// Everything an experiment needs. Field order fixes the echo's key order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub recipe: Recipe,
    pub model: Preset,
    pub spectrum: SpectrumSpec,
    pub signal: Signal,
    pub init: Init,
    pub d: Vec<usize>,
    pub gamma: Vec<f64>,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub runs: usize,
    pub seed: u64,
    /// SDE time step.
    pub dt: f64,
    pub record_points: usize,
    pub sources: Vec<Source>,
    pub stats: Vec<String>,
    pub theory: TheoryOptions,
    pub entropy: EntropyOptions,
    pub output: OutputOptions,
}

impl ExperimentConfig {
    /// Fully specified defaults for a recipe.
    pub fn recipe(recipe: Recipe) -> Self {
        let mut c = ExperimentConfig {
            recipe,
            model: Preset::Squared,
            spectrum: SpectrumSpec::Identity,
            signal: Signal::Ones,
            init: Init { u0: 0.6, v0: 0.6 },
            d: vec![100],
            gamma: vec![0.1],
            horizon: 10.0,
            runs: 30,
            seed: 0,
            dt: DEFAULT_DT,
            record_points: 512,
            sources: vec![Source::Sgd, Source::Theory],
            stats: vec!["risk".into()],
            theory: TheoryOptions::default(),
            entropy: EntropyOptions::default(),
            output: OutputOptions { path: None, format: Format::Csv },
        };
        match recipe {
            Recipe::Custom => {}
            Recipe::Fig1Left => {
                c.d = vec![100, 400, 1600];
            }
            Recipe::Fig1Mid => {
                c.model = Preset::Hadamard;
                c.spectrum = SpectrumSpec::PowerLaw { exponent: 0.7, seed: 0 };
                c.init = Init { u0: 2.0, v0: 0.0 };
                c.d = vec![1000];
                c.gamma = vec![1.1];
                c.sources = vec![Source::Sgd, Source::Hsgd];
            }
            Recipe::Fig1Right => {
                c.d = vec![1000];
                c.gamma = vec![0.05, 0.1, 0.2, 0.4, 0.8, 1.2, 1.6];
                c.sources = vec![Source::Sgd, Source::Hsgd];
            }
            Recipe::Fig2Curvature => {
                c.model = Preset::Hadamard;
                c.d = vec![100, 400, 1600];
                c.stats = vec!["risk".into(), "hessian_trace".into()];
                c.theory.contour_m = 1.0;
                c.theory.contour_n = 300;
            }
            Recipe::Fig3Nondiag => {
                c.model = Preset::Hadamard;
                c.spectrum = SpectrumSpec::MarchenkoPastur { sigma: 1.0, diagonal_only: false, seed: 0 };
                c.init = Init { u0: 2.0, v0: 0.0 };
                c.d = vec![100, 400];
                c.gamma = vec![0.2];
                c.sources = vec![Source::Sgd, Source::Nondiag];
            }
            Recipe::Fig4SdeGap => {
                c.signal = Signal::Sparse { k: 5 };
                c.init = Init { u0: 0.1, v0: 0.1 };
                c.gamma = vec![0.04, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9];
                c.horizon = 20.0;
                c.sources = vec![Source::Sgd, Source::Hsgd, Source::Sgf];
            }
            Recipe::Fig5Entropy => {
                c.init = Init { u0: 1.0, v0: 1.0 };
                c.d = vec![1000];
                c.gamma = vec![0.04, 0.03, 0.02, 0.01, 0.005, 0.001];
                c.horizon = 30.0;
                c.sources = vec![Source::Hsgd];
            }
        }
        c
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig::preset(self.model)
    }

    pub fn has(&self, s: Source) -> bool {
        self.sources.contains(&s)
    }

    /// Checks everything that can be checked before any compute.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DlnError::Config(m));
        if self.d.is_empty() || self.d.contains(&0) {
            return bad("d must be a nonempty list of positive integers".into());
        }
        if self.gamma.is_empty() || self.gamma.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return bad("gamma must be a nonempty list of finite nonnegative values".into());
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return bad(format!("T must be positive, got {}", self.horizon));
        }
        if !(self.dt > 0.0 && self.dt <= MAX_DT) {
            return bad(format!("dt must lie in (0, 1/16], got {}", self.dt));
        }
        if self.record_points < 2 {
            return bad("record_points must be at least 2".into());
        }
        if self.sources.is_empty() {
            return bad("at least one source is required".into());
        }
        for (i, s) in self.sources.iter().enumerate() {
            if self.sources[..i].contains(s) {
                return bad(format!("duplicate source `{}`", s.name()));
            }
        }
        if self.stats.is_empty() {
            return bad("at least one statistic is required".into());
        }
        StatRegistry::from_names(&self.stats, &self.model_config()).map_err(|e| DlnError::Config(e.to_string()))?;
        if !(self.init.u0.is_finite() && self.init.v0.is_finite()) {
            return bad("init must be finite".into());
        }
        if let Signal::Sparse { k } = self.signal {
            if let Some(d) = self.d.iter().find(|d| **d < k) {
                return bad(format!("sparse signal with k = {k} does not fit d = {d}"));
            }
        }
        let full_cov = matches!(self.spectrum, SpectrumSpec::MarchenkoPastur { diagonal_only: false, .. });
        if full_cov {
            for s in [Source::Hsgd, Source::Sgf, Source::Theory] {
                if self.has(s) {
                    return bad(format!("source `{}` needs a diagonal covariance", s.name()));
                }
            }
        }
        if self.has(Source::Nondiag) {
            if let Some(d) = self.d.iter().find(|d| **d > NONDIAG_MAX_D) {
                return bad(format!("nondiag source is limited to d <= {NONDIAG_MAX_D}, got {d}"));
            }
        }
        if self.has(Source::Theory) {
            let t = &self.theory;
            if t.particles < 2 || !(t.dt > 0.0 && t.pde_dt > 0.0) {
                return bad("theory needs particles >= 2 and positive time steps".into());
            }
            if !(t.contour_m > 0.0) || t.contour_n < 8 {
                return bad("contour needs M > 0 and N >= 8".into());
            }
            if t.backend == TheoryBackend::ContourPde && self.init.u0.abs().max(self.init.v0.abs()) >= t.contour_m {
                return bad(format!("contour radius M = {} does not enclose the initialization", t.contour_m));
            }
        }
        if self.recipe == Recipe::Fig5Entropy {
            let iso = self.model == Preset::Squared
                && self.spectrum.is_identity()
                && self.signal == Signal::Ones
                && self.init == (Init { u0: 1.0, v0: 1.0 });
            if !iso {
                return bad("entropy recipe needs the squared model, identity spectrum, ones signal and u0 = v0 = 1".into());
            }
            if self.sources != [Source::Hsgd] {
                return bad("entropy recipe runs on hsgd paths only".into());
            }
            let e = &self.entropy;
            if !(e.delta > 0.0 && e.delta < 1.0) || e.h_star <= h0() || e.l_star <= h0() {
                return bad("entropy needs delta in (0, 1) and barriers above H0".into());
            }
            if !(0.0 <= e.lower_quantile && e.lower_quantile <= e.upper_quantile && e.upper_quantile <= 1.0) {
                return bad("entropy quantiles must satisfy 0 <= lower <= upper <= 1".into());
            }
            if self.runs == 0 {
                return bad("entropy recipe needs runs >= 1".into());
            }
        }
        Ok(())
    }

    /// Canonical JSON: defaults filled, fixed key order.
    pub fn echo(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Builds a config from a recipe plus a partial JSON object of overrides.
/// Nested objects merge key by key; unknown keys are rejected.
pub fn config_from_value(recipe: Option<Recipe>, overrides: &Value) -> Result<ExperimentConfig> {
    let obj = match overrides {
        Value::Object(m) => m.clone(),
        Value::Null => Map::new(),
        _ => return Err(DlnError::Config("config must be a JSON object".into())),
    };
    let from_file = match obj.get("recipe") {
        Some(Value::String(s)) => Some(s.parse::<Recipe>()?),
        Some(_) => return Err(DlnError::Config("`recipe` must be a string".into())),
        None => None,
    };
    let recipe = match (recipe, from_file) {
        (Some(a), Some(b)) if a != b => {
            return Err(DlnError::Config(format!("recipe `{}` conflicts with config file `{}`", a.name(), b.name())))
        }
        (a, b) => a.or(b).unwrap_or(Recipe::Custom),
    };
    let mut base = serde_json::to_value(ExperimentConfig::recipe(recipe)).expect("config serializes");
    merge(&mut base, Value::Object(obj));
    let cfg: ExperimentConfig = serde_json::from_value(base).map_err(|e| DlnError::Config(e.to_string()))?;
    Ok(cfg)
}

/// Parses, fills defaults, validates and returns the canonical echo.
pub fn validate_and_echo(json: &str) -> Result<String> {
    let v: Value = if json.trim().is_empty() {
        Value::Null
    } else {
        serde_json::from_str(json).map_err(|e| DlnError::Config(e.to_string()))?
    };
    let cfg = config_from_value(None, &v)?;
    cfg.validate()?;
    Ok(cfg.echo())
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // tagged enums are replaced whole so their variant can change
                    Some(slot @ Value::Object(_)) if v.is_object() && !v.get("kind").is_some() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Applies a dotted `key=value` assignment, e.g. `theory.particles=50000`.
/// The value is parsed as JSON when possible and as a string otherwise.
pub fn set_param(target: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| DlnError::Config(format!("--param expects key=value, got `{assignment}`")))?;
    let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = target;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        if !cur.is_object() {
            *cur = Value::Object(Map::new());
        }
        cur = cur.as_object_mut().unwrap().entry(p.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    if !cur.is_object() {
        *cur = Value::Object(Map::new());
    }
    cur.as_object_mut().unwrap().insert(parts[parts.len() - 1].to_string(), val);
    Ok(())
}

/// Short spectrum forms: `identity`, `power_law:0.7`, `mp:1.0` (full
/// matrix), `mp_diag:1.0`, or a JSON object.
pub fn parse_spectrum(s: &str) -> Result<SpectrumSpec> {
    if s.trim_start().starts_with('{') {
        return serde_json::from_str(s).map_err(|e| DlnError::Config(e.to_string()));
    }
    let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
    let num = |what: &str| -> Result<f64> {
        arg.parse().map_err(|_| DlnError::Config(format!("spectrum `{kind}` needs a numeric {what}")))
    };
    match kind {
        "identity" => Ok(SpectrumSpec::Identity),
        "power_law" => Ok(SpectrumSpec::PowerLaw { exponent: num("exponent")?, seed: 0 }),
        "mp" => Ok(SpectrumSpec::MarchenkoPastur { sigma: num("sigma")?, diagonal_only: false, seed: 0 }),
        "mp_diag" => Ok(SpectrumSpec::MarchenkoPastur { sigma: num("sigma")?, diagonal_only: true, seed: 0 }),
        _ => Err(DlnError::Config(format!("unknown spectrum `{s}`"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn empty_custom_is_defaults() {
        let echo = validate_and_echo("").unwrap();
        assert_eq!(echo, ExperimentConfig::recipe(Recipe::Custom).echo());
        assert_eq!(validate_and_echo("{}").unwrap(), echo);
    }

    #[test]
    fn fig1_left_echo_has_sde_dt() {
        let echo = validate_and_echo(r#"{"recipe": "fig1_left"}"#).unwrap();
        let v: Value = serde_json::from_str(&echo).unwrap();
        assert_eq!(v["dt"], json!(0.00390625));
        assert_eq!(v["d"], json!([100, 400, 1600]));
    }

    #[test]
    fn echo_is_stable() {
        let a = validate_and_echo(r#"{"gamma": [0.2], "theory": {"particles": 1000}}"#).unwrap();
        let b = validate_and_echo(r#"{"theory": {"particles": 1000}, "gamma": [0.2]}"#).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_field() {
        assert!(matches!(validate_and_echo(r#"{"gama": [0.1]}"#), Err(DlnError::Config(_))));
        assert!(matches!(validate_and_echo(r#"{"theory": {"n": 3}}"#), Err(DlnError::Config(_))));
    }

    #[test]
    fn duplicate_stats() {
        assert!(matches!(validate_and_echo(r#"{"stats": ["risk", "risk"]}"#), Err(DlnError::Config(_))));
    }

    #[test]
    fn entropy_needs_isotropic() {
        let v = json!({"recipe": "fig5_entropy", "spectrum": {"kind": "power_law", "exponent": 0.5}});
        let c = config_from_value(None, &v).unwrap();
        assert!(matches!(c.validate(), Err(DlnError::Config(_))));
    }

    #[test]
    fn params_and_spectra() {
        let mut v = json!({});
        set_param(&mut v, "theory.particles=5000").unwrap();
        set_param(&mut v, "output.format=json").unwrap();
        let c = config_from_value(None, &v).unwrap();
        assert_eq!(c.theory.particles, 5000);
        assert_eq!(c.output.format, Format::Json);
        assert_eq!(parse_spectrum("power_law:0.7").unwrap(), SpectrumSpec::PowerLaw { exponent: 0.7, seed: 0 });
        assert!(parse_spectrum("mp").is_err());
    }

    #[test]
    fn recipe_conflict() {
        assert!(config_from_value(Some(Recipe::Fig1Left), &json!({"recipe": "fig4_sde_gap"})).is_err());
    }
}
