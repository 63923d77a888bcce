use std::io::Write;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use dln::experiments::{self, config_from_value, parse_spectrum, set_param, Recipe};
use dln::DlnError;

#[derive(Parser)]
#[command(name = "dln", version, about = "SGD on diagonal linear networks: simulation, theory curves, entropy analysis")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one dynamics: sgd, hsgd, sgf or nondiag.
    Simulate {
        dynamics: String,
        #[command(flatten)]
        common: Common,
    },
    /// Deterministic curve: meanfield or pde.
    Theory {
        backend: String,
        #[command(flatten)]
        common: Common,
    },
    /// Entropy-barrier pipeline (isotropic squared model).
    Entropy {
        #[command(flatten)]
        common: Common,
    },
    /// Run a named recipe.
    Experiment {
        recipe: String,
        /// JSON file with config overrides.
        #[arg(long)]
        config: Option<String>,
        /// Print the normalized config and exit.
        #[arg(long)]
        echo: bool,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Comma-separated dimensions.
    #[arg(long)]
    d: Option<String>,
    /// Comma-separated stepsizes.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long = "T")]
    horizon: Option<f64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Sets u0 = v0 = alpha.
    #[arg(long)]
    alpha: Option<f64>,
    /// identity | power_law:<exp> | mp:<sigma> | mp_diag:<sigma> | JSON.
    #[arg(long)]
    spectrum: Option<String>,
    /// Dotted config override, e.g. theory.particles=50000. Repeatable.
    #[arg(long)]
    param: Vec<String>,
    #[arg(long = "contour-M")]
    contour_m: Option<f64>,
    #[arg(long = "contour-N")]
    contour_n: Option<usize>,
    /// Comma-separated statistic names.
    #[arg(long)]
    stats: Option<String>,
    #[arg(long)]
    out: Option<String>,
    /// csv | json
    #[arg(long)]
    format: Option<String>,
    #[arg(long, env = "DLN_THREADS")]
    threads: Option<usize>,
}

fn list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, DlnError> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| DlnError::Config(format!("bad {what} value `{x}`"))))
        .collect()
}

impl Common {
    fn overlay(&self, v: &mut Value) -> Result<(), DlnError> {
        let obj = v.as_object_mut().expect("overrides are an object");
        if let Some(d) = &self.d {
            obj.insert("d".into(), json!(list::<usize>(d, "d")?));
        }
        if let Some(g) = &self.gamma {
            obj.insert("gamma".into(), json!(list::<f64>(g, "gamma")?));
        }
        if let Some(t) = self.horizon {
            obj.insert("T".into(), json!(t));
        }
        if let Some(r) = self.runs {
            obj.insert("runs".into(), json!(r));
        }
        if let Some(s) = self.seed {
            obj.insert("seed".into(), json!(s));
        }
        if let Some(dt) = self.dt {
            obj.insert("dt".into(), json!(dt));
        }
        if let Some(a) = self.alpha {
            obj.insert("init".into(), json!({ "u0": a, "v0": a }));
        }
        if let Some(s) = &self.spectrum {
            obj.insert("spectrum".into(), serde_json::to_value(parse_spectrum(s)?).unwrap());
        }
        if let Some(s) = &self.stats {
            obj.insert("stats".into(), json!(s.split(',').map(str::trim).collect::<Vec<_>>()));
        }
        if let Some(m) = self.contour_m {
            set_param(v, &format!("theory.M={m}"))?;
        }
        if let Some(n) = self.contour_n {
            set_param(v, &format!("theory.N={n}"))?;
        }
        if let Some(o) = &self.out {
            set_param(v, &format!("output.path={}", json!(o)))?;
        }
        if let Some(f) = &self.format {
            if f != "csv" && f != "json" {
                return Err(DlnError::Config(format!("unknown format `{f}`")));
            }
            set_param(v, &format!("output.format={f}"))?;
        }
        for p in &self.param {
            set_param(v, p)?;
        }
        Ok(())
    }
}

fn run(cli: Cli) -> Result<(), DlnError> {
    let mut v = json!({});
    let (recipe, common, echo) = match &cli.cmd {
        Cmd::Simulate { dynamics, common } => {
            if !matches!(dynamics.as_str(), "sgd" | "hsgd" | "sgf" | "nondiag") {
                return Err(DlnError::Config(format!("unknown dynamics `{dynamics}`")));
            }
            v["sources"] = json!([dynamics]);
            (Recipe::Custom, common, false)
        }
        Cmd::Theory { backend, common } => {
            let b = match backend.as_str() {
                "meanfield" => "mean_field",
                "pde" => "contour_pde",
                other => return Err(DlnError::Config(format!("unknown theory backend `{other}`"))),
            };
            v["sources"] = json!(["theory"]);
            v["runs"] = json!(0);
            v["theory"] = json!({ "backend": b });
            (Recipe::Custom, common, false)
        }
        Cmd::Entropy { common } => (Recipe::Fig5Entropy, common, false),
        Cmd::Experiment { recipe, config, echo, common } => {
            if let Some(path) = config {
                let text = std::fs::read_to_string(path)?;
                v = serde_json::from_str(&text).map_err(|e| DlnError::Config(format!("{path}: {e}")))?;
                if !v.is_object() {
                    return Err(DlnError::Config(format!("{path}: config must be a JSON object")));
                }
            }
            (recipe.parse()?, common, *echo)
        }
    };
    common.overlay(&mut v)?;
    let cfg = config_from_value(Some(recipe), &v)?;
    cfg.validate()?;
    if echo {
        let mut text = cfg.echo();
        text.push('\n');
        std::io::stdout().lock().write_all(text.as_bytes())?;
        return Ok(());
    }
    let out = experiments::run_experiment_with_threads(&cfg, common.threads)?;
    experiments::write_output(&out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dln: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
