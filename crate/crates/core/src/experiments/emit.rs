//! CSV and JSON writers.
//!
//! CSV: one `# config {...}` line with the normalized config, then the header
//! `experiment,source,run,d,gamma,t,statistic,value` and one row per point.
//! Floats use the shortest representation that parses back to the same
//! value; diverged points print as `inf`.
//!
//! JSON: `{"config": …, "series": [{…, "points": [[t, v], …]}], "constants": […]}`
//! with non-finite values as `null`.

use std::fmt::Write as _;
use std::io::Write as _;

use serde_json::{json, Value};

use super::{ExperimentOutput, Format};
use crate::error::Result;

pub const CSV_HEADER: &str = "experiment,source,run,d,gamma,t,statistic,value";

pub fn to_csv(out: &ExperimentOutput) -> String {
    let mut s = String::new();
    let cfg = serde_json::to_string(&out.config).expect("config serializes");
    writeln!(s, "# config {cfg}").unwrap();
    writeln!(s, "{CSV_HEADER}").unwrap();
    let exp = out.config.recipe.name();
    for ser in &out.series {
        let prefix = format!("{exp},{},{},{},{:?}", ser.source.name(), ser.run, ser.d, ser.gamma);
        for (t, v) in ser.times.iter().zip(&ser.values) {
            writeln!(s, "{prefix},{t:?},{},{v:?}", ser.statistic).unwrap();
        }
    }
    s
}

pub fn to_json(out: &ExperimentOutput) -> String {
    let series: Vec<Value> = out
        .series
        .iter()
        .map(|s| {
            json!({
                "experiment": out.config.recipe.name(),
                "source": s.source.name(),
                "run": s.run.to_string(),
                "d": s.d,
                "gamma": s.gamma,
                "statistic": s.statistic,
                "points": s.times.iter().zip(&s.values).map(|(t, v)| json!([t, v])).collect::<Vec<_>>(),
            })
        })
        .collect();
    let doc = json!({ "config": out.config, "series": series, "constants": out.constants });
    serde_json::to_string_pretty(&doc).expect("output serializes")
}

/// Writes in the configured format to the configured path, or stdout.
pub fn write_output(out: &ExperimentOutput) -> Result<()> {
    let text = match out.config.output.format {
        Format::Csv => to_csv(out),
        Format::Json => to_json(out),
    };
    match &out.config.output.path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}
