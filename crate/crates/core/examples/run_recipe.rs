//! Runs a named recipe with JSON overrides and writes the CSV the plotting
//! scripts read.
//!
//! `cargo run --release --example run_recipe -- fig1_right out.csv`

use dln::experiments::{config_from_value, run_experiment, to_csv, Recipe};
use serde_json::json;

fn main() -> dln::Result<()> {
    let mut args = std::env::args().skip(1);
    let recipe: Recipe = args.next().as_deref().unwrap_or("fig1_right").parse()?;
    let path = args.next().unwrap_or_else(|| format!("{}.csv", recipe.name()));
    // a quick version of the recipe
    let cfg = config_from_value(Some(recipe), &json!({ "runs": 5, "T": 2.0, "record_points": 33, "theory": { "particles": 20000 } }))?;
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    let csv = to_csv(&out);
    std::fs::write(&path, &csv)?;
    println!("{} series, {} rows written to {path}", out.series.len(), csv.lines().count() - 2);
    Ok(())
}
