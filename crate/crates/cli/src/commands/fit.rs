use std::path::PathBuf;

use clap::Args;
use jmrp_core::model::io::load_records;
use jmrp_core::model::{AdjacencyGraph, Dataset, Modality, ModelSpec};
use jmrp_core::sampler::{diagnostics, sample_model, SamplerConfig};

use super::{out_path, parse_config, require_file, resolve_seed, write_json};
use crate::manifest::ManifestBuilder;
use crate::{CliError, GlobalOpts, EXIT_CONVERGENCE};

/// Any split R-hat at or above this fails the run (artifacts are still written).
pub const RHAT_HARD_FAIL: f64 = 1.2;

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Survey records CSV
    #[arg(long)]
    pub data: PathBuf,
    /// Edge list CSV (`from,to`)
    #[arg(long)]
    pub graph: PathBuf,
    /// Model specification (JSON or TOML)
    #[arg(long)]
    pub model: PathBuf,
    /// Fit the phone-only model on MP records (no modality terms)
    #[arg(long)]
    pub phone_only: bool,
}

pub fn run(global: &GlobalOpts, args: &FitArgs) -> Result<(), CliError> {
    for p in [&args.data, &args.graph, &args.model] {
        require_file(p)?;
    }
    let mut conf: SamplerConfig = match &global.config {
        Some(p) => parse_config(p)?,
        None => SamplerConfig::default(),
    };
    let (master, derived) = resolve_seed(global, "fit", conf.seed);
    conf.seed = derived;
    conf.validate()?;

    let mut spec = ModelSpec::load(&args.model)?;
    let mut records = load_records(&args.data, &spec)?;
    if args.phone_only {
        spec = spec.phone_only();
        records.retain(|r| r.modality == Modality::Mp);
    }
    let graph = AdjacencyGraph::load_csv(&args.graph, spec.districts)?;
    let data = Dataset::new(records, spec, graph)?;

    let mut manifest = ManifestBuilder::new("fit", global.config.as_deref(), master, derived);
    manifest.input(&args.data);
    manifest.input(&args.graph);
    manifest.input(&args.model);

    let draws = sample_model(&data, &conf, global.threads.max(1))?;
    let report = diagnostics(&draws);

    let csv = out_path(global, "draws.csv");
    let side = out_path(global, "draws.json");
    draws.save(&csv, &side)?;
    manifest.output(&csv);
    manifest.output(&side);
    let diag = out_path(global, "diagnostics.json");
    write_json(&diag, &report)?;
    manifest.output(&diag);
    manifest.finish(&global.out_dir)?;

    if let Some(r) = report.max_rhat.filter(|r| *r >= RHAT_HARD_FAIL) {
        return Err(CliError {
            code: EXIT_CONVERGENCE,
            message: format!("max split R-hat {r:.3} is at or above {RHAT_HARD_FAIL}; draws written but unusable"),
        });
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}
