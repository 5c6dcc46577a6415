use std::path::PathBuf;

use clap::Args;
use jmrp_core::model::ModelSpec;
use jmrp_core::weights::{rake, MarginTarget, PostStratTable, Provenance, DEFAULT_MAX_ITER, DEFAULT_TOL};

use super::{out_path, require_file, write_json};
use crate::manifest::ManifestBuilder;
use crate::{CliError, GlobalOpts};

#[derive(Debug, Args)]
pub struct RakeArgs {
    /// Prior poststratification table CSV
    #[arg(long)]
    pub table: PathBuf,
    /// Model specification supplying the covariate schema
    #[arg(long)]
    pub model: PathBuf,
    /// JSON array of margin targets
    #[arg(long)]
    pub targets: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITER)]
    pub max_iter: usize,
}

pub fn run(global: &GlobalOpts, args: &RakeArgs) -> Result<(), CliError> {
    for p in [&args.table, &args.model, &args.targets] {
        require_file(p)?;
    }
    let spec = ModelSpec::load(&args.model)?;
    let prior = PostStratTable::load(&args.table, &spec, Provenance::FrequencyCounts)?;
    let targets = MarginTarget::load_all(&args.targets)?;
    let mut manifest = ManifestBuilder::new("rake", global.config.as_deref(), global.seed.unwrap_or(0), 0);
    manifest.input(&args.table);
    manifest.input(&args.model);
    manifest.input(&args.targets);

    let outcome = rake(&prior, &targets, args.tol, args.max_iter)?;
    let p = out_path(global, "raked_table.csv");
    outcome.table.save(&p)?;
    manifest.output(&p);
    let p = out_path(global, "rake.json");
    write_json(&p, &serde_json::json!({ "cycles": outcome.cycles, "residual": outcome.residual }))?;
    manifest.output(&p);
    manifest.finish(&global.out_dir)?;
    Ok(())
}
