use std::path::PathBuf;

use clap::Args;
use jmrp_core::indicators::{fit_phone_ownership, impute_phone_prob, OwnershipRow};
use jmrp_core::model::io::{load_records, save_records};
use jmrp_core::model::ModelSpec;
use jmrp_core::sampler::SamplerConfig;

use super::{out_path, parse_config, require_file, resolve_seed};
use crate::manifest::ManifestBuilder;
use crate::{CliError, GlobalOpts};

#[derive(Debug, Args)]
pub struct ImputeArgs {
    /// Survey records; F2F rows with a 0/1 `phone_prob` train the ownership model
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
}

pub fn run(global: &GlobalOpts, args: &ImputeArgs) -> Result<(), CliError> {
    require_file(&args.data)?;
    require_file(&args.model)?;
    let mut conf: SamplerConfig = match &global.config {
        Some(p) => parse_config(p)?,
        None => SamplerConfig::default(),
    };
    let (master, derived) = resolve_seed(global, "impute-phone", conf.seed);
    conf.seed = derived;
    conf.validate()?;
    let spec = ModelSpec::load(&args.model)?;
    let records = load_records(&args.data, &spec)?;
    let mut manifest = ManifestBuilder::new("impute-phone", global.config.as_deref(), master, derived);
    manifest.input(&args.data);
    manifest.input(&args.model);

    let rows = OwnershipRow::from_records(&records)?;
    let model = fit_phone_ownership(&rows, &spec, &conf, global.threads.max(1))?;
    let imputed = impute_phone_prob(&records, &model)?;

    let p = out_path(global, "data_imputed.csv");
    save_records(&p, &spec, &imputed)?;
    manifest.output(&p);
    let p = out_path(global, "phone_model.json");
    model.save(&p)?;
    manifest.output(&p);
    manifest.finish(&global.out_dir)?;
    Ok(())
}
