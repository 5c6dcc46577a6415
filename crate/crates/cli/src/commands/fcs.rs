use std::path::PathBuf;

use clap::Args;
use jmrp_core::indicators::{score_csv, FcsThresholds};

use super::{create, out_path, require_file};
use crate::manifest::ManifestBuilder;
use crate::{CliError, GlobalOpts};

#[derive(Debug, Args)]
pub struct FcsArgs {
    /// CSV with one column per food group (7-day frequencies)
    #[arg(long)]
    pub input: PathBuf,
    /// Threshold preset: `standard` or `zimbabwe`
    #[arg(long, default_value = "standard")]
    pub preset: String,
    /// Custom upper bound of the poor class (with --borderline-max)
    #[arg(long, requires = "borderline_max")]
    pub poor_max: Option<f64>,
    #[arg(long, requires = "poor_max")]
    pub borderline_max: Option<f64>,
}

pub fn run(global: &GlobalOpts, args: &FcsArgs) -> Result<(), CliError> {
    require_file(&args.input)?;
    let th = match (args.poor_max, args.borderline_max) {
        (Some(p), Some(b)) => FcsThresholds::custom(p, b)?,
        _ => FcsThresholds::from_preset(&args.preset)?,
    };
    let mut manifest = ManifestBuilder::new("fcs", global.config.as_deref(), global.seed.unwrap_or(0), 0);
    manifest.input(&args.input);
    let file = std::fs::File::open(&args.input).map_err(|e| CliError::io(&args.input, e))?;
    let p = out_path(global, "fcs.csv");
    let rows = score_csv(std::io::BufReader::new(file), create(&p)?, &th)?;
    manifest.output(&p);
    manifest.finish(&global.out_dir)?;
    eprintln!("scored {rows} households");
    Ok(())
}
