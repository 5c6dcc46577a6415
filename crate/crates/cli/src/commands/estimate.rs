use std::path::{Path, PathBuf};

use clap::Args;
use jmrp_core::estimators::{direct_series, full_series, mr_series, DrawMode, EstimateSeries, EstimatorTag};
use jmrp_core::model::io::load_records;
use jmrp_core::model::{Modality, ModelSpec, SurveyRecord};
use jmrp_core::sampler::PosteriorDraws;
use jmrp_core::weights::{PostStratTable, Provenance};

use super::{create, out_path, require_file, resolve_seed};
use crate::manifest::{derive_seed, ManifestBuilder};
use crate::{CliError, GlobalOpts};

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Model specification used for the fits
    #[arg(long)]
    pub model: PathBuf,
    /// Survey records CSV (direct and MR-family estimators)
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Draws of the joint fit
    #[arg(long)]
    pub draws: Option<PathBuf>,
    /// Draws of the phone-only fit
    #[arg(long)]
    pub mp_draws: Option<PathBuf>,
    /// Poststratification table CSV
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Comma-separated estimator tags; defaults to every estimator whose inputs were given
    #[arg(long, value_delimiter = ',')]
    pub estimators: Option<Vec<String>>,
    /// `bernoulli` or `rate`
    #[arg(long, default_value = "bernoulli")]
    pub draw_mode: String,
    /// Modality the joint poststratified estimate is standardised to
    #[arg(long, default_value = "F2F")]
    pub modality: String,
    /// Also write per-draw series of the model-based estimators
    #[arg(long)]
    pub emit_draws: bool,
}

struct Inputs {
    spec: ModelSpec,
    records: Option<Vec<SurveyRecord>>,
    draws: Option<PosteriorDraws>,
    mp_draws: Option<PosteriorDraws>,
    table: Option<PostStratTable>,
}

/// Input files each estimator needs, by flag name.
fn requirements(tag: EstimatorTag) -> &'static [&'static str] {
    match tag {
        EstimatorTag::DirectF2f | EstimatorTag::DirectMp => &["--data"],
        EstimatorTag::Mr => &["--data", "--mp-draws"],
        EstimatorTag::Mrp => &["--table", "--mp-draws"],
        EstimatorTag::JmrMp | EstimatorTag::JmrF2f => &["--data", "--draws"],
        EstimatorTag::Jmrp => &["--table", "--draws"],
    }
}

fn given(args: &EstimateArgs, flag: &str) -> bool {
    match flag {
        "--data" => args.data.is_some(),
        "--draws" => args.draws.is_some(),
        "--mp-draws" => args.mp_draws.is_some(),
        "--table" => args.table.is_some(),
        _ => false,
    }
}

fn selected(args: &EstimateArgs) -> Result<Vec<EstimatorTag>, CliError> {
    let Some(list) = &args.estimators else {
        return Ok(EstimatorTag::ALL
            .into_iter()
            .filter(|t| requirements(*t).iter().all(|f| given(args, f)))
            .collect());
    };
    let mut tags = Vec::new();
    for name in list.iter().filter(|s| !s.trim().is_empty()) {
        let tag: EstimatorTag = name.parse()?;
        let missing: Vec<&str> = requirements(tag).iter().copied().filter(|f| !given(args, f)).collect();
        if !missing.is_empty() {
            return Err(CliError::config(format!("estimator '{tag}' needs {}", missing.join(", "))));
        }
        if !tags.contains(&tag) {
            tags.push(tag);
        }
    }
    // Output blocks follow the canonical estimator order.
    tags.sort();
    Ok(tags)
}

fn load_inputs(args: &EstimateArgs, manifest: &mut ManifestBuilder) -> Result<Inputs, CliError> {
    let mut opt = |p: &Option<PathBuf>| -> Result<Option<PathBuf>, CliError> {
        match p {
            Some(p) => {
                require_file(p)?;
                manifest.input(p);
                Ok(Some(p.clone()))
            }
            None => Ok(None),
        }
    };
    let model = opt(&Some(args.model.clone()))?.expect("model is required");
    let data = opt(&args.data)?;
    let draws = opt(&args.draws)?;
    let mp_draws = opt(&args.mp_draws)?;
    let table = opt(&args.table)?;
    let spec = ModelSpec::load(&model)?;
    let load_draws = |p: &Path| PosteriorDraws::load(p, None);
    Ok(Inputs {
        records: data.as_deref().map(|p| load_records(p, &spec)).transpose()?,
        draws: draws.as_deref().map(load_draws).transpose()?,
        mp_draws: mp_draws.as_deref().map(load_draws).transpose()?,
        table: table
            .as_deref()
            .map(|p| PostStratTable::load(p, &spec, Provenance::FrequencyCounts))
            .transpose()?,
        spec,
    })
}

pub fn run(global: &GlobalOpts, args: &EstimateArgs) -> Result<(), CliError> {
    let tags = selected(args)?;
    if tags.is_empty() {
        return Err(CliError::config("no estimator can run with the inputs given"));
    }
    let mode: DrawMode = args.draw_mode.parse()?;
    let modality: Modality = args.modality.parse()?;
    let (master, derived) = resolve_seed(global, "estimate", 0);
    let mut manifest = ManifestBuilder::new("estimate", global.config.as_deref(), master, derived);
    let inp = load_inputs(args, &mut manifest)?;
    let spec = &inp.spec;
    let phone_spec = spec.phone_only();

    let mut all = EstimateSeries::default();
    for tag in tags {
        let seed = derive_seed(derived, tag.as_str());
        let keep = args.emit_draws;
        // Presence of each input was checked when the estimator set was chosen.
        let series = match tag {
            EstimatorTag::DirectF2f => direct_series(inp.records.as_deref().unwrap(), spec, Modality::F2f)?,
            EstimatorTag::DirectMp => direct_series(inp.records.as_deref().unwrap(), spec, Modality::Mp)?,
            EstimatorTag::Mr => mr_series(
                inp.mp_draws.as_ref().unwrap(),
                &phone_spec,
                inp.records.as_deref().unwrap(),
                tag,
                mode,
                seed,
                keep,
            )?,
            EstimatorTag::JmrMp | EstimatorTag::JmrF2f => mr_series(
                inp.draws.as_ref().unwrap(),
                spec,
                inp.records.as_deref().unwrap(),
                tag,
                mode,
                seed,
                keep,
            )?,
            EstimatorTag::Mrp => full_series(
                inp.mp_draws.as_ref().unwrap(),
                &phone_spec,
                inp.table.as_ref().unwrap(),
                tag,
                Modality::Mp,
                mode,
                seed,
                keep,
            )?,
            EstimatorTag::Jmrp => full_series(
                inp.draws.as_ref().unwrap(),
                spec,
                inp.table.as_ref().unwrap(),
                tag,
                modality,
                mode,
                seed,
                keep,
            )?,
        };
        all.extend(series);
    }

    let p = out_path(global, "estimates.csv");
    all.write_csv(create(&p)?)?;
    manifest.output(&p);
    if args.emit_draws {
        let p = out_path(global, "estimate_draws.csv");
        all.write_draws_csv(create(&p)?)?;
        manifest.output(&p);
    }
    manifest.finish(&global.out_dir)?;
    Ok(())
}
