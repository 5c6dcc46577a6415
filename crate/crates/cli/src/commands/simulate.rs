use jmrp_core::model::io::save_records;
use jmrp_core::simulate::{generate, SimConfig};

use super::{create, out_path, parse_config, resolve_seed, write_json};
use crate::manifest::ManifestBuilder;
use crate::{CliError, GlobalOpts};

pub fn run(global: &GlobalOpts) -> Result<(), CliError> {
    let path = global
        .config
        .as_deref()
        .ok_or_else(|| CliError::config("simulate needs --config with a simulation config"))?;
    let mut conf: SimConfig = parse_config(path)?;
    let (master, derived) = resolve_seed(global, "simulate", conf.seed);
    conf.seed = derived;
    conf.validate()?;
    let mut manifest = ManifestBuilder::new("simulate", Some(path), master, derived);

    let (data, table, truth) = generate(&conf)?;

    let p = out_path(global, "data.csv");
    save_records(&p, &data.spec, &data.records)?;
    manifest.output(&p);

    let p = out_path(global, "graph.csv");
    data.graph.write_csv(create(&p)?)?;
    manifest.output(&p);

    let p = out_path(global, "table.csv");
    table.save(&p)?;
    manifest.output(&p);

    let p = out_path(global, "truth.csv");
    truth.write_truth_csv(create(&p)?)?;
    manifest.output(&p);

    let p = out_path(global, "holdout.csv");
    save_records(&p, &data.spec, &truth.holdout_records)?;
    manifest.output(&p);

    let p = out_path(global, "model.json");
    std::fs::write(&p, data.spec.to_json() + "\n").map_err(|e| CliError::io(&p, e))?;
    manifest.output(&p);

    let params: Vec<serde_json::Value> = truth
        .named_params(&data.graph)
        .into_iter()
        .map(|(name, value)| serde_json::json!({ "name": name, "value": value }))
        .collect();
    let p = out_path(global, "truth_params.json");
    write_json(&p, &params)?;
    manifest.output(&p);

    manifest.finish(&global.out_dir)?;
    Ok(())
}
