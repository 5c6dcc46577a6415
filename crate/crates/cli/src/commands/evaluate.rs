use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::Args;
use jmrp_core::estimators::{read_draws_csv, EstimateSeries, EstimatorTag};
use jmrp_core::metrics::{evaluate_units, EvalUnit, Interval, MetricsReport};

use super::{create, out_path, read_text, require_file, write_json};
use crate::manifest::ManifestBuilder;
use crate::{CliError, GlobalOpts};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimates CSV to score
    #[arg(long)]
    pub estimates: PathBuf,
    /// Truth CSV (`district,month,p_true`) or an estimates CSV whose `direct-f2f` rows serve as reference
    #[arg(long)]
    pub reference: PathBuf,
    /// Comma-separated months to evaluate; defaults to every month in the reference
    #[arg(long, value_delimiter = ',')]
    pub months: Option<Vec<usize>>,
    /// Per-draw estimates (enables CRPS)
    #[arg(long)]
    pub samples: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy)]
struct RefUnit {
    value: f64,
    r80: Interval,
    r90: Interval,
}

type Reference = BTreeMap<(usize, usize), RefUnit>;

/// Reads the reference, returning it with every district it mentions (including NA rows).
fn load_reference(path: &Path) -> Result<(Reference, BTreeSet<usize>), CliError> {
    let text = read_text(path)?;
    let header = text.lines().next().unwrap_or_default();
    let mut out = Reference::new();
    let mut districts = BTreeSet::new();
    if header.split(',').any(|h| h.trim() == "p_true") {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let heads = rdr.headers().map_err(|e| CliError::config(format!("truth: {e}")))?.clone();
        let col = |name: &str| {
            heads
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| CliError::config(format!("truth file lacks a '{name}' column")))
        };
        let (cs, ct, cp) = (col("district")?, col("month")?, col("p_true")?);
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| CliError::config(format!("truth: {e}")))?;
            let bad = || CliError::config(format!("truth row {}: unparsable value", line + 1));
            let s: usize = row[cs].trim().parse().map_err(|_| bad())?;
            let t: usize = row[ct].trim().parse().map_err(|_| bad())?;
            let p: f64 = row[cp].trim().parse().map_err(|_| bad())?;
            districts.insert(s);
            out.insert((s, t), RefUnit { value: p, r80: Interval::point(p), r90: Interval::point(p) });
        }
    } else {
        let series = EstimateSeries::read_csv(text.as_bytes())?;
        for row in series.rows.iter().filter(|r| r.estimator == EstimatorTag::DirectF2f) {
            districts.insert(row.district);
            if let Some(sm) = row.summary {
                let r80 = sm.interval(0.8).expect("0.8 is a supported level");
                let r90 = sm.interval(0.9).expect("0.9 is a supported level");
                out.insert((row.district, row.month), RefUnit { value: sm.mean, r80, r90 });
            }
        }
        if districts.is_empty() {
            return Err(CliError::config(format!(
                "{} has neither a p_true column nor direct-f2f rows",
                path.display()
            )));
        }
    }
    Ok((out, districts))
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

const HEADER: [&str; 13] = [
    "estimator", "n_units", "mae", "rmse", "mbe", "pearson", "spearman", "ccc", "coverage_80", "coverage_90",
    "length_80", "length_90", "crps",
];

fn csv_row(tag: EstimatorTag, m: Option<&MetricsReport>) -> Vec<String> {
    let Some(m) = m else {
        let mut row = vec![tag.to_string(), "0".to_string()];
        row.resize(HEADER.len(), "NA".to_string());
        return row;
    };
    let f = |v: f64| if v.is_finite() { v.to_string() } else { "NA".to_string() };
    vec![
        tag.to_string(),
        m.n_units.to_string(),
        f(m.mae),
        f(m.rmse),
        f(m.mbe),
        fmt_opt(m.pearson),
        fmt_opt(m.spearman),
        fmt_opt(m.ccc),
        f(m.coverage_80),
        f(m.coverage_90),
        f(m.length_80),
        f(m.length_90),
        fmt_opt(m.crps),
    ]
}

pub fn run(global: &GlobalOpts, args: &EvaluateArgs) -> Result<(), CliError> {
    require_file(&args.estimates)?;
    require_file(&args.reference)?;
    let mut manifest = ManifestBuilder::new("evaluate", global.config.as_deref(), global.seed.unwrap_or(0), 0);
    manifest.input(&args.estimates);
    manifest.input(&args.reference);

    let est = EstimateSeries::load(&args.estimates)?;
    let (reference, ref_districts) = load_reference(&args.reference)?;
    let est_districts: BTreeSet<usize> = est.rows.iter().map(|r| r.district).collect();
    if est_districts != ref_districts {
        let only_est: Vec<_> = est_districts.difference(&ref_districts).collect();
        let only_ref: Vec<_> = ref_districts.difference(&est_districts).collect();
        return Err(CliError::config(format!(
            "district sets differ: only in estimates {only_est:?}, only in reference {only_ref:?}"
        )));
    }
    let samples = match &args.samples {
        Some(p) => {
            require_file(p)?;
            manifest.input(p);
            let file = std::fs::File::open(p).map_err(|e| CliError::io(p, e))?;
            read_draws_csv(std::io::BufReader::new(file))?
        }
        None => BTreeMap::new(),
    };
    let months: BTreeSet<usize> = match &args.months {
        Some(m) => m.iter().copied().collect(),
        None => reference.keys().map(|&(_, t)| t).collect(),
    };

    let tags: BTreeSet<EstimatorTag> = est.rows.iter().map(|r| r.estimator).collect();
    let mut reports: Vec<(EstimatorTag, Option<MetricsReport>)> = Vec::new();
    for tag in tags {
        let mut units = Vec::new();
        for row in est.rows.iter().filter(|r| r.estimator == tag && months.contains(&r.month)) {
            let (Some(sm), Some(rf)) = (row.summary, reference.get(&(row.district, row.month))) else {
                continue;
            };
            units.push(EvalUnit {
                estimate: sm.mean,
                truth: rf.value,
                model_80: sm.interval(0.8).expect("0.8 is a supported level"),
                model_90: sm.interval(0.9).expect("0.9 is a supported level"),
                reference_80: rf.r80,
                reference_90: rf.r90,
                samples: samples.get(&(tag, row.district, row.month)).cloned(),
            });
        }
        let report = if units.is_empty() { None } else { Some(evaluate_units(&units)?) };
        reports.push((tag, report));
    }

    let p = out_path(global, "metrics.csv");
    {
        let mut wtr = csv::Writer::from_writer(create(&p)?);
        let err = |e: csv::Error| CliError::io(&p, std::io::Error::other(e));
        wtr.write_record(HEADER).map_err(err)?;
        for (tag, m) in &reports {
            wtr.write_record(csv_row(*tag, m.as_ref())).map_err(err)?;
        }
        wtr.flush().map_err(|e| CliError::io(&p, e))?;
    }
    manifest.output(&p);
    let json: Vec<serde_json::Value> = reports
        .iter()
        .map(|(tag, m)| serde_json::json!({ "estimator": tag, "metrics": m }))
        .collect();
    let p = out_path(global, "metrics.json");
    write_json(&p, &json)?;
    manifest.output(&p);
    manifest.finish(&global.out_dir)?;
    Ok(())
}
