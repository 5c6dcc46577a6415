//! Food Consumption Score and the phone-ownership imputation model.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::priors::{hyperprior_dlog, hyperprior_logpdf, normal_logpdf};
use crate::model::{logistic, Covariate, Modality, ModelSpec, SurveyRecord};
use crate::sampler::{sample, LogDensity, SamplerConfig};

pub const FOOD_GROUPS: [&str; 8] = [
    "staples",
    "pulses",
    "vegetables",
    "fruits",
    "meat_fish_eggs",
    "dairy",
    "fats",
    "sugar",
];

/// Nutrient weights in `FOOD_GROUPS` order.
pub const FCS_WEIGHTS: [f64; 8] = [2.0, 3.0, 1.0, 1.0, 4.0, 4.0, 0.5, 0.5];

/// Days per week each food group was eaten, in `FOOD_GROUPS` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoodFrequencies(pub [u8; 8]);

pub fn fcs(freq: &FoodFrequencies) -> Result<f64> {
    let mut score = 0.0;
    for ((days, w), name) in freq.0.iter().zip(FCS_WEIGHTS).zip(FOOD_GROUPS) {
        if *days > 7 {
            return Err(Error::domain(format!("{name} frequency {days} outside 0..=7")));
        }
        score += w * *days as f64;
    }
    Ok(score)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdPreset {
    Standard,
    Zimbabwe,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcsThresholds {
    pub poor_max: f64,
    pub borderline_max: f64,
    pub preset: ThresholdPreset,
}

impl FcsThresholds {
    pub fn standard() -> Self {
        FcsThresholds { poor_max: 21.0, borderline_max: 35.0, preset: ThresholdPreset::Standard }
    }

    /// Raised cut-offs for populations with high sugar and oil consumption.
    pub fn zimbabwe() -> Self {
        FcsThresholds { poor_max: 28.0, borderline_max: 42.0, preset: ThresholdPreset::Zimbabwe }
    }

    pub fn custom(poor_max: f64, borderline_max: f64) -> Result<Self> {
        if !(0.0 < poor_max && poor_max < borderline_max && borderline_max < 112.0) {
            return Err(Error::schema(format!(
                "thresholds must satisfy 0 < poor ({poor_max}) < borderline ({borderline_max}) < 112"
            )));
        }
        Ok(FcsThresholds { poor_max, borderline_max, preset: ThresholdPreset::Custom })
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        match name {
            "standard" => Ok(Self::standard()),
            "zimbabwe" => Ok(Self::zimbabwe()),
            other => Err(Error::schema(format!("unknown threshold preset '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FcsClass {
    Poor,
    Borderline,
    Acceptable,
}

impl FcsClass {
    pub fn as_str(self) -> &'static str {
        match self {
            FcsClass::Poor => "poor",
            FcsClass::Borderline => "borderline",
            FcsClass::Acceptable => "acceptable",
        }
    }
}

/// Upper bounds are inclusive.
pub fn classify(score: f64, th: &FcsThresholds) -> FcsClass {
    if score <= th.poor_max {
        FcsClass::Poor
    } else if score <= th.borderline_max {
        FcsClass::Borderline
    } else {
        FcsClass::Acceptable
    }
}

/// Scores a CSV with one column per food group; output appends `fcs` and `class`.
pub fn score_csv<R: Read, W: Write>(reader: R, writer: W, th: &FcsThresholds) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse("food frequencies", e))?.clone();
    let cols: Vec<usize> = FOOD_GROUPS
        .iter()
        .map(|g| {
            headers
                .iter()
                .position(|h| h.trim() == *g)
                .ok_or_else(|| Error::schema(format!("missing food-group column '{g}'")))
        })
        .collect::<Result<_>>()?;
    let mut wtr = csv::Writer::from_writer(writer);
    let mut out_header: Vec<String> = headers.iter().map(str::to_string).collect();
    out_header.push("fcs".into());
    out_header.push("class".into());
    wtr.write_record(&out_header).map_err(|e| Error::parse("fcs output", e))?;
    let mut n = 0;
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::parse("food frequencies", e))?;
        let mut days = [0u8; 8];
        for (k, &c) in cols.iter().enumerate() {
            days[k] = row[c].trim().parse().map_err(|_| {
                Error::parse("food frequencies", format!("row {}: bad {} value '{}'", line + 1, FOOD_GROUPS[k], &row[c]))
            })?;
        }
        let score = fcs(&FoodFrequencies(days)).map_err(|e| Error::domain(format!("row {}: {e}", line + 1)))?;
        let mut out: Vec<String> = row.iter().map(str::to_string).collect();
        out.push(score.to_string());
        out.push(classify(score, th).as_str().to_string());
        wtr.write_record(&out).map_err(|e| Error::parse("fcs output", e))?;
        n += 1;
    }
    wtr.flush().map_err(|e| Error::parse("fcs output", e))?;
    Ok(n)
}

/// One reference-survey household for the ownership model.
#[derive(Debug, Clone, PartialEq)]
pub struct OwnershipRow {
    pub owns: bool,
    pub covariates: Vec<usize>,
    pub district: usize,
}

impl OwnershipRow {
    /// Uses F2F records, whose phone value is an observed 0/1 flag.
    pub fn from_records(records: &[SurveyRecord]) -> Result<Vec<Self>> {
        records
            .iter()
            .filter(|r| r.modality == Modality::F2f)
            .map(|r| {
                if r.phone != 0.0 && r.phone != 1.0 {
                    return Err(Error::schema(format!("F2F phone ownership must be 0 or 1, got {}", r.phone)));
                }
                Ok(OwnershipRow { owns: r.phone == 1.0, covariates: r.covariates.clone(), district: r.district })
            })
            .collect()
    }
}

fn dummy_width(schema: &[Covariate]) -> usize {
    schema.iter().map(|c| c.levels.len() - 1).sum()
}

fn dummy_row(schema: &[Covariate], covariates: &[usize], out: &mut Vec<usize>) {
    out.clear();
    let mut offset = 0;
    for (cov, &code) in schema.iter().zip(covariates) {
        for (k, (level, _)) in cov.dummy_levels().enumerate() {
            if level == code {
                out.push(offset + k);
            }
        }
        offset += cov.levels.len() - 1;
    }
}

/// Logistic regression with a district random intercept; coordinates are
/// `alpha, beta..., u[0..S), log_sigma`.
struct OwnershipPosterior<'a> {
    spec: &'a ModelSpec,
    width: usize,
    districts: usize,
    /// (active dummy columns, district, trials, successes).
    pooled: Vec<(Vec<usize>, usize, f64, f64)>,
}

impl OwnershipPosterior<'_> {
    fn dim(&self) -> usize {
        1 + self.width + self.districts + 1
    }
}

impl LogDensity for OwnershipPosterior<'_> {
    fn dim(&self) -> usize {
        OwnershipPosterior::dim(self)
    }

    fn log_density_and_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let u0 = 1 + self.width;
        let ls = x[u0 + self.districts];
        let sigma = ls.exp();
        let Ok(hyper) = hyperprior_logpdf(sigma, self.spec) else {
            return f64::NAN;
        };
        let sd = self.spec.beta_sd;
        let mut lp = normal_logpdf(x[0], 0.0, sd);
        grad[0] = -x[0] / (sd * sd);
        for k in 0..self.width {
            let b = x[1 + k];
            lp += normal_logpdf(b, 0.0, sd);
            grad[1 + k] = -b / (sd * sd);
        }
        let mut dls = 0.0;
        for s in 0..self.districts {
            let u = x[u0 + s];
            lp += normal_logpdf(u, 0.0, sigma);
            grad[u0 + s] = -u / (sigma * sigma);
            dls += -1.0 + u * u / (sigma * sigma);
        }
        lp += hyper + ls;
        dls += hyperprior_dlog(sigma, self.spec) + 1.0;
        grad[u0 + self.districts] = dls;
        for (cols, s, n, y) in &self.pooled {
            let eta = x[0] + cols.iter().map(|&k| x[1 + k]).sum::<f64>() + x[u0 + s];
            // log p = -log(1 + e^-eta), log(1-p) = -log(1 + e^eta)
            lp += -y * softplus(-eta) - (n - y) * softplus(eta);
            let r = y - n * logistic(eta);
            grad[0] += r;
            for &k in cols {
                grad[1 + k] += r;
            }
            grad[u0 + s] += r;
        }
        lp
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Posterior draws of the ownership model and the covariate schema they refer to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhoneOwnershipModel {
    pub schema: Vec<Covariate>,
    pub districts: usize,
    /// Rows of `alpha, beta..., u[0..S), log_sigma`.
    pub draws: Vec<Vec<f64>>,
}

impl PhoneOwnershipModel {
    fn width(&self) -> usize {
        dummy_width(&self.schema)
    }

    /// Posterior-mean ownership probability. Unseen districts use a zero random effect.
    pub fn predict(&self, covariates: &[usize], district: usize) -> Result<f64> {
        if covariates.len() != self.schema.len() {
            return Err(Error::schema(format!(
                "profile has {} covariates, ownership model needs {}",
                covariates.len(),
                self.schema.len()
            )));
        }
        for (code, cov) in covariates.iter().zip(&self.schema) {
            if *code >= cov.levels.len() {
                return Err(Error::schema(format!("unknown category code {code} for covariate '{}'", cov.name)));
            }
        }
        let mut cols = Vec::new();
        dummy_row(&self.schema, covariates, &mut cols);
        let u0 = 1 + self.width();
        let total: f64 = self
            .draws
            .iter()
            .map(|d| {
                let u = if district < self.districts { d[u0 + district] } else { 0.0 };
                logistic(d[0] + cols.iter().map(|&k| d[1 + k]).sum::<f64>() + u)
            })
            .sum();
        Ok(total / self.draws.len() as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("ownership model serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse("phone ownership model", e))
    }
}

/// Fits the ownership model by NUTS. `spec` supplies the covariate schema, S and the scale prior.
pub fn fit_phone_ownership(
    rows: &[OwnershipRow],
    spec: &ModelSpec,
    conf: &SamplerConfig,
    threads: usize,
) -> Result<PhoneOwnershipModel> {
    let owners = rows.iter().filter(|r| r.owns).count();
    if owners == 0 || owners == rows.len() {
        return Err(Error::Degenerate(format!(
            "ownership outcome has a single class ({owners} of {} own a phone)",
            rows.len()
        )));
    }
    let schema = &spec.covariate_schema;
    let mut pooled: HashMap<(Vec<usize>, usize), (f64, f64)> = HashMap::new();
    let mut cols = Vec::new();
    for r in rows {
        if r.covariates.len() != schema.len() || r.district >= spec.districts {
            return Err(Error::schema("ownership row does not match the model schema"));
        }
        for (code, cov) in r.covariates.iter().zip(schema) {
            if *code >= cov.levels.len() {
                return Err(Error::schema(format!("unknown category code {code} for covariate '{}'", cov.name)));
            }
        }
        dummy_row(schema, &r.covariates, &mut cols);
        let e = pooled.entry((cols.clone(), r.district)).or_default();
        e.0 += 1.0;
        e.1 += if r.owns { 1.0 } else { 0.0 };
    }
    let mut pooled: Vec<_> = pooled.into_iter().map(|((c, s), (n, y))| (c, s, n, y)).collect();
    pooled.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let posterior = OwnershipPosterior { spec, width: dummy_width(schema), districts: spec.districts, pooled };
    let draws = sample(&posterior, conf, threads)?;
    Ok(PhoneOwnershipModel {
        schema: schema.clone(),
        districts: spec.districts,
        draws: (0..draws.len()).map(|b| draws.draw(b).to_vec()).collect(),
    })
}

/// Fills `phone` of MP records with fitted ownership probabilities; F2F records pass through.
pub fn impute_phone_prob(records: &[SurveyRecord], model: &PhoneOwnershipModel) -> Result<Vec<SurveyRecord>> {
    let bad = records
        .iter()
        .filter(|r| r.modality == Modality::Mp && r.covariates.len() != model.schema.len())
        .count();
    if bad > 0 {
        return Err(Error::schema(format!(
            "{bad} mobile records lack covariates needed by the ownership model"
        )));
    }
    let mut cache: HashMap<(Vec<usize>, usize), f64> = HashMap::new();
    records
        .iter()
        .map(|r| {
            if r.modality == Modality::F2f {
                return Ok(r.clone());
            }
            let key = (r.covariates.clone(), r.district);
            let p = match cache.get(&key) {
                Some(p) => *p,
                None => {
                    let p = model.predict(&r.covariates, r.district)?;
                    cache.insert(key, p);
                    p
                }
            };
            Ok(SurveyRecord { phone: p, ..r.clone() })
        })
        .collect()
}
