//! Synthetic two-modality surveys drawn from a known instance of the joint model.
//!
//! A finite household population is generated per district from a latent
//! socio-economic score. Phone ownership rises with the covariate-implied score,
//! the phone survey samples owners only, and the face-to-face survey samples the
//! whole population in selected months. Face-to-face answers carry an extra
//! log-odds shift (the modality effect), so truth is defined on that scale.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    logistic, AdjacencyGraph, Covariate, Dataset, DesignLayout, InteractionLevel, Modality, ModelSpec,
    ParamLayout, ParamState, SurveyRecord,
};
use crate::weights::{Cell, PostStratTable, Provenance};

/// Household covariates of a typical food-security survey: 128 profiles per district.
fn default_schema() -> Vec<Covariate> {
    vec![
        Covariate::new("water", &["other", "improved"]),
        Covariate::new("education", &["none", "primary", "secondary", "higher"]),
        Covariate::new("male_head", &["no", "yes"]),
        Covariate::new("household_size", &["1-2", "3-4", "5-6", "7+"]),
        Covariate::new("toilet", &["unimproved", "improved"]),
    ]
}
fn default_scales() -> [f64; 5] {
    [0.4, 0.2, 0.3, 0.1, 0.1]
}
fn default_gamma() -> f64 {
    -1.0
}
fn default_beta_scale() -> f64 {
    0.5
}
fn default_beta_phone() -> f64 {
    -0.3
}
fn default_modality_effect() -> f64 {
    1.0
}
fn default_strength() -> f64 {
    1.0
}
fn default_ses_loading() -> f64 {
    0.8
}
fn default_population() -> usize {
    3000
}
fn default_mp() -> usize {
    35
}
fn default_f2f() -> usize {
    40
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Provinces are contiguous blocks of grid rows.
    pub provinces: usize,
    pub months: usize,
    #[serde(default = "default_schema")]
    pub covariate_schema: Vec<Covariate>,
    #[serde(default)]
    pub interaction_level: InteractionLevel,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// True coefficients of the covariate dummies; drawn from N(0, beta_scale²) when absent.
    #[serde(default)]
    pub beta: Option<Vec<f64>>,
    #[serde(default = "default_beta_scale")]
    pub beta_scale: f64,
    #[serde(default = "default_beta_phone")]
    pub beta_phone: f64,
    /// True F2F log-odds shift.
    #[serde(default = "default_modality_effect")]
    pub modality_effect: f64,
    /// F2F × covariate-dummy effects; zeros when absent.
    #[serde(default)]
    pub interaction_effects: Option<Vec<f64>>,
    /// Generating scales of (phi, zeta, nu, xi, psi).
    #[serde(default = "default_scales")]
    pub scales: [f64; 5],
    #[serde(default = "default_strength")]
    pub phone_selection_strength: f64,
    /// Ownership log-odds at an average covariate profile.
    #[serde(default)]
    pub ownership_intercept: f64,
    #[serde(default = "default_ses_loading")]
    pub ses_loading: f64,
    #[serde(default = "default_population")]
    pub population_per_district: usize,
    /// Phone interviews per district and month.
    #[serde(default = "default_mp")]
    pub mp_per_district_month: usize,
    /// Face-to-face interviews per district in each F2F month.
    #[serde(default = "default_f2f")]
    pub f2f_per_district: usize,
    pub f2f_months: Vec<usize>,
    /// F2F months whose records are withheld from the dataset and kept with the truth.
    #[serde(default)]
    pub holdout_months: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
}

impl SimConfig {
    /// A small configuration with the given grid and months, F2F in the first and middle month.
    pub fn small(grid_rows: usize, grid_cols: usize, provinces: usize, months: usize) -> Self {
        let mut f2f = vec![0];
        if months > 2 {
            f2f.push(months / 2);
        }
        SimConfig {
            grid_rows,
            grid_cols,
            provinces,
            months,
            covariate_schema: default_schema(),
            interaction_level: InteractionLevel::Province,
            gamma: default_gamma(),
            beta: None,
            beta_scale: default_beta_scale(),
            beta_phone: default_beta_phone(),
            modality_effect: default_modality_effect(),
            interaction_effects: None,
            scales: default_scales(),
            phone_selection_strength: default_strength(),
            ownership_intercept: 0.0,
            ses_loading: default_ses_loading(),
            population_per_district: default_population(),
            mp_per_district_month: default_mp(),
            f2f_per_district: default_f2f(),
            f2f_months: f2f,
            holdout_months: Vec::new(),
            seed: 0,
        }
    }

    pub fn districts(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    fn dummy_width(&self) -> usize {
        self.covariate_schema.iter().map(|c| c.levels.len().saturating_sub(1)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 || self.months == 0 {
            return Err(Error::schema("grid and months must be nonempty"));
        }
        if self.provinces == 0 || self.provinces > self.grid_rows {
            return Err(Error::schema(format!(
                "provinces ({}) must lie in [1, grid_rows = {}]",
                self.provinces, self.grid_rows
            )));
        }
        if let Some(t) = self.f2f_months.iter().chain(&self.holdout_months).find(|&&t| t >= self.months) {
            return Err(Error::schema(format!("F2F month {t} outside [0, T = {})", self.months)));
        }
        let w = self.dummy_width();
        if let Some(b) = &self.beta {
            if b.len() != w {
                return Err(Error::schema(format!("beta has {} entries, schema implies {w}", b.len())));
            }
        }
        if let Some(b) = &self.interaction_effects {
            if b.len() != w {
                return Err(Error::schema(format!("interaction_effects has {} entries, schema implies {w}", b.len())));
            }
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::schema("all generating scales must be positive"));
        }
        if self.population_per_district == 0 {
            return Err(Error::schema("population_per_district must be positive"));
        }
        self.model_spec().validate()
    }

    pub fn district_to_province(&self) -> Vec<usize> {
        (0..self.districts())
            .map(|s| (s / self.grid_cols) * self.provinces / self.grid_rows)
            .collect()
    }

    /// Joint-model spec matching this simulation.
    pub fn model_spec(&self) -> ModelSpec {
        let mut spec = ModelSpec::new(self.district_to_province(), self.provinces, self.months, self.covariate_schema.clone());
        spec.interaction_level = self.interaction_level;
        spec
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let conf: SimConfig = serde_json::from_str(text).map_err(|e| Error::parse("simulation config", e))?;
        conf.validate()?;
        Ok(conf)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let conf: SimConfig = toml::from_str(text).map_err(|e| Error::parse("simulation config", e))?;
        conf.validate()?;
        Ok(conf)
    }
}

/// The generating instance and everything needed to score estimates against it.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub spec: ModelSpec,
    pub params: ParamState,
    /// Population composition per district (0/1 phone ownership).
    pub table: PostStratTable,
    /// True prevalence on the F2F scale, row-major (district, month).
    pub p_true: Vec<f64>,
    /// True ownership probability for each covariate profile, keyed by level codes.
    pub ownership: BTreeMap<Vec<usize>, f64>,
    pub holdout_records: Vec<SurveyRecord>,
}

impl GroundTruth {
    pub fn write_truth_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        let err = |e: csv::Error| Error::parse("truth", e);
        wtr.write_record(["district", "month", "p_true"]).map_err(err)?;
        for s in 0..self.spec.districts {
            for t in 0..self.spec.months {
                wtr.write_record([s.to_string(), t.to_string(), true_prevalence(self, s, t).to_string()])
                    .map_err(err)?;
            }
        }
        wtr.flush().map_err(|e| Error::parse("truth", e))
    }

    /// True parameter values keyed by draw-column names.
    pub fn named_params(&self, graph: &AdjacencyGraph) -> Vec<(String, f64)> {
        let design = DesignLayout::new(&self.spec);
        let layout = ParamLayout::new(&self.spec, graph, design.width());
        let names = layout.names(&self.spec, design.column_names());
        let values = layout.pack(&self.params).expect("truth matches its own layout");
        names.into_iter().zip(values).collect()
    }
}

pub fn true_prevalence(gt: &GroundTruth, s: usize, t: usize) -> f64 {
    gt.p_true[s * gt.spec.months + t]
}

/// Reads a `district,month,p_true` CSV into a row-major grid.
pub fn read_truth_csv<R: std::io::Read>(reader: R, districts: usize, months: usize) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; districts * months];
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::parse("truth", e))?;
        let bad = || Error::parse("truth", format!("row {}", line + 1));
        let s: usize = row[0].trim().parse().map_err(|_| bad())?;
        let t: usize = row[1].trim().parse().map_err(|_| bad())?;
        if s >= districts || t >= months {
            return Err(Error::schema(format!("truth row ({s}, {t}) outside the grid")));
        }
        out[s * months + t] = row[2].trim().parse().map_err(|_| bad())?;
    }
    Ok(out)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draw from the ICAR prior on a connected graph, via the Laplacian eigenbasis.
fn icar_draw(graph: &AdjacencyGraph, sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = graph.node_count();
    let mut lap = DMatrix::<f64>::zeros(n, n);
    for &(i, j) in graph.edges() {
        lap[(i, j)] -= 1.0;
        lap[(j, i)] -= 1.0;
        lap[(i, i)] += 1.0;
        lap[(j, j)] += 1.0;
    }
    let eig = SymmetricEigen::new(lap);
    let mut phi = vec![0.0; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    for &k in &order {
        let lambda = eig.eigenvalues[k];
        let z = normal(rng);
        if lambda > 1e-9 {
            for (i, p) in phi.iter_mut().enumerate() {
                *p += sigma * z / lambda.sqrt() * eig.eigenvectors[(i, k)];
            }
        }
    }
    // Isolated nodes are fixed at zero.
    for (i, p) in phi.iter_mut().enumerate() {
        if graph.is_isolated(i) {
            *p = 0.0;
        }
    }
    phi
}

/// Covariate-implied socio-economic score in [-K, K].
fn ses_score(schema: &[Covariate], codes: &[usize]) -> f64 {
    schema
        .iter()
        .zip(codes)
        .map(|(c, &k)| {
            let top = (c.levels.len() - 1).max(1) as f64;
            2.0 * k as f64 / top - 1.0
        })
        .sum()
}

struct Household {
    covariates: Vec<usize>,
    owns: bool,
}

fn true_params(conf: &SimConfig, spec: &ModelSpec, graph: &AdjacencyGraph, rng: &mut ChaCha8Rng) -> ParamState {
    let w = conf.dummy_width();
    let design = DesignLayout::new(spec);
    let mut params = ParamState::zeros(spec, design.width());
    params.gamma = conf.gamma;
    let dummies: Vec<f64> = match &conf.beta {
        Some(b) => b.clone(),
        None => (0..w).map(|_| conf.beta_scale * normal(rng)).collect(),
    };
    params.beta[..w].copy_from_slice(&dummies);
    params.beta[design.phone_column()] = conf.beta_phone;
    params.beta[design.modality_column().expect("joint spec models modality")] = conf.modality_effect;
    if let Some(inter) = &conf.interaction_effects {
        params.beta[design.interaction_columns()].copy_from_slice(inter);
    }
    let [s_phi, s_zeta, s_nu, s_xi, s_psi] = conf.scales;
    params.phi = icar_draw(graph, s_phi, rng);
    params.zeta = (0..spec.districts).map(|_| s_zeta * normal(rng)).collect();
    let mut nu = Vec::with_capacity(spec.months);
    let mut level = 0.0;
    for _ in 0..spec.months {
        nu.push(level);
        level += s_nu * normal(rng);
    }
    let mean = nu.iter().sum::<f64>() / nu.len() as f64;
    params.nu = nu.iter().map(|v| v - mean).collect();
    params.xi = (0..spec.months).map(|_| s_xi * normal(rng)).collect();
    params.psi = (0..spec.psi_len()).map(|_| s_psi * normal(rng)).collect();
    params.log_sigma = conf.scales.map(f64::ln);
    params
}

fn eta(spec: &ModelSpec, design: &DesignLayout, params: &ParamState, covs: &[usize], phone: f64, m: Modality, s: usize, t: usize) -> f64 {
    let row = design.row(spec, covs, phone, m).expect("simulated profile is valid");
    let xb: f64 = row.iter().zip(&params.beta).map(|(x, b)| x * b).sum();
    params.gamma + xb + params.phi[s] + params.zeta[s] + params.nu[t] + params.xi[t] + params.psi[spec.psi_index(s, t)]
}

/// Generates the dataset, the population table and the truth. Pure in `conf`.
pub fn generate(conf: &SimConfig) -> Result<(Dataset, PostStratTable, GroundTruth)> {
    conf.validate()?;
    let spec = conf.model_spec();
    let graph = AdjacencyGraph::grid(conf.grid_rows, conf.grid_cols);
    let design = DesignLayout::new(&spec);
    let mut rng = ChaCha8Rng::seed_from_u64(conf.seed);
    let params = true_params(conf, &spec, &graph, &mut rng);
    let schema = &conf.covariate_schema;

    let ownership_prob = |codes: &[usize]| {
        logistic(conf.ownership_intercept + conf.phone_selection_strength * ses_score(schema, codes))
    };

    // Population.
    let mut population: Vec<Vec<Household>> = Vec::with_capacity(spec.districts);
    for _ in 0..spec.districts {
        let shift = 0.5 * normal(&mut rng);
        let mut households = Vec::with_capacity(conf.population_per_district);
        for _ in 0..conf.population_per_district {
            let ses = shift + normal(&mut rng);
            let covariates: Vec<usize> = schema
                .iter()
                .map(|c| {
                    let weights: Vec<f64> = (0..c.levels.len()).map(|k| (k as f64 * conf.ses_loading * ses).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    let mut u = rng.random::<f64>() * total;
                    for (k, w) in weights.iter().enumerate() {
                        if u < *w {
                            return k;
                        }
                        u -= w;
                    }
                    c.levels.len() - 1
                })
                .collect();
            let owns = rng.random::<f64>() < ownership_prob(&covariates);
            households.push(Household { covariates, owns });
        }
        population.push(households);
    }

    let mut counts: BTreeMap<(usize, Vec<usize>, bool), f64> = BTreeMap::new();
    for (s, households) in population.iter().enumerate() {
        for h in households {
            *counts.entry((s, h.covariates.clone(), h.owns)).or_default() += 1.0;
        }
    }
    let cells: Vec<Cell> = counts
        .into_iter()
        .map(|((district, covariates, owns), weight)| Cell { district, covariates, phone: if owns { 1.0 } else { 0.0 }, weight })
        .collect();
    let table = PostStratTable::new(schema.clone(), spec.districts, cells, Provenance::FrequencyCounts)?;

    let mut p_true = vec![0.0; spec.districts * spec.months];
    for s in 0..spec.districts {
        let sub: Vec<&Cell> = table.cells.iter().filter(|c| c.district == s).collect();
        let total: f64 = sub.iter().map(|c| c.weight).sum();
        for t in 0..spec.months {
            let acc: f64 = sub
                .iter()
                .map(|c| c.weight * logistic(eta(&spec, &design, &params, &c.covariates, c.phone, Modality::F2f, s, t)))
                .sum();
            p_true[s * spec.months + t] = acc / total;
        }
    }

    let mut ownership = BTreeMap::new();
    for c in &table.cells {
        ownership.entry(c.covariates.clone()).or_insert_with(|| ownership_prob(&c.covariates));
    }

    // Surveys, month by month.
    let mut records = Vec::new();
    let mut holdout = Vec::new();
    for t in 0..spec.months {
        for (s, households) in population.iter().enumerate() {
            let owners: Vec<&Household> = households.iter().filter(|h| h.owns).collect();
            if !owners.is_empty() {
                for _ in 0..conf.mp_per_district_month {
                    let h = owners[rng.random_range(0..owners.len())];
                    // Phone respondents carry the imputed ownership probability, and
                    // their answers follow the model at that recorded value.
                    let phone = ownership_prob(&h.covariates);
                    let p = logistic(eta(&spec, &design, &params, &h.covariates, phone, Modality::Mp, s, t));
                    records.push(SurveyRecord {
                        outcome: rng.random::<f64>() < p,
                        covariates: h.covariates.clone(),
                        phone,
                        modality: Modality::Mp,
                        district: s,
                        province: spec.district_to_province[s],
                        month: t,
                        weight: 1.0,
                    });
                }
            }
            if conf.f2f_months.contains(&t) || conf.holdout_months.contains(&t) {
                let target = if conf.holdout_months.contains(&t) { &mut holdout } else { &mut records };
                for _ in 0..conf.f2f_per_district {
                    let h = &households[rng.random_range(0..households.len())];
                    let phone = if h.owns { 1.0 } else { 0.0 };
                    let p = logistic(eta(&spec, &design, &params, &h.covariates, phone, Modality::F2f, s, t));
                    target.push(SurveyRecord {
                        outcome: rng.random::<f64>() < p,
                        covariates: h.covariates.clone(),
                        phone,
                        modality: Modality::F2f,
                        district: s,
                        province: spec.district_to_province[s],
                        month: t,
                        weight: 1.0,
                    });
                }
            }
        }
    }

    let dataset = Dataset::new(records, spec.clone(), graph)?;
    let truth = GroundTruth { spec, params, table: table.clone(), p_true, ownership, holdout_records: holdout };
    Ok((dataset, table, truth))
}
