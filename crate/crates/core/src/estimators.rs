//! Direct and model-based district × month prevalence estimators.
//!
//! Model-based estimators turn posterior draws into a per-draw series of
//! district-month prevalences, either by averaging fitted probabilities over
//! survey records (MR family) or over poststratification cells (MRP family).

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{wilson, Interval};
use crate::model::{logistic, Modality, ModelSpec, SurveyRecord};
use crate::sampler::{CellProfile, DrawPredictor, PosteriorDraws};
use crate::weights::{restrict, PostStratTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EstimatorTag {
    #[serde(rename = "direct-f2f")]
    DirectF2f,
    #[serde(rename = "direct-mp")]
    DirectMp,
    #[serde(rename = "mr")]
    Mr,
    #[serde(rename = "mrp")]
    Mrp,
    #[serde(rename = "jmr-mp")]
    JmrMp,
    #[serde(rename = "jmr-f2f")]
    JmrF2f,
    #[serde(rename = "jmrp")]
    Jmrp,
}

impl EstimatorTag {
    pub const ALL: [EstimatorTag; 7] = [
        EstimatorTag::DirectF2f,
        EstimatorTag::DirectMp,
        EstimatorTag::Mr,
        EstimatorTag::Mrp,
        EstimatorTag::JmrMp,
        EstimatorTag::JmrF2f,
        EstimatorTag::Jmrp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorTag::DirectF2f => "direct-f2f",
            EstimatorTag::DirectMp => "direct-mp",
            EstimatorTag::Mr => "mr",
            EstimatorTag::Mrp => "mrp",
            EstimatorTag::JmrMp => "jmr-mp",
            EstimatorTag::JmrF2f => "jmr-f2f",
            EstimatorTag::Jmrp => "jmrp",
        }
    }

    pub fn is_direct(self) -> bool {
        matches!(self, EstimatorTag::DirectF2f | EstimatorTag::DirectMp)
    }
}

impl fmt::Display for EstimatorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| Error::schema(format!("unknown estimator '{s}'")))
    }
}

/// How a draw of fitted probabilities becomes a draw of the prevalence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DrawMode {
    /// Simulate one binary outcome per unit from its probability.
    #[default]
    Bernoulli,
    /// Use the probabilities directly.
    Rate,
}

impl FromStr for DrawMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "bernoulli" => Ok(DrawMode::Bernoulli),
            "rate" => Ok(DrawMode::Rate),
            other => Err(Error::schema(format!("unknown draw mode '{other}'"))),
        }
    }
}

/// Posterior (or design-based) summary of one district-month.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub q05: f64,
    pub q10: f64,
    pub q50: f64,
    pub q90: f64,
    pub q95: f64,
}

/// Linear-interpolation quantile of sorted values.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Summary {
    pub fn from_draws(draws: &[f64]) -> Result<Self> {
        if draws.is_empty() {
            return Err(Error::domain("cannot summarise an empty draw set"));
        }
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Summary {
            mean: draws.iter().sum::<f64>() / draws.len() as f64,
            q05: quantile_sorted(&sorted, 0.05),
            q10: quantile_sorted(&sorted, 0.10),
            q50: quantile_sorted(&sorted, 0.50),
            q90: quantile_sorted(&sorted, 0.90),
            q95: quantile_sorted(&sorted, 0.95),
        })
    }

    pub fn interval(&self, level: f64) -> Option<Interval> {
        if level == 0.8 {
            Some(Interval::new(self.q10, self.q90))
        } else if level == 0.9 {
            Some(Interval::new(self.q05, self.q95))
        } else {
            None
        }
    }
}

/// A design-based estimate with Wilson intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DirectEstimate {
    pub p: f64,
    pub n: usize,
    /// Kish effective size (equals `n` for unweighted estimates).
    pub n_eff: f64,
    pub ci80: Interval,
    pub ci90: Interval,
}

impl DirectEstimate {
    fn new(p: f64, n: usize, n_eff: f64) -> Result<Self> {
        let k = (p * n_eff).clamp(0.0, n_eff);
        Ok(DirectEstimate {
            p,
            n,
            n_eff,
            ci80: wilson(k, n_eff, 0.8)?,
            ci90: wilson(k, n_eff, 0.9)?,
        })
    }

    /// Point estimate as the median; Wilson bounds fill the tail quantiles.
    pub fn summary(&self) -> Summary {
        Summary {
            mean: self.p,
            q05: self.ci90.lower,
            q10: self.ci80.lower,
            q50: self.p,
            q90: self.ci80.upper,
            q95: self.ci90.upper,
        }
    }
}

/// Unweighted sample proportion; `None` for an empty stratum.
pub fn direct_proportion(records: &[&SurveyRecord]) -> Result<Option<DirectEstimate>> {
    if records.is_empty() {
        return Ok(None);
    }
    let n = records.len();
    let k = records.iter().filter(|r| r.outcome).count();
    // Exact k keeps the Wilson boundary cases exact.
    let p = k as f64 / n as f64;
    DirectEstimate::new(p, n, n as f64).map(Some)
}

/// Design-weighted proportion with a Kish effective-size Wilson interval.
pub fn direct_weighted(records: &[&SurveyRecord]) -> Result<Option<DirectEstimate>> {
    if records.is_empty() {
        return Ok(None);
    }
    let (mut sw, mut sw2, mut swy) = (0.0, 0.0, 0.0);
    for r in records {
        if !(r.weight.is_finite() && r.weight >= 0.0) {
            return Err(Error::domain(format!("invalid design weight {}", r.weight)));
        }
        sw += r.weight;
        sw2 += r.weight * r.weight;
        if r.outcome {
            swy += r.weight;
        }
    }
    if sw <= 0.0 {
        return Err(Error::domain("all design weights are zero"));
    }
    let p = swy / sw;
    DirectEstimate::new(p, records.len(), sw * sw / sw2).map(Some)
}

/// Which modality the MR family evaluates records under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModalityOverride {
    /// Each record keeps its own modality.
    #[default]
    None,
    Fixed(Modality),
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniform in [0, 1) from a hash of the key tuple; independent of evaluation order.
pub fn keyed_uniform(key: &[u64]) -> f64 {
    let h = key.iter().fold(0u64, |h, &k| splitmix64(h ^ k));
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

const SALT_CELLS: u64 = 0x4d52_5000;
const SALT_RECORDS: u64 = 0x4d52_0000;

fn bernoulli(key: &[u64], p: f64) -> f64 {
    if keyed_uniform(key) < p {
        1.0
    } else {
        0.0
    }
}

/// Per-draw MR estimate over the records of one district-month.
///
/// `None` when there are no records. In Bernoulli mode each record's outcome is
/// re-simulated from its fitted probability under every draw.
pub fn mr_aggregate(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    records: &[&SurveyRecord],
    modality: ModalityOverride,
    mode: DrawMode,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    let predictor = DrawPredictor::new(draws, spec)?;
    mr_with(&predictor, records, modality, mode, seed)
}

fn mr_with(
    predictor: &DrawPredictor<'_>,
    records: &[&SurveyRecord],
    modality: ModalityOverride,
    mode: DrawMode,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    let Some(first) = records.first() else {
        return Ok(None);
    };
    let (s, t) = (first.district, first.month);
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        if r.district != s || r.month != t {
            return Err(Error::schema("MR aggregation expects records from a single district-month"));
        }
        r.validate(predictor.spec)?;
        let m = match modality {
            ModalityOverride::None => r.modality,
            ModalityOverride::Fixed(m) => m,
        };
        rows.push(predictor.design.row(predictor.spec, &r.covariates, r.phone, m)?);
    }
    let n = records.len() as f64;
    let out = (0..predictor.draws.len())
        .map(|b| {
            let area = predictor.area_effect(b, s, t);
            let mut total = 0.0;
            for (i, row) in rows.iter().enumerate() {
                let p = logistic(predictor.xb(b, row) + area);
                total += match mode {
                    DrawMode::Rate => p,
                    DrawMode::Bernoulli => {
                        bernoulli(&[SALT_RECORDS, seed, s as u64, t as u64, b as u64, i as u64], p)
                    }
                };
            }
            total / n
        })
        .collect();
    Ok(Some(out))
}

/// Precomputed covariate contributions of one district's cells, reused across months.
struct DistrictCells {
    district: usize,
    weights: Vec<f64>,
    /// `xb[b * cells + j]`.
    xb: Vec<f64>,
}

impl DistrictCells {
    fn build(predictor: &DrawPredictor<'_>, table: &PostStratTable, district: usize, modality: Modality) -> Result<Option<Self>> {
        let sub = restrict(table, district);
        // Zero-weight cells contribute nothing and are skipped.
        let cells: Vec<_> = sub.cells.iter().filter(|c| c.weight > 0.0).collect();
        if sub.cells.is_empty() {
            return Ok(None);
        }
        if cells.is_empty() {
            return Err(Error::domain(format!("district {district} cells have zero total weight")));
        }
        let rows: Vec<Vec<f64>> = cells
            .iter()
            .map(|c| predictor.design.row(predictor.spec, &c.covariates, c.phone, modality))
            .collect::<Result<_>>()?;
        let mut xb = Vec::with_capacity(predictor.draws.len() * rows.len());
        for b in 0..predictor.draws.len() {
            xb.extend(rows.iter().map(|row| predictor.xb(b, row)));
        }
        Ok(Some(DistrictCells {
            district,
            weights: cells.iter().map(|c| c.weight).collect(),
            xb,
        }))
    }

    fn series(&self, predictor: &DrawPredictor<'_>, month: usize, mode: DrawMode, seed: u64) -> Vec<f64> {
        let j_len = self.weights.len();
        let total: f64 = self.weights.iter().sum();
        (0..predictor.draws.len())
            .map(|b| {
                let area = predictor.area_effect(b, self.district, month);
                let xb = &self.xb[b * j_len..(b + 1) * j_len];
                let mut acc = 0.0;
                for (j, (w, x)) in self.weights.iter().zip(xb).enumerate() {
                    let p = logistic(x + area);
                    let y = match mode {
                        DrawMode::Rate => p,
                        DrawMode::Bernoulli => bernoulli(
                            &[SALT_CELLS, seed, self.district as u64, month as u64, b as u64, j as u64],
                            p,
                        ),
                    };
                    acc += w * y;
                }
                acc / total
            })
            .collect()
    }
}

/// Per-draw poststratified estimate for district `s`, month `t`; `None` when the district has no cells.
#[allow(clippy::too_many_arguments)]
pub fn jmrp(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    table: &PostStratTable,
    s: usize,
    t: usize,
    modality: Modality,
    mode: DrawMode,
    seed: u64,
) -> Result<Option<Vec<f64>>> {
    table.check_compatible(spec)?;
    let predictor = DrawPredictor::new(draws, spec)?;
    predictor.check(&CellProfile {
        covariates: Vec::new(),
        phone: 0.0,
        district: s,
        month: t,
    })?;
    Ok(DistrictCells::build(&predictor, table, s, modality)?.map(|cells| cells.series(&predictor, t, mode, seed)))
}

/// One row of an estimate series; `summary` is `None` for district-months without data.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRow {
    pub estimator: EstimatorTag,
    pub district: usize,
    pub month: usize,
    pub summary: Option<Summary>,
    /// Records used (direct and MR family) or positive-weight cells (MRP family).
    pub n: usize,
}

/// Estimate rows plus, optionally, the per-draw series behind each row.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EstimateSeries {
    pub rows: Vec<EstimateRow>,
    /// Parallel to `rows` when draws were retained.
    pub draws: Vec<Option<Vec<f64>>>,
}

impl EstimateSeries {
    pub fn extend(&mut self, other: EstimateSeries) {
        self.rows.extend(other.rows);
        self.draws.extend(other.draws);
    }

    pub fn get(&self, estimator: EstimatorTag, district: usize, month: usize) -> Option<&EstimateRow> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.district == district && r.month == month)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let err = |e: csv::Error| Error::parse("estimates", e);
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["estimator", "district", "month", "mean", "q05", "q10", "q50", "q90", "q95", "n"])
            .map_err(err)?;
        for r in &self.rows {
            let mut row = vec![r.estimator.to_string(), r.district.to_string(), r.month.to_string()];
            match &r.summary {
                Some(s) => row.extend([s.mean, s.q05, s.q10, s.q50, s.q90, s.q95].iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n("NA".to_string(), 6)),
            }
            row.push(r.n.to_string());
            wtr.write_record(&row).map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::parse("estimates", e))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse("estimates", e))?.clone();
        let expected = ["estimator", "district", "month", "mean", "q05", "q10", "q50", "q90", "q95", "n"];
        if headers.iter().map(str::trim).ne(expected) {
            return Err(Error::schema(format!("estimates header must be '{}'", expected.join(","))));
        }
        let mut series = EstimateSeries::default();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse("estimates", e))?;
            let bad = |what: &str| Error::parse("estimates", format!("row {}: bad {what}", line + 1));
            let estimator = row[0].parse()?;
            let district = row[1].trim().parse().map_err(|_| bad("district"))?;
            let month = row[2].trim().parse().map_err(|_| bad("month"))?;
            let summary = if row[3].trim() == "NA" {
                None
            } else {
                let v: Vec<f64> = (3..9)
                    .map(|k| row[k].trim().parse::<f64>().map_err(|_| bad(expected[k])))
                    .collect::<Result<_>>()?;
                Some(Summary { mean: v[0], q05: v[1], q10: v[2], q50: v[3], q90: v[4], q95: v[5] })
            };
            let n = row[9].trim().parse().map_err(|_| bad("n"))?;
            series.rows.push(EstimateRow { estimator, district, month, summary, n });
            series.draws.push(None);
        }
        Ok(series)
    }

    /// Long-format per-draw values: `estimator,district,month,draw,value`.
    pub fn write_draws_csv<W: Write>(&self, writer: W) -> Result<()> {
        let err = |e: csv::Error| Error::parse("estimate draws", e);
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["estimator", "district", "month", "draw", "value"]).map_err(err)?;
        for (r, d) in self.rows.iter().zip(&self.draws) {
            if let Some(d) = d {
                for (b, v) in d.iter().enumerate() {
                    wtr.write_record([
                        r.estimator.to_string(),
                        r.district.to_string(),
                        r.month.to_string(),
                        b.to_string(),
                        v.to_string(),
                    ])
                    .map_err(err)?;
                }
            }
        }
        wtr.flush().map_err(|e| Error::parse("estimate draws", e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }
}

/// Reads long-format draws written by `write_draws_csv`, keyed by (estimator, district, month).
pub fn read_draws_csv<R: Read>(reader: R) -> Result<std::collections::BTreeMap<(EstimatorTag, usize, usize), Vec<f64>>> {
    let mut out: std::collections::BTreeMap<_, Vec<f64>> = std::collections::BTreeMap::new();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::parse("estimate draws", e))?;
        let bad = || Error::parse("estimate draws", format!("row {}", line + 1));
        let tag: EstimatorTag = row[0].parse()?;
        let s = row[1].trim().parse().map_err(|_| bad())?;
        let t = row[2].trim().parse().map_err(|_| bad())?;
        let v = row[4].trim().parse().map_err(|_| bad())?;
        out.entry((tag, s, t)).or_default().push(v);
    }
    Ok(out)
}

fn grid_groups<'a>(records: &'a [SurveyRecord], spec: &ModelSpec, keep: impl Fn(&SurveyRecord) -> bool) -> Vec<Vec<&'a SurveyRecord>> {
    let mut groups = vec![Vec::new(); spec.districts * spec.months];
    for r in records.iter().filter(|r| keep(r)) {
        if r.district < spec.districts && r.month < spec.months {
            groups[r.district * spec.months + r.month].push(r);
        }
    }
    groups
}

/// Direct estimates over the full grid from records of one modality.
///
/// F2F records use the unweighted proportion; MP records use design weights.
pub fn direct_series(records: &[SurveyRecord], spec: &ModelSpec, modality: Modality) -> Result<EstimateSeries> {
    let tag = match modality {
        Modality::F2f => EstimatorTag::DirectF2f,
        Modality::Mp => EstimatorTag::DirectMp,
    };
    let groups = grid_groups(records, spec, |r| r.modality == modality);
    let mut series = EstimateSeries::default();
    for s in 0..spec.districts {
        for t in 0..spec.months {
            let g = &groups[s * spec.months + t];
            let est = match modality {
                Modality::F2f => direct_proportion(g)?,
                Modality::Mp => direct_weighted(g)?,
            };
            series.rows.push(EstimateRow {
                estimator: tag,
                district: s,
                month: t,
                summary: est.map(|e| e.summary()),
                n: g.len(),
            });
            series.draws.push(None);
        }
    }
    Ok(series)
}

/// MR-family estimates over the full grid from the MP records of each district-month.
///
/// `Mr` keeps record modalities (phone-only fit); `JmrMp`/`JmrF2f` fix the modality.
#[allow(clippy::too_many_arguments)]
pub fn mr_series(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    records: &[SurveyRecord],
    tag: EstimatorTag,
    mode: DrawMode,
    seed: u64,
    keep_draws: bool,
) -> Result<EstimateSeries> {
    let modality = match tag {
        EstimatorTag::Mr => ModalityOverride::None,
        EstimatorTag::JmrMp => ModalityOverride::Fixed(Modality::Mp),
        EstimatorTag::JmrF2f => ModalityOverride::Fixed(Modality::F2f),
        other => return Err(Error::schema(format!("'{other}' is not an MR-family estimator"))),
    };
    let predictor = DrawPredictor::new(draws, spec)?;
    let groups = grid_groups(records, spec, |r| r.modality == Modality::Mp);
    let mut series = EstimateSeries::default();
    for s in 0..spec.districts {
        for t in 0..spec.months {
            let g = &groups[s * spec.months + t];
            let d = mr_with(&predictor, g, modality, mode, seed)?;
            series.rows.push(EstimateRow {
                estimator: tag,
                district: s,
                month: t,
                summary: d.as_deref().map(Summary::from_draws).transpose()?,
                n: g.len(),
            });
            series.draws.push(if keep_draws { d } else { None });
        }
    }
    Ok(series)
}

/// Poststratified estimates over the full grid; the same table serves every month.
#[allow(clippy::too_many_arguments)]
pub fn full_series(
    draws: &PosteriorDraws,
    spec: &ModelSpec,
    table: &PostStratTable,
    tag: EstimatorTag,
    modality: Modality,
    mode: DrawMode,
    seed: u64,
    keep_draws: bool,
) -> Result<EstimateSeries> {
    if !matches!(tag, EstimatorTag::Mrp | EstimatorTag::Jmrp) {
        return Err(Error::schema(format!("'{tag}' is not a poststratified estimator")));
    }
    table.check_compatible(spec)?;
    let predictor = DrawPredictor::new(draws, spec)?;
    let mut series = EstimateSeries::default();
    for s in 0..spec.districts {
        let cells = DistrictCells::build(&predictor, table, s, modality)?;
        let n = cells.as_ref().map_or(0, |c| c.weights.len());
        for t in 0..spec.months {
            let d = cells.as_ref().map(|c| c.series(&predictor, t, mode, seed));
            series.rows.push(EstimateRow {
                estimator: tag,
                district: s,
                month: t,
                summary: d.as_deref().map(Summary::from_draws).transpose()?,
                n,
            });
            series.draws.push(if keep_draws { d } else { None });
        }
    }
    Ok(series)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AdjacencyGraph, Covariate, Dataset, JointPosterior, ParamLayout};
    use crate::weights::{Cell, Provenance};
    use proptest::prelude::*;

    fn spec() -> ModelSpec {
        ModelSpec::new(vec![0, 0, 1], 2, 2, vec![Covariate::new("water", &["unimproved", "improved"])])
    }

    fn rec(y: bool, w: f64) -> SurveyRecord {
        SurveyRecord {
            outcome: y,
            covariates: vec![0],
            phone: 1.0,
            modality: Modality::Mp,
            district: 0,
            province: 0,
            month: 0,
            weight: w,
        }
    }

    fn names(spec: &ModelSpec) -> Vec<String> {
        let data = Dataset::new(Vec::new(), spec.clone(), AdjacencyGraph::new(3, [(0, 1), (1, 2)]).unwrap()).unwrap();
        JointPosterior::new(&data).unwrap().names()
    }

    /// Draws where every coordinate is zero except the named ones.
    fn draws_with(spec: &ModelSpec, b: usize, set: &[(&str, f64)]) -> PosteriorDraws {
        let names = names(spec);
        let mut row = vec![0.0; names.len()];
        for (name, v) in set {
            let j = names.iter().position(|n| n == name).unwrap_or_else(|| panic!("{name} not in {names:?}"));
            row[j] = *v;
        }
        PosteriorDraws::from_matrix(names, 1, b, row.repeat(b)).unwrap()
    }

    #[test]
    fn direct_examples() {
        let recs = [rec(true, 1.0), rec(true, 1.0), rec(false, 1.0), rec(false, 1.0)];
        let refs: Vec<&SurveyRecord> = recs.iter().collect();
        assert_eq!(direct_proportion(&refs).unwrap().unwrap().p, 0.5);
        let zeros = vec![rec(false, 1.0); 10];
        let e = direct_proportion(&zeros.iter().collect::<Vec<_>>()).unwrap().unwrap();
        assert_eq!((e.p, e.ci90.lower, e.ci80.lower), (0.0, 0.0, 0.0));
        let one = [rec(true, 1.0)];
        assert_eq!(direct_proportion(&[&one[0]]).unwrap().unwrap().p, 1.0);
        assert!(direct_proportion(&[]).unwrap().is_none());

        let eq = direct_weighted(&refs).unwrap().unwrap();
        assert_eq!(eq, direct_proportion(&refs).unwrap().unwrap());
        let w = [rec(true, 3.0), rec(false, 1.0)];
        assert_eq!(direct_weighted(&[&w[0], &w[1]]).unwrap().unwrap().p, 0.75);
        let dominant = [rec(true, 1e9), rec(false, 1.0), rec(false, 1.0)];
        let d = direct_weighted(&dominant.iter().collect::<Vec<_>>()).unwrap().unwrap();
        assert!((d.p - 1.0).abs() < 1e-8 && (d.n_eff - 1.0).abs() < 1e-8);
        let zero_w = [rec(true, 0.0)];
        assert!(direct_weighted(&[&zero_w[0]]).is_err());
    }

    #[test]
    fn direct_summary_uses_wilson_bounds() {
        let recs: Vec<SurveyRecord> = (0..10).map(|i| rec(i < 3, 1.0)).collect();
        let e = direct_proportion(&recs.iter().collect::<Vec<_>>()).unwrap().unwrap();
        let s = e.summary();
        assert_eq!(s.q05, wilson(3.0, 10.0, 0.9).unwrap().lower);
        assert_eq!(s.q90, wilson(3.0, 10.0, 0.8).unwrap().upper);
        assert!(s.q05 <= s.q10 && s.q10 <= s.q50 && s.q50 <= s.q90 && s.q90 <= s.q95);
    }

    #[test]
    fn mr_examples() {
        let spec = spec();
        let zero = draws_with(&spec, 5, &[]);
        let r = rec(true, 1.0);
        let out = mr_aggregate(&zero, &spec, &[&r], ModalityOverride::None, DrawMode::Rate, 0).unwrap().unwrap();
        assert!(out.iter().all(|p| *p == 0.5));
        let dup = mr_aggregate(&zero, &spec, &[&r, &r], ModalityOverride::None, DrawMode::Rate, 0).unwrap().unwrap();
        assert_eq!(dup, out);
        assert!(mr_aggregate(&zero, &spec, &[], ModalityOverride::None, DrawMode::Rate, 0).unwrap().is_none());

        let shifted = draws_with(&spec, 4, &[("gamma", -1.375), ("beta[modality=F2F]", 1.438)]);
        let r0 = SurveyRecord { phone: 0.0, ..r };
        let mp = mr_aggregate(&shifted, &spec, &[&r0], ModalityOverride::Fixed(Modality::Mp), DrawMode::Rate, 0).unwrap().unwrap();
        let f2f = mr_aggregate(&shifted, &spec, &[&r0], ModalityOverride::Fixed(Modality::F2f), DrawMode::Rate, 0).unwrap().unwrap();
        for (a, b) in mp.iter().zip(&f2f) {
            assert!((a - 1.0 / (1.0 + 1.375f64.exp())).abs() < 1e-15);
            assert!((b - 1.0 / (1.0 + (1.375f64 - 1.438).exp())).abs() < 1e-15);
            assert!(b > a);
        }
    }

    fn table(cells: Vec<Cell>) -> PostStratTable {
        PostStratTable::new(spec().covariate_schema, 3, cells, Provenance::FrequencyCounts).unwrap()
    }

    fn cell(district: usize, water: usize, phone: f64, weight: f64) -> Cell {
        Cell { district, covariates: vec![water], phone, weight }
    }

    #[test]
    fn jmrp_examples() {
        let spec = spec();
        let draws = draws_with(&spec, 3, &[("gamma", -0.4), ("beta[phone]", 0.3)]);
        let single = table(vec![cell(0, 0, 1.0, 1.0)]);
        let series = jmrp(&draws, &spec, &single, 0, 1, Modality::F2f, DrawMode::Rate, 0).unwrap().unwrap();
        let profile = CellProfile { covariates: vec![0], phone: 1.0, district: 0, month: 1 };
        let direct = crate::sampler::extract_cell_probability(&draws, &spec, &profile, Modality::F2f).unwrap();
        assert_eq!(series, direct);
        assert!(jmrp(&draws, &spec, &single, 1, 0, Modality::F2f, DrawMode::Rate, 0).unwrap().is_none());

        // Two cells whose probabilities are 0.2 and 0.4, weights 1 and 3.
        let l2 = (0.2f64 / 0.8).ln();
        let l4 = (0.4f64 / 0.6).ln();
        let d = draws_with(&spec, 4, &[("gamma", l2), ("beta[water=improved]", l4 - l2)]);
        let two = table(vec![cell(0, 0, 0.0, 1.0), cell(0, 1, 0.0, 3.0)]);
        let out = jmrp(&d, &spec, &two, 0, 0, Modality::Mp, DrawMode::Rate, 0).unwrap().unwrap();
        assert!(out.iter().all(|v| (v - 0.35).abs() < 1e-12));

        let zero_weight = table(vec![cell(0, 0, 0.0, 0.0)]);
        assert!(jmrp(&d, &spec, &zero_weight, 0, 0, Modality::Mp, DrawMode::Rate, 0).is_err());
    }

    #[test]
    fn bernoulli_and_rate_agree_in_mean() {
        let spec = spec();
        let b = 4000;
        let d = draws_with(&spec, b, &[("gamma", -0.7), ("beta[water=improved]", 1.1), ("beta[phone]", -0.5)]);
        let cells: Vec<Cell> = (0..10).map(|j| cell(0, j % 2, (j / 2 % 2) as f64, 1.0 + j as f64)).collect::<Vec<_>>();
        // Keep cell keys unique by folding duplicates into distinct districts' worth of weight.
        let mut merged: Vec<Cell> = Vec::new();
        for c in cells {
            match merged.iter_mut().find(|m| m.covariates == c.covariates && m.phone == c.phone) {
                Some(m) => m.weight += c.weight,
                None => merged.push(c),
            }
        }
        let tab = table(merged.clone());
        let rate = jmrp(&d, &spec, &tab, 0, 0, Modality::F2f, DrawMode::Rate, 1).unwrap().unwrap();
        let bern = jmrp(&d, &spec, &tab, 0, 0, Modality::F2f, DrawMode::Bernoulli, 1).unwrap().unwrap();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let w: Vec<f64> = merged.iter().map(|c| c.weight).collect();
        let n_eff = w.iter().sum::<f64>().powi(2) / w.iter().map(|x| x * x).sum::<f64>();
        let bound = 3.0 * (0.25 / (b as f64 * n_eff)).sqrt();
        assert!((mean(&rate) - mean(&bern)).abs() < bound);
        let again = jmrp(&d, &spec, &tab, 0, 0, Modality::F2f, DrawMode::Bernoulli, 1).unwrap().unwrap();
        assert_eq!(bern, again);
    }

    #[test]
    fn series_csv_round_trip_and_na() {
        let spec = spec();
        let d = draws_with(&spec, 5, &[("gamma", 0.2)]);
        let tab = table(vec![cell(0, 0, 1.0, 2.0), cell(2, 1, 0.0, 1.0)]);
        let series = full_series(&d, &spec, &tab, EstimatorTag::Jmrp, Modality::F2f, DrawMode::Rate, 0, false).unwrap();
        assert_eq!(series.rows.len(), 6);
        assert!(series.get(EstimatorTag::Jmrp, 1, 0).unwrap().summary.is_none());
        let mut buf = Vec::new();
        series.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("jmrp,1,0,NA,NA,NA,NA,NA,NA,0"));
        let back = EstimateSeries::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows, series.rows);
        assert!("bogus".parse::<EstimatorTag>().is_err());
    }

    #[test]
    fn district_permutation_equivariance() {
        // Districts 0 and 1 share a province; swapping their effects and cells swaps outputs.
        let spec = spec();
        let d = draws_with(&spec, 3, &[("phi[0]", 0.5), ("phi[1]", -0.2), ("zeta[0]", 0.1)]);
        let swapped = draws_with(&spec, 3, &[("phi[1]", 0.5), ("phi[0]", -0.2), ("zeta[1]", 0.1)]);
        let tab = table(vec![cell(0, 0, 1.0, 2.0), cell(1, 1, 0.0, 1.0)]);
        let tab_sw = table(vec![cell(1, 0, 1.0, 2.0), cell(0, 1, 0.0, 1.0)]);
        let a = full_series(&d, &spec, &tab, EstimatorTag::Jmrp, Modality::F2f, DrawMode::Rate, 0, true).unwrap();
        let b = full_series(&swapped, &spec, &tab_sw, EstimatorTag::Jmrp, Modality::F2f, DrawMode::Rate, 0, true).unwrap();
        for t in 0..2 {
            assert_eq!(a.get(EstimatorTag::Jmrp, 0, t).unwrap().summary, b.get(EstimatorTag::Jmrp, 1, t).unwrap().summary);
        }
    }

    #[test]
    fn layout_roundtrip_for_names() {
        let spec = spec();
        let n = names(&spec);
        let width = crate::model::DesignLayout::new(&spec).width();
        assert_eq!(width, 4);
        assert!(ParamLayout::from_names(&spec, width, &n).is_ok());
    }

    proptest! {
        #[test]
        fn weighted_direct_scale_invariant(ys in prop::collection::vec(any::<bool>(), 1..30), k in 0.01f64..100.0) {
            let recs: Vec<SurveyRecord> = ys.iter().enumerate().map(|(i, y)| rec(*y, 1.0 + i as f64)).collect();
            let scaled: Vec<SurveyRecord> = recs.iter().map(|r| SurveyRecord { weight: r.weight * k, ..r.clone() }).collect();
            let a = direct_weighted(&recs.iter().collect::<Vec<_>>()).unwrap().unwrap();
            let b = direct_weighted(&scaled.iter().collect::<Vec<_>>()).unwrap().unwrap();
            prop_assert!((a.p - b.p).abs() < 1e-12);
            prop_assert!((a.n_eff - b.n_eff).abs() < 1e-9 * a.n_eff);
        }

        #[test]
        fn summaries_monotone_and_bounded(vals in prop::collection::vec(0.0f64..1.0, 1..100)) {
            let s = Summary::from_draws(&vals).unwrap();
            prop_assert!(s.q05 <= s.q10 && s.q10 <= s.q50 && s.q50 <= s.q90 && s.q90 <= s.q95);
            prop_assert!((0.0..=1.0).contains(&s.mean));
        }

        #[test]
        fn f2f_dominates_mp_with_positive_effect(gamma in -3.0f64..3.0, delta in 0.01f64..3.0) {
            let spec = spec();
            let d = draws_with(&spec, 2, &[("gamma", gamma), ("beta[modality=F2F]", delta)]);
            let r = SurveyRecord { phone: 0.0, ..rec(true, 1.0) };
            let mp = mr_aggregate(&d, &spec, &[&r], ModalityOverride::Fixed(Modality::Mp), DrawMode::Rate, 0).unwrap().unwrap();
            let f2f = mr_aggregate(&d, &spec, &[&r], ModalityOverride::Fixed(Modality::F2f), DrawMode::Rate, 0).unwrap().unwrap();
            for (a, b) in mp.iter().zip(&f2f) {
                prop_assert!(b > a);
            }
        }
    }
}
