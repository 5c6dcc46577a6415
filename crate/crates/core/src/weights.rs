//! Poststratification tables and raking (iterative proportional fitting).
//!
//! A cell is a district plus one level per schema covariate plus a 0/1 phone
//! ownership value. Raking variables are addressed by name: any schema
//! covariate, `phone` (categories `0`/`1`) or `district` (categories are indices).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Covariate, ModelSpec, SurveyRecord};

pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    FrequencyCounts,
    Raked,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub district: usize,
    pub covariates: Vec<usize>,
    pub phone: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostStratTable {
    pub schema: Vec<Covariate>,
    pub districts: usize,
    pub cells: Vec<Cell>,
    pub provenance: Provenance,
}

/// Ordering key; phone ownership compares by bit pattern, which is total for 0/1 values.
fn cell_key(c: &Cell) -> (usize, Vec<usize>, u64) {
    (c.district, c.covariates.clone(), c.phone.to_bits())
}

impl PostStratTable {
    /// Validates and sorts the cells; duplicate keys are an error.
    pub fn new(schema: Vec<Covariate>, districts: usize, mut cells: Vec<Cell>, provenance: Provenance) -> Result<Self> {
        for c in &cells {
            if c.district >= districts {
                return Err(Error::schema(format!("cell district {} outside S = {districts}", c.district)));
            }
            if c.covariates.len() != schema.len() {
                return Err(Error::schema(format!(
                    "cell has {} covariates, schema has {}",
                    c.covariates.len(),
                    schema.len()
                )));
            }
            for (code, cov) in c.covariates.iter().zip(&schema) {
                if *code >= cov.levels.len() {
                    return Err(Error::schema(format!("unknown category code {code} for covariate '{}'", cov.name)));
                }
            }
            if !(0.0..=1.0).contains(&c.phone) {
                return Err(Error::schema(format!("cell phone value {} outside [0, 1]", c.phone)));
            }
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(Error::schema(format!("cell weight {} must be finite and nonnegative", c.weight)));
            }
        }
        cells.sort_by_key(cell_key);
        if let Some(w) = cells.windows(2).find(|w| cell_key(&w[0]) == cell_key(&w[1])) {
            return Err(Error::schema(format!("duplicate cell in district {}", w[0].district)));
        }
        Ok(PostStratTable { schema, districts, cells, provenance })
    }

    pub fn total(&self) -> f64 {
        self.cells.iter().map(|c| c.weight).sum()
    }

    /// Checks that the table's covariate schema matches a model spec.
    pub fn check_compatible(&self, spec: &ModelSpec) -> Result<()> {
        if self.districts != spec.districts {
            return Err(Error::schema(format!(
                "table covers {} districts, model has S = {}",
                self.districts, spec.districts
            )));
        }
        for (a, b) in self.schema.iter().zip(&spec.covariate_schema) {
            if a.name != b.name || a.levels != b.levels {
                return Err(Error::schema(format!(
                    "table covariate '{}' does not match model covariate '{}'",
                    a.name, b.name
                )));
            }
        }
        if self.schema.len() != spec.covariate_schema.len() {
            return Err(Error::schema("table and model covariate schemas differ in length"));
        }
        Ok(())
    }

    /// Category label of `cell` on raking variable `variable`.
    fn category(&self, variable: &Variable, cell: &Cell) -> String {
        match variable {
            Variable::District => cell.district.to_string(),
            Variable::Phone => format_phone(cell.phone),
            Variable::Covariate(k) => self.schema[*k].levels[cell.covariates[*k]].clone(),
        }
    }

    fn variable(&self, name: &str) -> Result<Variable> {
        match name {
            "district" => Ok(Variable::District),
            "phone" => Ok(Variable::Phone),
            _ => self
                .schema
                .iter()
                .position(|c| c.name == name)
                .map(Variable::Covariate)
                .ok_or_else(|| Error::schema(format!("unknown raking variable '{name}'"))),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let err = |e: csv::Error| Error::parse("poststratification table", e);
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["district".to_string()];
        header.extend(self.schema.iter().map(|c| c.name.clone()));
        header.push("phone".into());
        header.push("weight".into());
        wtr.write_record(&header).map_err(err)?;
        for c in &self.cells {
            let mut row = vec![c.district.to_string()];
            for (code, cov) in c.covariates.iter().zip(&self.schema) {
                row.push(cov.levels[*code].clone());
            }
            row.push(format_phone(c.phone));
            row.push(c.weight.to_string());
            wtr.write_record(&row).map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::parse("poststratification table", e))
    }

    pub fn read_csv<R: Read>(reader: R, spec: &ModelSpec, provenance: Provenance) -> Result<Self> {
        let ctx = "poststratification table";
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse(ctx, e))?.clone();
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::schema(format!("table missing column '{name}'")))
        };
        let d_col = find("district")?;
        let p_col = find("phone")?;
        let w_col = find("weight")?;
        let cov_cols: Vec<usize> = spec.covariate_schema.iter().map(|c| find(&c.name)).collect::<Result<_>>()?;
        let mut cells = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse(ctx, e))?;
            let bad = |what: &str| Error::parse(ctx, format!("row {}: bad {what}", line + 1));
            let district = row[d_col].trim().parse().map_err(|_| bad("district"))?;
            let phone = row[p_col].trim().parse().map_err(|_| bad("phone"))?;
            let weight = row[w_col].trim().parse().map_err(|_| bad("weight"))?;
            let mut covariates = Vec::with_capacity(cov_cols.len());
            for (cov, &col) in spec.covariate_schema.iter().zip(&cov_cols) {
                let label = row[col].trim();
                covariates.push(cov.code(label).ok_or_else(|| {
                    Error::schema(format!("row {}: unknown category '{label}' for covariate '{}'", line + 1, cov.name))
                })?);
            }
            cells.push(Cell { district, covariates, phone, weight });
        }
        Self::new(spec.covariate_schema.clone(), spec.districts, cells, provenance)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn load(path: &Path, spec: &ModelSpec, provenance: Provenance) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, spec, provenance)
    }
}

fn format_phone(p: f64) -> String {
    if p == 0.0 {
        "0".into()
    } else if p == 1.0 {
        "1".into()
    } else {
        p.to_string()
    }
}

enum Variable {
    District,
    Phone,
    Covariate(usize),
}

/// Cells of one district, weights unchanged.
pub fn restrict(table: &PostStratTable, district: usize) -> PostStratTable {
    PostStratTable {
        schema: table.schema.clone(),
        districts: table.districts,
        cells: table.cells.iter().filter(|c| c.district == district).cloned().collect(),
        provenance: table.provenance,
    }
}

/// Cell weights are the (design-)weighted counts of matching records.
pub fn table_from_microdata(records: &[SurveyRecord], spec: &ModelSpec) -> Result<PostStratTable> {
    if records.is_empty() {
        return Err(Error::NoData("no microdata rows to tabulate".into()));
    }
    let mut acc: BTreeMap<(usize, Vec<usize>, u64), f64> = BTreeMap::new();
    for r in records {
        r.validate(spec)?;
        *acc.entry((r.district, r.covariates.clone(), r.phone.to_bits())).or_default() += r.weight;
    }
    let cells = acc
        .into_iter()
        .map(|((district, covariates, phone), weight)| Cell {
            district,
            covariates,
            phone: f64::from_bits(phone),
            weight,
        })
        .collect();
    PostStratTable::new(spec.covariate_schema.clone(), spec.districts, cells, Provenance::FrequencyCounts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetScope {
    #[default]
    National,
    /// The same proportions are imposed within every district.
    PerDistrict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginTarget {
    pub variable: String,
    pub proportions: BTreeMap<String, f64>,
    #[serde(default)]
    pub scope: TargetScope,
}

impl MarginTarget {
    pub fn validate(&self) -> Result<()> {
        if self.proportions.values().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::schema(format!("margin '{}' has a negative or non-finite proportion", self.variable)));
        }
        let sum: f64 = self.proportions.values().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::schema(format!("margin '{}' proportions sum to {sum}, not 1", self.variable)));
        }
        Ok(())
    }

    /// Reads a JSON array of targets.
    pub fn load_all(path: &Path) -> Result<Vec<MarginTarget>> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let targets: Vec<MarginTarget> = serde_json::from_str(&text).map_err(|e| Error::parse("margin targets", e))?;
        for t in &targets {
            t.validate()?;
        }
        Ok(targets)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RakeOutcome {
    pub table: PostStratTable,
    /// Full passes over the target list.
    pub cycles: usize,
    /// Largest absolute margin error (on proportions) after the last cycle.
    pub residual: f64,
}

struct Margin {
    /// Category index per cell.
    codes: Vec<usize>,
    /// Scope group per cell (district index, or 0 for national).
    groups: Vec<usize>,
    n_groups: usize,
    targets: Vec<f64>,
}

impl Margin {
    fn build(table: &PostStratTable, target: &MarginTarget) -> Result<Self> {
        target.validate()?;
        let variable = table.variable(&target.variable)?;
        let mut categories: Vec<String> = target.proportions.keys().cloned().collect();
        let mut codes = Vec::with_capacity(table.cells.len());
        for c in &table.cells {
            let label = table.category(&variable, c);
            let code = match categories.iter().position(|k| *k == label) {
                Some(i) => i,
                None => {
                    categories.push(label);
                    categories.len() - 1
                }
            };
            codes.push(code);
        }
        let targets = categories
            .iter()
            .map(|k| target.proportions.get(k).copied().unwrap_or(0.0))
            .collect();
        let (groups, n_groups) = match target.scope {
            TargetScope::National => (vec![0; table.cells.len()], 1),
            TargetScope::PerDistrict => (table.cells.iter().map(|c| c.district).collect(), table.districts),
        };
        let margin = Margin { codes, groups, n_groups, targets };
        margin.check_feasible(table, target, &categories)?;
        Ok(margin)
    }

    fn sums(&self, weights: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.targets.len();
        let mut by_cat = vec![0.0; self.n_groups * k];
        let mut by_group = vec![0.0; self.n_groups];
        for ((w, &c), &g) in weights.iter().zip(&self.codes).zip(&self.groups) {
            by_cat[g * k + c] += w;
            by_group[g] += w;
        }
        (by_cat, by_group)
    }

    fn check_feasible(&self, table: &PostStratTable, target: &MarginTarget, categories: &[String]) -> Result<()> {
        let weights: Vec<f64> = table.cells.iter().map(|c| c.weight).collect();
        let (by_cat, by_group) = self.sums(&weights);
        let k = self.targets.len();
        for g in 0..self.n_groups {
            if by_group[g] <= 0.0 {
                continue;
            }
            for (c, &t) in self.targets.iter().enumerate() {
                if t > 0.0 && by_cat[g * k + c] <= 0.0 {
                    let place = match target.scope {
                        TargetScope::National => "the prior table".to_string(),
                        TargetScope::PerDistrict => format!("district {g}"),
                    };
                    return Err(Error::Infeasible {
                        variable: target.variable.clone(),
                        category: categories[c].clone(),
                        reason: format!("target proportion {t} but no prior mass in {place}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// One proportional rescaling step.
    fn apply(&self, weights: &mut [f64]) {
        let (by_cat, by_group) = self.sums(weights);
        let k = self.targets.len();
        for ((w, &c), &g) in weights.iter_mut().zip(&self.codes).zip(&self.groups) {
            let current = by_cat[g * k + c];
            if current > 0.0 {
                *w *= self.targets[c] * by_group[g] / current;
            }
        }
    }

    fn residual(&self, weights: &[f64]) -> f64 {
        let (by_cat, by_group) = self.sums(weights);
        let k = self.targets.len();
        let mut worst: f64 = 0.0;
        for g in 0..self.n_groups {
            if by_group[g] <= 0.0 {
                continue;
            }
            for (c, t) in self.targets.iter().enumerate() {
                worst = worst.max((by_cat[g * k + c] / by_group[g] - t).abs());
            }
        }
        worst
    }
}

/// Classic multiplicative IPF. Zero cells stay zero and totals are preserved.
pub fn rake(prior: &PostStratTable, targets: &[MarginTarget], tol: f64, max_iter: usize) -> Result<RakeOutcome> {
    if !(tol > 0.0) {
        return Err(Error::domain(format!("raking tolerance must be positive, got {tol}")));
    }
    if prior.total() <= 0.0 {
        return Err(Error::domain("prior table has no mass"));
    }
    let margins: Vec<Margin> = targets.iter().map(|t| Margin::build(prior, t)).collect::<Result<_>>()?;
    let mut weights: Vec<f64> = prior.cells.iter().map(|c| c.weight).collect();
    let mut residual = f64::INFINITY;
    for cycle in 1..=max_iter {
        for m in &margins {
            m.apply(&mut weights);
        }
        residual = margins.iter().map(|m| m.residual(&weights)).fold(0.0, f64::max);
        if residual <= tol {
            let mut table = prior.clone();
            for (c, w) in table.cells.iter_mut().zip(weights) {
                c.weight = w;
            }
            table.provenance = Provenance::Raked;
            return Ok(RakeOutcome { table, cycles: cycle, residual });
        }
    }
    Err(Error::Convergence { iterations: max_iter, residual })
}
