//! Model configuration and survey record types.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interview mode. Phone (`MP`) is the reference level of the modality dummy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Modality {
    #[serde(rename = "MP")]
    Mp,
    #[serde(rename = "F2F")]
    F2f,
}

impl Modality {
    pub fn indicator(self) -> f64 {
        match self {
            Modality::Mp => 0.0,
            Modality::F2f => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Mp => "MP",
            Modality::F2f => "F2F",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "MP" => Ok(Modality::Mp),
            "F2F" => Ok(Modality::F2f),
            other => Err(Error::schema(format!("unknown modality '{other}'"))),
        }
    }
}

/// Granularity of the space-time interaction term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InteractionLevel {
    #[default]
    Province,
    District,
}

/// Prior family on the random-effect scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PriorFamily {
    #[default]
    #[serde(rename = "PC", alias = "pc")]
    Pc,
    #[serde(rename = "HalfCauchy", alias = "half_cauchy")]
    HalfCauchy,
}

/// A categorical covariate with dummy coding against a reference level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariate {
    pub name: String,
    pub levels: Vec<String>,
    /// Defaults to the first level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl Covariate {
    pub fn new(name: &str, levels: &[&str]) -> Self {
        Covariate {
            name: name.to_string(),
            levels: levels.iter().map(|l| l.to_string()).collect(),
            reference: None,
        }
    }

    pub fn reference_index(&self) -> usize {
        self.reference
            .as_ref()
            .and_then(|r| self.levels.iter().position(|l| l == r))
            .unwrap_or(0)
    }

    pub fn code(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l == label)
    }

    /// Non-reference levels in schema order; each gets one design column.
    pub fn dummy_levels(&self) -> impl Iterator<Item = (usize, &str)> {
        let reference = self.reference_index();
        self.levels
            .iter()
            .enumerate()
            .filter(move |(i, _)| *i != reference)
            .map(|(i, l)| (i, l.as_str()))
    }
}

fn default_pc_threshold() -> f64 {
    1.0
}
fn default_pc_tail_prob() -> f64 {
    0.01
}
fn default_half_cauchy_scale() -> f64 {
    1.0
}
fn default_beta_sd() -> f64 {
    5.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(rename = "S")]
    pub districts: usize,
    #[serde(rename = "R")]
    pub provinces: usize,
    #[serde(rename = "T")]
    pub months: usize,
    pub district_to_province: Vec<usize>,
    pub covariate_schema: Vec<Covariate>,
    #[serde(default = "default_true")]
    pub include_modality: bool,
    #[serde(default = "default_true")]
    pub include_modality_interactions: bool,
    #[serde(default)]
    pub interaction_level: InteractionLevel,
    #[serde(default)]
    pub prior_family: PriorFamily,
    #[serde(default = "default_pc_threshold")]
    pub pc_threshold: f64,
    #[serde(default = "default_pc_tail_prob")]
    pub pc_tail_prob: f64,
    #[serde(default = "default_half_cauchy_scale")]
    pub half_cauchy_scale: f64,
    #[serde(default = "default_beta_sd")]
    pub beta_sd: f64,
}

impl ModelSpec {
    /// Joint-model defaults for the given dimensions and schema.
    pub fn new(
        district_to_province: Vec<usize>,
        provinces: usize,
        months: usize,
        covariate_schema: Vec<Covariate>,
    ) -> Self {
        ModelSpec {
            districts: district_to_province.len(),
            provinces,
            months,
            district_to_province,
            covariate_schema,
            include_modality: true,
            include_modality_interactions: true,
            interaction_level: InteractionLevel::Province,
            prior_family: PriorFamily::Pc,
            pc_threshold: default_pc_threshold(),
            pc_tail_prob: default_pc_tail_prob(),
            half_cauchy_scale: default_half_cauchy_scale(),
            beta_sd: default_beta_sd(),
        }
    }

    /// Same structure without any modality terms (phone-only model).
    pub fn phone_only(&self) -> Self {
        ModelSpec {
            include_modality: false,
            include_modality_interactions: false,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.districts == 0 || self.provinces == 0 || self.months == 0 {
            return Err(Error::schema("S, R and T must all be at least 1"));
        }
        if self.district_to_province.len() != self.districts {
            return Err(Error::schema(format!(
                "district_to_province has {} entries, expected S = {}",
                self.district_to_province.len(),
                self.districts
            )));
        }
        if let Some((s, r)) = self
            .district_to_province
            .iter()
            .enumerate()
            .find(|(_, &r)| r >= self.provinces)
        {
            return Err(Error::schema(format!(
                "district {s} maps to province {r}, but R = {}",
                self.provinces
            )));
        }
        for cov in &self.covariate_schema {
            if cov.levels.is_empty() {
                return Err(Error::schema(format!("covariate '{}' has no levels", cov.name)));
            }
            for (i, level) in cov.levels.iter().enumerate() {
                if cov.levels[..i].contains(level) {
                    return Err(Error::schema(format!(
                        "covariate '{}' repeats level '{level}'",
                        cov.name
                    )));
                }
            }
            if let Some(r) = &cov.reference {
                if cov.code(r).is_none() {
                    return Err(Error::schema(format!(
                        "reference level '{r}' not among levels of covariate '{}'",
                        cov.name
                    )));
                }
            }
        }
        if self.include_modality_interactions && !self.include_modality {
            return Err(Error::schema(
                "include_modality_interactions requires include_modality",
            ));
        }
        if !(self.pc_tail_prob > 0.0 && self.pc_tail_prob < 1.0) {
            return Err(Error::schema("pc_tail_prob must lie in (0, 1)"));
        }
        for (key, v) in [
            ("pc_threshold", self.pc_threshold),
            ("half_cauchy_scale", self.half_cauchy_scale),
            ("beta_sd", self.beta_sd),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::schema(format!("{key} must be positive and finite")));
            }
        }
        Ok(())
    }

    /// Number of space-time interaction coefficients.
    pub fn psi_len(&self) -> usize {
        match self.interaction_level {
            InteractionLevel::Province => self.provinces * self.months,
            InteractionLevel::District => self.districts * self.months,
        }
    }

    /// Flat index into psi for district `s`, month `t`.
    pub fn psi_index(&self, district: usize, month: usize) -> usize {
        let unit = match self.interaction_level {
            InteractionLevel::Province => self.district_to_province[district],
            InteractionLevel::District => district,
        };
        unit * self.months + month
    }

    /// Rate of the exponential penalised-complexity prior.
    pub fn pc_rate(&self) -> f64 {
        -self.pc_tail_prob.ln() / self.pc_threshold
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let spec: ModelSpec =
            serde_json::from_str(text).map_err(|e| Error::parse("model config", e))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| Error::parse("model config", e))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Loads JSON or TOML depending on the file extension.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model spec serializes")
    }
}

/// One household interview.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyRecord {
    pub outcome: bool,
    /// Level index per schema covariate.
    pub covariates: Vec<usize>,
    /// Phone ownership: observed 0/1 for F2F, imputed probability for MP.
    pub phone: f64,
    pub modality: Modality,
    pub district: usize,
    pub province: usize,
    pub month: usize,
    pub weight: f64,
}

impl SurveyRecord {
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.covariates.len() != spec.covariate_schema.len() {
            return Err(Error::schema(format!(
                "record has {} covariates, schema has {}",
                self.covariates.len(),
                spec.covariate_schema.len()
            )));
        }
        for (code, cov) in self.covariates.iter().zip(&spec.covariate_schema) {
            if *code >= cov.levels.len() {
                return Err(Error::schema(format!(
                    "unknown category code {code} for covariate '{}'",
                    cov.name
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.phone) {
            return Err(Error::schema(format!(
                "phone ownership {} outside [0, 1]",
                self.phone
            )));
        }
        if self.district >= spec.districts {
            return Err(Error::schema(format!(
                "district {} out of range (S = {})",
                self.district, spec.districts
            )));
        }
        if spec.district_to_province[self.district] != self.province {
            return Err(Error::schema(format!(
                "district {} belongs to province {}, record says {}",
                self.district, spec.district_to_province[self.district], self.province
            )));
        }
        if self.month >= spec.months {
            return Err(Error::schema(format!(
                "month {} out of range (T = {})",
                self.month, spec.months
            )));
        }
        if !(self.weight.is_finite() && self.weight >= 0.0) {
            return Err(Error::schema(format!("weight {} is not a nonnegative real", self.weight)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> ModelSpec {
        ModelSpec::new(
            vec![0, 0, 1],
            2,
            4,
            vec![
                Covariate::new("water", &["other", "improved"]),
                Covariate::new("education", &["none", "primary", "secondary", "higher"]),
            ],
        )
    }

    #[test]
    fn pc_rate_matches_tail_probability() {
        let s = spec();
        assert!((s.pc_rate() - 4.605170185988091).abs() < 1e-12);
        assert!(((-s.pc_rate()).exp() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_province_map() {
        let mut s = spec();
        s.district_to_province[2] = 5;
        assert!(matches!(s.validate(), Err(Error::Schema(_))));
    }

    #[test]
    fn rejects_missing_reference_level() {
        let mut s = spec();
        s.covariate_schema[0].reference = Some("piped".into());
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("water"), "{err}");
    }

    #[test]
    fn json_keys_mirror_fields() {
        let s = spec();
        let text = s.to_json();
        assert!(text.contains("\"S\": 3"));
        let back = ModelSpec::from_json_str(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn toml_config_with_defaults() {
        let text = r#"
            S = 2
            R = 1
            T = 3
            district_to_province = [0, 0]
            prior_family = "HalfCauchy"
            interaction_level = "district"

            [[covariate_schema]]
            name = "toilet"
            levels = ["unimproved", "improved"]
        "#;
        let s = ModelSpec::from_toml_str(text).unwrap();
        assert_eq!(s.prior_family, PriorFamily::HalfCauchy);
        assert_eq!(s.interaction_level, InteractionLevel::District);
        assert_eq!(s.psi_len(), 6);
        assert_eq!(s.beta_sd, 5.0);
        assert!(s.include_modality);
    }

    #[test]
    fn unknown_key_is_rejected_by_name() {
        let text = r#"{"S":1,"R":1,"T":1,"district_to_province":[0],"covariate_schema":[],"beta_sdd":2}"#;
        let err = ModelSpec::from_json_str(text).unwrap_err().to_string();
        assert!(err.contains("beta_sdd"), "{err}");
    }

    #[test]
    fn record_validation() {
        let s = spec();
        let mut rec = SurveyRecord {
            outcome: true,
            covariates: vec![1, 3],
            phone: 0.4,
            modality: Modality::Mp,
            district: 2,
            province: 1,
            month: 3,
            weight: 1.0,
        };
        rec.validate(&s).unwrap();
        rec.province = 0;
        assert!(rec.validate(&s).is_err());
        rec.province = 1;
        rec.covariates[1] = 4;
        assert!(rec.validate(&s).unwrap_err().to_string().contains("education"));
    }
}
