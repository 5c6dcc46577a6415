//! Dummy-coded design rows.
//!
//! Column order: one column per non-reference level of each schema covariate,
//! the phone-ownership value, the F2F indicator (when modelled), then the
//! F2F × covariate-dummy products (when modelled).

use crate::error::{Error, Result};
use crate::model::spec::{Modality, ModelSpec, SurveyRecord};

#[derive(Debug, Clone, PartialEq)]
pub struct DesignLayout {
    /// First dummy column of each covariate, plus the level code -> column offset.
    covariate_columns: Vec<Vec<Option<usize>>>,
    dummy_width: usize,
    phone_column: usize,
    modality_column: Option<usize>,
    interaction_offset: Option<usize>,
    names: Vec<String>,
}

impl DesignLayout {
    pub fn new(spec: &ModelSpec) -> Self {
        let mut covariate_columns = Vec::with_capacity(spec.covariate_schema.len());
        let mut names = Vec::new();
        for cov in &spec.covariate_schema {
            let mut cols = vec![None; cov.levels.len()];
            for (code, label) in cov.dummy_levels() {
                cols[code] = Some(names.len());
                names.push(format!("{}={}", cov.name, label));
            }
            covariate_columns.push(cols);
        }
        let dummy_width = names.len();
        let phone_column = names.len();
        names.push("phone".to_string());
        let modality_column = spec.include_modality.then(|| {
            names.push("modality=F2F".to_string());
            names.len() - 1
        });
        let interaction_offset = spec.include_modality_interactions.then(|| {
            let offset = names.len();
            for k in 0..dummy_width {
                names.push(format!("{}:F2F", names[k]));
            }
            offset
        });
        DesignLayout {
            covariate_columns,
            dummy_width,
            phone_column,
            modality_column,
            interaction_offset,
            names,
        }
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn column_names(&self) -> &[String] {
        &self.names
    }

    pub fn modality_column(&self) -> Option<usize> {
        self.modality_column
    }

    pub fn phone_column(&self) -> usize {
        self.phone_column
    }

    /// Columns holding modality × covariate products, if modelled.
    pub fn interaction_columns(&self) -> std::ops::Range<usize> {
        match self.interaction_offset {
            Some(o) => o..o + self.dummy_width,
            None => 0..0,
        }
    }

    /// Writes the design row for a covariate profile into `out`.
    pub fn fill(
        &self,
        spec: &ModelSpec,
        covariates: &[usize],
        phone: f64,
        modality: Modality,
        out: &mut [f64],
    ) -> Result<()> {
        if covariates.len() != self.covariate_columns.len() {
            return Err(Error::dim(format!(
                "{} covariate codes for a schema of {}",
                covariates.len(),
                self.covariate_columns.len()
            )));
        }
        if out.len() != self.width() {
            return Err(Error::dim(format!(
                "row buffer has {} slots, design width is {}",
                out.len(),
                self.width()
            )));
        }
        out.fill(0.0);
        for (k, (&code, cols)) in covariates.iter().zip(&self.covariate_columns).enumerate() {
            match cols.get(code) {
                Some(Some(col)) => out[*col] = 1.0,
                Some(None) => {}
                None => {
                    return Err(Error::schema(format!(
                        "unknown category code {code} for covariate '{}'",
                        spec.covariate_schema[k].name
                    )))
                }
            }
        }
        out[self.phone_column] = phone;
        let m = modality.indicator();
        if let Some(col) = self.modality_column {
            out[col] = m;
        }
        if let Some(offset) = self.interaction_offset {
            for k in 0..self.dummy_width {
                out[offset + k] = m * out[k];
            }
        }
        Ok(())
    }

    pub fn row(
        &self,
        spec: &ModelSpec,
        covariates: &[usize],
        phone: f64,
        modality: Modality,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.width()];
        self.fill(spec, covariates, phone, modality, &mut out)?;
        Ok(out)
    }
}

/// Design row of one record under `spec`.
pub fn build_design_row(record: &SurveyRecord, spec: &ModelSpec) -> Result<Vec<f64>> {
    DesignLayout::new(spec).row(spec, &record.covariates, record.phone, record.modality)
}
