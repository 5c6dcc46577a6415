//! CSV contract for survey records.
//!
//! Header: `outcome,modality,district,province,month,weight,phone_prob`,
//! followed by one column per schema covariate holding level labels.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::spec::{ModelSpec, SurveyRecord};

pub const FIXED_COLUMNS: [&str; 7] = [
    "outcome", "modality", "district", "province", "month", "weight", "phone_prob",
];

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::schema(format!("missing column '{name}'")))
}

/// Reads records; rows with missing covariate values are rejected with a per-covariate count.
pub fn read_records<R: Read>(reader: R, spec: &ModelSpec) -> Result<Vec<SurveyRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse("records", e))?.clone();
    let fixed: Vec<usize> = FIXED_COLUMNS
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<_>>()?;
    let cov_cols: Vec<usize> = spec
        .covariate_schema
        .iter()
        .map(|c| column(&headers, &c.name))
        .collect::<Result<_>>()?;

    let mut missing: BTreeMap<&str, usize> = BTreeMap::new();
    let mut records = Vec::new();
    for (line, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| Error::parse("records", e))?;
        let ctx = |what: &str, v: &str| Error::parse("records", format!("row {}: bad {what} '{v}'", line + 1));
        let field = |k: usize| row.get(fixed[k]).unwrap_or("").trim();

        let outcome = match field(0) {
            "1" => true,
            "0" => false,
            other => return Err(ctx("outcome", other)),
        };
        let modality = field(1).parse()?;
        let district = field(2).parse().map_err(|_| ctx("district", field(2)))?;
        let province = field(3).parse().map_err(|_| ctx("province", field(3)))?;
        let month = field(4).parse().map_err(|_| ctx("month", field(4)))?;
        let weight = field(5).parse().map_err(|_| ctx("weight", field(5)))?;
        let phone = field(6).parse().map_err(|_| ctx("phone_prob", field(6)))?;

        let mut covariates = Vec::with_capacity(cov_cols.len());
        let mut complete = true;
        for (cov, &col) in spec.covariate_schema.iter().zip(&cov_cols) {
            let label = row.get(col).unwrap_or("").trim();
            if label.is_empty() || label.eq_ignore_ascii_case("na") {
                *missing.entry(cov.name.as_str()).or_default() += 1;
                complete = false;
                continue;
            }
            match cov.code(label) {
                Some(code) => covariates.push(code),
                None => {
                    return Err(Error::schema(format!(
                        "row {}: unknown category '{label}' for covariate '{}'",
                        line + 1,
                        cov.name
                    )))
                }
            }
        }
        if !complete {
            continue;
        }
        let rec = SurveyRecord {
            outcome,
            covariates,
            phone,
            modality,
            district,
            province,
            month,
            weight,
        };
        rec.validate(spec)
            .map_err(|e| Error::schema(format!("row {}: {e}", line + 1)))?;
        records.push(rec);
    }
    if !missing.is_empty() {
        let report: Vec<String> = missing.iter().map(|(k, v)| format!("{k}: {v}")).collect();
        return Err(Error::schema(format!(
            "records with missing covariates ({})",
            report.join(", ")
        )));
    }
    Ok(records)
}

pub fn load_records(path: &Path, spec: &ModelSpec) -> Result<Vec<SurveyRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_records(file, spec)
}

pub fn write_records<W: Write>(writer: W, spec: &ModelSpec, records: &[SurveyRecord]) -> Result<()> {
    let err = |e: csv::Error| Error::parse("records", e);
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FIXED_COLUMNS.to_vec();
    header.extend(spec.covariate_schema.iter().map(|c| c.name.as_str()));
    wtr.write_record(&header).map_err(err)?;
    for rec in records {
        let mut row = vec![
            if rec.outcome { "1" } else { "0" }.to_string(),
            rec.modality.to_string(),
            rec.district.to_string(),
            rec.province.to_string(),
            rec.month.to_string(),
            rec.weight.to_string(),
            rec.phone.to_string(),
        ];
        for (code, cov) in rec.covariates.iter().zip(&spec.covariate_schema) {
            row.push(cov.levels[*code].clone());
        }
        wtr.write_record(&row).map_err(err)?;
    }
    wtr.flush().map_err(|e| Error::parse("records", e))?;
    Ok(())
}

pub fn save_records(path: &Path, spec: &ModelSpec, records: &[SurveyRecord]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(std::io::BufWriter::new(file), spec, records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::spec::{Covariate, Modality};

    fn spec() -> ModelSpec {
        ModelSpec::new(
            vec![0, 1],
            2,
            2,
            vec![
                Covariate::new("water", &["other", "improved"]),
                Covariate::new("size", &["1-2", "3-4", "5-6", "7+"]),
            ],
        )
    }

    #[test]
    fn round_trip() {
        let records = vec![
            SurveyRecord {
                outcome: true,
                covariates: vec![1, 3],
                phone: 0.8125,
                modality: Modality::Mp,
                district: 1,
                province: 1,
                month: 0,
                weight: 2.5,
            },
            SurveyRecord {
                outcome: false,
                covariates: vec![0, 0],
                phone: 0.0,
                modality: Modality::F2f,
                district: 0,
                province: 0,
                month: 1,
                weight: 1.0,
            },
        ];
        let mut buf = Vec::new();
        write_records(&mut buf, &spec(), &records).unwrap();
        let back = read_records(buf.as_slice(), &spec()).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn missing_covariates_reported_per_column() {
        let text = "outcome,modality,district,province,month,weight,phone_prob,water,size\n\
                    1,MP,0,0,0,1,0.5,,3-4\n\
                    0,MP,0,0,1,1,0.5,,\n\
                    0,F2F,1,1,1,1,1,improved,7+\n";
        let err = read_records(text.as_bytes(), &spec()).unwrap_err().to_string();
        assert!(err.contains("water: 2"), "{err}");
        assert!(err.contains("size: 1"), "{err}");
    }

    #[test]
    fn unknown_level_names_covariate() {
        let text = "outcome,modality,district,province,month,weight,phone_prob,water,size\n\
                    1,MP,0,0,0,1,0.5,piped,3-4\n";
        let err = read_records(text.as_bytes(), &spec()).unwrap_err().to_string();
        assert!(err.contains("water"), "{err}");
    }

    #[test]
    fn province_mismatch_rejected() {
        let text = "outcome,modality,district,province,month,weight,phone_prob,water,size\n\
                    1,MP,1,0,0,1,0.5,other,3-4\n";
        assert!(read_records(text.as_bytes(), &spec()).is_err());
    }
}
