//! Retained posterior draws and their file formats.
//!
//! Draws are stored as a columnar CSV (`chain,draw,<coordinates...>`) with a
//! JSON sidecar carrying adaptation metadata and per-transition statistics.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampler::nuts::TransitionStats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainAdaptation {
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Sidecar {
    chains: usize,
    draws_per_chain: usize,
    names: Vec<String>,
    adaptation: Vec<ChainAdaptation>,
    divergent: Vec<bool>,
    treedepth: Vec<u32>,
    n_leapfrog: Vec<u32>,
    accept_stat: Vec<f64>,
}

/// B × P matrix of draws, rows ordered chain by chain.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    names: Vec<String>,
    chains: usize,
    draws_per_chain: usize,
    values: Vec<f64>,
    pub divergent: Vec<bool>,
    pub treedepth: Vec<u32>,
    pub n_leapfrog: Vec<u32>,
    pub accept_stat: Vec<f64>,
    pub adaptation: Vec<ChainAdaptation>,
}

impl PosteriorDraws {
    pub(crate) fn from_parts(
        names: Vec<String>,
        chains: usize,
        draws_per_chain: usize,
        values: Vec<f64>,
        stats: &[TransitionStats],
        adaptation: Vec<ChainAdaptation>,
    ) -> Result<Self> {
        let mut draws = Self::from_matrix(names, chains, draws_per_chain, values)?;
        draws.divergent = stats.iter().map(|s| s.divergent).collect();
        draws.treedepth = stats.iter().map(|s| s.depth).collect();
        draws.n_leapfrog = stats.iter().map(|s| s.n_leapfrog).collect();
        draws.accept_stat = stats.iter().map(|s| s.accept_stat).collect();
        draws.adaptation = adaptation;
        Ok(draws)
    }

    /// Wraps a draw matrix without sampler metadata (used for injected or reloaded draws).
    pub fn from_matrix(
        names: Vec<String>,
        chains: usize,
        draws_per_chain: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let rows = chains * draws_per_chain;
        if values.len() != rows * names.len() {
            return Err(Error::dim(format!(
                "{} values for {rows} draws of {} coordinates",
                values.len(),
                names.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "non-finite draw value in column '{}'",
                names[i % names.len()]
            )));
        }
        Ok(PosteriorDraws {
            names,
            chains,
            draws_per_chain,
            values,
            divergent: vec![false; rows],
            treedepth: vec![0; rows],
            n_leapfrog: vec![0; rows],
            accept_stat: vec![f64::NAN; rows],
            adaptation: Vec::new(),
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Total number of retained draws B.
    pub fn len(&self) -> usize {
        self.chains * self.draws_per_chain
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn chains(&self) -> usize {
        self.chains
    }

    pub fn draws_per_chain(&self) -> usize {
        self.draws_per_chain
    }

    pub fn draw(&self, b: usize) -> &[f64] {
        let p = self.names.len();
        &self.values[b * p..(b + 1) * p]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.len()).map(|b| self.draw(b)[j]).collect()
    }

    /// Per-chain series of coordinate `j`.
    pub fn chain_columns(&self, j: usize) -> Vec<Vec<f64>> {
        (0..self.chains)
            .map(|c| {
                (0..self.draws_per_chain)
                    .map(|i| self.draw(c * self.draws_per_chain + i)[j])
                    .collect()
            })
            .collect()
    }

    pub fn divergences(&self) -> usize {
        self.divergent.iter().filter(|d| **d).count()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let err = |e: csv::Error| Error::parse("draws", e);
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["chain".to_string(), "draw".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header).map_err(err)?;
        let mut row = Vec::with_capacity(header.len());
        for b in 0..self.len() {
            row.clear();
            row.push((b / self.draws_per_chain).to_string());
            row.push((b % self.draws_per_chain).to_string());
            row.extend(self.draw(b).iter().map(|v| v.to_string()));
            wtr.write_record(&row).map_err(err)?;
        }
        wtr.flush().map_err(|e| Error::parse("draws", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let headers = rdr.headers().map_err(|e| Error::parse("draws", e))?.clone();
        if headers.len() < 2 || &headers[0] != "chain" || &headers[1] != "draw" {
            return Err(Error::schema("draws CSV must start with 'chain,draw'"));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut values = Vec::new();
        let mut chain_ids = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| Error::parse("draws", e))?;
            let chain: usize = row[0]
                .parse()
                .map_err(|_| Error::parse("draws", format!("row {}: bad chain id", line + 1)))?;
            chain_ids.push(chain);
            for field in row.iter().skip(2) {
                values.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::parse("draws", format!("row {}: {e}", line + 1)))?,
                );
            }
        }
        let chains = chain_ids.iter().max().map_or(0, |m| m + 1);
        let rows = chain_ids.len();
        if chains == 0 || rows % chains != 0 {
            return Err(Error::schema("draws CSV has unequal chain lengths"));
        }
        let per_chain = rows / chains;
        for (b, &c) in chain_ids.iter().enumerate() {
            if c != b / per_chain {
                return Err(Error::schema("draws CSV rows are not grouped by chain"));
            }
        }
        Self::from_matrix(names, chains, per_chain, values)
    }

    pub fn sidecar_json(&self) -> String {
        let side = Sidecar {
            chains: self.chains,
            draws_per_chain: self.draws_per_chain,
            names: self.names.clone(),
            adaptation: self.adaptation.clone(),
            divergent: self.divergent.clone(),
            treedepth: self.treedepth.clone(),
            n_leapfrog: self.n_leapfrog.clone(),
            accept_stat: self.accept_stat.iter().map(|a| if a.is_finite() { *a } else { -1.0 }).collect(),
        };
        serde_json::to_string_pretty(&side).expect("sidecar serializes")
    }

    /// Restores sampler metadata from a sidecar written by `sidecar_json`.
    pub fn apply_sidecar(&mut self, json: &str) -> Result<()> {
        let side: Sidecar = serde_json::from_str(json).map_err(|e| Error::parse("draws sidecar", e))?;
        if side.names != self.names || side.chains != self.chains || side.draws_per_chain != self.draws_per_chain {
            return Err(Error::schema("draws sidecar does not match the draws CSV"));
        }
        self.adaptation = side.adaptation;
        self.divergent = side.divergent;
        self.treedepth = side.treedepth;
        self.n_leapfrog = side.n_leapfrog;
        self.accept_stat = side.accept_stat;
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, sidecar_path: &Path) -> Result<()> {
        let file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
        self.write_csv(std::io::BufWriter::new(file))?;
        std::fs::write(sidecar_path, self.sidecar_json()).map_err(|e| Error::io(sidecar_path, e))
    }

    /// Loads the CSV and, when present, the sidecar next to it.
    pub fn load(csv_path: &Path, sidecar_path: Option<&Path>) -> Result<Self> {
        let file = std::fs::File::open(csv_path).map_err(|e| Error::io(csv_path, e))?;
        let mut draws = Self::read_csv(std::io::BufReader::new(file))?;
        if let Some(side) = sidecar_path {
            if side.exists() {
                let text = std::fs::read_to_string(side).map_err(|e| Error::io(side, e))?;
                draws.apply_sidecar(&text)?;
            }
        }
        Ok(draws)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let names = vec!["gamma".to_string(), "beta[w=b]".to_string()];
        let values = vec![0.1, -1.0 / 3.0, 2.5e-17, 7.0, 1e300, -0.0, 3.25, 4.5];
        let draws = PosteriorDraws::from_matrix(names, 2, 2, values).unwrap();
        let mut buf = Vec::new();
        draws.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("chain,draw,gamma,beta[w=b]\n0,0,"));
        let mut back = PosteriorDraws::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.chain_columns(1), vec![vec![-1.0 / 3.0, 7.0], vec![-0.0, 4.5]]);
        back.apply_sidecar(&draws.sidecar_json()).unwrap();
        assert_eq!(back.column(0), draws.column(0));
    }

    #[test]
    fn rejects_non_finite() {
        let err = PosteriorDraws::from_matrix(vec!["a".into()], 1, 2, vec![0.0, f64::NAN]);
        assert!(err.is_err());
    }
}
