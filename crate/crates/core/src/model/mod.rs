//! Joint multilevel logistic model with spatio-temporal random effects.
//!
//! The log-odds of a poor outcome for household `i` is
//! `gamma + x_i'beta + phi[s] + zeta[s] + nu[t] + xi[t] + psi[unit(s), t]`,
//! with an ICAR prior on `phi`, a first-order random walk on `nu`, iid normal
//! priors on `zeta`, `xi`, `psi`, and scale hyperpriors sampled on the log scale.

pub mod design;
pub mod graph;
pub mod io;
pub mod params;
pub mod posterior;
pub mod priors;
pub mod spec;

pub use design::{build_design_row, DesignLayout};
pub use graph::AdjacencyGraph;
pub use params::{ParamLayout, ParamState};
pub use posterior::{grad_log_posterior, log_posterior, logistic, Dataset, JointPosterior, NonCentered};
pub use priors::{hyperprior_logpdf, icar_logpdf};
pub use spec::{Covariate, InteractionLevel, Modality, ModelSpec, PriorFamily, SurveyRecord};

use crate::error::{Error, Result};

/// Log-odds for one record given its design row.
pub fn linear_predictor(
    row: &[f64],
    record: &SurveyRecord,
    params: &ParamState,
    spec: &ModelSpec,
) -> Result<f64> {
    if row.len() != params.beta.len() {
        return Err(Error::dim(format!(
            "design row has {} entries, beta has {}",
            row.len(),
            params.beta.len()
        )));
    }
    if record.district >= params.phi.len()
        || record.district >= params.zeta.len()
        || record.month >= params.nu.len()
        || record.month >= params.xi.len()
    {
        return Err(Error::dim("record indices exceed parameter dimensions"));
    }
    let psi = spec.psi_index(record.district, record.month);
    if psi >= params.psi.len() {
        return Err(Error::dim(format!(
            "psi has {} entries, index {psi} requested",
            params.psi.len()
        )));
    }
    let xb: f64 = row.iter().zip(&params.beta).map(|(x, b)| x * b).sum();
    Ok(params.gamma
        + xb
        + params.phi[record.district]
        + params.zeta[record.district]
        + params.nu[record.month]
        + params.xi[record.month]
        + params.psi[psi])
}
