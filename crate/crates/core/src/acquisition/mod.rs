//! Replication and exploration acquisition under the IVAR, VAR and IMSE
//! criteria, plus the per-stage choice between them.
//!
//! Every score is a minimize-me scalar so criteria can be swapped freely.

mod exploration;
mod replication;
mod strategy;

pub use exploration::{
    build_exploration_batch, imse_exploration_score, ivar_exploration_integral,
    ivar_exploration_score, var_exploration_score, CandidateSet, ExplorationBatch,
    ExplorationConfig, ExplorationOutcome, ReferenceCache,
};
pub use replication::{
    allocate_by_weights, imse_allocation_weights, imse_replication_batch, ivar_allocation_weights,
    ivar_derivative, ivar_replication_batch, ivar_with_reps, ReplicationAllocation,
};
pub use strategy::{select_strategy, AcquisitionBatch, StrategyChoice};

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

/// Acquisition method of the benchmark matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Ivar,
    Var,
    Imse,
    Unif,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ivar, Method::Var, Method::Imse, Method::Unif];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ivar => "IVAR",
            Method::Var => "VAR",
            Method::Imse => "IMSE",
            Method::Unif => "UNIF",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        match s.to_ascii_uppercase().as_str() {
            "IVAR" => Ok(Method::Ivar),
            "VAR" => Ok(Method::Var),
            "IMSE" => Ok(Method::Imse),
            "UNIF" => Ok(Method::Unif),
            _ => Err(Error::Config(format!("unknown method {s:?}"))),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.as_str().to_owned()
    }
}

/// Exploration scoring rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplorationCriterion {
    Ivar,
    Var,
    Imse,
}

/// Sum per-index vectors produced over fixed-size chunks of `0..m`, in chunk
/// order, so the result does not depend on the thread count.
pub(crate) fn chunked_vector_sum<F>(m: usize, len: usize, chunk: usize, f: F) -> Vec<f64>
where
    F: Fn(std::ops::Range<usize>) -> Vec<f64> + Sync,
{
    use rayon::prelude::*;
    let starts: Vec<usize> = (0..m).step_by(chunk.max(1)).collect();
    let parts: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&s| f(s..(s + chunk).min(m)))
        .collect();
    let mut total = vec![0.0; len];
    for part in parts {
        for (t, v) in total.iter_mut().zip(part) {
            *t += v;
        }
    }
    total
}
