use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Latin hypercube sample of `n` points in `[0,1]^dim`: every one-dimensional
/// projection puts exactly one point in each of the `n` equal bins.
pub fn latin_hypercube<R: Rng + ?Sized>(n: usize, dim: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dim]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..dim {
        perm.shuffle(rng);
        for (i, &bin) in perm.iter().enumerate() {
            pts[i][k] = (bin as f64 + rng.random::<f64>()) / n as f64;
        }
    }
    pts
}

/// Full factorial grid with `per_dim` levels per axis, corners included,
/// in lexicographic order (first coordinate varies slowest).
pub fn grid(per_dim: usize, p: usize) -> Vec<Vec<f64>> {
    let level = |k: usize| {
        if per_dim == 1 {
            0.5
        } else {
            k as f64 / (per_dim - 1) as f64
        }
    };
    let total = per_dim.pow(p as u32);
    (0..total)
        .map(|mut idx| {
            let mut pt = vec![0.0; p];
            for k in (0..p).rev() {
                pt[k] = level(idx % per_dim);
                idx /= per_dim;
            }
            pt
        })
        .collect()
}

/// How the reference set for integrals over the parameter space is built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ReferenceSpec {
    /// `n` levels per axis.
    Grid(usize),
    /// `n` Latin hypercube points.
    Lhs(usize),
}

impl ReferenceSpec {
    /// Paper-scale default: a 50x50 grid in two dimensions, 2500 LHS points otherwise.
    pub fn default_for(p: usize) -> Self {
        if p <= 2 {
            ReferenceSpec::Grid(if p == 1 { 100 } else { 50 })
        } else {
            ReferenceSpec::Lhs(2500)
        }
    }
}

impl fmt::Display for ReferenceSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReferenceSpec::Grid(n) => write!(f, "grid:{n}"),
            ReferenceSpec::Lhs(n) => write!(f, "lhs:{n}"),
        }
    }
}

impl FromStr for ReferenceSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "reference set must be grid:<n> or lhs:<n>, got {s:?}"
            ))
        };
        let (kind, n) = s.split_once(':').ok_or_else(bad)?;
        let n: usize = n.trim().parse().map_err(|_| bad())?;
        if n == 0 {
            return Err(bad());
        }
        match kind.trim() {
            "grid" => Ok(ReferenceSpec::Grid(n)),
            "lhs" => Ok(ReferenceSpec::Lhs(n)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for ReferenceSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ReferenceSpec> for String {
    fn from(r: ReferenceSpec) -> String {
        r.to_string()
    }
}

pub fn make_reference_set<R: Rng + ?Sized>(
    spec: ReferenceSpec,
    p: usize,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    match spec {
        ReferenceSpec::Grid(n) => grid(n, p),
        ReferenceSpec::Lhs(n) => latin_hypercube(n, p, rng),
    }
}

/// Initial design before any simulation: unique parameters and their replicate counts.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDesign {
    pub params: Vec<Vec<f64>>,
    pub reps: usize,
}

impl InitialDesign {
    pub fn evaluations(&self) -> usize {
        self.params.len() * self.reps
    }
}

pub fn make_initial_design<R: Rng + ?Sized>(
    n0: usize,
    reps0: usize,
    p: usize,
    rng: &mut R,
) -> Result<InitialDesign> {
    if n0 == 0 || reps0 == 0 || p == 0 {
        return Err(Error::invalid(
            "initial design needs n0, reps0 and p all positive",
        ));
    }
    Ok(InitialDesign {
        params: latin_hypercube(n0, p, rng),
        reps: reps0,
    })
}
