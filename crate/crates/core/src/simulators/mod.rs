//! Stochastic test simulators and observed-data generation.
//!
//! Every simulator takes parameters on the unit cube and maps them onto its
//! prior box before evaluating.

pub mod epidemic;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::posterior::{ObservationModel, UniformBoxPrior};
pub use epidemic::{EpidemicSetup, SeirdsRates};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SimulatorKind {
    Sin1d,
    Unimodal,
    Banana,
    Bimodal,
    Sir,
    Seirds,
}

impl SimulatorKind {
    pub const ALL: [SimulatorKind; 6] = [
        SimulatorKind::Sin1d,
        SimulatorKind::Unimodal,
        SimulatorKind::Banana,
        SimulatorKind::Bimodal,
        SimulatorKind::Sir,
        SimulatorKind::Seirds,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SimulatorKind::Sin1d => "sin1d",
            SimulatorKind::Unimodal => "unimodal",
            SimulatorKind::Banana => "banana",
            SimulatorKind::Bimodal => "bimodal",
            SimulatorKind::Sir => "sir",
            SimulatorKind::Seirds => "seirds",
        }
    }

    pub fn is_epidemic(self) -> bool {
        matches!(self, SimulatorKind::Sir | SimulatorKind::Seirds)
    }
}

impl fmt::Display for SimulatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimulatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown simulator {s:?}")))
    }
}

impl TryFrom<String> for SimulatorKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SimulatorKind> for String {
    fn from(k: SimulatorKind) -> String {
        k.as_str().to_owned()
    }
}

/// One simulator evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub values: Vec<f64>,
    /// Number of 64-bit words drawn from the stream.
    pub draws: u64,
}

struct CountingRng<'a, R: ?Sized> {
    inner: &'a mut R,
    words: u64,
}

impl<R: RngCore + ?Sized> RngCore for CountingRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.words += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.words += 1;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.words += dst.len().div_ceil(8) as u64;
        self.inner.fill_bytes(dst)
    }
}

/// Simulator definition: dynamics, prior box and the true parameter used to
/// generate observed data.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatorSpec {
    pub kind: SimulatorKind,
    /// Prior box in natural units; parameters are rescaled from `[0,1]^p`.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// True parameter on the unit scale.
    pub theta_star: Vec<f64>,
    /// Diagonal of the observation-error covariance. `None` means 1% of
    /// `|eta(theta*)|` per output.
    pub obs_variance: Option<Vec<f64>>,
    pub setup: EpidemicSetup,
}

impl SimulatorSpec {
    pub fn new(kind: SimulatorKind) -> Self {
        let unit = |p: usize| (vec![0.0; p], vec![1.0; p]);
        let (lower, upper, theta_star, obs_variance) = match kind {
            SimulatorKind::Sin1d => {
                let (l, u) = unit(1);
                (l, u, vec![0.5], Some(vec![0.05 * 0.05]))
            }
            SimulatorKind::Unimodal => {
                let (l, u) = unit(2);
                (l, u, vec![0.5, 0.5], Some(vec![0.01]))
            }
            SimulatorKind::Banana => {
                let (l, u) = unit(2);
                (l, u, vec![0.5, 0.75], Some(vec![0.03, 0.5]))
            }
            SimulatorKind::Bimodal => {
                let (l, u) = unit(2);
                (l, u, vec![2.0 / 3.0, 2.0 / 3.0], Some(vec![0.5, 0.5]))
            }
            SimulatorKind::Sir => (vec![0.1, 0.05], vec![0.3, 0.15], vec![0.5; 2], None),
            SimulatorKind::Seirds => (
                vec![0.15, 0.15, 0.04, 0.06, 0.35, 0.05, 0.005],
                vec![0.45, 0.45, 0.12, 0.18, 1.0, 0.15, 0.015],
                vec![0.5; 7],
                None,
            ),
        };
        Self {
            kind,
            lower,
            upper,
            theta_star,
            obs_variance,
            setup: EpidemicSetup::default(),
        }
    }

    pub fn p(&self) -> usize {
        self.lower.len()
    }

    pub fn d(&self) -> usize {
        match self.kind {
            SimulatorKind::Sin1d | SimulatorKind::Unimodal => 1,
            SimulatorKind::Banana | SimulatorKind::Bimodal => 2,
            SimulatorKind::Sir => 3,
            SimulatorKind::Seirds => 6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.upper.len() != p || self.theta_star.len() != p {
            return Err(Error::Config(format!(
                "{}: prior box and theta_star must have {p} entries",
                self.kind
            )));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l < u)) {
            return Err(Error::Config(format!(
                "{}: prior box must have lower < upper",
                self.kind
            )));
        }
        if self.theta_star.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config(format!(
                "{}: theta_star must lie in the unit cube",
                self.kind
            )));
        }
        if let Some(v) = &self.obs_variance {
            if v.len() != self.d() || v.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::Config(format!(
                    "{}: obs_variance needs {} nonnegative entries",
                    self.kind,
                    self.d()
                )));
            }
        }
        if self.kind.is_epidemic()
            && (self.setup.days == 0 || self.setup.susceptible + self.setup.seeded == 0)
        {
            return Err(Error::Config(format!(
                "{}: empty population or horizon",
                self.kind
            )));
        }
        Ok(())
    }

    /// Map unit-cube parameters onto the prior box.
    pub fn to_natural(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(t, (l, u))| l + t * (u - l))
            .collect()
    }

    /// Closed-form expected output, where one exists.
    pub fn mean(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let x = self.to_natural(theta);
        match self.kind {
            SimulatorKind::Sin1d => Some(vec![synthetic::sin1d_mean(x[0])]),
            SimulatorKind::Unimodal => Some(synthetic::unimodal_mean(&x)),
            SimulatorKind::Banana => Some(synthetic::banana_mean(&x)),
            SimulatorKind::Bimodal => Some(synthetic::bimodal_mean(&x)),
            SimulatorKind::Sir | SimulatorKind::Seirds => None,
        }
    }

    /// Closed-form intrinsic variance per output, where one exists.
    pub fn noise_variance(&self, theta: &[f64]) -> Option<Vec<f64>> {
        let x = self.to_natural(theta);
        match self.kind {
            SimulatorKind::Sin1d => Some(vec![synthetic::sin1d_noise(x[0])]),
            SimulatorKind::Unimodal => Some(synthetic::unimodal_noise(&x)),
            SimulatorKind::Banana => Some(synthetic::banana_noise(&x)),
            SimulatorKind::Bimodal => Some(synthetic::bimodal_noise(&x)),
            SimulatorKind::Sir | SimulatorKind::Seirds => None,
        }
    }

    pub fn simulate<R: RngCore + ?Sized>(&self, theta: &[f64], rng: &mut R) -> SimOutput {
        let mut rng = CountingRng {
            inner: rng,
            words: 0,
        };
        let x = self.to_natural(theta);
        let values = match self.kind {
            SimulatorKind::Sin1d => vec![synthetic::eval_sin1d(x[0], &mut rng)],
            SimulatorKind::Unimodal => synthetic::eval_unimodal(&x, &mut rng),
            SimulatorKind::Banana => synthetic::eval_banana(&x, &mut rng),
            SimulatorKind::Bimodal => synthetic::eval_bimodal(&x, &mut rng),
            SimulatorKind::Sir => epidemic::sir_simulate(x[0], x[1], &self.setup, &mut rng),
            SimulatorKind::Seirds => {
                epidemic::seirds_simulate(&SeirdsRates::from_slice(&x), &self.setup, &mut rng)
            }
        };
        SimOutput {
            values,
            draws: rng.words,
        }
    }

    /// Expected output at `theta`: closed form when available, otherwise the
    /// average of `n_reps` runs drawn from `rng`.
    pub fn expected_output<R: RngCore + ?Sized>(
        &self,
        theta: &[f64],
        n_reps: usize,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if let Some(m) = self.mean(theta) {
            return Ok(m);
        }
        if n_reps == 0 {
            return Err(Error::invalid(
                "Monte Carlo mean needs at least one replicate",
            ));
        }
        let mut acc = vec![0.0; self.d()];
        for _ in 0..n_reps {
            for (a, v) in acc.iter_mut().zip(self.simulate(theta, rng).values) {
                *a += v;
            }
        }
        Ok(acc.into_iter().map(|a| a / n_reps as f64).collect())
    }

    /// Observation covariance for a given expected output at `theta*`.
    pub fn observation_sigma(&self, eta_star: &[f64]) -> DMatrix<f64> {
        let diag: Vec<f64> = match &self.obs_variance {
            Some(v) => v.clone(),
            None => eta_star.iter().map(|e| 0.01 * e.abs()).collect(),
        };
        DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag))
    }
}

/// Draw `y = eta(theta*) + eps` with `eps ~ MVN(0, sigma)`.
///
/// `sigma` defaults to the simulator's own observation covariance. The
/// expected output used is kept in `eta_star` of the result.
pub fn generate_observed_data<R: RngCore + ?Sized>(
    spec: &SimulatorSpec,
    sigma: Option<&DMatrix<f64>>,
    rng: &mut R,
    n_mean_reps: usize,
) -> Result<ObservationModel> {
    spec.validate()?;
    let eta = spec.expected_output(&spec.theta_star, n_mean_reps, rng)?;
    let sigma = sigma
        .cloned()
        .unwrap_or_else(|| spec.observation_sigma(&eta));
    Error::check_dim(spec.d(), sigma.nrows())?;
    let d = spec.d();
    let l = SpdMatrix::new(sigma.clone())?.lower().clone();
    let z: Vec<f64> = (0..d)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y: Vec<f64> = (0..d)
        .map(|i| eta[i] + (0..=i).map(|k| l[(i, k)] * z[k]).sum::<f64>())
        .collect();
    let mut obs = ObservationModel::new(y, sigma, UniformBoxPrior::new(spec.p()))?;
    obs.eta_star = Some(eta);
    Ok(obs)
}
