//! Closed-form moments of the unnormalized posterior under the emulator.
//!
//! With emulator mean `mu` and diagonal variance `S`, the likelihood
//! `f_N(y; eta, Sigma)` has expectation `f_N(y; mu, Sigma + S)` and variance
//! `f_N(y; mu, Sigma/2 + S) / (2^d pi^{d/2} |Sigma|^{1/2}) - f_N(y; mu, Sigma + S)^2`.

use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::emulator::{EmulatorPrediction, HetGpModel};
use crate::error::{Error, Result};
use crate::linalg::{mvn_logpdf, pairwise_mean, SmallGaussian, SpdMatrix};

static CLAMPED: AtomicU64 = AtomicU64::new(0);

/// Number of posterior variances clamped to zero since process start.
pub fn clamped_variance_count() -> u64 {
    CLAMPED.load(Ordering::Relaxed)
}

/// Uniform prior on `[0,1]^p` with constant density inside the box.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformBoxPrior {
    p: usize,
    density: f64,
}

impl UniformBoxPrior {
    pub fn new(p: usize) -> Self {
        Self { p, density: 1.0 }
    }

    /// Same box with a different constant density, for scaling checks.
    pub fn with_density(p: usize, density: f64) -> Result<Self> {
        if !(density > 0.0) || !density.is_finite() {
            return Err(Error::invalid("prior density must be positive"));
        }
        Ok(Self { p, density })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn density(&self, theta: &[f64]) -> f64 {
        if theta.len() == self.p && theta.iter().all(|c| (0.0..=1.0).contains(c)) {
            self.density
        } else {
            0.0
        }
    }
}

/// Observed data `y`, its residual covariance and the prior.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    y: Vec<f64>,
    sigma: SpdMatrix,
    prior: UniformBoxPrior,
    /// Expected simulation output used to draw `y`, when known.
    pub eta_star: Option<Vec<f64>>,
    log_norm: f64,
}

impl ObservationModel {
    pub fn new(y: Vec<f64>, sigma: DMatrix<f64>, prior: UniformBoxPrior) -> Result<Self> {
        let d = y.len();
        if d == 0 {
            return Err(Error::invalid("observation must have d >= 1"));
        }
        Error::check_dim(d, sigma.nrows())?;
        let sigma = SpdMatrix::new(sigma)?;
        let log_norm = d as f64 * 2f64.ln()
            + 0.5 * d as f64 * std::f64::consts::PI.ln()
            + 0.5 * sigma.log_det();
        Ok(Self {
            y,
            sigma,
            prior,
            eta_star: None,
            log_norm,
        })
    }

    pub fn d(&self) -> usize {
        self.y.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        self.sigma.matrix()
    }

    pub fn prior(&self) -> &UniformBoxPrior {
        &self.prior
    }

    /// `ln(2^d pi^{d/2} |Sigma|^{1/2})`.
    pub(crate) fn log_norm(&self) -> f64 {
        self.log_norm
    }

    pub(crate) fn residual(&self, mean: &[f64]) -> Vec<f64> {
        self.y.iter().zip(mean).map(|(a, b)| a - b).collect()
    }
}

/// `f_N(y; eta, Sigma) p(theta)`.
pub fn true_unnormalized_posterior(
    eta: &[f64],
    obs: &ObservationModel,
    theta: &[f64],
) -> Result<f64> {
    let p = obs.prior.density(theta);
    if p == 0.0 {
        return Ok(0.0);
    }
    Ok(mvn_logpdf(&obs.y, eta, &obs.sigma)?.exp() * p)
}

/// Posterior mean and variance at one parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorMoments {
    pub mean: f64,
    pub variance: f64,
}

/// Log-space evaluator of the posterior moments for one observation model.
pub(crate) struct MomentEvaluator<'a> {
    pub obs: &'a ObservationModel,
    pub gauss: SmallGaussian<'a>,
}

impl<'a> MomentEvaluator<'a> {
    pub fn new(obs: &'a ObservationModel) -> Self {
        Self {
            obs,
            gauss: SmallGaussian::new(obs.sigma.matrix()),
        }
    }

    /// `(log f_N(y; mu, Sigma/2 + S) - log_norm, log f_N(y; mu, Sigma + S))`.
    pub fn log_terms(&mut self, mean: &[f64], var: &[f64]) -> (f64, f64) {
        let h = self.obs.residual(mean);
        let t1 = self
            .gauss
            .logpdf(&h, 0.5, var)
            .map_or(f64::NEG_INFINITY, |v| v.0)
            - self.obs.log_norm;
        let g = self
            .gauss
            .logpdf(&h, 1.0, var)
            .map_or(f64::NEG_INFINITY, |v| v.0);
        (t1, g)
    }

    pub fn moments(&mut self, mean: &[f64], var: &[f64], prior: f64) -> PosteriorMoments {
        if prior == 0.0 {
            return PosteriorMoments {
                mean: 0.0,
                variance: 0.0,
            };
        }
        let (t1, g) = self.log_terms(mean, var);
        let e = g.exp() * prior;
        let diff = 2.0 * g - t1;
        let variance = if t1 == f64::NEG_INFINITY || diff >= 0.0 {
            if diff > 0.0 && t1.is_finite() {
                CLAMPED.fetch_add(1, Ordering::Relaxed);
                log::trace!("clamped negative posterior variance (log gap {diff:e})");
            }
            0.0
        } else {
            (t1 + 2.0 * prior.ln()).exp() * -diff.exp_m1()
        };
        PosteriorMoments { mean: e, variance }
    }
}

/// Posterior moments from an emulator prediction.
pub fn posterior_moments(
    pred: &EmulatorPrediction,
    obs: &ObservationModel,
    theta: &[f64],
) -> Result<PosteriorMoments> {
    Error::check_dim(obs.d(), pred.mean.len())?;
    Error::check_dim(obs.d(), pred.var.len())?;
    let prior = obs.prior.density(theta);
    Ok(MomentEvaluator::new(obs).moments(&pred.mean, &pred.var, prior))
}

pub fn posterior_mean(model: &HetGpModel, obs: &ObservationModel, theta: &[f64]) -> Result<f64> {
    Ok(posterior_moments(&model.predict(theta)?, obs, theta)?.mean)
}

pub fn posterior_variance(
    model: &HetGpModel,
    obs: &ObservationModel,
    theta: &[f64],
) -> Result<f64> {
    Ok(posterior_moments(&model.predict(theta)?, obs, theta)?.variance)
}

/// Emulator means and variances over a reference set, indexed by point.
#[derive(Debug, Clone)]
pub struct ReferencePredictions {
    pub mean: Vec<Vec<f64>>,
    pub var: Vec<Vec<f64>>,
}

impl ReferencePredictions {
    pub fn new(model: &HetGpModel, reference: &[Vec<f64>]) -> Self {
        let rows: Vec<(Vec<f64>, Vec<f64>)> = reference
            .par_iter()
            .map(|t| {
                model
                    .coordinates()
                    .iter()
                    .map(|c| c.surface().predict(t))
                    .unzip()
            })
            .collect();
        let (mean, var) = rows.into_iter().unzip();
        Self { mean, var }
    }
}

/// Posterior moments over a reference set.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorField {
    pub thetas: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

pub fn posterior_field(
    model: &HetGpModel,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
) -> Result<PosteriorField> {
    Error::check_dim(obs.d(), model.d())?;
    let preds = ReferencePredictions::new(model, reference);
    Ok(field_from_predictions(&preds, obs, reference))
}

pub(crate) fn field_from_predictions(
    preds: &ReferencePredictions,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
) -> PosteriorField {
    let moments: Vec<PosteriorMoments> = reference
        .par_iter()
        .enumerate()
        .map_init(
            || MomentEvaluator::new(obs),
            |ev, (i, t)| ev.moments(&preds.mean[i], &preds.var[i], obs.prior.density(t)),
        )
        .collect();
    PosteriorField {
        thetas: reference.to_vec(),
        mean: moments.iter().map(|m| m.mean).collect(),
        variance: moments.iter().map(|m| m.variance).collect(),
    }
}

/// Mean posterior variance over the reference set.
pub fn integrated_posterior_variance(
    model: &HetGpModel,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("reference set is empty"));
    }
    Ok(pairwise_mean(
        &posterior_field(model, obs, reference)?.variance,
    ))
}

/// Integrated variance with the mean frozen at `means` and variances `vars`.
pub(crate) fn integrated_variance_from(
    means: &[Vec<f64>],
    vars: &[Vec<f64>],
    obs: &ObservationModel,
    reference: &[Vec<f64>],
) -> f64 {
    let v: Vec<f64> = reference
        .par_iter()
        .enumerate()
        .map_init(
            || MomentEvaluator::new(obs),
            |ev, (i, t)| {
                ev.moments(&means[i], &vars[i], obs.prior.density(t))
                    .variance
            },
        )
        .collect();
    pairwise_mean(&v)
}

/// Columnar text dump: coordinates, mean, variance.
pub fn write_field<W: Write>(field: &PosteriorField, mut w: W) -> Result<()> {
    let p = field.thetas.first().map_or(0, Vec::len);
    let head: Vec<String> = (0..p).map(|k| format!("theta{k}")).collect();
    writeln!(w, "{}\tmean\tvariance", head.join("\t"))?;
    for i in 0..field.thetas.len() {
        let coords: Vec<String> = field.thetas[i].iter().map(|v| v.to_string()).collect();
        writeln!(
            w,
            "{}\t{}\t{}",
            coords.join("\t"),
            field.mean[i],
            field.variance[i]
        )?;
    }
    Ok(())
}
