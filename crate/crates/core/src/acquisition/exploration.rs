use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::ExplorationCriterion;
use crate::emulator::HetGpModel;
use crate::error::{Error, Result};
use crate::linalg::{corr, pairwise_sum, SmallGaussian};
use crate::posterior::{posterior_moments, ObservationModel, ReferencePredictions};

/// Candidate parameters for one greedy pick.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub params: Vec<Vec<f64>>,
    /// Seed of the stream the candidates were drawn from, for audit.
    pub seed: u64,
}

impl CandidateSet {
    /// `count` uniform draws from the prior box, skipping any draw that
    /// coincides with an existing design point.
    pub fn uniform<R: Rng>(
        model: &HetGpModel,
        count: usize,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        if count == 0 {
            return Err(Error::invalid("candidate set is empty"));
        }
        let p = model.p();
        let surface = model.coordinate(0).surface();
        let mut params = Vec::with_capacity(count);
        while params.len() < count {
            let t: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
            if surface.find(&t).is_none() {
                params.push(t);
            }
        }
        Ok(Self { params, seed })
    }
}

/// New parameters each replicated `reps_each` times.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationBatch {
    pub new_params: Vec<Vec<f64>>,
    pub reps_each: usize,
    /// Criterion value of each pick at selection time.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ExplorationConfig {
    pub b_breve: usize,
    pub a_breve: usize,
    pub candidates: usize,
    pub criterion: ExplorationCriterion,
}

/// Batch plus the emulator with all picks fantasized in.
#[derive(Debug, Clone)]
pub struct ExplorationOutcome {
    pub batch: ExplorationBatch,
    pub model: HetGpModel,
}

/// Predictions and half-solved cross-covariances over the reference set.
pub struct ReferenceCache<'a> {
    reference: &'a [Vec<f64>],
    preds: ReferencePredictions,
    /// Per coordinate `L^{-1} k(reference)`, `n x m`.
    half: Vec<DMatrix<f64>>,
}

impl<'a> ReferenceCache<'a> {
    pub fn new(model: &HetGpModel, reference: &'a [Vec<f64>]) -> Self {
        let half = model
            .coordinates()
            .par_iter()
            .map(|c| c.surface().half_solved_block(reference))
            .collect();
        Self {
            reference,
            preds: ReferencePredictions::new(model, reference),
            half,
        }
    }

    /// Variance-reduction terms `phi_j(theta)` for every reference point.
    fn phi(&self, model: &HetGpModel, cand: &[f64], a_new: usize) -> Vec<Vec<f64>> {
        let m = self.reference.len();
        let d = model.d();
        let mut phi = vec![vec![0.0; d]; m];
        for (j, c) in model.coordinates().iter().enumerate() {
            let s = c.surface();
            let kc = s.kvec(cand);
            let w = s.factor().half_solve(&kc);
            let s2 = (s.tau() - w.norm_squared()).max(0.0);
            let denom = s2 + c.intrinsic(cand) / a_new as f64;
            if !(denom > 0.0) {
                continue;
            }
            let proj: DVector<f64> = self.half[j].tr_mul(&w);
            for t in 0..m {
                let cov = s.tau() * corr(&self.reference[t], cand, s.rho()) - proj[t];
                phi[t][j] = (cov * cov / denom).min(self.preds.var[t][j]);
            }
        }
        phi
    }
}

/// Per-reference-point `p^2 f_N(y; mu, (Sigma+S+phi)/2) / (2^d pi^{d/2} |Sigma+S-phi|^{1/2})`.
fn reduced_terms(cache: &ReferenceCache, obs: &ObservationModel, phi: &[Vec<f64>]) -> Vec<f64> {
    let mut gauss = SmallGaussian::new(obs.sigma());
    let d = obs.d();
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    let ln_const = d as f64 * 2f64.ln() + 0.5 * d as f64 * std::f64::consts::PI.ln();
    cache
        .reference
        .iter()
        .enumerate()
        .map(|(t, theta)| {
            let prior = obs.prior().density(theta);
            if prior == 0.0 {
                return 0.0;
            }
            let s = &cache.preds.var[t];
            for j in 0..d {
                plus[j] = 0.5 * (s[j] + phi[t][j]);
                minus[j] = s[j] - phi[t][j];
            }
            let h = obs.residual(&cache.preds.mean[t]);
            let (Some((lf, _)), Some((_, logdet))) =
                (gauss.logpdf(&h, 0.5, &plus), gauss.logpdf(&h, 1.0, &minus))
            else {
                return 0.0;
            };
            (lf - ln_const - 0.5 * logdet + 2.0 * prior.ln()).exp()
        })
        .collect()
}

fn ivar_score_cached(
    model: &HetGpModel,
    obs: &ObservationModel,
    cache: &ReferenceCache,
    cand: &[f64],
    a_new: usize,
) -> f64 {
    let phi = cache.phi(model, cand, a_new);
    -pairwise_sum(&reduced_terms(cache, obs, &phi)) / cache.reference.len() as f64
}

fn imse_score_cached(
    model: &HetGpModel,
    cache: &ReferenceCache,
    cand: &[f64],
    a_new: usize,
) -> f64 {
    let phi = cache.phi(model, cand, a_new);
    let per_point: Vec<f64> = (0..cache.reference.len())
        .map(|t| {
            cache.preds.var[t]
                .iter()
                .zip(&phi[t])
                .map(|(s, f)| s - f)
                .sum()
        })
        .collect();
    pairwise_sum(&per_point)
}

fn check_inputs(
    model: &HetGpModel,
    cand: &[f64],
    a_new: usize,
    reference: &[Vec<f64>],
) -> Result<()> {
    Error::check_dim(model.p(), cand.len())?;
    if a_new == 0 {
        return Err(Error::invalid("replicate count must be positive"));
    }
    if reference.is_empty() {
        return Err(Error::invalid("reference set is empty"));
    }
    Ok(())
}

/// Negated reduced IVAR objective: lower is better.
pub fn ivar_exploration_score(
    model: &HetGpModel,
    obs: &ObservationModel,
    cand: &[f64],
    a_new: usize,
    reference: &[Vec<f64>],
) -> Result<f64> {
    check_inputs(model, cand, a_new, reference)?;
    Error::check_dim(obs.d(), model.d())?;
    let cache = ReferenceCache::new(model, reference);
    Ok(ivar_score_cached(model, obs, &cache, cand, a_new))
}

/// Expected integrated posterior variance after adding `a_new` replicates at
/// `cand`, averaged over the reference set (both terms kept).
pub fn ivar_exploration_integral(
    model: &HetGpModel,
    obs: &ObservationModel,
    cand: &[f64],
    a_new: usize,
    reference: &[Vec<f64>],
) -> Result<f64> {
    check_inputs(model, cand, a_new, reference)?;
    let cache = ReferenceCache::new(model, reference);
    let phi = cache.phi(model, cand, a_new);
    let second = reduced_terms(&cache, obs, &phi);
    let mut gauss = SmallGaussian::new(obs.sigma());
    let first: Vec<f64> = reference
        .iter()
        .enumerate()
        .map(|(t, theta)| {
            let prior = obs.prior().density(theta);
            if prior == 0.0 {
                return 0.0;
            }
            let h = obs.residual(&cache.preds.mean[t]);
            gauss
                .logpdf(&h, 0.5, &cache.preds.var[t])
                .map_or(0.0, |(lf, _)| {
                    (lf - obs.log_norm() + 2.0 * prior.ln()).exp()
                })
        })
        .collect();
    let diff: Vec<f64> = first.iter().zip(&second).map(|(a, b)| a - b).collect();
    Ok(pairwise_sum(&diff) / reference.len() as f64)
}

/// Total emulator variance over the reference set after the candidate.
pub fn imse_exploration_score(
    model: &HetGpModel,
    cand: &[f64],
    a_new: usize,
    reference: &[Vec<f64>],
) -> Result<f64> {
    check_inputs(model, cand, a_new, reference)?;
    let cache = ReferenceCache::new(model, reference);
    Ok(imse_score_cached(model, &cache, cand, a_new))
}

/// Negated posterior variance at the candidate.
pub fn var_exploration_score(
    model: &HetGpModel,
    obs: &ObservationModel,
    cand: &[f64],
) -> Result<f64> {
    Ok(-posterior_moments(&model.predict(cand)?, obs, cand)?.variance)
}

/// Greedy kriging-believer batch: each pick scores a fresh candidate set
/// against the emulator updated with all earlier picks.
pub fn build_exploration_batch<R: Rng>(
    model: &HetGpModel,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
    cfg: &ExplorationConfig,
    rng: &mut R,
) -> Result<ExplorationOutcome> {
    if cfg.b_breve == 0 || cfg.a_breve == 0 {
        return Err(Error::invalid(
            "exploration needs b_breve >= 1 and a_breve >= 1",
        ));
    }
    if reference.is_empty() {
        return Err(Error::invalid("reference set is empty"));
    }
    let mut current = model.clone();
    let mut picks = Vec::with_capacity(cfg.b_breve);
    let mut scores = Vec::with_capacity(cfg.b_breve);
    for _ in 0..cfg.b_breve {
        let seed = rng.random::<u64>();
        let cands = CandidateSet::uniform(&current, cfg.candidates, seed, rng)?;
        let cache = match cfg.criterion {
            ExplorationCriterion::Var => None,
            _ => Some(ReferenceCache::new(&current, reference)),
        };
        let vals: Vec<f64> = cands
            .params
            .par_iter()
            .map(|c| match (cfg.criterion, &cache) {
                (ExplorationCriterion::Ivar, Some(cache)) => {
                    ivar_score_cached(&current, obs, cache, c, cfg.a_breve)
                }
                (ExplorationCriterion::Imse, Some(cache)) => {
                    imse_score_cached(&current, cache, c, cfg.a_breve)
                }
                _ => var_exploration_score(&current, obs, c).unwrap_or(f64::INFINITY),
            })
            .map(|v: f64| if v.is_nan() { f64::INFINITY } else { v })
            .collect();
        let mut best = 0;
        for (i, v) in vals.iter().enumerate() {
            if v.total_cmp(&vals[best]).is_lt() {
                best = i;
            }
        }
        let pick = cands.params[best].clone();
        current = current.fantasy_update(&pick, cfg.a_breve)?;
        scores.push(vals[best]);
        picks.push(pick);
    }
    Ok(ExplorationOutcome {
        batch: ExplorationBatch {
            new_params: picks,
            reps_each: cfg.a_breve,
            scores,
        },
        model: current,
    })
}
