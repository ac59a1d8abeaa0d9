use nalgebra::DMatrix;
use rayon::prelude::*;

use super::chunked_vector_sum;
use crate::emulator::HetGpModel;
use crate::error::{Error, Result};
use crate::linalg::{corr, SmallGaussian};
use crate::posterior::{integrated_variance_from, ObservationModel, ReferencePredictions};

const CHUNK: usize = 64;

/// Extra replicates per design point.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationAllocation {
    pub delta: Vec<usize>,
    /// Allocation weights `sqrt(C_i)` before the bound adjustment.
    pub weights: Vec<f64>,
    /// Bounds `ub_i` after zeroing points already above their share.
    pub upper_bounds: Vec<f64>,
}

impl ReplicationAllocation {
    pub fn total(&self) -> usize {
        self.delta.iter().sum()
    }
}

/// Per-coordinate `K^{-1} k(theta)` for every reference point, plus the
/// matching predictive means and variances.
struct ReferenceSolves {
    /// `weights[j]` is `n x m`.
    weights: Vec<DMatrix<f64>>,
    mean: Vec<Vec<f64>>,
    var: Vec<Vec<f64>>,
}

fn reference_solves(model: &HetGpModel, reference: &[Vec<f64>]) -> ReferenceSolves {
    let m = reference.len();
    let d = model.d();
    let per_coord: Vec<(DMatrix<f64>, Vec<f64>, Vec<f64>)> = model
        .coordinates()
        .par_iter()
        .map(|c| {
            let s = c.surface();
            let x = s.design();
            let kref = DMatrix::from_fn(s.len(), m, |i, t| {
                s.tau() * corr(&x[i], &reference[t], s.rho())
            });
            let w = s.factor().solve(&kref);
            let ybar_c: Vec<f64> = s.ybar().iter().map(|v| v - s.center()).collect();
            let alpha = s.factor().solve_vec(&nalgebra::DVector::from_vec(ybar_c));
            let mean: Vec<f64> = (0..m)
                .map(|t| s.center() + kref.column(t).dot(&alpha))
                .collect();
            let var: Vec<f64> = (0..m)
                .map(|t| (s.tau() - kref.column(t).dot(&w.column(t))).max(0.0))
                .collect();
            (w, mean, var)
        })
        .collect();
    let mut weights = Vec::with_capacity(d);
    let mut mean = vec![vec![0.0; d]; m];
    let mut var = vec![vec![0.0; d]; m];
    for (j, (w, mj, vj)) in per_coord.into_iter().enumerate() {
        for t in 0..m {
            mean[t][j] = mj[t];
            var[t][j] = vj[t];
        }
        weights.push(w);
    }
    ReferenceSolves { weights, mean, var }
}

/// Coefficients of `dS_jj` in the derivative of the posterior variance.
fn variance_sensitivity(
    gauss: &mut SmallGaussian,
    obs: &ObservationModel,
    mean: &[f64],
    var: &[f64],
    prior: f64,
) -> Vec<f64> {
    let d = mean.len();
    if prior == 0.0 {
        return vec![0.0; d];
    }
    let h = obs.residual(mean);
    let (Some((lf, _)), Some((lg, _))) = (gauss.logpdf(&h, 0.5, var), gauss.logpdf(&h, 1.0, var))
    else {
        return vec![0.0; d];
    };
    let (Some((ndot_diag, ndot_h)), Some((n_diag, n_h))) = (
        gauss.inverse_terms(&h, 0.5, var),
        gauss.inverse_terms(&h, 1.0, var),
    ) else {
        return vec![0.0; d];
    };
    let p2 = prior * prior;
    let f_term = (lf - obs.log_norm()).exp() * p2;
    let g2 = (2.0 * lg).exp() * p2;
    (0..d)
        .map(|j| {
            f_term * (-0.5 * ndot_diag[j] + 0.5 * ndot_h[j] * ndot_h[j])
                - 2.0 * g2 * (-0.5 * n_diag[j] + 0.5 * n_h[j] * n_h[j])
        })
        .collect()
}

/// `C_i` of the IVAR allocation rule, averaged over the reference set. It
/// carries the sign of the derivative: `dIVAR/dDelta_a_i = C_i / a_i^2`.
fn ivar_coefficients(
    model: &HetGpModel,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
) -> Result<Vec<f64>> {
    Error::check_dim(obs.d(), model.d())?;
    if reference.is_empty() {
        return Err(Error::invalid("reference set is empty"));
    }
    let n = model.n();
    let m = reference.len();
    let rs = reference_solves(model, reference);
    let noise: Vec<&[f64]> = model
        .coordinates()
        .iter()
        .map(|c| c.surface().noise())
        .collect();
    let total = chunked_vector_sum(m, n, CHUNK, |range| {
        let mut gauss = SmallGaussian::new(obs.sigma());
        let mut acc = vec![0.0; n];
        for t in range {
            let sens = variance_sensitivity(
                &mut gauss,
                obs,
                &rs.mean[t],
                &rs.var[t],
                obs.prior().density(&reference[t]),
            );
            for (j, a) in sens.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let w = rs.weights[j].column(t);
                for i in 0..n {
                    acc[i] += a * (-noise[j][i] * w[i] * w[i]);
                }
            }
        }
        acc
    });
    Ok(total.into_iter().map(|c| c / m as f64).collect())
}

/// Analytic derivative of the integrated posterior variance with respect to
/// extra replicates at each design point, evaluated at zero extra replicates.
pub fn ivar_derivative(
    model: &HetGpModel,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let c = ivar_coefficients(model, obs, reference)?;
    Ok(c.iter()
        .zip(model.reps())
        .map(|(ci, a)| ci / (a * a))
        .collect())
}

/// IVAR allocation weights `sqrt(max(0, C_i))`.
///
/// Positive `C_i` marks points where the posterior is both sizeable and
/// sensitive to emulator noise; this is where replicates pay off once the
/// emulator mean moves with the new data.
pub fn ivar_allocation_weights(
    model: &HetGpModel,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
) -> Result<Vec<f64>> {
    Ok(ivar_coefficients(model, obs, reference)?
        .into_iter()
        .map(|c| c.max(0.0).sqrt())
        .collect())
}

/// IMSE allocation weights: square root of the summed magnitude of the
/// variance reduction terms over the reference set and all outputs.
pub fn imse_allocation_weights(model: &HetGpModel, reference: &[Vec<f64>]) -> Result<Vec<f64>> {
    if reference.is_empty() {
        return Err(Error::invalid("reference set is empty"));
    }
    let n = model.n();
    let rs = reference_solves(model, reference);
    let noise: Vec<&[f64]> = model
        .coordinates()
        .iter()
        .map(|c| c.surface().noise())
        .collect();
    let total = chunked_vector_sum(reference.len(), n, CHUNK, |range| {
        let mut acc = vec![0.0; n];
        for t in range {
            for (j, w) in rs.weights.iter().enumerate() {
                let w = w.column(t);
                for i in 0..n {
                    acc[i] += noise[j][i] * w[i] * w[i];
                }
            }
        }
        acc
    });
    Ok(total.into_iter().map(|c| c.max(0.0).sqrt()).collect())
}

/// Turn allocation weights into an integer allocation of `b` replicates.
///
/// The full budget `sum(a) + b` is split proportionally to the weights; points
/// whose share falls below what they already hold get a zero bound, the `b`
/// new replicates follow the remaining bounds, and largest remainders settle
/// the rounding.
pub fn allocate_by_weights(
    weights: &[f64],
    reps: &[f64],
    b: usize,
) -> Result<ReplicationAllocation> {
    let n = weights.len();
    Error::check_dim(n, reps.len())?;
    if b == 0 {
        return Err(Error::invalid("replication budget must be positive"));
    }
    if n == 0 {
        return Err(Error::invalid("no design points to replicate"));
    }
    let wsum: f64 = weights.iter().sum();
    let budget = reps.iter().sum::<f64>() + b as f64;
    let mut ub: Vec<f64> = if wsum > 0.0 && wsum.is_finite() {
        weights.iter().map(|w| budget * w / wsum).collect()
    } else {
        log::debug!("all replication weights vanish; allocating uniformly");
        vec![budget / n as f64; n]
    };
    for (u, a) in ub.iter_mut().zip(reps) {
        if *u < *a {
            *u = 0.0;
        }
    }
    let mut ubsum: f64 = ub.iter().sum();
    if !(ubsum > 0.0) {
        log::debug!("every upper bound was zeroed; falling back to raw weights");
        ub = if wsum > 0.0 {
            weights.to_vec()
        } else {
            vec![1.0; n]
        };
        ubsum = ub.iter().sum();
    }
    let shares: Vec<f64> = ub.iter().map(|u| b as f64 * u / ubsum).collect();
    let mut delta: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = delta.iter().sum();
    let mut order: Vec<usize> = (0..n).filter(|&i| ub[i] > 0.0).collect();
    order.sort_by(|&i, &j| {
        let fi = shares[i] - shares[i].floor();
        let fj = shares[j] - shares[j].floor();
        fj.total_cmp(&fi).then(i.cmp(&j))
    });
    let mut short = b.saturating_sub(assigned);
    let mut k = 0;
    while short > 0 && !order.is_empty() {
        delta[order[k % order.len()]] += 1;
        short -= 1;
        k += 1;
    }
    Ok(ReplicationAllocation {
        delta,
        weights: weights.to_vec(),
        upper_bounds: ub,
    })
}

pub fn ivar_replication_batch(
    model: &HetGpModel,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
    b: usize,
) -> Result<ReplicationAllocation> {
    let w = ivar_allocation_weights(model, obs, reference)?;
    allocate_by_weights(&w, model.reps(), b)
}

pub fn imse_replication_batch(
    model: &HetGpModel,
    reference: &[Vec<f64>],
    b: usize,
) -> Result<ReplicationAllocation> {
    let w = imse_allocation_weights(model, reference)?;
    allocate_by_weights(&w, model.reps(), b)
}

/// Integrated posterior variance after moving to (possibly fractional)
/// replicate counts `reps`, mean frozen at the current emulator mean.
pub fn ivar_with_reps(
    model: &HetGpModel,
    obs: &ObservationModel,
    reference: &[Vec<f64>],
    reps: &[f64],
) -> Result<f64> {
    let current = ReferencePredictions::new(model, reference);
    let updated = model.with_reps(reps)?;
    let next = ReferencePredictions::new(&updated, reference);
    Ok(integrated_variance_from(
        &current.mean,
        &next.var,
        obs,
        reference,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_weights_split_evenly() {
        let a = allocate_by_weights(&[1.0, 1.0], &[3.0, 3.0], 10).unwrap();
        assert_eq!(a.delta, vec![5, 5]);
    }

    #[test]
    fn points_above_share_get_nothing() {
        // budget 12+6=18, shares (9, 9*... ) ; third point holds 10 > its share
        let a = allocate_by_weights(&[2.0, 2.0, 1.0], &[1.0, 1.0, 10.0], 6).unwrap();
        assert_eq!(a.upper_bounds[2], 0.0);
        assert_eq!(a.delta, vec![3, 3, 0]);
    }

    #[test]
    fn rounding_conserves_budget() {
        let a = allocate_by_weights(&[0.3, 0.5, 0.7, 0.11], &[2.0; 4], 7).unwrap();
        assert_eq!(a.total(), 7);
        let z = allocate_by_weights(&[0.0, 0.0], &[2.0, 2.0], 3).unwrap();
        assert_eq!(z.total(), 3);
    }

    proptest::proptest! {
        #[test]
        fn budget_always_conserved(w in proptest::collection::vec(0.0f64..5.0, 1..12),
                                   b in 1usize..64, base in 1usize..20) {
            let reps: Vec<f64> = (0..w.len()).map(|i| (base + i % 3) as f64).collect();
            let a = allocate_by_weights(&w, &reps, b).unwrap();
            proptest::prop_assert_eq!(a.total(), b);
            for i in 0..w.len() {
                if a.upper_bounds[i] == 0.0 && a.upper_bounds.iter().any(|u| *u > 0.0) {
                    proptest::prop_assert_eq!(a.delta[i], 0);
                }
            }
        }
    }
}
