use crate::error::{Error, Result};
use crate::linalg::pairwise_mean;

/// Mean absolute difference between estimated and true posterior values.
pub fn mad(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    Error::check_dim(truth.len(), estimate.len())?;
    if truth.is_empty() {
        return Err(Error::invalid("MAD over an empty reference set"));
    }
    let diff: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).abs())
        .collect();
    Ok(pairwise_mean(&diff))
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Interval score of `[l, u]` against `theta_star` at level `alpha`.
pub fn interval_score_bounds(l: f64, u: f64, theta_star: f64, alpha: f64) -> f64 {
    let mut s = u - l;
    if theta_star < l {
        s += 2.0 / alpha * (l - theta_star);
    }
    if theta_star > u {
        s += 2.0 / alpha * (theta_star - u);
    }
    s
}

/// Interval score where `l` and `u` are the `alpha/2` and `1 - alpha/2`
/// quantiles of the acquired parameter values along one dimension.
pub fn interval_score(acquired: &[f64], theta_star: f64, alpha: f64) -> Result<f64> {
    if acquired.is_empty() {
        return Err(Error::invalid(
            "interval score needs at least one acquired value",
        ));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let mut v = acquired.to_vec();
    v.sort_by(f64::total_cmp);
    let l = quantile(&v, alpha / 2.0);
    let u = quantile(&v, 1.0 - alpha / 2.0);
    Ok(interval_score_bounds(l, u, theta_star, alpha))
}

/// Mean absolute percentage error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mape {
    pub percent: f64,
    /// Entries skipped because their truth is exactly zero.
    pub excluded: usize,
}

pub fn mape(estimate: &[f64], truth: &[f64]) -> Result<Mape> {
    Error::check_dim(truth.len(), estimate.len())?;
    let terms: Vec<f64> = estimate
        .iter()
        .zip(truth)
        .filter(|(_, t)| **t != 0.0)
        .map(|(e, t)| ((t - e) / t).abs())
        .collect();
    let excluded = truth.len() - terms.len();
    if terms.is_empty() {
        return Err(Error::invalid("MAPE undefined: every truth is zero"));
    }
    if excluded > 0 {
        log::warn!("MAPE skipped {excluded} zero truth value(s)");
    }
    Ok(Mape {
        percent: 100.0 * pairwise_mean(&terms),
        excluded,
    })
}
