//! Joint likelihood of the heteroskedastic GP and its maximization.
//!
//! Per output coordinate the standardized sample averages follow
//! `MVN(0, tau (C + A^{-1} Lambda))`, within-point replicates carry variance
//! `tau * lambda_i`, and `log Lambda = C_g (C_g + g A^{-1})^{-1} delta` with the
//! latent `delta ~ MVN(0, tau_g (C_g + g A^{-1}))`. Both scales are profiled out.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::SimulationDataset;
use super::model::{CoordinateModel, HetGpModel, Hyperparameters, VARIANCE_FLOOR};
use super::optim::{minimize, LbfgsOptions};
use crate::error::{Error, Result};
use crate::harness::design::latin_hypercube;
use crate::linalg::{corr_matrix, SpdMatrix};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub const RHO_BOUNDS: (f64, f64) = (1e-3, 10.0);
pub const NUGGET_BOUNDS: (f64, f64) = (1e-6, 1.0);
const DELTA_UPPER: f64 = 9.21;

/// Settings for [`fit`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub restarts: usize,
    pub min_design: usize,
    pub allow_no_replication: bool,
    pub seed: u64,
    pub max_iter: usize,
    /// Previous hyperparameters per coordinate; when set, the warm start is
    /// tried together with `restarts` fresh starts.
    pub warm_start: Option<Vec<Hyperparameters>>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            min_design: 5,
            allow_no_replication: false,
            seed: 0,
            max_iter: 200,
            warm_start: None,
        }
    }
}

/// Standardized training data for one coordinate.
#[derive(Debug, Clone)]
pub struct CoordinateData {
    pub x: Vec<Vec<f64>>,
    pub reps: Vec<f64>,
    pub ybar: Vec<f64>,
    pub sq_sums: Vec<f64>,
}

impl CoordinateData {
    fn total(&self) -> f64 {
        self.reps.iter().sum()
    }
}

/// Unpacked optimization variables.
#[derive(Debug, Clone)]
pub struct LikelihoodParams<'a> {
    pub rho: &'a [f64],
    pub rho_g: &'a [f64],
    pub nugget_g: f64,
    pub delta: &'a [f64],
}

/// Value and gradient of the joint log-likelihood.
#[derive(Debug, Clone)]
pub struct LikelihoodEval {
    pub value: f64,
    /// Gradient with respect to `(log rho, log rho_g, log g, delta)`.
    pub gradient: Vec<f64>,
    /// Profiled process scale (standardized units).
    pub tau: f64,
    pub tau_g: f64,
}

fn sq_dist_matrix(x: &[Vec<f64>], k: usize, rho: f64) -> DMatrix<f64> {
    let n = x.len();
    DMatrix::from_fn(n, n, |i, j| {
        let d = x[i][k] - x[j][k];
        d * d / (2.0 * rho)
    })
}

/// Joint log-likelihood with its analytic gradient.
pub fn log_likelihood(data: &CoordinateData, prm: &LikelihoodParams) -> Result<LikelihoodEval> {
    let n = data.x.len();
    let p = prm.rho.len();
    let nf = n as f64;
    let big_n = data.total();
    let a = &data.reps;

    let cg = corr_matrix(&data.x, &data.x, prm.rho_g);
    let mut kg = cg.clone();
    for i in 0..n {
        kg[(i, i)] += prm.nugget_g / a[i];
    }
    let kg = SpdMatrix::new(kg)?;
    let delta = DVector::from_column_slice(prm.delta);
    let beta = kg.solve_vec(&delta);
    let loglam = &cg * &beta;
    let floor_ln = VARIANCE_FLOOR.ln();
    let clamped: Vec<bool> = loglam.iter().map(|l| *l < floor_ln).collect();
    let lam: Vec<f64> = loglam.iter().map(|l| l.max(floor_ln).exp()).collect();

    let c = corr_matrix(&data.x, &data.x, prm.rho);
    let mut km = c.clone();
    for i in 0..n {
        km[(i, i)] += lam[i] / a[i];
    }
    let k = SpdMatrix::new(km)?;
    let y = DVector::from_column_slice(&data.ybar);
    let alpha = k.solve_vec(&y);
    let kinv = k.inverse();
    let psi = y.dot(&alpha) + (0..n).map(|i| data.sq_sums[i] / lam[i]).sum::<f64>();
    if !psi.is_finite() || psi < 0.0 {
        return Err(Error::Numerical("degenerate quadratic form".into()));
    }
    // constant outputs give psi = 0; keep the process variance off zero
    let psi = psi.max(1e-12 * big_n);
    let tau = psi / big_n;
    let mut value = -0.5 * big_n * (LN_2PI + tau.ln() + 1.0) - 0.5 * k.log_det();
    for i in 0..n {
        value -= 0.5 * ((a[i] - 1.0) * lam[i].ln() + a[i].ln());
    }

    let q = delta.dot(&beta);
    let tau_g_raw = q / nf;
    let tau_g_floor = f64::EPSILON.sqrt();
    let floored = !(tau_g_raw > tau_g_floor);
    let tau_g = if floored { tau_g_floor } else { tau_g_raw };
    value += -0.5 * nf * (LN_2PI + tau_g.ln()) - 0.5 * kg.log_det() - 0.5 * q / tau_g;

    // gradient of log L_Y with respect to log lambda
    let s = big_n / (2.0 * psi);
    let g_l: Vec<f64> = (0..n)
        .map(|i| {
            if clamped[i] {
                0.0
            } else {
                s * (alpha[i] * alpha[i] * lam[i] / a[i] + data.sq_sums[i] / lam[i])
                    - 0.5 * kinv[(i, i)] * lam[i] / a[i]
                    - 0.5 * (a[i] - 1.0)
            }
        })
        .collect();
    let g_l = DVector::from_vec(g_l);

    let mut grad = vec![0.0; 2 * p + 1 + n];
    // mean-kernel lengthscales: sum over W .* dC with W = s alpha alpha' - K^{-1}/2
    for kd in 0..p {
        let dmat = sq_dist_matrix(&data.x, kd, prm.rho[kd]);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let w = s * alpha[i] * alpha[j] - 0.5 * kinv[(i, j)];
                acc += w * c[(i, j)] * dmat[(i, j)];
            }
        }
        grad[kd] = acc;
    }

    let kginv = kg.inverse();
    // d log L_Delta / d Kg = c_q beta beta' - Kg^{-1}/2
    let c_q = 0.5 / tau_g;
    let u = kg.solve_vec(&DVector::from_iterator(
        n,
        (0..n).map(|i| prm.nugget_g * g_l[i] / a[i]),
    ));
    for kd in 0..p {
        let dmat = sq_dist_matrix(&data.x, kd, prm.rho_g[kd]);
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                let dcg = cg[(i, j)] * dmat[(i, j)];
                let w = u[i] * beta[j] + c_q * beta[i] * beta[j] - 0.5 * kginv[(i, j)];
                acc += w * dcg;
            }
        }
        grad[p + kd] = acc;
    }

    let m_g = kg.solve_vec(&(&cg * &g_l));
    let mut gg = 0.0;
    for i in 0..n {
        let dk = prm.nugget_g / a[i];
        gg += -m_g[i] * dk * beta[i];
        gg += c_q * beta[i] * beta[i] * dk;
        gg -= 0.5 * kginv[(i, i)] * dk;
    }
    grad[2 * p] = gg;

    for i in 0..n {
        grad[2 * p + 1 + i] = m_g[i] - beta[i] / tau_g;
    }
    if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite likelihood".into()));
    }
    Ok(LikelihoodEval {
        value,
        gradient: grad,
        tau,
        tau_g,
    })
}

fn unpack<'a>(v: &'a [f64], p: usize, buf: &'a mut Vec<f64>) -> LikelihoodParams<'a> {
    buf.clear();
    buf.extend(v[..2 * p].iter().map(|t| t.exp()));
    let (rho, rho_g) = buf.split_at(p);
    LikelihoodParams {
        rho,
        rho_g,
        nugget_g: v[2 * p].exp(),
        delta: &v[2 * p + 1..],
    }
}

struct StartOutcome {
    x: Vec<f64>,
    value: f64,
    trace: Vec<f64>,
}

fn run_start(
    data: &CoordinateData,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    max_iter: usize,
) -> Option<StartOutcome> {
    let p = data.x[0].len();
    let mut buf = Vec::with_capacity(2 * p);
    let objective = |v: &[f64]| {
        let prm = unpack(v, p, &mut buf);
        let ev = log_likelihood(data, &prm).ok()?;
        Some((-ev.value, ev.gradient.iter().map(|g| -g).collect()))
    };
    let opts = LbfgsOptions {
        max_iter,
        ..Default::default()
    };
    let res = minimize(objective, x0, lo, hi, &opts).ok()?;
    Some(StartOutcome {
        x: res.x,
        value: -res.value,
        trace: res.trace.iter().map(|v| -v).collect(),
    })
}

/// Standardize coordinate `j` of `data`. Returns the data plus (center, scale).
pub fn standardize(data: &SimulationDataset, j: usize) -> (CoordinateData, f64, f64) {
    let n = data.len();
    let ybar = data.coordinate_means(j);
    let center = ybar.iter().sum::<f64>() / n as f64;
    let var = ybar.iter().map(|v| (v - center).powi(2)).sum::<f64>() / n as f64;
    let pooled_ss: f64 = (0..n).map(|i| data.sum_squares(i, j)).sum();
    let pooled_df: usize = data.reps().iter().map(|a| a.saturating_sub(1)).sum();
    let mut scale = var.sqrt();
    if !(scale > 1e-12 * center.abs().max(1.0)) {
        scale = if pooled_df > 0 {
            (pooled_ss / pooled_df as f64).sqrt()
        } else {
            0.0
        };
    }
    if !(scale > 0.0) || !scale.is_finite() {
        scale = 1.0;
    }
    let cd = CoordinateData {
        x: data.params().to_vec(),
        reps: data.reps().iter().map(|a| *a as f64).collect(),
        ybar: ybar.iter().map(|v| (v - center) / scale).collect(),
        sq_sums: (0..n)
            .map(|i| data.sum_squares(i, j) / (scale * scale))
            .collect(),
    };
    (cd, center, scale)
}

fn initial_delta(data: &CoordinateData) -> Vec<f64> {
    let floor = VARIANCE_FLOOR;
    let df: f64 = data.reps.iter().map(|a| a - 1.0).sum();
    let pooled = if df > 0.0 {
        data.sq_sums.iter().sum::<f64>() / df
    } else {
        0.1
    };
    data.reps
        .iter()
        .zip(&data.sq_sums)
        .map(|(a, ss)| {
            let v = if *a >= 2.0 { ss / (a - 1.0) } else { pooled };
            v.max(floor).ln().min(DELTA_UPPER)
        })
        .collect()
}

fn fit_coordinate(data: &SimulationDataset, j: usize, cfg: &FitConfig) -> Result<CoordinateModel> {
    let (cd, center, scale) = standardize(data, j);
    let n = cd.x.len();
    let p = data.p();
    let dim = 2 * p + 1 + n;
    let (rl, rh) = (RHO_BOUNDS.0.ln(), RHO_BOUNDS.1.ln());
    let mut lo = vec![rl; 2 * p];
    let mut hi = vec![rh; 2 * p];
    lo.push(NUGGET_BOUNDS.0.ln());
    hi.push(NUGGET_BOUNDS.1.ln());
    lo.extend(std::iter::repeat_n(VARIANCE_FLOOR.ln(), n));
    hi.extend(std::iter::repeat_n(DELTA_UPPER, n));

    let delta0 = initial_delta(&cd);
    let mut starts: Vec<Vec<f64>> = Vec::new();
    if let Some(prev) = cfg.warm_start.as_ref().and_then(|w| w.get(j)) {
        let mut s: Vec<f64> = prev.rho.iter().chain(&prev.rho_g).map(|r| r.ln()).collect();
        s.push(prev.nugget_g.ln());
        // previous latent values carry over for points that were already there
        let rescale = 2.0 * (prev.scale / scale).ln() + (prev.tau / (prev.scale * prev.scale)).ln();
        for i in 0..n {
            s.push(prev.latent.get(i).map_or(delta0[i], |v| v + rescale));
        }
        starts.push(s);
    }
    // space-filling starts over the lengthscale and nugget block
    let fresh = cfg.restarts.max(1);
    let mut rng =
        ChaCha8Rng::seed_from_u64(cfg.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(j as u64 + 1)));
    let lhs = latin_hypercube(fresh, 2 * p + 1, &mut rng);
    let (start_lo, start_hi) = ((0.01f64).ln(), (1.0f64).ln());
    let (gstart_lo, gstart_hi) = ((1e-3f64).ln(), (0.5f64).ln());
    for (r, u) in lhs.iter().enumerate() {
        let mut s: Vec<f64> = (0..2 * p)
            .map(|k| {
                if r == 0 {
                    (0.1f64).ln()
                } else {
                    start_lo + u[k] * (start_hi - start_lo)
                }
            })
            .collect();
        s.push(if r == 0 {
            (0.01f64).ln()
        } else {
            gstart_lo + u[2 * p] * (gstart_hi - gstart_lo)
        });
        s.extend_from_slice(&delta0);
        starts.push(s);
    }

    let outcomes: Vec<Option<StartOutcome>> = starts
        .par_iter()
        .map(|s0| {
            let mut s = s0.clone();
            for i in 0..dim {
                s[i] = s[i].clamp(lo[i], hi[i]);
            }
            run_start(&cd, &s, &lo, &hi, cfg.max_iter)
        })
        .collect();
    let mut best: Option<StartOutcome> = None;
    for o in outcomes.into_iter().flatten() {
        if best.as_ref().is_none_or(|b| o.value > b.value) {
            best = Some(o);
        }
    }
    let best =
        best.ok_or_else(|| Error::FitFailed(format!("all restarts failed for output {j}")))?;
    let mut buf = Vec::new();
    let prm = unpack(&best.x, p, &mut buf);
    let ev = log_likelihood(&cd, &prm)?;
    let hyper = Hyperparameters {
        rho: prm.rho.to_vec(),
        rho_g: prm.rho_g.to_vec(),
        latent: prm.delta.to_vec(),
        nugget_g: prm.nugget_g,
        tau: ev.tau * scale * scale,
        tau_g: ev.tau_g,
        center,
        scale,
        log_likelihood: ev.value,
    };
    let ybar = data.coordinate_means(j);
    let mut model = CoordinateModel::from_hyperparameters(cd.x, cd.reps, ybar, hyper)?;
    model.trace = best.trace;
    Ok(model)
}

/// Fit one heteroskedastic GP per output coordinate.
pub fn fit(data: &SimulationDataset, cfg: &FitConfig) -> Result<HetGpModel> {
    if data.len() < cfg.min_design {
        return Err(Error::invalid(format!(
            "need at least {} design points, got {}",
            cfg.min_design,
            data.len()
        )));
    }
    if !cfg.allow_no_replication && data.reps().iter().all(|a| *a < 2) {
        return Err(Error::invalid(
            "no replicated design point; set allow_no_replication",
        ));
    }
    let coords = (0..data.d())
        .into_par_iter()
        .map(|j| fit_coordinate(data, j, cfg))
        .collect::<Result<Vec<_>>>()?;
    HetGpModel::from_coordinates(data.p(), coords)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn toy_data(seed: u64, n: usize, reps: usize) -> CoordinateData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = SimulationDataset::new(2, 1).unwrap();
        for _ in 0..n {
            let t = vec![rng.random::<f64>(), rng.random::<f64>()];
            let sd = 0.2 + 0.5 * t[0];
            let outs = (0..reps)
                .map(|_| {
                    vec![(4.0 * t[0]).sin() + t[1] + Normal::new(0.0, sd).unwrap().sample(&mut rng)]
                })
                .collect();
            data.push(&t, outs).unwrap();
        }
        standardize(&data, 0).0
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let data = toy_data(1, 12, 3);
        let n = data.x.len();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut v: Vec<f64> = vec![
            (0.2f64).ln(),
            (0.5f64).ln(),
            (0.3f64).ln(),
            (0.8f64).ln(),
            (0.05f64).ln(),
        ];
        v.extend((0..n).map(|_| -1.0 + 0.8 * rng.random::<f64>()));
        let mut buf = Vec::new();
        let ev = log_likelihood(&data, &unpack(&v, 2, &mut buf)).unwrap();
        for k in 0..v.len() {
            let h = 1e-5;
            let mut vp = v.clone();
            vp[k] += h;
            let mut vm = v.clone();
            vm[k] -= h;
            let fp = log_likelihood(&data, &unpack(&vp, 2, &mut buf))
                .unwrap()
                .value;
            let fm = log_likelihood(&data, &unpack(&vm, 2, &mut buf))
                .unwrap()
                .value;
            let fd = (fp - fm) / (2.0 * h);
            let an = ev.gradient[k];
            assert!(
                (fd - an).abs() <= 1e-5 * an.abs().max(1.0),
                "component {k}: analytic {an}, finite difference {fd}"
            );
        }
    }

    #[test]
    fn likelihood_matches_replicate_level_density() {
        // the averaged form must equal the full replicate-level MVN log-density
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = vec![vec![0.1], vec![0.5], vec![0.8]];
        let reps = [2usize, 3, 1];
        let mut rows = Vec::new();
        let mut data = SimulationDataset::new(1, 1).unwrap();
        for (xi, a) in x.iter().zip(reps) {
            let outs: Vec<Vec<f64>> = (0..a)
                .map(|_| vec![rng.random::<f64>() * 2.0 - 1.0])
                .collect();
            for o in &outs {
                rows.push((xi[0], o[0]));
            }
            data.push(xi, outs).unwrap();
        }
        let cd = CoordinateData {
            x: x.clone(),
            reps: reps.iter().map(|a| *a as f64).collect(),
            ybar: data.coordinate_means(0),
            sq_sums: (0..3).map(|i| data.sum_squares(i, 0)).collect(),
        };
        let delta = [-0.5, 0.2, -1.0];
        let prm = LikelihoodParams {
            rho: &[0.1],
            rho_g: &[0.3],
            nugget_g: 0.1,
            delta: &delta,
        };
        let ev = log_likelihood(&cd, &prm).unwrap();
        // replicate-level covariance tau (C_full + diag(lambda))
        let cg = corr_matrix(&x, &x, &[0.3]);
        let mut kg = cg.clone();
        for i in 0..3 {
            kg[(i, i)] += 0.1 / reps[i] as f64;
        }
        let loglam = &cg
            * kg.clone()
                .cholesky()
                .unwrap()
                .solve(&DVector::from_column_slice(&delta));
        let idx: Vec<usize> = reps
            .iter()
            .enumerate()
            .flat_map(|(i, a)| std::iter::repeat_n(i, *a))
            .collect();
        let big = idx.len();
        let mut full = DMatrix::from_fn(big, big, |a, b| corr(&x[idx[a]], &x[idx[b]], &[0.1]));
        for a in 0..big {
            full[(a, a)] += loglam[idx[a]].exp();
        }
        let yv = DVector::from_iterator(big, rows.iter().map(|r| r.1));
        let ch = full.clone().cholesky().unwrap();
        let quad = yv.dot(&ch.solve(&yv));
        let tau = quad / big as f64;
        let logdet = 2.0 * ch.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let ly = -0.5 * big as f64 * (LN_2PI + tau.ln() + 1.0) - 0.5 * logdet;
        let beta = kg
            .clone()
            .cholesky()
            .unwrap()
            .solve(&DVector::from_column_slice(&delta));
        let q = DVector::from_column_slice(&delta).dot(&beta);
        let kgdet = 2.0
            * kg.cholesky()
                .unwrap()
                .l()
                .diagonal()
                .iter()
                .map(|v| v.ln())
                .sum::<f64>();
        let ld = -0.5 * 3.0 * (LN_2PI + (q / 3.0).ln() + 1.0) - 0.5 * kgdet;
        assert!(
            (ev.value - (ly + ld)).abs() < 1e-9,
            "{} vs {}",
            ev.value,
            ly + ld
        );
        assert!((ev.tau - tau).abs() < 1e-12);
    }

    use crate::linalg::corr;

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut data = SimulationDataset::new(1, 1).unwrap();
        for i in 0..12 {
            let t = i as f64 / 11.0;
            let outs = (0..3)
                .map(|_| vec![(6.0 * t).sin() + 0.3 * rng.random::<f64>()])
                .collect();
            data.push(&[t], outs).unwrap();
        }
        let cfg = FitConfig {
            restarts: 1,
            seed: 3,
            ..Default::default()
        };
        let a = fit(&data, &cfg).unwrap();
        let b = fit(&data, &cfg).unwrap();
        assert_eq!(
            a.coordinate(0).hyperparameters(),
            b.coordinate(0).hyperparameters()
        );
        let tr = a.coordinate(0).likelihood_trace();
        assert!(tr.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        assert!(tr.last().unwrap() >= tr.first().unwrap());
    }

    #[test]
    fn fit_preconditions() {
        let mut data = SimulationDataset::new(1, 1).unwrap();
        for i in 0..3 {
            data.push(&[i as f64 / 3.0], vec![vec![1.0], vec![2.0]])
                .unwrap();
        }
        assert!(fit(&data, &FitConfig::default()).is_err());
        let mut single = SimulationDataset::new(1, 1).unwrap();
        for i in 0..6 {
            single
                .push(&[i as f64 / 6.0], vec![vec![i as f64]])
                .unwrap();
        }
        assert!(fit(&single, &FitConfig::default()).is_err());
        let cfg = FitConfig {
            allow_no_replication: true,
            restarts: 1,
            ..Default::default()
        };
        assert!(fit(&single, &cfg).is_ok());
    }

    #[test]
    fn constant_outputs_do_not_break_fit() {
        let mut data = SimulationDataset::new(1, 1).unwrap();
        for i in 0..6 {
            data.push(&[i as f64 / 5.0], vec![vec![3.0], vec![3.0]])
                .unwrap();
        }
        let m = fit(
            &data,
            &FitConfig {
                restarts: 2,
                ..Default::default()
            },
        )
        .unwrap();
        let pr = m.predict(&[0.5]).unwrap();
        assert!(pr.mean[0].is_finite() && (pr.mean[0] - 3.0).abs() < 1e-6);
    }
}
