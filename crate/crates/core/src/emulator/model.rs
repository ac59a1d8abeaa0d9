use nalgebra::{DMatrix, DVector};

use super::dataset::coincident;
use crate::error::{Error, Result};
use crate::linalg::{corr, SpdMatrix};

/// Floor on intrinsic variances relative to the output scale.
pub const VARIANCE_FLOOR: f64 = 1e-8;

/// Stochastic-kriging surface for one output coordinate in raw output units:
/// `K = tau*C + diag(noise / reps)`, mean `center + k' K^{-1} (ybar - center)`.
#[derive(Debug, Clone)]
pub struct Surface {
    x: Vec<Vec<f64>>,
    reps: Vec<f64>,
    noise: Vec<f64>,
    ybar: Vec<f64>,
    center: f64,
    tau: f64,
    rho: Vec<f64>,
    k: SpdMatrix,
    alpha: DVector<f64>,
}

impl Surface {
    pub fn new(
        x: Vec<Vec<f64>>,
        reps: Vec<f64>,
        noise: Vec<f64>,
        ybar: Vec<f64>,
        center: f64,
        tau: f64,
        rho: Vec<f64>,
    ) -> Result<Self> {
        let n = x.len();
        if n == 0 {
            return Err(Error::invalid("surface needs at least one design point"));
        }
        Error::check_dim(n, reps.len())?;
        Error::check_dim(n, noise.len())?;
        Error::check_dim(n, ybar.len())?;
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid("process scale must be positive"));
        }
        if reps.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::invalid("replicate counts must be positive"));
        }
        if noise.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::invalid("intrinsic variances must be nonnegative"));
        }
        let p = rho.len();
        if x.iter().any(|xi| xi.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: x[0].len(),
            });
        }
        let mut km = DMatrix::from_fn(n, n, |i, j| tau * corr(&x[i], &x[j], &rho));
        for i in 0..n {
            km[(i, i)] += noise[i] / reps[i];
        }
        let k = SpdMatrix::new(km)?;
        let centered = DVector::from_iterator(n, ybar.iter().map(|v| v - center));
        let alpha = k.solve_vec(&centered);
        Ok(Self {
            x,
            reps,
            noise,
            ybar,
            center,
            tau,
            rho,
            k,
            alpha,
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn design(&self) -> &[Vec<f64>] {
        &self.x
    }

    pub fn reps(&self) -> &[f64] {
        &self.reps
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn ybar(&self) -> &[f64] {
        &self.ybar
    }

    pub fn center(&self) -> f64 {
        self.center
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn factor(&self) -> &SpdMatrix {
        &self.k
    }

    pub fn find(&self, theta: &[f64]) -> Option<usize> {
        self.x.iter().position(|xi| coincident(xi, theta))
    }

    /// Cross-covariance vector `k(theta) = tau * c(theta, x_i)`.
    pub fn kvec(&self, theta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.len(),
            self.x
                .iter()
                .map(|xi| self.tau * corr(theta, xi, &self.rho)),
        )
    }

    /// `k(t1, t2)` for the process (not including intrinsic noise).
    pub fn prior_cov(&self, t1: &[f64], t2: &[f64]) -> f64 {
        self.tau * corr(t1, t2, &self.rho)
    }

    pub fn mean(&self, theta: &[f64]) -> f64 {
        self.center + self.kvec(theta).dot(&self.alpha)
    }

    /// Predictive mean and variance of the mean surface at `theta`.
    pub fn predict(&self, theta: &[f64]) -> (f64, f64) {
        let kv = self.kvec(theta);
        let w = self.k.half_solve(&kv);
        let var = (self.tau - w.norm_squared()).max(0.0);
        (self.center + kv.dot(&self.alpha), var)
    }

    /// Posterior covariance of the mean surface between two parameters.
    pub fn cov(&self, t1: &[f64], t2: &[f64]) -> f64 {
        let w1 = self.k.half_solve(&self.kvec(t1));
        let w2 = self.k.half_solve(&self.kvec(t2));
        let c = self.prior_cov(t1, t2) - w1.dot(&w2);
        if coincident(t1, t2) {
            c.max(0.0)
        } else {
            c
        }
    }

    /// `L^{-1} [k(theta_1), ..., k(theta_m)]` for a block of parameters.
    pub fn half_solved_block(&self, thetas: &[Vec<f64>]) -> DMatrix<f64> {
        let kb = DMatrix::from_fn(self.len(), thetas.len(), |i, j| {
            self.tau * corr(&self.x[i], &thetas[j], &self.rho)
        });
        self.k.half_solve_mat(&kb)
    }

    /// `K^{-1} k(theta)`.
    pub fn weights(&self, theta: &[f64]) -> DVector<f64> {
        self.k.solve_vec(&self.kvec(theta))
    }

    /// Append a point whose sample average is imputed by the current mean,
    /// keeping hyperparameters fixed.
    pub fn fantasize(&self, theta: &[f64], reps: f64, noise: f64) -> Result<Self> {
        if self.find(theta).is_some() {
            return Err(Error::invalid(
                "fantasy point coincides with a design point",
            ));
        }
        if !(reps > 0.0) || !(noise >= 0.0) {
            return Err(Error::invalid(
                "fantasy point needs positive reps and nonnegative noise",
            ));
        }
        let kv = self.kvec(theta);
        let imputed = self.center + kv.dot(&self.alpha);
        let k = self.k.bordered(&kv, self.tau + noise / reps)?;
        let mut x = self.x.clone();
        x.push(theta.to_vec());
        let mut reps_v = self.reps.clone();
        reps_v.push(reps);
        let mut noise_v = self.noise.clone();
        noise_v.push(noise);
        let mut ybar = self.ybar.clone();
        ybar.push(imputed);
        let centered = DVector::from_iterator(ybar.len(), ybar.iter().map(|v| v - self.center));
        let alpha = k.solve_vec(&centered);
        Ok(Self {
            x,
            reps: reps_v,
            noise: noise_v,
            ybar,
            center: self.center,
            tau: self.tau,
            rho: self.rho.clone(),
            k,
            alpha,
        })
    }

    /// Rebuild with a new replicate vector, sample averages unchanged.
    pub fn with_reps(&self, reps: &[f64]) -> Result<Self> {
        Self::new(
            self.x.clone(),
            reps.to_vec(),
            self.noise.clone(),
            self.ybar.clone(),
            self.center,
            self.tau,
            self.rho.clone(),
        )
    }
}

/// Smoothed log-variance field: `log lambda(theta) = c_g(theta)' (C_g + g A^{-1})^{-1} delta`.
#[derive(Debug, Clone)]
pub struct LatentField {
    x: Vec<Vec<f64>>,
    rho_g: Vec<f64>,
    beta: DVector<f64>,
}

impl LatentField {
    pub fn new(
        x: Vec<Vec<f64>>,
        reps: &[f64],
        rho_g: Vec<f64>,
        nugget_g: f64,
        delta: &[f64],
    ) -> Result<Self> {
        let n = x.len();
        Error::check_dim(n, reps.len())?;
        Error::check_dim(n, delta.len())?;
        let mut kg = DMatrix::from_fn(n, n, |i, j| corr(&x[i], &x[j], &rho_g));
        for i in 0..n {
            kg[(i, i)] += nugget_g / reps[i];
        }
        let kg = SpdMatrix::new(kg)?;
        let beta = kg.solve_vec(&DVector::from_column_slice(delta));
        Ok(Self { x, rho_g, beta })
    }

    pub fn log_lambda(&self, theta: &[f64]) -> f64 {
        self.x
            .iter()
            .zip(self.beta.iter())
            .map(|(xi, b)| corr(theta, xi, &self.rho_g) * b)
            .sum()
    }
}

/// Fitted hyperparameters of one output coordinate. `tau` is in raw output
/// units; `latent` is on the standardized scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    pub rho: Vec<f64>,
    pub rho_g: Vec<f64>,
    pub latent: Vec<f64>,
    pub nugget_g: f64,
    pub tau: f64,
    pub tau_g: f64,
    pub center: f64,
    pub scale: f64,
    pub log_likelihood: f64,
}

/// Emulator of a single output coordinate.
#[derive(Debug, Clone)]
pub struct CoordinateModel {
    pub(crate) hyper: Hyperparameters,
    pub(crate) surface: Surface,
    pub(crate) latent: Option<LatentField>,
    /// Log-likelihood after each accepted optimizer step of the winning start.
    pub(crate) trace: Vec<f64>,
}

impl CoordinateModel {
    /// Assemble from hyperparameters and the data they were fit on.
    pub fn from_hyperparameters(
        x: Vec<Vec<f64>>,
        reps: Vec<f64>,
        ybar: Vec<f64>,
        hyper: Hyperparameters,
    ) -> Result<Self> {
        let latent = LatentField::new(
            x.clone(),
            &reps,
            hyper.rho_g.clone(),
            hyper.nugget_g,
            &hyper.latent,
        )?;
        let noise: Vec<f64> = x
            .iter()
            .map(|xi| hyper.tau * latent.log_lambda(xi).exp().max(VARIANCE_FLOOR))
            .collect();
        let surface = Surface::new(
            x,
            reps,
            noise,
            ybar,
            hyper.center,
            hyper.tau,
            hyper.rho.clone(),
        )?;
        Ok(Self {
            hyper,
            surface,
            latent: Some(latent),
            trace: Vec::new(),
        })
    }

    /// A model with known intrinsic variances at the design and no latent
    /// field; off-design intrinsic variance is the design average.
    pub fn with_known_noise(surface: Surface) -> Self {
        let hyper = Hyperparameters {
            rho: surface.rho().to_vec(),
            rho_g: surface.rho().to_vec(),
            latent: surface
                .noise()
                .iter()
                .map(|r| (r / surface.tau()).max(VARIANCE_FLOOR).ln())
                .collect(),
            nugget_g: 1e-6,
            tau: surface.tau(),
            tau_g: 1.0,
            center: surface.center(),
            scale: 1.0,
            log_likelihood: f64::NAN,
        };
        Self {
            hyper,
            surface,
            latent: None,
            trace: Vec::new(),
        }
    }

    pub fn hyperparameters(&self) -> &Hyperparameters {
        &self.hyper
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    pub fn likelihood_trace(&self) -> &[f64] {
        &self.trace
    }

    /// Intrinsic variance estimate: the design value at a design point,
    /// otherwise the latent-field prediction.
    pub fn intrinsic(&self, theta: &[f64]) -> f64 {
        if let Some(i) = self.surface.find(theta) {
            return self.surface.noise()[i];
        }
        match &self.latent {
            Some(l) => self.hyper.tau * l.log_lambda(theta).exp().max(VARIANCE_FLOOR),
            None => {
                let r = self.surface.noise();
                r.iter().sum::<f64>() / r.len() as f64
            }
        }
    }

    fn replace_surface(&self, surface: Surface) -> Self {
        Self {
            hyper: self.hyper.clone(),
            surface,
            latent: self.latent.clone(),
            trace: self.trace.clone(),
        }
    }
}

/// Emulator prediction at one parameter, one entry per output coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct EmulatorPrediction {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub intrinsic: Vec<f64>,
}

/// Independent emulators for all output coordinates.
#[derive(Debug, Clone)]
pub struct HetGpModel {
    p: usize,
    coords: Vec<CoordinateModel>,
}

impl HetGpModel {
    pub fn from_coordinates(p: usize, coords: Vec<CoordinateModel>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("model needs at least one output coordinate"));
        }
        let n = coords[0].surface.len();
        for c in &coords {
            Error::check_dim(p, c.surface.rho().len())?;
            Error::check_dim(n, c.surface.len())?;
        }
        Ok(Self { p, coords })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.coords.len()
    }

    pub fn n(&self) -> usize {
        self.coords[0].surface.len()
    }

    pub fn coordinates(&self) -> &[CoordinateModel] {
        &self.coords
    }

    pub fn coordinate(&self, j: usize) -> &CoordinateModel {
        &self.coords[j]
    }

    pub fn design(&self) -> &[Vec<f64>] {
        self.coords[0].surface.design()
    }

    pub fn reps(&self) -> &[f64] {
        self.coords[0].surface.reps()
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        Error::check_dim(self.p, theta.len())
    }

    pub fn predict(&self, theta: &[f64]) -> Result<EmulatorPrediction> {
        self.check_theta(theta)?;
        let d = self.d();
        let mut out = EmulatorPrediction {
            mean: Vec::with_capacity(d),
            var: Vec::with_capacity(d),
            intrinsic: Vec::with_capacity(d),
        };
        for c in &self.coords {
            let (m, v) = c.surface.predict(theta);
            out.mean.push(m);
            out.var.push(v);
            out.intrinsic.push(c.intrinsic(theta));
        }
        Ok(out)
    }

    pub fn posterior_cov(&self, t1: &[f64], t2: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(t1)?;
        self.check_theta(t2)?;
        Ok(self.coords.iter().map(|c| c.surface.cov(t1, t2)).collect())
    }

    /// Kriging-believer update with `new_reps` replicates at `new_theta`.
    pub fn fantasy_update(&self, new_theta: &[f64], new_reps: usize) -> Result<Self> {
        self.check_theta(new_theta)?;
        if new_reps == 0 {
            return Err(Error::invalid("fantasy replicate count must be positive"));
        }
        let coords = self
            .coords
            .iter()
            .map(|c| {
                let r = c.intrinsic(new_theta);
                let (_, s2) = c.surface.predict(new_theta);
                if !(s2 + r / new_reps as f64 > 0.0) {
                    return Err(Error::Numerical("nonpositive fantasy denominator".into()));
                }
                Ok(c.replace_surface(c.surface.fantasize(new_theta, new_reps as f64, r)?))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p: self.p, coords })
    }

    /// Model rebuilt with (possibly fractional) replicate counts `reps`,
    /// frozen hyperparameters and sample averages.
    pub fn with_reps(&self, reps: &[f64]) -> Result<Self> {
        Error::check_dim(self.n(), reps.len())?;
        let coords = self
            .coords
            .iter()
            .map(|c| Ok(c.replace_surface(c.surface.with_reps(reps)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { p: self.p, coords })
    }

    /// Model with `delta[i]` extra replicates at design point `i`, frozen
    /// hyperparameters and sample averages.
    pub fn with_extra_reps(&self, delta: &[usize]) -> Result<Self> {
        Error::check_dim(self.n(), delta.len())?;
        let reps: Vec<f64> = self
            .reps()
            .iter()
            .zip(delta)
            .map(|(a, d)| a + *d as f64)
            .collect();
        self.with_reps(&reps)
    }
}
