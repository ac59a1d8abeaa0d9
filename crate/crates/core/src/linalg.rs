//! Kernel evaluation, Gaussian log-densities and SPD linear algebra.
//!
//! Every density product downstream is assembled in log space; the helpers
//! here (`log_sub_exp`, `pairwise_sum`) keep those reductions stable and
//! reproducible.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Smallest relative jitter tried when a covariance fails to factor.
pub const JITTER_START: f64 = 1e-8;
/// Largest relative jitter before the matrix is declared singular.
pub const JITTER_MAX: f64 = 1e-4;

/// A point of the (rescaled) parameter space `[0,1]^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() {
            return Err(Error::invalid("parameter vector must have p >= 1"));
        }
        if let Some(c) = coords
            .iter()
            .find(|c| !c.is_finite() || **c < 0.0 || **c > 1.0)
        {
            return Err(Error::invalid(format!("coordinate {c} outside [0,1]")));
        }
        Ok(Self(coords))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ParameterVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Per-dimension lengthscales of the separable Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Lengthscales(Vec<f64>);

impl Lengthscales {
    pub fn new(rho: Vec<f64>) -> Result<Self> {
        if rho.is_empty() {
            return Err(Error::invalid("lengthscales must have p >= 1"));
        }
        if let Some(r) = rho.iter().find(|r| !r.is_finite() || **r <= 0.0) {
            return Err(Error::invalid(format!("nonpositive lengthscale {r}")));
        }
        Ok(Self(rho))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Deref for Lengthscales {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Separable Gaussian correlation `prod_k exp(-(t1_k - t2_k)^2 / (2 rho_k))`.
pub fn gaussian_correlation(t1: &[f64], t2: &[f64], rho: &Lengthscales) -> Result<f64> {
    Error::check_dim(t1.len(), t2.len())?;
    Error::check_dim(t1.len(), rho.len())?;
    Ok(corr(t1, t2, rho))
}

/// Unchecked kernel used in hot loops. Callers guarantee matching lengths.
#[inline]
pub(crate) fn corr(t1: &[f64], t2: &[f64], rho: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..rho.len() {
        let d = t1[k] - t2[k];
        s += d * d / (2.0 * rho[k]);
    }
    (-s).exp()
}

/// Correlation matrix between the rows of `a` and the rows of `b`.
pub(crate) fn corr_matrix(a: &[Vec<f64>], b: &[Vec<f64>], rho: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| corr(&a[i], &b[j], rho))
}

/// A symmetric positive-definite matrix together with its lower Cholesky
/// factor. `jitter` records the absolute diagonal shift needed to factor it.
#[derive(Debug, Clone)]
pub struct SpdMatrix {
    matrix: DMatrix<f64>,
    lower: DMatrix<f64>,
    jitter: f64,
}

impl SpdMatrix {
    /// Factor `matrix`, escalating diagonal jitter from `1e-8` to `1e-4`
    /// times the mean diagonal before giving up.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let n = matrix.nrows();
        if n == 0 {
            return Err(Error::invalid("empty matrix"));
        }
        let scale = matrix
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in 0..i {
                if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::invalid("matrix is not symmetric"));
                }
            }
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite matrix entry".into()));
        }
        let mean_diag = (matrix.diagonal().sum() / n as f64)
            .abs()
            .max(f64::MIN_POSITIVE);
        let mut jitter = 0.0;
        let mut rel = JITTER_START;
        loop {
            let mut shifted = matrix.clone();
            if jitter > 0.0 {
                for i in 0..n {
                    shifted[(i, i)] += jitter;
                }
            }
            if let Some(ch) = nalgebra::Cholesky::new(shifted) {
                return Ok(Self {
                    lower: ch.unpack(),
                    matrix,
                    jitter,
                });
            }
            if rel > JITTER_MAX * (1.0 + 1e-9) {
                return Err(Error::Singular { jitter });
            }
            jitter = rel * mean_diag;
            rel *= 10.0;
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.lower
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }

    /// `L^{-1} b` for a single right-hand side.
    pub fn half_solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a nonzero diagonal")
    }

    /// `L^{-1} B` for many right-hand sides.
    pub fn half_solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.lower
            .solve_lower_triangular(b)
            .expect("Cholesky factor has a nonzero diagonal")
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        let z = self.half_solve(b);
        self.lower
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a nonzero diagonal")
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let z = self.half_solve_mat(b);
        self.lower
            .tr_solve_lower_triangular(&z)
            .expect("Cholesky factor has a nonzero diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// Border the matrix with a new row/column `[col; diag]` and extend the
    /// factor in `O(n^2)`. Falls back to a fresh jittered factorization when
    /// the Schur complement is not positive.
    pub fn bordered(&self, col: &DVector<f64>, diag: f64) -> Result<Self> {
        let n = self.dim();
        Error::check_dim(n, col.len())?;
        let mut matrix = DMatrix::zeros(n + 1, n + 1);
        matrix.view_mut((0, 0), (n, n)).copy_from(&self.matrix);
        for i in 0..n {
            matrix[(i, n)] = col[i];
            matrix[(n, i)] = col[i];
        }
        matrix[(n, n)] = diag;
        let l12 = self.half_solve(col);
        let schur = diag + self.jitter - l12.norm_squared();
        if schur > 0.0 && schur.is_finite() {
            let mut lower = DMatrix::zeros(n + 1, n + 1);
            lower.view_mut((0, 0), (n, n)).copy_from(&self.lower);
            for i in 0..n {
                lower[(n, i)] = l12[i];
            }
            lower[(n, n)] = schur.sqrt();
            Ok(Self {
                matrix,
                lower,
                jitter: self.jitter,
            })
        } else {
            Self::new(matrix)
        }
    }
}

/// Solve `A X = B` with a factored SPD matrix.
pub fn spd_solve(a: &SpdMatrix, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Error::check_dim(a.dim(), b.nrows())?;
    Ok(a.solve(b))
}

/// Log density of `MVN(mean, cov)` at `x`.
pub fn mvn_logpdf(x: &[f64], mean: &[f64], cov: &SpdMatrix) -> Result<f64> {
    let d = x.len();
    Error::check_dim(d, mean.len())?;
    Error::check_dim(d, cov.dim())?;
    let r = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let z = cov.half_solve(&r);
    Ok(-0.5 * (d as f64 * LN_2PI + cov.log_det() + z.norm_squared()))
}

/// `ln(e^a - e^b)` for `a >= b`; returns `-inf` when the difference is not
/// positive.
pub fn log_sub_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY || b >= a {
        return f64::NEG_INFINITY;
    }
    a + (-(b - a).exp()).ln_1p()
}

/// Pairwise (cascade) summation with a fixed split order so parallel
/// producers still reduce to a bit-identical total.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 16 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        pairwise_sum(xs) / xs.len() as f64
    }
}

/// Log density of a Gaussian with covariance `scale * sigma + diag(extra)`
/// evaluated at residual `h`. Used by the posterior formulas where `sigma`
/// is the (small) observation covariance and `extra` holds emulator terms.
pub(crate) struct SmallGaussian<'a> {
    sigma: &'a DMatrix<f64>,
    diagonal: bool,
    buf: DMatrix<f64>,
}

impl<'a> SmallGaussian<'a> {
    pub fn new(sigma: &'a DMatrix<f64>) -> Self {
        let d = sigma.nrows();
        let diagonal = (0..d).all(|i| (0..d).all(|j| i == j || sigma[(i, j)] == 0.0));
        Self {
            sigma,
            diagonal,
            buf: DMatrix::zeros(d, d),
        }
    }

    /// Returns `(log f_N(h; 0, C), log|C|)` with `C = scale*sigma + diag(extra)`,
    /// or `None` when `C` is not positive definite.
    pub fn logpdf(&mut self, h: &[f64], scale: f64, extra: &[f64]) -> Option<(f64, f64)> {
        let d = h.len();
        if self.diagonal {
            let mut logdet = 0.0;
            let mut quad = 0.0;
            for j in 0..d {
                let c = scale * self.sigma[(j, j)] + extra[j];
                if !(c > 0.0) {
                    return None;
                }
                logdet += c.ln();
                quad += h[j] * h[j] / c;
            }
            return Some((-0.5 * (d as f64 * LN_2PI + logdet + quad), logdet));
        }
        // dense Cholesky on the small d x d system
        let m = &mut self.buf;
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = scale * self.sigma[(i, j)];
            }
            m[(i, i)] += extra[i];
        }
        for j in 0..d {
            let mut s = m[(j, j)];
            for k in 0..j {
                s -= m[(j, k)] * m[(j, k)];
            }
            if !(s > 0.0) {
                return None;
            }
            let ljj = s.sqrt();
            m[(j, j)] = ljj;
            for i in (j + 1)..d {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s -= m[(i, k)] * m[(j, k)];
                }
                m[(i, j)] = s / ljj;
            }
        }
        let mut logdet = 0.0;
        let mut quad = 0.0;
        let mut z = [0.0f64; 16];
        let mut zv;
        let zs: &mut [f64] = if d <= 16 {
            &mut z[..d]
        } else {
            zv = vec![0.0; d];
            &mut zv
        };
        for i in 0..d {
            let mut s = h[i];
            for k in 0..i {
                s -= m[(i, k)] * zs[k];
            }
            zs[i] = s / m[(i, i)];
            quad += zs[i] * zs[i];
            logdet += 2.0 * m[(i, i)].ln();
        }
        Some((-0.5 * (d as f64 * LN_2PI + logdet + quad), logdet))
    }

    /// Diagonal of `C^{-1}` and the vector `C^{-1} h` for
    /// `C = scale*sigma + diag(extra)`.
    pub fn inverse_terms(
        &self,
        h: &[f64],
        scale: f64,
        extra: &[f64],
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        let d = h.len();
        if self.diagonal {
            let mut diag = Vec::with_capacity(d);
            let mut ch = Vec::with_capacity(d);
            for j in 0..d {
                let c = scale * self.sigma[(j, j)] + extra[j];
                if !(c > 0.0) {
                    return None;
                }
                diag.push(1.0 / c);
                ch.push(h[j] / c);
            }
            return Some((diag, ch));
        }
        let mut c = self.sigma * scale;
        for j in 0..d {
            c[(j, j)] += extra[j];
        }
        let ch = nalgebra::Cholesky::new(c)?;
        let inv = ch.inverse();
        let sol = ch.solve(&DVector::from_column_slice(h));
        Some((
            inv.diagonal().iter().copied().collect(),
            sol.iter().copied().collect(),
        ))
    }
}
