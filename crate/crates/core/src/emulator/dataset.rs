use crate::error::{Error, Result};

/// Max-norm distance below which two parameters count as the same point.
pub const COINCIDENCE_TOL: f64 = 1e-10;

pub(crate) fn coincident(a: &[f64], b: &[f64]) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= COINCIDENCE_TOL)
}

/// Replicated simulation outputs at a set of unique parameters.
///
/// Running means and centered sums of squares are maintained per output
/// coordinate with Welford updates.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationDataset {
    p: usize,
    d: usize,
    params: Vec<Vec<f64>>,
    outputs: Vec<Vec<Vec<f64>>>,
    means: Vec<Vec<f64>>,
    sq_sums: Vec<Vec<f64>>,
}

impl SimulationDataset {
    pub fn new(p: usize, d: usize) -> Result<Self> {
        if p == 0 || d == 0 {
            return Err(Error::invalid("dataset needs p >= 1 and d >= 1"));
        }
        Ok(Self {
            p,
            d,
            params: Vec::new(),
            outputs: Vec::new(),
            means: Vec::new(),
            sq_sums: Vec::new(),
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Number of unique parameters.
    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn param(&self, i: usize) -> &[f64] {
        &self.params[i]
    }

    pub fn reps(&self) -> Vec<usize> {
        self.outputs.iter().map(Vec::len).collect()
    }

    pub fn rep_count(&self, i: usize) -> usize {
        self.outputs[i].len()
    }

    pub fn total_evaluations(&self) -> usize {
        self.outputs.iter().map(Vec::len).sum()
    }

    /// Replicate outputs stored at point `i`.
    pub fn outputs(&self, i: usize) -> &[Vec<f64>] {
        &self.outputs[i]
    }

    /// Sample mean of coordinate `j` at point `i`.
    pub fn mean(&self, i: usize, j: usize) -> f64 {
        self.means[i][j]
    }

    /// Sample means of coordinate `j` over all points.
    pub fn coordinate_means(&self, j: usize) -> Vec<f64> {
        self.means.iter().map(|m| m[j]).collect()
    }

    /// Centered sum of squares of coordinate `j` at point `i`.
    pub fn sum_squares(&self, i: usize, j: usize) -> f64 {
        self.sq_sums[i][j]
    }

    /// Unbiased sample variance, `None` with fewer than two replicates.
    pub fn sample_variance(&self, i: usize, j: usize) -> Option<f64> {
        let a = self.rep_count(i);
        (a >= 2).then(|| self.sq_sums[i][j] / (a - 1) as f64)
    }

    pub fn find(&self, theta: &[f64]) -> Option<usize> {
        self.params.iter().position(|x| coincident(x, theta))
    }

    fn check_param(&self, theta: &[f64]) -> Result<()> {
        Error::check_dim(self.p, theta.len())?;
        if theta.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            return Err(Error::invalid("parameter outside [0,1]^p"));
        }
        Ok(())
    }

    fn check_outputs(&self, outputs: &[Vec<f64>]) -> Result<()> {
        for o in outputs {
            Error::check_dim(self.d, o.len())?;
            if o.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical("non-finite simulation output".into()));
            }
        }
        Ok(())
    }

    /// Add replicates at `theta`, creating the point if it is new. Returns
    /// the point index.
    pub fn push(&mut self, theta: &[f64], outputs: Vec<Vec<f64>>) -> Result<usize> {
        self.check_param(theta)?;
        if outputs.is_empty() {
            return Err(Error::invalid("at least one replicate required"));
        }
        if let Some(i) = self.find(theta) {
            self.add_replicates(i, outputs)?;
            return Ok(i);
        }
        self.check_outputs(&outputs)?;
        self.params.push(theta.to_vec());
        self.outputs.push(Vec::new());
        self.means.push(vec![0.0; self.d]);
        self.sq_sums.push(vec![0.0; self.d]);
        let i = self.params.len() - 1;
        self.append(i, outputs);
        Ok(i)
    }

    /// Append replicates to an existing point, updating cached moments.
    pub fn add_replicates(&mut self, idx: usize, new_outputs: Vec<Vec<f64>>) -> Result<()> {
        if idx >= self.len() {
            return Err(Error::invalid(format!("point index {idx} out of range")));
        }
        self.check_outputs(&new_outputs)?;
        self.append(idx, new_outputs);
        Ok(())
    }

    /// Functional form of [`add_replicates`](Self::add_replicates).
    pub fn with_replicates(&self, idx: usize, new_outputs: Vec<Vec<f64>>) -> Result<Self> {
        let mut next = self.clone();
        next.add_replicates(idx, new_outputs)?;
        Ok(next)
    }

    fn append(&mut self, i: usize, outputs: Vec<Vec<f64>>) {
        for o in outputs {
            let n = (self.outputs[i].len() + 1) as f64;
            for j in 0..self.d {
                let delta = o[j] - self.means[i][j];
                self.means[i][j] += delta / n;
                self.sq_sums[i][j] += delta * (o[j] - self.means[i][j]);
            }
            self.outputs[i].push(o);
        }
    }

    /// Rebuild from raw rows `(theta, outputs)` in the given order.
    pub fn from_rows(
        p: usize,
        d: usize,
        rows: impl IntoIterator<Item = (Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut data = Self::new(p, d)?;
        for (theta, out) in rows {
            data.push(&theta, vec![out])?;
        }
        Ok(data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn recompute(data: &SimulationDataset, i: usize, j: usize) -> (f64, f64) {
        let xs: Vec<f64> = data.outputs(i).iter().map(|o| o[j]).collect();
        let m = xs.iter().sum::<f64>() / xs.len() as f64;
        let ss = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>();
        (m, ss)
    }

    #[test]
    fn replicate_equal_to_mean_keeps_mean() {
        let mut d = SimulationDataset::new(1, 1).unwrap();
        d.push(&[0.3], vec![vec![1.0], vec![3.0]]).unwrap();
        d.add_replicates(0, vec![vec![2.0]]).unwrap();
        assert_eq!(d.mean(0, 0), 2.0);
        assert_eq!(d.rep_count(0), 3);
    }

    #[test]
    fn weighted_average_of_copies() {
        let mut d = SimulationDataset::new(1, 2).unwrap();
        d.push(&[0.5], vec![vec![1.0, 0.0]; 4]).unwrap();
        d.add_replicates(0, vec![vec![6.0, 1.0]; 3]).unwrap();
        assert!((d.mean(0, 0) - (4.0 + 18.0) / 7.0).abs() < 1e-14);
        assert!((d.mean(0, 1) - 3.0 / 7.0).abs() < 1e-14);
    }

    #[test]
    fn streaming_matches_batch() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut d = SimulationDataset::new(2, 3).unwrap();
        for _ in 0..10 {
            let theta = vec![rng.random(), rng.random()];
            let outs = (0..rng.random_range(1..5))
                .map(|_| (0..3).map(|_| rng.random::<f64>() * 100.0 - 50.0).collect())
                .collect();
            d.push(&theta, outs).unwrap();
        }
        for _ in 0..50 {
            let i = rng.random_range(0..10);
            let outs = vec![(0..3).map(|_| rng.random::<f64>() * 10.0).collect()];
            d = d.with_replicates(i, outs).unwrap();
        }
        for i in 0..d.len() {
            for j in 0..3 {
                let (m, ss) = recompute(&d, i, j);
                assert!((m - d.mean(i, j)).abs() <= 1e-12 * m.abs().max(1.0));
                assert!((ss - d.sum_squares(i, j)).abs() <= 1e-12 * ss.abs().max(1.0) * 10.0);
            }
        }
    }

    #[test]
    fn push_routes_existing_point() {
        let mut d = SimulationDataset::new(1, 1).unwrap();
        d.push(&[0.2], vec![vec![1.0]]).unwrap();
        let i = d.push(&[0.2 + 1e-12], vec![vec![3.0]]).unwrap();
        assert_eq!(i, 0);
        assert_eq!(d.len(), 1);
        assert_eq!(d.reps(), vec![2]);
    }

    #[test]
    fn errors() {
        let mut d = SimulationDataset::new(1, 2).unwrap();
        assert!(d.push(&[0.2], vec![vec![1.0]]).is_err());
        assert!(d.push(&[1.2], vec![vec![1.0, 2.0]]).is_err());
        assert!(d.add_replicates(0, vec![vec![1.0, 2.0]]).is_err());
    }
}
