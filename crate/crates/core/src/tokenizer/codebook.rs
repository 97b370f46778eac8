use crate::error::{Error, Result};
use crate::numerics::tensor::{gemm, Tensor};
use crate::rng::{normal, Rng};
use rand::Rng as _;

/// Shared codebook of `V` entries of width `N`, trained by exponential
/// moving averages rather than gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    entries: Tensor,
    cluster_size: Vec<f64>,
    embed_sum: Tensor,
    decay: f64,
    eps: f64,
}

/// Squared L2 distance, summed in index order. Both the quantizer's exact
/// pass and any reference implementation must agree bit-for-bit, so this is
/// the single definition used everywhere.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        s += d * d;
    }
    s
}

impl Codebook {
    /// Gaussian entries; EMA accumulators start at unit cluster size so that
    /// `entries == embed_sum / cluster_size` holds from the start.
    pub fn new(size: usize, width: usize, decay: f64, eps: f64, rng: &mut Rng) -> Self {
        let entries = Tensor::randn(&[size, width], 1.0, rng);
        Self::from_entries(entries, decay, eps).expect("valid shape")
    }

    pub fn from_entries(entries: Tensor, decay: f64, eps: f64) -> Result<Self> {
        if entries.shape().len() != 2 || entries.shape()[0] < 2 {
            return Err(Error::InvalidArgument(format!(
                "codebook needs shape [V >= 2, N], got {:?}",
                entries.shape()
            )));
        }
        entries.check_finite("codebook entries")?;
        let v = entries.shape()[0];
        Ok(Codebook {
            embed_sum: entries.clone(),
            entries,
            cluster_size: vec![1.0; v],
            decay,
            eps,
        })
    }

    /// Rebuild from saved state.
    pub fn from_state(
        entries: Tensor,
        cluster_size: Vec<f64>,
        embed_sum: Tensor,
        decay: f64,
        eps: f64,
    ) -> Result<Self> {
        let mut cb = Self::from_entries(entries, decay, eps)?;
        if cluster_size.len() != cb.size() || embed_sum.shape() != cb.entries.shape() {
            return Err(Error::shape(
                "Codebook::from_state",
                cb.entries.shape(),
                embed_sum.shape(),
            ));
        }
        cb.cluster_size = cluster_size;
        cb.embed_sum = embed_sum;
        Ok(cb)
    }

    pub fn size(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn entry(&self, j: usize) -> &[f64] {
        let n = self.width();
        &self.entries.data()[j * n..(j + 1) * n]
    }

    pub fn cluster_size(&self) -> &[f64] {
        &self.cluster_size
    }

    pub fn embed_sum(&self) -> &Tensor {
        &self.embed_sum
    }

    pub fn decay(&self) -> f64 {
        self.decay
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Nearest entry per row of `features` (`[.., N]`), ties to the lowest
    /// index. Returns the indices and the selected entries.
    ///
    /// Candidates are screened with the expanded form
    /// `|t|^2 - 2 t.c + |c|^2` through one GEMM; every entry within a
    /// rounding margin of the screened minimum is then rescored with
    /// [`squared_distance`], so the result equals a direct exhaustive scan.
    pub fn quantize(&self, features: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        let n = self.width();
        if features.last_dim() != n {
            return Err(Error::shape("quantize", &[n], &[features.last_dim()]));
        }
        features.check_finite("token features")?;
        let rows = features.rows();
        let v = self.size();
        let entry_norms: Vec<f64> = (0..v)
            .map(|j| self.entry(j).iter().map(|x| x * x).sum())
            .collect();
        let max_entry_norm = entry_norms.iter().copied().fold(0.0, f64::max);
        let mut dots = vec![0.0; rows * v];
        gemm(rows, n, v, features.data(), false, self.entries.data(), true, &mut dots, 0.0);
        let mut indices = Vec::with_capacity(rows);
        let mut quantized = Vec::with_capacity(rows * n);
        for r in 0..rows {
            let t = &features.data()[r * n..(r + 1) * n];
            let t_norm: f64 = t.iter().map(|x| x * x).sum();
            let approx = |j: usize| entry_norms[j] - 2.0 * dots[r * v + j];
            let min = (0..v).map(approx).fold(f64::INFINITY, f64::min);
            let margin = 1e-9 * (t_norm + max_entry_norm + 1.0);
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for j in 0..v {
                if approx(j) <= min + margin {
                    let d = squared_distance(t, self.entry(j));
                    if d < best_d {
                        best_d = d;
                        best = j;
                    }
                }
            }
            indices.push(best);
            quantized.extend_from_slice(self.entry(best));
        }
        Ok((indices, Tensor::new(features.shape().to_vec(), quantized)?))
    }

    /// Rows of the codebook for the given indices, shaped `[len, N]`.
    pub fn lookup(&self, indices: &[usize]) -> Result<Tensor> {
        let v = self.size();
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidArgument(format!(
                "token index {bad} out of range for codebook of size {v}"
            )));
        }
        let data = indices.iter().flat_map(|&i| self.entry(i).to_vec()).collect();
        Tensor::new(vec![indices.len(), self.width()], data)
    }

    /// One EMA step from a mini-batch of token features and their indices:
    ///
    /// ```text
    /// size[j] <- g size[j] + (1 - g) count[j]
    /// sum[j]  <- g sum[j]  + (1 - g) sum_{i: q(i) = j} t_i
    /// entry[j] = sum[j] / ((size[j] + eps) / (total + V eps) * total)
    /// ```
    ///
    /// where `total = sum_j size[j]` (Laplace smoothing of the sizes).
    pub fn ema_update(&mut self, features: &Tensor, indices: &[usize]) -> Result<()> {
        let (v, n) = (self.size(), self.width());
        if features.last_dim() != n || features.rows() != indices.len() {
            return Err(Error::shape(
                "ema_update",
                &[indices.len(), n],
                &[features.rows(), features.last_dim()],
            ));
        }
        let mut counts = vec![0.0; v];
        let mut sums = vec![0.0; v * n];
        for (r, &j) in indices.iter().enumerate() {
            if j >= v {
                return Err(Error::InvalidArgument(format!("index {j} out of range")));
            }
            counts[j] += 1.0;
            for (s, x) in sums[j * n..(j + 1) * n]
                .iter_mut()
                .zip(&features.data()[r * n..(r + 1) * n])
            {
                *s += x;
            }
        }
        let g = self.decay;
        for j in 0..v {
            self.cluster_size[j] = g * self.cluster_size[j] + (1.0 - g) * counts[j];
        }
        for (e, s) in self.embed_sum.data_mut().iter_mut().zip(&sums) {
            *e = g * *e + (1.0 - g) * s;
        }
        self.refresh_entries();
        Ok(())
    }

    /// Laplace-smoothed cluster sizes.
    pub fn smoothed_sizes(&self) -> Vec<f64> {
        let v = self.size() as f64;
        let total: f64 = self.cluster_size.iter().sum();
        self.cluster_size
            .iter()
            .map(|&c| (c + self.eps) / (total + v * self.eps) * total)
            .collect()
    }

    fn refresh_entries(&mut self) {
        let n = self.width();
        let sizes = self.smoothed_sizes();
        for (j, s) in sizes.iter().enumerate() {
            for a in 0..n {
                self.entries.data_mut()[j * n + a] = self.embed_sum.data()[j * n + a] / s;
            }
        }
    }

    /// Reset entry `j` to `value` with unit cluster size. Used to seed the
    /// codebook from encoder outputs and to revive dead entries.
    pub fn reset_entry(&mut self, j: usize, value: &[f64]) {
        let n = self.width();
        self.cluster_size[j] = 1.0;
        self.embed_sum.data_mut()[j * n..(j + 1) * n].copy_from_slice(value);
        self.entries.data_mut()[j * n..(j + 1) * n].copy_from_slice(value);
    }

    /// Seed entries from rows of `features`, sampled with replacement, plus
    /// a small jitter so duplicates separate.
    pub fn seed_from_features(&mut self, features: &Tensor, jitter: f64, rng: &mut Rng) {
        let n = self.width();
        let rows = features.rows();
        for j in 0..self.size() {
            let r = rng.random_range(0..rows);
            let row: Vec<f64> = features.data()[r * n..(r + 1) * n]
                .iter()
                .map(|x| x + jitter * normal(rng))
                .collect();
            self.reset_entry(j, &row);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    fn book(rows: Vec<Vec<f64>>) -> Codebook {
        let n = rows[0].len();
        let v = rows.len();
        Codebook::from_entries(
            Tensor::new(vec![v, n], rows.into_iter().flatten().collect()).unwrap(),
            0.9,
            1e-5,
        )
        .unwrap()
    }

    #[test]
    fn exact_match_selects_entry() {
        let mut rng = rng_from_seed(0);
        let cb = Codebook::new(8, 4, 0.99, 1e-5, &mut rng);
        let t = Tensor::new(vec![1, 4], cb.entry(5).to_vec()).unwrap();
        assert_eq!(cb.quantize(&t).unwrap().0, vec![5]);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let cb = book(vec![vec![5.0, 5.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
        let t = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
        let (idx, q) = cb.quantize(&t).unwrap();
        assert_eq!(idx, vec![1]);
        assert_eq!(q.data(), &[0.0, 1.0]);
    }

    #[test]
    fn lookup_rejects_out_of_range() {
        let cb = book(vec![vec![0.0], vec![1.0]]);
        assert!(cb.lookup(&[2]).is_err());
        assert_eq!(cb.lookup(&[1, 0]).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn unused_entry_keeps_ratio_and_shrinks() {
        let mut cb = book(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![-1.0, 0.5]]);
        let before_size = cb.cluster_size()[2];
        let t = Tensor::new(vec![1, 2], vec![0.9, 2.1]).unwrap();
        cb.ema_update(&t, &[0]).unwrap();
        assert!((cb.cluster_size()[2] - 0.9 * before_size).abs() < 1e-15);
        // Entry 2 moves only through the smoothing factor.
        let s = cb.smoothed_sizes()[2];
        assert!((cb.entry(2)[0] - cb.embed_sum().data()[4] / s).abs() < 1e-15);
    }

    #[test]
    fn repeated_assignment_converges_geometrically() {
        let mut cb = book(vec![vec![0.0, 0.0], vec![10.0, 10.0]]);
        let v = Tensor::new(vec![1, 2], vec![3.0, -2.0]).unwrap();
        let err0 = squared_distance(cb.entry(0), v.data()).sqrt();
        // Laplace smoothing biases the fixed point by about V * eps * |v|.
        let floor = 2.0 * 2.0 * 1e-5 * 13f64.sqrt();
        for t in 1..=300 {
            cb.ema_update(&v, &[0]).unwrap();
            let err = squared_distance(cb.entry(0), v.data()).sqrt();
            assert!(err <= 0.9f64.powi(t) * err0 + floor, "step {t}: {err}");
        }
    }
}
