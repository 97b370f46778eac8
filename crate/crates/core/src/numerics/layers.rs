use super::param::{GradMode, Param, Parameters};
use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Epsilon added to the variance inside the square root of [`LayerNorm`].
pub const LAYERNORM_EPS: f64 = 1e-6;

/// Affine map along the last axis: `y = x W + b` with `W` stored `[in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Gaussian init with std `1/sqrt(in)`, zero bias.
    pub fn new(name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let std = 1.0 / (in_dim as f64).sqrt();
        Linear {
            weight: Param::new(
                format!("{name}.weight"),
                Tensor::randn(&[in_dim, out_dim], std, rng),
                true,
            ),
            bias: Param::new(format!("{name}.bias"), Tensor::zeros(&[out_dim]), false),
        }
    }

    pub fn from_parts(name: &str, weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || bias.shape() != [weight.shape()[1]] {
            return Err(Error::shape("Linear::from_parts", weight.shape(), bias.shape()));
        }
        Ok(Linear {
            weight: Param::new(format!("{name}.weight"), weight, true),
            bias: Param::new(format!("{name}.bias"), bias, false),
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (din, dout) = (self.in_dim(), self.out_dim());
        if x.last_dim() != din {
            return Err(Error::shape("linear", &[din], &[x.last_dim()]));
        }
        let rows = x.rows();
        let mut out = Vec::with_capacity(rows * dout);
        for _ in 0..rows {
            out.extend_from_slice(self.bias.value.data());
        }
        gemm(rows, din, dout, x.data(), false, self.weight.value.data(), false, &mut out, 1.0);
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = dout;
        Tensor::new(shape, out)
    }

    /// Backward for `forward(x)`; returns `dL/dx`.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, mode: GradMode) -> Tensor {
        let (din, dout) = (self.in_dim(), self.out_dim());
        let rows = x.rows();
        debug_assert_eq!(dy.numel(), rows * dout);
        if mode == GradMode::Accumulate {
            gemm(din, rows, dout, x.data(), true, dy.data(), false, self.weight.grad.data_mut(), 1.0);
            let db = self.bias.grad.data_mut();
            for row in dy.data().chunks_exact(dout) {
                for (g, v) in db.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let mut dx = vec![0.0; rows * din];
        gemm(rows, dout, din, dy.data(), false, self.weight.value.data(), true, &mut dx, 0.0);
        Tensor::new(x.shape().to_vec(), dx).expect("input shape")
    }
}

impl Parameters for Linear {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// Per-row normalization over the last axis with learned scale and shift.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub scale: Param,
    pub shift: Param,
}

#[derive(Clone, Debug)]
pub struct LayerNormCache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        LayerNorm {
            scale: Param::new(format!("{name}.scale"), Tensor::full(&[channels], 1.0), false),
            shift: Param::new(format!("{name}.shift"), Tensor::zeros(&[channels]), false),
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.value.numel()
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        let c = self.channels();
        if x.last_dim() != c {
            return Err(Error::shape("layernorm", &[c], &[x.last_dim()]));
        }
        let rows = x.rows();
        let mut xhat = vec![0.0; x.numel()];
        let mut y = vec![0.0; x.numel()];
        let mut inv_std = Vec::with_capacity(rows);
        let (g, b) = (self.scale.value.data(), self.shift.value.data());
        for r in 0..rows {
            let row = &x.data()[r * c..(r + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LAYERNORM_EPS).sqrt();
            inv_std.push(inv);
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[r * c + j] = h;
                y[r * c + j] = h * g[j] + b[j];
            }
        }
        let shape = x.shape().to_vec();
        Ok((
            Tensor::new(shape.clone(), y)?,
            LayerNormCache {
                xhat: Tensor::new(shape, xhat)?,
                inv_std,
            },
        ))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Tensor, mode: GradMode) -> Tensor {
        let c = self.channels();
        let rows = cache.inv_std.len();
        let xhat = cache.xhat.data();
        if mode == GradMode::Accumulate {
            let dg = self.scale.grad.data_mut();
            for r in 0..rows {
                for j in 0..c {
                    dg[j] += dy.data()[r * c + j] * xhat[r * c + j];
                }
            }
            let db = self.shift.grad.data_mut();
            for row in dy.data().chunks_exact(c) {
                for (g, v) in db.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        let g = self.scale.value.data();
        let mut dx = vec![0.0; rows * c];
        let cf = c as f64;
        for r in 0..rows {
            let dyr = &dy.data()[r * c..(r + 1) * c];
            let xh = &xhat[r * c..(r + 1) * c];
            let mut sum = 0.0;
            let mut sum_x = 0.0;
            for j in 0..c {
                let d = dyr[j] * g[j];
                sum += d;
                sum_x += d * xh[j];
            }
            let inv = cache.inv_std[r];
            for j in 0..c {
                let d = dyr[j] * g[j];
                dx[r * c + j] = inv / cf * (cf * d - sum - xh[j] * sum_x);
            }
        }
        Tensor::new(dy.shape().to_vec(), dx).expect("dy shape")
    }
}

impl Parameters for LayerNorm {
    fn params(&self) -> Vec<&Param> {
        vec![&self.scale, &self.shift]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.scale, &mut self.shift]
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`; saturates to +-1 beyond |u| = 20.
#[inline]
fn tanh_exp(u: f64) -> f64 {
    if u > 20.0 {
        1.0
    } else if u < -20.0 {
        -1.0
    } else {
        let e = (2.0 * u).exp();
        (e - 1.0) / (e + 1.0)
    }
}

#[inline]
fn gelu_tanh(x: f64) -> f64 {
    tanh_exp(GELU_C * (x + GELU_A * x * x * x))
}

/// GELU, tanh approximation:
/// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`, with
/// `tanh(u) = (e^{2u} - 1) / (e^{2u} + 1)`.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + gelu_tanh(x))
}

#[inline]
fn gelu_grad_from_tanh(x: f64, t: f64) -> f64 {
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

pub fn gelu_grad_scalar(x: f64) -> f64 {
    gelu_grad_from_tanh(x, gelu_tanh(x))
}

pub fn gelu(x: &Tensor) -> Tensor {
    gelu_cached(x).0
}

/// GELU output together with the inner `tanh` values, for
/// [`gelu_backward_cached`].
pub fn gelu_cached(x: &Tensor) -> (Tensor, Tensor) {
    let t: Vec<f64> = x.data().iter().map(|&v| gelu_tanh(v)).collect();
    let y = x.data().iter().zip(&t).map(|(&v, &t)| 0.5 * v * (1.0 + t)).collect();
    let shape = x.shape().to_vec();
    (
        Tensor::new(shape.clone(), y).expect("same shape"),
        Tensor::new(shape, t).expect("same shape"),
    )
}

pub fn gelu_backward(x: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &d)| gelu_grad_scalar(v) * d)
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

pub fn gelu_backward_cached(x: &Tensor, tanh: &Tensor, dy: &Tensor) -> Tensor {
    let data = x
        .data()
        .iter()
        .zip(tanh.data())
        .zip(dy.data())
        .map(|((&v, &t), &d)| gelu_grad_from_tanh(v, t) * d)
        .collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Row-wise softmax over the last axis with max subtraction.
pub fn softmax(x: &Tensor) -> Tensor {
    let c = x.last_dim();
    let mut out = x.data().to_vec();
    for row in out.chunks_exact_mut(c) {
        softmax_in_place(row);
    }
    Tensor::new(x.shape().to_vec(), out).expect("same shape")
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Backward of [`softmax`] given its output `y`.
pub fn softmax_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let c = y.last_dim();
    let mut dx = vec![0.0; y.numel()];
    for ((yr, dyr), dxr) in y
        .data()
        .chunks_exact(c)
        .zip(dy.data().chunks_exact(c))
        .zip(dx.chunks_exact_mut(c))
    {
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for j in 0..c {
            dxr[j] = yr[j] * (dyr[j] - dot);
        }
    }
    Tensor::new(y.shape().to_vec(), dx).expect("same shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check, numeric_grad};
    use crate::rng::rng_from_seed;

    fn weighted_sum(y: &Tensor, w: &Tensor) -> f64 {
        y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn linear_identity_and_scalar_affine() {
        let mut rng = rng_from_seed(0);
        let mut lin = Linear::new("l", 2, 2, &mut rng);
        lin.weight.value = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        lin.bias.value = Tensor::zeros(&[2]);
        let y = lin.forward(&Tensor::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 0.0]);

        let lin = Linear::from_parts(
            "s",
            Tensor::new(vec![1, 1], vec![3.0]).unwrap(),
            Tensor::from_vec(vec![1.0]),
        )
        .unwrap();
        let y = lin.forward(&Tensor::from_vec(vec![2.0])).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn linear_rejects_wrong_width() {
        let mut rng = rng_from_seed(0);
        let lin = Linear::new("l", 3, 2, &mut rng);
        assert!(matches!(
            lin.forward(&Tensor::zeros(&[4, 2])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(1);
        let x = Tensor::randn(&[3, 4], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 5], 1.0, &mut rng);
        let mut lin = Linear::new("l", 4, 5, &mut rng);
        lin.bias.value = Tensor::randn(&[5], 1.0, &mut rng);
        let report = grad_check(&mut lin, |l: &mut Linear| {
            let y = l.forward(&x)?;
            l.backward(&x, &w, GradMode::Accumulate);
            Ok(weighted_sum(&y, &w))
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");

        // Input gradient.
        let dx = lin.backward(&x, &w, GradMode::InputOnly);
        let num = numeric_grad(&x, |xp| weighted_sum(&lin.forward(xp).unwrap(), &w));
        for (a, n) in dx.data().iter().zip(num.data()) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(1.0));
        }
    }

    #[test]
    fn layernorm_constant_row_and_unit_moments() {
        let ln = LayerNorm::new("n", 3);
        let (y, _) = ln.forward(&Tensor::from_vec(vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.0]);

        let ln = LayerNorm::new("n", 2);
        let (y, _) = ln.forward(&Tensor::from_vec(vec![1.0, -1.0])).unwrap();
        let mean = (y.data()[0] + y.data()[1]) / 2.0;
        let m2 = (y.data()[0].powi(2) + y.data()[1].powi(2)) / 2.0;
        assert!(mean.abs() < 1e-6);
        assert!((m2 - 1.0).abs() < 1e-6);
    }

    #[test]
    fn layernorm_gradients_match_finite_differences() {
        let mut rng = rng_from_seed(2);
        let x = Tensor::randn(&[2, 8], 1.0, &mut rng);
        let w = Tensor::randn(&[2, 8], 1.0, &mut rng);
        let mut ln = LayerNorm::new("n", 8);
        ln.scale.value = Tensor::randn(&[8], 1.0, &mut rng);
        ln.shift.value = Tensor::randn(&[8], 1.0, &mut rng);
        let report = grad_check(&mut ln, |l: &mut LayerNorm| {
            let (y, cache) = l.forward(&x)?;
            l.backward(&cache, &w, GradMode::Accumulate);
            Ok(weighted_sum(&y, &w))
        })
        .unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");

        let (_, cache) = ln.forward(&x).unwrap();
        let dx = ln.backward(&cache, &w, GradMode::InputOnly);
        let num = numeric_grad(&x, |xp| weighted_sum(&ln.forward(xp).unwrap().0, &w));
        for (a, n) in dx.data().iter().zip(num.data()) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
        }
    }

    #[test]
    fn gelu_fixed_point_asymptote_and_monotone() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        let mut prev = gelu_scalar(0.0);
        for i in 1..1000 {
            let v = gelu_scalar(i as f64 * 0.01);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(3);
        let x = Tensor::randn(&[100], 2.0, &mut rng);
        let ones = Tensor::full(&[100], 1.0);
        let dx = gelu_backward(&x, &ones);
        let h = 1e-5;
        for (i, &v) in x.data().iter().enumerate() {
            let n = (gelu_scalar(v + h) - gelu_scalar(v - h)) / (2.0 * h);
            let a = dx.data()[i];
            assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
        }
    }

    #[test]
    fn softmax_uniform_and_stable() {
        let y = softmax(&Tensor::from_vec(vec![0.3; 4]));
        for v in y.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
        let y = softmax(&Tensor::from_vec(vec![1000.0, 0.0]));
        assert_eq!(y.data()[0], 1.0);
        assert!(y.data()[1] < 1e-300);
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(4);
        let x = Tensor::randn(&[3, 6], 1.5, &mut rng);
        let w = Tensor::randn(&[3, 6], 1.0, &mut rng);
        let y = softmax(&x);
        let dx = softmax_backward(&y, &w);
        let num = numeric_grad(&x, |xp| weighted_sum(&softmax(xp), &w));
        for (a, n) in dx.data().iter().zip(num.data()) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
        }
    }
}
