use super::layers::softmax_in_place;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Default transition point of [`smooth_l1`].
pub const SMOOTH_L1_THRESHOLD: f64 = 1.0;

/// Smooth L1 with transition at `threshold`: per element `e = pred - target`,
/// `0.5 e^2 / threshold` when `|e| < threshold`, else `|e| - 0.5 threshold`.
/// With the default threshold of 1 this is `0.5 e^2` / `|e| - 0.5`.
///
/// Returns the weighted mean over elements and its gradient wrt `pred`.
/// `weights` selects elements (0 drops an element); an all-zero weight
/// vector is a degenerate input.
pub fn smooth_l1(
    pred: &Tensor,
    target: &Tensor,
    weights: Option<&Tensor>,
    threshold: f64,
) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("smooth_l1", pred.shape(), target.shape()));
    }
    if let Some(w) = weights {
        if w.shape() != pred.shape() {
            return Err(Error::shape("smooth_l1 weights", pred.shape(), w.shape()));
        }
    }
    let weight_at = |i: usize| weights.map_or(1.0, |w| w.data()[i]);
    let total: f64 = (0..pred.numel()).map(weight_at).sum();
    if total <= 0.0 {
        return Err(Error::Degenerate("smooth_l1 mask selects no elements".into()));
    }
    let mut loss = 0.0;
    let mut grad = vec![0.0; pred.numel()];
    for (i, (p, t)) in pred.data().iter().zip(target.data()).enumerate() {
        let w = weight_at(i);
        if w == 0.0 {
            continue;
        }
        let e = p - t;
        let (l, d) = if e.abs() < threshold {
            (0.5 * e * e / threshold, e / threshold)
        } else {
            (e.abs() - 0.5 * threshold, e.signum())
        };
        loss += w * l;
        grad[i] = w * d / total;
    }
    Ok((loss / total, Tensor::new(pred.shape().to_vec(), grad)?))
}

/// Mean over rows of `-log softmax(logits)[label]`, with its gradient.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let v = logits.last_dim();
    let rows = logits.rows();
    if labels.len() != rows {
        return Err(Error::shape("cross_entropy labels", &[rows], &[labels.len()]));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= v) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} out of range for {v} classes"
        )));
    }
    let mut grad = logits.data().to_vec();
    let mut loss = 0.0;
    for (row, (g, &label)) in logits
        .data()
        .chunks_exact(v)
        .zip(grad.chunks_exact_mut(v).zip(labels))
    {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[label];
        softmax_in_place(g);
        g[label] -= 1.0;
        for x in g.iter_mut() {
            *x /= rows as f64;
        }
    }
    Ok((loss / rows as f64, Tensor::new(logits.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::numeric_grad;
    use crate::rng::rng_from_seed;

    #[test]
    fn smooth_l1_closed_forms() {
        let z = Tensor::from_vec(vec![0.3, -0.2]);
        assert_eq!(smooth_l1(&z, &z, None, 1.0).unwrap().0, 0.0);
        let t = Tensor::from_vec(vec![0.0]);
        let l = smooth_l1(&Tensor::from_vec(vec![0.5]), &t, None, 1.0).unwrap().0;
        assert!((l - 0.125).abs() < 1e-15);
        let l = smooth_l1(&Tensor::from_vec(vec![2.0]), &t, None, 1.0).unwrap().0;
        assert!((l - 1.5).abs() < 1e-15);
    }

    #[test]
    fn smooth_l1_mask() {
        let p = Tensor::from_vec(vec![0.5, 9.0]);
        let t = Tensor::from_vec(vec![0.0, 0.0]);
        let w = Tensor::from_vec(vec![1.0, 0.0]);
        let (l, g) = smooth_l1(&p, &t, Some(&w), 1.0).unwrap();
        assert!((l - 0.125).abs() < 1e-15);
        assert_eq!(g.data()[1], 0.0);
        let zero = Tensor::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            smooth_l1(&p, &t, Some(&zero), 1.0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn smooth_l1_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(7);
        // Residuals kept away from the |e| = 1 kink.
        let t = Tensor::randn(&[4, 5], 1.0, &mut rng);
        let mut p = t.clone();
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            *v += if i % 2 == 0 { 0.4 } else { -2.3 } * (1.0 + 0.01 * i as f64);
        }
        let (_, g) = smooth_l1(&p, &t, None, 1.0).unwrap();
        let num = numeric_grad(&p, |pp| smooth_l1(pp, &t, None, 1.0).unwrap().0);
        for (a, n) in g.data().iter().zip(num.data()) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()), "{a} vs {n}");
        }
    }

    #[test]
    fn cross_entropy_limits() {
        let mut logits = vec![0.0; 10];
        logits[3] = 50.0;
        let (l, _) = cross_entropy(&Tensor::new(vec![1, 10], logits).unwrap(), &[3]).unwrap();
        assert!(l <= 1e-9 && l >= 0.0);
        let uniform = Tensor::zeros(&[2, 1024]);
        let (l, _) = cross_entropy(&uniform, &[0, 1023]).unwrap();
        assert!((l - 1024f64.ln()).abs() < 1e-12);
        assert!((l - 6.9315).abs() < 1e-4);
        assert!(cross_entropy(&uniform, &[0, 1024]).is_err());
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let mut rng = rng_from_seed(8);
        let x = Tensor::randn(&[3, 7], 2.0, &mut rng);
        let labels = [1, 6, 0];
        let (_, g) = cross_entropy(&x, &labels).unwrap();
        let num = numeric_grad(&x, |xp| cross_entropy(xp, &labels).unwrap().0);
        for (a, n) in g.data().iter().zip(num.data()) {
            assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1e-3), "{a} vs {n}");
        }
    }
}
