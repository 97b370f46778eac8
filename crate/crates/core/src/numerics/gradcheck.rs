//! Central finite-difference gradient checking.

use super::param::Parameters;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this across a whole parameter are compared on an
/// absolute scale.
const ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// `(param name, relative error)` in parameter order.
    pub per_param: Vec<(String, f64)>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_param
            .iter()
            .max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Relative error of a parameter: `max|a - n| / max(max|a|, max|n|, 1e-6)`.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0_f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(ABS_FLOOR, |m, v| m.max(v.abs()));
    diff / scale
}

/// Compare analytic and numeric gradients for every parameter of `model`.
///
/// `loss_fn` must return the scalar loss and accumulate analytic gradients
/// into the parameters (they are zeroed beforehand). It is evaluated twice
/// at the base point; differing results are reported as
/// [`Error::NonDeterministic`].
pub fn grad_check<M, F>(model: &mut M, mut loss_fn: F) -> Result<GradCheckReport>
where
    M: Parameters,
    F: FnMut(&mut M) -> Result<f64>,
{
    model.zero_grad();
    let base = loss_fn(model)?;
    let analytic: Vec<Vec<f64>> = model
        .params()
        .iter()
        .map(|p| p.grad.data().to_vec())
        .collect();
    if loss_fn(model)?.to_bits() != base.to_bits() {
        return Err(Error::NonDeterministic);
    }

    let n_params = analytic.len();
    let mut per_param = Vec::with_capacity(n_params);
    for pi in 0..n_params {
        let len = analytic[pi].len();
        let mut numeric = vec![0.0; len];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = model.params()[pi].value.data()[i];
            model.params_mut()[pi].value.data_mut()[i] = orig + FD_STEP;
            let up = loss_fn(model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig - FD_STEP;
            let down = loss_fn(model)?;
            model.params_mut()[pi].value.data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * FD_STEP);
        }
        let name = model.params()[pi].name.clone();
        per_param.push((name, relative_error(&analytic[pi], &numeric)));
    }
    // Leave the analytic gradients in place for the caller.
    model.zero_grad();
    loss_fn(model)?;
    let max_rel_error = per_param.iter().fold(0.0_f64, |m, (_, e)| m.max(*e));
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
    })
}

/// Central-difference gradient of a scalar function of one tensor.
pub fn numeric_grad(x: &Tensor, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.numel() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        out.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::Linear;
    use crate::numerics::param::GradMode;
    use crate::rng::rng_from_seed;
    use std::cell::Cell;

    fn setup() -> (Linear, Tensor, Tensor) {
        let mut rng = rng_from_seed(11);
        let lin = Linear::new("l", 3, 2, &mut rng);
        let x = Tensor::randn(&[4, 3], 1.0, &mut rng);
        let w = Tensor::randn(&[4, 2], 1.0, &mut rng);
        (lin, x, w)
    }

    #[test]
    fn detects_corrupted_gradient() {
        let (mut lin, x, w) = setup();
        let report = grad_check(&mut lin, |l: &mut Linear| {
            let y = l.forward(&x)?;
            l.backward(&x, &w, GradMode::Accumulate);
            l.weight.grad.data_mut()[0] += 0.5;
            Ok(y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum())
        })
        .unwrap();
        assert!(report.max_rel_error > 1e-4);
        assert_eq!(report.worst().unwrap().0, "l.weight");
    }

    #[test]
    fn rejects_nondeterministic_loss() {
        let (mut lin, x, w) = setup();
        let calls = Cell::new(0u32);
        let err = grad_check(&mut lin, |l: &mut Linear| {
            calls.set(calls.get() + 1);
            let y = l.forward(&x)?;
            l.backward(&x, &w, GradMode::Accumulate);
            let s: f64 = y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum();
            Ok(s + calls.get() as f64 * 1e-9)
        });
        assert!(matches!(err, Err(Error::NonDeterministic)));
    }
}
