//! Comparison heads that share the token head's featurizer but predict
//! coordinates directly or as per-axis bin distributions.

use super::config::EstimatorConfig;
use super::head::{Featurizer, FeaturizerCache};
use super::observation::{observation_tensor, Observation};
use super::train::{fit, target_tensor, PosePredictor, StageTwoLog, StepStats};
use crate::error::{Error, Result};
use crate::numerics::{cross_entropy, smooth_l1, softmax, GradMode, Linear, Param, Parameters, Tensor, SMOOTH_L1_THRESHOLD};
use crate::posedata::Pose;
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::tokenizer::{CoordNorm, TrainConfig};

/// Coordinate regression: featurizer and a per-joint linear output.
#[derive(Clone, Debug)]
pub struct RegressionModel {
    pub config: EstimatorConfig,
    pub featurizer: Featurizer,
    pub out: Linear,
}

impl RegressionModel {
    pub fn new(config: EstimatorConfig, k: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        Ok(RegressionModel {
            featurizer: Featurizer::new(&config, k, d, rng),
            out: Linear::new("regression.out", config.obs_hidden, d, rng),
            config,
        })
    }

    fn dims(&self) -> (usize, usize) {
        (self.featurizer.num_joints(), self.out.out_dim())
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, FeaturizerCache, Tensor)> {
        let (f, cache) = self.featurizer.forward(x)?;
        let mut y = self.out.forward(&f)?;
        self.featurizer.norm.restore(&mut y);
        y.check_finite("regressed pose")?;
        Ok((y, cache, f))
    }

    /// Smooth L1 over all joints, hidden ones included.
    pub fn loss(&mut self, x: &Tensor, targets: &Tensor) -> Result<f64> {
        let (y, cache, f) = self.forward(x)?;
        let (l, mut dy) = smooth_l1(&y, targets, None, SMOOTH_L1_THRESHOLD)?;
        let s = self.featurizer.norm.scale;
        dy.data_mut().iter_mut().for_each(|g| *g *= s);
        let df = self.out.backward(&f, &dy, GradMode::Accumulate);
        self.featurizer.backward(&cache, df);
        Ok(l)
    }
}

impl PosePredictor for RegressionModel {
    fn predict_poses(&self, obs: &[Observation]) -> Result<Vec<Pose>> {
        let (k, d) = self.dims();
        let x = observation_tensor(obs, k, d, self.config.context_width)?;
        let (y, _, _) = self.forward(&x)?;
        y.data()
            .chunks_exact(k * d)
            .map(|c| Pose::visible(k, d, c.to_vec()))
            .collect()
    }
}

impl Parameters for RegressionModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.featurizer.params();
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.featurizer.params_mut();
        v.extend(self.out.params_mut());
        v
    }
}

/// Discrete bins: each joint's each axis is classified into `B` uniform bins
/// over `[0, 1]` and decoded as the expectation of the bin centers.
#[derive(Clone, Debug)]
pub struct BinsModel {
    pub config: EstimatorConfig,
    pub featurizer: Featurizer,
    pub out: Linear,
    dim: usize,
}

/// Bin of a coordinate; values outside `[0, 1]` land in the edge bins.
pub fn bin_index(x: f64, bins: usize) -> usize {
    ((x * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

impl BinsModel {
    pub fn new(config: EstimatorConfig, k: usize, d: usize, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        if config.bins < 2 {
            return Err(Error::Config("estimator: bins must be at least 2".into()));
        }
        Ok(BinsModel {
            featurizer: Featurizer::new(&config, k, d, rng),
            out: Linear::new("bins.out", config.obs_hidden, d * config.bins, rng),
            config,
            dim: d,
        })
    }

    /// Logits `[B * K * D, bins]`.
    fn forward(&self, x: &Tensor) -> Result<(Tensor, FeaturizerCache, Tensor)> {
        let (f, cache) = self.featurizer.forward(x)?;
        let y = self.out.forward(&f)?;
        let rows = y.numel() / self.config.bins;
        let logits = y.reshape(&[rows, self.config.bins])?;
        logits.check_finite("bin logits")?;
        Ok((logits, cache, f))
    }

    /// Cross-entropy against the bins of the target coordinates.
    pub fn loss(&mut self, x: &Tensor, targets: &Tensor) -> Result<f64> {
        let (logits, cache, f) = self.forward(x)?;
        let labels: Vec<usize> = targets.data().iter().map(|&t| bin_index(t, self.config.bins)).collect();
        let (l, dl) = cross_entropy(&logits, &labels)?;
        let mut shape = f.shape().to_vec();
        *shape.last_mut().expect("rank 3") = self.dim * self.config.bins;
        let df = self.out.backward(&f, &dl.reshape(&shape)?, GradMode::Accumulate);
        self.featurizer.backward(&cache, df);
        Ok(l)
    }
}

impl PosePredictor for BinsModel {
    fn predict_poses(&self, obs: &[Observation]) -> Result<Vec<Pose>> {
        let (k, d, nb) = (self.featurizer.num_joints(), self.dim, self.config.bins);
        let x = observation_tensor(obs, k, d, self.config.context_width)?;
        let (logits, _, _) = self.forward(&x)?;
        let coords: Vec<f64> = softmax(&logits)
            .data()
            .chunks_exact(nb)
            .map(|p| p.iter().enumerate().map(|(b, q)| q * (b as f64 + 0.5) / nb as f64).sum())
            .collect();
        coords
            .chunks_exact(k * d)
            .map(|c| Pose::visible(k, d, c.to_vec()))
            .collect()
    }
}

impl Parameters for BinsModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.featurizer.params();
        v.extend(self.out.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.featurizer.params_mut();
        v.extend(self.out.params_mut());
        v
    }
}

fn first_shape(poses: &[Pose]) -> Result<(usize, usize)> {
    poses
        .first()
        .map(|p| (p.num_joints(), p.dim()))
        .ok_or_else(|| Error::InvalidArgument("empty training set".into()))
}

pub fn train_regression(
    config: &EstimatorConfig,
    train: &TrainConfig,
    poses: &[Pose],
    seed: u64,
) -> Result<(RegressionModel, Vec<StageTwoLog>)> {
    let (k, d) = first_shape(poses)?;
    let mut model = RegressionModel::new(config.clone(), k, d, &mut rng_from_seed(derive_seed(seed, 11)))?;
    model.featurizer.norm = CoordNorm::fit(poses)?;
    let cw = config.context_width;
    let logs = fit(&mut model, config, train, poses, seed, |m, idx, obs| {
        let x = observation_tensor(obs, k, d, cw)?;
        let loss = m.loss(&x, &target_tensor(poses, idx)?)?;
        Ok(StepStats {
            loss,
            reconstruction: Some(loss),
            ..StepStats::default()
        })
    })?;
    Ok((model, logs))
}

pub fn train_bins(
    config: &EstimatorConfig,
    train: &TrainConfig,
    poses: &[Pose],
    seed: u64,
) -> Result<(BinsModel, Vec<StageTwoLog>)> {
    let (k, d) = first_shape(poses)?;
    let mut model = BinsModel::new(config.clone(), k, d, &mut rng_from_seed(derive_seed(seed, 11)))?;
    model.featurizer.norm = CoordNorm::fit(poses)?;
    let cw = config.context_width;
    let logs = fit(&mut model, config, train, poses, seed, |m, idx, obs| {
        let x = observation_tensor(obs, k, d, cw)?;
        let loss = m.loss(&x, &target_tensor(poses, idx)?)?;
        Ok(StepStats {
            loss,
            cross_entropy: Some(loss),
            ..StepStats::default()
        })
    })?;
    Ok((model, logs))
}
