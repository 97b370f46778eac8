use super::config::EstimatorConfig;
use super::model::{estimator_loss, gt_labels, EstimatorModel};
use super::observation::{observation_tensor, Observation};
use crate::error::{Error, Result};
use crate::evaluation::metrics::{occluded_pck, pck};
use crate::numerics::{CosineSchedule, OptimState, Parameters, Tensor};
use crate::posedata::Pose;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tokenizer::{TokenizerModel, TrainConfig};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

const MONITOR_POSES: usize = 512;
/// Threshold of the headline PCK.
pub const PCK_THRESHOLD: f64 = 0.05;
/// Threshold of the occluded-joint PCK; hidden joints are inferred, not
/// observed, so a looser radius than the visible-joint metric.
pub const OCCLUDED_PCK_THRESHOLD: f64 = 0.1;

/// Anything that maps observations to poses.
pub trait PosePredictor {
    fn predict_poses(&self, obs: &[Observation]) -> Result<Vec<Pose>>;
}

impl PosePredictor for EstimatorModel {
    fn predict_poses(&self, obs: &[Observation]) -> Result<Vec<Pose>> {
        self.predict_batch(obs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageTwoLog {
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: Option<f64>,
    pub reconstruction: Option<f64>,
    pub token_accuracy: Option<f64>,
    /// PCK@0.05 on monitor observations drawn from the training distribution.
    pub pck: f64,
    /// PCK@0.1 over the hidden joints of the same observations.
    pub occluded_pck: Option<f64>,
    pub lr: f64,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct StepStats {
    pub loss: f64,
    pub cross_entropy: Option<f64>,
    pub reconstruction: Option<f64>,
    pub token_accuracy: Option<f64>,
}

/// Target poses of a batch as `[B, K, D]`.
pub(crate) fn target_tensor(poses: &[Pose], idx: &[usize]) -> Result<Tensor> {
    let p0 = &poses[idx[0]];
    let data = idx.iter().flat_map(|&i| poses[i].coords().to_vec()).collect();
    Tensor::new(vec![idx.len(), p0.num_joints(), p0.dim()], data)
}

fn mean_opt(xs: &[Option<f64>]) -> Option<f64> {
    let v: Vec<f64> = xs.iter().flatten().copied().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Shared Stage-II loop: observations are sampled on the fly from the
/// config's noise and mask range, the step closure computes the loss and
/// accumulates gradients, AdamW updates.
pub(crate) fn fit<M, F>(
    model: &mut M,
    config: &EstimatorConfig,
    train: &TrainConfig,
    poses: &[Pose],
    seed: u64,
    mut step: F,
) -> Result<Vec<StageTwoLog>>
where
    M: Parameters + PosePredictor,
    F: FnMut(&mut M, &[usize], &[Observation]) -> Result<StepStats>,
{
    train.validate()?;
    if poses.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    let mut order_rng = rng_from_seed(derive_seed(seed, 12));
    let mut obs_rng = rng_from_seed(derive_seed(seed, 13));
    let mut monitor_rng = rng_from_seed(derive_seed(seed, 14));
    let monitor = &poses[..poses.len().min(MONITOR_POSES)];
    let monitor_obs = monitor
        .iter()
        .map(|p| Observation::sample_in_range(p, config.noise_std, config.mask_rate_range, &mut monitor_rng))
        .collect::<Result<Vec<_>>>()?;
    let monitor_vis: Vec<Vec<bool>> = monitor_obs.iter().map(|o| o.vis().to_vec()).collect();

    let bs = train.batch_size.min(poses.len());
    let steps_per_epoch = poses.len().div_ceil(bs);
    let schedule = CosineSchedule {
        base_lr: train.lr,
        warmup: train.warmup_steps,
        total: (steps_per_epoch * train.epochs) as u64,
    };
    let mut opt = OptimState::new(train.adamw(), schedule, &model.params());
    let mut order: Vec<usize> = (0..poses.len()).collect();
    let mut logs = Vec::with_capacity(train.epochs);
    for epoch in 1..=train.epochs {
        order.shuffle(&mut order_rng);
        let mut stats = Vec::with_capacity(steps_per_epoch);
        let mut lr = 0.0;
        for (s, idx) in order.chunks(bs).enumerate() {
            let obs = idx
                .iter()
                .map(|&i| {
                    Observation::sample_in_range(&poses[i], config.noise_std, config.mask_rate_range, &mut obs_rng)
                })
                .collect::<Result<Vec<_>>>()?;
            model.zero_grad();
            let st = match step(model, idx, &obs) {
                Ok(st) => st,
                Err(Error::NonFinite(m)) => return Err(Error::Diverged(format!("epoch {epoch} step {s}: {m}"))),
                Err(e) => return Err(e),
            };
            lr = opt.step(&mut model.params_mut())?;
            if let Some(p) = model.params().iter().find(|p| p.value.data().iter().any(|x| !x.is_finite())) {
                return Err(Error::Diverged(format!("epoch {epoch} step {s}: non-finite {}", p.name)));
            }
            stats.push(st);
        }
        let preds = model.predict_poses(&monitor_obs)?;
        let n = stats.len() as f64;
        let col = |f: fn(&StepStats) -> Option<f64>| mean_opt(&stats.iter().map(f).collect::<Vec<_>>());
        logs.push(StageTwoLog {
            epoch,
            loss: stats.iter().map(|s| s.loss).sum::<f64>() / n,
            cross_entropy: col(|s| s.cross_entropy),
            reconstruction: col(|s| s.reconstruction),
            token_accuracy: col(|s| s.token_accuracy),
            pck: pck(&preds, monitor, PCK_THRESHOLD, None)?,
            occluded_pck: occluded_pck(&preds, monitor, &monitor_vis, OCCLUDED_PCK_THRESHOLD)?,
            lr,
        });
    }
    Ok(logs)
}

/// Stage-II training against a frozen tokenizer. Labels are the tokenizer's
/// indices of the clean poses, computed once.
pub fn train_estimator(
    config: &EstimatorConfig,
    train: &TrainConfig,
    tokenizer: &TokenizerModel,
    poses: &[Pose],
    seed: u64,
) -> Result<(EstimatorModel, Vec<StageTwoLog>)> {
    let mut init_rng = rng_from_seed(derive_seed(seed, 11));
    let mut model = EstimatorModel::new(config.clone(), tokenizer.clone(), &mut init_rng)?;
    let labels = gt_labels(tokenizer, poses)?;
    let (k, d) = (tokenizer.config.num_joints, tokenizer.config.dim);
    let cw = config.context_width;
    let logs = fit(&mut model, config, train, poses, seed, |m, idx, obs| {
        let input = observation_tensor(obs, k, d, cw)?;
        let lab: Vec<usize> = idx.iter().flat_map(|&i| labels[i].0.iter().copied()).collect();
        let targets = target_tensor(poses, idx)?;
        let l = estimator_loss(m, &input, &lab, &targets)?;
        Ok(StepStats {
            loss: l.loss,
            cross_entropy: Some(l.cross_entropy),
            reconstruction: Some(l.reconstruction),
            token_accuracy: Some(l.token_accuracy),
        })
    })?;
    Ok((model, logs))
}
