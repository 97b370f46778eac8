use super::config::{TokenizerConfig, TrainConfig};
use super::loss::{pct_loss, prepare_batch, QuantMode};
use super::model::{CoordNorm, TokenizerModel};
use crate::error::{Error, Result};
use crate::evaluation::metrics::{pck, usage_stats};
use crate::numerics::{CosineSchedule, OptimState, Parameters};
use crate::posedata::{Pose, Skeleton};
use crate::rng::{derive_seed, rng_from_seed};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

/// Poses of the training set used for the per-epoch reconstruction metrics.
const MONITOR_POSES: usize = 512;
const MONITOR_PCK: f64 = 0.05;
/// Jitter added when seeding entries from encoder outputs.
const SEED_JITTER: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub reconstruction: f64,
    pub commitment: f64,
    /// PCK@0.05 of the hard-quantized reconstruction of the monitor poses.
    pub recon_pck: f64,
    pub perplexity: f64,
    pub used_entries: usize,
    /// Entries re-seeded at the end of the epoch.
    pub reseeded: usize,
    pub lr: f64,
}

/// Stage-I training. All randomness (init, shuffling, masks, context
/// jitter, re-seeding) derives from `seed`, so identical inputs give
/// bit-identical models and logs.
///
/// `skeleton` supplies the neighbor lists for context vectors and may be
/// `None` when the config has no context.
pub fn train_tokenizer(
    config: &TokenizerConfig,
    train: &TrainConfig,
    poses: &[Pose],
    skeleton: Option<&Skeleton>,
    seed: u64,
) -> Result<(TokenizerModel, Vec<EpochLog>)> {
    config.validate()?;
    train.validate()?;
    if poses.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if let Some(s) = skeleton {
        if s.num_joints() != config.num_joints {
            return Err(Error::Config(format!(
                "skeleton has {} joints, config {}",
                s.num_joints(),
                config.num_joints
            )));
        }
    }
    let neighbors = skeleton.map(Skeleton::neighbors);
    let mut init_rng = rng_from_seed(derive_seed(seed, 1));
    let mut order_rng = rng_from_seed(derive_seed(seed, 2));
    let mut batch_rng = rng_from_seed(derive_seed(seed, 3));
    let mut reseed_rng = rng_from_seed(derive_seed(seed, 4));

    let mut model = TokenizerModel::new(config.clone(), &mut init_rng)?;
    model.set_norm(CoordNorm::fit(poses)?)?;
    let bs = train.batch_size.min(poses.len());
    let steps_per_epoch = poses.len().div_ceil(bs);
    let schedule = CosineSchedule {
        base_lr: train.lr,
        warmup: train.warmup_steps,
        total: (steps_per_epoch * train.epochs) as u64,
    };
    let mut opt = OptimState::new(train.adamw(), schedule, &model.params());

    let mut order: Vec<usize> = (0..poses.len()).collect();
    let monitor = &poses[..poses.len().min(MONITOR_POSES)];
    let v = config.codebook_size;
    let mut logs = Vec::with_capacity(train.epochs);
    let mut seeded = false;

    for epoch in 1..=train.epochs {
        order.shuffle(&mut order_rng);
        let mut peak_size = vec![0.0_f64; v];
        let (mut sum_loss, mut sum_rec, mut sum_commit) = (0.0, 0.0, 0.0);
        let mut last_features = None;
        let mut lr = 0.0;
        for (step, chunk) in order.chunks(bs).enumerate() {
            let batch_poses: Vec<Pose> = chunk.iter().map(|&i| poses[i].clone()).collect();
            let batch = prepare_batch(config, &batch_poses, neighbors.as_deref(), &mut batch_rng)?;
            if !seeded {
                let (t, _) = model.encoder.forward(batch.input.clone())?;
                let n = config.token_dim;
                let rows = t.clone().reshape(&[t.numel() / n, n])?;
                model.codebook.seed_from_features(&rows, SEED_JITTER, &mut reseed_rng);
                seeded = true;
            }
            model.zero_grad();
            let out = match pct_loss(&mut model, &batch, &QuantMode::Nearest) {
                Ok(o) => o,
                Err(Error::NonFinite(msg)) => {
                    return Err(Error::Diverged(format!("epoch {epoch} step {step}: {msg}")))
                }
                Err(e) => return Err(e),
            };
            lr = opt.step(&mut model.params_mut())?;
            for p in model.params() {
                if p.value.data().iter().any(|x| !x.is_finite()) {
                    return Err(Error::Diverged(format!(
                        "epoch {epoch} step {step}: non-finite parameter {}",
                        p.name
                    )));
                }
            }
            let n = config.token_dim;
            let rows = out.features.reshape(&[out.indices.len(), n])?;
            model.codebook.ema_update(&rows, &out.indices)?;
            for (p, &s) in peak_size.iter_mut().zip(model.codebook.cluster_size()) {
                *p = p.max(s);
            }
            sum_loss += out.loss;
            sum_rec += out.reconstruction;
            sum_commit += out.commitment;
            last_features = Some(rows);
        }
        let mut reseeded = 0;
        if epoch < train.epochs {
            let rows = last_features.expect("at least one batch");
            let n = config.token_dim;
            for j in 0..v {
                if peak_size[j] < config.dead_code_threshold {
                    let r = reseed_rng.random_range(0..rows.rows());
                    let value = rows.data()[r * n..(r + 1) * n].to_vec();
                    model.codebook.reset_entry(j, &value);
                    reseeded += 1;
                }
            }
        }
        let recon = model.reconstruct_batch(monitor)?;
        let tokens: Vec<usize> = model
            .tokenize_batch(monitor)?
            .into_iter()
            .flat_map(|t| t.0)
            .collect();
        let usage = usage_stats(&tokens, v)?;
        let steps = steps_per_epoch as f64;
        logs.push(EpochLog {
            epoch,
            loss: sum_loss / steps,
            reconstruction: sum_rec / steps,
            commitment: sum_commit / steps,
            recon_pck: pck(&recon, monitor, MONITOR_PCK, None)?,
            perplexity: usage.perplexity,
            used_entries: v - usage.dead_entries,
            reseeded,
            lr,
        });
    }
    Ok((model, logs))
}
