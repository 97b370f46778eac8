use super::config::TokenizerConfig;
use super::model::{EncoderInput, TokenizerModel};
use crate::error::{Error, Result};
use crate::numerics::{smooth_l1, GradMode, Tensor};
use crate::posedata::{mask_joints, Pose};
use crate::rng::{normal, uniform, Rng};
use rand::Rng as _;

/// One training batch: the full poses to reconstruct and the (possibly
/// masked, context-augmented) encoder input.
#[derive(Clone, Debug)]
pub struct TokenizerBatch {
    pub targets: Tensor,
    pub input: EncoderInput,
}

/// Context vectors built from visible skeleton neighbors: for each joint,
/// the mean of its visible neighbors' coordinates plus Gaussian jitter,
/// followed by a flag that is 1 when any neighbor is visible. Width `D + 1`.
pub fn neighbor_context(
    poses: &[Pose],
    neighbors: &[Vec<usize>],
    jitter: f64,
    rng: &mut Rng,
) -> Result<Tensor> {
    let b = poses.len();
    let k = neighbors.len();
    let d = poses.first().map_or(0, Pose::dim);
    let mut out = Vec::with_capacity(b * k * (d + 1));
    for pose in poses {
        if pose.num_joints() != k {
            return Err(Error::shape("neighbor_context", &[k], &[pose.num_joints()]));
        }
        for nbrs in neighbors {
            let vis: Vec<usize> = nbrs.iter().copied().filter(|&n| pose.vis()[n]).collect();
            if vis.is_empty() {
                out.extend(std::iter::repeat_n(0.0, d + 1));
                continue;
            }
            for a in 0..d {
                let mean = vis.iter().map(|&n| pose.joint(n)[a]).sum::<f64>() / vis.len() as f64;
                out.push(mean + jitter * normal(rng));
            }
            out.push(1.0);
        }
    }
    Tensor::new(vec![b, k, d + 1], out)
}

/// Draw the masks (when masked joint modeling is on) and context vectors
/// for a batch of fully visible poses.
///
/// `neighbors` is the skeleton adjacency; it is required when the config
/// has a context width, which must then equal `D + 1`.
pub fn prepare_batch(
    config: &TokenizerConfig,
    poses: &[Pose],
    neighbors: Option<&[Vec<usize>]>,
    rng: &mut Rng,
) -> Result<TokenizerBatch> {
    let (k, d) = (config.num_joints, config.dim);
    let mut targets = Vec::with_capacity(poses.len() * k * d);
    let mut masked = Vec::with_capacity(poses.len());
    for p in poses {
        let full = p.all_visible();
        targets.extend_from_slice(full.coords());
        if config.mjm {
            let [lo, hi] = config.mask_rate_range;
            let rate = uniform(rng, lo, hi);
            masked.push(mask_joints(&full, rate, rng)?);
        } else {
            masked.push(full);
        }
    }
    let context = if config.context_width > 0 {
        let nbrs = neighbors.ok_or_else(|| {
            Error::Config("context_width > 0 needs a skeleton to build context from".into())
        })?;
        if config.context_width != d + 1 {
            return Err(Error::Config(format!(
                "neighbor context has width {}, config says {}",
                d + 1,
                config.context_width
            )));
        }
        let mut ctx = neighbor_context(&masked, nbrs, config.context_jitter, rng)?;
        let row = k * config.context_width;
        for chunk in ctx.data_mut().chunks_exact_mut(row) {
            if rng.random::<f64>() < config.context_dropout {
                chunk.fill(0.0);
            }
        }
        Some(ctx)
    } else {
        None
    };
    Ok(TokenizerBatch {
        targets: Tensor::new(vec![poses.len(), k, d], targets)?,
        input: EncoderInput::build(config, &masked, context.as_ref())?,
    })
}

/// How the decoder input is formed from the token features `t`.
#[derive(Clone, Debug)]
pub enum QuantMode {
    /// Nearest codebook entries; gradients pass straight through to `t`.
    Nearest,
    /// Indices held fixed and decoder input `t + offsets`. At the point where
    /// `offsets = c - t` this is the straight-through surrogate: same value,
    /// and its exact derivative is the straight-through gradient.
    Frozen { indices: Vec<usize>, offsets: Tensor },
}

impl QuantMode {
    /// Freeze the quantization of `batch` at the model's current state.
    pub fn frozen_at(model: &TokenizerModel, batch: &TokenizerBatch) -> Result<Self> {
        let (t, _) = model.encoder.forward(batch.input.clone())?;
        let (indices, c) = model.codebook.quantize(&t)?;
        let offsets = Tensor::new(
            t.shape().to_vec(),
            c.data().iter().zip(t.data()).map(|(c, t)| c - t).collect(),
        )?;
        Ok(QuantMode::Frozen { indices, offsets })
    }
}

#[derive(Clone, Debug)]
pub struct PctLoss {
    pub loss: f64,
    pub reconstruction: f64,
    pub commitment: f64,
    /// Assigned entry per token, `B * M`.
    pub indices: Vec<usize>,
    /// Token features `[B, M, N]`, for the codebook update.
    pub features: Tensor,
}

/// Reconstruction plus commitment loss; accumulates gradients into the
/// encoder and decoder parameters.
///
/// The reconstruction term is the smooth L1 mean over every joint of every
/// target, hidden joints included. The commitment term is
/// `beta * mean((t - sg[c])^2)` over all token feature elements. The decoder
/// input gradient is copied straight through the quantizer to `t`.
/// Smooth L1 between two `[B, K, D]` pose tensors measured in the
/// tokenizer's standardized units, so its size relative to the
/// commitment and cross-entropy terms does not depend on the coordinate frame.
pub fn standardized_smooth_l1(tokenizer: &TokenizerModel, pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let s = tokenizer.norm().scale;
    let scaled = |t: &Tensor| Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v / s).collect());
    let (l, mut g) = smooth_l1(&scaled(pred)?, &scaled(target)?, None, tokenizer.config.smooth_l1_threshold)?;
    g.data_mut().iter_mut().for_each(|v| *v /= s);
    Ok((l, g))
}

pub fn pct_loss(model: &mut TokenizerModel, batch: &TokenizerBatch, mode: &QuantMode) -> Result<PctLoss> {
    let (t, ecache) = model.encoder.forward(batch.input.clone())?;
    let (indices, c, z) = match mode {
        QuantMode::Nearest => {
            let (idx, c) = model.codebook.quantize(&t)?;
            let z = c.clone();
            (idx, c, z)
        }
        QuantMode::Frozen { indices, offsets } => {
            if offsets.shape() != t.shape() {
                return Err(Error::shape("frozen offsets", t.shape(), offsets.shape()));
            }
            let c = model.codebook.lookup(indices)?.reshape(t.shape())?;
            let mut z = t.clone();
            z.add_assign(offsets)?;
            (indices.clone(), c, z)
        }
    };
    let (ghat, dcache) = model.decoder.forward(&z)?;
    let (rec, dghat) = standardized_smooth_l1(model, &ghat, &batch.targets)?;
    let beta = model.config.beta;
    let numel = t.numel() as f64;
    let mut commit = 0.0;
    let mut dt_commit = Vec::with_capacity(t.numel());
    for (a, b) in t.data().iter().zip(c.data()) {
        let e = a - b;
        commit += e * e;
        dt_commit.push(2.0 * beta * e / numel);
    }
    let commit = beta * commit / numel;
    let mut dt = model.decoder.backward(&dcache, &dghat, GradMode::Accumulate);
    dt.add_assign(&Tensor::new(t.shape().to_vec(), dt_commit)?)?;
    model.encoder.backward(&ecache, &dt);
    let loss = rec + commit;
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("tokenizer loss {loss}")));
    }
    Ok(PctLoss {
        loss,
        reconstruction: rec,
        commitment: commit,
        indices,
        features: t,
    })
}
