use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Architecture and loss settings of the tokenizer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    /// K
    pub num_joints: usize,
    /// D
    pub dim: usize,
    /// M
    pub num_tokens: usize,
    /// V
    pub codebook_size: usize,
    /// N
    pub token_dim: usize,
    /// H
    pub hidden_dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub token_mlp_ratio: f64,
    pub channel_mlp_ratio: f64,
    /// Weight of the commitment term.
    pub beta: f64,
    pub ema_decay: f64,
    pub laplace_eps: f64,
    /// Masked joint modeling during training.
    pub mjm: bool,
    /// Per-sample mask rate is drawn uniformly from this range.
    pub mask_rate_range: [f64; 2],
    /// Width of the per-joint context vectors; 0 disables the hook.
    pub context_width: usize,
    /// Std of the jitter applied to neighbor-coordinate context vectors.
    pub context_jitter: f64,
    /// Per-sample probability of training with zero context, so that the
    /// context-free path used for labels stays in distribution.
    pub context_dropout: f64,
    /// `false` gives the per-joint ablation: one token per joint, no
    /// cross-joint mixing in encoder or decoder.
    pub compositional: bool,
    pub smooth_l1_threshold: f64,
    /// Entries whose EMA cluster size stays below this for a whole epoch are
    /// re-seeded from encoder outputs.
    pub dead_code_threshold: f64,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            num_joints: 16,
            dim: 2,
            num_tokens: 8,
            codebook_size: 128,
            token_dim: 32,
            hidden_dim: 32,
            encoder_blocks: 2,
            decoder_blocks: 1,
            token_mlp_ratio: 0.5,
            channel_mlp_ratio: 4.0,
            beta: 0.25,
            ema_decay: 0.99,
            laplace_eps: 1e-5,
            mjm: true,
            mask_rate_range: [0.0, 0.5],
            context_width: 0,
            context_jitter: 0.02,
            context_dropout: 0.5,
            compositional: true,
            smooth_l1_threshold: 1.0,
            dead_code_threshold: 0.5,
        }
    }
}

impl TokenizerConfig {
    /// Reference configuration with 34 tokens and 1024 entries.
    pub fn paper_scale() -> Self {
        TokenizerConfig {
            num_tokens: 34,
            codebook_size: 1024,
            token_dim: 512,
            hidden_dim: 512,
            encoder_blocks: 4,
            ..Self::default()
        }
    }

    /// Per-joint ablation at the same `V * M` budget as `self`.
    pub fn per_joint(&self) -> Self {
        let budget = self.codebook_size * self.num_tokens;
        TokenizerConfig {
            compositional: false,
            num_tokens: self.num_joints,
            codebook_size: (budget / self.num_joints).max(2),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("tokenizer: {m}")));
        for (name, v) in [
            ("num_joints", self.num_joints),
            ("dim", self.dim),
            ("num_tokens", self.num_tokens),
            ("token_dim", self.token_dim),
            ("hidden_dim", self.hidden_dim),
            ("decoder_blocks", self.decoder_blocks),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.codebook_size < 2 {
            return bad("codebook_size must be at least 2".into());
        }
        if !self.compositional && self.num_tokens != self.num_joints {
            return bad(format!(
                "per-joint tokens need num_tokens == num_joints ({} != {})",
                self.num_tokens, self.num_joints
            ));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return bad("ema_decay must lie in (0, 1)".into());
        }
        if !(self.laplace_eps > 0.0) || !(self.smooth_l1_threshold > 0.0) || self.beta < 0.0 {
            return bad("laplace_eps and smooth_l1_threshold must be positive, beta >= 0".into());
        }
        let [lo, hi] = self.mask_rate_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return bad(format!("mask_rate_range [{lo}, {hi}] must satisfy 0 <= lo <= hi < 1"));
        }
        if !(0.0..=1.0).contains(&self.context_dropout) {
            return bad("context_dropout must lie in [0, 1]".into());
        }
        if self.context_jitter < 0.0 || self.dead_code_threshold < 0.0 {
            return bad("context_jitter and dead_code_threshold must be non-negative".into());
        }
        if !(self.token_mlp_ratio > 0.0 && self.channel_mlp_ratio > 0.0) {
            return bad("MLP ratios must be positive".into());
        }
        Ok(())
    }

    /// Width of one joint's encoder input: coordinates, context, mask flag.
    pub fn input_width(&self) -> usize {
        self.dim + self.context_width + 1
    }
}

/// Optimizer and schedule settings shared by both training stages.
///
/// The default is the desk-scale Stage-I run: base LR, weight decay and
/// warmup shape as at full scale, with a smaller batch so that 20k poses
/// still give several thousand updates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 64,
            lr: 1e-2,
            weight_decay: 0.15,
            warmup_steps: 200,
            beta1: 0.9,
            beta2: 0.999,
        }
    }
}

impl TrainConfig {
    /// Stage-II head training: weight decay 0.05 and batch 256 as at full
    /// scale; the base LR is raised to 1e-2 because desk runs last ten
    /// epochs, not hundreds.
    pub fn stage_two() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 256,
            lr: 1e-2,
            weight_decay: 0.05,
            warmup_steps: 100,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("train: epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return Err(Error::Config("train: lr must be positive, weight_decay >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("train: betas must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adamw(&self) -> crate::numerics::AdamWConfig {
        crate::numerics::AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
            weight_decay: self.weight_decay,
        }
    }
}
