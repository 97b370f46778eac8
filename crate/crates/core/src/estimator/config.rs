use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Number of mixer blocks in the classification head.
pub const HEAD_BLOCKS: usize = 4;

/// Stage-II head and observation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    /// Per-joint observation embedding width `H_obs`.
    pub obs_hidden: usize,
    /// Residual mixer blocks of the observation featurizer.
    pub featurizer_blocks: usize,
    pub token_mlp_ratio: f64,
    pub channel_mlp_ratio: f64,
    /// Std of the Gaussian noise on visible joints, unit-box units.
    pub noise_std: f64,
    /// Per-sample hide rate is drawn uniformly from this range.
    pub mask_rate_range: [f64; 2],
    /// Add the smooth L1 loss of the soft-token reconstruction.
    pub rec_loss: bool,
    /// Weight of the reconstruction term relative to the cross-entropy.
    pub rec_weight: f64,
    /// Normalize logits with a softmax before mixing codebook entries;
    /// `false` multiplies the raw logits.
    pub softmax_tokens: bool,
    /// Width of optional per-joint context vectors in the observation.
    pub context_width: usize,
    /// Bins per axis of the discrete-bins baseline.
    pub bins: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            obs_hidden: 64,
            featurizer_blocks: 2,
            token_mlp_ratio: 0.5,
            channel_mlp_ratio: 4.0,
            noise_std: 0.02,
            mask_rate_range: [0.0, 0.6],
            rec_loss: true,
            rec_weight: 1.0,
            softmax_tokens: true,
            context_width: 0,
            bins: 64,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("estimator: {m}")));
        if self.obs_hidden == 0 {
            return bad("obs_hidden must be positive");
        }
        if !(self.rec_weight >= 0.0 && self.rec_weight.is_finite()) {
            return bad("rec_weight must be finite and >= 0");
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be >= 0");
        }
        let [lo, hi] = self.mask_rate_range;
        if !(0.0 <= lo && lo <= hi && hi < 1.0) {
            return bad("mask_rate_range must satisfy 0 <= lo <= hi < 1");
        }
        if self.bins < 2 {
            return bad("bins must be at least 2");
        }
        if !(self.token_mlp_ratio > 0.0 && self.channel_mlp_ratio > 0.0) {
            return bad("MLP ratios must be positive");
        }
        Ok(())
    }
}
