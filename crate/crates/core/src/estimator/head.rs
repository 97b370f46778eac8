use super::config::{EstimatorConfig, HEAD_BLOCKS};
use crate::error::Result;
use crate::numerics::layers::LayerNormCache;
use crate::numerics::mixer::{stack_backward, stack_forward, MixerCache};
use crate::numerics::{GradMode, LayerNorm, Linear, MixerBlock, MixerShape, Param, Parameters, Tensor};
use crate::rng::Rng;
use crate::tokenizer::CoordNorm;

/// Observation featurizer shared by the token head and both baselines:
/// per-joint projection plus a learned joint embedding, then residual
/// mixer blocks over `(K, H_obs)`. Visible coordinates are standardized
/// with `norm` before the projection.
#[derive(Clone, Debug)]
pub struct Featurizer {
    pub in_proj: Linear,
    pub joint_embedding: Param,
    pub blocks: Vec<MixerBlock>,
    pub norm: CoordNorm,
}

pub struct FeaturizerCache {
    x: Tensor,
    blocks: Vec<MixerCache>,
}

impl Featurizer {
    pub fn new(config: &EstimatorConfig, k: usize, d: usize, rng: &mut Rng) -> Self {
        let h = config.obs_hidden;
        let shape = MixerShape {
            tokens: k,
            channels: h,
            token_ratio: config.token_mlp_ratio,
            channel_ratio: config.channel_mlp_ratio,
            token_mixing: true,
        };
        Featurizer {
            in_proj: Linear::new("featurizer.in_proj", d + 1 + config.context_width, h, rng),
            joint_embedding: Param::new("featurizer.joint_embedding", Tensor::randn(&[k, h], 0.02, rng), false),
            blocks: (0..config.featurizer_blocks)
                .map(|i| MixerBlock::new(&format!("featurizer.block{i}"), shape, rng))
                .collect(),
            norm: CoordNorm::identity(k, d),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.joint_embedding.value.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.joint_embedding.value.shape()[1]
    }

    /// `[B, K, W]` observation tensor to `[B, K, H_obs]` features.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, FeaturizerCache)> {
        let mut x = x.clone();
        let (k, d) = (self.num_joints(), self.norm.mean.shape()[1]);
        let w = x.last_dim();
        for (r, row) in x.data_mut().chunks_exact_mut(w).enumerate() {
            if row[d] == 1.0 {
                self.norm.standardize_joint(r % k, &mut row[..d]);
            }
        }
        let mut h = self.in_proj.forward(&x)?;
        let kh = self.joint_embedding.value.numel();
        let emb = self.joint_embedding.value.data();
        for chunk in h.data_mut().chunks_exact_mut(kh) {
            for (v, e) in chunk.iter_mut().zip(emb) {
                *v += e;
            }
        }
        let (f, blocks) = stack_forward(&self.blocks, h)?;
        Ok((f, FeaturizerCache { x, blocks }))
    }

    pub fn backward(&mut self, cache: &FeaturizerCache, df: Tensor) {
        let dh = stack_backward(&mut self.blocks, &cache.blocks, df, GradMode::Accumulate);
        let kh = self.joint_embedding.value.numel();
        let g = self.joint_embedding.grad.data_mut();
        for chunk in dh.data().chunks_exact(kh) {
            for (a, b) in g.iter_mut().zip(chunk) {
                *a += b;
            }
        }
        self.in_proj.backward(&cache.x, &dh, GradMode::Accumulate);
    }
}

impl Parameters for Featurizer {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.in_proj.params();
        v.push(&self.joint_embedding);
        v.extend(self.blocks.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.in_proj.params_mut();
        v.push(&mut self.joint_embedding);
        v.extend(self.blocks.params_mut());
        v
    }
}

/// Token classification head: featurizer, flatten and project to `M x N`,
/// four mixer blocks over `(M, N)`, a final norm and per-token logits over
/// the `V` codebook entries.
#[derive(Clone, Debug)]
pub struct HeadParams {
    pub featurizer: Featurizer,
    pub flatten_proj: Linear,
    pub blocks: Vec<MixerBlock>,
    pub norm: LayerNorm,
    pub logits: Linear,
    tokens: usize,
    width: usize,
}

pub struct HeadCache {
    feat: FeaturizerCache,
    flat: Tensor,
    blocks: Vec<MixerCache>,
    norm: LayerNormCache,
    normed: Tensor,
}

impl HeadParams {
    /// `m` tokens of width `n` classified over `v` entries.
    pub fn new(config: &EstimatorConfig, k: usize, d: usize, m: usize, n: usize, v: usize, rng: &mut Rng) -> Self {
        let featurizer = Featurizer::new(config, k, d, rng);
        let shape = MixerShape {
            tokens: m,
            channels: n,
            token_ratio: config.token_mlp_ratio,
            channel_ratio: config.channel_mlp_ratio,
            token_mixing: true,
        };
        HeadParams {
            flatten_proj: Linear::new("head.flatten_proj", k * config.obs_hidden, m * n, rng),
            blocks: (0..HEAD_BLOCKS)
                .map(|i| MixerBlock::new(&format!("head.block{i}"), shape, rng))
                .collect(),
            norm: LayerNorm::new("head.norm", n),
            logits: Linear::new("head.logits", n, v, rng),
            featurizer,
            tokens: m,
            width: n,
        }
    }

    /// `[B, K, W]` observations to `[B, M, V]` logits.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, HeadCache)> {
        let b = x.shape()[0];
        let (f, feat) = self.featurizer.forward(x)?;
        let flat = f.reshape(&[b, self.featurizer.num_joints() * self.featurizer.width()])?;
        let h = self
            .flatten_proj
            .forward(&flat)?
            .reshape(&[b, self.tokens, self.width])?;
        let (h, blocks) = stack_forward(&self.blocks, h)?;
        let (normed, norm) = self.norm.forward(&h)?;
        let logits = self.logits.forward(&normed)?;
        logits.check_finite("logits")?;
        Ok((
            logits,
            HeadCache {
                feat,
                flat,
                blocks,
                norm,
                normed,
            },
        ))
    }

    pub fn backward(&mut self, cache: &HeadCache, dlogits: &Tensor) {
        let mode = GradMode::Accumulate;
        let dn = self.logits.backward(&cache.normed, dlogits, mode);
        let dh = self.norm.backward(&cache.norm, &dn, mode);
        let dh = stack_backward(&mut self.blocks, &cache.blocks, dh, mode);
        let b = dh.shape()[0];
        let dh = dh.reshape(&[b, self.tokens * self.width]).expect("same size");
        let dflat = self.flatten_proj.backward(&cache.flat, &dh, mode);
        let df = dflat
            .reshape(&[b, self.featurizer.num_joints(), self.featurizer.width()])
            .expect("same size");
        self.featurizer.backward(&cache.feat, df);
    }
}

impl Parameters for HeadParams {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.featurizer.params();
        v.extend(self.flatten_proj.params());
        v.extend(self.blocks.params());
        v.extend(self.norm.params());
        v.extend(self.logits.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.featurizer.params_mut();
        v.extend(self.flatten_proj.params_mut());
        v.extend(self.blocks.params_mut());
        v.extend(self.norm.params_mut());
        v.extend(self.logits.params_mut());
        v
    }
}
