use super::codebook::Codebook;
use super::config::TokenizerConfig;
use crate::error::{Error, Result};
use crate::numerics::mixer::{stack_backward, stack_forward, MixerCache};
use crate::numerics::{GradMode, Linear, MixerBlock, MixerShape, Param, Parameters, Tensor};
use crate::posedata::Pose;
use crate::rng::Rng;
use serde::{Deserialize, Serialize};

/// `M` codebook indices describing one pose.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq(pub Vec<usize>);

impl TokenSeq {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Per-joint encoder input for a batch, `[B, K, D + context + 1]`, with the
/// rows of masked joints flagged.
#[derive(Clone, Debug)]
pub struct EncoderInput {
    pub x: Tensor,
    /// `B * K` flags, `true` where the joint is hidden.
    pub masked: Vec<bool>,
}

impl EncoderInput {
    /// Coordinates of visible joints, zeros and a set flag for hidden ones.
    /// `context` is `[B, K, context_width]`; `None` means zeros.
    pub fn build(config: &TokenizerConfig, poses: &[Pose], context: Option<&Tensor>) -> Result<Self> {
        let (k, d, cw) = (config.num_joints, config.dim, config.context_width);
        let w = config.input_width();
        if poses.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if let Some(c) = context {
            if c.shape() != [poses.len(), k, cw] {
                return Err(Error::shape("encoder context", &[poses.len(), k, cw], c.shape()));
            }
        }
        let mut x = Vec::with_capacity(poses.len() * k * w);
        let mut masked = Vec::with_capacity(poses.len() * k);
        for (b, pose) in poses.iter().enumerate() {
            if pose.num_joints() != k || pose.dim() != d {
                return Err(Error::shape("encode", &[k, d], &[pose.num_joints(), pose.dim()]));
            }
            for j in 0..k {
                let vis = pose.vis()[j];
                if vis {
                    x.extend_from_slice(pose.joint(j));
                } else {
                    x.extend(std::iter::repeat_n(0.0, d));
                }
                match context {
                    Some(c) => x.extend_from_slice(&c.data()[(b * k + j) * cw..(b * k + j + 1) * cw]),
                    None => x.extend(std::iter::repeat_n(0.0, cw)),
                }
                x.push(if vis { 0.0 } else { 1.0 });
                masked.push(!vis);
            }
        }
        let x = Tensor::new(vec![poses.len(), k, w], x)?;
        x.check_finite("encoder input")?;
        Ok(EncoderInput { x, masked })
    }
}

/// Fixed affine map between pose coordinates and the network's working
/// space: `(x - mean[j]) / scale` on the way in, the inverse on the way out.
/// A per-joint mean pose and one global scale, so both axes keep the same
/// units. Fitted once on the training poses; not a trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct CoordNorm {
    /// `[K, D]`.
    pub mean: Tensor,
    pub scale: f64,
}

impl CoordNorm {
    pub fn identity(k: usize, d: usize) -> Self {
        CoordNorm {
            mean: Tensor::zeros(&[k, d]),
            scale: 1.0,
        }
    }

    /// Mean pose and root-mean-square deviation from it.
    pub fn fit(poses: &[Pose]) -> Result<Self> {
        let p0 = poses
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot fit a normalizer to no poses".into()))?;
        let (k, d) = (p0.num_joints(), p0.dim());
        let mut mean = vec![0.0; k * d];
        for p in poses {
            if p.num_joints() != k || p.dim() != d {
                return Err(Error::shape("normalizer fit", &[k, d], &[p.num_joints(), p.dim()]));
            }
            for (m, x) in mean.iter_mut().zip(p.coords()) {
                *m += x;
            }
        }
        let n = poses.len() as f64;
        mean.iter_mut().for_each(|m| *m /= n);
        let ss: f64 = poses
            .iter()
            .flat_map(|p| p.coords().iter().zip(&mean).map(|(x, m)| (x - m).powi(2)))
            .sum();
        let rms = (ss / (n * (k * d) as f64)).sqrt();
        Ok(CoordNorm {
            mean: Tensor::new(vec![k, d], mean)?,
            scale: if rms > 1e-12 { rms } else { 1.0 },
        })
    }

    /// Standardize one joint's coordinates in place.
    pub fn standardize_joint(&self, joint: usize, coords: &mut [f64]) {
        let d = self.mean.shape()[1];
        for (v, mu) in coords.iter_mut().zip(&self.mean.data()[joint * d..(joint + 1) * d]) {
            *v = (*v - mu) / self.scale;
        }
    }

    /// Standardize the coordinate channels of visible joints and the
    /// neighbor-mean channels of flagged context, in place. Hidden joints
    /// keep their zeros, which after the map means "at the mean pose".
    fn standardize_input(&self, input: &mut EncoderInput) {
        let (k, d) = (self.mean.shape()[0], self.mean.shape()[1]);
        let w = input.x.last_dim();
        let has_context = w > d + 1;
        let mean = self.mean.data();
        for (r, (row, &hidden)) in input
            .x
            .data_mut()
            .chunks_exact_mut(w)
            .zip(&input.masked)
            .enumerate()
        {
            let m = &mean[(r % k) * d..(r % k + 1) * d];
            if !hidden {
                for (v, mu) in row[..d].iter_mut().zip(m) {
                    *v = (*v - mu) / self.scale;
                }
            }
            if has_context && row[2 * d] != 0.0 {
                for (v, mu) in row[d..2 * d].iter_mut().zip(m) {
                    *v = (*v - mu) / self.scale;
                }
            }
        }
    }

    /// Map `[.., K, D]` network outputs back to coordinates, in place.
    pub fn restore(&self, y: &mut Tensor) {
        let mean = self.mean.data();
        let kd = mean.len();
        for chunk in y.data_mut().chunks_exact_mut(kd) {
            for (v, mu) in chunk.iter_mut().zip(mean) {
                *v = mu + *v * self.scale;
            }
        }
    }
}

/// Compositional encoder: per-joint projection, mixer blocks over
/// `(K, H)`, a projection along the joint axis to `M` tokens and a channel
/// projection to the token width `N`.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub in_proj: Linear,
    pub mask_embedding: Param,
    pub blocks: Vec<MixerBlock>,
    /// `None` in the per-joint ablation, where token `i` is joint `i`.
    pub joint_proj: Option<Linear>,
    pub out_proj: Linear,
    pub norm: CoordNorm,
}

pub struct EncoderCache {
    input: EncoderInput,
    blocks: Vec<MixerCache>,
    /// Block output transposed to `[B, H, K]`, input of `joint_proj`.
    ht: Tensor,
    /// Input of `out_proj`, `[B, M, H]`.
    h2: Tensor,
}

/// Decoder: token-width to hidden projection, a projection along the token
/// axis back to `K` joints, mixer blocks and a per-joint output head.
#[derive(Clone, Debug)]
pub struct Decoder {
    pub in_proj: Linear,
    pub token_proj: Option<Linear>,
    pub blocks: Vec<MixerBlock>,
    pub out_proj: Linear,
    pub norm: CoordNorm,
}

pub struct DecoderCache {
    q: Tensor,
    /// `in_proj` output transposed to `[B, H, M]`.
    ht: Tensor,
    blocks: Vec<MixerCache>,
    h3: Tensor,
}

fn mixer_shape(c: &TokenizerConfig) -> MixerShape {
    MixerShape {
        tokens: c.num_joints,
        channels: c.hidden_dim,
        token_ratio: c.token_mlp_ratio,
        channel_ratio: c.channel_mlp_ratio,
        token_mixing: c.compositional,
    }
}

/// Move a `[.., A, B]` tensor through a linear map along its second-to-last
/// axis, returning the transposed input for the backward pass.
fn along_axis(lin: &Linear, x: &Tensor) -> Result<(Tensor, Tensor)> {
    let xt = x.transpose_last2();
    let y = lin.forward(&xt)?.transpose_last2();
    Ok((xt, y))
}

impl Encoder {
    pub fn new(c: &TokenizerConfig, rng: &mut Rng) -> Self {
        let h = c.hidden_dim;
        Encoder {
            in_proj: Linear::new("encoder.in_proj", c.input_width(), h, rng),
            mask_embedding: Param::new("encoder.mask_embedding", Tensor::randn(&[h], 0.02, rng), false),
            blocks: (0..c.encoder_blocks)
                .map(|i| MixerBlock::new(&format!("encoder.block{i}"), mixer_shape(c), rng))
                .collect(),
            joint_proj: c
                .compositional
                .then(|| Linear::new("encoder.joint_proj", c.num_joints, c.num_tokens, rng)),
            out_proj: Linear::new("encoder.out_proj", h, c.token_dim, rng),
            norm: CoordNorm::identity(c.num_joints, c.dim),
        }
    }

    /// `[B, M, N]` token features.
    pub fn forward(&self, mut input: EncoderInput) -> Result<(Tensor, EncoderCache)> {
        self.norm.standardize_input(&mut input);
        let mut h = self.in_proj.forward(&input.x)?;
        let hd = h.last_dim();
        let emb = self.mask_embedding.value.data();
        for (row, &m) in h.data_mut().chunks_exact_mut(hd).zip(&input.masked) {
            if m {
                for (v, e) in row.iter_mut().zip(emb) {
                    *v += e;
                }
            }
        }
        let (h, blocks) = stack_forward(&self.blocks, h)?;
        let (ht, h2) = match &self.joint_proj {
            Some(lin) => along_axis(lin, &h)?,
            None => (Tensor::zeros(&[1]), h),
        };
        let t = self.out_proj.forward(&h2)?;
        t.check_finite("token features")?;
        Ok((t, EncoderCache { input, blocks, ht, h2 }))
    }

    pub fn backward(&mut self, cache: &EncoderCache, dt: &Tensor) {
        let mode = GradMode::Accumulate;
        let dh2 = self.out_proj.backward(&cache.h2, dt, mode);
        let dh = match self.joint_proj.as_mut() {
            Some(lin) => lin.backward(&cache.ht, &dh2.transpose_last2(), mode).transpose_last2(),
            None => dh2,
        };
        let dh = stack_backward(&mut self.blocks, &cache.blocks, dh, mode);
        let hd = dh.last_dim();
        let demb = self.mask_embedding.grad.data_mut();
        for (row, &m) in dh.data().chunks_exact(hd).zip(&cache.input.masked) {
            if m {
                for (g, v) in demb.iter_mut().zip(row) {
                    *g += v;
                }
            }
        }
        self.in_proj.backward(&cache.input.x, &dh, mode);
    }
}

impl Parameters for Encoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.in_proj.params();
        v.push(&self.mask_embedding);
        v.extend(self.blocks.params());
        v.extend(self.joint_proj.params());
        v.extend(self.out_proj.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.in_proj.params_mut();
        v.push(&mut self.mask_embedding);
        v.extend(self.blocks.params_mut());
        v.extend(self.joint_proj.params_mut());
        v.extend(self.out_proj.params_mut());
        v
    }
}

impl Decoder {
    pub fn new(c: &TokenizerConfig, rng: &mut Rng) -> Self {
        let h = c.hidden_dim;
        Decoder {
            in_proj: Linear::new("decoder.in_proj", c.token_dim, h, rng),
            token_proj: c
                .compositional
                .then(|| Linear::new("decoder.token_proj", c.num_tokens, c.num_joints, rng)),
            blocks: (0..c.decoder_blocks)
                .map(|i| MixerBlock::new(&format!("decoder.block{i}"), mixer_shape(c), rng))
                .collect(),
            out_proj: Linear::new("decoder.out_proj", h, c.dim, rng),
            norm: CoordNorm::identity(c.num_joints, c.dim),
        }
    }

    /// `[.., M, N]` quantized features to `[.., K, D]` coordinates.
    pub fn forward(&self, q: &Tensor) -> Result<(Tensor, DecoderCache)> {
        let h = self.in_proj.forward(q)?;
        let (ht, h) = match &self.token_proj {
            Some(lin) => along_axis(lin, &h)?,
            None => (Tensor::zeros(&[1]), h),
        };
        let (h3, blocks) = stack_forward(&self.blocks, h)?;
        let mut y = self.out_proj.forward(&h3)?;
        self.norm.restore(&mut y);
        y.check_finite("decoded pose")?;
        Ok((
            y,
            DecoderCache {
                q: q.clone(),
                ht,
                blocks,
                h3,
            },
        ))
    }

    /// Returns the gradient with respect to the decoder input.
    pub fn backward(&mut self, cache: &DecoderCache, dy: &Tensor, mode: GradMode) -> Tensor {
        let mut dy = dy.clone();
        dy.data_mut().iter_mut().for_each(|v| *v *= self.norm.scale);
        let dh3 = self.out_proj.backward(&cache.h3, &dy, mode);
        let dh = stack_backward(&mut self.blocks, &cache.blocks, dh3, mode);
        let dh = match self.token_proj.as_mut() {
            Some(lin) => lin.backward(&cache.ht, &dh.transpose_last2(), mode).transpose_last2(),
            None => dh,
        };
        self.in_proj.backward(&cache.q, &dh, mode)
    }
}

impl Parameters for Decoder {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.in_proj.params();
        v.extend(self.token_proj.params());
        v.extend(self.blocks.params());
        v.extend(self.out_proj.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.in_proj.params_mut();
        v.extend(self.token_proj.params_mut());
        v.extend(self.blocks.params_mut());
        v.extend(self.out_proj.params_mut());
        v
    }
}

/// Encoder, shared codebook and decoder.
///
/// [`Parameters`] lists encoder and decoder weights only: the codebook is
/// moved by [`Codebook::ema_update`], never by gradients.
#[derive(Clone, Debug)]
pub struct TokenizerModel {
    pub config: TokenizerConfig,
    pub encoder: Encoder,
    pub codebook: Codebook,
    pub decoder: Decoder,
}

impl TokenizerModel {
    pub fn new(config: TokenizerConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let encoder = Encoder::new(&config, rng);
        let decoder = Decoder::new(&config, rng);
        let codebook = Codebook::new(
            config.codebook_size,
            config.token_dim,
            config.ema_decay,
            config.laplace_eps,
            rng,
        );
        Ok(TokenizerModel {
            config,
            encoder,
            codebook,
            decoder,
        })
    }

    /// Install a coordinate normalizer in both encoder and decoder.
    pub fn set_norm(&mut self, norm: CoordNorm) -> Result<()> {
        let k = self.config.num_joints;
        let d = self.config.dim;
        if norm.mean.shape() != [k, d] {
            return Err(Error::shape("normalizer mean", &[k, d], norm.mean.shape()));
        }
        if !(norm.scale.is_finite() && norm.scale > 0.0) {
            return Err(Error::InvalidArgument(format!("normalizer scale must be positive, got {}", norm.scale)));
        }
        norm.mean.check_finite("normalizer mean")?;
        self.encoder.norm = norm.clone();
        self.decoder.norm = norm;
        Ok(())
    }

    pub fn norm(&self) -> &CoordNorm {
        &self.encoder.norm
    }

    /// Token features `[B, M, N]` for a batch of poses.
    pub fn encode_batch(&self, poses: &[Pose], context: Option<&Tensor>) -> Result<Tensor> {
        let input = EncoderInput::build(&self.config, poses, context)?;
        Ok(self.encoder.forward(input)?.0)
    }

    /// Token features `[M, N]` of one pose; `context` is `[K, context_width]`.
    pub fn encode(&self, pose: &Pose, context: Option<&Tensor>) -> Result<Tensor> {
        let (m, n) = (self.config.num_tokens, self.config.token_dim);
        let ctx = match context {
            Some(c) => {
                let mut s = vec![1];
                s.extend_from_slice(c.shape());
                Some(c.clone().reshape(&s)?)
            }
            None => None,
        };
        self.encode_batch(std::slice::from_ref(pose), ctx.as_ref())?
            .reshape(&[m, n])
    }

    pub fn quantize(&self, features: &Tensor) -> Result<(Vec<usize>, Tensor)> {
        self.codebook.quantize(features)
    }

    /// Quantized features `[.., M, N]` to coordinates `[.., K, D]`.
    pub fn decode(&self, quantized: &Tensor) -> Result<Tensor> {
        let s = quantized.shape();
        let (m, n) = (self.config.num_tokens, self.config.token_dim);
        if s.len() < 2 || s[s.len() - 2] != m || s[s.len() - 1] != n {
            return Err(Error::shape("decode", &[m, n], s));
        }
        Ok(self.decoder.forward(quantized)?.0)
    }

    pub fn tokenize(&self, pose: &Pose) -> Result<TokenSeq> {
        Ok(self.tokenize_batch(std::slice::from_ref(pose))?.remove(0))
    }

    /// Token indices of each pose, respecting visibility flags, zero context.
    pub fn tokenize_batch(&self, poses: &[Pose]) -> Result<Vec<TokenSeq>> {
        let t = self.encode_batch(poses, None)?;
        let (idx, _) = self.quantize(&t)?;
        Ok(idx
            .chunks_exact(self.config.num_tokens)
            .map(|c| TokenSeq(c.to_vec()))
            .collect())
    }

    pub fn detokenize(&self, tokens: &TokenSeq) -> Result<Pose> {
        Ok(self.detokenize_batch(std::slice::from_ref(tokens))?.remove(0))
    }

    pub fn detokenize_batch(&self, tokens: &[TokenSeq]) -> Result<Vec<Pose>> {
        let (m, n) = (self.config.num_tokens, self.config.token_dim);
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("empty token batch".into()));
        }
        let mut flat = Vec::with_capacity(tokens.len() * m);
        for t in tokens {
            if t.len() != m {
                return Err(Error::shape("detokenize", &[m], &[t.len()]));
            }
            flat.extend_from_slice(t.indices());
        }
        let q = self.codebook.lookup(&flat)?.reshape(&[tokens.len(), m, n])?;
        self.poses_from(&self.decode(&q)?)
    }

    /// Split a `[B, K, D]` decoder output into poses.
    pub fn poses_from(&self, coords: &Tensor) -> Result<Vec<Pose>> {
        let (k, d) = (self.config.num_joints, self.config.dim);
        coords
            .data()
            .chunks_exact(k * d)
            .map(|c| Pose::visible(k, d, c.to_vec()))
            .collect()
    }

    /// Hard-quantized reconstruction of each pose (all joints visible, zero
    /// context), the path used for reconstruction metrics.
    pub fn reconstruct_batch(&self, poses: &[Pose]) -> Result<Vec<Pose>> {
        let visible: Vec<Pose> = poses.iter().map(Pose::all_visible).collect();
        let t = self.encode_batch(&visible, None)?;
        let (_, q) = self.quantize(&t)?;
        self.poses_from(&self.decode(&q)?)
    }

    /// Reconstruction from the poses as given, hidden joints included.
    pub fn reconstruct_masked_batch(&self, poses: &[Pose]) -> Result<Vec<Pose>> {
        let t = self.encode_batch(poses, None)?;
        let (_, q) = self.quantize(&t)?;
        self.poses_from(&self.decode(&q)?)
    }
}

impl Parameters for TokenizerModel {
    fn params(&self) -> Vec<&Param> {
        let mut v = self.encoder.params();
        v.extend(self.decoder.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = self.encoder.params_mut();
        v.extend(self.decoder.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posedata::{generate_pose, Skeleton};
    use crate::rng::rng_from_seed;

    fn tiny() -> TokenizerConfig {
        TokenizerConfig {
            num_joints: 16,
            num_tokens: 8,
            token_dim: 32,
            hidden_dim: 16,
            encoder_blocks: 2,
            ..TokenizerConfig::default()
        }
    }

    #[test]
    fn encode_shape_and_determinism() {
        let m = TokenizerModel::new(tiny(), &mut rng_from_seed(0)).unwrap();
        let p = generate_pose(&Skeleton::mpii16(), 1).unwrap();
        let a = m.encode(&p, None).unwrap();
        assert_eq!(a.shape(), &[8, 32]);
        assert_eq!(a, m.encode(&p.clone(), None).unwrap());
    }

    #[test]
    fn nearly_all_masked_is_finite() {
        let m = TokenizerModel::new(tiny(), &mut rng_from_seed(0)).unwrap();
        let p = generate_pose(&Skeleton::mpii16(), 1).unwrap();
        let mut vis = vec![false; 16];
        vis[3] = true;
        let t = m.encode(&p.with_vis(vis).unwrap(), None).unwrap();
        t.check_finite("t").unwrap();
    }

    #[test]
    fn joint_permutation_changes_features() {
        let m = TokenizerModel::new(tiny(), &mut rng_from_seed(0)).unwrap();
        let p = generate_pose(&Skeleton::mpii16(), 1).unwrap();
        let mut rng = rng_from_seed(9);
        for _ in 0..5 {
            let mut perm: Vec<usize> = (0..16).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            if perm.iter().enumerate().all(|(i, &j)| i == j) {
                continue;
            }
            let coords = perm.iter().flat_map(|&j| p.joint(j).to_vec()).collect();
            let q = Pose::visible(16, 2, coords).unwrap();
            assert_ne!(m.encode(&p, None).unwrap(), m.encode(&q, None).unwrap());
        }
    }

    #[test]
    fn detokenize_checks_indices() {
        let m = TokenizerModel::new(tiny(), &mut rng_from_seed(0)).unwrap();
        assert!(m.detokenize(&TokenSeq(vec![128; 8])).is_err());
        assert!(m.detokenize(&TokenSeq(vec![0; 7])).is_err());
        let p = m.detokenize(&TokenSeq(vec![127; 8])).unwrap();
        assert_eq!((p.num_joints(), p.dim()), (16, 2));
    }

    #[test]
    fn per_joint_variant_has_no_cross_joint_path() {
        let c = tiny().per_joint();
        let m = TokenizerModel::new(c, &mut rng_from_seed(0)).unwrap();
        let p = generate_pose(&Skeleton::mpii16(), 1).unwrap();
        let mut coords = p.coords().to_vec();
        coords[0] += 0.3;
        let q = Pose::visible(16, 2, coords).unwrap();
        let (a, b) = (m.encode(&p, None).unwrap(), m.encode(&q, None).unwrap());
        // Only token 0 (joint 0) may change.
        assert_ne!(a.data()[..32], b.data()[..32]);
        assert_eq!(a.data()[32..], b.data()[32..]);
    }

    #[test]
    fn paper_scale_uses_34_tokens() {
        let mut c = TokenizerConfig::paper_scale();
        c.hidden_dim = 8;
        c.token_dim = 8;
        c.encoder_blocks = 1;
        let m = TokenizerModel::new(c, &mut rng_from_seed(0)).unwrap();
        let p = generate_pose(&Skeleton::mpii16(), 2).unwrap();
        assert_eq!(m.tokenize(&p).unwrap().len(), 34);
    }
}
