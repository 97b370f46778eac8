//! Pre-norm MLP-Mixer block over a `[batch, tokens, channels]` tensor:
//!
//! ```text
//! y = x + TokenMlp(LN1(x)^T)^T     // mixes along the token axis
//! z = y + ChannelMlp(LN2(y))       // mixes along the channel axis
//! ```
//!
//! Each MLP is `Linear -> GELU -> Linear`. The token-mixing half can be
//! disabled, which leaves a per-token residual MLP with no cross-token
//! interaction.

use super::layers::{gelu_backward_cached, gelu_cached, LayerNorm, LayerNormCache, Linear};
use super::param::{GradMode, Param, Parameters};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug)]
pub struct TokenMixing {
    pub norm: LayerNorm,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug)]
pub struct MixerBlock {
    pub tokens: usize,
    pub channels: usize,
    pub token_mixing: Option<TokenMixing>,
    pub norm2: LayerNorm,
    pub channel_fc1: Linear,
    pub channel_fc2: Linear,
}

/// Hidden widths are `round(ratio * width)`, at least 1.
#[derive(Clone, Copy, Debug)]
pub struct MixerShape {
    pub tokens: usize,
    pub channels: usize,
    pub token_ratio: f64,
    pub channel_ratio: f64,
    pub token_mixing: bool,
}

pub struct MixerCache {
    n1: Option<LayerNormCache>,
    n1t: Tensor,
    h: Tensor,
    g: Tensor,
    th: Tensor,
    n2_cache: LayerNormCache,
    n2: Tensor,
    h2: Tensor,
    g2: Tensor,
    th2: Tensor,
}

fn hidden(width: usize, ratio: f64) -> usize {
    ((width as f64 * ratio).round() as usize).max(1)
}

impl MixerBlock {
    pub fn new(name: &str, shape: MixerShape, rng: &mut Rng) -> Self {
        let MixerShape {
            tokens,
            channels,
            token_ratio,
            channel_ratio,
            token_mixing,
        } = shape;
        let token_mixing = token_mixing.then(|| {
            let th = hidden(tokens, token_ratio);
            TokenMixing {
                norm: LayerNorm::new(&format!("{name}.norm1"), channels),
                fc1: Linear::new(&format!("{name}.token_fc1"), tokens, th, rng),
                fc2: Linear::new(&format!("{name}.token_fc2"), th, tokens, rng),
            }
        });
        let ch = hidden(channels, channel_ratio);
        MixerBlock {
            tokens,
            channels,
            token_mixing,
            norm2: LayerNorm::new(&format!("{name}.norm2"), channels),
            channel_fc1: Linear::new(&format!("{name}.channel_fc1"), channels, ch, rng),
            channel_fc2: Linear::new(&format!("{name}.channel_fc2"), ch, channels, rng),
        }
    }

    /// Zero every MLP weight and bias; the block becomes the identity.
    pub fn zero_mlps(&mut self) {
        let mut lins: Vec<&mut Linear> = vec![&mut self.channel_fc1, &mut self.channel_fc2];
        if let Some(tm) = self.token_mixing.as_mut() {
            lins.push(&mut tm.fc1);
            lins.push(&mut tm.fc2);
        }
        for l in lins {
            l.weight.value.fill(0.0);
            l.bias.value.fill(0.0);
        }
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.len() < 2 || s[s.len() - 2] != self.tokens || s[s.len() - 1] != self.channels {
            return Err(Error::shape("mixer_block", &[self.tokens, self.channels], s));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, MixerCache)> {
        self.check(x)?;
        let mut y = x.clone();
        let (n1, n1t, h, g, th) = match &self.token_mixing {
            Some(tm) => {
                let (n1, n1c) = tm.norm.forward(x)?;
                let n1t = n1.transpose_last2();
                let h = tm.fc1.forward(&n1t)?;
                let (g, th) = gelu_cached(&h);
                let o = tm.fc2.forward(&g)?.transpose_last2();
                y.add_assign(&o)?;
                (Some(n1c), n1t, h, g, th)
            }
            None => {
                let z = || Tensor::zeros(&[1]);
                (None, z(), z(), z(), z())
            }
        };
        let (n2, n2_cache) = self.norm2.forward(&y)?;
        let h2 = self.channel_fc1.forward(&n2)?;
        let (g2, th2) = gelu_cached(&h2);
        let o2 = self.channel_fc2.forward(&g2)?;
        y.add_assign(&o2)?;
        Ok((
            y,
            MixerCache {
                n1,
                n1t,
                h,
                g,
                th,
                n2_cache,
                n2,
                h2,
                g2,
                th2,
            },
        ))
    }

    pub fn backward(&mut self, cache: &MixerCache, dz: &Tensor, mode: GradMode) -> Tensor {
        let dg2 = self.channel_fc2.backward(&cache.g2, dz, mode);
        let dh2 = gelu_backward_cached(&cache.h2, &cache.th2, &dg2);
        let dn2 = self.channel_fc1.backward(&cache.n2, &dh2, mode);
        let mut dy = dz.clone();
        dy.add_assign(&self.norm2.backward(&cache.n2_cache, &dn2, mode))
            .expect("same shape");
        if let Some(tm) = self.token_mixing.as_mut() {
            let dot = dy.transpose_last2();
            let dg = tm.fc2.backward(&cache.g, &dot, mode);
            let dh = gelu_backward_cached(&cache.h, &cache.th, &dg);
            let dn1 = tm.fc1.backward(&cache.n1t, &dh, mode).transpose_last2();
            let n1c = cache.n1.as_ref().expect("token mixing cache");
            dy.add_assign(&tm.norm.backward(n1c, &dn1, mode))
                .expect("same shape");
        }
        dy
    }
}

impl Parameters for MixerBlock {
    fn params(&self) -> Vec<&Param> {
        let mut v = Vec::new();
        if let Some(tm) = &self.token_mixing {
            v.extend(tm.norm.params());
            v.extend(tm.fc1.params());
            v.extend(tm.fc2.params());
        }
        v.extend(self.norm2.params());
        v.extend(self.channel_fc1.params());
        v.extend(self.channel_fc2.params());
        v
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut v = Vec::new();
        if let Some(tm) = &mut self.token_mixing {
            v.extend(tm.norm.params_mut());
            v.extend(tm.fc1.params_mut());
            v.extend(tm.fc2.params_mut());
        }
        v.extend(self.norm2.params_mut());
        v.extend(self.channel_fc1.params_mut());
        v.extend(self.channel_fc2.params_mut());
        v
    }
}

/// Forward through a stack of blocks, keeping every cache.
pub fn stack_forward(blocks: &[MixerBlock], x: Tensor) -> Result<(Tensor, Vec<MixerCache>)> {
    let mut caches = Vec::with_capacity(blocks.len());
    let mut h = x;
    for b in blocks {
        let (out, c) = b.forward(&h)?;
        caches.push(c);
        h = out;
    }
    Ok((h, caches))
}

pub fn stack_backward(
    blocks: &mut [MixerBlock],
    caches: &[MixerCache],
    dy: Tensor,
    mode: GradMode,
) -> Tensor {
    let mut d = dy;
    for (b, c) in blocks.iter_mut().zip(caches).rev() {
        d = b.backward(c, &d, mode);
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{grad_check, numeric_grad};
    use crate::rng::rng_from_seed;

    fn shape(t: usize, c: usize) -> MixerShape {
        MixerShape {
            tokens: t,
            channels: c,
            token_ratio: 0.5,
            channel_ratio: 4.0,
            token_mixing: true,
        }
    }

    fn randomize(block: &mut MixerBlock, rng: &mut Rng) {
        for p in block.params_mut() {
            let s = p.value.shape().to_vec();
            p.value = Tensor::randn(&s, 0.5, rng);
        }
    }

    #[test]
    fn zero_mlps_is_identity() {
        let mut rng = rng_from_seed(0);
        let mut b = MixerBlock::new("b", shape(16, 64), &mut rng);
        b.zero_mlps();
        let x = Tensor::randn(&[2, 16, 64], 1.0, &mut rng);
        let (y, _) = b.forward(&x).unwrap();
        assert_eq!(y, x);
        assert_eq!(y.shape(), &[2, 16, 64]);
    }

    #[test]
    fn rejects_axis_mismatch() {
        let mut rng = rng_from_seed(0);
        let b = MixerBlock::new("b", shape(4, 6), &mut rng);
        assert!(b.forward(&Tensor::zeros(&[6, 4])).is_err());
    }

    #[test]
    fn full_block_gradients_match_finite_differences() {
        for token_mixing in [true, false] {
            let mut rng = rng_from_seed(5);
            let mut s = shape(4, 6);
            s.token_mixing = token_mixing;
            let mut b = MixerBlock::new("b", s, &mut rng);
            randomize(&mut b, &mut rng);
            let x = Tensor::randn(&[4, 6], 1.0, &mut rng);
            let w = Tensor::randn(&[4, 6], 1.0, &mut rng);
            let dot = |y: &Tensor| -> f64 { y.data().iter().zip(w.data()).map(|(a, b)| a * b).sum() };
            let report = grad_check(&mut b, |blk: &mut MixerBlock| {
                let (y, c) = blk.forward(&x)?;
                blk.backward(&c, &w, GradMode::Accumulate);
                Ok(dot(&y))
            })
            .unwrap();
            assert!(report.max_rel_error <= 1e-5, "{report:?}");

            let (_, c) = b.forward(&x).unwrap();
            let dx = b.backward(&c, &w, GradMode::InputOnly);
            let num = numeric_grad(&x, |xp| dot(&b.forward(xp).unwrap().0));
            let scale = dx.max_abs();
            for (a, n) in dx.data().iter().zip(num.data()) {
                assert!((a - n).abs() <= 1e-5 * scale, "{a} vs {n}");
            }
        }
    }
}
