use super::config::EstimatorConfig;
use super::head::HeadParams;
use super::observation::{observation_tensor, Observation};
use crate::error::{Error, Result};
use crate::numerics::layers::softmax_in_place;
use crate::numerics::tensor::gemm;
use crate::numerics::{cross_entropy, softmax_backward, GradMode, Param, Parameters, Tensor};
use crate::posedata::Pose;
use crate::rng::Rng;
use crate::tokenizer::{standardized_smooth_l1, Codebook, TokenSeq, TokenizerModel};

/// Classification head plus the frozen tokenizer whose codebook and decoder
/// turn token predictions into poses.
///
/// [`Parameters`] lists the head only; nothing in Stage II writes to the
/// tokenizer.
#[derive(Clone, Debug)]
pub struct EstimatorModel {
    pub config: EstimatorConfig,
    pub head: HeadParams,
    pub tokenizer: TokenizerModel,
}

impl EstimatorModel {
    pub fn new(config: EstimatorConfig, tokenizer: TokenizerModel, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let t = &tokenizer.config;
        let mut head = HeadParams::new(
            &config,
            t.num_joints,
            t.dim,
            t.num_tokens,
            t.token_dim,
            t.codebook_size,
            rng,
        );
        head.featurizer.norm = tokenizer.norm().clone();
        Ok(EstimatorModel {
            config,
            head,
            tokenizer,
        })
    }

    fn input(&self, obs: &[Observation]) -> Result<Tensor> {
        let t = &self.tokenizer.config;
        observation_tensor(obs, t.num_joints, t.dim, self.config.context_width)
    }

    /// Logits `[B, M, V]`.
    pub fn head_forward_batch(&self, obs: &[Observation]) -> Result<Tensor> {
        Ok(self.head.forward(&self.input(obs)?)?.0)
    }

    /// Logits `[M, V]` for one observation.
    pub fn head_forward(&self, obs: &Observation) -> Result<Tensor> {
        let t = &self.tokenizer.config;
        self.head_forward_batch(std::slice::from_ref(obs))?
            .reshape(&[t.num_tokens, t.codebook_size])
    }

    /// Hard path: argmax token per position, then the tokenizer decoder.
    pub fn predict_tokens_batch(&self, obs: &[Observation]) -> Result<Vec<TokenSeq>> {
        let logits = self.head_forward_batch(obs)?;
        let m = self.tokenizer.config.num_tokens;
        let idx = argmax_rows(&logits);
        Ok(idx.chunks_exact(m).map(|c| TokenSeq(c.to_vec())).collect())
    }

    pub fn predict_batch(&self, obs: &[Observation]) -> Result<Vec<Pose>> {
        let tokens = self.predict_tokens_batch(obs)?;
        self.tokenizer.detokenize_batch(&tokens)
    }

    pub fn predict(&self, obs: &Observation) -> Result<Pose> {
        Ok(self.predict_batch(std::slice::from_ref(obs))?.remove(0))
    }
}

impl Parameters for EstimatorModel {
    fn params(&self) -> Vec<&Param> {
        self.head.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.head.params_mut()
    }
}

/// Index of the largest value in each row of the last axis, ties to the
/// lowest index.
pub fn argmax_rows(x: &Tensor) -> Vec<usize> {
    x.data()
        .chunks_exact(x.last_dim())
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Ground-truth classes: the tokenizer's indices for the fully visible pose
/// with zero context.
pub fn gt_labels(tokenizer: &TokenizerModel, poses: &[Pose]) -> Result<Vec<TokenSeq>> {
    let visible: Vec<Pose> = poses.iter().map(Pose::all_visible).collect();
    tokenizer.tokenize_batch(&visible)
}

/// Soft token features `weights(logits) x C`, with the row weights
/// (softmax of the logits, or the logits themselves when `softmax` is off).
/// Returns `(S, weights)`, shapes `[.., M, N]` and `[.., M, V]`.
pub fn soft_tokens(logits: &Tensor, codebook: &Codebook, softmax: bool) -> Result<(Tensor, Tensor)> {
    let v = codebook.size();
    if logits.last_dim() != v {
        return Err(Error::shape("soft_tokens", &[v], &[logits.last_dim()]));
    }
    logits.check_finite("logits")?;
    let mut w = logits.data().to_vec();
    if softmax {
        for row in w.chunks_exact_mut(v) {
            softmax_in_place(row);
        }
    }
    let rows = logits.rows();
    let n = codebook.width();
    let mut s = vec![0.0; rows * n];
    gemm(rows, v, n, &w, false, codebook.entries().data(), false, &mut s, 0.0);
    let mut shape = logits.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Ok((Tensor::new(shape, s)?, Tensor::new(logits.shape().to_vec(), w)?))
}

/// Gradient wrt the logits from a gradient wrt `S`.
pub fn soft_tokens_backward(weights: &Tensor, codebook: &Codebook, ds: &Tensor, softmax: bool) -> Tensor {
    let (v, n) = (codebook.size(), codebook.width());
    let rows = weights.rows();
    let mut dw = vec![0.0; rows * v];
    gemm(rows, n, v, ds.data(), false, codebook.entries().data(), true, &mut dw, 0.0);
    let dw = Tensor::new(weights.shape().to_vec(), dw).expect("same shape");
    if softmax {
        softmax_backward(weights, &dw)
    } else {
        dw
    }
}

#[derive(Clone, Debug)]
pub struct EstimatorLoss {
    pub loss: f64,
    pub cross_entropy: f64,
    /// Smooth L1 of the soft-token reconstruction; computed even when the
    /// term is switched off, in which case it adds nothing to `loss`.
    pub reconstruction: f64,
    /// Fraction of tokens whose argmax equals the label.
    pub token_accuracy: f64,
}

/// Cross-entropy against the labels plus (when enabled) the smooth L1 of the
/// decoded soft tokens against the target poses `[B, K, D]`. Gradients
/// accumulate into the head only; the decoder is traversed in
/// [`GradMode::InputOnly`].
pub fn estimator_loss(
    model: &mut EstimatorModel,
    input: &Tensor,
    labels: &[usize],
    targets: &Tensor,
) -> Result<EstimatorLoss> {
    let EstimatorModel {
        config,
        head,
        tokenizer,
    } = model;
    let (logits, cache) = head.forward(input)?;
    let (ce, mut dlogits) = cross_entropy(&logits, labels)?;
    let (s, weights) = soft_tokens(&logits, &tokenizer.codebook, config.softmax_tokens)?;
    let (ghat, dcache) = tokenizer.decoder.forward(&s)?;
    let (rec, dghat) = standardized_smooth_l1(tokenizer, &ghat, targets)?;
    let mut loss = ce;
    if config.rec_loss {
        loss += config.rec_weight * rec;
        let mut dghat = dghat;
        dghat.data_mut().iter_mut().for_each(|g| *g *= config.rec_weight);
        let ds = tokenizer.decoder.backward(&dcache, &dghat, GradMode::InputOnly);
        let dl = soft_tokens_backward(&weights, &tokenizer.codebook, &ds, config.softmax_tokens);
        dlogits.add_assign(&dl)?;
    }
    head.backward(&cache, &dlogits);
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!("estimator loss {loss}")));
    }
    let pred = argmax_rows(&logits);
    let hits = pred.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(EstimatorLoss {
        loss,
        cross_entropy: ce,
        reconstruction: rec,
        token_accuracy: hits as f64 / labels.len() as f64,
    })
}
