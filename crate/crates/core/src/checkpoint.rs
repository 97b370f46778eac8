//! Binary tensor checkpoints with a JSON sidecar.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "PCTC" | version u32 | count u32
//! count x ( name_len u16 | name utf-8 | ndim u8 | dims u64 x ndim | data f64 x numel )
//! ```
//!
//! The sidecar `<file>.json` names the model kind and stores its config.
//! Estimator sidecars also record the SHA-256 of the tokenizer checkpoint
//! they were trained against.

use crate::error::{Error, Result};
use crate::estimator::{BinsModel, EstimatorConfig, EstimatorModel, Observation, PosePredictor, RegressionModel};
use crate::numerics::{Parameters, Tensor};
use crate::posedata::Pose;
use crate::rng::rng_from_seed;
use crate::tokenizer::{Codebook, CoordNorm, TokenizerConfig, TokenizerModel};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MAGIC: &[u8; 4] = b"PCTC";
pub const VERSION: u32 = 1;

pub fn encode_tensors(tensors: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let count = u32::try_from(tensors.len()).map_err(|_| Error::Checkpoint("too many tensors".into()))?;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, t) in tensors {
        let len = u16::try_from(name.len()).map_err(|_| Error::Checkpoint(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let ndim = u8::try_from(t.shape().len()).map_err(|_| Error::Checkpoint(format!("{name}: too many dims")))?;
        out.push(ndim);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parse a checkpoint into named tensors, in file order.
pub fn decode_tensors(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a PCTC checkpoint".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let len = u16::from_le_bytes(r.take(2, "name length")?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("tensor {i}: name is not UTF-8")))?
            .to_string();
        let ndim = r.take(1, "ndim")?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        let mut numel: usize = 1;
        for _ in 0..ndim {
            let d = usize::try_from(r.u64("dims")?).map_err(|_| Error::Checkpoint(format!("{name}: dim overflow")))?;
            numel = numel
                .checked_mul(d)
                .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
            shape.push(d);
        }
        let nbytes = numel
            .checked_mul(8)
            .ok_or_else(|| Error::Checkpoint(format!("{name}: size overflow")))?;
        let raw = r.take(nbytes, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// JSON stored next to a checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub kind: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokenizer_sha256: Option<String>,
}

pub fn write_checkpoint(path: &Path, tensors: &[(String, &Tensor)], sidecar: &Sidecar) -> Result<()> {
    std::fs::write(path, encode_tensors(tensors)?)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(sidecar)? + "\n")?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(Vec<(String, Tensor)>, Sidecar)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    let side = std::fs::read_to_string(sidecar_path(path)).map_err(|e| {
        Error::Checkpoint(format!("cannot read sidecar {}: {e}", sidecar_path(path).display()))
    })?;
    Ok((decode_tensors(&bytes)?, serde_json::from_str(&side)?))
}

/// Move tensors into parameters by name. Every parameter must be present
/// with its exact shape; extra tensors are an error.
pub(crate) fn assign_params<M: Parameters>(
    model: &mut M,
    tensors: &mut BTreeMap<String, Tensor>,
) -> Result<()> {
    for p in model.params_mut() {
        let t = tensors
            .remove(&p.name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
        if t.shape() != p.value.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape {:?} does not match config {:?}",
                p.name,
                t.shape(),
                p.value.shape()
            )));
        }
        t.check_finite(&p.name)?;
        p.value = t;
    }
    Ok(())
}

pub(crate) fn take(tensors: &mut BTreeMap<String, Tensor>, name: &str) -> Result<Tensor> {
    tensors
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

pub(crate) fn expect_empty(tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    match tensors.keys().next() {
        Some(k) => Err(Error::Checkpoint(format!("unexpected tensor {k}"))),
        None => Ok(()),
    }
}

pub const TOKENIZER_KIND: &str = "tokenizer";

fn tokenizer_tensors(model: &TokenizerModel) -> Vec<(String, Tensor)> {
    let mut v: Vec<(String, Tensor)> = model
        .params()
        .into_iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    let cb = &model.codebook;
    v.push(("codebook.entries".into(), cb.entries().clone()));
    v.push(("codebook.cluster_size".into(), Tensor::from_vec(cb.cluster_size().to_vec())));
    v.push(("codebook.embed_sum".into(), cb.embed_sum().clone()));
    v.push(("norm.mean".into(), model.norm().mean.clone()));
    v.push(("norm.scale".into(), Tensor::from_vec(vec![model.norm().scale])));
    v
}

pub fn tokenizer_bytes(model: &TokenizerModel) -> Result<Vec<u8>> {
    let owned = tokenizer_tensors(model);
    let refs: Vec<(String, &Tensor)> = owned.iter().map(|(n, t)| (n.clone(), t)).collect();
    encode_tensors(&refs)
}

/// Write a tokenizer checkpoint and return its SHA-256.
pub fn save_tokenizer(model: &TokenizerModel, path: &Path) -> Result<String> {
    let bytes = tokenizer_bytes(model)?;
    std::fs::write(path, &bytes)?;
    let side = Sidecar {
        kind: TOKENIZER_KIND.into(),
        config: serde_json::to_value(&model.config)?,
        tokenizer_sha256: None,
    };
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&side)? + "\n")?;
    Ok(sha256_hex(&bytes))
}

pub fn load_tokenizer(path: &Path) -> Result<TokenizerModel> {
    let (tensors, side) = read_checkpoint(path)?;
    if side.kind != TOKENIZER_KIND {
        return Err(Error::Checkpoint(format!("expected a tokenizer checkpoint, found {}", side.kind)));
    }
    let config: TokenizerConfig = serde_json::from_value(side.config)?;
    tokenizer_from_tensors(config, tensors)
}

pub(crate) fn tokenizer_from_tensors(
    config: TokenizerConfig,
    tensors: Vec<(String, Tensor)>,
) -> Result<TokenizerModel> {
    let mut map: BTreeMap<String, Tensor> = BTreeMap::new();
    for (n, t) in tensors {
        if map.insert(n.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {n}")));
        }
    }
    let mut model = TokenizerModel::new(config, &mut rng_from_seed(0))?;
    assign_params(&mut model, &mut map)?;
    let c = &model.config;
    let entries = take(&mut map, "codebook.entries")?;
    let sizes = take(&mut map, "codebook.cluster_size")?;
    let sums = take(&mut map, "codebook.embed_sum")?;
    if entries.shape() != [c.codebook_size, c.token_dim] {
        return Err(Error::Checkpoint(format!(
            "codebook.entries: shape {:?} does not match config [{}, {}]",
            entries.shape(),
            c.codebook_size,
            c.token_dim
        )));
    }
    model.codebook = Codebook::from_state(entries, sizes.into_data(), sums, c.ema_decay, c.laplace_eps)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mean = take(&mut map, "norm.mean")?;
    let scale = take(&mut map, "norm.scale")?;
    if scale.numel() != 1 {
        return Err(Error::Checkpoint("norm.scale must hold one value".into()));
    }
    model
        .set_norm(CoordNorm {
            mean,
            scale: scale.data()[0],
        })
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    expect_empty(&map)?;
    Ok(model)
}

fn norm_tensors(prefix: &str, norm: &CoordNorm) -> [(String, Tensor); 2] {
    [
        (format!("{prefix}.mean"), norm.mean.clone()),
        (format!("{prefix}.scale"), Tensor::from_vec(vec![norm.scale])),
    ]
}

fn take_norm(map: &mut BTreeMap<String, Tensor>, prefix: &str, k: usize, d: usize) -> Result<CoordNorm> {
    let mean = take(map, &format!("{prefix}.mean"))?;
    let scale = take(map, &format!("{prefix}.scale"))?;
    if mean.shape() != [k, d] || scale.numel() != 1 {
        return Err(Error::Checkpoint(format!("{prefix}: bad normalizer shape {:?}", mean.shape())));
    }
    let scale = scale.data()[0];
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::Checkpoint(format!("{prefix}.scale must be positive, got {scale}")));
    }
    mean.check_finite(prefix)?;
    Ok(CoordNorm { mean, scale })
}

fn into_map(tensors: Vec<(String, Tensor)>) -> Result<BTreeMap<String, Tensor>> {
    let mut map = BTreeMap::new();
    for (n, t) in tensors {
        if map.insert(n.clone(), t).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor {n}")));
        }
    }
    Ok(map)
}

fn param_tensors<M: Parameters>(model: &M, norm_prefix: &str, norm: &CoordNorm) -> Vec<(String, Tensor)> {
    let mut v: Vec<(String, Tensor)> = model
        .params()
        .into_iter()
        .map(|p| (p.name.clone(), p.value.clone()))
        .collect();
    v.extend(norm_tensors(norm_prefix, norm));
    v
}

fn write_owned(path: &Path, tensors: &[(String, Tensor)], sidecar: &Sidecar) -> Result<()> {
    let refs: Vec<(String, &Tensor)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
    write_checkpoint(path, &refs, sidecar)
}

pub const ESTIMATOR_KIND: &str = "estimator";
pub const REGRESSION_KIND: &str = "regression";
pub const BINS_KIND: &str = "bins";

/// Sidecar config of the baseline heads, which carry no tokenizer.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSidecar {
    pub estimator: EstimatorConfig,
    pub num_joints: usize,
    pub dim: usize,
}

/// Write the token head. `tokenizer_sha256` identifies the tokenizer
/// checkpoint the head must be loaded with.
pub fn save_estimator(model: &EstimatorModel, tokenizer_sha256: &str, path: &Path) -> Result<()> {
    let side = Sidecar {
        kind: ESTIMATOR_KIND.into(),
        config: serde_json::to_value(&model.config)?,
        tokenizer_sha256: Some(tokenizer_sha256.into()),
    };
    write_owned(path, &param_tensors(model, "featurizer.norm", &model.head.featurizer.norm), &side)
}

/// Load a token head against the tokenizer checkpoint at `tokenizer_path`,
/// refusing a tokenizer other than the one it was trained with.
pub fn load_estimator(path: &Path, tokenizer_path: &Path) -> Result<EstimatorModel> {
    let (tensors, side) = read_checkpoint(path)?;
    if side.kind != ESTIMATOR_KIND {
        return Err(Error::Checkpoint(format!("expected an estimator checkpoint, found {}", side.kind)));
    }
    let expected = side
        .tokenizer_sha256
        .ok_or_else(|| Error::Checkpoint("estimator sidecar lacks tokenizer_sha256".into()))?;
    let found = sha256_file(tokenizer_path)
        .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", tokenizer_path.display())))?;
    if found != expected {
        return Err(Error::HashMismatch { expected, found });
    }
    let tokenizer = load_tokenizer(tokenizer_path)?;
    let config: EstimatorConfig = serde_json::from_value(side.config)?;
    let (k, d) = (tokenizer.config.num_joints, tokenizer.config.dim);
    let mut model = EstimatorModel::new(config, tokenizer, &mut rng_from_seed(0))?;
    let mut map = into_map(tensors)?;
    assign_params(&mut model, &mut map)?;
    model.head.featurizer.norm = take_norm(&mut map, "featurizer.norm", k, d)?;
    expect_empty(&map)?;
    Ok(model)
}

fn baseline_sidecar(kind: &str, config: &EstimatorConfig, k: usize, d: usize) -> Result<Sidecar> {
    Ok(Sidecar {
        kind: kind.into(),
        config: serde_json::to_value(BaselineSidecar {
            estimator: config.clone(),
            num_joints: k,
            dim: d,
        })?,
        tokenizer_sha256: None,
    })
}

pub fn save_regression(model: &RegressionModel, path: &Path) -> Result<()> {
    let f = &model.featurizer;
    let side = baseline_sidecar(REGRESSION_KIND, &model.config, f.num_joints(), model.out.out_dim())?;
    write_owned(path, &param_tensors(model, "featurizer.norm", &f.norm), &side)
}

pub fn save_bins(model: &BinsModel, path: &Path) -> Result<()> {
    let f = &model.featurizer;
    let side = baseline_sidecar(BINS_KIND, &model.config, f.num_joints(), f.norm.mean.shape()[1])?;
    write_owned(path, &param_tensors(model, "featurizer.norm", &f.norm), &side)
}

/// Any trained Stage-II predictor.
#[derive(Clone, Debug)]
pub enum Predictor {
    Tokens(Box<EstimatorModel>),
    Regression(RegressionModel),
    Bins(BinsModel),
}

impl Predictor {
    pub fn kind(&self) -> &'static str {
        match self {
            Predictor::Tokens(_) => ESTIMATOR_KIND,
            Predictor::Regression(_) => REGRESSION_KIND,
            Predictor::Bins(_) => BINS_KIND,
        }
    }

    /// `(K, D)` of the poses this predictor produces.
    pub fn pose_shape(&self) -> (usize, usize) {
        let f = match self {
            Predictor::Tokens(m) => &m.head.featurizer,
            Predictor::Regression(m) => &m.featurizer,
            Predictor::Bins(m) => &m.featurizer,
        };
        (f.num_joints(), f.norm.mean.shape()[1])
    }
}

impl PosePredictor for Predictor {
    fn predict_poses(&self, obs: &[Observation]) -> Result<Vec<Pose>> {
        match self {
            Predictor::Tokens(m) => m.predict_poses(obs),
            Predictor::Regression(m) => m.predict_poses(obs),
            Predictor::Bins(m) => m.predict_poses(obs),
        }
    }
}

/// Load any Stage-II checkpoint. Token heads need `tokenizer_path`.
pub fn load_predictor(path: &Path, tokenizer_path: Option<&Path>) -> Result<Predictor> {
    let (tensors, side) = read_checkpoint(path)?;
    match side.kind.as_str() {
        ESTIMATOR_KIND => {
            let tok = tokenizer_path
                .ok_or_else(|| Error::Checkpoint("a token-head checkpoint needs its tokenizer".into()))?;
            Ok(Predictor::Tokens(Box::new(load_estimator(path, tok)?)))
        }
        REGRESSION_KIND | BINS_KIND => {
            let b: BaselineSidecar = serde_json::from_value(side.config)?;
            let mut map = into_map(tensors)?;
            let rng = &mut rng_from_seed(0);
            let out = if side.kind == REGRESSION_KIND {
                let mut m = RegressionModel::new(b.estimator, b.num_joints, b.dim, rng)?;
                assign_params(&mut m, &mut map)?;
                m.featurizer.norm = take_norm(&mut map, "featurizer.norm", b.num_joints, b.dim)?;
                Predictor::Regression(m)
            } else {
                let mut m = BinsModel::new(b.estimator, b.num_joints, b.dim, rng)?;
                assign_params(&mut m, &mut map)?;
                m.featurizer.norm = take_norm(&mut map, "featurizer.norm", b.num_joints, b.dim)?;
                Predictor::Bins(m)
            };
            expect_empty(&map)?;
            Ok(out)
        }
        other => Err(Error::Checkpoint(format!("not a Stage-II checkpoint: {other}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip_and_truncation() {
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.5, 3.25, 0.0, 1e-300, 7.0]).unwrap();
        let b = Tensor::from_vec(vec![f64::MIN_POSITIVE]);
        let bytes = encode_tensors(&[("a".into(), &a), ("b".into(), &b)]).unwrap();
        assert_eq!(&bytes[..4], b"PCTC");
        let back = decode_tensors(&bytes).unwrap();
        assert_eq!(back, vec![("a".to_string(), a), ("b".to_string(), b)]);
        for cut in [3, 10, bytes.len() - 1] {
            assert!(decode_tensors(&bytes[..cut]).is_err());
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_tensors(&bad).is_err());
    }
}
