use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::posedata::{mask_joints, Pose};
use crate::rng::{normal, uniform, Rng};

/// What the head sees of one pose: noisy coordinates of visible joints,
/// zeros for hidden ones, and optional per-joint context vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    k: usize,
    d: usize,
    coords: Vec<f64>,
    vis: Vec<bool>,
    context: Option<Vec<f64>>,
}

impl Observation {
    pub fn new(k: usize, d: usize, coords: Vec<f64>, vis: Vec<bool>, context: Option<Vec<f64>>) -> Result<Self> {
        if coords.len() != k * d || vis.len() != k {
            return Err(Error::shape("Observation::new", &[k, d], &[coords.len(), vis.len()]));
        }
        let mut coords = coords;
        for (j, &v) in vis.iter().enumerate() {
            if !v {
                coords[j * d..(j + 1) * d].fill(0.0);
            }
        }
        Ok(Observation {
            k,
            d,
            coords,
            vis,
            context,
        })
    }

    /// The pose itself, respecting its visibility flags, without noise.
    pub fn exact(pose: &Pose) -> Self {
        Self::new(pose.num_joints(), pose.dim(), pose.coords().to_vec(), pose.vis().to_vec(), None)
            .expect("pose shapes")
    }

    /// Hide joints at `mask_rate`, then add Gaussian noise to the visible ones.
    pub fn sample(pose: &Pose, noise_std: f64, mask_rate: f64, rng: &mut Rng) -> Result<Self> {
        let masked = mask_joints(&pose.all_visible(), mask_rate, rng)?;
        let coords = masked
            .coords()
            .iter()
            .map(|&x| x + noise_std * normal(rng))
            .collect();
        Self::new(pose.num_joints(), pose.dim(), coords, masked.vis().to_vec(), None)
    }

    /// [`Observation::sample`] with the rate drawn uniformly from `range`.
    pub fn sample_in_range(pose: &Pose, noise_std: f64, range: [f64; 2], rng: &mut Rng) -> Result<Self> {
        let rate = uniform(rng, range[0], range[1]);
        Self::sample(pose, noise_std, rate, rng)
    }

    pub fn with_context(mut self, context: Vec<f64>) -> Self {
        self.context = Some(context);
        self
    }

    pub fn num_joints(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn vis(&self) -> &[bool] {
        &self.vis
    }

    pub fn context(&self) -> Option<&[f64]> {
        self.context.as_deref()
    }
}

/// Stack observations into `[B, K, D + 1 + context_width]`: coordinates,
/// a visibility channel (1 = visible) and the context (zeros when absent).
pub fn observation_tensor(obs: &[Observation], k: usize, d: usize, context_width: usize) -> Result<Tensor> {
    if obs.is_empty() {
        return Err(Error::InvalidArgument("empty observation batch".into()));
    }
    let w = d + 1 + context_width;
    let mut x = Vec::with_capacity(obs.len() * k * w);
    for o in obs {
        if o.k != k || o.d != d {
            return Err(Error::shape("observation", &[k, d], &[o.k, o.d]));
        }
        if let Some(c) = &o.context {
            if c.len() != k * context_width {
                return Err(Error::shape("observation context", &[k, context_width], &[c.len()]));
            }
        }
        for j in 0..k {
            x.extend_from_slice(&o.coords[j * d..(j + 1) * d]);
            x.push(if o.vis[j] { 1.0 } else { 0.0 });
            match &o.context {
                Some(c) => x.extend_from_slice(&c[j * context_width..(j + 1) * context_width]),
                None => x.extend(std::iter::repeat_n(0.0, context_width)),
            }
        }
    }
    let t = Tensor::new(vec![obs.len(), k, w], x)?;
    t.check_finite("observation")?;
    Ok(t)
}
