use super::skeleton::Skeleton;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, uniform, Rng};
use rand::Rng as _;

/// `K x D` joint coordinates (row-major) plus visibility flags.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    k: usize,
    d: usize,
    coords: Vec<f64>,
    vis: Vec<bool>,
}

impl Pose {
    pub fn new(k: usize, d: usize, coords: Vec<f64>, vis: Vec<bool>) -> Result<Self> {
        if coords.len() != k * d {
            return Err(Error::shape("Pose::new coords", &[k, d], &[coords.len()]));
        }
        if vis.len() != k {
            return Err(Error::shape("Pose::new vis", &[k], &[vis.len()]));
        }
        Ok(Pose { k, d, coords, vis })
    }

    /// All joints visible.
    pub fn visible(k: usize, d: usize, coords: Vec<f64>) -> Result<Self> {
        Self::new(k, d, coords, vec![true; k])
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

    pub fn joint(&self, j: usize) -> &[f64] {
        &self.coords[j * self.d..(j + 1) * self.d]
    }

    pub fn vis(&self) -> &[bool] {
        &self.vis
    }

    pub fn with_vis(&self, vis: Vec<bool>) -> Result<Self> {
        Self::new(self.k, self.d, self.coords.clone(), vis)
    }

    pub fn all_visible(&self) -> Self {
        Pose {
            vis: vec![true; self.k],
            ..self.clone()
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.joint(a)
            .iter()
            .zip(self.joint(b))
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
}

/// Square box the pose was cropped to: `raw = origin + side * normalized`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundingBox {
    pub origin: Vec<f64>,
    pub side: f64,
}

const DEGENERATE_EXTENT: f64 = 1e-12;

/// Map raw `K x D` coordinates into the unit box, preserving aspect ratio:
/// the longest extent spans `[0, 1]` and the other axes are centered.
pub fn normalize(k: usize, d: usize, raw: &[f64]) -> Result<(Pose, BoundingBox)> {
    if raw.len() != k * d {
        return Err(Error::shape("normalize", &[k, d], &[raw.len()]));
    }
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    for joint in raw.chunks_exact(d) {
        for a in 0..d {
            lo[a] = lo[a].min(joint[a]);
            hi[a] = hi[a].max(joint[a]);
        }
    }
    let side = (0..d).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(side > DEGENERATE_EXTENT) {
        return Err(Error::Degenerate("pose has a zero-size bounding box".into()));
    }
    let origin: Vec<f64> = (0..d).map(|a| lo[a] - 0.5 * (side - (hi[a] - lo[a]))).collect();
    let coords = raw
        .chunks_exact(d)
        .flat_map(|joint| {
            let origin = &origin;
            (0..d).map(move |a| ((joint[a] - origin[a]) / side).clamp(0.0, 1.0))
        })
        .collect();
    Ok((Pose::visible(k, d, coords)?, BoundingBox { origin, side }))
}

pub fn denormalize(pose: &Pose, bbox: &BoundingBox) -> Result<Vec<f64>> {
    if !(bbox.side > 0.0) {
        return Err(Error::Degenerate("bounding box has zero width".into()));
    }
    if bbox.origin.len() != pose.dim() {
        return Err(Error::shape("denormalize", &[pose.dim()], &[bbox.origin.len()]));
    }
    let d = pose.dim();
    Ok(pose
        .coords()
        .chunks_exact(d)
        .flat_map(|j| (0..d).map(move |a| bbox.origin[a] + bbox.side * j[a]))
        .collect())
}

/// Joint angles drawn for one pose.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledAngles {
    pub angles: Vec<f64>,
    pub elevations: Vec<f64>,
}

pub fn sample_angles(skeleton: &Skeleton, rng: &mut Rng) -> SampledAngles {
    let angles = skeleton
        .angle_range
        .iter()
        .map(|&(lo, hi)| uniform(rng, lo, hi))
        .collect();
    let elevations = skeleton
        .elevation_range
        .iter()
        .map(|&(lo, hi)| uniform(rng, lo, hi))
        .collect();
    SampledAngles { angles, elevations }
}

/// Raw (pre-normalization) FK output projected to the skeleton's dimension.
pub fn raw_pose(skeleton: &Skeleton, sample: &SampledAngles) -> Vec<f64> {
    let d = skeleton.dim;
    skeleton
        .forward_kinematics(&sample.angles, &sample.elevations)
        .iter()
        .flat_map(|p| p[..d].to_vec())
        .collect()
}

const MAX_ATTEMPTS: u64 = 100;

/// Sample a pose: uniform angles within each joint's range, forward
/// kinematics from the root, projection, unit-box normalization. A
/// degenerate box triggers a retry with a derived seed.
pub fn generate_pose(skeleton: &Skeleton, seed: u64) -> Result<Pose> {
    skeleton.validate()?;
    let k = skeleton.num_joints();
    for attempt in 0..MAX_ATTEMPTS {
        let s = if attempt == 0 { seed } else { derive_seed(seed, attempt) };
        let mut rng = rng_from_seed(s);
        let sample = sample_angles(skeleton, &mut rng);
        match normalize(k, skeleton.dim, &raw_pose(skeleton, &sample)) {
            Ok((pose, _)) => return Ok(pose),
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Degenerate(format!(
        "no non-degenerate pose after {MAX_ATTEMPTS} attempts"
    )))
}

/// Independently hide each visible joint with probability `rate`, resampling
/// until at least one joint stays visible.
pub fn mask_joints(pose: &Pose, rate: f64, rng: &mut Rng) -> Result<Pose> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "mask rate must be in [0, 1), got {rate}"
        )));
    }
    if !pose.vis().iter().any(|&v| v) {
        return Err(Error::Degenerate("pose has no visible joint to keep".into()));
    }
    loop {
        let vis: Vec<bool> = pose
            .vis()
            .iter()
            .map(|&v| v && rng.random::<f64>() >= rate)
            .collect();
        if vis.iter().any(|&v| v) {
            return pose.with_vis(vis);
        }
    }
}
