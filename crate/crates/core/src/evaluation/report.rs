use super::metrics::{mpjpe, occluded_pck, pck, per_joint_pck, usage_stats, UsageStats};
use crate::error::{Error, Result};
use crate::estimator::{Observation, PosePredictor, OCCLUDED_PCK_THRESHOLD, PCK_THRESHOLD};
use crate::posedata::Pose;
use crate::rng::{derive_seed, rng_from_seed};
use crate::tokenizer::TokenizerModel;
use serde::{Deserialize, Serialize};

/// Every metric of one set of predictions against ground truth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `(threshold, pck)` pairs.
    pub pck: Vec<(f64, f64)>,
    pub mpjpe: f64,
    /// PCK at [`OCCLUDED_PCK_THRESHOLD`] over hidden joints; `None` when the
    /// observations hid nothing.
    pub occluded_pck: Option<f64>,
    pub per_joint_pck: Vec<f64>,
    pub token_accuracy: Option<f64>,
    pub usage: Option<UsageStats>,
}

/// Thresholds reported by default.
pub const REPORT_THRESHOLDS: [f64; 3] = [0.02, 0.05, 0.1];

impl MetricsReport {
    /// `vis` gives the observed joints per pose; `None` means all observed.
    pub fn compute(preds: &[Pose], gts: &[Pose], vis: Option<&[Vec<bool>]>, thresholds: &[f64]) -> Result<Self> {
        let pck_at = thresholds
            .iter()
            .map(|&t| Ok((t, pck(preds, gts, t, None)?)))
            .collect::<Result<Vec<_>>>()?;
        let occluded = match vis {
            Some(v) => occluded_pck(preds, gts, v, OCCLUDED_PCK_THRESHOLD)?,
            None => None,
        };
        Ok(MetricsReport {
            pck: pck_at,
            mpjpe: mpjpe(preds, gts)?,
            occluded_pck: occluded,
            per_joint_pck: per_joint_pck(preds, gts, PCK_THRESHOLD)?,
            token_accuracy: None,
            usage: None,
        })
    }

    /// PCK at `threshold`, if it was computed.
    pub fn pck_at(&self, threshold: f64) -> Option<f64> {
        self.pck.iter().find(|(t, _)| *t == threshold).map(|p| p.1)
    }
}

/// Codebook usage of the tokenizer over the (fully visible) poses.
pub fn codebook_stats(tokenizer: &TokenizerModel, poses: &[Pose]) -> Result<UsageStats> {
    let indices: Vec<usize> = tokenizer
        .tokenize_batch(&poses.iter().map(Pose::all_visible).collect::<Vec<_>>())?
        .into_iter()
        .flat_map(|t| t.0)
        .collect();
    usage_stats(&indices, tokenizer.config.codebook_size)
}

/// Reconstruction metrics of the hard tokenize/detokenize round trip.
pub fn reconstruction_report(tokenizer: &TokenizerModel, poses: &[Pose]) -> Result<MetricsReport> {
    let recon = tokenizer.reconstruct_batch(poses)?;
    let mut r = MetricsReport::compute(&recon, poses, None, &REPORT_THRESHOLDS)?;
    r.usage = Some(codebook_stats(tokenizer, poses)?);
    Ok(r)
}

/// Held-out observation protocol: a standard set with noise only, and one
/// occluded set per mask rate. Observations are a pure function of
/// `(poses, noise_std, rates, seed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OcclusionBenchmark {
    pub noise_std: f64,
    pub rates: Vec<f64>,
    pub seed: u64,
}

impl Default for OcclusionBenchmark {
    fn default() -> Self {
        OcclusionBenchmark {
            noise_std: 0.02,
            rates: vec![0.3, 0.5],
            seed: 0,
        }
    }
}

impl OcclusionBenchmark {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config("benchmark: noise_std must be >= 0".into()));
        }
        if self.rates.is_empty() || self.rates.iter().any(|r| !(0.0 < *r && *r < 1.0)) {
            return Err(Error::Config("benchmark: rates must be nonempty and in (0, 1)".into()));
        }
        Ok(())
    }

    /// Observations at one mask rate; rate 0 gives the standard set.
    pub fn observations(&self, poses: &[Pose], rate: f64) -> Result<Vec<Observation>> {
        let mut rng = rng_from_seed(derive_seed(self.seed, rate.to_bits()));
        poses
            .iter()
            .map(|p| Observation::sample(p, self.noise_std, rate, &mut rng))
            .collect()
    }
}

/// Scores of one predictor on an [`OcclusionBenchmark`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkScores {
    /// PCK@0.05 on the standard set.
    pub pck: f64,
    /// Mean over rates of the occluded-joint PCK@0.1.
    pub occluded_pck: f64,
    /// `(rate, pck, occluded pck)` per mask rate.
    pub per_rate: Vec<(f64, f64, f64)>,
    pub standard: MetricsReport,
}

pub fn run_benchmark<P: PosePredictor + ?Sized>(
    model: &P,
    poses: &[Pose],
    bench: &OcclusionBenchmark,
) -> Result<BenchmarkScores> {
    bench.validate()?;
    let standard_obs = bench.observations(poses, 0.0)?;
    let standard = MetricsReport::compute(&model.predict_poses(&standard_obs)?, poses, None, &REPORT_THRESHOLDS)?;
    let mut per_rate = Vec::with_capacity(bench.rates.len());
    for &rate in &bench.rates {
        let obs = bench.observations(poses, rate)?;
        let vis: Vec<Vec<bool>> = obs.iter().map(|o| o.vis().to_vec()).collect();
        let preds = model.predict_poses(&obs)?;
        let occ = occluded_pck(&preds, poses, &vis, OCCLUDED_PCK_THRESHOLD)?
            .ok_or_else(|| Error::EmptyMetric(format!("rate {rate} hid no joint")))?;
        per_rate.push((rate, pck(&preds, poses, PCK_THRESHOLD, None)?, occ));
    }
    Ok(BenchmarkScores {
        pck: standard.pck_at(PCK_THRESHOLD).unwrap_or(f64::NAN),
        occluded_pck: per_rate.iter().map(|r| r.2).sum::<f64>() / per_rate.len() as f64,
        per_rate,
        standard,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posedata::{generate_pose, Skeleton};

    struct Oracle(Vec<Pose>);

    impl PosePredictor for Oracle {
        fn predict_poses(&self, obs: &[Observation]) -> Result<Vec<Pose>> {
            assert_eq!(obs.len(), self.0.len());
            Ok(self.0.clone())
        }
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let s = Skeleton::mpii16();
        let poses: Vec<Pose> = (0..20).map(|i| generate_pose(&s, i).unwrap()).collect();
        let scores = run_benchmark(&Oracle(poses.clone()), &poses, &OcclusionBenchmark::default()).unwrap();
        assert_eq!(scores.pck, 1.0);
        assert_eq!(scores.occluded_pck, 1.0);
        assert_eq!(scores.standard.mpjpe, 0.0);
        assert_eq!(scores.per_rate.len(), 2);
    }

    #[test]
    fn observations_are_reproducible_and_rate_specific() {
        let s = Skeleton::mpii16();
        let poses: Vec<Pose> = (0..10).map(|i| generate_pose(&s, i).unwrap()).collect();
        let b = OcclusionBenchmark::default();
        assert_eq!(b.observations(&poses, 0.3).unwrap(), b.observations(&poses, 0.3).unwrap());
        assert_ne!(b.observations(&poses, 0.3).unwrap(), b.observations(&poses, 0.5).unwrap());
        assert!(b.observations(&poses, 0.0).unwrap().iter().all(|o| o.vis().iter().all(|&v| v)));
    }

    #[test]
    fn bad_rates_are_rejected() {
        let b = OcclusionBenchmark {
            rates: vec![1.0],
            ..OcclusionBenchmark::default()
        };
        assert!(b.validate().is_err());
    }
}
