use crate::error::{Error, Result};
use crate::posedata::{Pose, Skeleton};
use serde::{Deserialize, Serialize};

fn check_pairs(preds: &[Pose], gts: &[Pose]) -> Result<()> {
    if preds.len() != gts.len() {
        return Err(Error::shape("metric", &[gts.len()], &[preds.len()]));
    }
    for (p, g) in preds.iter().zip(gts) {
        if p.num_joints() != g.num_joints() || p.dim() != g.dim() {
            return Err(Error::shape(
                "metric pose",
                &[g.num_joints(), g.dim()],
                &[p.num_joints(), p.dim()],
            ));
        }
    }
    Ok(())
}

fn joint_error(p: &Pose, g: &Pose, j: usize) -> f64 {
    p.joint(j)
        .iter()
        .zip(g.joint(j))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Fraction of joints whose L2 error is at most `threshold`. With a mask
/// (one flag per joint per pose), only flagged joints count; a mask that
/// selects nothing is an [`Error::EmptyMetric`].
pub fn pck(preds: &[Pose], gts: &[Pose], threshold: f64, mask: Option<&[Vec<bool>]>) -> Result<f64> {
    check_pairs(preds, gts)?;
    if let Some(m) = mask {
        if m.len() != gts.len() || m.iter().zip(gts).any(|(r, g)| r.len() != g.num_joints()) {
            return Err(Error::InvalidArgument("pck mask does not match the poses".into()));
        }
    }
    let (mut hit, mut total) = (0usize, 0usize);
    for (i, (p, g)) in preds.iter().zip(gts).enumerate() {
        for j in 0..g.num_joints() {
            if mask.is_some_and(|m| !m[i][j]) {
                continue;
            }
            total += 1;
            if joint_error(p, g, j) <= threshold {
                hit += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyMetric("no joints selected".into()));
    }
    Ok(hit as f64 / total as f64)
}

/// [`pck`] restricted to joints with `vis == false`. `None` when the batch
/// has no hidden joint.
pub fn occluded_pck(preds: &[Pose], gts: &[Pose], vis: &[Vec<bool>], threshold: f64) -> Result<Option<f64>> {
    let hidden: Vec<Vec<bool>> = vis.iter().map(|r| r.iter().map(|v| !v).collect()).collect();
    match pck(preds, gts, threshold, Some(&hidden)) {
        Ok(v) => Ok(Some(v)),
        Err(Error::EmptyMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Mean per-joint L2 error, unit-box units.
pub fn mpjpe(preds: &[Pose], gts: &[Pose]) -> Result<f64> {
    check_pairs(preds, gts)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        for j in 0..g.num_joints() {
            sum += joint_error(p, g, j);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMetric("no poses".into()));
    }
    Ok(sum / n as f64)
}

/// PCK of each joint separately.
pub fn per_joint_pck(preds: &[Pose], gts: &[Pose], threshold: f64) -> Result<Vec<f64>> {
    check_pairs(preds, gts)?;
    let k = gts.first().map_or(0, Pose::num_joints);
    if gts.is_empty() {
        return Err(Error::EmptyMetric("no poses".into()));
    }
    Ok((0..k)
        .map(|j| {
            let hits = preds
                .iter()
                .zip(gts)
                .filter(|(p, g)| joint_error(p, g, j) <= threshold)
                .count();
            hits as f64 / gts.len() as f64
        })
        .collect())
}

/// Mean relative deviation of predicted bone lengths from the ground-truth
/// lengths of the same pose, over all skeleton edges.
pub fn bone_length_violation(preds: &[Pose], gts: &[Pose], skeleton: &Skeleton) -> Result<f64> {
    check_pairs(preds, gts)?;
    if skeleton.edges.is_empty() || gts.is_empty() {
        return Err(Error::EmptyMetric("no bones".into()));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for (p, g) in preds.iter().zip(gts) {
        for &(a, b) in &skeleton.edges {
            let lg = g.distance(a, b);
            if lg > 0.0 {
                sum += (p.distance(a, b) - lg).abs() / lg;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyMetric("all bones have zero length".into()));
    }
    Ok(sum / n as f64)
}

/// Usage histogram of codebook indices and its perplexity,
/// `exp(entropy)` of the empirical distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UsageStats {
    pub histogram: Vec<usize>,
    pub perplexity: f64,
    /// Entries never selected.
    pub dead_entries: usize,
}

pub fn usage_stats(indices: &[usize], codebook_size: usize) -> Result<UsageStats> {
    if indices.is_empty() {
        return Err(Error::EmptyMetric("no tokens".into()));
    }
    let mut histogram = vec![0usize; codebook_size];
    for &i in indices {
        if i >= codebook_size {
            return Err(Error::InvalidArgument(format!("index {i} >= {codebook_size}")));
        }
        histogram[i] += 1;
    }
    let n = indices.len() as f64;
    let entropy: f64 = histogram
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum();
    Ok(UsageStats {
        dead_entries: histogram.iter().filter(|&&c| c == 0).count(),
        perplexity: entropy.exp(),
        histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pose(c: &[f64]) -> Pose {
        Pose::visible(c.len() / 2, 2, c.to_vec()).unwrap()
    }

    #[test]
    fn pck_cases() {
        let g = vec![pose(&[0.0, 0.0, 0.5, 0.5, 1.0, 1.0])];
        assert_eq!(pck(&g, &g, 0.05, None).unwrap(), 1.0);
        let shifted = vec![pose(&[0.1, 0.0, 0.6, 0.5, 1.1, 1.0])];
        assert_eq!(pck(&shifted, &g, 0.05, None).unwrap(), 0.0);
        let one = vec![pose(&[0.01, 0.0, 0.6, 0.5, 1.1, 1.0])];
        assert!((pck(&one, &g, 0.05, None).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn occluded_matches_masked_pck() {
        let g = vec![pose(&[0.0, 0.0, 0.5, 0.5, 1.0, 1.0])];
        let p = vec![pose(&[0.01, 0.0, 0.6, 0.5, 1.1, 1.0])];
        let vis = vec![vec![false, false, false]];
        let all = vec![vec![true, true, true]];
        assert_eq!(
            occluded_pck(&p, &g, &vis, 0.05).unwrap().unwrap(),
            pck(&p, &g, 0.05, Some(&all)).unwrap()
        );
        assert_eq!(occluded_pck(&p, &g, &all, 0.05).unwrap(), None);
        let partial = vec![vec![true, false, true]];
        assert_eq!(occluded_pck(&p, &g, &partial, 0.05).unwrap(), Some(0.0));
    }

    #[test]
    fn perplexity_bounds() {
        assert_eq!(usage_stats(&[3; 50], 128).unwrap().perplexity, 1.0);
        let uniform: Vec<usize> = (0..128).collect();
        let s = usage_stats(&uniform, 128).unwrap();
        assert!((s.perplexity - 128.0).abs() < 1e-9);
        assert_eq!(s.dead_entries, 0);
    }
}
