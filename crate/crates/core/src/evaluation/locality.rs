use crate::error::{Error, Result};
use crate::posedata::{render_svg, Pose, Skeleton, HIGHLIGHT_COLOR};
use crate::rng::{derive_seed, rng_from_seed};
use crate::tokenizer::{TokenSeq, TokenizerModel};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Joints moving farther than this in a swap form the changed sub-structure.
pub const DISPLACEMENT_THRESHOLD: f64 = 0.02;
/// Joints in a locality window: the most displaced joint and its nearest
/// neighbors along the skeleton.
pub const LOCALITY_WINDOW: usize = 4;
/// Column permutations averaged in the shuffled control.
pub const CONTROL_PERMUTATIONS: usize = 32;

/// Decode a pose before and after replacing token `i` with entry `v`.
/// `before` is the plain round trip, so a swap to the current index returns
/// two identical poses.
pub fn swap_token(tokenizer: &TokenizerModel, pose: &Pose, i: usize, v: usize) -> Result<(Pose, Pose)> {
    let seq = tokenizer.tokenize(&pose.all_visible())?;
    if i >= seq.len() {
        return Err(Error::InvalidArgument(format!("token {i} of {}", seq.len())));
    }
    let mut swapped = seq.clone();
    swapped.0[i] = v;
    let mut out = tokenizer.detokenize_batch(&[seq, swapped])?;
    let after = out.pop().expect("two poses");
    Ok((out.pop().expect("two poses"), after))
}

pub fn joint_displacements(before: &Pose, after: &Pose) -> Vec<f64> {
    (0..before.num_joints())
        .map(|j| {
            before
                .joint(j)
                .iter()
                .zip(after.joint(j))
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

pub fn displaced_joints(before: &Pose, after: &Pose, threshold: f64) -> Vec<bool> {
    joint_displacements(before, after)
        .into_iter()
        .map(|d| d > threshold)
        .collect()
}

/// Paired SVG: `before` in black, `after` in blue with displaced joints
/// highlighted.
pub fn render_swap(skeleton: &Skeleton, before: &Pose, after: &Pose, path: &Path) -> Result<()> {
    let marks: Vec<Option<String>> = displaced_joints(before, after, DISPLACEMENT_THRESHOLD)
        .into_iter()
        .map(|d| d.then(|| HIGHLIGHT_COLOR.to_string()))
        .collect();
    render_svg(&[before.clone(), after.clone()], skeleton, Some(&marks), path)
}

/// One rendered swap: token `token` of pose `pose` set to `entry`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapExample {
    pub token: usize,
    pub swap: usize,
    pub pose: usize,
    pub entry: usize,
}

/// `per_token` swaps for every token: swap `s` uses pose `s % poses.len()`
/// and a uniformly drawn entry different from the current one.
pub fn swap_plan(tokenizer: &TokenizerModel, poses: &[Pose], per_token: usize, seed: u64) -> Result<Vec<SwapExample>> {
    if poses.is_empty() {
        return Err(Error::InvalidArgument("swap plan needs poses".into()));
    }
    let n = poses.len().min(per_token);
    let seqs = tokenizer.tokenize_batch(&poses[..n].iter().map(Pose::all_visible).collect::<Vec<_>>())?;
    let v = tokenizer.config.codebook_size;
    let mut rng = rng_from_seed(derive_seed(seed, 23));
    let mut out = Vec::with_capacity(tokenizer.config.num_tokens * per_token);
    for token in 0..tokenizer.config.num_tokens {
        for swap in 0..per_token {
            let pose = swap % poses.len();
            let cur = seqs[pose].0[token];
            let r = rng.random_range(0..v - 1);
            out.push(SwapExample {
                token,
                swap,
                pose,
                entry: if r >= cur { r + 1 } else { r },
            });
        }
    }
    Ok(out)
}

/// Mean joint displacement caused by resampling each token.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalityMatrix {
    /// `M` rows of `K` mean displacements.
    pub rows: Vec<Vec<f64>>,
    /// Locality window of each token, most displaced joint first.
    pub top_joints: Vec<Vec<usize>>,
    /// Share of each row's displacement inside its window.
    pub locality_index: Vec<f64>,
    /// Mean locality index with each row's columns randomly permuted.
    pub control_index: f64,
    /// Share of swaps that displaced at least one joint past
    /// [`DISPLACEMENT_THRESHOLD`].
    pub nonempty_fraction: f64,
}

impl LocalityMatrix {
    pub fn mean_index(&self) -> f64 {
        self.locality_index.iter().sum::<f64>() / self.locality_index.len() as f64
    }

    /// CSV with one row per token: index, window joints, locality index,
    /// then the `K` displacements.
    pub fn to_csv(&self) -> Result<String> {
        let k = self.rows.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["token".to_string(), "top_joints".into(), "locality_index".into()];
        header.extend((0..k).map(|j| format!("joint{j}")));
        w.write_record(&header)?;
        for (i, row) in self.rows.iter().enumerate() {
            let top: Vec<String> = self.top_joints[i].iter().map(usize::to_string).collect();
            let mut rec = vec![i.to_string(), top.join(" "), self.locality_index[i].to_string()];
            rec.extend(row.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv is utf-8"))
    }
}

/// The anchor (largest entry, lowest index on ties) and the `size - 1`
/// joints nearest to it by hop distance, ties by index.
pub fn locality_window(row: &[f64], hops: &[Vec<usize>], size: usize) -> Vec<usize> {
    let anchor = row
        .iter()
        .enumerate()
        .fold(0, |best, (j, &v)| if v > row[best] { j } else { best });
    let mut order: Vec<usize> = (0..row.len()).filter(|&j| j != anchor).collect();
    order.sort_by_key(|&j| (hops[anchor][j], j));
    std::iter::once(anchor)
        .chain(order)
        .take(size.min(row.len()))
        .collect()
}

/// Window mass over row mass; 0 for a row that never moved.
pub fn locality_index(row: &[f64], hops: &[Vec<usize>], size: usize) -> f64 {
    let total: f64 = row.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    locality_window(row, hops, size).iter().map(|&j| row[j]).sum::<f64>() / total
}

/// Monte-Carlo locality matrix: for each token, `swaps` poses (cycled from
/// `poses`) have that token replaced by a uniformly drawn different entry.
pub fn locality_matrix(
    tokenizer: &TokenizerModel,
    skeleton: &Skeleton,
    poses: &[Pose],
    swaps: usize,
    seed: u64,
) -> Result<LocalityMatrix> {
    if swaps == 0 {
        return Err(Error::InvalidArgument("locality matrix needs at least one swap per token".into()));
    }
    if poses.is_empty() {
        return Err(Error::InvalidArgument("locality matrix needs poses".into()));
    }
    let (m, v, k) = (
        tokenizer.config.num_tokens,
        tokenizer.config.codebook_size,
        tokenizer.config.num_joints,
    );
    if skeleton.num_joints() != k {
        return Err(Error::shape("locality skeleton", &[k], &[skeleton.num_joints()]));
    }
    let visible: Vec<Pose> = poses.iter().map(Pose::all_visible).collect();
    let seqs = tokenizer.tokenize_batch(&visible)?;
    let base = tokenizer.detokenize_batch(&seqs)?;
    let mut rng = rng_from_seed(derive_seed(seed, 21));
    let mut rows = vec![vec![0.0; k]; m];
    let mut nonempty = 0usize;
    for (i, row) in rows.iter_mut().enumerate() {
        let picks: Vec<usize> = (0..swaps).map(|s| s % poses.len()).collect();
        let swapped: Vec<TokenSeq> = picks
            .iter()
            .map(|&p| {
                let mut t = seqs[p].clone();
                let cur = t.0[i];
                let r = rng.random_range(0..v - 1);
                t.0[i] = if r >= cur { r + 1 } else { r };
                t
            })
            .collect();
        let after = tokenizer.detokenize_batch(&swapped)?;
        for (&p, a) in picks.iter().zip(&after) {
            let d = joint_displacements(&base[p], a);
            if d.iter().any(|&x| x > DISPLACEMENT_THRESHOLD) {
                nonempty += 1;
            }
            for (acc, x) in row.iter_mut().zip(d) {
                *acc += x / swaps as f64;
            }
        }
    }
    let hops = skeleton.hop_distances();
    let top_joints = rows.iter().map(|r| locality_window(r, &hops, LOCALITY_WINDOW)).collect();
    let locality = rows.iter().map(|r| locality_index(r, &hops, LOCALITY_WINDOW)).collect();
    let mut perm_rng = rng_from_seed(derive_seed(seed, 22));
    let mut control = 0.0;
    for _ in 0..CONTROL_PERMUTATIONS {
        let mut sum = 0.0;
        for r in &rows {
            let mut shuffled = r.clone();
            shuffled.shuffle(&mut perm_rng);
            sum += locality_index(&shuffled, &hops, LOCALITY_WINDOW);
        }
        control += sum / m as f64;
    }
    let out = LocalityMatrix {
        rows,
        top_joints,
        locality_index: locality,
        control_index: control / CONTROL_PERMUTATIONS as f64,
        nonempty_fraction: nonempty as f64 / (m * swaps) as f64,
    };
    if out.rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("locality matrix".into()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posedata::generate_pose;
    use crate::tokenizer::TokenizerConfig;

    fn random_tokenizer() -> TokenizerModel {
        TokenizerModel::new(TokenizerConfig::default(), &mut rng_from_seed(4)).unwrap()
    }

    #[test]
    fn self_swap_is_a_no_op() {
        let tok = random_tokenizer();
        let pose = generate_pose(&Skeleton::mpii16(), 1).unwrap();
        let cur = tok.tokenize(&pose).unwrap().0[3];
        let (before, after) = swap_token(&tok, &pose, 3, cur).unwrap();
        assert_eq!(before, after);
        let (_, other) = swap_token(&tok, &pose, 3, (cur + 1) % 128).unwrap();
        assert!(other.coords().iter().all(|c| c.is_finite()));
        assert_eq!(other.num_joints(), 16);
        assert!(swap_token(&tok, &pose, 8, 0).is_err());
    }

    #[test]
    fn window_follows_the_skeleton() {
        let s = Skeleton::mpii16();
        let hops = s.hop_distances();
        let mut row = vec![0.0; 16];
        row[5] = 1.0;
        let w = locality_window(&row, &hops, 4);
        assert_eq!(w[0], 5);
        assert_eq!(w.len(), 4);
        for pair in w.windows(2).skip(1) {
            assert!(hops[5][pair[0]] <= hops[5][pair[1]]);
        }
        assert_eq!(locality_index(&row, &hops, 4), 1.0);
        assert_eq!(locality_index(&[0.0; 16], &hops, 4), 0.0);
    }

    #[test]
    fn random_model_matrix_is_finite_and_reproducible() {
        let s = Skeleton::mpii16();
        let tok = random_tokenizer();
        let poses: Vec<Pose> = (0..6).map(|i| generate_pose(&s, i).unwrap()).collect();
        let a = locality_matrix(&tok, &s, &poses, 4, 9).unwrap();
        let b = locality_matrix(&tok, &s, &poses, 4, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 8);
        assert!(a.rows.iter().flatten().all(|x| x.is_finite() && *x >= 0.0));
        assert!((0.0..=1.0).contains(&a.control_index));
        assert!(a.to_csv().unwrap().lines().count() == 9);
    }

    #[test]
    fn swap_plan_never_keeps_the_current_entry() {
        let s = Skeleton::mpii16();
        let tok = random_tokenizer();
        let poses: Vec<Pose> = (0..3).map(|i| generate_pose(&s, i).unwrap()).collect();
        let plan = swap_plan(&tok, &poses, 5, 1).unwrap();
        assert_eq!(plan.len(), 8 * 5);
        for e in &plan {
            assert_eq!(e.pose, e.swap % 3);
            assert_ne!(tok.tokenize(&poses[e.pose]).unwrap().0[e.token], e.entry);
        }
        assert_eq!(plan, swap_plan(&tok, &poses, 5, 1).unwrap());
    }

    #[test]
    fn zero_swaps_is_an_error() {
        let s = Skeleton::mpii16();
        let poses = vec![generate_pose(&s, 0).unwrap()];
        assert!(locality_matrix(&random_tokenizer(), &s, &poses, 0, 0).is_err());
    }
}
