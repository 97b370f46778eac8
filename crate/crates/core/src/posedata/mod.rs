//! Synthetic articulated poses: skeletons, forward kinematics, unit-box
//! normalization, joint masking, JSONL datasets and SVG rendering.

mod io;
mod pose;
mod skeleton;
mod svg;

pub use io::{load_jsonl, load_pose_records, save_jsonl, save_pose_records};
pub use pose::{
    denormalize, generate_pose, mask_joints, normalize, raw_pose, sample_angles, BoundingBox,
    Pose, SampledAngles,
};
pub use skeleton::Skeleton;
pub use svg::{render_svg, svg_string, HIGHLIGHT_COLOR};

use crate::error::Result;
use crate::rng::derive_seed;

/// Train/val/test poses generated from one seed.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub skeleton: Skeleton,
    pub seed: u64,
    pub train: Vec<Pose>,
    pub val: Vec<Pose>,
    pub test: Vec<Pose>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn stream(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

/// Seed of the `index`-th pose of a split. Each split draws from its own
/// stream, so splits never share a pose seed.
pub fn pose_seed(seed: u64, split: Split, index: usize) -> u64 {
    derive_seed(derive_seed(seed, split.stream()), index as u64)
}

impl DatasetSplit {
    /// Pure function of `(skeleton, seed, sizes)`.
    pub fn generate(
        skeleton: &Skeleton,
        seed: u64,
        n_train: usize,
        n_val: usize,
        n_test: usize,
    ) -> Result<Self> {
        skeleton.validate()?;
        let gen = |split: Split, n: usize| -> Result<Vec<Pose>> {
            (0..n)
                .map(|i| generate_pose(skeleton, pose_seed(seed, split, i)))
                .collect()
        };
        Ok(DatasetSplit {
            skeleton: skeleton.clone(),
            seed,
            train: gen(Split::Train, n_train)?,
            val: gen(Split::Val, n_val)?,
            test: gen(Split::Test, n_test)?,
        })
    }

    pub fn num_joints(&self) -> usize {
        self.skeleton.num_joints()
    }

    pub fn dim(&self) -> usize {
        self.skeleton.dim
    }

    pub fn split(&self, which: Split) -> &[Pose] {
        match which {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}
