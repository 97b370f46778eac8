use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_2;

/// Kinematic tree used by the synthetic generator.
///
/// Angles are relative: a joint's absolute in-plane direction is its
/// parent's absolute direction plus its own sampled angle. The root has no
/// bone; its angle sets the global orientation. Coordinates follow image
/// convention (y grows downward), so "up" is `-pi/2`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub name: String,
    /// Output dimensionality of generated poses (2 or 3).
    pub dim: usize,
    pub joint_names: Vec<String>,
    /// Parent of each joint; `None` only for the root, joint 0.
    pub parent: Vec<Option<usize>>,
    pub bone_length: Vec<f64>,
    /// Canonical (rest) in-plane angle per joint.
    pub rest_angle: Vec<f64>,
    /// Sampling bounds for the in-plane angle.
    pub angle_range: Vec<(f64, f64)>,
    /// Sampling bounds for the out-of-plane angle; all zero for 2D.
    pub elevation_range: Vec<(f64, f64)>,
    /// Segments drawn by the renderer.
    pub edges: Vec<(usize, usize)>,
}

struct JointSpec {
    name: &'static str,
    parent: Option<usize>,
    length: f64,
    rest: f64,
    lo: f64,
    hi: f64,
    elev: f64,
}

const fn j(
    name: &'static str,
    parent: Option<usize>,
    length: f64,
    rest: f64,
    lo: f64,
    hi: f64,
    elev: f64,
) -> JointSpec {
    JointSpec {
        name,
        parent,
        length,
        rest,
        lo,
        hi,
        elev,
    }
}

const P2: f64 = FRAC_PI_2;

// 16 joints, MPII-like: pelvis root, spine chain, two arms, two legs.
const MPII16: [JointSpec; 16] = [
    j("pelvis", None, 0.0, -P2, -P2 - 0.35, -P2 + 0.35, 0.0),
    j("thorax", Some(0), 0.50, 0.0, -0.25, 0.25, 0.2),
    j("upper_neck", Some(1), 0.20, 0.0, -0.30, 0.30, 0.3),
    j("head_top", Some(2), 0.20, 0.0, -0.40, 0.40, 0.3),
    j("r_shoulder", Some(1), 0.20, P2, P2 - 0.15, P2 + 0.15, 0.2),
    j("r_elbow", Some(4), 0.30, P2, P2 - 1.40, P2 + 0.60, 0.6),
    j("r_wrist", Some(5), 0.27, 0.0, -1.80, 0.10, 0.6),
    j("l_shoulder", Some(1), 0.20, -P2, -P2 - 0.15, -P2 + 0.15, 0.2),
    j("l_elbow", Some(7), 0.30, -P2, -P2 - 0.60, -P2 + 1.40, 0.6),
    j("l_wrist", Some(8), 0.27, 0.0, -0.10, 1.80, 0.6),
    j("r_hip", Some(0), 0.12, P2, P2 - 0.10, P2 + 0.10, 0.1),
    j("r_knee", Some(10), 0.45, P2, P2 - 0.90, P2 + 0.40, 0.4),
    j("r_ankle", Some(11), 0.42, 0.0, -0.05, 1.50, 0.3),
    j("l_hip", Some(0), 0.12, -P2, -P2 - 0.10, -P2 + 0.10, 0.1),
    j("l_knee", Some(13), 0.45, -P2, -P2 - 0.40, -P2 + 0.90, 0.4),
    j("l_ankle", Some(14), 0.42, 0.0, -1.50, 0.05, 0.3),
];

impl Skeleton {
    /// Default 2D skeleton with 16 joints.
    pub fn mpii16() -> Self {
        Self::build("mpii16", 2)
    }

    /// Same topology with out-of-plane freedom, generating 3D poses.
    pub fn mpii16_3d() -> Self {
        Self::build("mpii16-3d", 3)
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "mpii16" => Some(Self::mpii16()),
            "mpii16-3d" => Some(Self::mpii16_3d()),
            _ => None,
        }
    }

    fn build(name: &str, dim: usize) -> Self {
        let elev = |e: f64| if dim == 3 { (-e, e) } else { (0.0, 0.0) };
        Skeleton {
            name: name.to_string(),
            dim,
            joint_names: MPII16.iter().map(|s| s.name.to_string()).collect(),
            parent: MPII16.iter().map(|s| s.parent).collect(),
            bone_length: MPII16.iter().map(|s| s.length).collect(),
            rest_angle: MPII16.iter().map(|s| s.rest).collect(),
            angle_range: MPII16.iter().map(|s| (s.lo, s.hi)).collect(),
            elevation_range: MPII16.iter().map(|s| elev(s.elev)).collect(),
            edges: MPII16
                .iter()
                .enumerate()
                .filter_map(|(k, s)| s.parent.map(|p| (p, k)))
                .collect(),
        }
    }

    pub fn num_joints(&self) -> usize {
        self.parent.len()
    }

    /// Copy with every sampling range collapsed onto the rest angle.
    pub fn collapsed(&self) -> Self {
        let mut s = self.clone();
        s.angle_range = s.rest_angle.iter().map(|&a| (a, a)).collect();
        s.elevation_range = vec![(0.0, 0.0); s.num_joints()];
        s
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.num_joints();
        let bad = |msg: String| Err(Error::InvalidArgument(format!("skeleton {}: {msg}", self.name)));
        if k < 2 {
            return bad("need at least two joints".into());
        }
        if self.dim != 2 && self.dim != 3 {
            return bad(format!("dim must be 2 or 3, got {}", self.dim));
        }
        for (what, len) in [
            ("bone_length", self.bone_length.len()),
            ("rest_angle", self.rest_angle.len()),
            ("angle_range", self.angle_range.len()),
            ("elevation_range", self.elevation_range.len()),
            ("joint_names", self.joint_names.len()),
        ] {
            if len != k {
                return bad(format!("{what} has {len} entries for {k} joints"));
            }
        }
        if self.parent[0].is_some() {
            return bad("joint 0 must be the root".into());
        }
        for i in 1..k {
            match self.parent[i] {
                Some(p) if p < i => {}
                _ => return bad(format!("joint {i} needs a parent with a smaller index")),
            }
            if !(self.bone_length[i] > 0.0) {
                return bad(format!("joint {i} has non-positive bone length"));
            }
        }
        for i in 0..k {
            let (lo, hi) = self.angle_range[i];
            let (elo, ehi) = self.elevation_range[i];
            if !(lo <= hi) || !(elo <= ehi) {
                return bad(format!("joint {i} has an empty angle range"));
            }
            if self.dim == 2 && (elo != 0.0 || ehi != 0.0) {
                return bad(format!("joint {i}: 2D skeletons cannot have elevation"));
            }
        }
        for &(a, b) in &self.edges {
            if a >= k || b >= k {
                return bad(format!("edge ({a},{b}) out of range"));
            }
        }
        Ok(())
    }

    /// Undirected joint adjacency from the parent links.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.num_joints()];
        for (k, p) in self.parent.iter().enumerate() {
            if let Some(p) = *p {
                adj[k].push(p);
                adj[p].push(k);
            }
        }
        adj
    }

    /// All-pairs hop distance in the kinematic tree.
    pub fn hop_distances(&self) -> Vec<Vec<usize>> {
        let adj = self.neighbors();
        let k = self.num_joints();
        (0..k)
            .map(|src| {
                let mut dist = vec![usize::MAX; k];
                let mut queue = std::collections::VecDeque::from([src]);
                dist[src] = 0;
                while let Some(u) = queue.pop_front() {
                    for &v in &adj[u] {
                        if dist[v] == usize::MAX {
                            dist[v] = dist[u] + 1;
                            queue.push_back(v);
                        }
                    }
                }
                dist
            })
            .collect()
    }

    /// Forward kinematics in 3D from per-joint angles. Returns `K x 3`
    /// positions with the root at the origin.
    pub fn forward_kinematics(&self, angles: &[f64], elevations: &[f64]) -> Vec<[f64; 3]> {
        let k = self.num_joints();
        let mut pos = vec![[0.0; 3]; k];
        let mut theta = vec![0.0; k];
        let mut phi = vec![0.0; k];
        theta[0] = angles[0];
        phi[0] = elevations[0];
        for i in 1..k {
            let p = self.parent[i].expect("validated tree");
            theta[i] = theta[p] + angles[i];
            phi[i] = phi[p] + elevations[i];
            let l = self.bone_length[i];
            pos[i] = [
                pos[p][0] + l * phi[i].cos() * theta[i].cos(),
                pos[p][1] + l * phi[i].cos() * theta[i].sin(),
                pos[p][2] + l * phi[i].sin(),
            ];
        }
        pos
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_skeletons_validate() {
        Skeleton::mpii16().validate().unwrap();
        Skeleton::mpii16_3d().validate().unwrap();
        assert_eq!(Skeleton::mpii16().num_joints(), 16);
        assert_eq!(Skeleton::mpii16().edges.len(), 15);
    }

    #[test]
    fn validation_catches_bad_trees() {
        let mut s = Skeleton::mpii16();
        s.parent[3] = Some(5);
        assert!(s.validate().is_err());
        let mut s = Skeleton::mpii16();
        s.bone_length[4] = 0.0;
        assert!(s.validate().is_err());
        let mut s = Skeleton::mpii16();
        s.angle_range[2] = (1.0, 0.0);
        assert!(s.validate().is_err());
    }

    #[test]
    fn hop_distances_are_symmetric() {
        let d = Skeleton::mpii16().hop_distances();
        for a in 0..16 {
            assert_eq!(d[a][a], 0);
            for b in 0..16 {
                assert_eq!(d[a][b], d[b][a]);
            }
        }
        // wrist -> pelvis: wrist, elbow, shoulder, thorax, pelvis
        assert_eq!(d[6][0], 4);
    }
}
