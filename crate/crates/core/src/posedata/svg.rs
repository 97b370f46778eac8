//! Minimal SVG 1.1 renderer for skeleton overlays, viewBox `0 0 1 1`.
//!
//! Every pose is a `<g>` holding one `<line>` per skeleton edge and one
//! `<circle>` per joint. Earlier poses are drawn in black, the last one in
//! blue; highlights apply to the joints of the last pose.

use super::{Pose, Skeleton};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub const HIGHLIGHT_COLOR: &str = "orange";

const STROKE: f64 = 0.006;
const RADIUS: f64 = 0.008;

/// `highlights[k] = Some(color)` paints joint `k` of the last pose.
pub fn svg_string(
    poses: &[Pose],
    skeleton: &Skeleton,
    highlights: Option<&[Option<String>]>,
) -> Result<String> {
    if poses.is_empty() {
        return Err(Error::InvalidArgument("render_svg needs at least one pose".into()));
    }
    let k = skeleton.num_joints();
    if let Some(bad) = poses.iter().find(|p| p.num_joints() != k || p.dim() < 2) {
        return Err(Error::shape("render_svg", &[k, 2], &[bad.num_joints(), bad.dim()]));
    }
    if let Some(h) = highlights {
        if h.len() != k {
            return Err(Error::shape("render_svg highlights", &[k], &[h.len()]));
        }
    }
    let mut s = String::new();
    s.push_str(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         viewBox=\"0 0 1 1\" width=\"400\" height=\"400\">\n\
         <rect x=\"0\" y=\"0\" width=\"1\" height=\"1\" fill=\"white\"/>\n",
    );
    let last = poses.len() - 1;
    for (i, pose) in poses.iter().enumerate() {
        let color = if i == last { "steelblue" } else { "black" };
        writeln!(s, "<g class=\"pose\" id=\"pose{i}\" stroke=\"{color}\">").unwrap();
        for &(a, b) in &skeleton.edges {
            let (pa, pb) = (pose.joint(a), pose.joint(b));
            writeln!(
                s,
                "<line x1=\"{:.6}\" y1=\"{:.6}\" x2=\"{:.6}\" y2=\"{:.6}\" stroke-width=\"{STROKE}\"/>",
                pa[0], pa[1], pb[0], pb[1]
            )
            .unwrap();
        }
        for j in 0..k {
            let p = pose.joint(j);
            let tag = highlights
                .filter(|_| i == last)
                .and_then(|h| h[j].as_deref());
            match tag {
                Some(c) => writeln!(
                    s,
                    "<circle cx=\"{:.6}\" cy=\"{:.6}\" r=\"{RADIUS}\" fill=\"{c}\" class=\"highlight\"/>",
                    p[0], p[1]
                ),
                None => writeln!(
                    s,
                    "<circle cx=\"{:.6}\" cy=\"{:.6}\" r=\"{RADIUS}\" fill=\"{color}\"/>",
                    p[0], p[1]
                ),
            }
            .unwrap();
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_svg(
    poses: &[Pose],
    skeleton: &Skeleton,
    highlights: Option<&[Option<String>]>,
    path: &Path,
) -> Result<()> {
    let s = svg_string(poses, skeleton, highlights)?;
    std::fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posedata::generate_pose;

    #[test]
    fn element_counts() {
        let sk = Skeleton::mpii16();
        let rest = generate_pose(&sk.collapsed(), 0).unwrap();
        let s = svg_string(&[rest.clone()], &sk, None).unwrap();
        assert_eq!(s.matches("<circle").count(), 16);
        assert_eq!(s.matches("<line").count(), sk.edges.len());
        assert!(s.contains("viewBox=\"0 0 1 1\""));

        let s = svg_string(&[rest.clone(), rest], &sk, None).unwrap();
        assert_eq!(s.matches("<g class=\"pose\"").count(), 2);
    }

    #[test]
    fn highlights_only_tagged_joints() {
        let sk = Skeleton::mpii16();
        let p = generate_pose(&sk, 1).unwrap();
        let mut h = vec![None; 16];
        h[3] = Some(HIGHLIGHT_COLOR.to_string());
        h[4] = Some(HIGHLIGHT_COLOR.to_string());
        let s = svg_string(&[p], &sk, Some(&h)).unwrap();
        let tagged: Vec<&str> = s
            .lines()
            .filter(|l| l.contains(&format!("fill=\"{HIGHLIGHT_COLOR}\"")))
            .collect();
        assert_eq!(tagged.len(), 2);
    }

    #[test]
    fn empty_list_is_an_error() {
        assert!(svg_string(&[], &Skeleton::mpii16(), None).is_err());
    }
}
