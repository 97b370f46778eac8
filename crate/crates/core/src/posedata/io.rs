//! JSON Lines dataset files.
//!
//! Line 1 is a header `{"k","d","skeleton","seed","splits":[train,val,test]}`;
//! every following line is one pose `{"joints":[[..],..],"vis":[..]}`,
//! train records first, then val, then test. A header without `splits`
//! puts every record in train.

use super::{DatasetSplit, Pose, Skeleton};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    k: usize,
    d: usize,
    skeleton: String,
    seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    splits: Option<[usize; 3]>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    joints: Vec<Vec<f64>>,
    vis: Vec<bool>,
}

pub fn save_jsonl(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = Header {
        k: split.num_joints(),
        d: split.dim(),
        skeleton: split.skeleton.name.clone(),
        seed: split.seed,
        splits: Some([split.train.len(), split.val.len(), split.test.len()]),
    };
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for pose in split.train.iter().chain(&split.val).chain(&split.test) {
        write_pose(&mut w, pose)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn write_pose(w: &mut impl Write, pose: &Pose) -> Result<()> {
    let rec = Record {
        joints: pose.coords().chunks_exact(pose.dim()).map(<[f64]>::to_vec).collect(),
        vis: pose.vis().to_vec(),
    };
    serde_json::to_writer(&mut *w, &rec)?;
    w.write_all(b"\n")?;
    Ok(())
}

pub fn load_jsonl(path: &Path) -> Result<DatasetSplit> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, line)) => serde_json::from_str(&line?).map_err(|e| Error::Parse {
            line: 1,
            msg: format!("bad header: {e}"),
        })?,
        None => {
            return Err(Error::Parse {
                line: 1,
                msg: "empty file, missing header".into(),
            })
        }
    };
    let skeleton = Skeleton::by_name(&header.skeleton).ok_or_else(|| Error::Schema {
        line: 1,
        msg: format!("unknown skeleton {:?}", header.skeleton),
    })?;
    if skeleton.num_joints() != header.k || skeleton.dim != header.d {
        return Err(Error::Schema {
            line: 1,
            msg: format!(
                "header k={} d={} does not match skeleton {}",
                header.k, header.d, skeleton.name
            ),
        });
    }
    let mut poses = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: lineno,
            msg: e.to_string(),
        })?;
        poses.push(parse_record(rec, header.k, header.d, lineno)?);
    }
    let [n_train, n_val, n_test] = header.splits.unwrap_or([poses.len(), 0, 0]);
    if n_train + n_val + n_test != poses.len() {
        return Err(Error::Schema {
            line: 1,
            msg: format!(
                "header announces {} records, file has {}",
                n_train + n_val + n_test,
                poses.len()
            ),
        });
    }
    let test = poses.split_off(n_train + n_val);
    let val = poses.split_off(n_train);
    Ok(DatasetSplit {
        skeleton,
        seed: header.seed,
        train: poses,
        val,
        test,
    })
}

fn parse_record(rec: Record, k: usize, d: usize, line: usize) -> Result<Pose> {
    if rec.joints.len() != k || rec.vis.len() != k {
        return Err(Error::Schema {
            line,
            msg: format!(
                "expected {k} joints, got {} coordinates and {} vis flags",
                rec.joints.len(),
                rec.vis.len()
            ),
        });
    }
    if let Some(bad) = rec.joints.iter().position(|j| j.len() != d) {
        return Err(Error::Schema {
            line,
            msg: format!("joint {bad} has {} coordinates, expected {d}", rec.joints[bad].len()),
        });
    }
    let coords: Vec<f64> = rec.joints.into_iter().flatten().collect();
    Pose::new(k, d, coords, rec.vis)
}

/// Write bare pose records (no header); used for decoded/predicted poses.
pub fn save_pose_records(poses: &[Pose], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in poses {
        write_pose(&mut w, p)?;
    }
    w.flush()?;
    Ok(())
}

/// Read bare pose records written by [`save_pose_records`].
pub fn load_pose_records(path: &Path, k: usize, d: usize) -> Result<Vec<Pose>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(parse_record(rec, k, d, idx + 1)?);
    }
    Ok(out)
}
