//! JSON-lines demonstration datasets, one record per timestep.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DiffusionError;
use crate::geometry::{GeometryError, Pose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub t: f64,
    /// `[tx, ty, tz, qw, qx, qy, qz]`.
    pub object_pose: [f64; 7],
    pub ee_pose: [f64; 7],
    pub scenario: String,
    pub demo_id: u64,
}

impl DatasetRecord {
    pub fn new(t: f64, object_pose: &Pose, ee_pose: &Pose, scenario: &str, demo_id: u64) -> Self {
        Self {
            t,
            object_pose: object_pose.to_array7(),
            ee_pose: ee_pose.to_array7(),
            scenario: scenario.to_string(),
            demo_id,
        }
    }

    pub fn poses(&self) -> Result<(Pose, Pose), GeometryError> {
        Ok((Pose::from_array7(&self.object_pose)?, Pose::from_array7(&self.ee_pose)?))
    }
}

/// One demonstration, frames in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Demo {
    pub demo_id: u64,
    pub scenario: String,
    pub times: Vec<f64>,
    pub object_poses: Vec<Pose>,
    pub ee_poses: Vec<Pose>,
}

pub fn write_dataset(path: impl AsRef<Path>, records: &[DatasetRecord]) -> Result<(), DiffusionError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Vec<DatasetRecord>, DiffusionError> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// Splits records by demo id, keeping first-appearance order and sorting
/// each demo by time.
pub fn group_demos(records: &[DatasetRecord]) -> Result<Vec<Demo>, DiffusionError> {
    let mut demos: Vec<Demo> = Vec::new();
    for r in records {
        let at = match demos.iter().position(|d| d.demo_id == r.demo_id) {
            Some(i) => i,
            None => {
                demos.push(Demo {
                    demo_id: r.demo_id,
                    scenario: r.scenario.clone(),
                    times: vec![],
                    object_poses: vec![],
                    ee_poses: vec![],
                });
                demos.len() - 1
            }
        };
        let (object_pose, ee_pose) = r.poses()?;
        let d = &mut demos[at];
        d.times.push(r.t);
        d.object_poses.push(object_pose);
        d.ee_poses.push(ee_pose);
    }
    for d in &mut demos {
        let mut idx: Vec<usize> = (0..d.times.len()).collect();
        idx.sort_by(|&a, &b| d.times[a].total_cmp(&d.times[b]));
        d.times = idx.iter().map(|&i| d.times[i]).collect();
        d.object_poses = idx.iter().map(|&i| d.object_poses[i]).collect();
        d.ee_poses = idx.iter().map(|&i| d.ee_poses[i]).collect();
    }
    Ok(demos)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    #[test]
    fn jsonl_round_trip_and_grouping() {
        let rec = |demo_id, t: f64| {
            DatasetRecord::new(
                t,
                &Pose::from_translation(Vector3::new(t, 0.0, 0.0)),
                &Pose::identity(),
                "linear",
                demo_id,
            )
        };
        let records = vec![rec(1, 0.1), rec(0, 0.0), rec(1, 0.0), rec(0, 0.1)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        write_dataset(&path, &records).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"object_pose\":[0.1,0.0,0.0,1.0,0.0,0.0,0.0]"));
        let back = read_dataset(&path).unwrap();
        assert_eq!(back, records);
        let demos = group_demos(&back).unwrap();
        assert_eq!(demos.len(), 2);
        assert_eq!(demos[0].demo_id, 1);
        assert_eq!(demos[0].times, vec![0.0, 0.1]);
    }
}
