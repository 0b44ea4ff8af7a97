//! Timestamped trajectories and their text format.
//!
//! One frame per line: `timestamp tx ty tz qx qy qz qw`, world-from-camera,
//! quaternion scalar-last. Lines starting with `#` are comments.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::geometry::{Pose, Vec3};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("timestamps must be strictly increasing (line {line})")]
    NotIncreasing { line: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stamped {
    pub timestamp: f64,
    pub pose: Pose,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    frames: Vec<Stamped>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trajectory, checking that timestamps increase strictly.
    pub fn from_frames(frames: Vec<Stamped>) -> Result<Self, TrajectoryError> {
        for (i, w) in frames.windows(2).enumerate() {
            if !(w[1].timestamp > w[0].timestamp) {
                return Err(TrajectoryError::NotIncreasing { line: i + 2 });
            }
        }
        Ok(Self { frames })
    }

    pub fn push(&mut self, timestamp: f64, pose: Pose) -> Result<(), TrajectoryError> {
        if let Some(last) = self.frames.last() {
            if !(timestamp > last.timestamp) {
                return Err(TrajectoryError::NotIncreasing {
                    line: self.frames.len() + 1,
                });
            }
        }
        self.frames.push(Stamped { timestamp, pose });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Stamped] {
        &self.frames
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.frames.iter().map(|f| &f.pose)
    }

    pub fn pose(&self, i: usize) -> &Pose {
        &self.frames[i].pose
    }

    pub fn set_pose(&mut self, i: usize, pose: Pose) {
        self.frames[i].pose = pose;
    }

    /// Applies `transform ∘ pose` to every frame.
    pub fn transformed(&self, transform: &Pose) -> Trajectory {
        Trajectory {
            frames: self
                .frames
                .iter()
                .map(|f| Stamped {
                    timestamp: f.timestamp,
                    pose: transform.compose(&f.pose),
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, TrajectoryError> {
        let mut traj = Trajectory::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals = line
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| TrajectoryError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            if vals.len() != 8 {
                return Err(TrajectoryError::Parse {
                    line: i + 1,
                    msg: format!("expected 8 fields, found {}", vals.len()),
                });
            }
            let qn = (vals[4] * vals[4] + vals[5] * vals[5] + vals[6] * vals[6] + vals[7] * vals[7]).sqrt();
            if !(qn > 1e-12) || vals.iter().any(|v| !v.is_finite()) {
                return Err(TrajectoryError::Parse {
                    line: i + 1,
                    msg: "non-finite value or zero quaternion".into(),
                });
            }
            let pose = Pose::from_xyzw(
                Vec3::new(vals[1], vals[2], vals[3]),
                [vals[4], vals[5], vals[6], vals[7]],
            );
            traj.push(vals[0], pose)
                .map_err(|_| TrajectoryError::NotIncreasing { line: i + 1 })?;
        }
        Ok(traj)
    }

    pub fn load(path: &Path) -> Result<Self, TrajectoryError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Text form. Values use the shortest representation that round-trips.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for f in &self.frames {
            let t = f.pose.translation;
            let q = f.pose.quaternion_xyzw();
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {}",
                f.timestamp, t.x, t.y, t.z, q[0], q[1], q[2], q[3]
            );
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), TrajectoryError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}
