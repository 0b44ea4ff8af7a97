//! On-disk dataset layout.
//!
//! ```text
//! intrinsics.txt            fx fy cx cy width height
//! groundtruth.txt           trajectory
//! initial.txt               trajectory used to initialize the solver
//! frames/NNNNNN.pfm         grayscale image, linear [0, 1]
//! frames/NNNNNN.depth.pfm   depth in meters, 0 = invalid
//! frames/NNNNNN.rough.pfm   roughness in [0, 1]
//! frames/NNNNNN.normal.pfm  camera-frame unit normals, optional
//! controls/control_points.txt   one "id x y z" line per control
//! controls/NNN.env.pfm      equirectangular RGB radiance for control id NNN
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::control::ControlPoint;
use crate::geometry::{Intrinsics, Vec3};
use crate::grid::{Grid, Image};
use crate::pfm::{self, PfmError};
use crate::radiance::EnvironmentMap;
use crate::trajectory::{Trajectory, TrajectoryError};

pub const INTRINSICS_FILE: &str = "intrinsics.txt";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const INITIAL_FILE: &str = "initial.txt";
pub const FRAMES_DIR: &str = "frames";
pub const CONTROLS_DIR: &str = "controls";
pub const CONTROLS_FILE: &str = "control_points.txt";

/// Tolerance on normal length when validating normal maps.
const NORMAL_UNIT_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Pfm { path: PathBuf, source: PfmError },
    #[error("{path}: {source}")]
    Trajectory { path: PathBuf, source: TrajectoryError },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("inconsistent dataset: {0}")]
    Inconsistent(String),
}

/// Per-frame channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub image: Image,
    pub depth: Image,
    pub roughness: Image,
    pub normals: Option<Grid<Vec3>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub intrinsics: Intrinsics,
    pub groundtruth: Trajectory,
    pub initial: Trajectory,
    pub frames: Vec<FrameData>,
    pub controls: Vec<ControlPoint>,
    /// Indexed by `ControlPoint::envmap_id`.
    pub envmaps: Vec<EnvironmentMap>,
}

pub fn frame_stem(i: usize) -> String {
    format!("{i:06}")
}

pub fn image_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("{}.pfm", frame_stem(i)))
}

pub fn depth_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("{}.depth.pfm", frame_stem(i)))
}

pub fn roughness_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("{}.rough.pfm", frame_stem(i)))
}

pub fn normal_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("{}.normal.pfm", frame_stem(i)))
}

pub fn envmap_path(dir: &Path, id: usize) -> PathBuf {
    dir.join(CONTROLS_DIR).join(format!("{id:03}.env.pfm"))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn pfm_err(path: &Path) -> impl FnOnce(PfmError) -> DatasetError + '_ {
    move |source| DatasetError::Pfm {
        path: path.to_path_buf(),
        source,
    }
}

fn traj_err(path: &Path) -> impl FnOnce(TrajectoryError) -> DatasetError + '_ {
    move |source| DatasetError::Trajectory {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

pub fn intrinsics_to_text(k: &Intrinsics) -> String {
    format!("{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height)
}

pub fn parse_intrinsics(text: &str) -> Result<Intrinsics, String> {
    let tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() != 6 {
        return Err(format!("expected 6 values, found {}", tokens.len()));
    }
    let f = |i: usize| {
        tokens[i]
            .parse::<f64>()
            .map_err(|_| format!("bad number {:?}", tokens[i]))
    };
    let u = |i: usize| {
        tokens[i]
            .parse::<usize>()
            .map_err(|_| format!("bad size {:?}", tokens[i]))
    };
    Intrinsics::new(f(0)?, f(1)?, f(2)?, f(3)?, u(4)?, u(5)?).map_err(|e| e.to_string())
}

pub fn controls_to_text(controls: &[ControlPoint]) -> String {
    let mut s = String::from("# id x y z\n");
    for c in controls {
        let p = c.position;
        let _ = writeln!(s, "{} {} {} {}", c.envmap_id, p.x, p.y, p.z);
    }
    s
}

pub fn parse_controls(text: &str) -> Result<Vec<ControlPoint>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let t: Vec<&str> = line.split_whitespace().collect();
        if t.len() != 4 {
            return Err(format!("line {}: expected 4 values", n + 1));
        }
        let id = t[0]
            .parse::<usize>()
            .map_err(|_| format!("line {}: bad id {:?}", n + 1, t[0]))?;
        let mut xyz = [0.0; 3];
        for (k, v) in xyz.iter_mut().enumerate() {
            *v = t[k + 1]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("line {}: bad coordinate {:?}", n + 1, t[k + 1]))?;
        }
        out.push(ControlPoint {
            position: Vec3::from(xyz),
            envmap_id: id,
        });
    }
    Ok(out)
}

fn normals_to_rgb(n: &Grid<Vec3>) -> Grid<[f32; 3]> {
    n.map(|v| [v.x as f32, v.y as f32, v.z as f32])
}

fn rgb_to_normals(g: &Grid<[f32; 3]>) -> Grid<Vec3> {
    g.map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64))
}

fn read_text(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(io_err(path))
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let kp = dir.join(INTRINSICS_FILE);
        let intrinsics = parse_intrinsics(&read_text(&kp)?).map_err(|r| format_err(&kp, r))?;
        let gp = dir.join(GROUNDTRUTH_FILE);
        let groundtruth = Trajectory::load(&gp).map_err(traj_err(&gp))?;
        let ip = dir.join(INITIAL_FILE);
        let initial = Trajectory::load(&ip).map_err(traj_err(&ip))?;
        if initial.len() != groundtruth.len() {
            return Err(DatasetError::Inconsistent(format!(
                "{} has {} poses, {} has {}",
                INITIAL_FILE,
                initial.len(),
                GROUNDTRUTH_FILE,
                groundtruth.len()
            )));
        }
        let sized = |path: &Path, w: usize, h: usize| -> Result<(), DatasetError> {
            if w != intrinsics.width || h != intrinsics.height {
                return Err(format_err(
                    path,
                    format!(
                        "size {w}x{h} differs from intrinsics {}x{}",
                        intrinsics.width, intrinsics.height
                    ),
                ));
            }
            Ok(())
        };
        let mut frames = Vec::with_capacity(initial.len());
        for i in 0..initial.len() {
            let gray = |p: PathBuf| -> Result<Image, DatasetError> {
                let g = pfm::read_gray(&p).map_err(pfm_err(&p))?;
                sized(&p, g.width(), g.height())?;
                Ok(g)
            };
            let image = gray(image_path(dir, i))?;
            let depth = gray(depth_path(dir, i))?;
            let roughness = gray(roughness_path(dir, i))?;
            let np = normal_path(dir, i);
            let normals = if np.exists() {
                let g = pfm::read_rgb(&np).map_err(pfm_err(&np))?;
                sized(&np, g.width(), g.height())?;
                Some(rgb_to_normals(&g))
            } else {
                None
            };
            frames.push(FrameData {
                image,
                depth,
                roughness,
                normals,
            });
        }
        let cp = dir.join(CONTROLS_DIR).join(CONTROLS_FILE);
        let mut controls = parse_controls(&read_text(&cp)?).map_err(|r| format_err(&cp, r))?;
        controls.sort_by_key(|c| c.envmap_id);
        let mut envmaps = Vec::with_capacity(controls.len());
        for (i, c) in controls.iter().enumerate() {
            if c.envmap_id != i {
                return Err(format_err(
                    &cp,
                    format!("ids must be 0..{} without gaps", controls.len()),
                ));
            }
            let ep = envmap_path(dir, i);
            let rgb = pfm::read_rgb(&ep).map_err(pfm_err(&ep))?;
            envmaps.push(EnvironmentMap::new(rgb).map_err(|e| format_err(&ep, e.to_string()))?);
        }
        Ok(Self {
            intrinsics,
            groundtruth,
            initial,
            frames,
            controls,
            envmaps,
        })
    }

    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        if self.initial.len() != self.frames.len() || self.groundtruth.len() != self.frames.len() {
            return Err(DatasetError::Inconsistent(format!(
                "{} frames, {} ground-truth poses, {} initial poses",
                self.frames.len(),
                self.groundtruth.len(),
                self.initial.len()
            )));
        }
        if self.envmaps.len() != self.controls.len() {
            return Err(DatasetError::Inconsistent(format!(
                "{} controls but {} environment maps",
                self.controls.len(),
                self.envmaps.len()
            )));
        }
        for sub in [FRAMES_DIR, CONTROLS_DIR] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(io_err(&p))?;
        }
        let kp = dir.join(INTRINSICS_FILE);
        fs::write(&kp, intrinsics_to_text(&self.intrinsics)).map_err(io_err(&kp))?;
        let gp = dir.join(GROUNDTRUTH_FILE);
        self.groundtruth.save(&gp).map_err(traj_err(&gp))?;
        let ip = dir.join(INITIAL_FILE);
        self.initial.save(&ip).map_err(traj_err(&ip))?;
        for (i, f) in self.frames.iter().enumerate() {
            let p = image_path(dir, i);
            pfm::write_gray(&p, &f.image).map_err(pfm_err(&p))?;
            let p = depth_path(dir, i);
            pfm::write_gray(&p, &f.depth).map_err(pfm_err(&p))?;
            let p = roughness_path(dir, i);
            pfm::write_gray(&p, &f.roughness).map_err(pfm_err(&p))?;
            if let Some(n) = &f.normals {
                let p = normal_path(dir, i);
                pfm::write_rgb(&p, &normals_to_rgb(n)).map_err(pfm_err(&p))?;
            }
        }
        let cp = dir.join(CONTROLS_DIR).join(CONTROLS_FILE);
        fs::write(&cp, controls_to_text(&self.controls)).map_err(io_err(&cp))?;
        for c in &self.controls {
            let p = envmap_path(dir, c.envmap_id);
            pfm::write_rgb(&p, self.envmaps[c.envmap_id].rgb()).map_err(pfm_err(&p))?;
        }
        Ok(())
    }
}

/// One problem found by [`validate_dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Issue {
    /// Path relative to the dataset root, or `*` for cross-file problems.
    pub file: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub frames: usize,
    pub controls: usize,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, file: impl Into<String>, reason: impl Into<String>) {
        self.issues.push(Issue {
            file: file.into(),
            reason: reason.into(),
        });
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "valid = {}\nframes = {}\ncontrols = {}\nissues = {}\n",
            self.is_valid(),
            self.frames,
            self.controls,
            self.issues.len()
        );
        for i in &self.issues {
            let _ = writeln!(s, "issue {}: {}", i.file, i.reason);
        }
        s
    }
}

fn relative(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).display().to_string()
}

/// Checks presence, sizes and value ranges of every file in the layout and
/// collects every problem instead of stopping at the first.
pub fn validate_dataset(dir: &Path) -> ValidationReport {
    let mut rep = ValidationReport::default();
    if !dir.is_dir() {
        rep.push(dir.display().to_string(), "not a directory");
        return rep;
    }
    let k = match fs::read_to_string(dir.join(INTRINSICS_FILE)) {
        Err(e) => {
            rep.push(INTRINSICS_FILE, e.to_string());
            None
        }
        Ok(t) => match parse_intrinsics(&t) {
            Ok(k) => Some(k),
            Err(r) => {
                rep.push(INTRINSICS_FILE, r);
                None
            }
        },
    };
    let load_traj = |name: &str, rep: &mut ValidationReport| match Trajectory::load(&dir.join(name)) {
        Ok(t) => Some(t),
        Err(e) => {
            rep.push(name, e.to_string());
            None
        }
    };
    let gt = load_traj(GROUNDTRUTH_FILE, &mut rep);
    let init = load_traj(INITIAL_FILE, &mut rep);
    if let (Some(g), Some(i)) = (&gt, &init) {
        if g.len() != i.len() {
            rep.push(
                "*",
                format!(
                    "{GROUNDTRUTH_FILE} has {} poses, {INITIAL_FILE} has {}",
                    g.len(),
                    i.len()
                ),
            );
        } else if g
            .frames()
            .iter()
            .zip(i.frames())
            .any(|(a, b)| (a.timestamp - b.timestamp).abs() > 1e-9)
        {
            rep.push("*", format!("{GROUNDTRUTH_FILE} and {INITIAL_FILE} timestamps differ"));
        }
    }
    let n = gt.as_ref().or(init.as_ref()).map_or(0, |t| t.len());
    rep.frames = n;
    if (gt.is_some() || init.is_some()) && n < 2 {
        rep.push(GROUNDTRUTH_FILE, format!("need at least 2 frames, found {n}"));
    }

    let check_gray = |p: PathBuf, rep: &mut ValidationReport, range: (f32, f32)| {
        let name = relative(dir, &p);
        match pfm::read_gray(&p) {
            Err(e) => rep.push(name, e.to_string()),
            Ok(g) => {
                if let Some(k) = &k {
                    if g.width() != k.width || g.height() != k.height {
                        rep.push(
                            "*",
                            format!(
                                "{name} is {}x{} but {INTRINSICS_FILE} says {}x{}",
                                g.width(),
                                g.height(),
                                k.width,
                                k.height
                            ),
                        );
                    }
                }
                if let Some(v) = g
                    .data()
                    .iter()
                    .find(|v| !(v.is_finite() && **v >= range.0 && **v <= range.1))
                {
                    rep.push(name, format!("value {v} outside [{}, {}]", range.0, range.1));
                }
            }
        }
    };
    for i in 0..n {
        check_gray(image_path(dir, i), &mut rep, (0.0, 1.0));
        check_gray(depth_path(dir, i), &mut rep, (0.0, f32::MAX));
        check_gray(roughness_path(dir, i), &mut rep, (0.0, 1.0));
        let np = normal_path(dir, i);
        if np.exists() {
            let name = relative(dir, &np);
            match pfm::read_rgb(&np) {
                Err(e) => rep.push(name, e.to_string()),
                Ok(g) => {
                    if let Some(k) = &k {
                        if g.width() != k.width || g.height() != k.height {
                            rep.push(
                                "*",
                                format!(
                                    "{name} is {}x{} but {INTRINSICS_FILE} says {}x{}",
                                    g.width(),
                                    g.height(),
                                    k.width,
                                    k.height
                                ),
                            );
                        }
                    }
                    let bad = g.data().iter().any(|c| {
                        let len = Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64).norm();
                        !(len == 0.0 || (len - 1.0).abs() < NORMAL_UNIT_TOLERANCE)
                    });
                    if bad {
                        rep.push(name, "normals must be unit length or zero");
                    }
                }
            }
        }
    }

    let cp = dir.join(CONTROLS_DIR).join(CONTROLS_FILE);
    let cname = relative(dir, &cp);
    match fs::read_to_string(&cp) {
        Err(e) => rep.push(cname, e.to_string()),
        Ok(text) => match parse_controls(&text) {
            Err(r) => rep.push(cname, r),
            Ok(controls) => {
                rep.controls = controls.len();
                if controls.is_empty() {
                    rep.push(cname.clone(), "no control points");
                }
                let mut ids: Vec<usize> = controls.iter().map(|c| c.envmap_id).collect();
                ids.sort_unstable();
                if ids.iter().enumerate().any(|(i, id)| *id != i) {
                    rep.push(
                        cname,
                        format!("ids must be 0..{} without gaps or repeats", controls.len()),
                    );
                }
                for c in &controls {
                    let ep = envmap_path(dir, c.envmap_id);
                    let name = relative(dir, &ep);
                    match pfm::read_rgb(&ep) {
                        Err(e) => rep.push(name, e.to_string()),
                        Ok(g) => {
                            if let Err(e) = EnvironmentMap::new(g) {
                                rep.push(name, e.to_string());
                            }
                        }
                    }
                }
            }
        },
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose;

    fn tiny() -> Dataset {
        let k = Intrinsics::from_fov(8, 6, 60.0);
        let mut gt = Trajectory::new();
        let mut init = Trajectory::new();
        for i in 0..2 {
            let p = Pose::new(
                nalgebra::UnitQuaternion::identity(),
                Vec3::new(0.1 * i as f64, 0.0, 0.0),
            );
            gt.push(i as f64 / 30.0, p).unwrap();
            init.push(i as f64 / 30.0, p).unwrap();
        }
        let frame = FrameData {
            image: Image::filled(8, 6, 0.5),
            depth: Image::filled(8, 6, 2.0),
            roughness: Image::filled(8, 6, 0.3),
            normals: Some(Grid::filled(8, 6, Vec3::new(0.0, 0.0, -1.0))),
        };
        Dataset {
            intrinsics: k,
            groundtruth: gt,
            initial: init,
            frames: vec![frame.clone(), FrameData { normals: None, ..frame }],
            controls: vec![ControlPoint {
                position: Vec3::new(0.0, 0.0, 2.0),
                envmap_id: 0,
            }],
            envmaps: vec![EnvironmentMap::constant(4, 1.5)],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = tiny();
        d.write(dir.path()).unwrap();
        assert!(validate_dataset(dir.path()).is_valid());
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.frames, d.frames);
        assert_eq!(back.intrinsics, d.intrinsics);
        assert_eq!(back.controls, d.controls);
        assert_eq!(back.envmaps[0].rgb(), d.envmaps[0].rgb());
    }

    #[test]
    fn truncated_pfm_is_reported_by_name() {
        let dir = tempfile::tempdir().unwrap();
        tiny().write(dir.path()).unwrap();
        let p = depth_path(dir.path(), 1);
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 10]).unwrap();
        let rep = validate_dataset(dir.path());
        assert_eq!(rep.issues.len(), 1, "{rep:?}");
        assert_eq!(rep.issues[0].file, "frames/000001.depth.pfm");
        assert!(rep.issues[0].reason.contains("truncated"));
        assert!(Dataset::load(dir.path()).is_err());
    }

    #[test]
    fn size_mismatch_is_cross_file() {
        let dir = tempfile::tempdir().unwrap();
        tiny().write(dir.path()).unwrap();
        pfm::write_gray(&depth_path(dir.path(), 0), &Image::filled(4, 4, 1.0)).unwrap();
        let rep = validate_dataset(dir.path());
        assert_eq!(rep.issues.len(), 1, "{rep:?}");
        assert_eq!(rep.issues[0].file, "*");
        assert!(rep.issues[0].reason.contains("000000.depth.pfm"));
    }

    #[test]
    fn missing_and_bad_files_are_all_listed() {
        let dir = tempfile::tempdir().unwrap();
        tiny().write(dir.path()).unwrap();
        fs::remove_file(roughness_path(dir.path(), 0)).unwrap();
        fs::write(dir.path().join(INTRINSICS_FILE), "1 2 3\n").unwrap();
        fs::write(dir.path().join(CONTROLS_DIR).join(CONTROLS_FILE), "0 1 2 3\n2 0 0 0\n").unwrap();
        pfm::write_gray(&image_path(dir.path(), 1), &Image::filled(8, 6, 2.0)).unwrap();
        let rep = validate_dataset(dir.path());
        let files: Vec<&str> = rep.issues.iter().map(|i| i.file.as_str()).collect();
        assert!(files.contains(&INTRINSICS_FILE));
        assert!(files.contains(&"frames/000000.rough.pfm"));
        assert!(files.contains(&"frames/000001.pfm"));
        assert!(files.contains(&"controls/control_points.txt"));
        assert!(files.contains(&"controls/002.env.pfm"));
    }

    #[test]
    fn garbage_never_panics() {
        let dir = tempfile::tempdir().unwrap();
        assert!(!validate_dataset(&dir.path().join("absent")).is_valid());
        assert!(!validate_dataset(dir.path()).is_valid());
        tiny().write(dir.path()).unwrap();
        for p in [
            image_path(dir.path(), 0),
            normal_path(dir.path(), 0),
            envmap_path(dir.path(), 0),
        ] {
            fs::write(&p, b"PF\n-1 -1\n").unwrap();
        }
        fs::write(dir.path().join(GROUNDTRUTH_FILE), "x y z\n").unwrap();
        let rep = validate_dataset(dir.path());
        assert!(rep.issues.len() >= 4, "{rep:?}");
    }

    #[test]
    fn intrinsics_text_round_trip() {
        let k = Intrinsics::new(138.56406460551017, 138.5, 79.5, 59.5, 160, 120).unwrap();
        assert_eq!(parse_intrinsics(&intrinsics_to_text(&k)).unwrap(), k);
        assert!(parse_intrinsics("1 1 0 0 0 10").is_err());
    }
}
