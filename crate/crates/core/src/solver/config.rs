use std::fmt;
use std::str::FromStr;

use crate::kv::{KvError, KvFile};

use super::SolverError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// Radiance-consistency weights from the reflection model.
    PhysicallyBased,
    /// Student-t weights on the patch residual norm.
    TDist,
    Uniform,
}

impl FromStr for WeightMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pb" | "physically-based" => Ok(Self::PhysicallyBased),
            "tdist" => Ok(Self::TDist),
            "uniform" => Ok(Self::Uniform),
            other => Err(format!("unknown weight mode `{other}` (expected pb, tdist or uniform)")),
        }
    }
}

impl fmt::Display for WeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PhysicallyBased => "pb",
            Self::TDist => "tdist",
            Self::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_outer: usize,
    pub max_inner: usize,
    pub lambda_init: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub stop_rel: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_outer: 8,
            max_inner: 20,
            lambda_init: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.5,
            stop_rel: 1e-6,
        }
    }
}

/// Point extraction settings used when a problem is built from frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointConfig {
    /// Every `host_stride`-th frame hosts points.
    pub host_stride: usize,
    /// Pixel selection target per host frame.
    pub per_host: usize,
    /// Relative depth disagreement above which a target view counts as occluded.
    pub occlusion_tolerance: f64,
}

impl Default for PointConfig {
    fn default() -> Self {
        Self {
            host_stride: 4,
            per_host: 400,
            occlusion_tolerance: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub theta: f64,
    pub weight_mode: WeightMode,
    /// Huber threshold on intensity residuals; 0 disables it.
    pub huber_delta: f64,
    pub tdist_nu: f64,
    pub lm: LmConfig,
    pub points: PointConfig,
    /// Sum normal equations in a fixed order.
    pub deterministic: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: 14.6,
            weight_mode: WeightMode::PhysicallyBased,
            huber_delta: 0.1,
            tdist_nu: 5.0,
            lm: LmConfig::default(),
            points: PointConfig::default(),
            deterministic: false,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "theta",
    "weight_mode",
    "huber_delta",
    "tdist_nu",
    "lm.max_outer",
    "lm.max_inner",
    "lm.lambda_init",
    "lm.lambda_up",
    "lm.lambda_down",
    "lm.stop_rel",
    "points.host_stride",
    "points.per_host",
    "points.occlusion_tolerance",
    "deterministic",
];

impl SolverConfig {
    /// Reads a configuration; absent keys keep their defaults and unknown
    /// keys are rejected.
    pub fn from_kv(kv: &KvFile) -> Result<Self, SolverError> {
        if let Some(k) = kv.keys().find(|k| !CONFIG_KEYS.contains(k)) {
            return Err(KvError::Unknown(k.to_string()).into());
        }
        let d = Self::default();
        let weight_mode = match kv.get("weight_mode") {
            None => d.weight_mode,
            Some(v) => v.parse().map_err(SolverError::InvalidConfig)?,
        };
        let cfg = Self {
            theta: kv.f64_or("theta", d.theta)?,
            weight_mode,
            huber_delta: kv.f64_or("huber_delta", d.huber_delta)?,
            tdist_nu: kv.f64_or("tdist_nu", d.tdist_nu)?,
            lm: LmConfig {
                max_outer: kv.usize_or("lm.max_outer", d.lm.max_outer)?,
                max_inner: kv.usize_or("lm.max_inner", d.lm.max_inner)?,
                lambda_init: kv.f64_or("lm.lambda_init", d.lm.lambda_init)?,
                lambda_up: kv.f64_or("lm.lambda_up", d.lm.lambda_up)?,
                lambda_down: kv.f64_or("lm.lambda_down", d.lm.lambda_down)?,
                stop_rel: kv.f64_or("lm.stop_rel", d.lm.stop_rel)?,
            },
            points: PointConfig {
                host_stride: kv.usize_or("points.host_stride", d.points.host_stride)?,
                per_host: kv.usize_or("points.per_host", d.points.per_host)?,
                occlusion_tolerance: kv.f64_or("points.occlusion_tolerance", d.points.occlusion_tolerance)?,
            },
            deterministic: kv.bool_or("deterministic", d.deterministic)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KvFile {
        let mut kv = KvFile::default();
        kv.set("theta", self.theta.to_string());
        kv.set("weight_mode", self.weight_mode.to_string());
        kv.set("huber_delta", self.huber_delta.to_string());
        kv.set("tdist_nu", self.tdist_nu.to_string());
        kv.set("lm.max_outer", self.lm.max_outer.to_string());
        kv.set("lm.max_inner", self.lm.max_inner.to_string());
        kv.set("lm.lambda_init", self.lm.lambda_init.to_string());
        kv.set("lm.lambda_up", self.lm.lambda_up.to_string());
        kv.set("lm.lambda_down", self.lm.lambda_down.to_string());
        kv.set("lm.stop_rel", self.lm.stop_rel.to_string());
        kv.set("points.host_stride", self.points.host_stride.to_string());
        kv.set("points.per_host", self.points.per_host.to_string());
        kv.set(
            "points.occlusion_tolerance",
            self.points.occlusion_tolerance.to_string(),
        );
        kv.set("deterministic", self.deterministic.to_string());
        kv
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |msg: &str| Err(SolverError::InvalidConfig(msg.to_string()));
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad("theta must be finite and >= 0");
        }
        if !(self.huber_delta >= 0.0 && self.huber_delta.is_finite()) {
            return bad("huber_delta must be finite and >= 0");
        }
        if !(self.tdist_nu > 0.0) {
            return bad("tdist_nu must be > 0");
        }
        let lm = &self.lm;
        if lm.max_outer == 0 || lm.max_inner == 0 {
            return bad("lm iteration limits must be > 0");
        }
        if !(lm.lambda_init > 0.0 && lm.lambda_up > 0.0 && lm.lambda_down > 0.0 && lm.stop_rel > 0.0) {
            return bad("lm scalars must be > 0");
        }
        if self.points.host_stride == 0 {
            return bad("points.host_stride must be > 0");
        }
        if !(self.points.occlusion_tolerance > 0.0) {
            return bad("points.occlusion_tolerance must be > 0");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_kv() {
        let c = SolverConfig::default();
        assert_eq!(SolverConfig::from_kv(&c.to_kv()).unwrap(), c);
        assert_eq!(c.theta, 14.6);
        assert_eq!(c.lm.max_outer, 8);
    }

    #[test]
    fn overrides_and_rejections() {
        let kv = KvFile::parse("theta = 0\nweight_mode = tdist\nlm.max_inner = 5\n").unwrap();
        let c = SolverConfig::from_kv(&kv).unwrap();
        assert_eq!((c.theta, c.weight_mode, c.lm.max_inner), (0.0, WeightMode::TDist, 5));
        assert!(SolverConfig::from_kv(&KvFile::parse("thetta = 1").unwrap()).is_err());
        assert!(SolverConfig::from_kv(&KvFile::parse("theta = -1").unwrap()).is_err());
        assert!(SolverConfig::from_kv(&KvFile::parse("weight_mode = l2").unwrap()).is_err());
        assert!(SolverConfig::from_kv(&KvFile::parse("lm.lambda_up = 0").unwrap()).is_err());
    }
}
