//! Flat `key = value` pipeline configuration.
//!
//! Sources are layered: built-in defaults, then a config file, then
//! environment variables (`RSLAM_` + the key upper-cased with dots replaced
//! by underscores, e.g. `RSLAM_CAMERA_F`), then explicit `key=value`
//! overrides. Every key accepted by [`PipelineConfig::set`] is listed in
//! [`KEYS`].

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::Matrix3;
use thiserror::Error;

use crate::dataset_io::CloudFormat;
use crate::loop_closure::LoopConfig;
use crate::mapping::{BaConfig, MapConfig};
use crate::preprocess::RansacConfig;
use crate::raster::{CameraModel, ZMap};
use crate::tracking::TrackingConfig;

pub const ENV_PREFIX: &str = "RSLAM_";

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("bad value '{value}' for '{key}': {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{path}:{line}: expected 'key = value'")]
    Syntax { path: PathBuf, line: usize },
    #[error("cannot read config {path}: {reason}")]
    Io { path: PathBuf, reason: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Deterministic,
    Concurrent,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "deterministic" => Ok(Mode::Deterministic),
            "concurrent" => Ok(Mode::Concurrent),
            other => Err(format!(
                "expected 'deterministic' or 'concurrent', got '{other}'"
            )),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Deterministic => "deterministic",
            Mode::Concurrent => "concurrent",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub dataset_path: PathBuf,
    pub dataset_format: CloudFormat,
    /// Ground-truth poses; when unset, `<dataset>/poses.txt` is used if present.
    pub groundtruth: Option<PathBuf>,
    pub output_dir: PathBuf,
    /// 0 processes every frame.
    pub max_frames: usize,
    pub camera: CameraModel,
    pub zmap: ZMap,
    pub ground_enabled: bool,
    pub ground: RansacConfig,
    pub tracking: TrackingConfig,
    pub map: MapConfig,
    pub ba_enabled: bool,
    pub ba: BaConfig,
    pub loop_closure: LoopConfig,
    pub mode: Mode,
    pub queue_capacity: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset_path: PathBuf::from("."),
            dataset_format: CloudFormat::KittiBin,
            groundtruth: None,
            output_dir: PathBuf::from("out"),
            max_frames: 0,
            camera: CameraModel::default(),
            zmap: ZMap::default(),
            ground_enabled: true,
            ground: RansacConfig::default(),
            tracking: TrackingConfig::default(),
            map: MapConfig::default(),
            ba_enabled: true,
            ba: BaConfig::default(),
            loop_closure: LoopConfig::default(),
            mode: Mode::Deterministic,
            queue_capacity: 8,
            seed: 0,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset.path",
    "dataset.format",
    "dataset.groundtruth",
    "dataset.max_frames",
    "output.dir",
    "camera.f",
    "camera.t_u",
    "camera.t_v",
    "camera.rotation",
    "camera.tx",
    "camera.ty",
    "camera.tz",
    "camera.width",
    "camera.height",
    "raster.z_min",
    "raster.z_max",
    "ground.enabled",
    "ground.iterations",
    "ground.inlier_dist",
    "ground.min_inlier_fraction",
    "ground.sample_limit",
    "features.blur_sigma",
    "features.fast_threshold",
    "features.target_count",
    "features.border",
    "features.ratio",
    "match.ransac_iterations",
    "match.inlier_dist",
    "tracking.min_inliers",
    "tracking.keyframe_min_frames",
    "tracking.keyframe_max_common",
    "mapping.window",
    "mapping.max_hamming",
    "mapping.max_dist",
    "ba.enabled",
    "ba.max_iters",
    "ba.lambda_init",
    "ba.huber_delta",
    "ba.fixed_poses",
    "loop.enabled",
    "loop.dist_threshold",
    "loop.exclusion",
    "loop.min_inliers",
    "loop.ratio",
    "loop.inlier_dist",
    "loop.ransac_iterations",
    "loop.max_iters",
    "pipeline.mode",
    "pipeline.queue_capacity",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_rotation(key: &str, value: &str) -> Result<Matrix3<f64>, ConfigError> {
    let xs: Vec<f64> = value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_, _>>()?;
    if xs.len() != 9 {
        return Err(ConfigError::BadValue {
            key: key.into(),
            value: value.into(),
            reason: format!("expected 9 row-major numbers, got {}", xs.len()),
        });
    }
    Ok(Matrix3::from_row_slice(&xs))
}

impl PipelineConfig {
    /// Defaults overlaid with an optional file, the process environment and
    /// the given overrides, then validated.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        if let Some(path) = file {
            cfg.apply_file(path)?;
        }
        cfg.apply_env(std::env::vars())?;
        for (k, v) in overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        let t = &mut self.tracking;
        match key {
            "dataset.path" => self.dataset_path = PathBuf::from(v),
            "dataset.format" => self.dataset_format = parse(key, v)?,
            "dataset.groundtruth" => self.groundtruth = (!v.is_empty()).then(|| PathBuf::from(v)),
            "dataset.max_frames" => self.max_frames = parse(key, v)?,
            "output.dir" => self.output_dir = PathBuf::from(v),
            "camera.f" => self.camera.f = parse(key, v)?,
            "camera.t_u" => self.camera.t_u = parse(key, v)?,
            "camera.t_v" => self.camera.t_v = parse(key, v)?,
            "camera.rotation" => self.camera.rotation = parse_rotation(key, v)?,
            "camera.tx" => self.camera.translation.x = parse(key, v)?,
            "camera.ty" => self.camera.translation.y = parse(key, v)?,
            "camera.tz" => self.camera.translation.z = parse(key, v)?,
            "camera.width" => self.camera.width = parse(key, v)?,
            "camera.height" => self.camera.height = parse(key, v)?,
            "raster.z_min" => self.zmap.z_min = parse(key, v)?,
            "raster.z_max" => self.zmap.z_max = parse(key, v)?,
            "ground.enabled" => self.ground_enabled = parse(key, v)?,
            "ground.iterations" => self.ground.iterations = parse(key, v)?,
            "ground.inlier_dist" => self.ground.inlier_dist_m = parse(key, v)?,
            "ground.min_inlier_fraction" => self.ground.min_inlier_fraction = parse(key, v)?,
            "ground.sample_limit" => self.ground.score_sample_limit = parse(key, v)?,
            "features.blur_sigma" => t.features.blur_sigma = parse(key, v)?,
            "features.fast_threshold" => t.features.fast_threshold = parse(key, v)?,
            "features.target_count" => t.features.target_count = parse(key, v)?,
            "features.border" => t.features.border = parse(key, v)?,
            "features.ratio" => t.features.ratio = parse(key, v)?,
            "match.ransac_iterations" => t.ransac.iterations = parse(key, v)?,
            "match.inlier_dist" => t.ransac.inlier_dist_m = parse(key, v)?,
            "tracking.min_inliers" => t.min_inliers = parse(key, v)?,
            "tracking.keyframe_min_frames" => t.keyframe_min_frames = parse(key, v)?,
            "tracking.keyframe_max_common" => t.keyframe_max_common = parse(key, v)?,
            "mapping.window" => self.map.window = parse(key, v)?,
            "mapping.max_hamming" => self.map.max_hamming = parse(key, v)?,
            "mapping.max_dist" => self.map.max_dist_m = parse(key, v)?,
            "ba.enabled" => self.ba_enabled = parse(key, v)?,
            "ba.max_iters" => self.ba.max_iters = parse(key, v)?,
            "ba.lambda_init" => self.ba.lambda_init = parse(key, v)?,
            "ba.huber_delta" => {
                let d: f64 = parse(key, v)?;
                self.ba.huber_delta = (d > 0.0).then_some(d);
            }
            "ba.fixed_poses" => self.ba.fixed_poses = parse(key, v)?,
            "loop.enabled" => self.loop_closure.enabled = parse(key, v)?,
            "loop.dist_threshold" => self.loop_closure.dist_threshold_m = parse(key, v)?,
            "loop.exclusion" => self.loop_closure.exclusion = parse(key, v)?,
            "loop.min_inliers" => self.loop_closure.min_inliers = parse(key, v)?,
            "loop.ratio" => self.loop_closure.ratio = parse(key, v)?,
            "loop.inlier_dist" => self.loop_closure.inlier_dist_m = parse(key, v)?,
            "loop.ransac_iterations" => self.loop_closure.iterations = parse(key, v)?,
            "loop.max_iters" => self.loop_closure.max_iters = parse(key, v)?,
            "pipeline.mode" => self.mode = parse(key, v)?,
            "pipeline.queue_capacity" => self.queue_capacity = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.into())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.tracking;
        let c = &self.camera;
        let l = &self.loop_closure;
        let s = match key {
            "dataset.path" => self.dataset_path.display().to_string(),
            "dataset.format" => self.dataset_format.extension().to_string(),
            "dataset.groundtruth" => self
                .groundtruth
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "dataset.max_frames" => self.max_frames.to_string(),
            "output.dir" => self.output_dir.display().to_string(),
            "camera.f" => c.f.to_string(),
            "camera.t_u" => c.t_u.to_string(),
            "camera.t_v" => c.t_v.to_string(),
            "camera.rotation" => {
                let r = c.rotation;
                (0..9)
                    .map(|i| r[(i / 3, i % 3)].to_string())
                    .collect::<Vec<_>>()
                    .join(" ")
            }
            "camera.tx" => c.translation.x.to_string(),
            "camera.ty" => c.translation.y.to_string(),
            "camera.tz" => c.translation.z.to_string(),
            "camera.width" => c.width.to_string(),
            "camera.height" => c.height.to_string(),
            "raster.z_min" => self.zmap.z_min.to_string(),
            "raster.z_max" => self.zmap.z_max.to_string(),
            "ground.enabled" => self.ground_enabled.to_string(),
            "ground.iterations" => self.ground.iterations.to_string(),
            "ground.inlier_dist" => self.ground.inlier_dist_m.to_string(),
            "ground.min_inlier_fraction" => self.ground.min_inlier_fraction.to_string(),
            "ground.sample_limit" => self.ground.score_sample_limit.to_string(),
            "features.blur_sigma" => t.features.blur_sigma.to_string(),
            "features.fast_threshold" => t.features.fast_threshold.to_string(),
            "features.target_count" => t.features.target_count.to_string(),
            "features.border" => t.features.border.to_string(),
            "features.ratio" => t.features.ratio.to_string(),
            "match.ransac_iterations" => t.ransac.iterations.to_string(),
            "match.inlier_dist" => t.ransac.inlier_dist_m.to_string(),
            "tracking.min_inliers" => t.min_inliers.to_string(),
            "tracking.keyframe_min_frames" => t.keyframe_min_frames.to_string(),
            "tracking.keyframe_max_common" => t.keyframe_max_common.to_string(),
            "mapping.window" => self.map.window.to_string(),
            "mapping.max_hamming" => self.map.max_hamming.to_string(),
            "mapping.max_dist" => self.map.max_dist_m.to_string(),
            "ba.enabled" => self.ba_enabled.to_string(),
            "ba.max_iters" => self.ba.max_iters.to_string(),
            "ba.lambda_init" => self.ba.lambda_init.to_string(),
            "ba.huber_delta" => self.ba.huber_delta.unwrap_or(0.0).to_string(),
            "ba.fixed_poses" => self.ba.fixed_poses.to_string(),
            "loop.enabled" => l.enabled.to_string(),
            "loop.dist_threshold" => l.dist_threshold_m.to_string(),
            "loop.exclusion" => l.exclusion.to_string(),
            "loop.min_inliers" => l.min_inliers.to_string(),
            "loop.ratio" => l.ratio.to_string(),
            "loop.inlier_dist" => l.inlier_dist_m.to_string(),
            "loop.ransac_iterations" => l.iterations.to_string(),
            "loop.max_iters" => l.max_iters.to_string(),
            "pipeline.mode" => self.mode.to_string(),
            "pipeline.queue_capacity" => self.queue_capacity.to_string(),
            "seed" => self.seed.to_string(),
            _ => return None,
        };
        Some(s)
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, origin: &Path) -> Result<(), ConfigError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.to_path_buf(),
                line: n + 1,
            })?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        self.apply_text(&text, path)
    }

    /// Applies every `RSLAM_*` variable that names a known key. Unknown
    /// variables with the prefix are rejected so typos do not pass silently.
    pub fn apply_env(
        &mut self,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<(), ConfigError> {
        let mut found: Vec<(&str, String)> = Vec::new();
        for (name, value) in vars {
            let Some(rest) = name.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = KEYS
                .iter()
                .find(|k| env_name(k)[ENV_PREFIX.len()..] == *rest)
                .ok_or_else(|| ConfigError::UnknownKey(name.clone()))?;
            found.push((key, value));
        }
        // apply in key order so the result does not depend on env ordering
        found.sort_by_key(|(k, _)| KEYS.iter().position(|x| x == k));
        for (k, v) in found {
            self.set(k, &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.into()));
        self.camera.validate().map_err(ConfigError::Invalid)?;
        if !(self.zmap.z_max > self.zmap.z_min) {
            return bad("raster.z_max must exceed raster.z_min");
        }
        let t = &self.tracking;
        let positive = [
            ("ground.inlier_dist", self.ground.inlier_dist_m),
            (
                "ground.min_inlier_fraction",
                self.ground.min_inlier_fraction,
            ),
            ("features.ratio", t.features.ratio),
            ("match.inlier_dist", t.ransac.inlier_dist_m),
            ("mapping.max_dist", self.map.max_dist_m),
            ("ba.lambda_init", self.ba.lambda_init),
            ("loop.dist_threshold", self.loop_closure.dist_threshold_m),
            ("loop.ratio", self.loop_closure.ratio),
            ("loop.inlier_dist", self.loop_closure.inlier_dist_m),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!(
                    "{k} must be positive (got {v})"
                )));
            }
        }
        if !(t.features.blur_sigma >= 0.0) {
            return bad("features.blur_sigma must be non-negative");
        }
        if t.features.ratio > 1.0 || self.loop_closure.ratio > 1.0 {
            return bad("ratio thresholds must not exceed 1");
        }
        if self.ground.min_inlier_fraction > 1.0 {
            return bad("ground.min_inlier_fraction must not exceed 1");
        }
        let counts = [
            ("ground.iterations", self.ground.iterations),
            ("ground.sample_limit", self.ground.score_sample_limit),
            ("features.target_count", t.features.target_count),
            ("match.ransac_iterations", t.ransac.iterations),
            ("tracking.min_inliers", t.min_inliers),
            ("mapping.window", self.map.window),
            ("loop.min_inliers", self.loop_closure.min_inliers),
            ("loop.ransac_iterations", self.loop_closure.iterations),
            ("pipeline.queue_capacity", self.queue_capacity),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(ConfigError::Invalid(format!("{k} must be at least 1")));
            }
        }
        if t.features.fast_threshold <= 0 {
            return bad("features.fast_threshold must be positive");
        }
        Ok(())
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("listed key")))
            .collect()
    }
}

/// Environment variable name for a config key.
pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('.', "_"))
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String), ConfigError> {
    let (k, v) = s.split_once('=').ok_or_else(|| ConfigError::BadValue {
        key: s.into(),
        value: String::new(),
        reason: "expected key=value".into(),
    })?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}
