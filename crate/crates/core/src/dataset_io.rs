//! Point-cloud and trajectory file formats, and absolute trajectory error.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::warn;
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::geometry::{nearest_rotation, PoseSE3};

const KITTI_RECORD_BYTES: usize = 16;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    FormatLine {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("only {common} frames in common between estimate and truth (need at least 3)")]
    InsufficientOverlap { common: usize },
    #[error("cannot write an empty trajectory")]
    EmptyTrajectory,
    #[error("trajectory frame indices must be strictly increasing (got {prev} then {next})")]
    UnorderedTrajectory { prev: usize, next: usize },
}

impl DatasetError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        DatasetError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LidarPoint {
    pub position: Vector3<f64>,
    pub reflectance: f64,
}

impl LidarPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self {
            position: Vector3::new(x, y, z),
            reflectance: 0.0,
        }
    }
}

/// One frame of LIDAR points in sensor coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<LidarPoint>,
    pub frame_index: usize,
    /// Records dropped at load time because a coordinate was NaN or infinite.
    pub dropped_non_finite: usize,
}

impl PointCloud {
    pub fn new(points: Vec<LidarPoint>, frame_index: usize) -> Self {
        Self {
            points,
            frame_index,
            dropped_non_finite: 0,
        }
    }

    pub fn from_positions(
        positions: impl IntoIterator<Item = Vector3<f64>>,
        frame_index: usize,
    ) -> Self {
        Self::new(
            positions
                .into_iter()
                .map(|position| LidarPoint {
                    position,
                    reflectance: 0.0,
                })
                .collect(),
            frame_index,
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CloudFormat {
    /// Four little-endian f32 per point: x, y, z, reflectance.
    KittiBin,
    /// One "x y z" triple per line.
    AsciiXyz,
}

impl CloudFormat {
    pub fn extension(self) -> &'static str {
        match self {
            CloudFormat::KittiBin => "bin",
            CloudFormat::AsciiXyz => "xyz",
        }
    }
}

impl std::str::FromStr for CloudFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "kitti-bin" | "bin" => Ok(CloudFormat::KittiBin),
            "ascii-xyz" | "xyz" => Ok(CloudFormat::AsciiXyz),
            other => Err(format!("unknown point-cloud format '{other}'")),
        }
    }
}

/// Point-cloud files of a sequence in name order. Files are taken from
/// `dir/velodyne` when that exists (KITTI layout), otherwise from `dir`.
pub fn list_frame_files(dir: &Path, format: CloudFormat) -> Result<Vec<PathBuf>, DatasetError> {
    let sub = dir.join("velodyne");
    let root = if sub.is_dir() { sub } else { dir.to_path_buf() };
    let entries = fs::read_dir(&root).map_err(|e| DatasetError::io(&root, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| DatasetError::io(&root, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == format.extension()) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

pub fn load_point_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud, DatasetError> {
    let mut cloud = match format {
        CloudFormat::KittiBin => {
            let bytes = fs::read(path).map_err(|e| DatasetError::io(path, e))?;
            decode_kitti_bin(&bytes).map_err(|message| DatasetError::Format {
                path: path.to_path_buf(),
                message,
            })?
        }
        CloudFormat::AsciiXyz => {
            let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
            parse_ascii_xyz(&text, path)?
        }
    };
    if cloud.dropped_non_finite > 0 {
        warn!(
            "{}: dropped {} non-finite points",
            path.display(),
            cloud.dropped_non_finite
        );
    }
    cloud.frame_index = 0;
    Ok(cloud)
}

pub fn decode_kitti_bin(bytes: &[u8]) -> Result<PointCloud, String> {
    if !bytes.len().is_multiple_of(KITTI_RECORD_BYTES) {
        return Err(format!(
            "length {} is not a multiple of the {KITTI_RECORD_BYTES}-byte record size",
            bytes.len()
        ));
    }
    let mut cloud = PointCloud::default();
    cloud.points.reserve(bytes.len() / KITTI_RECORD_BYTES);
    for rec in bytes.chunks_exact(KITTI_RECORD_BYTES) {
        let f = |i: usize| f32::from_le_bytes([rec[i], rec[i + 1], rec[i + 2], rec[i + 3]]);
        let (x, y, z, r) = (f(0), f(4), f(8), f(12));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            cloud.dropped_non_finite += 1;
            continue;
        }
        cloud.points.push(LidarPoint {
            position: Vector3::new(x as f64, y as f64, z as f64),
            reflectance: if r.is_finite() { r as f64 } else { 0.0 },
        });
    }
    Ok(cloud)
}

pub fn encode_kitti_bin(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * KITTI_RECORD_BYTES);
    for p in &cloud.points {
        for v in [p.position.x, p.position.y, p.position.z, p.reflectance] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

fn parse_ascii_xyz(text: &str, path: &Path) -> Result<PointCloud, DatasetError> {
    let mut cloud = PointCloud::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        let values = values.map_err(|e| DatasetError::FormatLine {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?;
        if values.len() < 3 {
            return Err(DatasetError::FormatLine {
                path: path.to_path_buf(),
                line: lineno + 1,
                message: format!("expected 3 numbers, found {}", values.len()),
            });
        }
        if values[..3].iter().any(|v| !v.is_finite()) {
            cloud.dropped_non_finite += 1;
            continue;
        }
        cloud
            .points
            .push(LidarPoint::new(values[0], values[1], values[2]));
    }
    Ok(cloud)
}

pub fn write_point_cloud(
    cloud: &PointCloud,
    path: &Path,
    format: CloudFormat,
) -> Result<(), DatasetError> {
    let bytes = match format {
        CloudFormat::KittiBin => encode_kitti_bin(cloud),
        CloudFormat::AsciiXyz => {
            let mut s = String::new();
            for p in &cloud.points {
                s.push_str(&format!(
                    "{} {} {}\n",
                    p.position.x, p.position.y, p.position.z
                ));
            }
            s.into_bytes()
        }
    };
    fs::write(path, bytes).map_err(|e| DatasetError::io(path, e))
}

/// Ordered list of `(frame_index, pose)` with strictly increasing indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<(usize, PoseSE3)>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_poses(poses: Vec<(usize, PoseSE3)>) -> Result<Self, DatasetError> {
        for w in poses.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(DatasetError::UnorderedTrajectory {
                    prev: w[0].0,
                    next: w[1].0,
                });
            }
        }
        Ok(Self { poses })
    }

    pub fn push(&mut self, frame_index: usize, pose: PoseSE3) {
        if let Some((last, _)) = self.poses.last() {
            assert!(
                frame_index > *last,
                "trajectory frame indices must increase"
            );
        }
        self.poses.push((frame_index, pose));
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn get(&self, frame_index: usize) -> Option<&PoseSE3> {
        self.poses
            .binary_search_by_key(&frame_index, |(i, _)| *i)
            .ok()
            .map(|k| &self.poses[k].1)
    }
}

pub fn parse_groundtruth(text: &str, path: &Path) -> Result<Trajectory, DatasetError> {
    let mut traj = Trajectory::new();
    let err = |line: usize, message: String| DatasetError::FormatLine {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut frame = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|tok| {
                tok.parse::<f64>()
                    .map_err(|e| err(lineno + 1, format!("'{tok}': {e}")))
            })
            .collect::<Result<_, _>>()?;
        if values.len() != 12 {
            return Err(err(
                lineno + 1,
                format!("expected 12 numbers, found {}", values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(err(lineno + 1, "non-finite value".into()));
        }
        let arr: [f64; 12] = values.try_into().expect("length checked");
        let mut pose = PoseSE3::from_row_major(&arr);
        let drift = (pose.rotation.transpose() * pose.rotation - Matrix3::identity())
            .abs()
            .max();
        if drift > 1e-3 || pose.rotation.determinant() <= 0.0 {
            return Err(err(
                lineno + 1,
                format!("rotation is not orthonormal (error {drift:.3e})"),
            ));
        }
        // Full-precision files already hold an orthonormal R; only repair
        // rotations that were printed with truncated digits.
        if drift > 1e-12 {
            pose.rotation = nearest_rotation(&pose.rotation);
        }
        traj.poses.push((frame, pose));
        frame += 1;
    }
    Ok(traj)
}

pub fn load_groundtruth(path: &Path) -> Result<Trajectory, DatasetError> {
    let text = fs::read_to_string(path).map_err(|e| DatasetError::io(path, e))?;
    parse_groundtruth(&text, path)
}

/// One line per pose; `{:e}` prints the shortest representation that
/// round-trips exactly, which never needs more than 17 significant digits.
pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::new();
    for (_, pose) in &traj.poses {
        let line: Vec<String> = pose
            .to_row_major()
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), DatasetError> {
    if traj.is_empty() {
        return Err(DatasetError::EmptyTrajectory);
    }
    let file = fs::File::create(path).map_err(|e| DatasetError::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(format_trajectory(traj).as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| DatasetError::io(path, e))
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AteStats {
    pub rmse: f64,
    pub sd: f64,
    pub mean: f64,
    pub median: f64,
}

impl AteStats {
    pub fn from_residuals(residuals: &[f64]) -> AteStats {
        if residuals.is_empty() {
            return AteStats::default();
        }
        let n = residuals.len() as f64;
        let mean = residuals.iter().sum::<f64>() / n;
        let mean_sq = residuals.iter().map(|r| r * r).sum::<f64>() / n;
        let sd = (residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        let mut sorted = residuals.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len().is_multiple_of(2) {
            0.5 * (sorted[mid - 1] + sorted[mid])
        } else {
            sorted[mid]
        };
        AteStats {
            rmse: mean_sq.sqrt(),
            sd,
            mean,
            median,
        }
    }
}

/// Least-squares rigid (no scale) alignment: returns the transform `T`
/// minimizing `sum |T * source_i - target_i|^2`.
pub fn align_rigid(source: &[Vector3<f64>], target: &[Vector3<f64>]) -> PoseSE3 {
    let n = source.len() as f64;
    let cs = source.iter().sum::<Vector3<f64>>() / n;
    let ct = target.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (s, t) in source.iter().zip(target) {
        h += (s - cs) * (t - ct).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = v * d * u.transpose();
    PoseSE3::new(rotation, ct - rotation * cs)
}

pub fn compute_ate(estimate: &Trajectory, truth: &Trajectory) -> Result<AteStats, DatasetError> {
    let mut est = Vec::new();
    let mut gt = Vec::new();
    for (idx, pose) in &estimate.poses {
        if let Some(t) = truth.get(*idx) {
            est.push(pose.translation);
            gt.push(t.translation);
        }
    }
    if est.len() < 3 {
        return Err(DatasetError::InsufficientOverlap { common: est.len() });
    }
    let align = align_rigid(&est, &gt);
    let residuals: Vec<f64> = est
        .iter()
        .zip(&gt)
        .map(|(e, g)| (align.transform_point(e) - g).norm())
        .collect();
    Ok(AteStats::from_residuals(&residuals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::rot_z;

    fn kitti_bytes(points: &[[f32; 4]]) -> Vec<u8> {
        points
            .iter()
            .flat_map(|p| p.iter().flat_map(|v| v.to_le_bytes()))
            .collect()
    }

    #[test]
    fn decodes_two_kitti_records() {
        let bytes = kitti_bytes(&[[1.0, 2.0, 3.0, 0.5], [4.0, 5.0, 6.0, 0.1]]);
        assert_eq!(bytes.len(), 32);
        let cloud = decode_kitti_bin(&bytes).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[0].position, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(cloud.points[1].position, Vector3::new(4.0, 5.0, 6.0));
        assert_eq!(cloud.points[0].reflectance, 0.5);
    }

    #[test]
    fn empty_file_is_empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.bin");
        fs::write(&path, b"").unwrap();
        let cloud = load_point_cloud(&path, CloudFormat::KittiBin).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn truncated_record_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        fs::write(&path, [0u8; 17]).unwrap();
        assert!(matches!(
            load_point_cloud(&path, CloudFormat::KittiBin),
            Err(DatasetError::Format { .. })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_point_cloud(Path::new("/nonexistent/cloud.bin"), CloudFormat::KittiBin);
        assert!(matches!(err, Err(DatasetError::Io { .. })));
    }

    #[test]
    fn non_finite_points_are_dropped_and_counted() {
        let bytes = kitti_bytes(&[
            [1.0, 2.0, 3.0, 0.0],
            [f32::NAN, 0.0, 0.0, 0.0],
            [0.0, f32::INFINITY, 0.0, 0.0],
            [7.0, 8.0, 9.0, 0.0],
        ]);
        let cloud = decode_kitti_bin(&bytes).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.dropped_non_finite, 2);
        assert_eq!(cloud.points[1].position, Vector3::new(7.0, 8.0, 9.0));
    }

    #[test]
    fn ascii_xyz_defaults_reflectance() {
        let cloud = parse_ascii_xyz("1 2 3\n\n4 5 6\n", Path::new("x")).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points[1].reflectance, 0.0);
        assert!(parse_ascii_xyz("1 2\n", Path::new("x")).is_err());
    }

    #[test]
    fn groundtruth_identity_and_translation() {
        let t = parse_groundtruth(
            "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 5 0 1 0 0 0 0 1 0\n",
            Path::new("gt"),
        )
        .unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.poses[0], (0, PoseSE3::identity()));
        assert_eq!(t.poses[1].0, 1);
        assert_eq!(t.poses[1].1.translation, Vector3::new(5.0, 0.0, 0.0));
    }

    #[test]
    fn groundtruth_arity_error_reports_line() {
        let err = parse_groundtruth(
            "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 0 0 0 1\n",
            Path::new("gt"),
        )
        .unwrap_err();
        assert!(
            matches!(err, DatasetError::FormatLine { line: 2, .. }),
            "{err}"
        );
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn groundtruth_reorthonormalizes_rounded_rotations() {
        let c = 0.7071;
        let text = format!("{c} {} 0 0 {c} {c} 0 0 0 0 1 0\n", -c);
        let t = parse_groundtruth(&text, Path::new("gt")).unwrap();
        assert!(t.poses[0].1.orthonormality_error() < 1e-12);
        assert!(parse_groundtruth("1 0 0 0 0 2 0 0 0 0 1 0\n", Path::new("gt")).is_err());
    }

    #[test]
    fn write_and_reload_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("traj.txt");
        let mut t = Trajectory::new();
        t.push(0, PoseSE3::identity());
        write_trajectory(&t, &path).unwrap();
        assert_eq!(load_groundtruth(&path).unwrap(), t);

        t.push(
            1,
            PoseSE3::from_yaw(0.3, Vector3::new(1.0 / 3.0, -2.0, 1e-7)),
        );
        write_trajectory(&t, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        let back = load_groundtruth(&path).unwrap();
        for ((ia, a), (ib, b)) in t.poses.iter().zip(&back.poses) {
            assert_eq!(ia, ib);
            for (x, y) in a.to_row_major().iter().zip(b.to_row_major()) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn write_errors() {
        let mut t = Trajectory::new();
        assert!(matches!(
            write_trajectory(&t, Path::new("/tmp/x")),
            Err(DatasetError::EmptyTrajectory)
        ));
        t.push(0, PoseSE3::identity());
        assert!(matches!(
            write_trajectory(&t, Path::new("/nonexistent-dir/traj.txt")),
            Err(DatasetError::Io { .. })
        ));
    }

    fn traj_from_positions(ps: &[Vector3<f64>]) -> Trajectory {
        let mut t = Trajectory::new();
        for (i, p) in ps.iter().enumerate() {
            t.push(i, PoseSE3::from_translation(*p));
        }
        t
    }

    #[test]
    fn ate_zero_for_identical_and_rigidly_moved() {
        let ps: Vec<_> = (0..10)
            .map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.1, (i % 3) as f64))
            .collect();
        let truth = traj_from_positions(&ps);
        let s = compute_ate(&truth, &truth).unwrap();
        assert!(s.rmse < 1e-12 && s.mean < 1e-12 && s.median < 1e-12);

        let g = PoseSE3::new(
            rot_z(std::f64::consts::FRAC_PI_2),
            Vector3::new(10.0, 0.0, 0.0),
        );
        let moved: Vec<_> = ps.iter().map(|p| g.transform_point(p)).collect();
        let s = compute_ate(&traj_from_positions(&moved), &truth).unwrap();
        assert!(
            s.rmse < 1e-9 && s.sd < 1e-9 && s.mean < 1e-9 && s.median < 1e-9,
            "{s:?}"
        );
    }

    #[test]
    fn ate_needs_three_common_frames() {
        let a = traj_from_positions(&[Vector3::zeros(), Vector3::x()]);
        assert!(matches!(
            compute_ate(&a, &a),
            Err(DatasetError::InsufficientOverlap { common: 2 })
        ));
    }

    /// Brute-force SE(2) alignment oracle: grid search over yaw and the
    /// closed-form optimal translation for each yaw, then golden-section
    /// refinement on the yaw around the best grid cell.
    fn brute_force_planar_residuals(est: &[Vector3<f64>], gt: &[Vector3<f64>]) -> Vec<f64> {
        let cost_at = |yaw: f64| -> (f64, Vec<f64>) {
            let r = rot_z(yaw);
            let rotated: Vec<_> = est.iter().map(|p| r * p).collect();
            let shift = (gt.iter().sum::<Vector3<f64>>() - rotated.iter().sum::<Vector3<f64>>())
                / est.len() as f64;
            let res: Vec<f64> = rotated
                .iter()
                .zip(gt)
                .map(|(p, g)| (p + shift - g).norm())
                .collect();
            (res.iter().map(|x| x * x).sum(), res)
        };
        let step = 1e-4;
        let n = (2.0 * std::f64::consts::PI / step) as usize;
        let mut best = (f64::INFINITY, 0.0);
        for k in 0..n {
            let yaw = k as f64 * step;
            let c = cost_at(yaw).0;
            if c < best.0 {
                best = (c, yaw);
            }
        }
        // refine by bisection on the sign of the analytic yaw derivative of
        // the centered cost, -2 sum g^T R'(yaw) e
        let n = est.len() as f64;
        let ce = est.iter().sum::<Vector3<f64>>() / n;
        let cg = gt.iter().sum::<Vector3<f64>>() / n;
        let slope = |yaw: f64| -> f64 {
            let (s, c) = yaw.sin_cos();
            est.iter()
                .zip(gt)
                .map(|(e, g)| {
                    let (e, g) = (e - ce, g - cg);
                    let de = Vector3::new(-s * e.x - c * e.y, c * e.x - s * e.y, 0.0);
                    -2.0 * g.dot(&de)
                })
                .sum()
        };
        let (mut lo, mut hi) = (best.1 - step, best.1 + step);
        assert!(slope(lo) < 0.0 && slope(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if slope(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        cost_at(0.5 * (lo + hi)).1
    }

    #[test]
    fn ate_unit_square_with_displaced_corner_matches_brute_force() {
        let truth = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.0, 1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        let mut est = truth;
        est[2] += Vector3::new(1.0, 0.0, 0.0);
        let stats = compute_ate(&traj_from_positions(&est), &traj_from_positions(&truth)).unwrap();
        let oracle = AteStats::from_residuals(&brute_force_planar_residuals(&est, &truth));
        for (a, b) in [
            (stats.rmse, oracle.rmse),
            (stats.sd, oracle.sd),
            (stats.mean, oracle.mean),
            (stats.median, oracle.median),
        ] {
            assert!((a - b).abs() < 1e-9, "{stats:?} vs {oracle:?}");
        }
    }

    #[test]
    fn ate_identity_rmse_squared() {
        let s = AteStats::from_residuals(&[0.1, 0.5, 2.0, 0.0, 3.3]);
        let lhs = s.rmse * s.rmse;
        let rhs = s.mean * s.mean + s.sd * s.sd;
        assert!((lhs - rhs).abs() <= 1e-9 * lhs);
        assert_eq!(s.median, 0.5);
    }
}
