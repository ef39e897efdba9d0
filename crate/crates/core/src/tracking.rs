//! Frame-to-frame motion estimation and keyframe selection.

use std::fmt::Write as _;

use log::debug;
use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::features::{
    extract_features, match_descriptors, ransac_rigid_filter, Descriptor, FeatureConfig,
    FeatureError, FrameFeatures, Keypoint, Match, RigidRansacConfig,
};
use crate::geometry::{PoseSE3, RigidTransform};
use crate::raster::{back_project, CameraModel, RasterFrame};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackingError {
    #[error("point sets differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate geometry: points are coincident or collinear")]
    DegenerateGeometry,
    #[error("no previous motion to extrapolate")]
    NoHistory,
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

/// Closed-form minimizer of the mean squared alignment error
/// `(1/N) sum |p_prev_i - (R p_t_i + t)|^2` via centroid/covariance SVD.
pub fn align_svd(
    p_t: &[Vector3<f64>],
    p_prev: &[Vector3<f64>],
) -> Result<RigidTransform, TrackingError> {
    if p_t.len() != p_prev.len() {
        return Err(TrackingError::LengthMismatch(p_t.len(), p_prev.len()));
    }
    if p_t.len() < 3 {
        return Err(TrackingError::DegenerateGeometry);
    }
    let n = p_t.len() as f64;
    let ca = p_t.iter().sum::<Vector3<f64>>() / n;
    let cb = p_prev.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = 0.0f64;
    for (a, b) in p_t.iter().zip(p_prev) {
        let (da, db) = (a - ca, b - cb);
        h += da * db.transpose();
        spread = spread.max(da.norm_squared()).max(db.norm_squared());
    }
    let svd = h.svd(true, true);
    let mut sv = svd.singular_values;
    sv.as_mut_slice().sort_by(|a, b| b.total_cmp(a));
    // rank < 2 leaves the rotation about the common axis undetermined
    if spread == 0.0 || sv[1] <= 1e-12 * sv[0].max(f64::MIN_POSITIVE) {
        return Err(TrackingError::DegenerateGeometry);
    }
    let (u, v_t) = (svd.u.expect("svd u"), svd.v_t.expect("svd v_t"));
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rotation = v * d * u.transpose();
    Ok(PoseSE3::new(rotation, cb - rotation * ca))
}

/// Mean squared alignment error of `rt` applied to `p_t` against `p_prev`.
pub fn alignment_residual(
    rt: &RigidTransform,
    p_t: &[Vector3<f64>],
    p_prev: &[Vector3<f64>],
) -> f64 {
    let sum: f64 = p_t
        .iter()
        .zip(p_prev)
        .map(|(a, b)| (b - rt.transform_point(a)).norm_squared())
        .sum();
    sum / p_t.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackingConfig {
    pub features: FeatureConfig,
    pub ransac: RigidRansacConfig,
    pub min_inliers: usize,
    pub keyframe_min_frames: usize,
    pub keyframe_max_common: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            ransac: RigidRansacConfig::default(),
            min_inliers: 20,
            keyframe_min_frames: 5,
            keyframe_max_common: 100,
        }
    }
}

/// Features of one frame that have a height, with their LIDAR-frame points.
#[derive(Clone, Debug, Default)]
pub struct PreparedFrame {
    pub frame_index: usize,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
    pub points: Vec<Vector3<f64>>,
}

impl PreparedFrame {
    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }
}

/// Extracts features and back-projects them. Keypoints on empty pixels carry
/// no height and are dropped.
pub fn prepare_frame(frame: &RasterFrame, cam: &CameraModel, cfg: &FeatureConfig) -> PreparedFrame {
    let FrameFeatures {
        keypoints,
        descriptors,
    } = extract_features(&frame.intensity, cfg);
    let mut out = PreparedFrame {
        frame_index: frame.frame_index,
        ..Default::default()
    };
    for (kp, d) in keypoints.into_iter().zip(descriptors) {
        if let Ok(p) = back_project(kp.u, kp.v, frame, cam) {
            out.keypoints.push(kp);
            out.descriptors.push(d);
            out.points.push(p);
        }
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct TrackState {
    pub current_pose: PoseSE3,
    pub last_keyframe_id: Option<usize>,
    pub frames_since_keyframe: usize,
    pub last_relative_motion: Option<RigidTransform>,
    pub prev_features: Option<PreparedFrame>,
    pub last_keyframe_descriptors: Vec<Descriptor>,
}

impl TrackState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark_keyframe(&mut self, id: usize, descriptors: Vec<Descriptor>) {
        self.last_keyframe_id = Some(id);
        self.frames_since_keyframe = 0;
        self.last_keyframe_descriptors = descriptors;
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TrackQuality {
    pub matched_count: usize,
    pub inlier_count: usize,
    pub fallback_used: bool,
}

/// Constant-velocity prediction: the last observed relative motion.
pub fn fallback_motion(state: &TrackState) -> Result<RigidTransform, TrackingError> {
    state.last_relative_motion.ok_or(TrackingError::NoHistory)
}

pub fn keyframe_decision(
    state: &TrackState,
    matches_with_last_kf: usize,
    cfg: &TrackingConfig,
) -> bool {
    state.frames_since_keyframe >= cfg.keyframe_min_frames
        && matches_with_last_kf <= cfg.keyframe_max_common
}

/// Estimates the motion mapping the current frame's points into the previous
/// frame (`p_prev = R p_t + t`) and advances the pose. The first frame only
/// bootstraps the state and returns `None`.
pub fn track_prepared(
    state: &mut TrackState,
    current: PreparedFrame,
    cfg: &TrackingConfig,
) -> (Option<RigidTransform>, TrackQuality) {
    let matches = match_with_previous(state, &current, cfg);
    track_with_matches(state, current, &matches, cfg)
}

/// Descriptor matches from `current` (a side) to the previous frame (b side).
pub fn match_with_previous(
    state: &TrackState,
    current: &PreparedFrame,
    cfg: &TrackingConfig,
) -> Vec<Match> {
    state
        .prev_features
        .as_ref()
        .map(|prev| match_descriptors(&current.descriptors, &prev.descriptors, cfg.features.ratio))
        .unwrap_or_default()
}

/// [`track_prepared`] with the frame-to-frame matches already computed.
pub fn track_with_matches(
    state: &mut TrackState,
    current: PreparedFrame,
    matches: &[Match],
    cfg: &TrackingConfig,
) -> (Option<RigidTransform>, TrackQuality) {
    let Some(prev) = state.prev_features.take() else {
        state.prev_features = Some(current);
        state.current_pose = PoseSE3::identity();
        return (None, TrackQuality::default());
    };
    let mut quality = TrackQuality {
        matched_count: matches.len(),
        ..Default::default()
    };
    let estimate = ransac_rigid_filter(&current.points, &prev.points, matches, &cfg.ransac)
        .ok()
        .and_then(|(inliers, _)| {
            quality.inlier_count = inliers.len();
            if inliers.len() < cfg.min_inliers {
                return None;
            }
            let a: Vec<_> = inliers.iter().map(|m| current.points[m.idx_a]).collect();
            let b: Vec<_> = inliers.iter().map(|m| prev.points[m.idx_b]).collect();
            align_svd(&a, &b).ok()
        });
    let relative = match estimate {
        Some(t) => {
            state.last_relative_motion = Some(t);
            t
        }
        None => {
            quality.fallback_used = true;
            debug!(
                "frame {}: {} inliers, using constant-velocity motion",
                current.frame_index, quality.inlier_count
            );
            fallback_motion(state).unwrap_or_default()
        }
    };
    state.current_pose = state.current_pose.compose(&relative);
    state.current_pose.renormalize_if_needed(1e-9);
    state.frames_since_keyframe += 1;
    state.prev_features = Some(current);
    (Some(relative), quality)
}

pub fn track_frame(
    state: &mut TrackState,
    frame: &RasterFrame,
    cam: &CameraModel,
    cfg: &TrackingConfig,
) -> (Option<RigidTransform>, TrackQuality) {
    track_prepared(state, prepare_frame(frame, cam, &cfg.features), cfg)
}

/// Matches between `descriptors` and those stored for the last keyframe.
pub fn matches_with_last_keyframe(
    state: &TrackState,
    descriptors: &[Descriptor],
    ratio: f64,
) -> usize {
    match_descriptors(descriptors, &state.last_keyframe_descriptors, ratio).len()
}

/// One CSV row: frame index, matched, inliers, fallback flag, then the pose
/// as 12 row-major numbers.
pub fn format_track_row(frame_index: usize, q: &TrackQuality, pose: &PoseSE3) -> String {
    let mut s = format!(
        "{},{},{},{}",
        frame_index, q.matched_count, q.inlier_count, q.fallback_used as u8
    );
    for v in pose.to_row_major() {
        let _ = write!(s, ",{v:e}");
    }
    s
}

pub const TRACK_LOG_HEADER: &str = "frame_index,matched_count,inlier_count,fallback_used,r00,r01,r02,t0,r10,r11,r12,t1,r20,r21,r22,t2";

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{chordal_distance, rot_z, so3_exp};
    use proptest::{prop_assert, proptest};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(n: usize, rng: &mut ChaCha8Rng) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-10.0..10.0),
                    rng.random_range(-3.0..3.0),
                )
            })
            .collect()
    }

    #[test]
    fn identical_sets_give_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = cloud(10, &mut rng);
        let t = align_svd(&p, &p).unwrap();
        assert!((t.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(t.translation.norm() < 1e-12);
    }

    #[test]
    fn pure_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = cloud(10, &mut rng);
        let q: Vec<_> = p.iter().map(|x| x + Vector3::new(1.0, 2.0, 3.0)).collect();
        let t = align_svd(&p, &q).unwrap();
        assert!((t.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!((t.translation - Vector3::new(1.0, 2.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn yaw_matches_brute_force_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = cloud(10, &mut rng);
        let truth = rot_z(30f64.to_radians());
        let q: Vec<_> = p.iter().map(|x| truth * x).collect();
        let t = align_svd(&p, &q).unwrap();
        assert!(chordal_distance(&t.rotation, &truth) < 1e-10);
        assert!(alignment_residual(&t, &p, &q) <= 1e-20);

        // independent oracle: scan yaw at 1e-3 rad with the optimal translation
        // for each yaw (difference of centroids)
        let n = p.len() as f64;
        let cp = p.iter().sum::<Vector3<f64>>() / n;
        let cq = q.iter().sum::<Vector3<f64>>() / n;
        let mut best = (f64::INFINITY, 0.0);
        let mut yaw = -std::f64::consts::PI;
        while yaw < std::f64::consts::PI {
            let r = rot_z(yaw);
            let cand = PoseSE3::new(r, cq - r * cp);
            let cost = alignment_residual(&cand, &p, &q);
            if cost < best.0 {
                best = (cost, yaw);
            }
            yaw += 1e-3;
        }
        assert!((best.1 - 30f64.to_radians()).abs() <= 1e-3);
        assert!(alignment_residual(&t, &p, &q) <= best.0);
    }

    #[test]
    fn collinear_points_are_degenerate() {
        let p: Vec<_> = (0..5).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        assert_eq!(
            align_svd(&p, &p).unwrap_err(),
            TrackingError::DegenerateGeometry
        );
        let same = vec![Vector3::new(1.0, 1.0, 1.0); 4];
        assert_eq!(
            align_svd(&same, &same).unwrap_err(),
            TrackingError::DegenerateGeometry
        );
        assert!(matches!(
            align_svd(&p[..3], &p[..2]),
            Err(TrackingError::LengthMismatch(3, 2))
        ));
    }

    fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let axis = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        so3_exp(&(axis.normalize() * rng.random_range(0.0..3.0)))
    }

    proptest! {
        #[test]
        fn equivariant_under_rotation(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = cloud(12, &mut rng);
            let motion = PoseSE3::new(random_rotation(&mut rng), Vector3::new(1.0, -2.0, 0.5));
            let q: Vec<_> = p.iter().map(|x| motion.transform_point(x) + Vector3::new(rng.random_range(-0.1..0.1), 0.0, 0.0)).collect();
            let t = align_svd(&p, &q).unwrap();
            let rq = random_rotation(&mut rng);
            let p2: Vec<_> = p.iter().map(|x| rq * x).collect();
            let q2: Vec<_> = q.iter().map(|x| rq * x).collect();
            let t2 = align_svd(&p2, &q2).unwrap();
            prop_assert!((t2.rotation - rq * t.rotation * rq.transpose()).norm() < 1e-9);
            prop_assert!((t2.translation - rq * t.translation).norm() < 1e-9);
        }

        #[test]
        fn locally_optimal_under_noise(seed in 0u64..200) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = cloud(15, &mut rng);
            let motion = PoseSE3::new(random_rotation(&mut rng), Vector3::new(0.3, 0.2, -0.1));
            let q: Vec<_> = p
                .iter()
                .map(|x| motion.transform_point(x) + Vector3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2)))
                .collect();
            let t = align_svd(&p, &q).unwrap();
            let best = alignment_residual(&t, &p, &q);
            prop_assert!(best <= alignment_residual(&PoseSE3::identity(), &p, &q));
            for _ in 0..100 {
                let mut d = nalgebra::Vector6::zeros();
                for k in 0..6 {
                    d[k] = rng.random_range(-1e-3..1e-3);
                }
                prop_assert!(best <= alignment_residual(&t.retract(&d), &p, &q));
            }
            prop_assert!((t.rotation.determinant() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn keyframe_rule() {
        let cfg = TrackingConfig::default();
        let mut s = TrackState::new();
        s.frames_since_keyframe = 4;
        assert!(!keyframe_decision(&s, 50, &cfg));
        s.frames_since_keyframe = 6;
        assert!(!keyframe_decision(&s, 150, &cfg));
        assert!(keyframe_decision(&s, 80, &cfg));
    }

    #[test]
    fn fallback_repeats_last_motion() {
        let mut s = TrackState::new();
        assert_eq!(fallback_motion(&s).unwrap_err(), TrackingError::NoHistory);
        s.last_relative_motion = Some(PoseSE3::identity());
        assert_eq!(fallback_motion(&s).unwrap(), PoseSE3::identity());
        let fwd = PoseSE3::from_translation(Vector3::new(1.0, 0.0, 0.0));
        s.last_relative_motion = Some(fwd);
        assert_eq!(fallback_motion(&s).unwrap(), fwd);

        // three featureless frames advance the pose by three steps
        s.prev_features = Some(PreparedFrame::default());
        let cfg = TrackingConfig::default();
        for _ in 0..3 {
            let (rel, q) = track_prepared(&mut s, PreparedFrame::default(), &cfg);
            assert!(q.fallback_used);
            assert_eq!(rel.unwrap(), fwd);
        }
        assert!((s.current_pose.translation - Vector3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn track_row_has_sixteen_fields() {
        let row = format_track_row(
            3,
            &TrackQuality {
                matched_count: 10,
                inlier_count: 8,
                fallback_used: false,
            },
            &PoseSE3::identity(),
        );
        assert_eq!(row.split(',').count(), 16);
        assert!(row.starts_with("3,10,8,0,"));
        assert_eq!(TRACK_LOG_HEADER.split(',').count(), 16);
    }
}
