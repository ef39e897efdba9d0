//! Keyframe database, local map and windowed bundle adjustment.

mod ba;

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::Vector3;
use thiserror::Error;

use crate::features::{Descriptor, Keypoint};
use crate::geometry::PoseSE3;
use crate::tracking::PreparedFrame;

pub use ba::{
    ba_jacobians, local_bundle_adjust, reproject_residual, solve_bundle_adjustment, BaConfig,
    BaJacobians, BaProblem, BaResult, BaSolution,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MappingError {
    #[error("keyframe {0} is already registered")]
    DuplicateKeyFrame(usize),
    #[error("unknown keyframe {0}")]
    UnknownKeyFrame(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub point_id: usize,
    /// Index into the keyframe's feature arrays.
    pub feature: usize,
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Debug)]
pub struct KeyFrame {
    pub id: usize,
    pub frame_index: usize,
    /// Sensor to world.
    pub pose: PoseSE3,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<Descriptor>,
    /// Feature positions in the keyframe's sensor frame.
    pub points: Vec<Vector3<f64>>,
    /// Filled in by [`LocalMap::register_keyframe`].
    pub observations: Vec<Observation>,
}

impl KeyFrame {
    pub fn new(id: usize, pose: PoseSE3, features: PreparedFrame) -> Self {
        Self {
            id,
            frame_index: features.frame_index,
            pose,
            keypoints: features.keypoints,
            descriptors: features.descriptors,
            points: features.points,
            observations: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapPoint {
    pub id: usize,
    pub position: Vector3<f64>,
    /// Descriptor of the most recent observation.
    pub descriptor: Descriptor,
    pub observing_keyframes: BTreeSet<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapConfig {
    pub window: usize,
    pub max_hamming: u32,
    pub max_dist_m: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        Self {
            window: 5,
            max_hamming: 50,
            max_dist_m: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RegisterReport {
    pub matched: usize,
    pub created: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CullReport {
    pub evicted_keyframes: Vec<usize>,
    pub archived_points: usize,
}

/// Every keyframe ever registered plus the sliding window of recent ones and
/// the map points they observe. Keyframes leaving the window stay in
/// `keyframes`; points losing all window observers move to `archived_points`.
#[derive(Clone, Debug, Default)]
pub struct LocalMap {
    pub cfg: MapConfig,
    pub keyframes: BTreeMap<usize, KeyFrame>,
    pub window: VecDeque<usize>,
    pub points: BTreeMap<usize, MapPoint>,
    pub archived_points: Vec<MapPoint>,
    next_point_id: usize,
}

impl LocalMap {
    pub fn new(cfg: MapConfig) -> Self {
        assert!(cfg.window >= 1, "window must hold at least one keyframe");
        Self {
            cfg,
            ..Default::default()
        }
    }

    pub fn keyframe(&self, id: usize) -> Option<&KeyFrame> {
        self.keyframes.get(&id)
    }

    pub fn window_keyframes(&self) -> impl Iterator<Item = &KeyFrame> {
        self.window.iter().map(|id| &self.keyframes[id])
    }

    pub fn last_keyframe(&self) -> Option<&KeyFrame> {
        self.keyframes.values().next_back()
    }

    /// Associates the keyframe's features with local map points (Hamming and
    /// 3-D distance gates, one-to-one, closest descriptors first) and creates
    /// points for the rest. The keyframe enters the window.
    pub fn register_keyframe(&mut self, mut kf: KeyFrame) -> Result<RegisterReport, MappingError> {
        if self.keyframes.contains_key(&kf.id) {
            return Err(MappingError::DuplicateKeyFrame(kf.id));
        }
        let world: Vec<Vector3<f64>> = kf
            .points
            .iter()
            .map(|p| kf.pose.transform_point(p))
            .collect();
        let gate2 = self.cfg.max_dist_m * self.cfg.max_dist_m;

        let mut candidates: Vec<(u32, usize, usize)> = Vec::new();
        for (fi, (d, w)) in kf.descriptors.iter().zip(&world).enumerate() {
            for mp in self.points.values() {
                if (mp.position - w).norm_squared() > gate2 {
                    continue;
                }
                let h = d.hamming(&mp.descriptor);
                if h <= self.cfg.max_hamming {
                    candidates.push((h, fi, mp.id));
                }
            }
        }
        candidates.sort_unstable();
        let mut feature_taken = vec![false; kf.points.len()];
        let mut point_taken = BTreeSet::new();
        let mut assignment: Vec<Option<usize>> = vec![None; kf.points.len()];
        for (_, fi, pid) in candidates {
            if feature_taken[fi] || point_taken.contains(&pid) {
                continue;
            }
            feature_taken[fi] = true;
            point_taken.insert(pid);
            assignment[fi] = Some(pid);
        }

        let mut report = RegisterReport::default();
        kf.observations.clear();
        for (fi, assigned) in assignment.into_iter().enumerate() {
            let pid = match assigned {
                Some(pid) => {
                    let mp = self.points.get_mut(&pid).expect("candidate point exists");
                    mp.observing_keyframes.insert(kf.id);
                    mp.descriptor = kf.descriptors[fi];
                    report.matched += 1;
                    pid
                }
                None => {
                    let pid = self.next_point_id;
                    self.next_point_id += 1;
                    self.points.insert(
                        pid,
                        MapPoint {
                            id: pid,
                            position: world[fi],
                            descriptor: kf.descriptors[fi],
                            observing_keyframes: BTreeSet::from([kf.id]),
                        },
                    );
                    report.created += 1;
                    pid
                }
            };
            let kp = kf.keypoints[fi];
            kf.observations.push(Observation {
                point_id: pid,
                feature: fi,
                u: kp.u,
                v: kp.v,
            });
        }
        self.window.push_back(kf.id);
        self.keyframes.insert(kf.id, kf);
        Ok(report)
    }

    /// Shrinks the window to its configured size and archives points no
    /// window keyframe observes.
    pub fn cull(&mut self) -> CullReport {
        let mut report = CullReport::default();
        while self.window.len() > self.cfg.window {
            let id = self.window.pop_front().expect("window nonempty");
            report.evicted_keyframes.push(id);
        }
        if report.evicted_keyframes.is_empty() {
            return report;
        }
        let window: BTreeSet<usize> = self.window.iter().copied().collect();
        let stale: Vec<usize> = self
            .points
            .values()
            .filter(|mp| mp.observing_keyframes.is_disjoint(&window))
            .map(|mp| mp.id)
            .collect();
        report.archived_points = stale.len();
        for id in stale {
            let mp = self.points.remove(&id).expect("stale point exists");
            self.archived_points.push(mp);
        }
        report
    }

    pub fn set_pose(&mut self, id: usize, pose: PoseSE3) -> Result<(), MappingError> {
        let kf = self
            .keyframes
            .get_mut(&id)
            .ok_or(MappingError::UnknownKeyFrame(id))?;
        kf.pose = pose;
        Ok(())
    }

    pub fn apply_ba(&mut self, result: &BaResult) {
        for (id, pose) in &result.poses {
            if let Some(kf) = self.keyframes.get_mut(id) {
                kf.pose = *pose;
            }
        }
        for (id, p) in &result.points {
            if let Some(mp) = self.points.get_mut(id) {
                mp.position = *p;
            }
        }
    }

    /// Replaces keyframe poses (e.g. after pose-graph optimization) and moves
    /// each local point rigidly with its newest observing window keyframe.
    pub fn apply_pose_corrections(&mut self, poses: &BTreeMap<usize, PoseSE3>) {
        let mut corrections = BTreeMap::new();
        for (id, new_pose) in poses {
            if let Some(kf) = self.keyframes.get_mut(id) {
                corrections.insert(*id, new_pose.compose(&kf.pose.inverse()));
                kf.pose = *new_pose;
            }
        }
        for mp in self.points.values_mut() {
            let anchor = self
                .window
                .iter()
                .rev()
                .find(|id| mp.observing_keyframes.contains(id));
            if let Some(c) = anchor.and_then(|id| corrections.get(id)) {
                mp.position = c.transform_point(&mp.position);
            }
        }
    }

    /// Archived points followed by the live local points, one `id x y z` line each.
    pub fn format_points(&self) -> String {
        let mut s = String::new();
        for mp in self.archived_points.iter().chain(self.points.values()) {
            let p = mp.position;
            let _ = writeln!(s, "{} {:e} {:e} {:e}", mp.id, p.x, p.y, p.z);
        }
        s
    }
}
