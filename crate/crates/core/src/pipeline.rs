//! Full pipeline: per-frame front end and tracking, per-keyframe mapping
//! and loop closure, trajectory assembly and reporting.
//!
//! Deterministic mode runs every stage synchronously on the calling thread.
//! Concurrent mode runs tracking, mapping and loop closure on three threads
//! that hand immutable keyframe snapshots forward through bounded queues.
//! Pose corrections flow back through small unbounded channels so neither
//! direction can deadlock on a full queue:
//!
//! * mapping tells tracking the refined pose of its newest keyframe, and
//!   tracking rebases its head by that keyframe's correction;
//! * loop closure sends optimized graph poses to mapping. Window updates
//!   that mapping computed before it saw the latest loop result are dropped
//!   by the loop thread, so loop-closure poses take precedence.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use log::{debug, info, warn};
use thiserror::Error;

use crate::config::{ConfigError, Mode, PipelineConfig};
use crate::dataset_io::{
    compute_ate, format_trajectory, list_frame_files, load_groundtruth, load_point_cloud, AteStats,
    CloudFormat, DatasetError, PointCloud, Trajectory,
};
use crate::geometry::PoseSE3;
use crate::loop_closure::{
    add_loop_and_optimize, find_nearest_keyframes, format_loop_line, verify_candidate, LoopConfig,
    PoseGraph,
};
use crate::mapping::{local_bundle_adjust, KeyFrame, LocalMap};
use crate::preprocess::{fit_ground_plane, remove_ground, RansacConfig};
use crate::raster::rasterize;
use crate::synth::SyntheticSequence;
use crate::timing::{Stage, TimingStats};
use crate::tracking::{
    format_track_row, keyframe_decision, match_with_previous, matches_with_last_keyframe,
    prepare_frame, track_with_matches, PreparedFrame, TrackQuality, TrackState, TRACK_LOG_HEADER,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("no point-cloud frames found in {0}")]
    NoFrames(PathBuf),
    #[error("cannot write {path}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("worker thread panicked: {0}")]
    Worker(String),
}

/// Random access to the frames of a sequence.
pub trait FrameSource: Sync {
    fn len(&self) -> usize;
    fn load(&self, index: usize) -> Result<PointCloud, DatasetError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct FileSource {
    pub files: Vec<PathBuf>,
    pub format: CloudFormat,
}

impl FileSource {
    pub fn open(dir: &Path, format: CloudFormat, max_frames: usize) -> Result<Self, PipelineError> {
        let mut files = list_frame_files(dir, format)?;
        if files.is_empty() {
            return Err(PipelineError::NoFrames(dir.to_path_buf()));
        }
        if max_frames > 0 {
            files.truncate(max_frames);
        }
        Ok(Self { files, format })
    }
}

impl FrameSource for FileSource {
    fn len(&self) -> usize {
        self.files.len()
    }

    fn load(&self, index: usize) -> Result<PointCloud, DatasetError> {
        let mut cloud = load_point_cloud(&self.files[index], self.format)?;
        cloud.frame_index = index;
        Ok(cloud)
    }
}

impl FrameSource for Vec<PointCloud> {
    fn len(&self) -> usize {
        Vec::len(self)
    }

    fn load(&self, index: usize) -> Result<PointCloud, DatasetError> {
        let mut cloud = self[index].clone();
        cloud.frame_index = index;
        Ok(cloud)
    }
}

impl FrameSource for SyntheticSequence {
    fn len(&self) -> usize {
        SyntheticSequence::len(self)
    }

    fn load(&self, index: usize) -> Result<PointCloud, DatasetError> {
        Ok(self.cloud(index))
    }
}

/// Where each frame sits relative to its reference keyframe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRecord {
    pub frame_index: usize,
    pub keyframe_id: usize,
    pub relative: PoseSE3,
    pub quality: TrackQuality,
}

#[derive(Clone, Debug, Default)]
pub struct RunCounters {
    pub frames: usize,
    pub keyframes: usize,
    pub fallback_frames: usize,
    pub load_failures: usize,
    pub ground_failures: usize,
    pub ba_runs: usize,
    pub ba_singular: usize,
    pub loop_candidates: usize,
    pub loops_accepted: usize,
}

impl RunCounters {
    fn merge(&mut self, o: &RunCounters) {
        self.frames += o.frames;
        self.keyframes += o.keyframes;
        self.fallback_frames += o.fallback_frames;
        self.load_failures += o.load_failures;
        self.ground_failures += o.ground_failures;
        self.ba_runs += o.ba_runs;
        self.ba_singular += o.ba_singular;
        self.loop_candidates += o.loop_candidates;
        self.loops_accepted += o.loops_accepted;
    }
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub trajectory: Trajectory,
    /// `(keyframe id, frame index, final pose)`.
    pub keyframes: Vec<(usize, usize, PoseSE3)>,
    pub records: Vec<FrameRecord>,
    pub map_text: String,
    pub loop_lines: Vec<String>,
    pub counters: RunCounters,
    pub timing: TimingStats,
    pub wall_time_s: f64,
}

fn frame_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

/// Ground removal, rasterization and feature extraction for one cloud.
fn front_end(
    cfg: &PipelineConfig,
    cloud: &PointCloud,
    timing: &mut TimingStats,
    counters: &mut RunCounters,
) -> PreparedFrame {
    let index = cloud.frame_index;
    let cleaned = if cfg.ground_enabled {
        timing.time(Stage::GroundRemoval, || {
            let ground = RansacConfig {
                seed: frame_seed(cfg.seed, index),
                ..cfg.ground
            };
            match fit_ground_plane(cloud, &ground) {
                Ok(plane) => Some(remove_ground(cloud, &plane, ground.inlier_dist_m)),
                Err(e) => {
                    warn!("frame {index}: ground removal skipped: {e}");
                    None
                }
            }
        })
    } else {
        None
    };
    if cfg.ground_enabled && cleaned.is_none() {
        counters.ground_failures += 1;
    }
    let cloud = cleaned.as_ref().unwrap_or(cloud);
    let raster = timing.time(Stage::ImageProjection, || {
        rasterize(cloud, &cfg.camera, &cfg.zmap)
    });
    timing.time(Stage::FeatureExtractionMatching, || {
        prepare_frame(&raster, &cfg.camera, &cfg.tracking.features)
    })
}

fn load_and_prepare(
    cfg: &PipelineConfig,
    source: &dyn FrameSource,
    index: usize,
    timing: &mut TimingStats,
    counters: &mut RunCounters,
) -> PreparedFrame {
    match source.load(index) {
        Ok(cloud) => front_end(cfg, &cloud, timing, counters),
        Err(e) => {
            warn!("frame {index}: {e}; continuing with the motion model");
            counters.load_failures += 1;
            PreparedFrame {
                frame_index: index,
                ..Default::default()
            }
        }
    }
}

/// Frame-to-frame tracking and keyframe selection.
struct Tracker {
    cfg: PipelineConfig,
    state: TrackState,
    /// Pose of every keyframe in the tracker's current frame of reference.
    anchors: BTreeMap<usize, PoseSE3>,
    next_keyframe: usize,
    records: Vec<FrameRecord>,
    counters: RunCounters,
}

impl Tracker {
    fn new(cfg: &PipelineConfig) -> Self {
        let mut cfg = cfg.clone();
        cfg.tracking.ransac.seed = cfg.seed;
        Self {
            cfg,
            state: TrackState::new(),
            anchors: BTreeMap::new(),
            next_keyframe: 0,
            records: Vec::new(),
            counters: RunCounters::default(),
        }
    }

    /// Tracks one frame; returns a keyframe when one is created.
    fn process(&mut self, frame: PreparedFrame, timing: &mut TimingStats) -> Option<KeyFrame> {
        let tcfg = &self.cfg.tracking;
        let index = frame.frame_index;
        let first = self.state.prev_features.is_none() && self.state.last_keyframe_id.is_none();
        let (matches, common) = timing.time(Stage::FeatureExtractionMatching, || {
            let m = match_with_previous(&self.state, &frame, tcfg);
            // only needed once enough frames have passed since the keyframe
            let common = if self.state.frames_since_keyframe + 1 >= tcfg.keyframe_min_frames {
                matches_with_last_keyframe(&self.state, &frame.descriptors, tcfg.features.ratio)
            } else {
                usize::MAX
            };
            (m, common)
        });
        let keep = frame.clone();
        let (_, quality) = timing.time(Stage::PoseEstimation, || {
            track_with_matches(&mut self.state, frame, &matches, tcfg)
        });
        if quality.fallback_used {
            self.counters.fallback_frames += 1;
        }
        self.counters.frames += 1;
        let is_keyframe = first || keyframe_decision(&self.state, common, tcfg);
        let keyframe = is_keyframe.then(|| {
            let id = self.next_keyframe;
            self.next_keyframe += 1;
            self.state.mark_keyframe(id, keep.descriptors.clone());
            self.anchors.insert(id, self.state.current_pose);
            self.counters.keyframes += 1;
            debug!(
                "frame {index}: keyframe {id} ({} features, {common} common)",
                keep.len()
            );
            KeyFrame::new(id, self.state.current_pose, keep)
        });
        let kf_id = self
            .state
            .last_keyframe_id
            .expect("first frame is a keyframe");
        self.records.push(FrameRecord {
            frame_index: index,
            keyframe_id: kf_id,
            relative: self.anchors[&kf_id]
                .inverse()
                .compose(&self.state.current_pose),
            quality,
        });
        keyframe
    }

    /// Moves the tracking head (and all anchors) by the correction that
    /// takes keyframe `id` from its tracked pose to `corrected`.
    fn rebase(&mut self, id: usize, corrected: &PoseSE3) {
        let Some(anchor) = self.anchors.get(&id) else {
            return;
        };
        let c = corrected.compose(&anchor.inverse());
        self.state.current_pose = c.compose(&self.state.current_pose);
        self.state.current_pose.renormalize_if_needed(1e-9);
        for a in self.anchors.values_mut() {
            *a = c.compose(a);
        }
    }
}

/// Map maintenance and local bundle adjustment.
struct Mapper {
    cfg: PipelineConfig,
    map: LocalMap,
    counters: RunCounters,
}

impl Mapper {
    fn new(cfg: &PipelineConfig) -> Self {
        Self {
            cfg: cfg.clone(),
            map: LocalMap::new(cfg.map),
            counters: RunCounters::default(),
        }
    }

    /// Registers, culls and adjusts; returns the window poses afterwards.
    fn process(&mut self, kf: KeyFrame, timing: &mut TimingStats) -> Vec<(usize, PoseSE3)> {
        let id = kf.id;
        timing.time(Stage::Registration, || {
            match self.map.register_keyframe(kf) {
                Ok(r) => debug!(
                    "keyframe {id}: {} matched, {} new points",
                    r.matched, r.created
                ),
                Err(e) => warn!("keyframe {id}: {e}"),
            }
            self.map.cull();
        });
        if self.cfg.ba_enabled && self.map.window.len() > 1 {
            let result = timing.time(Stage::LocalBa, || {
                let r = local_bundle_adjust(&self.map, &self.cfg.camera, &self.cfg.ba);
                self.map.apply_ba(&r);
                r
            });
            self.counters.ba_runs += 1;
            if result.singular {
                self.counters.ba_singular += 1;
                warn!("keyframe {id}: local BA singular, poses unchanged");
            }
            debug!(
                "keyframe {id}: BA cost {:.3} -> {:.3} in {} iterations",
                result.initial_cost, result.final_cost, result.iterations
            );
        }
        self.map
            .window_keyframes()
            .map(|k| (k.id, k.pose))
            .collect()
    }
}

/// Keyframe database, pose graph and loop detection.
struct LoopCloser {
    cfg: LoopConfig,
    max_iters: usize,
    graph: PoseGraph,
    database: BTreeMap<usize, KeyFrame>,
    lines: Vec<String>,
    counters: RunCounters,
}

impl LoopCloser {
    fn new(cfg: &PipelineConfig) -> Self {
        Self {
            cfg: LoopConfig {
                seed: cfg.seed,
                ..cfg.loop_closure
            },
            max_iters: cfg.loop_closure.max_iters,
            graph: PoseGraph::new(),
            database: BTreeMap::new(),
            lines: Vec::new(),
            counters: RunCounters::default(),
        }
    }

    /// Adds a keyframe with the window poses mapping produced for it, then
    /// searches for one loop. Returns the optimized poses of every node when
    /// a loop was closed.
    fn insert(
        &mut self,
        mut kf: KeyFrame,
        window: &[(usize, PoseSE3)],
        timing: &mut TimingStats,
    ) -> Option<BTreeMap<usize, PoseSE3>> {
        for (id, pose) in window {
            if let Some(node) = self.graph.nodes.get_mut(id) {
                *node = *pose;
            }
        }
        let pose = window
            .iter()
            .find(|(id, _)| *id == kf.id)
            .map_or(kf.pose, |(_, p)| *p);
        self.graph.add_node(kf.id, pose);
        let ids: Vec<usize> = window.iter().map(|(id, _)| *id).collect();
        self.graph.refresh_odometry(&ids);
        kf.pose = pose;
        kf.observations.clear();
        let id = kf.id;
        self.database.insert(id, kf);
        if !self.cfg.enabled {
            return None;
        }
        timing.time(Stage::LoopClosure, || self.search(id))
    }

    /// Inserts a keyframe whose pose was computed before the latest loop
    /// correction: it is attached to its predecessor through the relative
    /// pose mapping saw, and the stale window poses are ignored.
    fn insert_stale(
        &mut self,
        kf: KeyFrame,
        window: &[(usize, PoseSE3)],
        timing: &mut TimingStats,
    ) -> Option<BTreeMap<usize, PoseSE3>> {
        let mapped = window
            .iter()
            .find(|(id, _)| *id == kf.id)
            .map_or(kf.pose, |(_, p)| *p);
        let prev = window.iter().rev().find(|(id, _)| *id < kf.id);
        let pose = match prev.and_then(|(pid, ppose)| self.graph.nodes.get(pid).map(|g| (g, ppose)))
        {
            Some((graph_prev, mapped_prev)) => {
                graph_prev.compose(&mapped_prev.inverse().compose(&mapped))
            }
            None => mapped,
        };
        let id = kf.id;
        self.insert(kf, &[(id, pose)], timing)
    }

    fn search(&mut self, id: usize) -> Option<BTreeMap<usize, PoseSE3>> {
        let candidates = find_nearest_keyframes(
            &self.graph,
            id,
            self.cfg.dist_threshold_m,
            self.cfg.exclusion,
        );
        for cid in candidates {
            self.counters.loop_candidates += 1;
            let (query, candidate) = (&self.database[&id], &self.database[&cid]);
            match verify_candidate(query, candidate, &self.cfg) {
                Ok(lc) => {
                    self.lines
                        .push(format_loop_line(id, cid, lc.matches.len(), true));
                    match add_loop_and_optimize(&mut self.graph, &lc, self.max_iters) {
                        Ok(report) => {
                            self.counters.loops_accepted += 1;
                            info!(
                                "loop {cid} -> {id}: {} inliers, graph cost {:.4} -> {:.4}",
                                lc.matches.len(),
                                report.initial_cost,
                                report.final_cost
                            );
                            for (k, node) in self.graph.nodes.iter_mut() {
                                if let Some(kf) = self.database.get_mut(k) {
                                    kf.pose = *node;
                                }
                            }
                            return Some(self.graph.nodes.clone());
                        }
                        Err(e) => {
                            warn!("loop {cid} -> {id}: optimization failed: {e}");
                            self.graph.loop_edges.pop();
                            return None;
                        }
                    }
                }
                Err(r) => self.lines.push(format_loop_line(id, cid, r.inliers, false)),
            }
        }
        None
    }
}

/// Final poses for every frame: keyframe pose after optimization composed
/// with the frame's stored motion relative to that keyframe.
fn assemble(records: &[FrameRecord], keyframes: &BTreeMap<usize, PoseSE3>) -> Trajectory {
    let mut t = Trajectory::new();
    for r in records {
        let mut pose = keyframes[&r.keyframe_id].compose(&r.relative);
        pose.renormalize_if_needed(1e-9);
        t.push(r.frame_index, pose);
    }
    t
}

pub fn run_pipeline(
    cfg: &PipelineConfig,
    source: &dyn FrameSource,
) -> Result<RunOutput, PipelineError> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(PipelineError::NoFrames(cfg.dataset_path.clone()));
    }
    let start = Instant::now();
    let mut out = match cfg.mode {
        Mode::Deterministic => run_deterministic(cfg, source),
        Mode::Concurrent => run_concurrent(cfg, source)?,
    };
    out.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}

fn finish(tracker: Tracker, mapper: Mapper, closer: LoopCloser, timing: TimingStats) -> RunOutput {
    let poses: BTreeMap<usize, PoseSE3> = closer.graph.nodes.clone();
    let trajectory = assemble(&tracker.records, &poses);
    let keyframes = closer
        .database
        .values()
        .map(|kf| (kf.id, kf.frame_index, poses[&kf.id]))
        .collect();
    let mut counters = tracker.counters.clone();
    counters.merge(&mapper.counters);
    counters.merge(&closer.counters);
    RunOutput {
        trajectory,
        keyframes,
        records: tracker.records,
        map_text: mapper.map.format_points(),
        loop_lines: closer.lines,
        counters,
        timing,
        wall_time_s: 0.0,
    }
}

fn run_deterministic(cfg: &PipelineConfig, source: &dyn FrameSource) -> RunOutput {
    let mut timing = TimingStats::new();
    let mut tracker = Tracker::new(cfg);
    let mut mapper = Mapper::new(cfg);
    let mut closer = LoopCloser::new(cfg);
    let mut front_counters = RunCounters::default();
    for i in 0..source.len() {
        let frame = load_and_prepare(cfg, source, i, &mut timing, &mut front_counters);
        let Some(kf) = tracker.process(frame, &mut timing) else {
            continue;
        };
        let id = kf.id;
        let snapshot = kf.clone();
        let window = mapper.process(kf, &mut timing);
        if let Some((_, pose)) = window.iter().find(|(k, _)| *k == id) {
            tracker.rebase(id, pose);
        }
        if let Some(poses) = closer.insert(snapshot, &window, &mut timing) {
            mapper.map.apply_pose_corrections(&poses);
            tracker.rebase(id, &poses[&id]);
        }
    }
    tracker.counters.merge(&front_counters);
    finish(tracker, mapper, closer, timing)
}

struct MappedKeyFrame {
    keyframe: KeyFrame,
    window: Vec<(usize, PoseSE3)>,
    /// Number of loop corrections mapping had applied when it sent this.
    generation: usize,
}

fn run_concurrent(
    cfg: &PipelineConfig,
    source: &dyn FrameSource,
) -> Result<RunOutput, PipelineError> {
    let cap = cfg.queue_capacity;
    let (kf_tx, kf_rx) = bounded::<KeyFrame>(cap);
    let (mapped_tx, mapped_rx) = bounded::<MappedKeyFrame>(cap);
    let (head_tx, head_rx) = unbounded::<(usize, PoseSE3)>();
    let (loop_tx, loop_rx) = unbounded::<BTreeMap<usize, PoseSE3>>();

    std::thread::scope(|scope| {
        let tracking = scope.spawn(move || tracking_thread(cfg, source, kf_tx, head_rx));
        let mapping = scope.spawn(move || mapping_thread(cfg, kf_rx, mapped_tx, head_tx, loop_rx));
        let closing = scope.spawn(move || loop_thread(cfg, mapped_rx, loop_tx));
        let (tracker, t1) = join(tracking.join())?;
        let (mapper, t2) = join(mapping.join())?;
        let (closer, t3) = join(closing.join())?;
        let mut timing = t1;
        timing.merge(&t2);
        timing.merge(&t3);
        Ok(finish(tracker, mapper, closer, timing))
    })
}

fn join<T>(r: std::thread::Result<T>) -> Result<T, PipelineError> {
    r.map_err(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        PipelineError::Worker(msg)
    })
}

fn tracking_thread(
    cfg: &PipelineConfig,
    source: &dyn FrameSource,
    kf_tx: Sender<KeyFrame>,
    head_rx: Receiver<(usize, PoseSE3)>,
) -> (Tracker, TimingStats) {
    let mut timing = TimingStats::new();
    let mut tracker = Tracker::new(cfg);
    let mut front_counters = RunCounters::default();
    for i in 0..source.len() {
        let frame = load_and_prepare(cfg, source, i, &mut timing, &mut front_counters);
        if let Some((id, pose)) = head_rx.try_iter().last() {
            tracker.rebase(id, &pose);
        }
        if let Some(kf) = tracker.process(frame, &mut timing) {
            if kf_tx.send(kf).is_err() {
                warn!("mapping stopped early; dropping keyframe");
            }
        }
    }
    tracker.counters.merge(&front_counters);
    (tracker, timing)
}

fn mapping_thread(
    cfg: &PipelineConfig,
    kf_rx: Receiver<KeyFrame>,
    mapped_tx: Sender<MappedKeyFrame>,
    head_tx: Sender<(usize, PoseSE3)>,
    loop_rx: Receiver<BTreeMap<usize, PoseSE3>>,
) -> (Mapper, TimingStats) {
    let mut timing = TimingStats::new();
    let mut mapper = Mapper::new(cfg);
    let mut generation = 0;
    for kf in kf_rx {
        for poses in loop_rx.try_iter() {
            mapper.map.apply_pose_corrections(&poses);
            generation += 1;
        }
        let id = kf.id;
        let snapshot = kf.clone();
        let window = mapper.process(kf, &mut timing);
        if let Some((_, pose)) = window.iter().find(|(k, _)| *k == id) {
            let _ = head_tx.send((id, *pose));
        }
        let msg = MappedKeyFrame {
            keyframe: snapshot,
            window,
            generation,
        };
        if mapped_tx.send(msg).is_err() {
            warn!("loop closure stopped early");
        }
    }
    drop(mapped_tx);
    for poses in loop_rx.iter() {
        mapper.map.apply_pose_corrections(&poses);
    }
    (mapper, timing)
}

fn loop_thread(
    cfg: &PipelineConfig,
    mapped_rx: Receiver<MappedKeyFrame>,
    loop_tx: Sender<BTreeMap<usize, PoseSE3>>,
) -> (LoopCloser, TimingStats) {
    let mut timing = TimingStats::new();
    let mut closer = LoopCloser::new(cfg);
    let mut generation = 0;
    for msg in mapped_rx {
        let result = if msg.generation < generation {
            closer.insert_stale(msg.keyframe, &msg.window, &mut timing)
        } else {
            closer.insert(msg.keyframe, &msg.window, &mut timing)
        };
        if let Some(poses) = result {
            generation += 1;
            let _ = loop_tx.send(poses);
        }
    }
    (closer, timing)
}

/// Ground truth named in the config, else `<dataset>/poses.txt` if present.
pub fn find_groundtruth(cfg: &PipelineConfig) -> Result<Option<Trajectory>, PipelineError> {
    if let Some(path) = &cfg.groundtruth {
        return Ok(Some(load_groundtruth(path)?));
    }
    let implicit = cfg.dataset_path.join("poses.txt");
    if implicit.is_file() {
        match load_groundtruth(&implicit) {
            Ok(t) => return Ok(Some(t)),
            Err(e) => warn!("ignoring {}: {e}", implicit.display()),
        }
    }
    Ok(None)
}

pub fn format_metrics(out: &RunOutput, cfg: &PipelineConfig, ate: Option<&AteStats>) -> String {
    let c = &out.counters;
    let mut s = String::new();
    let _ = writeln!(s, "mode = {}", cfg.mode);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "frames = {}", out.trajectory.len());
    let _ = writeln!(s, "keyframes = {}", c.keyframes);
    let _ = writeln!(s, "map_points = {}", out.map_text.lines().count());
    let _ = writeln!(s, "fallback_frames = {}", c.fallback_frames);
    let _ = writeln!(s, "load_failures = {}", c.load_failures);
    let _ = writeln!(s, "ground_failures = {}", c.ground_failures);
    let _ = writeln!(s, "ba_runs = {}", c.ba_runs);
    let _ = writeln!(s, "ba_singular = {}", c.ba_singular);
    let _ = writeln!(s, "loop_candidates = {}", c.loop_candidates);
    let _ = writeln!(s, "loops_accepted = {}", c.loops_accepted);
    let _ = writeln!(s, "wall_time_s = {:.6}", out.wall_time_s);
    if let Some(a) = ate {
        let _ = writeln!(s, "ate.rmse = {}", a.rmse);
        let _ = writeln!(s, "ate.sd = {}", a.sd);
        let _ = writeln!(s, "ate.mean = {}", a.mean);
        let _ = writeln!(s, "ate.median = {}", a.median);
    }
    s.push_str(&out.timing.format_metrics());
    s
}

/// ATE statistics in a four-column table.
pub fn format_ate_table(label: &str, a: &AteStats) -> String {
    format!(
        "{:<16} {:>10} {:>10} {:>10} {:>10}\n{:<16} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
        "sequence", "RMSE", "SD", "mean", "median", label, a.rmse, a.sd, a.mean, a.median
    )
}

pub fn track_log(out: &RunOutput) -> String {
    let mut s = format!("{TRACK_LOG_HEADER}\n");
    for r in &out.records {
        let pose = out
            .trajectory
            .get(r.frame_index)
            .copied()
            .unwrap_or_default();
        let _ = writeln!(s, "{}", format_track_row(r.frame_index, &r.quality, &pose));
    }
    s
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub output: RunOutput,
    pub ate: Option<AteStats>,
    pub output_dir: PathBuf,
}

/// Loads the configured dataset, runs the pipeline and writes
/// `trajectory.txt`, `keyframes.txt`, `map.txt`, `metrics.txt`,
/// `tracking.csv`, `loops.txt` and `config.txt` into the output directory.
pub fn run_dataset(cfg: &PipelineConfig) -> Result<RunReport, PipelineError> {
    cfg.validate()?;
    let source = FileSource::open(&cfg.dataset_path, cfg.dataset_format, cfg.max_frames)?;
    let truth = find_groundtruth(cfg)?;
    info!(
        "{} frames from {}",
        source.len(),
        cfg.dataset_path.display()
    );
    let output = run_pipeline(cfg, &source)?;
    let ate = match &truth {
        Some(t) => match compute_ate(&output.trajectory, t) {
            Ok(a) => Some(a),
            Err(e) => {
                warn!("ATE not computed: {e}");
                None
            }
        },
        None => None,
    };
    write_outputs(cfg, &output, ate.as_ref())?;
    Ok(RunReport {
        output,
        ate,
        output_dir: cfg.output_dir.clone(),
    })
}

pub fn write_outputs(
    cfg: &PipelineConfig,
    out: &RunOutput,
    ate: Option<&AteStats>,
) -> Result<(), PipelineError> {
    let dir = &cfg.output_dir;
    let write = |name: &str, text: &str| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| PipelineError::Output { path, source })
    };
    fs::create_dir_all(dir).map_err(|source| PipelineError::Output {
        path: dir.clone(),
        source,
    })?;
    write("trajectory.txt", &format_trajectory(&out.trajectory))?;
    let mut kf = String::new();
    for (id, frame, pose) in &out.keyframes {
        let row: Vec<String> = pose
            .to_row_major()
            .iter()
            .map(|v| format!("{v:e}"))
            .collect();
        let _ = writeln!(kf, "{id} {frame} {}", row.join(" "));
    }
    write("keyframes.txt", &kf)?;
    write("map.txt", &out.map_text)?;
    write("metrics.txt", &format_metrics(out, cfg, ate))?;
    write("tracking.csv", &track_log(out))?;
    let mut loops = String::new();
    for l in &out.loop_lines {
        let _ = writeln!(loops, "{l}");
    }
    write("loops.txt", &loops)?;
    write("config.txt", &cfg.to_text())?;
    Ok(())
}
