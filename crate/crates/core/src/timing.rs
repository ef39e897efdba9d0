//! Per-stage wall-clock statistics.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    ImageProjection,
    FeatureExtractionMatching,
    PoseEstimation,
    Registration,
    LocalBa,
    GroundRemoval,
    LoopClosure,
}

impl Stage {
    /// The five stages every report must contain.
    pub const REPORTED: [Stage; 5] = [
        Stage::ImageProjection,
        Stage::FeatureExtractionMatching,
        Stage::PoseEstimation,
        Stage::Registration,
        Stage::LocalBa,
    ];

    pub const ALL: [Stage; 7] = [
        Stage::ImageProjection,
        Stage::FeatureExtractionMatching,
        Stage::PoseEstimation,
        Stage::Registration,
        Stage::LocalBa,
        Stage::GroundRemoval,
        Stage::LoopClosure,
    ];

    pub fn key(self) -> &'static str {
        match self {
            Stage::ImageProjection => "image_projection",
            Stage::FeatureExtractionMatching => "feature_extraction_matching",
            Stage::PoseEstimation => "pose_estimation",
            Stage::Registration => "keyframe_registration",
            Stage::LocalBa => "local_ba",
            Stage::GroundRemoval => "ground_removal",
            Stage::LoopClosure => "loop_closure",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Stage::ImageProjection => "Image projection",
            Stage::FeatureExtractionMatching => "Feature extraction and matching",
            Stage::PoseEstimation => "Pose estimation",
            Stage::Registration => "Key-frame and map-point registration",
            Stage::LocalBa => "Local BA",
            Stage::GroundRemoval => "Ground removal",
            Stage::LoopClosure => "Loop closure",
        }
    }

    fn index(self) -> usize {
        Stage::ALL
            .iter()
            .position(|s| *s == self)
            .expect("stage listed in ALL")
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageSummary {
    pub count: usize,
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub total_ms: f64,
}

#[derive(Clone, Debug, Default)]
pub struct TimingStats {
    samples: [Vec<f64>; 7],
}

impl TimingStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: Stage, elapsed: Duration) {
        self.samples[stage.index()].push(elapsed.as_secs_f64() * 1e3);
    }

    /// Runs `f` and records its duration under `stage`.
    pub fn time<T>(&mut self, stage: Stage, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(stage, start.elapsed());
        out
    }

    pub fn merge(&mut self, other: &TimingStats) {
        for (mine, theirs) in self.samples.iter_mut().zip(&other.samples) {
            mine.extend_from_slice(theirs);
        }
    }

    pub fn summary(&self, stage: Stage) -> StageSummary {
        let xs = &self.samples[stage.index()];
        if xs.is_empty() {
            return StageSummary::default();
        }
        let n = xs.len() as f64;
        let total: f64 = xs.iter().sum();
        let mean = total / n;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        StageSummary {
            count: xs.len(),
            mean_ms: mean,
            sd_ms: var.sqrt(),
            total_ms: total,
        }
    }

    /// `timing.<stage>.{count,mean_ms,sd_ms}` lines for every stage.
    pub fn format_metrics(&self) -> String {
        let mut s = String::new();
        for stage in Stage::ALL {
            let m = self.summary(stage);
            let k = stage.key();
            let _ = writeln!(s, "timing.{k}.count = {}", m.count);
            let _ = writeln!(s, "timing.{k}.mean_ms = {:.6}", m.mean_ms);
            let _ = writeln!(s, "timing.{k}.sd_ms = {:.6}", m.sd_ms);
        }
        s
    }

    pub fn format_table(&self) -> String {
        let mut s = format!(
            "{:<40} {:>12} {:>12} {:>8}\n",
            "stage", "mean (ms)", "sd (ms)", "count"
        );
        for stage in Stage::ALL {
            let m = self.summary(stage);
            let _ = writeln!(
                s,
                "{:<40} {:>12.3} {:>12.3} {:>8}",
                stage.label(),
                m.mean_ms,
                m.sd_ms,
                m.count
            );
        }
        s
    }
}
