use std::fs;

use raster_slam::config::{Mode, PipelineConfig};
use raster_slam::dataset_io::{
    compute_ate, list_frame_files, load_groundtruth, CloudFormat, PointCloud,
};
use raster_slam::geometry::PoseSE3;
use raster_slam::pipeline::{run_dataset, run_pipeline, PipelineError};
use raster_slam::synth::{generate, write_sequence, SynthConfig};
use raster_slam::timing::Stage;

/// A quarter lap at the full-size sampling density.
fn short_drive(frames: usize) -> SynthConfig {
    SynthConfig {
        frames,
        laps: frames as f64 * 1.5 / 306.0,
        ..SynthConfig::default()
    }
}

/// A sparse, small world for tests that only care about bookkeeping.
fn tiny_world(frames: usize) -> SynthConfig {
    SynthConfig {
        frames,
        laps: 0.05,
        boxes: 60,
        walls: 5,
        poles: 100,
        margin_m: 20.0,
        range_m: 35.0,
        surface_spacing_m: 0.2,
        ..SynthConfig::default()
    }
}

#[test]
fn single_frame_gives_identity_and_no_ba() {
    let seq = generate(&tiny_world(1));
    let out = run_pipeline(&PipelineConfig::default(), &seq).unwrap();
    assert_eq!(out.trajectory.len(), 1);
    assert_eq!(out.trajectory.get(0), Some(&PoseSE3::identity()));
    assert_eq!(out.counters.keyframes, 1);
    assert_eq!(out.counters.ba_runs, 0);
    assert_eq!(out.timing.summary(Stage::LocalBa).count, 0);
}

#[test]
fn missing_dataset_fails_before_processing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        dataset_path: dir.path().join("absent"),
        output_dir: dir.path().join("out"),
        ..Default::default()
    };
    let err = run_dataset(&cfg).unwrap_err();
    assert!(matches!(err, PipelineError::Dataset(_)), "{err}");
    assert!(!cfg.output_dir.exists());
}

#[test]
fn empty_dataset_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PipelineConfig {
        dataset_path: dir.path().to_path_buf(),
        ..Default::default()
    };
    assert!(matches!(run_dataset(&cfg), Err(PipelineError::NoFrames(_))));
}

#[test]
fn both_modes_track_a_short_drive() {
    let seq = generate(&short_drive(40));
    let mut cfg = PipelineConfig::default();
    let det = run_pipeline(&cfg, &seq).unwrap();
    cfg.mode = Mode::Concurrent;
    cfg.queue_capacity = 2;
    let conc = run_pipeline(&cfg, &seq).unwrap();
    for out in [&det, &conc] {
        assert_eq!(out.trajectory.len(), 40);
        assert_eq!(out.counters.fallback_frames, 0);
        assert!(out.counters.keyframes >= 3);
        let ate = compute_ate(&out.trajectory, &seq.groundtruth).unwrap();
        assert!(ate.rmse < 0.3, "rmse {}", ate.rmse);
    }
    // without loop closures the two schedules see the same keyframes
    assert_eq!(det.counters.keyframes, conc.counters.keyframes);
}

#[test]
fn dataset_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("seq");
    let seq = generate(&tiny_world(6));
    write_sequence(&seq, &data).unwrap();
    assert_eq!(
        list_frame_files(&data, CloudFormat::KittiBin)
            .unwrap()
            .len(),
        6
    );

    let cfg = PipelineConfig {
        dataset_path: data.clone(),
        output_dir: dir.path().join("out"),
        ..Default::default()
    };
    let report = run_dataset(&cfg).unwrap();
    assert!(
        report.ate.is_some(),
        "poses.txt next to the frames is picked up"
    );
    for name in [
        "trajectory.txt",
        "keyframes.txt",
        "map.txt",
        "metrics.txt",
        "tracking.csv",
        "loops.txt",
        "config.txt",
    ] {
        assert!(cfg.output_dir.join(name).is_file(), "{name}");
    }
    let traj = load_groundtruth(&cfg.output_dir.join("trajectory.txt")).unwrap();
    assert_eq!(traj.len(), 6);
    let metrics = fs::read_to_string(cfg.output_dir.join("metrics.txt")).unwrap();
    for key in [
        "frames = 6",
        "ate.rmse = ",
        "timing.image_projection.mean_ms",
        "timing.local_ba.sd_ms",
    ] {
        assert!(metrics.contains(key), "{key}");
    }
    let csv = fs::read_to_string(cfg.output_dir.join("tracking.csv")).unwrap();
    assert_eq!(csv.lines().count(), 7);

    // the written config reproduces the run configuration
    let mut back = PipelineConfig::default();
    back.apply_file(&cfg.output_dir.join("config.txt")).unwrap();
    assert_eq!(back, cfg);
}

#[test]
fn unreadable_frame_keeps_one_pose_per_frame() {
    let dir = tempfile::tempdir().unwrap();
    let seq = generate(&tiny_world(6));
    write_sequence(&seq, dir.path()).unwrap();
    fs::write(dir.path().join("velodyne/000003.bin"), [1u8, 2, 3]).unwrap();
    let cfg = PipelineConfig {
        dataset_path: dir.path().to_path_buf(),
        output_dir: dir.path().join("out"),
        ..Default::default()
    };
    let report = run_dataset(&cfg).unwrap();
    assert_eq!(report.output.trajectory.len(), 6);
    assert_eq!(report.output.counters.load_failures, 1);
    assert!(report.output.records[3].quality.fallback_used);
}

#[test]
fn in_memory_clouds_are_a_frame_source() {
    let seq = generate(&tiny_world(3));
    let clouds: Vec<PointCloud> = (0..3).map(|k| seq.cloud(k)).collect();
    let a = run_pipeline(&PipelineConfig::default(), &clouds).unwrap();
    let b = run_pipeline(&PipelineConfig::default(), &seq).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
}
