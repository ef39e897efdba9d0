#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use raster_slam::config::{parse_override, PipelineConfig};
use raster_slam::dataset_io::{compute_ate, load_groundtruth, load_point_cloud, CloudFormat};
use raster_slam::features::{extract_features, format_keypoints};
use raster_slam::pipeline::{format_ate_table, run_dataset};
use raster_slam::preprocess::{fit_ground_plane, remove_ground};
use raster_slam::raster::rasterize_with_stats;
use raster_slam::synth::{generate, write_sequence, SynthConfig};

#[derive(Parser)]
#[command(
    name = "raster-slam",
    version,
    about = "LIDAR SLAM on rasterized height images"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one key; repeatable. Applied after the file and RSLAM_* variables.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self, extra: &[(String, String)]) -> Result<PipelineConfig> {
        let mut overrides = Vec::new();
        for s in &self.set {
            overrides.push(parse_override(s)?);
        }
        overrides.extend_from_slice(extra);
        Ok(PipelineConfig::load(self.config.as_deref(), &overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run SLAM over a dataset directory and write trajectory, map and metrics.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Shorthand for --set dataset.path=DIR.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Shorthand for --set output.dir=DIR.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print ATE statistics of an estimated trajectory against ground truth.
    Evaluate {
        estimate: PathBuf,
        truth: PathBuf,
        /// Row label in the printed table.
        #[arg(long, default_value = "sequence")]
        label: String,
    },
    /// Write a synthetic closed-loop sequence (KITTI layout) plus a config for it.
    Synth {
        output: PathBuf,
        #[arg(long, default_value_t = 200)]
        frames: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1.1)]
        laps: f64,
    },
    /// Rasterize one point-cloud file to a PGM image.
    DumpRaster {
        cloud: PathBuf,
        #[arg(long, short)]
        output: PathBuf,
        /// Point-cloud format; defaults to the config's dataset.format.
        #[arg(long)]
        format: Option<String>,
        /// Also write detected keypoints as `u v response angle` lines.
        #[arg(long)]
        keypoints: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Run {
            cfg,
            dataset,
            output,
        } => {
            let mut extra = Vec::new();
            if let Some(d) = dataset {
                extra.push(("dataset.path".to_string(), d.display().to_string()));
            }
            if let Some(o) = output {
                extra.push(("output.dir".to_string(), o.display().to_string()));
            }
            run(cfg.load(&extra)?)
        }
        Command::Evaluate {
            estimate,
            truth,
            label,
        } => {
            let est = load_groundtruth(&estimate)?;
            let gt = load_groundtruth(&truth)?;
            let ate = compute_ate(&est, &gt)?;
            print!("{}", format_ate_table(&label, &ate));
            Ok(())
        }
        Command::Synth {
            output,
            frames,
            seed,
            laps,
        } => synth(&output, frames, seed, laps),
        Command::DumpRaster {
            cloud,
            output,
            format,
            keypoints,
            cfg,
        } => dump_raster(
            &cloud,
            &output,
            format.as_deref(),
            keypoints.as_deref(),
            &cfg.load(&[])?,
        ),
    }
}

fn run(cfg: PipelineConfig) -> Result<()> {
    let report = run_dataset(&cfg)?;
    let out = &report.output;
    let c = &out.counters;
    println!(
        "{} frames, {} keyframes, {} loops closed ({} candidates), {} fallback frames, {:.2} s",
        out.trajectory.len(),
        c.keyframes,
        c.loops_accepted,
        c.loop_candidates,
        c.fallback_frames,
        out.wall_time_s
    );
    if let Some(ate) = &report.ate {
        let label = cfg
            .dataset_path
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into());
        print!("{}", format_ate_table(&label, ate));
    }
    print!("{}", out.timing.format_table());
    println!("outputs in {}", report.output_dir.display());
    Ok(())
}

fn synth(dir: &Path, frames: usize, seed: u64, laps: f64) -> Result<()> {
    if frames == 0 {
        bail!("--frames must be at least 1");
    }
    if !(laps > 0.0) {
        bail!("--laps must be positive");
    }
    let cfg = SynthConfig {
        frames,
        seed,
        laps,
        ..Default::default()
    };
    let seq = generate(&cfg);
    write_sequence(&seq, dir)?;
    // The default loop exclusion (50 keyframes) exceeds the keyframe count
    // of a 200-frame lap.
    let slam_cfg = format!(
        "dataset.path = {}\ndataset.format = bin\noutput.dir = {}\nloop.exclusion = 10\n",
        dir.display(),
        dir.join("out").display()
    );
    let cfg_path = dir.join("slam.cfg");
    fs::write(&cfg_path, slam_cfg).with_context(|| format!("writing {}", cfg_path.display()))?;
    info!(
        "{} frames, {} landmarks, {} world points written to {}",
        seq.len(),
        seq.landmarks,
        seq.world.len(),
        dir.display()
    );
    println!("run with: raster-slam run --config {}", cfg_path.display());
    Ok(())
}

fn dump_raster(
    cloud_path: &Path,
    output: &Path,
    format: Option<&str>,
    keypoints: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<()> {
    let format: CloudFormat = match format {
        Some(f) => f.parse().map_err(anyhow::Error::msg)?,
        None => cfg.dataset_format,
    };
    let mut cloud = load_point_cloud(cloud_path, format)?;
    if cfg.ground_enabled {
        match fit_ground_plane(&cloud, &cfg.ground) {
            Ok(plane) => cloud = remove_ground(&cloud, &plane, cfg.ground.inlier_dist_m),
            Err(e) => log::warn!("ground removal skipped: {e}"),
        }
    }
    let (frame, stats) = rasterize_with_stats(&cloud, &cfg.camera, &cfg.zmap);
    frame
        .intensity
        .write_pgm(output)
        .with_context(|| format!("writing {}", output.display()))?;
    println!(
        "{} points projected, {} behind camera, {} outside the grid, {} occupied pixels",
        stats.projected,
        stats.behind_camera,
        stats.outside_grid,
        frame.occupied_count()
    );
    if let Some(path) = keypoints {
        let f = extract_features(&frame.intensity, &cfg.tracking.features);
        fs::write(path, format_keypoints(&f.keypoints))
            .with_context(|| format!("writing {}", path.display()))?;
        println!("{} keypoints", f.len());
    }
    Ok(())
}
