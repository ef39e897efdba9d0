use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cli() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_raster-slam"));
    c.env("RUST_LOG", "warn");
    c
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn synth(dir: &Path, frames: usize) {
    let out = cli()
        .args([
            "synth",
            dir.to_str().unwrap(),
            "--frames",
            &frames.to_string(),
            "--laps",
            "0.03",
        ])
        .output()
        .unwrap();
    ok(&out);
}

#[test]
fn synth_then_run_then_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("seq");
    synth(&data, 5);
    assert!(data.join("slam.cfg").is_file());
    assert!(data.join("poses.txt").is_file());
    assert_eq!(fs::read_dir(data.join("velodyne")).unwrap().count(), 5);

    let outdir = tmp.path().join("out");
    let stdout = ok(&cli()
        .args(["run", "--config"])
        .arg(data.join("slam.cfg"))
        .arg("--set")
        .arg(format!("output.dir={}", outdir.display()))
        .args(["--set", "seed=3"])
        .output()
        .unwrap());
    assert!(stdout.contains("5 frames"), "{stdout}");
    assert!(stdout.contains("RMSE"), "{stdout}");
    let config = fs::read_to_string(outdir.join("config.txt")).unwrap();
    assert!(config.contains("seed = 3"));
    assert!(config.contains("loop.exclusion = 10"));

    let table = ok(&cli()
        .arg("evaluate")
        .arg(outdir.join("trajectory.txt"))
        .arg(data.join("poses.txt"))
        .output()
        .unwrap());
    assert!(
        table.contains("RMSE") && table.lines().count() == 2,
        "{table}"
    );
}

#[test]
fn environment_overrides_apply_below_set_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("seq");
    synth(&data, 3);
    let outdir = tmp.path().join("out");
    ok(&cli()
        .args(["run", "--dataset"])
        .arg(&data)
        .arg("--output")
        .arg(&outdir)
        .env("RSLAM_FEATURES_TARGET_COUNT", "400")
        .env("RSLAM_SEED", "5")
        .args(["--set", "seed=6"])
        .output()
        .unwrap());
    let config = fs::read_to_string(outdir.join("config.txt")).unwrap();
    assert!(config.contains("features.target_count = 400"));
    assert!(config.contains("seed = 6"));
}

#[test]
fn evaluate_identical_files_is_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("t.txt");
    let mut text = String::new();
    for i in 0..5 {
        text.push_str(&format!("1 0 0 {i} 0 1 0 {} 0 0 1 0\n", i * i));
    }
    fs::write(&path, text).unwrap();
    let table = ok(&cli()
        .arg("evaluate")
        .arg(&path)
        .arg(&path)
        .args(["--label", "x"])
        .output()
        .unwrap());
    let row: Vec<&str> = table.lines().nth(1).unwrap().split_whitespace().collect();
    assert_eq!(row, ["x", "0.0000", "0.0000", "0.0000", "0.0000"]);
}

#[test]
fn dump_raster_writes_pgm_and_keypoints() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("seq");
    synth(&data, 1);
    let pgm = tmp.path().join("r.pgm");
    let kps = tmp.path().join("k.txt");
    let stdout = ok(&cli()
        .arg("dump-raster")
        .arg(data.join("velodyne/000000.bin"))
        .arg("-o")
        .arg(&pgm)
        .arg("--keypoints")
        .arg(&kps)
        .output()
        .unwrap());
    assert!(stdout.contains("occupied pixels"));
    let bytes = fs::read(&pgm).unwrap();
    let header = b"P5\n750 750\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 750 * 750);
    let lines = fs::read_to_string(&kps).unwrap();
    assert!(lines.lines().count() > 50);
    assert!(lines.lines().all(|l| l.split_whitespace().count() == 4));
}

#[test]
fn fatal_errors_exit_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = cli()
        .args(["run", "--dataset"])
        .arg(tmp.path().join("nope"))
        .output()
        .unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8_lossy(&missing.stderr).contains("error"));

    let bad_key = cli().args(["run", "--set", "camera.q=1"]).output().unwrap();
    assert!(!bad_key.status.success());
    assert!(String::from_utf8_lossy(&bad_key.stderr).contains("camera.q"));

    let invalid = cli()
        .args(["run", "--set", "mapping.window=0"])
        .output()
        .unwrap();
    assert!(!invalid.status.success());

    let garbage = tmp.path().join("g.txt");
    fs::write(&garbage, "not a pose\n").unwrap();
    let eval = cli()
        .arg("evaluate")
        .arg(&garbage)
        .arg(&garbage)
        .output()
        .unwrap();
    assert!(!eval.status.success());

    let bad_env = cli()
        .args(["run"])
        .env("RSLAM_NOT_A_KEY", "1")
        .output()
        .unwrap();
    assert!(!bad_env.status.success());
}
