use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use posenav_cli::RunConfig;

const TINY: &str = "\
[run]
resolution = 32

[gd]
steps = 3

[il]
demos = 24
epochs = 2
round_epochs = 1
batch = 8
dagger_rounds = 1
rollouts_per_round = 2
rollout_steps = 3

[eval]
episodes = 4
seeds = 0
episodes_per_angle = 1
timing_images = 10
learned_steps = 3
hybrid_gd_steps = 2
";

fn posenav(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_posenav"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn setup() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.ini");
    fs::write(&cfg, TINY).unwrap();
    (dir, cfg)
}

fn ok(o: &Output) {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

const REPORT_HEADER: [&str; 6] = ["policy", "condition", "metric", "value", "seed_count", "stddev"];

fn check_report(path: &Path) -> Vec<Vec<String>> {
    let rows = read_csv(path);
    assert_eq!(rows[0], REPORT_HEADER);
    for r in &rows[1..] {
        assert_eq!(r.len(), 6);
        let v: f64 = r[3].parse().unwrap();
        assert!(v.is_finite());
        if r[2].starts_with("ap_") {
            assert!((0.0..=1.0).contains(&v));
        }
    }
    rows
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let o = posenav(dir.path(), &["train", "--config", "nowhere.ini", "--policy", "bc"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nowhere.ini"));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.ini"), "[gd]\nlearning_rate = 0.1\n").unwrap();
    let o = posenav(dir.path(), &["eval", "gd", "--config", "bad.ini"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
}

#[test]
fn bad_usage_exits_2() {
    let (dir, _) = setup();
    for args in [
        &["train", "--policy", "gd"][..],
        &["train", "--policy", "ppo"],
        &["eval", "gd", "--suite", "bogus"],
        &["eval", "missing.bin", "--policy", "bc", "--config", "tiny.ini"],
        &["landscape", "mean", "--grid", "36x4"],
    ] {
        let o = posenav(dir.path(), args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn train_is_deterministic_and_writes_a_manifest() {
    let (dir, _) = setup();
    for out in ["a", "b"] {
        ok(&posenav(dir.path(), &["train", "--config", "tiny.ini", "--policy", "dagger", "--seed", "5", "--out", out]));
    }
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let wa = fs::read(a.join("model.bin")).unwrap();
    assert_eq!(wa, fs::read(b.join("model.bin")).unwrap());
    assert_eq!(fs::read(a.join("train_log.csv")).unwrap(), fs::read(b.join("train_log.csv")).unwrap());

    let log = read_csv(&a.join("train_log.csv"));
    assert_eq!(log[0], ["round", "demos", "loss"]);
    assert_eq!(log.len(), 3);

    let manifest = fs::read_to_string(a.join("manifest.ini")).unwrap();
    assert!(manifest.starts_with("; posenav v"));
    let resolved = RunConfig::parse(&manifest).unwrap();
    assert_eq!(resolved.seed, 5);
    assert_eq!(resolved.il.demos, 24);
    assert_eq!(resolved.policy.name(), "dagger");

    ok(&posenav(dir.path(), &["train", "--config", "tiny.ini", "--policy", "dagger", "--seed", "6", "--out", "c"]));
    assert_ne!(wa, fs::read(dir.path().join("c/model.bin")).unwrap());
}

#[test]
fn outputs_stay_under_the_output_directory() {
    let (dir, _) = setup();
    ok(&posenav(dir.path(), &["render", "mean", "--config", "tiny.ini", "--out", "o/r"]));
    let mut entries: Vec<String> = fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    entries.sort();
    assert_eq!(entries, ["o", "tiny.ini"]);
}

#[test]
fn sweep_emits_eighteen_rows_per_threshold() {
    let (dir, _) = setup();
    ok(&posenav(dir.path(), &["eval", "gd", "--suite", "sweep", "--config", "tiny.ini", "--out", "s"]));
    let rows = check_report(&dir.path().join("s/report.csv"));
    for metric in ["ap_rot@10", "ap_rot@30"] {
        assert_eq!(rows.iter().filter(|r| r[2] == metric).count(), 18);
    }
    assert!(rows[1..].iter().all(|r| r[0] == "gd"));
}

#[test]
fn timing_lists_every_gd_variant_and_the_model() {
    let (dir, _) = setup();
    ok(&posenav(dir.path(), &["train", "--config", "tiny.ini", "--policy", "bc", "--out", "m"]));
    ok(&posenav(dir.path(), &["eval", "--suite", "timing", "--config", "tiny.ini", "--out", "t"]));
    let rows = check_report(&dir.path().join("t/report.csv"));
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["gd", "gd16", "gd32"]);

    ok(&posenav(
        dir.path(),
        &["eval", "m/model.bin", "--policy", "bc", "--suite", "timing", "--config", "tiny.ini", "--out", "t2"],
    ));
    let rows = check_report(&dir.path().join("t2/report.csv"));
    let names: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
    assert_eq!(names, ["gd", "gd16", "gd32", "bc"]);
}

#[test]
fn every_suite_exits_cleanly_with_a_valid_report() {
    let (dir, _) = setup();
    ok(&posenav(dir.path(), &["train", "--config", "tiny.ini", "--policy", "dagger", "--out", "m"]));
    for (suite, policy) in [
        ("clean", "dagger"),
        ("clean", "dagger+gd"),
        ("sweep", "dagger"),
        ("robustness", "dagger"),
        ("ablation", "dagger"),
    ] {
        let out = format!("r_{suite}_{policy}");
        ok(&posenav(
            dir.path(),
            &["eval", "m/model.bin", "--policy", policy, "--suite", suite, "--config", "tiny.ini", "--out", &out],
        ));
        let rows = check_report(&dir.path().join(&out).join("report.csv"));
        assert!(rows.len() > 1, "{suite}");
    }
    let abl = read_csv(&dir.path().join("r_ablation_dagger/report.csv"));
    let mut pairs: Vec<(String, String)> = abl[1..].iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    pairs.dedup();
    assert_eq!(pairs.len(), 5);

    let rob = read_csv(&dir.path().join("r_robustness_dagger/report.csv"));
    assert!(rob.iter().any(|r| r[1] == "occlusion=0.3"));
    assert!(rob.iter().any(|r| r[1] == "brightness=1.5"));
}

#[test]
fn eval_reports_are_byte_identical_across_runs() {
    let (dir, _) = setup();
    for out in ["x", "y"] {
        ok(&posenav(dir.path(), &["eval", "gd", "--suite", "clean", "--config", "tiny.ini", "--threads", "1", "--out", out]));
    }
    assert_eq!(fs::read(dir.path().join("x/report.csv")).unwrap(), fs::read(dir.path().join("y/report.csv")).unwrap());
}

#[test]
fn render_is_deterministic_with_a_stable_checksum() {
    let (dir, _) = setup();
    ok(&posenav(dir.path(), &["render", "mean", "--out", "a"]));
    ok(&posenav(dir.path(), &["render", "mean", "--out", "b"]));
    let a = fs::read(dir.path().join("a/target.ppm")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("b/target.ppm")).unwrap());
    assert!(a.starts_with(b"P6\n64 64\n255\n"));
    assert_eq!(fnv1a(&a), GOLDEN_MEAN_PPM, "{:#x}", fnv1a(&a));
}

const GOLDEN_MEAN_PPM: u64 = 0x8585_aaa7_b5ec_d9b6;

#[test]
fn render_trajectory_has_t_plus_one_frames() {
    let (dir, _) = setup();
    ok(&posenav(
        dir.path(),
        &["render", "az=40,el=20,tx=0.05", "--policy", "gd", "--steps", "4", "--config", "tiny.ini", "--out", "f"],
    ));
    let mut frames: Vec<String> = fs::read_dir(dir.path().join("f"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("frame_"))
        .collect();
    frames.sort();
    assert_eq!(frames, ["frame_000.ppm", "frame_001.ppm", "frame_002.ppm", "frame_003.ppm", "frame_004.ppm"]);
    assert!(dir.path().join("f/target.ppm").is_file());
}

#[test]
fn invalid_state_tokens_exit_2() {
    let (dir, _) = setup();
    for state in ["az=abc", "yaw=10", "az", "z16=1"] {
        let o = posenav(dir.path(), &["render", state, "--config", "tiny.ini"]);
        assert_eq!(o.status.code(), Some(2), "{state}");
    }
}

#[test]
fn landscape_grid_shape_and_minima() {
    let (dir, _) = setup();
    let tw = dir.path().join("twin.ini");
    fs::write(&tw, format!("{TINY}\n")).unwrap();
    let text = fs::read_to_string(&tw).unwrap().replace("resolution = 32", "resolution = 32\ncategory = twin");
    fs::write(&tw, text).unwrap();
    ok(&posenav(dir.path(), &["landscape", "az=20,el=15", "--grid", "36x3", "--config", "twin.ini", "--out", "l"]));
    let rows = read_csv(&dir.path().join("l/landscape.csv"));
    assert_eq!(rows[0], ["azimuth_deg", "elevation_deg", "loss"]);
    let cells: Vec<(f64, f64, f64)> = rows[1..]
        .iter()
        .map(|r| (r[0].parse().unwrap(), r[1].parse().unwrap(), r[2].parse().unwrap()))
        .collect();
    assert_eq!(cells.len(), 36 * 3);
    let target = cells[1];
    assert!((target.0 - 20.0).abs() < 1e-9 && (target.1 - 15.0).abs() < 1e-9);
    assert!(cells.iter().all(|c| c.2 >= target.2));
    assert!(target.2.abs() < 1e-12);

    // azimuth slice at the target elevation
    let slice: Vec<f64> = (0..36).map(|i| cells[3 * i + 1].2).collect();
    let local = (1..36).filter(|&i| slice[i] < slice[i - 1] && slice[i] < slice[(i + 1) % 36]).collect::<Vec<_>>();
    assert!(local.iter().any(|&i| (i as i64 - 18).abs() <= 2), "{slice:?}");
}

#[test]
fn demo_export_writes_rows_and_blob() {
    let (dir, _) = setup();
    ok(&posenav(dir.path(), &["demo-export", "--n", "5", "--config", "tiny.ini", "--out", "d"]));
    let rows = read_csv(&dir.path().join("d/demos.csv"));
    assert_eq!(rows.len(), 6);
    assert_eq!(rows[0].len(), 23);
    let blob = fs::metadata(dir.path().join("d/features.bin")).unwrap().len();
    assert_eq!(blob, 5 * 768 * 4);
    let set = posenav::il::read_demo_set(&dir.path().join("d")).unwrap();
    assert_eq!(set.len(), 5);
}
