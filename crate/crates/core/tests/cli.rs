//! End-to-end runs of the `mpsl` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mpsl::io::read_pfm_gray;

fn mpsl(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpsl"))
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("running mpsl")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_output_directory_fails_in_io_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpsl(&dir.path().join("absent"), &["pattern", "--k", "3"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("io stage"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_fail_with_their_stage() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpsl(dir.path(), &["pattern", "--k", "0"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("pattern stage"), "{}", stderr(&o));

    let o = mpsl(dir.path(), &["simulate", "--scenario", "double", "--noise-sigma", "1,2"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage"), "{}", stderr(&o));

    let o = mpsl(dir.path(), &["merge", "--inputs", "nowhere.pfm"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("stage"), "{}", stderr(&o));
}

#[test]
fn pattern_of_window_two_has_seven_stripes() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpsl(dir.path(), &["pattern", "--k", "2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("pattern_k2.txt")).unwrap();
    let stripes = text.trim();
    assert_eq!(stripes.len(), 7);
    assert!(stripes.as_bytes().windows(2).all(|w| w[0] != w[1]));
    assert!(dir.path().join("pattern_k2.ppm").is_file());
    assert!(dir.path().join("pattern_k2_derivative.ppm").is_file());
}

#[test]
fn simulation_depends_only_on_the_seed() {
    let runs: Vec<_> = ["7", "7", "8"]
        .iter()
        .map(|seed| {
            let dir = tempfile::tempdir().unwrap();
            let o = mpsl(dir.path(), &["--seed", seed, "simulate", "--scenario", "two_cups"]);
            assert!(o.status.success(), "{}", stderr(&o));
            fs::read(dir.path().join("cam0.ppm")).unwrap()
        })
        .collect();
    assert_eq!(runs[0], runs[1]);
    assert_ne!(runs[0], runs[2]);
}

#[test]
fn reconstructs_simulated_images_and_scores_them() {
    let sim = tempfile::tempdir().unwrap();
    let o = mpsl(sim.path(), &["simulate", "--scenario", "double"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let rec = tempfile::tempdir().unwrap();
    let cfg = sim.path().join("experiment.json");
    let img = sim.path().join("cam0.ppm");
    let o = mpsl(
        rec.path(),
        &[
            "reconstruct",
            "--config",
            cfg.to_str().unwrap(),
            "--images",
            img.to_str().unwrap(),
            "--truth",
            sim.path().to_str().unwrap(),
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["range_c0_p0.pfm", "range_c0_p1.pfm", "merged.pfm"] {
        assert!(rec.path().join(f).is_file(), "{f}");
    }
    let metrics: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(rec.path().join("metrics.json")).unwrap()).unwrap();
    let pairs = metrics["pairs"].as_array().unwrap();
    assert_eq!(pairs.len(), 2);
    for p in pairs {
        assert!(p["decode"]["accuracy"].as_f64().unwrap() > 0.95);
    }

    // Merging one range returns it unchanged.
    let one = rec.path().join("range_c0_p0.pfm");
    let o = mpsl(rec.path(), &["merge", "--inputs", one.to_str().unwrap(), "--name", "single.pfm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = read_pfm_gray(&one).unwrap();
    let b = read_pfm_gray(rec.path().join("single.pfm")).unwrap();
    assert_eq!(a.dims(), b.dims());
    for (x, y) in a.data().iter().zip(b.data()) {
        assert!(x == y || (x.is_nan() && y.is_nan()), "{x} vs {y}");
    }

    let truth = sim.path().join("cam0_depth.pfm");
    let o = mpsl(
        rec.path(),
        &["metrics", "--range", rec.path().join("merged.pfm").to_str().unwrap(), "--truth", truth.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(rec.path().join("metrics.json").is_file());
}

#[test]
fn two_by_two_rig_yields_four_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpsl(dir.path(), &["reconstruct", "--scenario", "face_2x2"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for c in 0..2 {
        for p in 0..2 {
            assert!(dir.path().join(format!("range_c{c}_p{p}.pfm")).is_file());
        }
    }
    assert!(dir.path().join("merged.pfm").is_file());
}

#[test]
fn analysis_subcommands_write_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let o = mpsl(dir.path(), &["analyze", "coverage"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(dir.path().join("coverage.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);

    let o = mpsl(dir.path(), &["analyze", "separability", "--phi1", "20", "--phi2", "90"]);
    assert!(o.status.success(), "{}", stderr(&o));
}
