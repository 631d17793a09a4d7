use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rmsub(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rmsub"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rmsub(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_string()
}

#[test]
fn construct_then_rank_report() {
    let dir = tempfile::tempdir().unwrap();
    let g = path(dir.path(), "gmin.txt");
    ok(&["construct", "--m", "6", "--r", "2", "--k", "14", "-o", &g]);
    let text = fs::read_to_string(&g).unwrap();
    assert!(text.starts_with("6 2 14\n"));
    assert_eq!(text.lines().count(), 15);
    let report = ok(&["ranks", "-g", &g]);
    assert!(report.starts_with("subspace_id,rank,two_pow_rank\n"));
    assert!(report.contains("# leaves=63 L=1482"));
    let pruned = ok(&["ranks", "-g", &g, "--prune", "minrank:7", "--memory"]);
    assert!(pruned.contains("# leaves=7 L=74"));
    assert!(pruned.contains("codebook_bits=2368"));
}

#[test]
fn construct_with_explicit_selection_and_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let cands = path(dir.path(), "c.csv");
    let g = ok(&["construct", "--m", "4", "--r", "2", "--k", "7", "--objective", "maxl", "--candidates", &cands]);
    assert!(g.starts_with("4 2 7\n"));
    assert_eq!(fs::read_to_string(&cands).unwrap().lines().count(), 1 + 15);
    let fixed = ok(&["construct", "--m", "4", "--r", "2", "--k", "7", "--selection", "0,5"]);
    assert_eq!(fixed.lines().count(), 8);
}

#[test]
fn simulate_reads_config_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let g = path(dir.path(), "g.txt");
    ok(&["construct", "--m", "4", "--r", "2", "--k", "8", "--selection", "0,2,5", "-o", &g]);
    let cfg = path(dir.path(), "sim.cfg");
    fs::write(
        &cfg,
        format!("# simulation settings\ngenerator={g}\ndecoder=subrpa\ntrials=300\nsnr_grid=0:1:1\nseed=9\n"),
    )
    .unwrap();
    let csv = ok(&["simulate", "--config", &cfg]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "snr_db,ebn0_db,trials,block_errors,bler,ber,seconds,leaf_calls");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",300,"));
    let csv = ok(&["simulate", "--config", &cfg, "--trials", "200", "--snr-grid", "-1"]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("-1.0000,") && lines[1].contains(",200,"));
}

#[test]
fn simulate_is_reproducible_and_writes_profile() {
    let dir = tempfile::tempdir().unwrap();
    let g = path(dir.path(), "g.txt");
    ok(&["construct", "--m", "4", "--r", "2", "--k", "8", "--selection", "0,2,5", "-o", &g]);
    let prof = path(dir.path(), "p.csv");
    let args = [
        "simulate", "-g", &g, "--decoder", "soft-subrpa", "--aggregation", "logsum", "--prune", "random:8:3",
        "--trials", "500", "--snr-grid", "-2", "--profile-output", &prof,
    ];
    let strip = |s: String| -> Vec<String> {
        // Drop the wall-clock column.
        s.lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(6);
                f.join(",")
            })
            .collect()
    };
    assert_eq!(strip(ok(&args)), strip(ok(&args)));
    let profile = fs::read_to_string(&prof).unwrap();
    assert!(profile.starts_with("# snr_db=-2.0000"));
    assert_eq!(profile.lines().nth(1), Some("position,errors,trials"));
    assert_eq!(profile.lines().count(), 2 + 16);
    let direct = ok(&["profile", "-g", &g, "--decoder", "map", "--trials", "200", "--snr-grid", "-2"]);
    assert_eq!(direct.lines().count(), 2 + 16);
}

#[test]
fn train_then_prune_by_weights() {
    let dir = tempfile::tempdir().unwrap();
    let g = path(dir.path(), "g.txt");
    ok(&["construct", "--m", "4", "--r", "2", "--k", "8", "--selection", "0,2,5", "-o", &g]);
    let w = path(dir.path(), "w.txt");
    let loss = path(dir.path(), "loss.csv");
    ok(&[
        "train", "-g", &g, "--q0", "5", "--iterations", "5", "--batch-size", "8", "--snr-db", "0",
        "-o", &w, "--loss-output", &loss,
    ]);
    let weights = fs::read_to_string(&w).unwrap();
    assert!(weights.contains("meta q0=5") && weights.contains("node /"));
    assert_eq!(fs::read_to_string(&loss).unwrap().lines().count(), 6);
    let report = ok(&["ranks", "-g", &g, "--prune", &format!("weights:{w}:5")]);
    assert!(report.contains("# leaves=5 "));
    ok(&["simulate", "-g", &g, "--weights", &w, "--trials", "100", "--snr-grid", "0"]);
}

#[test]
fn failures_exit_nonzero_with_one_line() {
    let out = rmsub(&["ranks", "-g", "/nonexistent/generator.txt"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error: "));
    let out = rmsub(&["construct", "--m", "4", "--r", "2", "--k", "12"]);
    assert!(!out.status.success());
    assert_eq!(String::from_utf8(out.stderr).unwrap().lines().count(), 1);
    let out = rmsub(&["simulate", "-g", "x", "--prune", "bogus"]);
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("bogus"));
}
