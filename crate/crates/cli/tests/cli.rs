use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn vreg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vreg")).args(args).current_dir(cwd).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

#[test]
fn exponents_table_from_flags() {
    let dir = tempfile::tempdir().unwrap();
    let o = vreg(&["exponents", "--n", "2", "--p", "3", "--q", "3", "--alpha", "1"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().find(|l| l.starts_with("delta_predicted")).map(str::to_string).unwrap();
    assert_eq!(line.split_whitespace().nth(1), Some("0.75"));
    // The default output directory lives under the working directory.
    assert!(dir.path().join("vreg-out/exponents/manifest.json").exists());
}

#[test]
fn solve_preset_matches_closed_form_energy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = vreg(&["solve", "--preset", "pLaplace1d-p3", "--output", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    // ∫|x−½|^{3/2}/3 − (2/3)[(½)^{3/2} − |x−½|^{3/2}] over (0,1), integrated by hand.
    let exact = 0.8 * 0.5f64.powf(2.5) / 3.0 - 2.0 / 3.0 * (0.5f64.powf(1.5) - 0.8 * 0.5f64.powf(2.5));
    let e = report["final_energy"].as_f64().unwrap();
    assert!((e - exact).abs() < 1e-3, "{e} vs {exact}");
    for key in ["el_residual", "epsilon_trace", "converged"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn manifest_lists_every_file_with_its_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("art");
    let o = vreg(&["verify-integrand", "--preset", "verify-double-phase", "--samples", "200", "--output", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    let files = manifest["files"].as_array().unwrap();
    let mut on_disk: Vec<String> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).filter(|n| n != "manifest.json").collect();
    on_disk.sort();
    let listed: Vec<String> = files.iter().map(|f| f["path"].as_str().unwrap().to_string()).collect();
    assert_eq!(listed, on_disk);
    for f in files {
        let bytes = std::fs::read(out.join(f["path"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert!(!bytes.contains(&b'\r'));
    }
    // Nothing else was written next to the output directory.
    let siblings: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(siblings.len(), 1);
}

#[test]
fn json_keys_are_sorted() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = vreg(&["exponents", "--preset", "exponents-p3", "--format", "json", "--output", out.to_str().unwrap()], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    let top: Vec<&str> = text.lines().filter(|l| l.starts_with("  \"")).map(|l| l.trim_start().split('"').nth(1).unwrap()).collect();
    let mut sorted = top.clone();
    sorted.sort();
    assert_eq!(top, sorted);
    assert!(text.contains("\"delta_predicted\": 7.5000000000000000e-1"));
}

#[test]
fn empty_config_names_missing_kind() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("empty.cfg");
    std::fs::write(&cfg, "").unwrap();
    let o = vreg(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`kind`"), "{}", stderr(&o));
}

#[test]
fn config_errors_exit_with_code_two_and_locate_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "kind = solve\n[integrand]\np = 3\nfoo = 1\n").unwrap();
    let o = vreg(&["run", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.cfg:4") && stderr(&o).contains("integrand.foo"), "{}", stderr(&o));

    let o = vreg(&["solve", "--preset", "pLaplace1d-p3", "--grid.nodes", "two"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("grid.nodes"));

    let o = vreg(&["solve", "--preset", "nope"], dir.path());
    assert_eq!(o.status.code(), Some(2));

    let o = vreg(&["solve", "--preset", "pLaplace1d-p3", "--integrand.q", "2"], dir.path());
    assert_eq!(o.status.code(), Some(2), "q < p must be rejected");
    assert!(!dir.path().join("vreg-out").exists(), "no artifacts on config errors");
}

#[test]
fn command_line_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "kind = exponents\n[exponents]\nn = 2\np = 2\nq = 2\nformat = json\n").unwrap();
    let out = dir.path().join("o");
    let o = vreg(&["run", cfg.to_str().unwrap(), "--exponents.p", "3", "--q=3", "--output", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["report"]["delta_predicted"].as_f64(), Some(0.75));
    let echoed = std::fs::read_to_string(out.join("config.cfg")).unwrap();
    assert!(echoed.contains("p = 3") && !echoed.contains("output"));
}

#[test]
fn csv_artifacts_have_headers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let o = vreg(&["classify", "--preset", "classify-p3", "--grid.nodes", "257", "--samples", "5", "--output", out.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(out.join("classification.csv")).unwrap();
    assert!(csv.starts_with("x,label,excess_min,R_at_min\n"));
    assert_eq!(csv.lines().count(), 6);
    let out2 = dir.path().join("p");
    let o = vreg(&["excess", "--preset", "excess-p3", "--grid.nodes", "257", "--steps", "2", "--output", out2.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(std::fs::read_to_string(out2.join("profile.csv")).unwrap().starts_with("R,excess,mean_grad_norm\n"));
}

#[test]
fn every_preset_parses() {
    let dir = tempfile::tempdir().unwrap();
    let o = vreg(&["presets"], dir.path());
    let names = stdout(&o);
    assert!(names.lines().count() >= 10);
    for name in names.lines() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("presets").join(format!("{name}.cfg"));
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.lines().any(|l| l.starts_with("kind = ")), "{name} has no kind");
    }
}
