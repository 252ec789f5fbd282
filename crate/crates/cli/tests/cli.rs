use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn whiskers(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_whiskers"))
        .args(args)
        .arg("--out-dir")
        .arg(dir)
        .env("WHISKERS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_input_reports_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = whiskers(dir.path(), &["check", "--torus", "/nonexistent/x.torus"]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.lines().any(|l| l.starts_with("error kind=io")), "{err}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = whiskers(dir.path(), &["--set", "no_such_key=1", "seed-orbit"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_key"));
}

#[test]
fn set_overrides_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# test\nn = 256\nalpha = 0.5\n").unwrap();
    let mesh = dir.path().join("m.txt");
    fs::write(&mesh, "0 0 0 0 1 0 0 1 1\n").unwrap();
    let o = whiskers(
        dir.path(),
        &["--config", cfg.to_str().unwrap(), "--set", "n=512", "plot-data", "--mesh", mesh.to_str().unwrap()],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(err.contains("# n = 512"), "{err}");
    assert!(err.contains("# alpha = 5e-1") || err.contains("# alpha = 0.5"), "{err}");
    let manifest = fs::read_to_string(dir.path().join("plot-data.manifest")).unwrap();
    assert!(manifest.contains("n = 512"));
}

#[test]
fn plot_data_keeps_valid_rows_only() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("mesh.txt");
    let mut text = String::from("# k i j s x y px py valid\n");
    for k in 0..2 {
        for j in 0..3 {
            for i in 0..4 {
                let valid = !(k == 1 && i == 2);
                text.push_str(&format!("{k} {i} {j} {} 1.0 {i}.5 -0.25 1.0 {}\n", j as f64 - 1.0, valid as u8));
            }
        }
    }
    fs::write(&mesh, text).unwrap();
    let o = whiskers(dir.path(), &["plot-data", "--mesh", mesh.to_str().unwrap(), "--projection", "xypx"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let rows: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 24 - 3);
    assert!(rows.iter().all(|r| r.split_whitespace().count() == 7));
    assert!(out.starts_with("# k i j s x y px"));
}

#[test]
fn malformed_mesh_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let mesh = dir.path().join("bad.txt");
    fs::write(&mesh, "0 0 0 0 1 0 0\n").unwrap();
    let o = whiskers(dir.path(), &["plot-data", "--mesh", mesh.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("error kind=parse"), "{}", stderr(&o));
}

#[test]
fn seed_to_checked_circle() {
    let dir = tempfile::tempdir().unwrap();
    let o = whiskers(dir.path(), &["seed-orbit"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let seed = dir.path().join("seed.txt");
    assert!(seed.exists());

    let o = whiskers(
        dir.path(),
        &["--set", "n=512", "continue-eps", "--seed", seed.to_str().unwrap(), "--eps-f", "0", "--n-steps", "1"],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(dir.path().join("manifest.txt")).unwrap();
    let file = manifest
        .lines()
        .find(|l| !l.starts_with('#'))
        .and_then(|l| l.split_whitespace().next())
        .expect("one member")
        .to_string();

    let o = whiskers(dir.path(), &["check", "--torus", dir.path().join(file).to_str().unwrap()]);
    let out = stdout(&o);
    assert!(out.contains("status ok"), "{out}\n{}", stderr(&o));
    assert_eq!(o.status.code(), Some(0));
    assert!(dir.path().join("check.manifest").exists());
}
