use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn hillspec(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hillspec"))
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("HILLSPEC_OUT")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn read_json(path: PathBuf) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn free_bands_are_shifted_parabolas() {
    let dir = scratch("free_bands");
    let o = hillspec(&dir, &["bands", "--potential", "zero", "--bands", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.join("bands.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# config: {"));
    assert_eq!(lines.next().unwrap(), "n,t,re_lambda,im_lambda,residual,collision_flag");
    let mut rows = 0;
    for line in lines {
        let cols: Vec<f64> = line.split(',').take(4).map(|c| c.parse().unwrap()).collect();
        let (t, re, im) = (cols[1], cols[2], cols[3]);
        // Some free level (2πk + t)² must match, whichever band label it carries.
        let best = (-3..=3)
            .map(|k| ((2.0 * PI * k as f64 + t).powi(2) - re).abs())
            .fold(f64::INFINITY, f64::min);
        assert!(best < 1e-8 && im.abs() < 1e-8, "t = {t}: {re} + {im}i");
        rows += 1;
    }
    assert_eq!(rows, 4 * 64);
    let svg = std::fs::read_to_string(dir.join("bands.svg")).unwrap();
    assert!(svg.contains("<metadata>{") && svg.contains("\"potential\":\"zero\""));
}

#[test]
fn critical_v_prints_the_second_coupling() {
    let dir = scratch("critical_v");
    let o = hillspec(&dir, &["critical-v", "--from", "0.7", "--to", "1.0"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let v: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("V = "))
        .expect("a critical value")
        .parse()
        .unwrap();
    assert!((v - 0.888437).abs() < 1e-6, "{out}");
    let json = read_json(dir.join("critical_v.json"));
    assert_eq!(json["schema_version"], 1);
    assert_eq!(json["config"]["interval"][0], 0.7);
    assert_eq!(json["critical_values"].as_array().unwrap().len(), 1);
}

#[test]
fn mathieu_expansion_meets_the_residual_target() {
    let dir = scratch("expand");
    let o = hillspec(
        &dir,
        &[
            "expand",
            "--potential",
            "mathieu(1, 2)",
            "--function",
            "gaussian(0.5, 0.1)",
        ],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json = read_json(dir.join("expansion.json"));
    let residual = json["residual"].as_f64().unwrap();
    assert!(residual < 1e-3, "residual {residual}");
    assert_eq!(json["config"]["function"], "gaussian(0.5, 0.1)");
    let csv = std::fs::read_to_string(dir.join("expansion.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "x,re_f,im_f,re_recon,im_recon,abs_err");
}

#[test]
fn module_errors_become_error_json() {
    let dir = scratch("errors");
    let o = hillspec(&dir, &["expand", "--potential", "zero", "--k", "0"]);
    assert!(!o.status.success());
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["schema_version"], 1);
    assert_eq!(err["error"]["kind"], "support-overflow");

    let o = hillspec(&dir, &["bands", "--potential", "cosine(1)"]);
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "parse");

    let o = hillspec(&dir, &["bands", "--root-tolerance", "0"]);
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"]["kind"], "invalid-argument");
}

#[test]
fn config_file_with_flag_override() {
    let dir = scratch("config_file");
    let file = dir.join("run.json");
    std::fs::write(
        &file,
        r#"{"schema_version": 1, "potential": "optical(0.5)", "bands": 5, "t_points": 16}"#,
    )
    .unwrap();
    let o = hillspec(&dir, &["bands", "--config", file.to_str().unwrap(), "--bands", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.join("bands.csv")).unwrap();
    let echo: Value = serde_json::from_str(text.lines().next().unwrap().strip_prefix("# config: ").unwrap()).unwrap();
    assert_eq!(echo["bands"], 2);
    assert_eq!(echo["potential"], "optical(0.5)");
    assert_eq!(text.lines().count(), 2 + 2 * 16);
}

#[test]
fn identical_runs_write_identical_files() {
    let dir = scratch("determinism");
    let args = [
        "alpha",
        "--potential",
        "mathieu(1, 0.5i)",
        "--bands",
        "2",
        "--t-points",
        "16",
    ];
    let read = |name: &str| std::fs::read(dir.join(name)).unwrap();
    assert!(hillspec(&dir, &args).status.success());
    let (csv, svg) = (read("alpha.csv"), read("alpha.svg"));
    assert!(hillspec(&dir, &args).status.success());
    assert_eq!(csv, read("alpha.csv"));
    assert_eq!(svg, read("alpha.svg"));
}

#[test]
fn spectrality_writes_a_verdict() {
    let dir = scratch("spectrality");
    let o = hillspec(&dir, &["spectrality", "--a", "1", "--b", "1"]);
    assert_eq!(stdout(&o).lines().next().unwrap(), "asymptotically-spectral-candidate");
    let json = read_json(dir.join("spectrality.json"));
    assert_eq!(json["verdict"]["verdict"], "asymptotically-spectral-candidate");
}
