use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL: &[&str] = &["--n-t1", "32", "--t1max", "0.032", "--n-t2", "64", "--t2max", "0.064"];

const PAIR_SPIN: &str = "spins 2\nshift 1 -150\nshift 2 220\nJ 1 2 8\nt2 * 0.3\nrho * 0.5\nsigma 1 2 -0.3\n";

fn noesy() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_noesy"));
    c.env_remove("NOESY_OUT_DIR");
    c
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run(cmd: &mut Command) -> Output {
    let out = cmd.output().expect("binary runs");
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn pair_spin(dir: &Path) -> PathBuf {
    let p = dir.join("pair.spin");
    std::fs::write(&p, PAIR_SPIN).unwrap();
    p
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn ratios(report: &Value) -> Vec<(String, f64)> {
    report["windows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|w| (w["label"].as_str().unwrap().to_string(), w["ratio"].as_f64().unwrap()))
        .collect()
}

#[test]
fn simulates_the_benchmark_parameter_set() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run(noesy()
        .args(["simulate", "--seq", "pe-noesy", "--config"])
        .arg(configs().join("benchmark.toml"))
        .arg("--out")
        .arg(&out));
    let side = json(&out.join("pe-noesy.json"));
    let (rows, cols) = (side["rows"].as_u64().unwrap(), side["cols"].as_u64().unwrap());
    assert_eq!((rows, cols), (100, 500));
    let bytes = std::fs::read(out.join("pe-noesy.f32")).unwrap();
    assert_eq!(bytes.len() as u64, rows * cols * 4);
    assert!(bytes.chunks(4).any(|b| f32::from_le_bytes(b.try_into().unwrap()) != 0.0));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["version"], env!("CARGO_PKG_VERSION"));
    assert_eq!(manifest["config"]["acquisition"]["n_t1"], 50);
    let peaks = std::fs::read_to_string(out.join("peaks.csv")).unwrap();
    assert_eq!(peaks.lines().count(), 4);
}

#[test]
fn zero_t1max_gives_one_row() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = pair_spin(tmp.path());
    let out = tmp.path().join("out");
    run(noesy()
        .args(["simulate", "--seq", "noesy", "--t1max", "0", "--n-t2", "64", "--t2max", "0.064", "--sys"])
        .arg(&sys)
        .arg("--out")
        .arg(&out));
    let side = json(&out.join("noesy.json"));
    assert_eq!(side["rows"], 1);
    assert_eq!(side["cols"], 128);
}

#[test]
fn missing_spin_file_fails_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = noesy()
        .args(["simulate", "--sys"])
        .arg(tmp.path().join("absent.spin"))
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("absent.spin"), "{err}");
}

#[test]
fn parse_errors_point_at_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = pair_spin(tmp.path());
    let seq = tmp.path().join("bad.pseq");
    std::fs::write(&seq, "phase 1 = 0\np 90 ph1\nwobble 3\nacq 64 0.001 ph=1\n").unwrap();
    let out = noesy()
        .args(["simulate", "--seq"])
        .arg(&seq)
        .arg("--sys")
        .arg(&sys)
        .arg("--out")
        .arg(tmp.path())
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.pseq:3:1"), "{err}");
}

#[test]
fn conflicting_flags_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = pair_spin(tmp.path());
    let out = noesy()
        .args(["compare", "--no-zq-filter", "--zqf", "26000,0.016,1100", "--sys"])
        .arg(&sys)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--no-zq-filter"));
}

#[test]
fn a_sequence_compared_with_itself_gives_unit_ratios() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = pair_spin(tmp.path());
    let out = tmp.path().join("out");
    run(noesy()
        .args(["compare", "--a", "noesy", "--b", "noesy", "--sys"])
        .arg(&sys)
        .args(SMALL)
        .arg("--out")
        .arg(&out));
    let r = ratios(&json(&out.join("report.json")));
    assert_eq!(r.len(), 2);
    for (label, ratio) in r {
        assert_eq!(ratio, 1.0, "{label}");
    }
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn benchmark_config_reproduces_the_frozen_ratio() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run(noesy()
        .args(["compare", "--config"])
        .arg(configs().join("benchmark.toml"))
        .arg("--out")
        .arg(&out));
    let r = ratios(&json(&out.join("report.json")));
    let bc = r.iter().find(|(l, _)| l == "B-C").unwrap().1;
    assert!((bc / 1.021868011375964 - 1.0).abs() < 0.02, "{bc}");
}

#[test]
fn without_the_filter_the_zq_artefact_is_antiphase() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    run(noesy()
        .args(["compare", "--no-zq-filter", "--config"])
        .arg(configs().join("benchmark.toml"))
        .arg("--out")
        .arg(&out));
    let report = json(&out.join("report.json"));
    let ab = report["windows"]
        .as_array()
        .unwrap()
        .iter()
        .find(|w| w["label"] == "A-B")
        .unwrap();
    let index = ab["b"]["antiphase_index"].as_f64().unwrap();
    assert!(index > 0.5, "{index}");
    assert_eq!(json(&out.join("manifest.json"))["config"]["mixing"]["zq_filter"], Value::Null);
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = pair_spin(tmp.path());
    let dirs: Vec<PathBuf> = ["1", "4"]
        .iter()
        .map(|t| {
            let out = tmp.path().join(format!("t{t}"));
            run(noesy()
                .args(["compare", "--threads", t, "--sys"])
                .arg(&sys)
                .args(SMALL)
                .arg("--out")
                .arg(&out));
            out
        })
        .collect();
    let mut names: Vec<_> = std::fs::read_dir(&dirs[0]).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for n in names {
        let a = std::fs::read(dirs[0].join(&n)).unwrap();
        let b = std::fs::read(dirs[1].join(&n)).unwrap();
        assert!(a == b, "{n:?} differs");
    }
}

#[test]
fn out_dir_env_is_honoured() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = pair_spin(tmp.path());
    let out = tmp.path().join("from-env");
    run(noesy()
        .env("NOESY_OUT_DIR", &out)
        .args(["simulate", "--seq", "noesy", "--sys"])
        .arg(&sys)
        .args(SMALL));
    assert!(out.join("noesy.f32").exists());
    assert!(out.join("manifest.json").exists());
}

#[test]
fn pseq_files_run_and_refuse_mixing_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let sys = pair_spin(tmp.path());
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/golden/noesy_zqf.pseq");
    let out = tmp.path().join("out");
    run(noesy()
        .args(["compare", "--b", "noesy", "--a"])
        .arg(&golden)
        .arg("--sys")
        .arg(&sys)
        .args(SMALL)
        .arg("--out")
        .arg(&out));
    for (label, ratio) in ratios(&json(&out.join("report.json"))) {
        assert!((ratio - 1.0).abs() < 1e-12, "{label}: {ratio}");
    }

    let bad = noesy()
        .args(["simulate", "--mix", "0.1", "--seq"])
        .arg(&golden)
        .arg("--sys")
        .arg(&sys)
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
