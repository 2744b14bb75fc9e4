use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
precoders = ["rzf", "zf"]
methods = ["de", "mc", "uniform"]
trials = 100
seed = 4

[optimizer]
ao_max_iter = 2
phase_max_iter = 5
t_iter = 1

[scenario]
id = "tiny"
mode = "common"
m = 5
k = 3
l = 6
snr_db = 10.0
bs = { kind = "fas", wx = 1.5, wy = 1.0, nx = 4, ny = 2 }
ris = { kind = "angular", c_l = { alpha = 30.0, beta = 10.0 }, c_r = { alpha = 10.0, beta = 20.0 } }
gains = { kind = "fixed", u = 1.0, t = 0.6 }

[sweep]
axis = "snr_db"
values = [0.0, 10.0]
"#;

fn fasris(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fasris")).current_dir(dir).args(args).output().expect("spawn fasris")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stdout: {}\nstderr: {}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr));
}

fn run_all(dir: &Path, threads: &str) {
    let commands: [&[&str]; 5] = [
        &["sweep"],
        &["evaluate"],
        &["montecarlo", "--trials", "60"],
        &["optimize", "--mode", "joint", "--trace", "trace.csv", "--out", "solution.json"],
        &["validate", "--trials", "200"],
    ];
    for cmd in commands {
        let mut args = vec!["--config", "tiny.toml", "--threads", threads, "--out-dir", threads];
        args.extend_from_slice(cmd);
        ok(&fasris(dir, &args));
    }
}

#[test]
fn outputs_are_identical_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("tiny.toml"), CONFIG).unwrap();
    run_all(dir, "1");
    run_all(dir, "3");
    for name in ["tiny.csv", "tiny-evaluate.csv", "tiny-montecarlo.csv", "trace.csv", "tiny-validate.csv", "solution.json"] {
        let a = fs::read(dir.join("1").join(name)).unwrap();
        let b = fs::read(dir.join("3").join(name)).unwrap();
        assert!(!a.is_empty(), "{name} is empty");
        assert_eq!(a, b, "{name} differs between thread counts");
    }
    let csv = fs::read_to_string(dir.join("1/tiny.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "scenario_id,axis_name,axis_value,precoder,method,esr,stderr,runtime_ms");
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 3);
    let mc = fs::read_to_string(dir.join("1/tiny-montecarlo.csv")).unwrap();
    assert!(mc.starts_with("scenario_id,snr_db,precoder,trials,esr_mean,esr_stderr\n"));
    let sol = fs::read_to_string(dir.join("1/solution.json")).unwrap();
    for key in ["\"selection\"", "\"phi\"", "\"z\"", "\"esr\"", "\"monte_carlo\""] {
        assert!(sol.contains(key), "{key} missing from {sol}");
    }
    assert!(fs::read_to_string(dir.join("1/tiny.svg")).unwrap().contains("<svg"));
}

#[test]
fn empty_sweep_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.toml"), CONFIG.replace("values = [0.0, 10.0]", "values = []")).unwrap();
    let out = fasris(dir, &["--config", "bad.toml", "--out-dir", "out", "sweep"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sweep has no values"));
    assert!(!dir.join("out").exists());
}

#[test]
fn missing_config_and_unknown_figure_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fasris(tmp.path(), &["sweep"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--config"));
    let out = fasris(tmp.path(), &["figure", "fig9"]);
    assert!(!out.status.success());
}

#[test]
fn figure_presets_dump_as_configs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = fasris(tmp.path(), &["figure", "fig8", "--dump"]);
    ok(&out);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("axis = \"z\"") && text.contains("id = \"fig8\""));
}

#[test]
fn validate_flags_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("tiny.toml"), CONFIG).unwrap();
    let out = fasris(dir, &["--config", "tiny.toml", "validate", "--trials", "1500", "--strict", "--fault-pi", "3,3,1.5"]);
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.lines().any(|l| l.starts_with("FAIL probe_")), "{text}");
    let clean = fasris(dir, &["--config", "tiny.toml", "validate", "--trials", "1500", "--strict"]);
    ok(&clean);
}
