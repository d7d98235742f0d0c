use std::path::Path;
use std::process::{Command, Output};

use nvmrl_core::costmodel::DEFAULT_REFERENCE_CSV;
use serde_json::Value;

fn nvmrlsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvmrlsim"))
        .args(args)
        .env_remove("NVMRLSIM_CONFIG")
        .output()
        .unwrap()
}

fn with_env(cfg: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nvmrlsim"))
        .args(args)
        .env("NVMRLSIM_CONFIG", cfg)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Exit code plus the single diagnostic line.
fn failure(o: &Output) -> (i32, String) {
    let err = stderr(o);
    let first = err.lines().next().unwrap_or_default().to_string();
    assert!(first.starts_with("nvmrlsim: error: "), "{err}");
    (o.status.code().unwrap(), first)
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn usage_errors_exit_2() {
    let none = nvmrlsim(&[]);
    assert_eq!(failure(&none).0, 2);
    assert!(stderr(&none).contains("Usage:"));
    assert_eq!(failure(&nvmrlsim(&["fly"])).0, 2);
    assert_eq!(failure(&nvmrlsim(&["shapes", "--nope"])).0, 2);
    assert_eq!(failure(&nvmrlsim(&["sweep", "--batch", "0..3"])).0, 2);
    assert_eq!(failure(&nvmrlsim(&["compare", "--policies", "L9x"])).0, 2);
    assert!(nvmrlsim(&["--help"]).status.success());
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(dir.path(), "bad.toml", "policies = [");
    assert_eq!(failure(&nvmrlsim(&["--config", bad.to_str().unwrap(), "shapes"])).0, 3);
    let unknown = write(dir.path(), "unknown.toml", "colour = 1\n");
    assert_eq!(failure(&nvmrlsim(&["--config", unknown.to_str().unwrap(), "shapes"])).0, 3);
    let missing = write(dir.path(), "missing.toml", "network = \"nowhere.toml\"\n");
    let (code, line) = failure(&nvmrlsim(&["--config", missing.to_str().unwrap(), "shapes"]));
    assert_eq!(code, 3);
    assert!(line.contains("nowhere.toml"));
    assert_eq!(failure(&nvmrlsim(&["check-reference", "/no/such/table.csv"])).0, 3);
    assert_eq!(failure(&nvmrlsim(&["cost", "--batch", "1..4"])).0, 3);
    let corrupt = write(dir.path(), "t.csv", &DEFAULT_REFERENCE_CSV.replacen("11.9285", "12.0", 1));
    let o = nvmrlsim(&["check-reference", corrupt.to_str().unwrap()]);
    assert_ne!(o.status.code(), Some(0));
    assert_eq!(stderr(&o).lines().count(), 1);
}

#[test]
fn module_errors_exit_4() {
    let (code, line) = failure(&nvmrlsim(&["compare", "--policies", "L4"]));
    assert_eq!(code, 4);
    assert!(line.contains("two policies"));
    assert_eq!(failure(&nvmrlsim(&["compare", "--policies", "L3,L4"])).0, 4);
}

#[test]
fn reference_table_round_trips() {
    let o = nvmrlsim(&["check-reference", "--emit"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), DEFAULT_REFERENCE_CSV);
    let totals = stdout(&nvmrlsim(&["check-reference"]));
    assert!(totals.contains("forward,10,11.9285,75.226"));
    assert!(totals.contains("backward,10,94.2257,445.331"));
}

#[test]
fn json_matches_csv() {
    let csv_out = stdout(&nvmrlsim(&["compare", "--reference"]));
    let json: Value = serde_json::from_str(&stdout(&nvmrlsim(&["compare", "--reference", "--format", "json-like"]))).unwrap();
    let mut rdr = csv::Reader::from_reader(csv_out.as_bytes());
    let header = rdr.headers().unwrap().clone();
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), json.as_array().unwrap().len());
    for (r, j) in rows.iter().zip(json.as_array().unwrap()) {
        for (k, v) in header.iter().zip(r.iter()) {
            match &j[k] {
                Value::String(s) => assert_eq!(s, v),
                Value::Number(n) => assert_eq!(n.as_f64().unwrap(), v.parse::<f64>().unwrap(), "{k}"),
                other => panic!("{k}: {other}"),
            }
        }
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    for args in [&["sweep"][..], &["cost", "--policy", "L3", "--batch", "8"], &["plan"], &["calibrate"]] {
        let a = nvmrlsim(args);
        let b = nvmrlsim(args);
        assert!(a.status.success(), "{args:?}");
        assert_eq!(a.stdout, b.stdout, "{args:?}");
        assert_eq!(a.stderr, b.stderr, "{args:?}");
    }
}

#[test]
fn config_from_env_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "run.toml",
        "format = \"json-like\"\npolicies = [\"E2E\", \"L4\"]\nbatch = \"2..3\"\nout = \"sweep.json\"\n",
    );
    let o = with_env(&cfg, &["sweep"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let json: Value = serde_json::from_slice(&std::fs::read(dir.path().join("sweep.json")).unwrap()).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 4);

    let flag_out = dir.path().join("flag.csv");
    let o = with_env(&cfg, &["sweep", "--format", "csv", "--policies", "L2", "--out", flag_out.to_str().unwrap()]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&flag_out).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.lines().skip(1).all(|l| l.starts_with("L2,")));

    // an explicit --config beats the environment
    let other = write(dir.path(), "other.toml", "batch = 5\n");
    let o = with_env(&cfg, &["--config", other.to_str().unwrap(), "sweep", "--policies", "E2E"]);
    assert_eq!(stdout(&o).lines().count(), 2);
}

#[test]
fn unwritable_output_fails() {
    let o = nvmrlsim(&["shapes", "--out", "/no/such/dir/out.csv"]);
    let (code, line) = failure(&o);
    assert_ne!(code, 0);
    assert!(line.contains("cannot write"));
}

#[test]
fn calibrated_hardware_feeds_back_in() {
    let dir = tempfile::tempdir().unwrap();
    let hw = dir.path().join("fitted.toml");
    let o = nvmrlsim(&["calibrate", "--free", "clock,static", "--write-hw", hw.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("fitted [clock,static]"));
    let cfg = write(dir.path(), "run.toml", "hardware = \"fitted.toml\"\n");
    let o = nvmrlsim(&["--config", cfg.to_str().unwrap(), "cost"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("iteration (N=1)"));
    assert_eq!(failure(&nvmrlsim(&["calibrate", "--free", "voltage"])).0, 3);
}

#[test]
fn envelope_uses_given_fps_or_model() {
    let given = stdout(&nvmrlsim(&["envelope", "--fps", "3,15"]));
    assert!(given.contains("given,indoor-cluttered,3.000,1.000,3.000,1.000"));
    assert!(given.contains("given,indoor-cluttered,15.000,1.000,15.000,1.000"));
    let model = stdout(&nvmrlsim(&["envelope", "--policies", "E2E,L4", "--batch", "4"]));
    assert_eq!(model.lines().count(), 1 + 2 * 3);
}

#[test]
fn train_toy_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "toy.toml",
        "policies = [\"E2E\", \"L2\"]\n[train_toy]\nseeds = [1, 2]\nmeta_steps = 300\nfine_tune_steps = 300\n",
    );
    let args = ["--config", cfg.to_str().unwrap(), "train-toy", "--summary", "--seed", "7"];
    let a = nvmrlsim(&args);
    assert!(a.status.success(), "{}", stderr(&a));
    let text = stdout(&a);
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "policy,seed,final_third_reward,final_third_slope,sfd");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("E2E,7,") && lines[2].starts_with("L2,7,"));
    assert_eq!(a.stdout, nvmrlsim(&args).stdout);

    let full = nvmrlsim(&["--config", cfg.to_str().unwrap(), "train-toy", "--fine-tune-steps", "120"]);
    let text = stdout(&full);
    assert!(text.starts_with("policy,seed,iteration,cumulative_reward,return,sfd\n"));
    assert!(text.lines().count() > 2 * 2 * 100);
}

#[test]
fn shapes_and_plan_tables() {
    let shapes = stdout(&nvmrlsim(&["shapes"]));
    assert!(shapes.lines().last().unwrap().starts_with("total,"));
    let plan = nvmrlsim(&["plan", "--policy", "L2"]);
    let text = stdout(&plan);
    assert!(text.lines().any(|l| l.starts_with("CONV1,forward,TypeI,")));
    // L2 trains FC4 and FC5 only
    assert_eq!(text.lines().filter(|l| l.contains(",backward,")).count(), 2);
    assert!(stderr(&plan).lines().all(|l| l.starts_with("nvmrlsim: note: ")));
}
