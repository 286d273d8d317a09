use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const SCALAR: &str = r#"{
  "game": {"A": [[0.5]], "B1": [[1.0]], "B2": [[0.5]], "Q": [[4.0]], "R1": [[1.0]], "R2": [[0.5]]},
  "sensing": {"b": 0.4, "h": 0.1},
  "sim": {"horizon_T": 50, "record_stride": 5},
  "sweep": {"h_values": [0.5, 0.25, 0.1, 0.05], "seeds": 2, "horizon_T": 20}
}"#;

fn aoi_lq(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi-lq"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--output")
        .arg(out)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn solve_writes_benchmark_solution() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SCALAR);
    let out = tmp.path().join("nested/solve");
    let res = aoi_lq(&["solve"], &cfg, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let sol = json(&out.join("solution.json"));
    assert!((sol["P"][0][0].as_f64().unwrap() - 4.0).abs() <= 1e-9);
    assert!((sol["J_star"].as_f64().unwrap() - 4.0).abs() <= 1e-9);
    for key in ["K1", "K2", "A_tilde", "Q_tilde", "M1", "M2", "residual_norm"] {
        assert!(sol.get(key).is_some(), "{key}");
    }
    assert!(out.join("manifest.json").exists());
}

#[test]
fn malformed_config_names_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SCALAR.replace("\"b\": 0.4", "\"b\": \"lots\""));
    let res = aoi_lq(&["solve"], &cfg, &tmp.path().join("o"));
    assert_eq!(res.status.code(), Some(1));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("sensing.b"), "{err}");

    let cfg = write_config(tmp.path(), "{ \"game\": ");
    assert_eq!(aoi_lq(&["solve"], &cfg, &tmp.path().join("o")).status.code(), Some(1));
}

#[test]
fn r1_not_positive_definite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SCALAR.replace("\"R1\": [[1.0]]", "\"R1\": [[0.0]]"));
    let res = aoi_lq(&["solve"], &cfg, &tmp.path().join("o"));
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("R1 must be positive definite"));
}

#[test]
fn ill_posed_game_exits_with_numerical_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SCALAR
        .replace("\"A\": [[0.5]]", "\"A\": [[0.0]]")
        .replace("\"B2\": [[0.5]]", "\"B2\": [[2.0]]");
    let text = text
        .replace("\"R2\": [[0.5]]", "\"R2\": [[1.0]]")
        .replace("\"Q\": [[4.0]]", "\"Q\": [[1.0]]");
    let cfg = write_config(tmp.path(), &text);
    assert_eq!(aoi_lq(&["solve"], &cfg, &tmp.path().join("o")).status.code(), Some(2));
}

#[test]
fn policy_outputs_and_bracket() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &SCALAR.replace("\"b\": 0.4", "\"b\": 0.37"));
    let out = tmp.path().join("p");
    let res = aoi_lq(&["policy", "--dump-age-costs", "--dump-vi"], &cfg, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let p = json(&out.join("policy.json"));
    let (b1, b2) = (p["b_1"].as_f64().unwrap(), p["b_2"].as_f64().unwrap());
    assert!(b2 <= 0.37 && 0.37 <= b1);
    assert_eq!(p["mode"], "randomized");
    let ages = fs::read_to_string(out.join("age_costs.csv")).unwrap();
    assert!(ages.starts_with("delta,u\n0,"));
    assert!(fs::read_to_string(out.join("vi.csv"))
        .unwrap()
        .starts_with("delta,value,action\n"));

    let cfg = write_config(tmp.path(), &SCALAR.replace("\"b\": 0.4", "\"b\": 25.0"));
    assert!(aoi_lq(&["policy"], &cfg, &out).status.success());
    let p = json(&out.join("policy.json"));
    assert_eq!(p["mode"], "deterministic");
    assert_eq!(p["eta_1"], 1);
}

#[test]
fn policy_thresholds_stable_in_tolerance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut etas = Vec::new();
    for eps in ["1e-4", "1e-6"] {
        let text = SCALAR
            .replace("\"h\": 0.1}", &format!("\"h\": 0.1, \"eps\": {eps}}}"))
            .replace("0.4", "0.37");
        let cfg = write_config(tmp.path(), &text);
        let out = tmp.path().join(eps);
        assert!(aoi_lq(&["policy"], &cfg, &out).status.success());
        let p = json(&out.join("policy.json"));
        etas.push((p["eta_1"].clone(), p["eta_2"].clone()));
    }
    assert_eq!(etas[0], etas[1]);
}

#[test]
fn simulate_is_reproducible_and_seed_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SCALAR);
    let run = |tag: &str, seed: &str| {
        let out = tmp.path().join(tag);
        let res = aoi_lq(&["simulate", "--seed", seed], &cfg, &out);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        (
            fs::read(out.join("trajectory.csv")).unwrap(),
            json(&out.join("summary.json")),
        )
    };
    let (a, sa) = run("a", "3");
    let (b, _) = run("b", "3");
    let (c, _) = run("c", "4");
    assert_eq!(a, b);
    assert_ne!(a, c);
    assert_eq!(sa["seed"], 3);
    for key in [
        "J_empirical",
        "J_star",
        "gap",
        "error_cost_empirical",
        "n_T",
        "rate_empirical",
    ] {
        assert!(sa.get(key).is_some(), "{key}");
    }
    let header = String::from_utf8(a).unwrap();
    assert!(header.starts_with("t,x_1,xhat_1,e_1,u1_1,u2_1,sensed,running_J\n"));
}

#[test]
fn manifest_reproduces_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SCALAR);
    let first = tmp.path().join("first");
    assert!(aoi_lq(&["simulate", "--seed", "5"], &cfg, &first).status.success());
    let manifest = json(&first.join("manifest.json"));
    let echo = tmp.path().join("echo.json");
    fs::write(&echo, serde_json::to_string(&manifest["config"]).unwrap()).unwrap();
    let second = tmp.path().join("second");
    assert!(aoi_lq(&["simulate"], &echo, &second).status.success());
    for f in ["trajectory.csv", "summary.json", "policy.json"] {
        assert_eq!(
            fs::read(first.join(f)).unwrap(),
            fs::read(second.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_eq!(fs::read_to_string(&cfg).unwrap(), SCALAR);
}

#[test]
fn sweep_h_writes_one_row_per_point() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SCALAR);
    let out = tmp.path().join("s");
    let res = aoi_lq(&["sweep", "--axis", "h"], &cfg, &out);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(out.join("sweep_h.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "axis_value,mean_cost,stderr,n_seeds,J_star");
    assert_eq!(lines.len(), 5);
    assert!(out.join("sweep_h_manifest.json").exists());
}

#[test]
fn unwritable_output_is_a_user_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SCALAR);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let res = aoi_lq(&["solve"], &cfg, &blocker.join("sub"));
    assert_eq!(res.status.code(), Some(1));
}
