use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use aoi_core::index::{indifference_subsidy_numeric, oracle_model_arq, ArqArm, SubsidyAccounting};
use aoi_core::mdp::CompiledMdp;

const SCENARIO: &str = r#"
name = "cli"
[model]
max_age = 20
[protocol]
kind = "standard_arq"
error = [0.5, 0.2]
[sweep]
budgets = [0.5, 1.0]
[run]
policies = ["whittle", "greedy"]
horizon = 3000
seeds = 2
calibration_horizon = 5000
"#;

fn lab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aoi-lab")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_scenario(dir: &Path, text: &str) -> String {
    let p = dir.join("s.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn records(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path).unwrap().records().map(|r| r.unwrap()).collect()
}

#[test]
fn simulate_writes_rows_aggregates_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), SCENARIO);
    let out = dir.path().join("a");
    let o = lab(&["simulate", "--scenario", &s, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = records(&out.join("results.csv"));
    let header = csv::Reader::from_path(out.join("results.csv")).unwrap().headers().unwrap().clone();
    assert_eq!(
        header.iter().collect::<Vec<_>>(),
        ["scenario_hash", "case", "seed", "policy", "lambda", "users", "j", "c", "ci", "bound", "status"]
    );
    // whittle at two budgets and greedy at lambda = 1 only: 3 x (2 seeds + mean), plus 2 bound rows.
    assert_eq!(rows.len(), 11);
    let means: Vec<_> = rows.iter().filter(|r| &r[2] == "mean").collect();
    assert_eq!(means.len(), 3);
    for m in &means {
        let j: f64 = m[6].parse().unwrap();
        let ci: f64 = m[8].parse().unwrap();
        let bound: f64 = m[9].parse().unwrap();
        assert!(j >= bound - ci, "{m:?}");
        assert_eq!(&m[10], "ok");
    }
    assert_eq!(rows.iter().filter(|r| &r[3] == "lower-bound").count(), 2);
    let whittle_half: Vec<f64> = rows
        .iter()
        .filter(|r| &r[3] == "whittle" && &r[4] == "0.5" && &r[2] != "mean")
        .map(|r| r[7].parse().unwrap())
        .collect();
    assert!(whittle_half.iter().all(|&c| c <= 0.55), "{whittle_half:?}");

    let again = dir.path().join("b");
    let o = lab(&["simulate", "--scenario", &s, "--out", again.to_str().unwrap(), "--jobs", "2"]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("results.csv")).unwrap(), fs::read(again.join("results.csv")).unwrap());
}

#[test]
fn manifest_regenerates_the_results() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), SCENARIO);
    let out = dir.path().join("a");
    assert!(lab(&["simulate", "--scenario", &s, "--out", out.to_str().unwrap(), "--seeds", "4,9"]).status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(out.join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([4, 9]));
    let hash = manifest["scenario_hash"].as_str().unwrap();
    assert!(records(&out.join("results.csv")).iter().all(|r| &r[0] == hash));
    // Rebuild the scenario file from the manifest alone and rerun.
    let scenario: aoi_lab::Scenario = serde_json::from_value(manifest["scenario"].clone()).unwrap();
    let rebuilt = dir.path().join("rebuilt.toml");
    fs::write(&rebuilt, scenario.to_toml().unwrap()).unwrap();
    let out2 = dir.path().join("c");
    let o = lab(&["simulate", "--scenario", rebuilt.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(out.join("results.csv")).unwrap(), fs::read(out2.join("results.csv")).unwrap());
    let load = |d: &Path| {
        let (mut s, _) = aoi_lab::Scenario::load(&d.join("scenario.toml"), true).unwrap();
        s.run.out = None;
        s
    };
    assert_eq!(load(&out), load(&out2));
}

#[test]
fn strict_and_lenient_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), &SCENARIO.replace("seeds = 2", "seeds = 2\nhorizn = 5"));
    let o = lab(&["simulate", "--scenario", &s, "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("run.horizn"), "{}", stderr(&o));
    let o = lab(&["simulate", "--scenario", &s, "--lenient", "--seeds", "1", "--out", dir.path().join("y").to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning: ignored unknown key `run.horizn`"));
}

#[test]
fn type_errors_name_key_and_type() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), &SCENARIO.replace("max_age = 20", "max_age = \"twenty\""));
    let o = lab(&["simulate", "--scenario", &s]);
    assert_eq!(o.status.code(), Some(3));
    let err = stderr(&o);
    assert!(err.contains("max_age") && err.contains("u32"), "{err}");
}

#[test]
fn exit_codes_by_failure_class() {
    assert_eq!(lab(&["repro", "fig42"]).status.code(), Some(3));
    assert_eq!(lab(&["simulate"]).status.code(), Some(2));
    assert_eq!(lab(&["bound", "--preset", "fig6"]).status.code(), Some(4));
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), &SCENARIO.replace("[\"whittle\", \"greedy\"]", "[\"sarsa-lfa\"]"));
    let o = lab(&["simulate", "--scenario", &s]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no planning or heuristic policies"));
}

#[test]
fn bound_matches_the_closed_form() {
    let o = lab(&["bound", "--preset", "fig3", "--lambda", "0.5"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let line = out.lines().nth(1).unwrap();
    let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
    // (sum sqrt(w / (1 - p)))^2 / (2 lambda) + lambda w* p* / (2 (1 - p*)) + (1 - 1/2) sum w,
    // with (w*, p*) the user minimizing w p / (1 - p).
    let p = [0.5f64, 0.2, 0.1];
    let root: f64 = p.iter().map(|q| (1.0 / (1.0 - q)).sqrt()).sum();
    let expected = root * root / 1.0 + 0.5 * 0.1 / (2.0 * 0.9) + 1.5;
    assert!((value - expected).abs() < 1e-12, "{value} vs {expected}");
}

#[test]
fn index_table_matches_the_indifference_oracle() {
    let o = lab(&["index", "--user", "p=0.5", "w=1", "--delta", "1..5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("user,delta,index"));
    let arm = ArqArm::new(1.0, 0.5).unwrap();
    for (delta, line) in (1..=5).zip(lines) {
        let v: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        let mdp = CompiledMdp::compile(&oracle_model_arq(delta, &arm).unwrap()).unwrap();
        let c = indifference_subsidy_numeric(delta, &mdp, SubsidyAccounting::PerSlot).unwrap();
        assert!((v - c).abs() < 1e-2, "delta {delta}: {v} vs {c}");
    }
}

#[test]
fn solve_writes_policies() {
    let dir = tempfile::tempdir().unwrap();
    let s = write_scenario(dir.path(), &SCENARIO.replace("max_age = 20", "max_age = 8"));
    let out = dir.path().join("s");
    let o = lab(&["solve", "--scenario", &s, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = records(&out.join("solve.csv"));
    assert_eq!(rows.len(), 2);
    let c: f64 = rows[0][6].parse().unwrap();
    assert!((c - 0.5).abs() < 1e-6);
    let policy = fs::read_to_string(out.join(&rows[0][8])).unwrap();
    assert!(policy.starts_with("# aoi-policy v1"));
}
