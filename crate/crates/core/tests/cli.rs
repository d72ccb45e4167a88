use std::path::Path;
use std::process::Command;

use ddbh::scenario::{self, RunOptions, ScenarioConfig, SweepMode, SweepParam, SweepSpec};
use serde_json::Value;

const SMALL: &str = r#"
name = "small"
seed = 7

[geometry]
kind = "chain"
sites = 3
hopping = 2.775

[model]
u = 0.1
delta = -0.28

[drive]
kind = "single"
target = "1C"
f = 1.0

[integration]
dt = 0.005
t_burn = 10.0
t_end = 30.0
trajectories = 12

[observables]
tau_max = 3.0
"#;

fn ddbh() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddbh"))
}

fn small() -> ScenarioConfig {
    ScenarioConfig::from_toml_str(SMALL).unwrap()
}

fn validate(schema: &Value, v: &Value, path: &str) -> Result<(), String> {
    if let Some(t) = schema.get("type") {
        let types: Vec<&str> = match t {
            Value::String(s) => vec![s.as_str()],
            Value::Array(a) => a.iter().filter_map(|x| x.as_str()).collect(),
            _ => return Err(format!("{path}: bad type keyword")),
        };
        let ok = types.iter().any(|t| match *t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "string" => v.is_string(),
            "number" => v.is_number(),
            "integer" => v.is_u64() || v.is_i64(),
            "null" => v.is_null(),
            "boolean" => v.is_boolean(),
            _ => false,
        });
        if !ok {
            return Err(format!("{path}: expected {types:?}, got {v}"));
        }
    }
    if v.is_null() {
        return Ok(());
    }
    if let Some(Value::Array(e)) = schema.get("enum") {
        if !e.contains(v) {
            return Err(format!("{path}: {v} not in {e:?}"));
        }
    }
    if let (Some(Value::Array(req)), Some(obj)) = (schema.get("required"), v.as_object()) {
        for r in req {
            let key = r.as_str().unwrap();
            if !obj.contains_key(key) {
                return Err(format!("{path}: missing `{key}`"));
            }
        }
    }
    if let (Some(Value::Object(props)), Some(obj)) = (schema.get("properties"), v.as_object()) {
        for (k, s) in props {
            if let Some(x) = obj.get(k) {
                validate(s, x, &format!("{path}.{k}"))?;
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), v.as_array()) {
        for (i, x) in arr.iter().enumerate() {
            validate(items, x, &format!("{path}[{i}]"))?;
        }
    }
    Ok(())
}

fn schema() -> Value {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("schema/summary.schema.json");
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn validator_rejects_broken_summaries() {
    let s = schema();
    let bad = serde_json::json!({"schema": "ddbh-summary/1", "kind": "simulate"});
    assert!(validate(&s, &bad, "$").unwrap_err().contains("seed"));
}

#[test]
fn simulate_writes_schema_valid_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.path().join("run");
    let st = ddbh()
        .args(["simulate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .args(["--dump", "--deterministic-reduction"])
        .status()
        .unwrap();
    assert!(st.success());
    let sites = std::fs::read_to_string(out.join("sites.csv")).unwrap();
    let mut lines = sites.lines();
    assert_eq!(lines.next().unwrap(), scenario::SITES_HEADER);
    assert_eq!(lines.count(), 3);
    let curve = std::fs::read_to_string(out.join("g2_tau.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), scenario::G2_TAU_HEADER);
    assert_eq!(curve.lines().count(), 1 + 3 * 121);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    validate(&schema(), &summary, "$").unwrap();
    assert_eq!(summary["trajectories"]["used"], 12);
    let raw = std::fs::File::open(out.join("trajectories.bin")).unwrap();
    let (header, recs) = ddbh::integrator::read_dump(std::io::BufReader::new(raw)).unwrap();
    assert_eq!(header.n_sites, 3);
    assert_eq!(recs.len(), 12);
}

#[test]
fn deterministic_reduction_is_bitwise_stable_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut bodies = Vec::new();
    for w in ["1", "3"] {
        let out = dir.path().join(w);
        let st = ddbh()
            .args(["simulate", "--preset", "fig3", "--trajectories", "10", "--dt", "0.005", "--workers", w])
            .arg("--deterministic-reduction")
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(st.success());
        bodies.push(std::fs::read(out.join("sites.csv")).unwrap());
        bodies.push(std::fs::read(out.join("g2_tau.csv")).unwrap());
    }
    assert_eq!(bodies[0], bodies[2]);
    assert_eq!(bodies[1], bodies[3]);
}

#[test]
fn config_errors_name_the_field_and_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, SMALL.replace("delta = -0.28", "delta = -0.28\ndetla = 1")).unwrap();
    let out = ddbh().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("detla"));

    std::fs::write(&cfg, SMALL.replace("target = \"1C\"", "target = \"4C\"")).unwrap();
    let out = ddbh().args(["simulate", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("drive.target"));

    let out = ddbh().args(["simulate", "--preset", "nope"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn preset_listing_and_toml_dump() {
    let out = ddbh().arg("preset").output().unwrap();
    let listed: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(listed, scenario::PRESETS);
    let out = ddbh().args(["preset", "fig10"]).output().unwrap();
    let c = ScenarioConfig::from_toml_str(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(c, scenario::preset("fig10").unwrap());
}

#[test]
fn optimize3_table_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("opt.csv");
    let st = ddbh().args(["optimize3", "--u", "0.1,1,10", "--out"]).arg(&csv).status().unwrap();
    assert!(st.success());
    let body = std::fs::read_to_string(csv).unwrap();
    let rows: Vec<&str> = body.lines().collect();
    assert_eq!(rows[0], scenario::OPTIMIZE_HEADER);
    assert_eq!(rows.len(), 4);
    let first: Vec<f64> = rows[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert!((first[2] + 0.280462).abs() < 1e-6 && (first[3] - 2.775386).abs() < 1e-6);
    let out = ddbh().args(["optimize3", "--points", "5"]).output().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 6);
}

#[test]
fn single_point_sweep_matches_simulate() {
    let base = small();
    let spec = SweepSpec {
        preset: None,
        base: Some(base.clone()),
        mode: SweepMode::Zip,
        sites: vec!["1B".into()],
        params: vec![SweepParam { name: "model.u".into(), values: vec![0.1] }],
    };
    let opts = RunOptions { deterministic: true, ..Default::default() };
    let pts = scenario::sweep(&spec, &opts).unwrap();
    let direct = scenario::simulate(&base.resolve().unwrap(), &opts).unwrap();
    let row = direct.site("1B").unwrap();
    let (label, n, g2) = &pts[0].outcome.as_ref().unwrap()[0];
    assert_eq!(label, "1B");
    assert_eq!(n.value.to_bits(), row.n.value.to_bits());
    assert_eq!(g2.unwrap().value.to_bits(), row.g2.unwrap().value.to_bits());
}

#[test]
fn sweep_keeps_going_past_a_failed_point() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("sweep.toml");
    let base = small().to_toml_string().replace("[", "[base.");
    let body = format!(
        "mode = \"grid\"\nsites = [\"1B\"]\n\n[[params]]\nname = \"model.gamma\"\nvalues = [1.0, -1.0]\n\n[[params]]\nname = \"drive.f+geometry.hopping\"\nvalues = [0.5]\n\n[base]\n{base}"
    );
    std::fs::write(&file, body).unwrap();
    let out = dir.path().join("o");
    let st = ddbh().args(["sweep", "--config"]).arg(&file).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    let csv = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], format!("point,seed,model.gamma,drive.f+geometry.hopping,{}", scenario::SWEEP_HEADER_TAIL));
    assert!(lines[1].starts_with("0,7,1,0.5,1B,") && lines[1].ends_with(",ok"));
    assert!(lines[2].starts_with("1,") && lines[2].contains("model.gamma"));
}

#[test]
fn oracle_command_writes_exact_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    let tiny = SMALL.replace("f = 1.0", "f = 0.3").replace("tau_max = 3.0", "tau_max = 1.0\ncurve_sites = [\"1B\"]");
    std::fs::write(&cfg, format!("{tiny}\n[oracle]\ncutoff = 6\ntotal_cap = 6\n")).unwrap();
    let out = dir.path().join("o");
    let st = ddbh().args(["oracle", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(st.success());
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    validate(&schema(), &summary, "$").unwrap();
    assert_eq!(summary["kind"], "oracle");
    let g2b = summary["sites"][1]["g2"].as_f64().unwrap();
    assert!(g2b < 0.3, "{g2b}");
    let curve = std::fs::read_to_string(out.join("g2_tau.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 41);
}
