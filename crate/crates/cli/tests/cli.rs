use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn remplan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_remplan"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = remplan(args);
    assert!(
        out.status.success(),
        "remplan {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn region(from: f64, to: f64, ch1: Value, ch6: Value) -> Value {
    json!({
        "from_m": from, "to_m": to,
        "channels": [
            {"channel": 1, "model": ch1},
            {"channel": 6, "model": ch6},
        ]
    })
}

fn gmm(w: &[f64], m: &[f64], sd: &[f64]) -> Value {
    json!({"weights": w, "means": m, "stddevs": sd})
}

/// Channel 1 is unusable in the middle, channel 6 everywhere else.
fn spec(dir: &Path) -> PathBuf {
    let good = gmm(&[1.0], &[27.5], &[0.3]);
    let bad = gmm(&[0.5, 0.5], &[27.0, 23.0], &[0.3, 0.3]);
    let v = json!({
        "seed": 0,
        "route": {
            "origin_lat_deg": 48.1, "origin_lon_deg": 11.6,
            "waypoints_enu": [[0, 0, 0], [900, 0, 0]],
            "spacing_m": 100.0
        },
        "channels": [
            {"index": 1, "center_frequency_hz": 2.412e9},
            {"index": 6, "center_frequency_hz": 2.437e9}
        ],
        "regions": [
            region(0.0, 350.0, good.clone(), bad.clone()),
            region(350.0, 650.0, bad.clone(), good.clone()),
            region(650.0, 1e6, good.clone(), bad.clone()),
        ],
        "samples_per_location": 1500
    });
    let p = dir.join("spec.json");
    fs::write(&p, serde_json::to_vec_pretty(&v).unwrap()).unwrap();
    p
}

fn pipeline(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let spec = spec(dir);
    let gen = dir.join("gen");
    ok(&["generate", "--spec", s(&spec), "--out", s(&gen), "--seed", "5"]);
    let rem = dir.join("rem.jsonl");
    ok(&[
        "fit", "--input", s(&gen.join("chi.csv")), "--out", s(&rem), "--seed", "9",
        "--components", "2", "--restarts", "2",
    ]);
    (gen, rem, spec)
}

#[test]
fn end_to_end_dijkstra_passes_oracle() {
    let d = tempfile::tempdir().unwrap();
    let (gen, rem, _) = pipeline(d.path());
    let merged = d.path().join("merged.jsonl");
    let out = ok(&["cluster", "--input", s(&rem), "--out", s(&merged), "--geo-radius-m", "150"]);
    assert!(out.contains("3 clusters"), "{out}");
    let plan = d.path().join("plan.json");
    let cfg = gen.join("scenario.json");
    let route = gen.join("route.json");
    let out = ok(&[
        "plan", "--rem", s(&rem), "--route", s(&route), "--config", s(&cfg),
        "--algorithm", "dijkstra", "--out", s(&plan),
    ]);
    assert!(out.starts_with("dijkstra: 2 switches, 0 locations"), "{out}");
    let v: Value = serde_json::from_slice(&fs::read(&plan).unwrap()).unwrap();
    assert_eq!(v["switches"], 2);
    assert_eq!(v["algorithm"], "dijkstra");
    assert_eq!(v["meta"]["stage"], "plan");
    let loc = &v["locations"][0];
    for k in ["loc", "channel", "outage", "latency_lb_s", "extrapolated"] {
        assert!(loc.get(k).is_some(), "missing {k}");
    }
    ok(&[
        "validate", "--oracle", s(&plan), s(&rem), s(&merged), s(&gen.join("chi.csv")),
        "--rem", s(&rem), "--route", s(&route), "--config", s(&cfg),
    ]);
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    // Same relative paths so recorded input paths match too.
    for d in [a.path(), b.path()] {
        let spec = spec(d);
        let out = Command::new(env!("CARGO_BIN_EXE_remplan"))
            .current_dir(d)
            .args(["generate", "--spec", "spec.json", "--out", "gen", "--seed", "5"])
            .output()
            .unwrap();
        assert!(out.status.success());
        assert!(spec.exists());
        let out = Command::new(env!("CARGO_BIN_EXE_remplan"))
            .current_dir(d)
            .args(["fit", "--input", "gen/chi.csv", "--out", "rem.jsonl", "--seed", "1", "--components", "2"])
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    for f in ["gen/chi.csv", "gen/route.json", "gen/ground_truth.json", "rem.jsonl", "rem.jsonl.samples.bin"] {
        assert_eq!(
            fs::read(a.path().join(f)).unwrap(),
            fs::read(b.path().join(f)).unwrap(),
            "{f} differs"
        );
    }
}

#[test]
fn infeasible_location_exits_one_and_names_it() {
    let d = tempfile::tempdir().unwrap();
    let (gen, rem, _) = pipeline(d.path());
    let out = remplan(&[
        "plan", "--rem", s(&rem), "--route", s(&gen.join("route.json")),
        "--algorithm", "dijkstra", "--p-max", "1e-300", "--out", s(&d.path().join("p.json")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no feasible channel at route location 0"), "{err}");
    assert!(!d.path().join("p.json").exists());
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(remplan(&["plan", "--bogus"]).status.code(), Some(2));
    assert_eq!(remplan(&["frobnicate"]).status.code(), Some(2));
    let out = remplan(&["generate", "--spec", "x.json", "--out", "y"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--seed"));
    assert_eq!(remplan(&["fit", "--input", "a.csv", "--out", "b"]).status.code(), Some(2));
}

#[test]
fn report_compares_all_algorithms() {
    let d = tempfile::tempdir().unwrap();
    let (gen, rem, _) = pipeline(d.path());
    let algs = ["greedy", "dijkstra", "bumblebee", "learning"];
    for a in algs {
        ok(&[
            "plan", "--rem", s(&rem), "--route", s(&gen.join("route.json")),
            "--config", s(&gen.join("scenario.json")), "--algorithm", a,
            "--out", s(&d.path().join(format!("plan_{a}.json"))),
        ]);
    }
    let report = d.path().join("report.csv");
    let out = ok(&[
        "report", "--compare", "greedy,dijkstra,bumblebee,learning",
        "--plans-dir", s(d.path()), "--out", s(&report),
    ]);
    assert!(out.contains("dijkstra=2"), "{out}");
    let text = fs::read_to_string(&report).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "algorithm,distance_m,channel,outage,latency_lb");
    assert_eq!(rows.len(), 1 + 4 * 10);
    for a in algs {
        assert_eq!(rows.iter().filter(|r| r.starts_with(&format!("{a},"))).count(), 10);
    }
    let summary = fs::read_to_string(d.path().join("report.csv.summary.csv")).unwrap();
    assert!(summary.lines().any(|l| l.starts_with("dijkstra,2,0,10,")), "{summary}");
}

#[test]
fn validate_catches_a_changed_input() {
    let d = tempfile::tempdir().unwrap();
    let (gen, rem, _) = pipeline(d.path());
    ok(&["validate", s(&rem)]);
    let chi = gen.join("chi.csv");
    let mut text = fs::read_to_string(&chi).unwrap();
    text.push_str("1,0,0,0,25.0\n");
    fs::write(&chi, text).unwrap();
    let out = remplan(&["validate", s(&rem)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("changed"));
}

#[test]
fn validate_catches_a_tampered_plan() {
    let d = tempfile::tempdir().unwrap();
    let (gen, rem, _) = pipeline(d.path());
    let plan = d.path().join("plan.json");
    ok(&[
        "plan", "--rem", s(&rem), "--route", s(&gen.join("route.json")),
        "--algorithm", "dijkstra", "--out", s(&plan),
    ]);
    let mut v: Value = serde_json::from_slice(&fs::read(&plan).unwrap()).unwrap();
    v["switches"] = json!(7);
    fs::write(&plan, serde_json::to_vec(&v).unwrap()).unwrap();
    let out = remplan(&["validate", "--oracle", s(&plan)]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("switches 7"), "{text}");
}

#[test]
fn power_mode_runs_through_ingest() {
    let d = tempfile::tempdir().unwrap();
    let v = json!({
        "seed": 0,
        "mode": "power",
        "route": {"origin_lat_deg": 48.1, "origin_lon_deg": 11.6, "waypoints_enu": [[0, 0, 0], [100, 0, 0]]},
        "channels": [{"index": 3, "center_frequency_hz": 2.42e9}],
        "regions": [{
            "from_m": 0.0, "to_m": 1e6,
            "channels": [{"channel": 3, "sources": [
                {"mean_dbm": -95.0, "sigma_db": 4.0, "duty_cycle": 0.3, "subcarriers": [0, 1, 2, 3, 4, 5, 6, 7]}
            ]}]
        }],
        "samples_per_location": 400
    });
    let spec = d.path().join("spec.toml");
    fs::write(&spec, toml::to_string(&v).unwrap()).unwrap();
    let gen = d.path().join("gen");
    ok(&["generate", "--spec", s(&spec), "--out", s(&gen), "--seed", "2"]);
    let chi = d.path().join("chi.csv");
    ok(&["ingest", "--input", s(&gen.join("traces")), "--out", s(&chi)]);
    let mp = d.path().join("mean_power.csv");
    assert!(mp.exists());
    let rem = d.path().join("rem.jsonl");
    ok(&[
        "fit", "--input", s(&chi), "--mean-power", s(&mp), "--out", s(&rem), "--seed", "1",
        "--select-max", "3", "--no-samples",
    ]);
    let text = fs::read_to_string(&rem).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("mean_power_mw"));
    assert!(!d.path().join("rem.jsonl.samples.bin").exists());
    ok(&["validate", s(&chi), s(&rem), s(&gen.join("route.json"))]);
}

#[test]
fn sweep_writes_curve() {
    let d = tempfile::tempdir().unwrap();
    let (_, rem, _) = pipeline(d.path());
    let sweep = d.path().join("sweep.csv");
    ok(&["cluster", "--input", s(&rem), "--sweep-geo-radius", "50:450:100", "--sweep-out", s(&sweep)]);
    let text = fs::read_to_string(&sweep).unwrap();
    let rows: Vec<(f64, f64)> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| {
            let (a, b) = l.split_once(',').unwrap();
            (a.parse().unwrap(), b.parse().unwrap())
        })
        .collect();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0], (50.0, 0.0));
    assert!((rows[1].1 - 100.0).abs() < 1e-6);
}
