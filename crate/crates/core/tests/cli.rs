use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(rel)
}

fn gridarb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridarb"))
        .args(args)
        .env_remove("GRIDARB_CONFIG")
        .output()
        .unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_fails_with_message() {
    let out = gridarb(&["simulate", "--config", "/nonexistent/cfg.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(
        err.starts_with("error: ") && err.contains("cannot read config"),
        "{err}"
    );
}

#[test]
fn usage_errors_exit_nonzero() {
    assert!(!gridarb(&["frobnicate"]).status.success());
    let toy = fixture("toy2/config.json");
    assert!(
        !gridarb(&["benchmark", "--config", path_str(&toy), "--days", "3..1"])
            .status
            .success()
    );
    let out = gridarb(&["benchmark", "--config", path_str(&toy), "--days", "0..5"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let cfg = fixture("toy2/config.json");
    let run = |seed: &str| {
        gridarb(&[
            "simulate",
            "--config",
            path_str(&cfg),
            "--seed",
            seed,
            "--days",
            "2",
        ])
    };
    let a = run("3");
    let b = run("3");
    let c = run("4");
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    assert_ne!(a.stdout, c.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("day,t,a_1,p_1,reward,arbitrage,penalty,min_v,max_v")
    );
    assert_eq!(lines.count(), 4);
}

#[test]
fn benchmark_reports_toy_optimum() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = fixture("toy2/config.json");
    let trace = dir.path().join("trace.csv");
    let out = gridarb(&[
        "simulate",
        "--config",
        path_str(&cfg),
        "--policy",
        "zero",
        "--output",
        path_str(&trace),
    ]);
    assert!(out.status.success());
    let out = gridarb(&[
        "benchmark",
        "--config",
        path_str(&cfg),
        "--days",
        "0..1",
        "--grid-soc",
        "13",
        "--grid-act",
        "3",
        "--policy-trace",
        path_str(&trace),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let days = report["days"].as_array().unwrap();
    assert_eq!(days.len(), 2);
    for day in days {
        // 10 kW of demand at 0.1 and 0.3 costs 4; cycling 50 kWh earns 10
        assert_eq!(day["optimal"]["ess_cost"].as_f64(), Some(-10.0));
        assert_eq!(day["optimal"]["objective"].as_f64(), Some(-6.0));
        assert_eq!(
            day["optimal"]["schedule"]["powers"],
            serde_json::json!([[50.0], [-50.0]])
        );
    }
    let policy = &days[0]["policy"];
    assert_eq!(policy["cost"].as_f64(), Some(4.0));
    let bound = policy["performance_bound"].as_f64().unwrap();
    assert!((bound - 10.0 / 6.0).abs() < 1e-12);
    assert!(days[1]["policy"].is_null());
}

#[test]
fn powerflow_solvers_agree_on_a_slot() {
    let cfg = fixture("ieee34/config.json");
    let run = |solver: &str| {
        let out = gridarb(&[
            "powerflow",
            "--config",
            path_str(&cfg),
            "--slot",
            "72",
            "--solver",
            solver,
        ]);
        assert!(out.status.success());
        serde_json::from_slice::<serde_json::Value>(&out.stdout).unwrap()
    };
    let fp = run("fixed-point");
    let nr = run("newton");
    let mags = |v: &serde_json::Value| -> Vec<f64> {
        v["v_mag"]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect()
    };
    let (a, b) = (mags(&fp), mags(&nr));
    assert_eq!(a.len(), 34);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() / y <= 1e-6);
    }
}

#[test]
fn augment_writes_requested_days() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.csv");
    let mut csv = String::from("timestamp,p_node_2,q_node_2,price\n");
    for day in 0..10 {
        for hour in 0..24 {
            let p = 10.0 + hour as f64 + (day * 7 % 5) as f64;
            csv += &format!(
                "2024-03-{:02}T{hour:02}:00:00,{p},{},0.2\n",
                day + 1,
                p / 4.0
            );
        }
    }
    std::fs::write(&input, csv).unwrap();
    let out_path = dir.path().join("aug.csv");
    let args = |fam: &'static str, out: &Path| {
        gridarb(&[
            "augment",
            "--input",
            path_str(&input),
            "--family",
            fam,
            "--days",
            "3",
            "--seed",
            "1",
            "--resolution-minutes",
            "60",
            "--output",
            path_str(out),
        ])
    };
    for fam in ["gmm", "gaussian", "t"] {
        let out = args(fam, &out_path);
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
        let text = std::fs::read_to_string(&out_path).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 24);
        assert_eq!(
            text.lines().next(),
            Some("timestamp,p_node_2,q_node_2,price")
        );
    }
}

#[test]
fn augment_rejects_short_history() {
    let out = gridarb(&[
        "augment",
        "--input",
        path_str(&fixture("toy2/timeseries.csv")),
        "--days",
        "1",
        "--resolution-minutes",
        "60",
    ]);
    assert_eq!(out.status.code(), Some(1));
}
