use std::fs;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_vanet-sybil");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn config_errors_exit_2_with_their_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    let trace = dir.path().join("t.jsonl");
    let summary = dir.path().join("s.json");
    let simulate = |body: &str| {
        fs::write(&cfg, body).unwrap();
        run(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--trace",
            trace.to_str().unwrap(),
            "--summary",
            summary.to_str().unwrap(),
        ])
    };

    let o = simulate("{\n  \"vehicles\": ");
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("error[config-malformed]"), "{}", stderr(&o));

    let o = simulate(r#"{"vehicels": 10}"#);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config-malformed]"), "{}", stderr(&o));

    let o = simulate(r#"{"attackers": 60}"#);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[config-invalid]"), "{}", stderr(&o));

    let o = run(&["gen-pool", "--w-c", "20", "--w-f", "20", "--out", dir.path().join("p.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(!trace.exists());
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let o = run(&["verify-trace", "--trace", missing.to_str().unwrap(), "--pool", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));

    // a pool file that was not generated from the config's pool section
    let pool = dir.path().join("pool.json");
    let o = run(&[
        "gen-pool",
        "--vehicles",
        "4",
        "--per-vehicle",
        "3",
        "--w-c",
        "4",
        "--w-f",
        "6",
        "--out",
        pool.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let cfg = dir.path().join("c.json");
    fs::write(
        &cfg,
        r#"{"vehicles": 4, "attackers": 1, "pool": {"vehicles": 4, "per_vehicle": 3, "w_c": 4, "w_f": 6, "seed": 99}}"#,
    )
    .unwrap();
    let o = run(&[
        "simulate",
        "--config",
        cfg.to_str().unwrap(),
        "--pool",
        pool.to_str().unwrap(),
        "--trace",
        dir.path().join("t.jsonl").to_str().unwrap(),
        "--summary",
        dir.path().join("s.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn small_pool_round_trip_through_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
    let cfg = p("c.json");
    fs::write(
        &cfg,
        r#"{"vehicles": 12, "attackers": 2, "sim_time_s": 300, "pool": {"vehicles": 12, "per_vehicle": 3, "w_c": 4, "w_f": 8, "seed": 5}}"#,
    )
    .unwrap();
    let o = run(&["gen-pool", "--config", &cfg, "--out", &p("pool.json"), "--rsb-out", &p("rsb.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(!fs::read_to_string(p("rsb.json")).unwrap().contains("\"fine\""));

    let o = run(&[
        "simulate",
        "--config",
        &cfg,
        "--pool",
        &p("pool.json"),
        "--trace",
        &p("t.jsonl"),
        "--summary",
        &p("s.json"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(p("s.json")).unwrap()).unwrap();
    assert_eq!(summary["attackers_total"], 2);

    let o = run(&["verify-trace", "--trace", &p("t.jsonl"), "--pool", &p("pool.json")]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("verified, 0 divergences"));
    // the RSB tier cannot adjudicate, so replay stops with a divergence
    let o = run(&["verify-trace", "--trace", &p("t.jsonl"), "--pool", &p("rsb.json")]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));

    let o = run(&[
        "sweep",
        "--config",
        &cfg,
        "--speeds",
        "30,70",
        "--scenarios",
        "2",
        "--modes",
        "hybrid,p2dap-only",
        "--out",
        &p("r.csv"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(p("r.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 2 * 2 + 2 * 2);
}
