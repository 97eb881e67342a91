use std::sync::OnceLock;

use proptest::prelude::*;
use vanet_sybil_core::scenario::{
    derive_seeds, mean, parse_config, run_sweep, run_sweep_with, ConfigError, SweepError, SweepResult,
};
use vanet_sybil_core::sim::RoadModel;
use vanet_sybil_core::{run_scenario, Deployment, Mode, PoolConfig, ScenarioConfig};

fn small_pool() -> PoolConfig {
    PoolConfig { vehicles: 40, per_vehicle: 4, w_c: 5, w_f: 9, seed: 3, ..PoolConfig::default() }
}

fn small() -> ScenarioConfig {
    ScenarioConfig { vehicles: 20, attackers: 5, sim_time_s: 300.0, pool: small_pool(), ..ScenarioConfig::default() }
}

fn deployment() -> &'static Deployment {
    static DEP: OnceLock<Deployment> = OnceLock::new();
    DEP.get_or_init(|| Deployment::generate(&small_pool()).unwrap())
}

#[test]
fn empty_object_gives_table_defaults() {
    let cfg = ScenarioConfig::from_json("{}").unwrap();
    assert_eq!(cfg, ScenarioConfig::default());
    assert_eq!(cfg.road.length_m, 300.0);
    assert_eq!(cfg.road.lanes, 2);
    assert_eq!(cfg.road.rsu_positions_m.len(), 4);
    assert_eq!(cfg.sim_time_s, 900.0);
    assert_eq!(cfg.attackers, 5);
    assert_eq!(cfg.speed_threshold_kmh, 40.0);
}

#[test]
fn config_errors_have_distinct_codes() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let codes = [
        parse_config(dir.path().join("absent.json")).unwrap_err(),
        parse_config(write("bad.json", "{\n  \"vehicles\": ,\n}")).unwrap_err(),
        parse_config(write("inv.json", r#"{"attackers": 10, "vehicles": 5}"#)).unwrap_err(),
    ]
    .map(|e| e.code());
    assert_eq!(codes, ["config-missing", "config-malformed", "config-invalid"]);
    match parse_config(write("bad2.json", "{\n  \"vehicles\": ,\n}")).unwrap_err() {
        ConfigError::Malformed { line, .. } => assert_eq!(line, 2),
        e => panic!("{e}"),
    }
    let unknown = ScenarioConfig::from_json(r#"{"vehicels": 5}"#).unwrap_err();
    assert_eq!(unknown.code(), "config-malformed");
    let nested = ScenarioConfig::from_json(r#"{"road": {"lenght_m": 5}}"#).unwrap_err();
    assert_eq!(nested.code(), "config-malformed");
    let gap = ScenarioConfig::from_json(r#"{"road": {"rsu_coverage_radius_m": 10}}"#).unwrap_err();
    assert_eq!(gap.code(), "config-invalid");
}

fn config_strategy() -> impl Strategy<Value = ScenarioConfig> {
    (
        (1u32..4, 50.0f64..400.0, 1usize..6),
        (1.0f64..400.0, 0usize..25, 0usize..6, 0usize..3),
        (1.0f64..120.0, 1.0f64..120.0, prop::sample::select(Mode::ALL.to_vec())),
        (0.5f64..10.0, 1usize..4, 0.2f64..3.0, any::<u64>()),
        (1.0f64..60.0, 1.0f64..30.0, prop_oneof![Just(0.0), 0.0f64..0.9]),
    )
        .prop_map(
            |(
                (lanes, length, n_rsu),
                (sim, vehicles, attackers, forged),
                (speed, thr, mode),
                (tau, l, period, seed),
                (win, re, loss),
            )| {
                let spacing = length / n_rsu as f64;
                let road = RoadModel {
                    length_m: length,
                    lanes,
                    rsu_positions_m: (0..n_rsu).map(|i| spacing * (i as f64 + 0.5)).collect(),
                    rsu_coverage_radius_m: spacing / 2.0 + 1.0,
                };
                ScenarioConfig {
                    road,
                    sim_time_s: sim,
                    vehicles,
                    attackers: attackers.min(vehicles),
                    forged_count: forged,
                    scenario_speed_kmh: speed,
                    speed_threshold_kmh: thr,
                    mode,
                    pool: small_pool(),
                    tau_s: tau,
                    match_length: l,
                    beacon_period_s: period,
                    seed,
                    speed_window_s: win,
                    recheck_period_s: re,
                    packet_loss: loss,
                }
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn config_json_round_trips(cfg in config_strategy()) {
        prop_assert!(cfg.validate().is_ok(), "{:?}", cfg.validate());
        let back = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn accepted_configs_run(cfg in config_strategy()) {
        let parsed = ScenarioConfig::from_json(&cfg.to_json()).unwrap();
        let out = run_scenario(&parsed, "p", parsed.seed, deployment());
        prop_assert!(out.is_ok(), "{:?}", out.err());
        let m = out.unwrap().metrics;
        prop_assert!(m.attackers_detected <= m.attackers_total);
    }
}

#[test]
fn full_sweep_shape_and_aggregation() {
    let seeds = derive_seeds(1, 10);
    let result = run_sweep(&small(), &[20.0, 40.0, 60.0, 80.0], 10, &seeds, deployment()).unwrap();
    assert_eq!(result.runs.len(), 120);
    assert_eq!(result.aggregates.len(), 12);
    for a in &result.aggregates {
        let rates: Vec<f64> =
            result.runs.iter().filter(|r| r.speed_kmh == a.speed_kmh && r.mode == a.mode).map(|r| r.rate_pct).collect();
        assert_eq!(rates.len(), 10);
        assert_eq!(a.rates, rates);
        let oracle = rates.iter().sum::<f64>() / 10.0;
        assert!((a.mean_rate_pct - oracle).abs() < 1e-12);
        for r in &rates {
            assert!((r / 20.0 - (r / 20.0).round()).abs() < 1e-12, "rate {r} not a multiple of 20");
        }
    }
    let csv = result.to_csv();
    assert_eq!(csv.lines().count(), 1 + 120 + 12);
    assert_eq!(SweepResult::from_csv(&csv).unwrap(), result);
    assert_eq!(SweepResult::from_json(&result.to_json()).unwrap(), result);
}

#[test]
fn single_run_sweep_mean_is_that_run() {
    let seeds = derive_seeds(5, 1);
    let r = run_sweep_with(&small(), &[60.0], &[Mode::P2dapOnly], 1, &seeds, deployment(), |_, _| {}).unwrap();
    assert_eq!(r.runs.len(), 1);
    assert_eq!(r.aggregates[0].mean_rate_pct, r.runs[0].rate_pct);
    assert_eq!(mean(&[]), 0.0);
}

#[test]
fn sweep_output_is_stable_across_thread_counts() {
    let seeds = derive_seeds(2, 3);
    let go = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_sweep(&small(), &[20.0, 80.0], 3, &seeds, deployment()).unwrap().to_csv())
    };
    assert_eq!(go(1), go(4));
}

#[test]
fn sweep_errors_carry_context() {
    let seeds = derive_seeds(1, 2);
    assert!(matches!(run_sweep(&small(), &[20.0], 3, &seeds, deployment()), Err(SweepError::Plan(_))));
    assert!(matches!(run_sweep(&small(), &[], 2, &seeds, deployment()), Err(SweepError::Plan(_))));
    match run_sweep(&small(), &[-5.0], 2, &seeds, deployment()) {
        Err(SweepError::Run { speed_kmh, seed, .. }) => {
            assert_eq!(speed_kmh, -5.0);
            assert!(seeds.iter().any(|s| s.seed == seed));
        }
        other => panic!("{other:?}"),
    }
}
