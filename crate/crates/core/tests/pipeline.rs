use std::fs;

use cellfree_core::config::{AntennaMode, BitMode, PowerMode, SweepSpec, Variant};
use cellfree_core::report::{parse_records, RECORDS_FILE};
use cellfree_core::sweep::run_realization;
use cellfree_core::{emit_report, run_sweep, Error, ExperimentConfig, Stage};

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.realizations = 2;
    c.scenario.num_aps = 4;
    c.scenario.num_users = 2;
    c.scenario.num_paths = 3;
    c
}

#[test]
fn config_survives_toml() {
    let c = small();
    let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.hash(), c.hash());
}

#[test]
fn unknown_keys_are_config_errors() {
    let text = small().to_toml() + "\nbogus = 1\n";
    assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
}

#[test]
fn shipped_config_parses() {
    let text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml")).unwrap();
    ExperimentConfig::from_toml(&text).unwrap();
}

#[test]
fn records_round_trip_through_disk() {
    let mut c = small();
    c.optimization.bit_mode = BitMode::Optimize;
    c.sweep = Some(SweepSpec { param: "p_u_dbm".into(), values: vec![10.0, 20.0] });
    let data = run_sweep(&c, Some(2)).unwrap();
    assert!(data.failures.is_empty());
    let dir = tempfile::tempdir().unwrap();
    emit_report(&data, &c, dir.path()).unwrap();
    let parsed = parse_records(fs::File::open(dir.path().join(RECORDS_FILE)).unwrap()).unwrap();
    assert_eq!(parsed, data.records);
}

#[test]
fn full_pipeline_never_loses_efficiency() {
    let mut c = small();
    c.optimization.bit_mode = BitMode::Optimize;
    for id in 0..3 {
        let out = run_realization(&c, &c.optimization, id).unwrap();
        assert!(out.ee_trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9)));
        let last = out.records.last().unwrap();
        assert_eq!(last.stage, Stage::Converged);
        assert!(out.state.bits.iter().all(|&b| (1..=5).contains(&b)));
    }
}

#[test]
fn disabled_stages_leave_state_alone() {
    let mut c = small();
    c.optimization.antenna_mode = AntennaMode::Fixed;
    c.optimization.power_control = PowerMode::Off;
    let out = run_realization(&c, &c.optimization, 0).unwrap();
    assert!(out.state.eta.iter().all(|&e| e == 1.0));
    assert!(out.state.positions.iter().all(|&u| u == 0.0));
    assert!(out.state.bits.iter().all(|&b| b == c.optimization.bits));
    assert!(out.records.iter().all(|r| matches!(r.stage, Stage::Init | Stage::Converged)));
}

#[test]
fn variants_share_realizations() {
    let mut c = small();
    c.variants = vec![
        Variant { name: "fixed".into(), bit_mode: None, antenna_mode: Some(AntennaMode::Fixed), power_control: None },
        Variant { name: "fas".into(), bit_mode: None, antenna_mode: Some(AntennaMode::Fas), power_control: None },
    ];
    let data = run_sweep(&c, Some(1)).unwrap();
    let init = |v: &str| -> Vec<f64> {
        data.records.iter().filter(|r| r.variant == v && r.stage == Stage::Init).map(|r| r.ee).collect()
    };
    assert_eq!(init("fixed"), init("fas"));
}
