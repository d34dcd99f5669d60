use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures")
        .join(name)
}

fn handover(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_handover"));
    for var in ["HANDOVER_MODE", "HANDOVER_OUT", "HANDOVER_SCENARIO", "HANDOVER_SEED", "HANDOVER_LOG", "HANDOVER_FORMAT"] {
        cmd.env_remove(var);
    }
    cmd.args(args).envs(env.iter().copied()).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn read(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn run_succeeds_and_writes_a_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.json");
    let scenario = fixture("stationary_hand_mug_drink.toml");
    let res = handover(&["run", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let log = read(&out);
    assert!(log.contains("\"terminal_state\": \"Done\""));
    assert!(log.contains("\"mode\": \"Adaptive\""));
}

#[test]
fn infeasible_run_exits_with_one() {
    let scenario = fixture("unreachable_hand.toml");
    let res = handover(&["run", "--scenario", scenario.to_str().unwrap()], &[]);
    assert_eq!(code(&res), 1);
    assert!(String::from_utf8_lossy(&res.stdout).contains("\"terminal_state\": \"Fault\""));
}

#[test]
fn configuration_errors_exit_with_two() {
    let scenario = fixture("stationary_hand_mug_drink.toml");
    let s = scenario.to_str().unwrap();
    assert_eq!(code(&handover(&["run"], &[])), 2);
    assert_eq!(code(&handover(&["run", "--scenario", "/nonexistent.toml"], &[])), 2);
    assert_eq!(code(&handover(&["run", "--scenario", s, "--mode", "sideways"], &[])), 2);
    assert_eq!(code(&handover(&["validate-config", "--scenario", s, "--override", "planner.alpha_s=-1"], &[])), 2);
    assert_eq!(code(&handover(&["validate-config", "--scenario", s, "--override", "no_equals_sign"], &[])), 2);
}

#[test]
fn validate_config_reports_the_digest() {
    let scenario = fixture("stationary_hand_mug_drink.toml");
    let s = scenario.to_str().unwrap();
    let a = handover(&["validate-config", "--scenario", s], &[]);
    let b = handover(&["validate-config", "--scenario", s, "--seed", "99"], &[]);
    assert_eq!(code(&a), 0);
    assert_eq!(code(&b), 0);
    let (a, b) = (String::from_utf8_lossy(&a.stdout), String::from_utf8_lossy(&b.stdout));
    assert!(a.starts_with("ok: stationary_hand_mug_drink task=MugDrink"));
    assert_ne!(a, b);
}

#[test]
fn environment_supplies_defaults_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture("stationary_hand_mug_drink.toml");
    let env_out = dir.path().join("env.json");
    let res = handover(
        &["run"],
        &[
            ("HANDOVER_SCENARIO", scenario.to_str().unwrap()),
            ("HANDOVER_MODE", "static"),
            ("HANDOVER_OUT", env_out.to_str().unwrap()),
        ],
    );
    assert_eq!(code(&res), 0);
    assert!(read(&env_out).contains("\"mode\": \"Static\""));

    let flag_out = dir.path().join("flag.json");
    let res = handover(
        &["run", "--mode", "adaptive", "--out", flag_out.to_str().unwrap()],
        &[
            ("HANDOVER_SCENARIO", scenario.to_str().unwrap()),
            ("HANDOVER_MODE", "static"),
            ("HANDOVER_OUT", env_out.to_str().unwrap()),
        ],
    );
    assert_eq!(code(&res), 0);
    assert!(read(&flag_out).contains("\"mode\": \"Adaptive\""));
}

#[test]
fn compare_prints_both_modes() {
    let scenario = fixture("step_moving_hand.toml");
    let res = handover(&["compare", "--scenario", scenario.to_str().unwrap()], &[]);
    assert_eq!(code(&res), 0);
    let text = String::from_utf8_lossy(&res.stdout);
    assert!(text.contains("adaptive") && text.contains("static"), "{text}");
    assert!(text.contains("n_replans"));
    let res = handover(&["compare", "--scenario", scenario.to_str().unwrap(), "--json"], &[]);
    assert!(String::from_utf8_lossy(&res.stdout).contains("\"static\""));
}

#[test]
fn export_from_scenario_and_from_log_agree() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture("stationary_hand_mug_drink.toml");
    let s = scenario.to_str().unwrap();
    let log = dir.path().join("run.json");
    let direct = dir.path().join("direct.csv");
    let replayed = dir.path().join("replayed.csv");
    assert_eq!(code(&handover(&["run", "--scenario", s, "--out", log.to_str().unwrap()], &[])), 0);
    assert_eq!(code(&handover(&["export", "--scenario", s, "--out", direct.to_str().unwrap()], &[])), 0);
    assert_eq!(
        code(&handover(&["export", "--log", log.to_str().unwrap(), "--out", replayed.to_str().unwrap()], &[])),
        0
    );
    let a = read(&direct);
    assert_eq!(a, read(&replayed));
    assert!(a.starts_with("t,s,x,y,z,qw,qx,qy,qz,speed,jerk_norm,state\n"));
    assert!(a.lines().count() > 10);

    let as_json = dir.path().join("samples.json");
    assert_eq!(code(&handover(&["export", "--log", log.to_str().unwrap(), "--out", as_json.to_str().unwrap()], &[])), 0);
    assert!(read(&as_json).trim_start().starts_with('['));
}

#[test]
fn export_of_a_faulted_run_is_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = fixture("unreachable_hand.toml");
    let out = dir.path().join("fault.csv");
    let res = handover(&["export", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()], &[]);
    assert_eq!(code(&res), 0);
    assert_eq!(read(&out).lines().count(), 1);
}
