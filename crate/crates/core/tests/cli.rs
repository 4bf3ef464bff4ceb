use std::path::Path;
use std::process::Command;

use mixtraffic::harness::Scenario;

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mixtraffic"))
}

fn write_short_scenario(dir: &Path) -> std::path::PathBuf {
    let mut sc = Scenario::default();
    sc.horizon_h = 0.25;
    let path = dir.join("short.toml");
    std::fs::write(&path, sc.to_toml_string()).unwrap();
    path
}

#[test]
fn estimate_writes_trajectory_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_short_scenario(dir.path());
    let out = dir.path().join("out");
    let status = cli()
        .args(["estimate", "-s"])
        .arg(&sc)
        .arg("-o")
        .arg(&out)
        .output()
        .unwrap();
    assert!(
        status.status.success(),
        "{}",
        String::from_utf8_lossy(&status.stderr)
    );
    assert!(String::from_utf8_lossy(&status.stdout).starts_with("P_R="));

    let traj = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    let header = traj.lines().next().unwrap();
    assert_eq!(
        header,
        "step,segment,rho,rho_a,v,q,q_a,rho_hat,q_hat,p_bar_hat,innovation"
    );
    assert_eq!(traj.lines().count(), 1 + 91 * 20);
    let metrics = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with("p_r,"));
}

#[test]
fn simulate_sweep_and_observability_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let sc = write_short_scenario(dir.path());
    let out = dir.path().join("out");
    for cmd in [
        &["simulate"][..],
        &["sweep", "--sigmas", "0.1,10"][..],
        &["observability"][..],
    ] {
        let res = cli()
            .args(cmd)
            .arg("-s")
            .arg(&sc)
            .arg("-o")
            .arg(&out)
            .output()
            .unwrap();
        assert!(
            res.status.success(),
            "{cmd:?}: {}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    assert_eq!(
        std::fs::read_to_string(out.join("truth.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 91 * 20
    );
    assert_eq!(
        std::fs::read_to_string(out.join("sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    assert_eq!(
        std::fs::read_to_string(out.join("observability.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 90 - 19 + 1
    );
}

#[test]
fn invalid_scenario_reports_json_and_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = Scenario::default();
    sc.filter.r = -1.0;
    sc.ramps.exit_rate[0] = 1.5;
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, sc.to_toml_string()).unwrap();

    let res = cli()
        .args(["estimate", "-s"])
        .arg(&path)
        .arg("-o")
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["error"], "validation");
    let paths: Vec<&str> = err["issues"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["path"].as_str().unwrap())
        .collect();
    assert!(paths.contains(&"filter.r"), "{paths:?}");
    assert!(paths.contains(&"ramps"), "{paths:?}");
}

#[test]
fn unparsable_scenario_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.toml");
    std::fs::write(&path, "horizon_h = \"three\"\n").unwrap();
    let res = cli().args(["simulate", "-s"]).arg(&path).output().unwrap();
    assert_eq!(res.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["error"], "parse");
}

#[test]
fn default_scenario_command_round_trips() {
    let res = cli().arg("default-scenario").output().unwrap();
    assert!(res.status.success());
    let sc = Scenario::from_toml_str(&String::from_utf8(res.stdout).unwrap()).unwrap();
    assert_eq!(sc, Scenario::default());
}
