use std::io::{BufRead, BufReader};
use std::path::PathBuf;
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use cppvcg::consensus::{run_consensus, BestResponseConfig, ConsensusConfig, LocalPool};
use cppvcg::protocol::RemotePool;
use cppvcg::scenario::load_scenario;

fn toy_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios/toy.scn")
}

fn cppvcg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cppvcg")).args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

#[test]
fn toy_report_tables() {
    let out = cppvcg(&["run", "--scenario", toy_path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    for needle in ["$220.00", "$610.00", "$830.00", "$710.00", "$120.00", "14.46%", "$80.00", "$70.00", "$50.00"] {
        assert!(text.contains(needle), "missing {needle} in\n{text}");
    }
    assert!(text.contains("supplier chooses plan 3 (10.00, 90.00) at fee $80.00"), "{text}");
    assert!(text.contains("Rolling horizon"));
}

#[test]
fn jit_only_omits_the_rest() {
    let out = cppvcg(&["run", "--scenario", toy_path().to_str().unwrap(), "--analyses", "jit"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("JIT") && !text.contains("First best") && !text.contains("VCG") && !text.contains("Menu"));
}

#[test]
fn json_report_is_deterministic_and_complete() {
    let toy = toy_path();
    let args = ["run", "--scenario", toy.to_str().unwrap(), "--mode", "cpp", "--json", "-"];
    let (a, b) = (cppvcg(&args), cppvcg(&args));
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let report: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
    assert_eq!(report["mode"], "cpp");
    let plan = report["first_best"]["plan"].as_array().unwrap();
    assert!((plan[0].as_f64().unwrap() - 10.0).abs() < 0.05 && (plan[1].as_f64().unwrap() - 90.0).abs() < 0.05);
    assert!(report["vcg"]["settlement"]["transfer_supplier"].is_f64());
}

#[test]
fn alpha_flag_overrides_the_fee() {
    let out = cppvcg(&["run", "--scenario", toy_path().to_str().unwrap(), "--analyses", "vcg", "--alpha", "20", "--json", "-"]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["vcg"]["settlement"]["transfer_supplier"].as_f64().unwrap(), 50.0);
}

#[test]
fn protocol_mode_with_trace() {
    let out = cppvcg(&["run", "--scenario", toy_path().to_str().unwrap(), "--mode", "protocol", "--analyses", "firstbest,menu", "--trace"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let trace = String::from_utf8(out.stderr.clone()).unwrap();
    assert!(trace.lines().filter(|l| l.starts_with("iter")).count() > 10);
    assert!(stdout(&out).contains("supplier chooses plan 3"));
}

#[test]
fn failures_exit_nonzero() {
    let toy = toy_path();
    let toy = toy.to_str().unwrap();
    for args in [
        vec!["run", "--scenario", toy, "--analyses", "jit,fees"],
        vec!["run", "--scenario", "/nonexistent/toy.scn"],
        vec!["run"],
        vec!["run", "--scenario", toy, "--seed", "3"],
    ] {
        let out = cppvcg(&args);
        assert!(!out.status.success(), "{args:?} succeeded");
    }
    let dir = std::env::temp_dir().join(format!("cppvcg-cli-bad-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let bad = dir.join("bad.scn");
    std::fs::write(&bad, std::fs::read_to_string(toy_path()).unwrap().replace("demand =", "demands =")).unwrap();
    let out = cppvcg(&["run", "--scenario", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("retailer"));
    std::fs::remove_dir_all(dir).unwrap();
}

#[test]
fn generated_scenarios_run() {
    let dir = std::env::temp_dir().join(format!("cppvcg-cli-gen-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("random.scn");
    assert!(cppvcg(&["generate", "--seed", "17", "--out", path.to_str().unwrap()]).status.success());
    let out = cppvcg(&["run", "--scenario", path.to_str().unwrap(), "--json", "-"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let by_seed = cppvcg(&["run", "--seed", "17", "--json", "-"]);
    assert_eq!(out.stdout, by_seed.stdout);
    std::fs::remove_dir_all(dir).unwrap();
}

fn spawn_server(role: &str, via_env: bool) -> (std::process::Child, String) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cppvcg"));
    cmd.args(["serve", "--scenario", toy_path().to_str().unwrap(), "--role", role]);
    if via_env {
        cmd.env("CPPVCG_LISTEN", "127.0.0.1:0");
    } else {
        cmd.args(["--listen", "127.0.0.1:0"]);
    }
    let mut child = cmd.stderr(Stdio::piped()).spawn().unwrap();
    let mut line = String::new();
    BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on ").expect("address line").to_string();
    (child, addr)
}

#[test]
fn served_agents_reproduce_local_consensus() {
    let (mut retailer, ra) = spawn_server("retailer", false);
    let (mut supplier, sa) = spawn_server("supplier", true);
    let scenario = load_scenario(&toy_path()).unwrap();
    let config = ConsensusConfig::default();
    let mut remote = RemotePool::connect(&[ra, sa], 2, Duration::from_secs(30)).unwrap();
    let wire = run_consensus(&mut remote, &config, Some(&[40.0, 60.0])).unwrap();
    remote.close().unwrap();
    let mut local =
        LocalPool::new(vec![Box::new(&scenario.retailer), Box::new(&scenario.supplier)], BestResponseConfig::default())
            .unwrap();
    let here = run_consensus(&mut local, &config, Some(&[40.0, 60.0])).unwrap();
    assert_eq!(wire.iterations, here.iterations);
    assert_eq!(wire.plan, here.plan);
    assert!(retailer.wait().unwrap().success());
    assert!(supplier.wait().unwrap().success());
}
