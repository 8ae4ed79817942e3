use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use clap::Parser;
use satde_cli::{parse_config, Args, CliError};
use serde_json::Value;

fn satde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_satde"))
        .args(args)
        .env_remove("SATDE_GRID_DELTA")
        .output()
        .expect("binary runs")
}

fn parse(args: &[&str]) -> Result<satde_cli::RunConfig, CliError> {
    let mut full = vec!["satde"];
    full.extend_from_slice(args);
    parse_config(&Args::try_parse_from(full).unwrap())
}

fn config_line(csv: &str) -> Value {
    let first = csv.lines().next().unwrap();
    let json = first.strip_prefix("# schema_version=1 config=").expect("schema comment");
    serde_json::from_str(json).unwrap()
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn regular_ensemble_shorthand() {
    let cfg = parse(&["de-run", "--ensemble", "3,6", "--channel", "BSC:0.05"]).unwrap();
    let ens = cfg.ensemble.unwrap();
    assert_eq!(ens.regular_pair(), Some((3, 6)));
    assert_eq!(ens.rho_prime_one(), 5.0);
}

#[test]
fn ensemble_from_coefficients() {
    let cfg = parse(&[
        "de-run",
        "--ensemble",
        r#"{"lambda":[0,0.5,0.5],"rho":[0,0,0,0,0,1]}"#,
        "--channel",
        "BEC:0.3",
    ])
    .unwrap();
    let ens = cfg.ensemble.unwrap();
    assert_eq!(ens.lambda_of_degree(2), 0.5);
    assert_eq!(ens.lambda_of_degree(3), 0.5);
}

#[test]
fn saturation_level_must_sit_on_the_grid() {
    let ok = parse(&["de-run", "--ensemble", "3,6", "--channel", "BSC:0.05", "--mode", "sat", "--K", "20", "--grid", "0.0625"]);
    assert_eq!(ok.unwrap().k, Some(20.0));
    let err = parse(&["de-run", "--ensemble", "3,6", "--channel", "BSC:0.05", "--mode", "sat", "--K", "20.03"]).unwrap_err();
    assert!(matches!(&err, CliError::Config { field, .. } if field == "K"), "{err}");
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn malformed_inputs_name_their_field() {
    for (args, field) in [
        (vec!["de-run", "--ensemble", "3;6", "--channel", "BSC:0.05"], "ensemble"),
        (vec!["de-run", "--ensemble", "3,6", "--channel", "XYZ:0.05"], "channel"),
        (vec!["de-run", "--ensemble", "3,6", "--channel", "BSC:0.05", "--mode", "sat"], "K"),
        (vec!["mc", "--ensemble", "3,6", "--channel", "BSC:0.05", "--K", "8", "--n", "101"], "n"),
        (vec!["threshold", "--ensemble", "3,6", "--family", "BEC", "--format", "csv"], "format"),
        (vec!["de-run", "--ensemble", "3,6", "--channel", "BSC:0.05", "--grid", "0"], "grid_delta"),
    ] {
        match parse(&args) {
            Err(CliError::Config { field: f, .. }) => assert_eq!(f, field, "{args:?}"),
            other => panic!("{args:?}: expected a `{field}` error, got {other:?}"),
        }
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = satde(&["de-run", "--bogus", "1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_config_exits_with_validation_code() {
    let out = satde(&["de-run", "--ensemble", "3,6", "--channel", "BSC:0.05", "--mode", "sat", "--K", "3.3"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.contains("`K`"));
}

#[test]
fn de_run_writes_trace_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("trace.csv");
    let status = satde(&[
        "de-run", "--ensemble", "3,6", "--channel", "BSC:0.07", "--mode", "symsat", "--K", "20", "--out", path_str(&out),
    ]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# schema_version=1 config="));
    assert_eq!(lines.next(), Some("iter,B,E,H,wasserstein_step"));
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first[0], "1");
    assert!((first[2].parse::<f64>().unwrap() - 0.07).abs() < 1e-12);
    assert_eq!(config_line(&text)["mode"], "symsat");
    // nothing else is written next to the output
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn echoed_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ber.csv");
    let args = [
        "mc", "--ensemble", "3,6", "--n", "600", "--channel", "BSC:0.04", "--K", "20", "--iters", "6", "--trials", "3",
        "--seed", "7", "--out", path_str(&out),
    ];
    assert!(satde(&args).status.success());
    let first = fs::read(&out).unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, config_line(std::str::from_utf8(&first).unwrap()).to_string()).unwrap();
    fs::remove_file(&out).unwrap();
    assert!(satde(&["--config", path_str(&cfg_path)]).status.success());
    assert_eq!(fs::read(&out).unwrap(), first);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(
        &cfg_path,
        r#"{"command":"de-run","ensemble":"3,6","channel":{"family":"BSC","param":0.05},"mode":"sat","K":10.0,"iters":40}"#,
    )
    .unwrap();
    let cfg = parse(&["--config", path_str(&cfg_path), "--K", "12"]).unwrap();
    assert_eq!(cfg.k, Some(12.0));
    assert_eq!(cfg.iters, 40);
    assert_eq!(cfg.channel.unwrap().param, 0.05);
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, r#"{"command":"de-run","colour":"blue"}"#).unwrap();
    let err = parse(&["--config", path_str(&cfg_path)]).unwrap_err();
    assert!(matches!(&err, CliError::Config { field, .. } if field == "config"), "{err}");
}

#[test]
fn grid_spacing_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w.json");
    let run = |extra: &[&str]| {
        let mut args = vec!["wasserstein", "--channel", "BIAWGN:0.8", "--K", "4", "--out", path_str(&out)];
        args.extend_from_slice(extra);
        let status = Command::new(env!("CARGO_BIN_EXE_satde"))
            .args(&args)
            .env("SATDE_GRID_DELTA", "0.125")
            .output()
            .unwrap()
            .status;
        assert!(status.success());
        let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
        doc["config"]["grid_delta"].as_f64().unwrap()
    };
    assert_eq!(run(&[]), 0.125);
    assert_eq!(run(&["--grid", "0.0625"]), 0.0625);
}

#[test]
fn threshold_json_records_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("thr.json");
    let status = satde(&[
        "threshold", "--family", "BEC", "--ensemble", "3,6", "--mode", "bp", "--tol", "1e-3", "--out", path_str(&out),
    ]);
    assert_eq!(status.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(doc["schema_version"], 1);
    let r = &doc["result"];
    assert!((r["threshold"].as_f64().unwrap() - 0.4294).abs() < 1e-3);
    assert_eq!(r["grid_spacing"], 0.0625);
    assert_eq!(r["support_bound"], 64.0);
}

#[test]
fn stability_report_has_verdict_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("stability.json");
    let status = satde(&[
        "stability", "--ensemble", "3,6", "--channel", "BSC:0.02", "--K", "30", "--iters", "20", "--report", path_str(&out),
    ]);
    assert_eq!(status.status.code(), Some(0));
    let doc: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    let r = &doc["result"];
    assert_eq!(r["verdict"]["regime"], "stable_deg3plus");
    assert!(r["verdict"]["constants"]["C_const"].is_number());
    assert_eq!(r["inequalities"]["rows"].as_array().unwrap().len(), 20);
    assert!(r["K0"].is_number());
}

#[test]
fn compare_emits_paired_series() {
    let out = satde(&[
        "compare", "--ensemble", "3,6", "--n", "600", "--channel", "BSC:0.05", "--K", "3", "--iters", "4", "--trials", "2",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().nth(1), Some("iter,plain,symmetrized,ratio,flips"));
    assert_eq!(text.lines().count(), 6);
}
