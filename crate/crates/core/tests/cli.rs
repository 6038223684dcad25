use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_aloha-sr");

const TWO_NODE: &str = r#"{
  "network": { "n": 2, "p": [0.5, 0.5], "r": 2.0, "K": 0 },
  "arrivals": [ { "bernoulli": 0.1 }, { "bernoulli": 0.1 } ],
  "sweep": { "delta_lambda": 0.05 },
  "simulation": { "horizon": 20000, "warmup": 1000, "replications": 2 }
}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .unwrap()
}

fn setup(config: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("cfg.json"), config).unwrap();
    dir
}

#[test]
fn region_writes_csv_with_manifest() {
    let dir = setup(TWO_NODE);
    let out = run(dir.path(), &["region", "--config", "cfg.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("o/boundary_node1.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# manifest: {"));
    assert_eq!(lines.next().unwrap(), "lambda_2,lambda_1_sr,feasible");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first, ["0", "0.5", "true"]);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("o/region.json")).unwrap()).unwrap();
    assert_eq!(json["manifest"]["timestamp"], 1700000000);
    assert_eq!(json["manifest"]["subcommand"], "region");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup(TWO_NODE);
    let files = ["region.json", "boundary_node1.csv", "boundary_node2.csv"];
    run(dir.path(), &["region", "--config", "cfg.json", "--out", "o"]);
    let first: Vec<Vec<u8>> = files.iter().map(|f| fs::read(dir.path().join("o").join(f)).unwrap()).collect();
    run(dir.path(), &["region", "--config", "cfg.json", "--out", "o"]);
    for (f, bytes) in files.iter().zip(&first) {
        assert_eq!(&fs::read(dir.path().join("o").join(f)).unwrap(), bytes, "{f}");
    }

    run(dir.path(), &["simulate", "--config", "cfg.json", "--out", "s", "--seed", "9"]);
    let a = fs::read(dir.path().join("s/simulation.json")).unwrap();
    run(dir.path(), &["simulate", "--config", "cfg.json", "--out", "s", "--seed", "9"]);
    assert_eq!(fs::read(dir.path().join("s/simulation.json")).unwrap(), a);
}

#[test]
fn verify_passes_and_perturbation_is_located() {
    let dir = setup(TWO_NODE);
    let ok = run(dir.path(), &["verify", "--config", "cfg.json", "--out", "v"]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let stdout = String::from_utf8_lossy(&ok.stdout);
    assert!(stdout.contains("PASS two-node closed form"));
    assert!(stdout.contains("PASS kronecker"));

    let bad = run(dir.path(), &["verify", "--config", "cfg.json", "--out", "v", "--perturb", "1e-6"]);
    assert_eq!(bad.status.code(), Some(4));
    let stdout = String::from_utf8_lossy(&bad.stdout);
    assert!(stdout.contains("FAIL kronecker node 1"), "{stdout}");
    assert!(stdout.contains("at extended phase ("), "{stdout}");
}

#[test]
fn invalid_configs_exit_2() {
    let dir = setup(r#"{ "network": { "n": 3, "p": [0.5, 0.5], "r": 2.0, "K": 0 } }"#);
    let out = run(dir.path(), &["region", "--config", "cfg.json", "--out", "o"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("network.p has 2 entries"));

    let dir = setup(r#"{ "network": { "n": 2, "p": [0.5, 1.5], "r": 2.0, "K": 0 } }"#);
    assert_eq!(run(dir.path(), &["region", "--config", "cfg.json"]).status.code(), Some(2));

    let dir = setup(r#"{ "network": { "n": 2, "p": [0.5, 0.5], "r": 2.0, "K": 0, "extra": 1 } }"#);
    assert_eq!(run(dir.path(), &["region", "--config", "cfg.json"]).status.code(), Some(2));

    let dir = setup(TWO_NODE);
    let out = run(dir.path(), &["metrics", "--config", "cfg.json", "--sweep", "3:1:0.5"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn metrics_sweep_writes_curve() {
    let dir = setup(TWO_NODE);
    let out = run(
        dir.path(),
        &["metrics", "--config", "cfg.json", "--out", "m", "--metric", "throughput", "--sweep", "1:2:0.5"],
    );
    assert_eq!(out.status.code(), Some(0));
    let csv = fs::read_to_string(dir.path().join("m/metrics.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows[0], "r,throughput");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("1,0.5"));
}

#[test]
fn simulated_boundary_csv() {
    let cfg = r#"{
      "network": { "n": 2, "p": [0.5, 0.5], "r": 2.0, "K": 0 },
      "arrivals": [ { "bernoulli": 0.1 }, { "bernoulli": 0.1 } ],
      "simulation": { "horizon": 100000, "warmup": 5000, "replications": 2,
                      "boundary_resolution": 0.01, "boundary_points": [[0.1], [0.2]] }
    }"#;
    let dir = setup(cfg);
    let out = run(dir.path(), &["simulate", "--config", "cfg.json", "--out", "b", "--boundary", "2"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("b/empirical_boundary_node2.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("lambda_1,lambda_max,"));
    for row in &lines[2..] {
        let f: Vec<f64> = row.split(',').filter_map(|x| x.parse().ok()).collect();
        // lambda_1, lambda_max, ..., analytic, relative error
        assert!((f[1] - f[f.len() - 2]).abs() < 0.05, "{row}");
    }
}
