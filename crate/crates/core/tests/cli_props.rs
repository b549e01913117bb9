mod common;

use common::*;
use na1lab::cli::{report, to_json, AnalyzeReport, Command, FactorReport, HedgeReport, NumeraireReport, RunConfig, TreeReport};
use na1lab::market::MarketSpec;
use proptest::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data").join(name)
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("na1lab-cli-{}", process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn assert_round_trip<T: Serialize + DeserializeOwned>(text: &str) {
    let back: T = serde_json::from_str(text).unwrap_or_else(|e| panic!("{e}\n{text}"));
    assert_eq!(to_json(&back), text);
}

fn run_bin(args: &[&str]) -> process::Output {
    process::Command::new(env!("CARGO_BIN_EXE_na1lab")).args(args).output().unwrap()
}

#[test]
fn every_report_type_round_trips() {
    let cfg = |c, f: &str| RunConfig::new(c, data(f));
    assert_round_trip::<AnalyzeReport>(&report(&cfg(Command::Analyze, "two_state.json")).unwrap());
    assert_round_trip::<NumeraireReport>(&report(&cfg(Command::Numeraire, "two_state.json")).unwrap());
    assert_round_trip::<HedgeReport>(&report(&cfg(Command::Hedge, "two_state.json")).unwrap());
    assert_round_trip::<TreeReport>(&report(&cfg(Command::Tree, "two_period_tree.json")).unwrap());
    let mut fc = cfg(Command::Factor, "figure1_factor.json");
    fc.output = Some(scratch("factor_rt.json"));
    assert_round_trip::<FactorReport>(&report(&fc).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_analyze_reports_round_trip(seed in any::<u64>()) {
        let m = random_market(seed);
        let mut r = rng(seed);
        let mut spec = serde_json::to_value(MarketSpec::from(m.clone())).unwrap();
        spec["claim"] = serde_json::json!(random_claim(&mut r, m.num_states()));
        let path = scratch(&format!("market_{seed}.json"));
        std::fs::write(&path, spec.to_string()).unwrap();
        let text = report(&RunConfig::new(Command::Analyze, &path)).unwrap();
        let back: AnalyzeReport = serde_json::from_str(&text).unwrap();
        prop_assert_eq!(to_json(&back), text);
        std::fs::remove_file(path).unwrap();
    }
}

#[test]
fn identical_runs_give_identical_bytes() {
    for (cmd, file) in [("analyze", "two_state.json"), ("hedge", "two_state.json"), ("tree", "two_period_tree.json")] {
        let input = data(file);
        let a = run_bin(&["--command", cmd, "--input", input.to_str().unwrap(), "--seed", "7"]);
        let b = run_bin(&["--command", cmd, "--input", input.to_str().unwrap(), "--seed", "7"]);
        assert!(a.status.success());
        assert!(!a.stdout.is_empty());
        assert_eq!(a.stdout, b.stdout, "{cmd}");
    }
}

#[test]
fn exit_codes_follow_the_error_kind() {
    let ok = run_bin(&["--command", "analyze", "--input", data("two_state.json").to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));

    let broken = scratch("broken.json");
    std::fs::write(&broken, "{\n  \"probs\": [0.5, 0.5],\n  \"returns\": [[1.0]\n").unwrap();
    let out = run_bin(&["--command", "analyze", "--input", broken.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("broken.json:"), "{msg}");

    let missing = run_bin(&["--command", "analyze", "--input", "/nonexistent/market.json"]);
    assert_eq!(missing.status.code(), Some(1));

    // Probabilities that do not sum to one.
    let bad = scratch("bad_probs.json");
    std::fs::write(&bad, r#"{"probs": [0.5, 0.6], "returns": [[-0.5], [1.0]]}"#).unwrap();
    let out = run_bin(&["--command", "analyze", "--input", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    // The numeraire does not exist when a scalable arbitrage does.
    let arb = scratch("arb.json");
    std::fs::write(&arb, r#"{"probs": [0.5, 0.5], "returns": [[0.0], [1.0]]}"#).unwrap();
    let out = run_bin(&["--command", "numeraire", "--input", arb.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    let out = run_bin(&["--command", "analyze", "--input", data("two_state.json").to_str().unwrap(), "--tol-lp", "0"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn factor_run_writes_crossing_plot_lines() {
    let out_json = scratch("fig/report.json");
    std::fs::create_dir_all(out_json.parent().unwrap()).unwrap();
    let res = run_bin(&[
        "--command",
        "factor",
        "--input",
        data("figure1_factor.json").to_str().unwrap(),
        "--output",
        out_json.to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(0), "{}", String::from_utf8_lossy(&res.stderr));
    let rep: FactorReport = serde_json::from_str(&std::fs::read_to_string(&out_json).unwrap()).unwrap();
    assert_eq!(rep.max_arbitrage, Some(vec![5.0, -2.5]));
    let csv = std::fs::read_to_string(out_json.with_file_name("arbitrage_line.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "pi1,arbitrage_line,borrowing_line,admissible_upper,admissible_lower");
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 201);
    assert_eq!(rows[0][0], 0.0);
    assert!((rows[200][0] - 6.0).abs() < 1e-12);
    let k = rows.iter().position(|r| r[2] < r[1]).unwrap();
    let (a, b) = (&rows[k - 1], &rows[k]);
    let t = (a[2] - a[1]) / ((a[2] - a[1]) - (b[2] - b[1]));
    let x = a[0] + t * (b[0] - a[0]);
    let y = a[1] + t * (b[1] - a[1]);
    assert!((x - 5.0).abs() < 1e-12 && (y + 2.5).abs() < 1e-12, "({x}, {y})");
}

#[test]
fn two_state_fixture_superhedges_at_three_quarters() {
    let text = report(&RunConfig::new(Command::Analyze, data("two_state.json"))).unwrap();
    let rep: AnalyzeReport = serde_json::from_str(&text).unwrap();
    let sh = rep.superhedge.expect("claim given");
    assert!((sh.primal_value - 0.75).abs() < 1e-12);
    assert!((sh.dual_value - 0.75).abs() < 1e-12);
    assert!(rep.na1.holds());
}
