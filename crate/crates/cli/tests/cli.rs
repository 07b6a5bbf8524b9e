use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn arbitrage(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arbitrage"))
        .args(args)
        .env_remove("ARBITRAGE_PRICE_SHEET")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_records(path: &Path, records: &[Value]) {
    let text: String = records.iter().map(|r| format!("{r}\n")).collect();
    fs::write(path, text).unwrap();
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

/// Two actions with Primary gap `gap`; the Guardian prefers the runner-up,
/// so the loss is 1 until the threshold reaches the gap.
fn step_record(id: &str, gap: f64) -> Value {
    json!({
        "id": id,
        "actions": ["a", "b"],
        "primary_scores": [0.5 + gap / 2.0, 0.5 - gap / 2.0],
        "guardian_scores": [0.0, 1.0],
    })
}

fn step_file(dir: &Path) -> PathBuf {
    let path = dir.join("step.jsonl");
    let recs: Vec<Value> = [0.2, 0.4, 0.6, 0.8]
        .iter()
        .enumerate()
        .map(|(i, g)| step_record(&format!("s{i}"), *g))
        .collect();
    write_records(&path, &recs);
    path
}

const FIFTH_GRID: [&str; 6] = ["--grid-start", "0", "--grid-step", "0.2", "--grid-count", "6"];

#[test]
fn calibrate_step_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let records = step_file(dir.path());
    let out_path = dir.path().join("calib.json");
    let mut args = vec!["calibrate", "--records", p(&records), "--alpha", "0.5", "--out", p(&out_path)];
    args.extend(FIFTH_GRID);
    let out = arbitrage(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&out_path);
    assert!((report["lambda_hat"].as_f64().unwrap() - 0.6).abs() < 1e-12);
    assert_eq!(report["feasible"], json!(true));
    let risks: Vec<f64> = report["risk_curve"]
        .as_array()
        .unwrap()
        .iter()
        .map(|pt| pt[1].as_f64().unwrap())
        .collect();
    assert_eq!(risks, vec![1.0, 0.75, 0.5, 0.25, 0.0, 0.0]);

    let manifest = read_json(&dir.path().join("calib.json.manifest.json"));
    assert_eq!(manifest["command"], json!("calibrate"));
    let digest = manifest["inputs"][0]["sha256"].as_str().unwrap();
    assert_eq!(digest.len(), 64);
}

#[test]
fn calibrate_budget_below_minimum_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let records = step_file(dir.path());
    let out_path = dir.path().join("calib.json");
    // B/(n+1) = 0.2 > 0.1
    let out = arbitrage(&["calibrate", "--records", p(&records), "--alpha", "0.1", "--out", p(&out_path)]);
    assert_eq!(code(&out), 3);
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
}

#[test]
fn calibrate_short_grid_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let records = step_file(dir.path());
    let out_path = dir.path().join("calib.json");
    let args = [
        "calibrate", "--records", p(&records), "--alpha", "0.5", "--out", p(&out_path),
        "--grid-step", "0.2", "--grid-count", "2",
    ];
    let out = arbitrage(&args);
    assert_eq!(code(&out), 3);
    assert_eq!(read_json(&out_path)["feasible"], json!(false));
}

#[test]
fn calibrate_zero_loss_fits_grid_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("agree.jsonl");
    let recs: Vec<Value> = (0..20)
        .map(|i| {
            json!({
                "id": format!("z{i}"),
                "actions": ["a", "b", "c"],
                "primary_scores": [0.5, 0.25, 0.25],
                "guardian_scores": [0.75, 0.125, 0.125],
            })
        })
        .collect();
    write_records(&path, &recs);
    let out_path = dir.path().join("calib.json");
    let out = arbitrage(&["calibrate", "--records", p(&path), "--alpha", "0.1", "--out", p(&out_path)]);
    assert_eq!(code(&out), 0);
    assert_eq!(read_json(&out_path)["lambda_hat"].as_f64().unwrap(), 0.0);
}

#[test]
fn invalid_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    fs::write(&bad, "{\"id\": \"x\", \"actions\": [\"a\"]}\n").unwrap();
    let out_path = dir.path().join("o.json");
    let out = arbitrage(&["calibrate", "--records", p(&bad), "--alpha", "0.3", "--out", p(&out_path)]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("primary_scores"));

    let missing = dir.path().join("missing.jsonl");
    let out = arbitrage(&["calibrate", "--records", p(&missing), "--alpha", "0.3", "--out", p(&out_path)]);
    assert_eq!(code(&out), 2);

    assert_eq!(code(&arbitrage(&["calibrate", "--alpha", "x"])), 2);
    let records = step_file(dir.path());
    let out = arbitrage(&["calibrate", "--records", p(&records), "--alpha", "1.5", "--out", p(&out_path)]);
    assert_eq!(code(&out), 2);
}

/// Records with binary-exact normalised scores, unique Primary argmax and
/// token counts.
fn routing_fixture() -> Vec<Value> {
    let rows: [(&[f64], &[f64]); 8] = [
        (&[0.5, 0.25, 0.25], &[0.125, 0.25, 0.625]),
        (&[0.75, 0.125, 0.125], &[0.25, 0.5, 0.25]),
        (&[0.375, 0.3125, 0.3125], &[0.25, 0.25, 0.5]),
        (&[0.625, 0.375], &[0.5, 0.5]),
        (&[0.5625, 0.4375], &[0.125, 0.875]),
        (&[0.25, 0.125, 0.5, 0.125], &[0.5, 0.25, 0.125, 0.125]),
        (&[0.4375, 0.3125, 0.25], &[0.0, 0.25, 0.75]),
        (&[0.875, 0.0625, 0.0625], &[0.0625, 0.0625, 0.875]),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, (pr, gu))| {
            let k = pr.len();
            json!({
                "id": format!("r{i}"),
                "actions": (0..k).map(|a| format!("act{a}")).collect::<Vec<_>>(),
                "primary_scores": pr,
                "guardian_scores": gu,
                "tokens": {
                    "primary_in": 100 + 10 * i as u64,
                    "primary_out": 20 + i as u64,
                    "guardian_in": 110 + 10 * i as u64,
                    "guardian_out": 30 + 2 * i as u64,
                    "full_in": 101 + 7 * i as u64,
                },
            })
        })
        .collect()
}

const PRICES: &str = "primary_in_price = 1e-6\nprimary_out_price = 2e-6\nguardian_in_price = 1.5e-5\nguardian_out_price = 6e-5\n";

/// Hand routing: candidates within `lambda` of the top Primary score; the
/// Guardian picks its best candidate (lowest index on ties) when more than
/// one remains. Costs in pico-dollars.
fn hand_route(rec: &Value, lambda: f64) -> (usize, &'static str, usize, u128) {
    let pr: Vec<f64> = rec["primary_scores"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let gu: Vec<f64> = rec["guardian_scores"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    let top = pr.iter().cloned().fold(f64::MIN, f64::max);
    let cands: Vec<usize> = (0..pr.len()).filter(|&a| top - pr[a] <= lambda).collect();
    let t = |k: &str| rec["tokens"][k].as_u64().unwrap() as u128;
    let mut cost = t("primary_in") * 1_000_000 + t("primary_out") * 2_000_000;
    if cands.len() == 1 {
        return (cands[0], "primary", 1, cost);
    }
    let mut best = cands[0];
    for &a in &cands {
        if gu[a] > gu[best] {
            best = a;
        }
    }
    let n_act = pr.len() as u128;
    let prompt = t("full_in") * (n_act + cands.len() as u128) / (2 * n_act);
    cost += prompt * 15_000_000 + t("guardian_out") * 60_000_000;
    (best, "guardian", cands.len(), cost)
}

fn route(dir: &Path, records: &Path, lambda: &str, prices: Option<&Path>) -> Vec<Value> {
    let out_path = dir.join(format!("decisions-{lambda}.jsonl"));
    let mut args = vec!["route", "--records", p(records), "--lambda", lambda, "--out", p(&out_path)];
    if let Some(ps) = prices {
        args.extend(["--price-sheet", p(ps)]);
    }
    let out = arbitrage(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join(format!("decisions-{lambda}.jsonl.manifest.json")).exists());
    fs::read_to_string(&out_path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn route_extremes() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.jsonl");
    write_records(&records, &routing_fixture());
    let at_zero = route(dir.path(), &records, "0", None);
    assert_eq!(at_zero.len(), 8);
    assert!(at_zero.iter().all(|d| d["actor"] == json!("primary") && d["candidate_count"] == json!(1)));
    assert!(at_zero.iter().all(|d| d.get("cost").is_none()));
    let at_one = route(dir.path(), &records, "1", None);
    assert!(at_one.iter().all(|d| d["actor"] == json!("guardian")));
}

#[test]
fn route_matches_hand_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let fixture = routing_fixture();
    let records = dir.path().join("r.jsonl");
    write_records(&records, &fixture);
    let prices = dir.path().join("prices.toml");
    fs::write(&prices, PRICES).unwrap();
    for lambda in ["0.0625", "0.15", "0.3", "0.5"] {
        let got = route(dir.path(), &records, lambda, Some(&prices));
        for (rec, d) in fixture.iter().zip(&got) {
            let (index, actor, count, picos) = hand_route(rec, lambda.parse().unwrap());
            assert_eq!(d["id"], rec["id"]);
            assert_eq!(d["chosen_index"].as_u64().unwrap() as usize, index, "{lambda} {}", rec["id"]);
            assert_eq!(d["chosen_action"], json!(format!("act{index}")));
            assert_eq!(d["actor"], json!(actor));
            assert_eq!(d["candidate_count"].as_u64().unwrap() as usize, count);
            assert_eq!(d["deferred"], json!(actor == "guardian"));
            assert_eq!(d["cost_picos"].as_u64().unwrap() as u128, picos);
        }
    }
}

/// Ten MCQ-style records with labels and token counts.
fn labelled_fixture(n: usize) -> Vec<Value> {
    (0..n)
        .map(|i| {
            let correct = i % 4;
            let primary_pick = (i * 7 + 1) % 4;
            let mut pr = vec![0.1; 4];
            pr[primary_pick] = 0.4 + 0.01 * (i % 5) as f64;
            pr[(primary_pick + 1) % 4] = 0.3;
            let mut gu = vec![0.05; 4];
            gu[correct] = 0.85;
            json!({
                "id": format!("q{i}"),
                "actions": ["A", "B", "C", "D"],
                "primary_scores": pr,
                "guardian_scores": gu,
                "labels": {"correct_index": correct},
                "tokens": {"primary_in": 200, "primary_out": 5, "guardian_in": 210, "guardian_out": 40, "full_in": 200},
                "meta": {"subject": if i % 2 == 0 { "law" } else { "bio" }},
            })
        })
        .collect()
}

#[test]
fn evaluate_writes_table_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.jsonl");
    write_records(&records, &labelled_fixture(60));
    let prices = dir.path().join("prices.toml");
    fs::write(&prices, PRICES).unwrap();
    let run = |sub: &str| {
        let out_dir = dir.path().join(sub);
        let out = arbitrage(&[
            "evaluate", "--records", p(&records), "--calib-size", "30", "--alphas", "0.2,0.4",
            "--trials", "3", "--seed", "11", "--baselines", "--price-sheet", p(&prices),
            "--stratify-key", "subject", "--out-dir", p(&out_dir),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        out_dir
    };
    let a = run("a");
    let b = run("b");
    for f in ["report.csv", "report.json", "frontier.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.join("report.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "policy,utility_mean,utility_std,guardrail_mean,guardrail_std,cost_mean,cost_std,lambda_mean,lambda_std,delta,guardian_pct_mean,guardian_pct_std"
    );
    let policies: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(policies.first(), Some(&"primary"));
    assert!(policies.contains(&"guardian"));
    assert!(policies.contains(&"ca(alpha=0.2)"));
    assert!(policies.contains(&"random-matched(alpha=0.4)"));
    assert!(policies.contains(&"random(q=0.5)"));
    let frontier = read_json(&a.join("frontier.json"));
    assert_eq!(frontier.as_array().unwrap().len(), policies.len());
    assert_eq!(read_json(&a.join("manifest.json"))["seed"], json!(11));

    let printed = arbitrage(&["report", "--input", p(&a.join("report.json")), "--format", "csv"]);
    assert_eq!(code(&printed), 0);
    assert_eq!(String::from_utf8(printed.stdout).unwrap(), csv);
    let table = arbitrage(&["report", "--input", p(&a.join("report.json"))]);
    assert!(String::from_utf8(table.stdout).unwrap().starts_with("policy"));
}

#[test]
fn evaluate_infeasible_alpha_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.jsonl");
    write_records(&records, &labelled_fixture(20));
    let out = arbitrage(&[
        "evaluate", "--records", p(&records), "--calib-size", "5", "--alphas", "0.1",
        "--out-dir", p(&dir.path().join("o")),
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn evaluate_exhaustive_mode_runs() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("r.jsonl");
    write_records(&records, &labelled_fixture(10));
    let out_dir = dir.path().join("o");
    let out = arbitrage(&[
        "evaluate", "--records", p(&records), "--calib-size", "5", "--alphas", "0.3",
        "--exhaustive", "--out-dir", p(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read_json(&out_dir.join("report.json"))["trials"], json!(252));
}

fn simulate(dir: &Path, extra: &[&str]) -> (Output, PathBuf) {
    let out_dir = dir.join("sim");
    let mut args = vec!["simulate", "--out-dir", p(&out_dir)];
    args.extend(extra);
    (arbitrage(&args), out_dir)
}

#[test]
fn simulate_alpha_equal_to_bound_has_zero_regret() {
    let dir = tempfile::tempdir().unwrap();
    let (out, out_dir) = simulate(dir.path(), &["--alpha", "1", "--reps", "50", "--n-list", "10,20"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = read_json(&out_dir.join("convergence.json"));
    for pt in report["points"].as_array().unwrap() {
        assert_eq!(pt["mean_regret"].as_f64().unwrap(), 0.0);
    }
    let csv = fs::read_to_string(out_dir.join("convergence.csv")).unwrap();
    assert!(csv.starts_with("n,mean_regret,regret_se,mean_risk,risk_se,mean_lambda_hat"));
}

#[test]
fn simulate_single_rep_flags_unassertable_rate() {
    let dir = tempfile::tempdir().unwrap();
    let (out, out_dir) = simulate(dir.path(), &["--reps", "1", "--assert-rate"]);
    assert_eq!(code(&out), 0);
    assert!(String::from_utf8_lossy(&out.stderr).contains("unavailable"));
    assert_eq!(read_json(&out_dir.join("convergence.json"))["rate_assertable"], json!(false));
}

#[test]
fn simulate_failed_rate_assertion_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = simulate(
        dir.path(),
        &["--reps", "2000", "--n-list", "50,100,200", "--grid-step", "0.001", "--assert-rate", "--max-slope", "-5"],
    );
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_rejects_bad_family() {
    let dir = tempfile::tempdir().unwrap();
    let (out, _) = simulate(dir.path(), &["--family", "gamma:1,2"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn jobs_one_matches_default() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--reps", "300", "--n-list", "20,40", "--grid-step", "0.001", "--seed", "5"];
    let (_, a) = simulate(dir.path(), &args);
    let a_json = fs::read(a.join("convergence.json")).unwrap();
    let out_dir = dir.path().join("seq");
    let mut seq = vec!["--jobs", "1", "simulate", "--out-dir", p(&out_dir)];
    seq.extend(args);
    assert_eq!(code(&arbitrage(&seq)), 0);
    assert_eq!(fs::read(out_dir.join("convergence.json")).unwrap(), a_json);
}
