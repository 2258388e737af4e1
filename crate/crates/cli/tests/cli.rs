use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use serde_json::Value;

fn rulemine(data: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rulemine"))
        .arg("--data")
        .arg(data)
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// A registered synthetic corpus "syn"; returns the first planted phrase.
fn setup(dir: &Path) -> String {
    let jsonl = dir.join("syn.jsonl");
    let manifest = dir.join("plants.json");
    let out = rulemine(
        dir,
        &[
            "bench", "synth", "--out", jsonl.to_str().unwrap(), "--manifest", manifest.to_str().unwrap(),
            "--n-sentences", "1500", "--vocab-size", "500", "--seed", "4",
        ],
    );
    assert!(ok(&out).starts_with("1500 sentences"));
    let info: Value = serde_json::from_str(&ok(&rulemine(
        dir,
        &["ingest", "--name", "syn", "--input", jsonl.to_str().unwrap()],
    )))
    .unwrap();
    assert_eq!((info["sentences"].as_u64(), info["gold"].as_bool()), (Some(1500), Some(true)));
    let plants: Value = serde_json::from_str(&std::fs::read_to_string(manifest).unwrap()).unwrap();
    plants["plants"][0]["phrase"].as_str().unwrap().to_string()
}

#[test]
fn theory_check_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "theory", "check", "--theta", "0.7", "--beta", "0.8", "--beta-prime", "0.3", "--epsilon", "0.5",
        "--trials", "5000", "--systems", "10",
    ];
    let text = ok(&rulemine(dir.path(), &args));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 6, "{text}");
    assert!(lines[0].starts_with("check"));
    for (line, name) in lines[1..].iter().zip(["lower bound", "upper bound", "preference at 2*alpha"]) {
        assert!(line.starts_with(name) && line.contains("PASS"), "{line}");
    }
    assert!(lines[4].contains("FAIL") && lines[4].contains("unattainable"), "{}", lines[4]);
    assert!(lines[5].starts_with("approximation gamma/alpha") && lines[5].contains("PASS"));

    let bad = rulemine(dir.path(), &["theory", "check", "--theta", "0.3", "--beta", "0.8", "--beta-prime", "0.3", "--epsilon", "0.5"]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("theta"));
}

#[test]
fn ingest_index_and_run_export_results() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let phrase = setup(d);
    let built = ok(&rulemine(d, &["index", "build", "--corpus", "syn", "--shards", "2"]));
    assert!(built.starts_with("indexed 1500 of 1500"), "{built}");
    assert!(d.join("corpora/syn/index-tokens_regex-d10-g1.json").is_file());

    let run = |out: &str| {
        let out_dir = d.join(out);
        let text = ok(&rulemine(
            d,
            &[
                "run", "--corpus", "syn", "--seed-rule", &phrase, "--strategy", "hybrid", "--budget", "15",
                "--candidates", "500", "--oracle", "simulated", "--out", out_dir.to_str().unwrap(),
            ],
        ));
        assert!(text.starts_with("done after "), "{text}");
        std::fs::read_to_string(out_dir.join("results.json")).unwrap()
    };
    let first = run("a");
    assert_eq!(first, run("b"));
    let results: Value = serde_json::from_str(&first).unwrap();
    let positives: Value = serde_json::from_str(&std::fs::read_to_string(d.join("a/positives.json")).unwrap()).unwrap();
    assert_eq!(positives, results["positives"]);
    let rules: Value = serde_json::from_str(&std::fs::read_to_string(d.join("a/rules.json")).unwrap()).unwrap();
    assert_eq!(rules[0]["pattern"], phrase.as_str());
    assert_eq!(rules[0]["seed"], true);
    let metrics: Value = serde_json::from_str(&std::fs::read_to_string(d.join("a/metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["v"], 1);
    assert!(metrics["recall"].as_f64().unwrap() > 0.0);

    let missing = rulemine(d, &["run", "--corpus", "nope", "--seed-rule", "x"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&missing.stderr).contains("unknown corpus"));
}

#[test]
fn prompted_run_stops_at_end_of_input_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let phrase = setup(d);
    let cp = d.join("cp.json");
    let mut child = Command::new(env!("CARGO_BIN_EXE_rulemine"))
        .arg("--data")
        .arg(d)
        .args([
            "run", "--corpus", "syn", "--seed-rule", &phrase, "--budget", "6", "--candidates", "500", "--oracle",
            "prompt", "--checkpoint", cp.to_str().unwrap(),
        ])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"maybe\nn\nno\n").unwrap();
    let text = ok(&child.wait_with_output().unwrap());
    assert!(text.contains("query 0:") && text.contains("answer y or n"), "{text}");
    assert!(text.contains("stopped after 2/6 queries"), "{text}");
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&cp).unwrap()).unwrap();
    assert_eq!(saved["answers"].as_array().unwrap().len(), 2);
    assert_eq!(saved["answers"][0]["answer"], false);

    let resumed = ok(&rulemine(
        d,
        &["run", "--corpus", "syn", "--resume", cp.to_str().unwrap(), "--oracle", "simulated", "--checkpoint", cp.to_str().unwrap()],
    ));
    assert!(resumed.starts_with("done after 6/6 queries"), "{resumed}");
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&cp).unwrap()).unwrap();
    assert_eq!(saved["answers"].as_array().unwrap().len(), 6);
    assert_eq!(saved["answers"][1]["answer"], false);
}

#[test]
fn bench_compare_and_sweep_write_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let phrase = setup(d);
    let curves = d.join("curves.csv");
    let finals = d.join("final.csv");
    let summary = ok(&rulemine(
        d,
        &[
            "bench", "compare", "--corpus", "syn", "--seed-rule", &phrase, "--budget", "5", "--candidates", "300",
            "--methods", "hybrid,highc,al,ks", "--seeds", "0,1", "--curve-csv", curves.to_str().unwrap(),
            "--final-csv", finals.to_str().unwrap(),
        ],
    ));
    for m in ["al", "highc", "hybrid", "ks"] {
        assert!(summary.contains(&format!("{m:<10} mean recall")), "{summary}");
    }
    let finals = std::fs::read_to_string(finals).unwrap();
    let mut lines = finals.lines();
    assert_eq!(lines.next(), Some("method,param,value,seed,queries,positives,recall,precision,f1"));
    assert_eq!(lines.count(), 8);
    let curves = std::fs::read_to_string(curves).unwrap();
    assert!(curves.starts_with("method,seed,queries,positives,recall\n"));
    // every run starts from the seed rule's recall
    let starts: Vec<&str> = curves
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(2) == Some("0"))
        .map(|l| l.rsplit(',').next().unwrap())
        .collect();
    assert_eq!(starts.len(), 8);
    assert!(starts.windows(2).all(|w| w[0] == w[1]), "{starts:?}");

    let sweep = ok(&rulemine(
        d,
        &[
            "bench", "sweep", "--corpus", "syn", "--seed-rule", &phrase, "--budget", "4", "--candidates", "300",
            "--param", "tau", "--values", "1,5", "--seeds", "3",
        ],
    ));
    let rows: Vec<&str> = sweep.lines().collect();
    assert_eq!(rows.len(), 3, "{sweep}");
    assert!(rows[1].starts_with("hybrid,tau,1,3,") && rows[2].starts_with("hybrid,tau,5,3,"), "{sweep}");
    let bad = rulemine(d, &["bench", "sweep", "--corpus", "syn", "--seed-rule", &phrase, "--param", "depth", "--values", "1"]);
    assert_eq!(bad.status.code(), Some(2));
}
