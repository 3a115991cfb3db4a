use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use scopf::bundled;
use scopf::model::NetworkCase;
use scopf::orchestrator::files::{self, CTG_FILE, LOG_FILE, RANKING_FILE};
use scopf::orchestrator::{run_phase1, run_phase2, Phase2Report, RunConfig};
use serde_json::Value;

fn three_contingency_case(dir: &Path) -> (PathBuf, NetworkCase) {
    let mut doc: Value = serde_json::from_str(bundled::CASE5_JSON).unwrap();
    doc["contingencies"].as_array_mut().unwrap().truncate(3);
    let text = serde_json::to_string(&doc).unwrap();
    let path = dir.join("case5_k3.json");
    fs::write(&path, &text).unwrap();
    (path, NetworkCase::from_json(&text).unwrap())
}

fn run(case_path: &Path, out: PathBuf) -> Phase2Report {
    let config = RunConfig {
        case_path: case_path.to_path_buf(),
        out_dir: out,
        workers: 2,
        phase1_limit: Duration::from_secs(60),
        seed: 5,
        jitter: Some(Duration::from_millis(10)),
        ..RunConfig::default()
    };
    let (base, _) = run_phase1(&config).unwrap();
    run_phase2(&config, Some(base)).unwrap()
}

fn events(out: &Path, name: &str) -> Vec<Value> {
    fs::read_to_string(out.join(LOG_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<Value>(l).unwrap())
        .filter(|e| e["event"] == name)
        .collect()
}

#[test]
fn two_workers_three_contingencies() {
    let dir = tempfile::tempdir().unwrap();
    let (case_path, case) = three_contingency_case(dir.path());
    let out = dir.path().join("a");
    let rep = run(&case_path, out.clone());

    let ranked: Vec<String> =
        fs::read_to_string(out.join(RANKING_FILE)).unwrap().lines().map(|l| l.split_whitespace().next().unwrap().to_string()).collect();
    assert_eq!(ranked.len(), 3);
    assert_eq!(rep.ranking, ranked);
    let dispatched: Vec<String> = events(&out, "dispatch").iter().map(|e| e["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(dispatched, ranked);
    assert_eq!(rep.dispatched, ranked);

    let records = files::read_ctg(&out.join(CTG_FILE), &case).unwrap();
    assert_eq!(records.iter().map(|r| r.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    assert_eq!((rep.received, rep.forwarded, rep.written), (3, 3, 3));
    assert_eq!(rep.crashes + rep.fallbacks + rep.timeouts, 0);
    assert!(!rep.fallback_used());

    let b = dir.path().join("b");
    run(&case_path, b.clone());
    for f in [files::BASE_FILE, CTG_FILE, RANKING_FILE] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f} differs between seeded runs");
    }
}
