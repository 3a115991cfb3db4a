//! Full run through the library: phase 1 under a time limit, then phase 2
//! on a worker pool with one injected worker crash, then the report.
//!
//! cargo run --example parallel_pipeline [-- workers]

use std::time::Duration;

use scopf::bundled;
use scopf::orchestrator::{report, run_phase1, run_phase2, FaultInjection, RunConfig};

fn main() -> scopf::Result<()> {
    let workers = std::env::args().nth(1).map_or(2, |s| s.parse().expect("worker count"));
    let dir = std::env::temp_dir().join("scopf_pipeline");
    std::fs::create_dir_all(&dir)?;
    let case_path = dir.join("case5.json");
    std::fs::write(&case_path, bundled::CASE5_JSON)?;
    let config = RunConfig {
        case_path,
        out_dir: dir.clone(),
        workers,
        phase1_limit: Duration::from_secs(30),
        jitter: Some(Duration::from_millis(20)),
        fault: Some(FaultInjection { contingency: "L3-out".into(), crashes: 1 }),
        ..RunConfig::default()
    };
    let (base, p1) = run_phase1(&config)?;
    println!("phase 1: {:?} base written at {:.3} s, ADMM {:?}", p1.source, p1.written_at, p1.admm_status);
    let p2 = run_phase2(&config, Some(base))?;
    println!("phase 2: dispatched {:?}", p2.dispatched);
    println!(
        "received {} forwarded {} written {} crashes {} requeues {}",
        p2.received, p2.forwarded, p2.written, p2.crashes, p2.requeues
    );
    let case = config.load_case()?;
    print!("{}", report(&case, &dir)?);
    println!("files in {}", dir.display());
    Ok(())
}
