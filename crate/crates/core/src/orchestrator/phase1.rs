use std::fs::{self, File};
use std::io::BufWriter;
use std::thread;
use std::time::{Duration, Instant};

use crossbeam_channel::RecvTimeoutError;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::files::{self, BASE_FILE, DIAGNOSTICS_FILE, LOG_FILE, PHASE1_REPORT, RANKING_FILE};
use super::{EventLog, RunConfig};
use crate::admm::{self, AdmmConfig, AdmmStatus};
use crate::error::Result;
use crate::formulation::solve_base_acopf;
use crate::model::{generation_cost, rebalance_slacks, state_penalty, NetworkCase, StateId, StateLayout, StateVector};
use crate::screening;

/// Where the delivered base solution came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseSource {
    FlatStart,
    Preliminary,
    Admm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase1Report {
    pub source: BaseSource,
    pub fallback: bool,
    pub selected: Vec<String>,
    pub admm_status: Option<AdmmStatus>,
    pub admm_inner_iterations: usize,
    pub admm_rounds: usize,
    pub consensus: Option<f64>,
    pub generation_cost: f64,
    pub base_penalty: f64,
    /// Seconds from start to the last base file write.
    pub written_at: f64,
    pub limit: f64,
    pub wall_time: f64,
    pub failure: Option<String>,
}

struct Clock {
    started: Instant,
    target: Instant,
}

impl Clock {
    fn remaining(&self) -> Duration {
        self.target.saturating_duration_since(Instant::now())
    }
}

fn finite(sv: &StateVector) -> bool {
    sv.to_vec().iter().all(|x| x.is_finite())
}

/// Delivers the base solution under `config.phase1_limit`.
///
/// A flat-start base file is written first so that a file exists whatever
/// happens next; it is replaced by the preliminary ACOPF solution and then by
/// the ADMM base point, each time atomically. The ADMM runs on its own thread
/// and is abandoned if it has not returned by the limit minus the margin.
pub fn run_phase1(config: &RunConfig) -> Result<(StateVector, Phase1Report)> {
    config.validate()?;
    let case = config.load_case()?;
    fs::create_dir_all(&config.out_dir)?;
    let started = Instant::now();
    let clock = Clock { started, target: started + config.phase1_limit - config.margin() };
    let mut log = EventLog::open(&config.out_file(LOG_FILE))?;
    log.event("phase1_start", json!({ "limit_s": config.phase1_limit.as_secs_f64(), "margin_s": config.margin().as_secs_f64() }));
    let base_path = config.out_file(BASE_FILE);

    let layout = StateLayout::new(&case, StateId::Base)?;
    let mut best = StateVector::flat_start(&case, &layout);
    rebalance_slacks(&case, &mut best)?;
    files::write_base(&base_path, &case, &best)?;
    let mut written_at = started.elapsed();
    let mut source = BaseSource::FlatStart;
    let mut failure = None;

    let nlp = crate::nlp::NlpOptions { time_limit: Some(clock.remaining()), ..config.admm.nlp };
    match solve_base_acopf(&case, None, &nlp) {
        Ok(s) if (s.result.converged() || s.result.violation <= 1e-6) && finite(&s.state) => {
            best = s.state;
            source = BaseSource::Preliminary;
            files::write_base(&base_path, &case, &best)?;
            written_at = started.elapsed();
            log.event("base_written", json!({ "source": source, "status": s.result.status }));
        }
        Ok(s) => {
            failure = Some(format!("preliminary base solve ended with {:?}", s.result.status));
            log.event("preliminary_failed", json!({ "status": s.result.status }));
        }
        Err(e) => {
            failure = Some(format!("preliminary base solve failed: {e}"));
            log.event("preliminary_failed", json!({ "error": e.to_string() }));
        }
    }

    let ranked = screening::rank(&case, &best)?;
    let mut buf = Vec::new();
    screening::write_ranking(&ranked, &mut buf)?;
    files::write_atomic(&config.out_file(RANKING_FILE), &buf)?;
    let selected = screening::select_subset(&ranked, config.workers, case.num_buses())?;
    log.event("selected", json!({ "ids": selected.iter().map(|r| &r.id).collect::<Vec<_>>() }));

    let mut report = Phase1Report {
        source,
        fallback: false,
        selected: selected.iter().map(|r| r.id.clone()).collect(),
        admm_status: None,
        admm_inner_iterations: 0,
        admm_rounds: 0,
        consensus: None,
        generation_cost: 0.0,
        base_penalty: 0.0,
        written_at: 0.0,
        limit: config.phase1_limit.as_secs_f64(),
        wall_time: 0.0,
        failure,
    };

    if !selected.is_empty() && !clock.remaining().is_zero() {
        let indices: Vec<usize> = selected.iter().map(|r| r.index).collect();
        match run_admm(&case, &indices, &best, config, &clock, &mut log) {
            Some(Ok(res)) => {
                report.admm_status = Some(res.status);
                report.admm_inner_iterations = res.inner;
                report.admm_rounds = res.rounds;
                report.consensus = Some(res.consensus);
                let f = File::create(config.out_file(DIAGNOSTICS_FILE))?;
                admm::write_diagnostics(&res.records, BufWriter::new(f))?;
                if finite(&res.base) && Instant::now() < clock.target + config.margin() / 2 {
                    best = res.base;
                    report.source = BaseSource::Admm;
                    report.failure = None;
                    files::write_base(&base_path, &case, &best)?;
                    written_at = started.elapsed();
                    log.event("base_written", json!({ "source": report.source }));
                }
            }
            Some(Err(e)) => log.event("admm_failed", json!({ "error": e.to_string() })),
            None => log.event("admm_abandoned", json!({})),
        }
    }

    report.fallback = report.source == BaseSource::FlatStart;
    report.generation_cost = generation_cost(&case, &best)?;
    report.base_penalty = state_penalty(&case, &best)?;
    report.written_at = written_at.as_secs_f64();
    report.wall_time = clock.started.elapsed().as_secs_f64();
    files::write_atomic(&config.out_file(PHASE1_REPORT), &serde_json::to_vec_pretty(&report)?)?;
    log.event("phase1_done", json!({ "source": report.source, "written_at_s": report.written_at }));
    Ok((best, report))
}

struct AdmmOutcome {
    base: StateVector,
    status: AdmmStatus,
    inner: usize,
    rounds: usize,
    consensus: f64,
    records: Vec<admm::IterationRecord>,
}

fn run_admm(
    case: &NetworkCase,
    selected: &[usize],
    start: &StateVector,
    config: &RunConfig,
    clock: &Clock,
    log: &mut EventLog,
) -> Option<Result<AdmmOutcome>> {
    let remaining = clock.remaining();
    let admm_config = AdmmConfig {
        time_limit: Some(remaining),
        workers: Some(config.workers),
        nlp: crate::nlp::NlpOptions { time_limit: Some(remaining), ..config.admm.nlp },
        ..config.admm.clone()
    };
    log.event("admm_start", json!({ "blocks": selected.len(), "budget_s": remaining.as_secs_f64() }));
    let (tx, rx) = crossbeam_channel::bounded(1);
    let (case, selected, start) = (case.clone(), selected.to_vec(), start.clone());
    thread::spawn(move || {
        let out = (|| {
            let sub = admm::build_relaxation(&case, &selected, &admm_config)?.with_start(start);
            let res = admm::run(&sub, &admm_config)?;
            let mut base = sub.base_state(&res.state.x0)?;
            rebalance_slacks(&case, &mut base)?;
            Ok(AdmmOutcome {
                base,
                status: res.status,
                inner: res.total_inner,
                rounds: res.rounds.len(),
                consensus: res.consensus(),
                records: res.iterations,
            })
        })();
        let _ = tx.send(out);
    });
    match rx.recv_timeout(clock.remaining()) {
        Ok(r) => {
            if let Ok(o) = &r {
                log.event(
                    "admm_done",
                    json!({ "status": o.status, "inner": o.inner, "rounds": o.rounds, "consensus": o.consensus }),
                );
            }
            Some(r)
        }
        Err(RecvTimeoutError::Timeout) | Err(RecvTimeoutError::Disconnected) => None,
    }
}
