use std::collections::{BTreeSet, VecDeque};
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{select, unbounded, Receiver, Sender};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::files::{self, CtgRecord, RecordOrigin, BASE_FILE, CTG_FILE, LOG_FILE, PHASE2_REPORT};
use super::{EventLog, RunConfig};
use crate::error::{Error, Result};
use crate::model::{objective, NetworkCase, StateVector};
use crate::nlp::NlpOptions;
use crate::recourse::{solve_contingency, warm_start};
use crate::screening;

/// Stored results above this count log a buffer warning.
pub const BUFFER_WARNING: usize = 1024;

/// Makes workers panic on a given contingency for its first `crashes`
/// attempts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultInjection {
    pub contingency: String,
    pub crashes: u32,
}

#[derive(Debug, Clone, Default)]
pub struct PoolOptions {
    pub workers: usize,
    pub deadline: Option<Instant>,
    pub jitter: Option<Duration>,
    pub seed: u64,
    pub fault: Option<FaultInjection>,
    /// Pause of the writer before applying each batch.
    pub writer_delay: Option<Duration>,
    /// Solution file rewritten after each batch.
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Task {
    index: usize,
    attempt: u32,
}

enum FromWorker {
    Idle(usize),
    Done { worker: usize, task: Task, result: std::result::Result<CtgRecord, String>, elapsed: Duration },
    Crashed { worker: usize, task: Task, message: String },
}

enum ToWriter {
    Batch(Vec<CtgRecord>),
    Finish,
}

/// Counts and final records of one pool run.
#[derive(Debug, Clone)]
pub struct PoolOutcome {
    /// Final record per contingency, case order.
    pub records: Vec<CtgRecord>,
    /// Contingency indices in dispatch order, re-dispatches included.
    pub dispatched: Vec<usize>,
    /// Solutions received from workers.
    pub received: usize,
    /// Solutions forwarded to the writer.
    pub forwarded: usize,
    /// Solutions applied by the writer.
    pub written: usize,
    pub crashes: usize,
    pub requeues: usize,
    /// Tasks left on their default record after crashes or solver errors.
    pub fallbacks: usize,
    /// Tasks not resolved by the deadline.
    pub timeouts: usize,
    pub max_buffer: usize,
}

/// Base-derived record written before any solve.
pub fn default_record(case: &NetworkCase, base: &StateVector, k: usize) -> Result<CtgRecord> {
    CtgRecord::new(case, warm_start(case, k, base)?, RecordOrigin::Default)
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    match p.downcast::<String>() {
        Ok(s) => *s,
        Err(p) => p.downcast_ref::<&str>().map_or_else(|| "worker panicked".to_string(), |s| s.to_string()),
    }
}

struct WorkerCtx<F> {
    case: Arc<NetworkCase>,
    solve: Arc<F>,
    fault: Option<FaultInjection>,
    jitter: Option<Duration>,
    seed: u64,
}

impl<F> Clone for WorkerCtx<F> {
    fn clone(&self) -> Self {
        Self { case: self.case.clone(), solve: self.solve.clone(), fault: self.fault.clone(), jitter: self.jitter, seed: self.seed }
    }
}

fn spawn_worker<F>(id: usize, ctx: WorkerCtx<F>, results: Sender<FromWorker>) -> Sender<Option<Task>>
where
    F: Fn(usize) -> Result<CtgRecord> + Send + Sync + 'static,
{
    let (tx, rx) = unbounded::<Option<Task>>();
    thread::spawn(move || {
        if results.send(FromWorker::Idle(id)).is_err() {
            return;
        }
        while let Ok(Some(task)) = rx.recv() {
            if let Some(j) = ctx.jitter {
                let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed ^ ((task.index as u64) << 8) ^ task.attempt as u64);
                thread::sleep(Duration::from_micros(rng.gen_range(0..=j.as_micros() as u64)));
            }
            let t0 = Instant::now();
            let out = panic::catch_unwind(AssertUnwindSafe(|| {
                if let Some(f) = &ctx.fault {
                    if ctx.case.contingencies[task.index].id == f.contingency && task.attempt < f.crashes {
                        panic!("injected fault on {}", f.contingency);
                    }
                }
                (ctx.solve)(task.index)
            }));
            let msg = match out {
                Ok(r) => FromWorker::Done { worker: id, task, result: r.map_err(|e| e.to_string()), elapsed: t0.elapsed() },
                Err(p) => {
                    let _ = results.send(FromWorker::Crashed { worker: id, task, message: panic_message(p) });
                    return;
                }
            };
            if results.send(msg).is_err() {
                return;
            }
        }
    });
    tx
}

fn spawn_writer(
    case: Arc<NetworkCase>,
    mut table: Vec<CtgRecord>,
    out: Option<PathBuf>,
    delay: Option<Duration>,
    rx: Receiver<ToWriter>,
    ready: Sender<()>,
) -> JoinHandle<Result<(usize, Vec<CtgRecord>)>> {
    thread::spawn(move || {
        let mut written = 0;
        let _ = ready.send(());
        while let Ok(msg) = rx.recv() {
            match msg {
                ToWriter::Batch(batch) => {
                    if let Some(d) = delay {
                        thread::sleep(d);
                    }
                    for r in batch {
                        let i = r.index;
                        table[i] = r;
                        written += 1;
                    }
                    if let Some(p) = &out {
                        files::write_ctg(p, &case, &table)?;
                    }
                    let _ = ready.send(());
                }
                ToWriter::Finish => break,
            }
        }
        if let Some(p) = &out {
            files::write_ctg(p, &case, &table)?;
        }
        Ok((written, table))
    })
}

/// Runs `tasks` (contingency indices, dispatch order) over a pool of
/// workers calling `solve`, with one writer holding the table of records
/// seeded from `defaults`.
///
/// The manager hands a task to each idle worker, stores returned solutions
/// and forwards everything stored whenever the writer reports ready. A
/// worker that panics is replaced; its task is queued again once and left
/// on its default record after a second crash. Past the deadline nothing
/// new is dispatched and unresolved tasks keep their default records.
pub fn manager_loop<F>(
    case: Arc<NetworkCase>,
    tasks: &[usize],
    defaults: Vec<CtgRecord>,
    solve: F,
    pool: &PoolOptions,
    log: &mut EventLog,
) -> Result<PoolOutcome>
where
    F: Fn(usize) -> Result<CtgRecord> + Send + Sync + 'static,
{
    if pool.workers == 0 {
        return Err(Error::invalid("worker count must be at least 1"));
    }
    if defaults.len() != case.contingencies.len() || defaults.iter().enumerate().any(|(i, r)| r.index != i) {
        return Err(Error::invalid("default records must cover every contingency in case order"));
    }
    if let Some(&k) = tasks.iter().find(|&&k| k >= case.contingencies.len()) {
        return Err(Error::invalid(format!("task {k} out of range")));
    }
    let ctx = WorkerCtx { case: case.clone(), solve: Arc::new(solve), fault: pool.fault.clone(), jitter: pool.jitter, seed: pool.seed };
    let (res_tx, res_rx) = unbounded();
    let (w_tx, w_rx) = unbounded();
    let (ready_tx, ready_rx) = unbounded();
    let writer = spawn_writer(case.clone(), defaults, pool.out.clone(), pool.writer_delay, w_rx, ready_tx);
    let mut senders: Vec<Option<Sender<Option<Task>>>> =
        (0..pool.workers).map(|id| Some(spawn_worker(id, ctx.clone(), res_tx.clone()))).collect();

    let mut queue: VecDeque<Task> = tasks.iter().map(|&index| Task { index, attempt: 0 }).collect();
    let mut idle: VecDeque<usize> = VecDeque::new();
    let mut in_flight: BTreeSet<usize> = BTreeSet::new();
    let mut stored: Vec<CtgRecord> = Vec::new();
    let mut writer_ready = false;
    let mut resolved = 0;
    let mut out = PoolOutcome {
        records: Vec::new(),
        dispatched: Vec::new(),
        received: 0,
        forwarded: 0,
        written: 0,
        crashes: 0,
        requeues: 0,
        fallbacks: 0,
        timeouts: 0,
        max_buffer: 0,
    };
    let mut expired = false;

    loop {
        if !expired && pool.deadline.is_some_and(|d| Instant::now() >= d) {
            expired = true;
            for t in queue.drain(..).chain(in_flight.iter().map(|&index| Task { index, attempt: 0 })) {
                log.event("timeout", json!({ "id": case.contingencies[t.index].id }));
                out.timeouts += 1;
                resolved += 1;
            }
            in_flight.clear();
        }
        while !expired && !queue.is_empty() && !idle.is_empty() {
            let w = idle.pop_front().unwrap();
            let t = queue.pop_front().unwrap();
            if let Some(s) = &senders[w] {
                if s.send(Some(t)).is_ok() {
                    in_flight.insert(t.index);
                    out.dispatched.push(t.index);
                    log.event("dispatch", json!({ "id": case.contingencies[t.index].id, "worker": w, "attempt": t.attempt }));
                    continue;
                }
            }
            queue.push_front(t);
        }
        if writer_ready && !stored.is_empty() {
            let batch = std::mem::take(&mut stored);
            out.forwarded += batch.len();
            log.event("forward", json!({ "count": batch.len() }));
            w_tx.send(ToWriter::Batch(batch)).map_err(|_| Error::Solver("writer stopped".into()))?;
            writer_ready = false;
        }
        if resolved == tasks.len() && stored.is_empty() && writer_ready {
            break;
        }
        let wait = match pool.deadline {
            Some(d) if !expired => d.saturating_duration_since(Instant::now()),
            _ => Duration::from_secs(3600),
        };
        select! {
            recv(res_rx) -> msg => {
                let Ok(msg) = msg else { return Err(Error::Solver("worker channel closed".into())) };
                match msg {
                    FromWorker::Idle(w) => idle.push_back(w),
                    FromWorker::Done { worker, task, result, elapsed } => {
                        idle.push_back(worker);
                        if !in_flight.remove(&task.index) {
                            log.event("late", json!({ "id": case.contingencies[task.index].id, "worker": worker }));
                            continue;
                        }
                        resolved += 1;
                        let id = &case.contingencies[task.index].id;
                        match result {
                            Ok(rec) => {
                                log.event("result", json!({
                                    "id": id, "worker": worker, "origin": rec.origin,
                                    "penalty": rec.penalty, "solve_ms": elapsed.as_secs_f64() * 1e3,
                                }));
                                out.received += 1;
                                stored.push(rec);
                                out.max_buffer = out.max_buffer.max(stored.len());
                                if stored.len() == BUFFER_WARNING + 1 {
                                    log.event("buffer_warning", json!({ "stored": stored.len() }));
                                }
                            }
                            Err(e) => {
                                log.event("solve_error", json!({ "id": id, "worker": worker, "error": e }));
                                out.fallbacks += 1;
                            }
                        }
                    }
                    FromWorker::Crashed { worker, task, message } => {
                        out.crashes += 1;
                        senders[worker] = None;
                        let id = senders.len();
                        senders.push(Some(spawn_worker(id, ctx.clone(), res_tx.clone())));
                        let name = &case.contingencies[task.index].id;
                        log.event("crash", json!({ "id": name, "worker": worker, "replacement": id, "message": message }));
                        if !in_flight.remove(&task.index) {
                            continue;
                        }
                        if task.attempt == 0 {
                            out.requeues += 1;
                            log.event("requeue", json!({ "id": name }));
                            queue.push_front(Task { index: task.index, attempt: 1 });
                        } else {
                            out.fallbacks += 1;
                            resolved += 1;
                            log.event("fallback", json!({ "id": name }));
                        }
                    }
                }
            }
            recv(ready_rx) -> msg => {
                if msg.is_err() {
                    return Err(Error::Solver("writer stopped".into()));
                }
                writer_ready = true;
            }
            default(wait) => {}
        }
    }

    for s in senders.iter().flatten() {
        let _ = s.send(None);
    }
    let _ = w_tx.send(ToWriter::Finish);
    let (written, records) = writer.join().map_err(|_| Error::Solver("writer panicked".into()))??;
    out.written = written;
    out.records = records;
    log.event("pool_done", json!({ "received": out.received, "forwarded": out.forwarded, "written": out.written }));
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Report {
    /// Contingency ids in ranked order.
    pub ranking: Vec<String>,
    /// Ids in dispatch order.
    pub dispatched: Vec<String>,
    pub penalties: Vec<f64>,
    pub origins: Vec<RecordOrigin>,
    pub objective: f64,
    pub received: usize,
    pub forwarded: usize,
    pub written: usize,
    pub crashes: usize,
    pub requeues: usize,
    pub fallbacks: usize,
    pub timeouts: usize,
    pub limit: f64,
    pub wall_time: f64,
}

impl Phase2Report {
    /// A record came from a fallback or was never replaced.
    pub fn fallback_used(&self) -> bool {
        self.origins.iter().any(|o| matches!(o, RecordOrigin::Fallback | RecordOrigin::Default))
    }
}

/// Solves every contingency against `base` (or the base file in the output
/// directory) and leaves one record per contingency in the solution file.
pub fn run_phase2(config: &RunConfig, base: Option<StateVector>) -> Result<Phase2Report> {
    config.validate()?;
    let case = Arc::new(config.load_case()?);
    std::fs::create_dir_all(&config.out_dir)?;
    let started = Instant::now();
    let base = match base {
        Some(b) => b,
        None => files::read_base(&config.out_file(BASE_FILE), &case)?,
    };
    let mut log = EventLog::open(&config.out_file(LOG_FILE))?;
    let n = case.contingencies.len();
    let limit = config.phase2_limit(n);
    log.event("phase2_start", json!({ "contingencies": n, "workers": config.workers, "limit_s": limit.as_secs_f64() }));

    let ranked = screening::rank(&case, &base)?;
    let defaults = (0..n).map(|k| default_record(&case, &base, k)).collect::<Result<Vec<_>>>()?;
    let out_path = config.out_file(CTG_FILE);
    files::write_ctg(&out_path, &case, &defaults)?;
    log.event("defaults_written", json!({ "count": n }));

    let tasks: Vec<usize> = ranked.iter().map(|r| r.index).collect();
    let params = config.smoothing;
    let opts = NlpOptions { time_limit: Some(config.ctg_budget), ..config.admm.nlp };
    let (c, b) = (case.clone(), Arc::new(base.clone()));
    let solve = move |k: usize| {
        let sol = solve_contingency(&c, k, &b, &params, &opts)?;
        CtgRecord::new(&c, sol.state, sol.path.into())
    };
    let pool = PoolOptions {
        workers: config.workers,
        deadline: Some(started + limit),
        jitter: config.jitter,
        seed: config.seed,
        fault: config.fault.clone(),
        writer_delay: None,
        out: Some(out_path),
    };
    let outcome = manager_loop(case.clone(), &tasks, defaults, solve, &pool, &mut log)?;
    let penalties: Vec<f64> = outcome.records.iter().map(|r| r.penalty).collect();
    let report = Phase2Report {
        ranking: ranked.iter().map(|r| r.id.clone()).collect(),
        dispatched: outcome.dispatched.iter().map(|&k| case.contingencies[k].id.clone()).collect(),
        objective: objective(&case, &base, &penalties)?,
        penalties,
        origins: outcome.records.iter().map(|r| r.origin).collect(),
        received: outcome.received,
        forwarded: outcome.forwarded,
        written: outcome.written,
        crashes: outcome.crashes,
        requeues: outcome.requeues,
        fallbacks: outcome.fallbacks,
        timeouts: outcome.timeouts,
        limit: limit.as_secs_f64(),
        wall_time: started.elapsed().as_secs_f64(),
    };
    files::write_atomic(&config.out_file(PHASE2_REPORT), &serde_json::to_vec_pretty(&report)?)?;
    log.event("phase2_done", json!({ "objective": report.objective, "wall_s": report.wall_time }));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled::five_bus;
    use crate::model::{rebalance_slacks, StateId, StateLayout};

    fn setup() -> (Arc<NetworkCase>, StateVector, Vec<CtgRecord>) {
        let case = five_bus();
        let layout = StateLayout::new(&case, StateId::Base).unwrap();
        let mut base = StateVector::flat_start(&case, &layout);
        rebalance_slacks(&case, &mut base).unwrap();
        let defaults = (0..case.contingencies.len()).map(|k| default_record(&case, &base, k).unwrap()).collect();
        (Arc::new(case), base, defaults)
    }

    fn marked(defaults: &[CtgRecord]) -> impl Fn(usize) -> Result<CtgRecord> + Send + Sync + 'static {
        let d = defaults.to_vec();
        move |k| Ok(CtgRecord { origin: RecordOrigin::Restricted, ..d[k].clone() })
    }

    #[test]
    fn zero_tasks_shut_down_cleanly() {
        let (case, _, defaults) = setup();
        let out = manager_loop(case, &[], defaults.clone(), marked(&defaults), &PoolOptions { workers: 2, ..Default::default() }, &mut EventLog::memory()).unwrap();
        assert_eq!((out.received, out.forwarded, out.written), (0, 0, 0));
        assert_eq!(out.records, defaults);
    }

    #[test]
    fn dispatch_follows_task_order_with_one_worker() {
        let (case, _, defaults) = setup();
        let mut log = EventLog::memory();
        let tasks = [2, 0, 3, 1];
        let out = manager_loop(case, &tasks, defaults.clone(), marked(&defaults), &PoolOptions { workers: 1, ..Default::default() }, &mut log).unwrap();
        assert_eq!(out.dispatched, tasks);
        assert!(out.records.iter().all(|r| r.origin == RecordOrigin::Restricted));
        assert_eq!(log.named("dispatch").count(), 4);
    }

    #[test]
    fn slow_writer_loses_nothing() {
        let (case, _, defaults) = setup();
        let pool = PoolOptions { workers: 3, writer_delay: Some(Duration::from_millis(20)), ..Default::default() };
        let out = manager_loop(case, &[0, 1, 2, 3], defaults.clone(), marked(&defaults), &pool, &mut EventLog::memory()).unwrap();
        assert_eq!(out.received, 4);
        assert_eq!(out.forwarded, out.received);
        assert_eq!(out.written, out.forwarded);
    }

    #[test]
    fn crash_requeues_once_then_falls_back() {
        let (case, _, defaults) = setup();
        let id = case.contingencies[1].id.clone();
        for (crashes, requeues, fallbacks) in [(1, 1, 0), (2, 1, 1)] {
            let mut log = EventLog::memory();
            let pool = PoolOptions { workers: 2, fault: Some(FaultInjection { contingency: id.clone(), crashes }), ..Default::default() };
            let out = manager_loop(case.clone(), &[0, 1, 2, 3], defaults.clone(), marked(&defaults), &pool, &mut log).unwrap();
            assert_eq!((out.requeues, out.fallbacks, out.crashes as u32), (requeues, fallbacks, crashes));
            assert_eq!(log.named("requeue").count(), 1);
            assert_eq!(out.records.len(), 4);
            let expect = if fallbacks == 0 { RecordOrigin::Restricted } else { RecordOrigin::Default };
            assert_eq!(out.records[1].origin, expect);
        }
    }

    #[test]
    fn deadline_keeps_defaults() {
        let (case, _, defaults) = setup();
        let d = defaults.clone();
        let slow = move |k: usize| {
            thread::sleep(Duration::from_millis(300));
            Ok(CtgRecord { origin: RecordOrigin::Restricted, ..d[k].clone() })
        };
        let pool = PoolOptions { workers: 1, deadline: Some(Instant::now() + Duration::from_millis(100)), ..Default::default() };
        let out = manager_loop(case, &[0, 1, 2, 3], defaults.clone(), slow, &pool, &mut EventLog::memory()).unwrap();
        assert_eq!(out.timeouts, 4);
        assert_eq!(out.records, defaults);
    }

    #[test]
    fn solver_errors_are_fallbacks() {
        let (case, _, defaults) = setup();
        let failing = |_k: usize| -> Result<CtgRecord> { Err(Error::Solver("no".into())) };
        let out = manager_loop(case, &[0, 1], defaults.clone(), failing, &PoolOptions { workers: 2, ..Default::default() }, &mut EventLog::memory()).unwrap();
        assert_eq!(out.fallbacks, 2);
        assert_eq!(out.received, 0);
    }
}
