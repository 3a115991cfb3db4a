//! Acceptance run: every criterion at its stated tolerance, one line each.
//! Exits nonzero when any criterion fails.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::{Duration, Instant, SystemTime};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scopf::admm::{self, eta, AdmmConfig, AdmmResult, ScopfSubproblems};
use scopf::bundled;
use scopf::formulation::{add_state, solve_base_acopf, BlockObjective};
use scopf::model::{disjunction_violation, state_penalty, ReactiveBox, StateId};
use scopf::nlp::{Model, NlpOptions};
use scopf::orchestrator::files::{self, BASE_FILE, CTG_FILE, LOG_FILE};
use scopf::orchestrator::{run_phase1, run_phase2, FaultInjection, RunConfig};
use scopf::recourse::solve_contingency;
use scopf::screening;
use scopf::smoothing::{hausdorff_gap_estimate, in_relaxed_set, smooth_response_full, smooth_response_upper, softplus, SmoothingParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn smoothing_bounds() -> Outcome {
    let t0 = Instant::now();
    let ln2 = std::f64::consts::LN_2;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut violations = 0;
    let mut worst_full: f64 = 0.0;
    let mut worst_upper: f64 = 0.0;
    let (mut full_ok, mut upper_ok) = (true, true);
    for eps in [1.0, 1e-2, 1e-4, 1e-6] {
        for i in 0..100_000 {
            let x = if i % 2 == 0 { eps * rng.gen_range(-40.0..40.0) } else { rng.gen_range(-10.0..10.0) };
            let gap = softplus(x, eps) - x.max(0.0);
            if gap < -1e-13 || gap > eps * ln2 + 1e-13 {
                violations += 1;
            }
        }
        let (p_lo, p_hi, p0, alpha) = (0.1, 0.9, 0.5, 0.8);
        let (mut e_full, mut e_upper): (f64, f64) = (0.0, 0.0);
        for i in 0..10_000 {
            let d = -2.0 + 4.0 * i as f64 / 9_999.0;
            let u = p0 + alpha * d;
            e_full = e_full.max((smooth_response_full(p0, alpha, d, p_lo, p_hi, eps) - u.clamp(p_lo, p_hi)).abs());
            e_upper = e_upper.max((smooth_response_upper(p0, alpha, d, p_hi, eps) - u.min(p_hi)).abs());
        }
        full_ok &= e_full <= 2.0 * eps * ln2;
        upper_ok &= e_upper <= eps * ln2;
        worst_full = worst_full.max(e_full / (2.0 * eps * ln2));
        worst_upper = worst_upper.max(e_upper / (eps * ln2));
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        violations == 0 && full_ok && upper_ok && secs < 5.0,
        format!("{violations} gap violations; response sup-error / bound: full {worst_full:.4}, upper {worst_upper:.4}; {secs:.2} s"),
    )
}

fn containment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut misses = 0;
    for eps in [1e-2, 1e-6] {
        for i in 0..10_000 {
            let q_lo = rng.gen_range(-1.0..0.0);
            let q_hi = q_lo + rng.gen_range(0.05..2.0);
            let v_lo = rng.gen_range(0.9..0.95);
            let v_hi = rng.gen_range(1.05..1.1);
            let v0 = rng.gen_range(v_lo..v_hi);
            let b = ReactiveBox { q_lo, q_hi, v_lo, v_hi, v0 };
            let (q, v) = match i % 3 {
                0 => (rng.gen_range(q_lo..=q_hi), v0),
                1 => (q_hi, rng.gen_range(v_lo..=v0)),
                _ => (q_lo, rng.gen_range(v0..=v_hi)),
            };
            let (vp, vm) = ((v - v0).max(0.0), (v0 - v).max(0.0));
            if !in_relaxed_set(q, v, vp, vm, &b, eps, 1e-12) {
                misses += 1;
            }
        }
    }
    let b = ReactiveBox { q_lo: -0.5, q_hi: 0.8, v_lo: 0.95, v_hi: 1.05, v0: 1.01 };
    let res = 60;
    let spacing = (b.q_hi - b.q_lo).max(b.v_hi - b.v_lo) / (res - 1) as f64;
    let gaps: Vec<f64> = [1e-1, 1e-2, 1e-3].iter().map(|&e| hausdorff_gap_estimate(&b, e, res).unwrap()).collect();
    let monotone = gaps.windows(2).all(|w| w[1] <= w[0] + spacing);
    outcome(misses == 0 && monotone, format!("{misses} counterexamples; gap estimates {gaps:.3?} (slack {spacing:.1e})"))
}

struct AdmmRun {
    result: AdmmResult,
    config: AdmmConfig,
    secs: f64,
}

fn admm_run() -> AdmmRun {
    let case = bundled::five_bus();
    let config = AdmmConfig { workers: Some(1), record_history: true, ..AdmmConfig::default() };
    let sub: ScopfSubproblems = admm::build_relaxation(&case, &[0, 1, 2], &config).unwrap();
    let t0 = Instant::now();
    let result = admm::run(&sub, &config).unwrap();
    AdmmRun { result, config, secs: t0.elapsed().as_secs_f64() }
}

fn admm_identities(run: &AdmmRun) -> Outcome {
    let h = &run.result.history;
    let (mut z_err, mut y_err): (f64, f64) = (0.0, 0.0);
    let mut outside = 0;
    for (i, s) in h.iter().enumerate() {
        for k in 0..s.z.len() {
            for j in 0..s.x0.len() {
                z_err = z_err.max((s.lambda[k][j] + s.beta * s.z[k][j] + s.y[k][j]).abs());
                let l = s.lambda[k][j];
                if !(run.config.lambda_lo <= l && l <= run.config.lambda_hi) {
                    outside += 1;
                }
                if i > 0 && h[i - 1].r == s.r && s.t == h[i - 1].t + 1 {
                    let p = &h[i - 1];
                    y_err = y_err.max((s.y[k][j] - p.y[k][j] - s.beta * (p.z[k][j] - s.z[k][j])).abs());
                }
            }
        }
    }
    outcome(
        z_err <= 1e-9 && y_err <= 1e-9 && outside == 0,
        format!("{} snapshots; max |λ+βz+y| {z_err:.2e}, max dual-update error {y_err:.2e}, {outside} multipliers outside the box", h.len()),
    )
}

fn al_monotone(run: &AdmmRun) -> Outcome {
    let res = &run.result;
    let (mut checked, mut flagged, mut bad) = (0, 0, 0);
    let mut it = res.iterations.iter();
    for round in &res.rounds {
        let recs: Vec<_> = it.by_ref().take(round.iterations).collect();
        if !round.certificates_hold {
            flagged += 1;
            continue;
        }
        checked += 1;
        let mut prev = round.l_upper;
        for r in recs {
            if r.al > prev + 1e-8 * prev.abs() || r.al < round.l_lower - 1e-6 {
                bad += 1;
            }
            prev = r.al;
        }
    }
    let flagged_iters = res.iterations.iter().filter(|r| !r.certificates_hold()).count();
    outcome(
        bad == 0 && checked > 0,
        format!("{checked} certificate-clean rounds checked, {bad} violations; {flagged} rounds / {flagged_iters} iterations flagged"),
    )
}

fn consensus(run: &AdmmRun) -> Outcome {
    let c = run.result.consensus();
    outcome(
        c <= 1e-4 && run.result.total_inner <= 200 && run.secs < 120.0,
        format!("consensus {c:.3e} after {} inner iterations, {:.2} s, {:?}", run.result.total_inner, run.secs, run.result.status),
    )
}

fn complexity(run: &AdmmRun) -> Outcome {
    let mut over = 0;
    let mut clean = 0;
    for r in run.result.rounds.iter().filter(|r| r.certificates_hold) {
        clean += 1;
        let m = (r.gamma * r.beta).min((r.beta + r.rho) / 2.0 - r.beta * r.beta / r.rho);
        let eps = run.config.inner_tol(r.r);
        let bound = (2.0 * r.rho * r.rho * run.result.state.blocks.len() as f64 * (r.l_upper - r.l_lower).max(0.0) / (m * eps * eps)).ceil();
        if r.iterations as f64 > bound || (bound - r.t_bound).abs() > 1e-9 * bound.abs() {
            over += 1;
        }
    }
    let eta_ok = eta(f64::INFINITY, 2.0) == 1.0 && eta(run.result.bounds.gamma, 2.0) == run.result.bounds.gamma.min(1.0);
    outcome(
        over == 0 && clean > 0 && eta_ok,
        format!("{clean} clean rounds, {over} above the bound; η(τ=2) = {}, measured γ {:.3e}", eta(f64::INFINITY, 2.0), run.result.bounds.gamma),
    )
}

fn ranking_oracle() -> Outcome {
    let case = bundled::five_bus();
    let base = solve_base_acopf(&case, None, &NlpOptions::default()).unwrap().state;
    let ranked = screening::rank(&case, &base).unwrap();
    let mut brute: Vec<(String, f64)> =
        (0..case.contingencies.len()).map(|k| (case.contingencies[k].id.clone(), common::severity_oracle(&case, &base, k))).collect();
    brute.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let order_ok = ranked.iter().map(|r| &r.id).eq(brute.iter().map(|b| &b.0));
    let worst = ranked.iter().zip(&brute).map(|(r, b)| (r.severity - b.1).abs() / b.1.abs().max(1.0)).fold(0.0, f64::max);
    let pen = case.penalties(StateId::Contingency(0));
    let hand = common::pwl(pen.p.lengths(), pen.p.slopes(), 1.0);
    let hand_ok = (hand - 48_252_000.0).abs() <= 1e-9 * 48_252_000.0
        && (pen.p.eval(1.0).unwrap() - 48_252_000.0).abs() <= 1e-9 * 48_252_000.0;
    outcome(order_ok && worst <= 1e-9 && hand_ok, format!("order match {order_ok}, max relative severity error {worst:.1e}, c(1.0) = {hand}"))
}

fn recourse_exactness() -> Outcome {
    let params = SmoothingParams::default();
    let mut worst_v: f64 = 0.0;
    let mut worst_p: f64 = 0.0;
    let mut island_err = f64::NAN;
    for case in [bundled::five_bus(), bundled::three_bus()] {
        let base = solve_base_acopf(&case, None, &NlpOptions::default()).unwrap().state;
        for k in 0..case.contingencies.len() {
            let sol = solve_contingency(&case, k, &base, &params, &NlpOptions::default()).unwrap();
            let (a, r) = disjunction_violation(&case, k, &base, &sol.state).unwrap();
            worst_v = worst_v.max(a).max(r);
            let again = state_penalty(&case, &sol.state).unwrap();
            worst_p = worst_p.max((sol.penalty - again).abs() / again.abs().max(1e-300));
            if sol.contingency == "L5-out" {
                let bus = &case.buses[case.bus_index("5").unwrap()];
                let pen = case.penalties(StateId::Contingency(k));
                let shed = common::pwl(pen.p.lengths(), pen.p.slopes(), bus.load_p) + common::pwl(pen.q.lengths(), pen.q.slopes(), bus.load_q);
                island_err = (sol.penalty - shed).abs() / shed;
            }
        }
    }
    outcome(
        worst_v <= 1e-6 && worst_p <= 1e-9 && island_err <= 1e-6,
        format!("max disjunction violation {worst_v:.1e}, max penalty mismatch {worst_p:.1e}, islanding relative error {island_err:.1e}"),
    )
}

fn nlp_oracle() -> Outcome {
    let case = bundled::three_bus();
    let sol = solve_base_acopf(&case, None, &NlpOptions::default()).unwrap();
    let solver = scopf::model::generation_cost(&case, &sol.state).unwrap() + state_penalty(&case, &sol.state).unwrap();
    let grid = common::three_bus_grid_optimum(&case);
    let gap = (solver - grid).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut models = Vec::new();
    let mut m = Model::new();
    add_state(&mut m, &case, StateId::Base, BlockObjective { generation: 1.0, penalty: 1.0 }).unwrap();
    models.push(m);
    let five = bundled::five_bus();
    let mut m = Model::new();
    let vars = add_state(&mut m, &five, StateId::Contingency(0), BlockObjective { generation: 0.0, penalty: 1.0 }).unwrap();
    let base = solve_base_acopf(&five, None, &NlpOptions::default()).unwrap().state;
    let src = scopf::formulation::CouplingSource::fixed(&five, &vars.layout, &base);
    scopf::formulation::add_coupling(&mut m, &five, &vars, &src, &scopf::formulation::CouplingKind::Smoothed { eps: 1e-2 }).unwrap();
    models.push(m);
    let (mut ge, mut je): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        for m in &models {
            let x: Vec<f64> = m
                .lo
                .iter()
                .zip(&m.hi)
                .map(|(&l, &h)| match (l.is_finite(), h.is_finite()) {
                    (true, true) if h > l => l + (h - l) * rng.gen_range(0.05..0.95),
                    (true, true) => l,
                    (true, false) => l + rng.gen_range(0.01..1.0),
                    (false, true) => h - rng.gen_range(0.01..1.0),
                    (false, false) => rng.gen_range(-0.5..0.5),
                })
                .collect();
            let (g, j) = common::fd_errors(m, &x);
            ge = ge.max(g);
            je = je.max(j);
        }
    }
    outcome(
        gap <= 1e-3 && ge <= 1e-5 && je <= 1e-5,
        format!("solver {solver:.6} vs grid {grid:.6} (gap {gap:.1e}); max relative error gradient {ge:.1e}, Jacobian {je:.1e}"),
    )
}

fn robustness() -> Outcome {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let case_path = dir.path().join("case5.json");
    fs::write(&case_path, bundled::CASE5_JSON).unwrap();
    let case = bundled::five_bus();
    let run = |name: &str, limit: Duration, fault: Option<FaultInjection>| {
        let out = dir.path().join(name);
        let config = RunConfig {
            case_path: case_path.clone(),
            out_dir: out.clone(),
            workers: 2,
            phase1_limit: limit,
            seed: 11,
            jitter: Some(Duration::from_millis(15)),
            fault,
            ..RunConfig::default()
        };
        let wall_start = SystemTime::now();
        let (base, p1) = run_phase1(&config).unwrap();
        let mtime = fs::metadata(out.join(BASE_FILE)).unwrap().modified().unwrap();
        let before_deadline = mtime <= wall_start + limit;
        let p2 = run_phase2(&config, Some(base)).unwrap();
        (out, p1, p2, before_deadline)
    };
    let complete = |out: &std::path::Path| {
        let recs = files::read_ctg(&out.join(CTG_FILE), &case).unwrap();
        let mut idx: Vec<usize> = recs.iter().map(|r| r.index).collect();
        idx.sort();
        idx == (0..case.contingencies.len()).collect::<Vec<_>>()
    };
    let fault = Some(FaultInjection { contingency: "G2-out".into(), crashes: 1 });
    let (short, p1, _, short_ok) = run("short", Duration::from_secs(1), fault.clone());
    let short_complete = complete(&short) && files::read_base(&short.join(BASE_FILE), &case).is_ok();
    let log = fs::read_to_string(short.join(LOG_FILE)).unwrap();
    let requeues = log.lines().filter(|l| l.contains("\"event\":\"requeue\"")).count();
    let (a, _, pa, a_ok) = run("a", Duration::from_secs(60), fault.clone());
    let (b, _, pb, b_ok) = run("b", Duration::from_secs(60), fault);
    let same = |f: &str| fs::read(a.join(f)).unwrap() == fs::read(b.join(f)).unwrap();
    let identical = same(BASE_FILE) && same(CTG_FILE);
    let conserved = pa.received == pa.forwarded && pb.received == pb.forwarded;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        short_ok && a_ok && b_ok && short_complete && complete(&a) && complete(&b) && requeues == 1 && identical && conserved && secs < 300.0,
        format!(
            "1 s limit: base written at {:.3} s from {:?}, complete {short_complete}, {requeues} requeue; seeded runs identical {identical}; conserved {conserved}; {secs:.1} s",
            p1.written_at, p1.source
        ),
    )
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|info| eprintln!("{info}")));
    let admm = admm_run();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("smoothing bounds", Box::new(smoothing_bounds)),
        ("relaxation containment", Box::new(containment)),
        ("ADMM identities", Box::new(|| admm_identities(&admm))),
        ("AL monotonicity and lower bound", Box::new(|| al_monotone(&admm))),
        ("consensus convergence", Box::new(|| consensus(&admm))),
        ("complexity-bound consistency", Box::new(|| complexity(&admm))),
        ("ranking oracle", Box::new(ranking_oracle)),
        ("recourse exactness", Box::new(recourse_exactness)),
        ("NLP oracle equivalence", Box::new(nlp_oracle)),
        ("orchestrator robustness", Box::new(robustness)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        failed += !o.pass as usize;
        println!("criterion {:>2} {:<32} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
