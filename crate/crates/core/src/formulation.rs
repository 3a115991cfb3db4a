//! NLP models of single states.
//!
//! A state block holds the flat state variables, one variable per branch end
//! flow (tied to the voltages by equality rows), linear nodal balances, the
//! quadratic branch limits and piece variables that turn every piecewise-linear
//! cost into a linear objective.

use crate::error::{Error, Result};
use crate::model::{
    flat_bounds, rebalance_slacks, state_flows, BranchRef, End, NetworkCase, PwlCost, StateId, StateLayout,
    StateVector,
};
use crate::nlp::{self, Model, NlpOptions, NlpProblem, NlpResult, Scalar, Tag, Term};

/// What a state block contributes to the objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockObjective {
    /// Weight on the generation cost (base state only).
    pub generation: f64,
    /// Weight on the slack penalty `c_k^σ`.
    pub penalty: f64,
}

/// Variable indices of one state inside a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct StateVars {
    pub layout: StateLayout,
    /// First index of the flat vector; entries are contiguous.
    pub offset: usize,
    pub flat_len: usize,
    pub delta: Option<usize>,
    /// Per branch: `[p_o, q_o, p_d, q_d]` variable indices.
    pub flows: Vec<[usize; 4]>,
    /// Piece variables and the pwl they split.
    splits: Vec<Split>,
    num_buses: usize,
}

impl StateVars {
    pub fn v(&self, bus: usize) -> usize {
        self.offset + bus
    }

    pub fn theta(&self, bus: usize) -> usize {
        self.offset + self.num_buses + bus
    }

    /// Variable of `p` for the generator at layout position `pos`.
    pub fn p(&self, pos: usize) -> usize {
        self.offset + 6 * self.num_buses + pos
    }

    pub fn q(&self, pos: usize) -> usize {
        self.offset + 6 * self.num_buses + self.layout.gens.len() + pos
    }

    pub fn flat(&self, j: usize) -> usize {
        self.offset + j
    }

    /// State vector read from a full model point.
    pub fn extract(&self, case: &NetworkCase, x: &[f64]) -> Result<StateVector> {
        let delta = self.delta.map_or(0.0, |d| x[d]);
        StateVector::from_vec(case, &self.layout, &x[self.offset..self.offset + self.flat_len], delta)
    }

    /// Writes `sv` and the matching auxiliary values into `x`.
    pub fn write_start(&self, case: &NetworkCase, sv: &StateVector, x: &mut [f64]) {
        let flat = sv.to_vec();
        x[self.offset..self.offset + self.flat_len].copy_from_slice(&flat);
        if let Some(d) = self.delta {
            x[d] = sv.delta;
        }
        for (f, ids) in state_flows(case, &self.layout, sv).iter().zip(&self.flows) {
            x[ids[0]] = f.p_o;
            x[ids[1]] = f.q_o;
            x[ids[2]] = f.p_d;
            x[ids[3]] = f.q_d;
        }
        for sp in &self.splits {
            let mut rest: f64 = sp.inputs.iter().map(|&i| x[i]).sum::<f64>().max(0.0);
            for (&pv, &len) in sp.pieces.iter().zip(&sp.lengths) {
                let take = rest.min(len);
                x[pv] = take;
                rest -= take;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Split {
    inputs: Vec<usize>,
    pieces: Vec<usize>,
    lengths: Vec<f64>,
    slack: bool,
}

/// Adds one piece variable per pwl piece with `Σ inputs − Σ pieces = 0` and the
/// weighted linear cost.
fn add_pwl(model: &mut Model, inputs: &[usize], cost: &PwlCost, weight: f64, slack: bool) -> Split {
    let mut terms: Vec<Term> = inputs.iter().map(|&i| Term::linear(i, 1.0)).collect();
    let mut pieces = Vec::new();
    let mut lengths = Vec::new();
    for (len, slope) in cost.pieces() {
        let s = model.add_var(0.0, len);
        terms.push(Term::linear(s, -1.0));
        if weight != 0.0 && slope != 0.0 {
            model.add_objective(Term::linear(s, weight * slope));
        }
        pieces.push(s);
        lengths.push(len);
    }
    model.add_eq(terms, 0.0, Tag::PwlSplit);
    Split { inputs: inputs.to_vec(), pieces, lengths, slack }
}

/// Appends the variables and constraints of `state` to `model`.
pub fn add_state(model: &mut Model, case: &NetworkCase, state: StateId, obj: BlockObjective) -> Result<StateVars> {
    let layout = StateLayout::new(case, state)?;
    let nb = case.num_buses();
    let ng = layout.gens.len();
    let (lo, hi) = flat_bounds(case, &layout);
    let offset = model.lo.len();
    for (l, h) in lo.iter().zip(&hi) {
        model.add_var(*l, *h);
    }
    let flat_len = lo.len();
    let delta = match state {
        StateId::Base => None,
        StateId::Contingency(_) => {
            let b = case.delta_bound();
            Some(model.add_var(-b, b))
        }
    };
    let mut sv = StateVars { layout, offset, flat_len, delta, flows: Vec::new(), splits: Vec::new(), num_buses: nb };

    // Branch flows.
    let mut out_p: Vec<Vec<Term>> = vec![Vec::new(); nb];
    let mut out_q: Vec<Vec<Term>> = vec![Vec::new(); nb];
    for (pos, &br) in sv.layout.branches.iter().enumerate() {
        let (o, d) = case.branch_ends(br);
        let params = case.branch_params(br);
        let ids = [0; 4].map(|_| model.add_var(f64::NEG_INFINITY, f64::INFINITY));
        for (k, end) in [End::Origin, End::Destination].into_iter().enumerate() {
            let (a, b) = if end == End::Origin { (o, d) } else { (d, o) };
            let (pc, qc) = params.end_coefficients(end);
            for (c, var) in [(pc, ids[2 * k]), (qc, ids[2 * k + 1])] {
                let terms = vec![
                    Term::linear(var, 1.0),
                    Term::Product { a: sv.v(a), b: sv.v(a), coef: -c.sq },
                    Term::Trig {
                        va: sv.v(a),
                        vb: sv.v(b),
                        ta: sv.theta(a),
                        tb: sv.theta(b),
                        shift: c.shift,
                        cos_coef: -c.cos,
                        sin_coef: -c.sin,
                    },
                ];
                model.add_eq(terms, 0.0, Tag::FlowDefinition);
            }
            out_p[a].push(Term::linear(ids[2 * k], -1.0));
            out_q[a].push(Term::linear(ids[2 * k + 1], -1.0));
        }
        let s_var = sv.flat(6 * nb + 2 * ng + pos);
        let limit = sv.layout.branch_limit(case, br);
        for (k, bus) in [(0, o), (1, d)] {
            let mut terms = vec![
                Term::Product { a: ids[2 * k], b: ids[2 * k], coef: 1.0 },
                Term::Product { a: ids[2 * k + 1], b: ids[2 * k + 1], coef: 1.0 },
            ];
            terms.push(match br {
                BranchRef::Line(_) => {
                    Term::Smooth { args: vec![(sv.v(bus), limit), (s_var, 1.0)], offset: 0.0, scale: -1.0, func: Scalar::Square }
                }
                BranchRef::Transformer(_) => {
                    Term::Smooth { args: vec![(s_var, 1.0)], offset: limit, scale: -1.0, func: Scalar::Square }
                }
            });
            model.add_constraint(terms, f64::NEG_INFINITY, 0.0, Tag::BranchLimit);
        }
        sv.flows.push(ids);
    }

    // Nodal balances.
    for i in 0..nb {
        let mut tp = std::mem::take(&mut out_p[i]);
        let mut tq = std::mem::take(&mut out_q[i]);
        for (pos, &g) in sv.layout.gens.iter().enumerate() {
            if case.generators[g].bus == i {
                tp.push(Term::linear(sv.p(pos), 1.0));
                tq.push(Term::linear(sv.q(pos), 1.0));
            }
        }
        tp.push(Term::linear(sv.flat(2 * nb + i), -1.0));
        tp.push(Term::linear(sv.flat(3 * nb + i), 1.0));
        tq.push(Term::linear(sv.flat(4 * nb + i), -1.0));
        tq.push(Term::linear(sv.flat(5 * nb + i), 1.0));
        model.add_eq(tp, case.buses[i].load_p, Tag::NodalActive);
        model.add_eq(tq, case.buses[i].load_q, Tag::NodalReactive);
    }

    // Costs.
    let pen = case.penalties(state);
    for i in 0..nb {
        let split = add_pwl(model, &[sv.flat(2 * nb + i), sv.flat(3 * nb + i)], &pen.p, obj.penalty, true);
        sv.splits.push(split);
        let split = add_pwl(model, &[sv.flat(4 * nb + i), sv.flat(5 * nb + i)], &pen.q, obj.penalty, true);
        sv.splits.push(split);
    }
    for pos in 0..sv.layout.branches.len() {
        let split = add_pwl(model, &[sv.flat(6 * nb + 2 * ng + pos)], &pen.s, obj.penalty, true);
        sv.splits.push(split);
    }
    if obj.generation != 0.0 {
        if state != StateId::Base {
            return Err(Error::invalid("generation cost belongs to the base state"));
        }
        for (pos, &g) in sv.layout.gens.clone().iter().enumerate() {
            let split = add_pwl(model, &[sv.p(pos)], &case.generators[g].cost, obj.generation, false);
            sv.splits.push(split);
        }
    }
    Ok(sv)
}

/// A base-state quantity seen by a contingency block: a fixed value or a
/// model variable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Operand {
    Const(f64),
    Var(usize),
}

impl Operand {
    pub fn value(self, x: &[f64]) -> f64 {
        match self {
            Operand::Const(c) => c,
            Operand::Var(i) => x[i],
        }
    }

    fn term(self, coef: f64) -> Term {
        match self {
            Operand::Const(c) => Term::Constant(coef * c),
            Operand::Var(i) => Term::linear(i, coef),
        }
    }

    /// Splits into smooth-term arguments and a constant offset.
    fn smooth_arg(self, coef: f64, args: &mut Vec<(usize, f64)>) -> f64 {
        match self {
            Operand::Const(c) => coef * c,
            Operand::Var(i) => {
                args.push((i, coef));
                0.0
            }
        }
    }
}

/// Base values a contingency block couples to, per in-service generator of
/// the contingency layout.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSource {
    pub p0: Vec<Operand>,
    pub v0: Vec<Operand>,
}

impl CouplingSource {
    /// Fixed base values from a base state vector.
    pub fn fixed(case: &NetworkCase, layout: &StateLayout, base: &StateVector) -> Self {
        let p0 = layout.gens.iter().map(|&g| Operand::Const(base.p[g])).collect();
        let v0 = layout.gens.iter().map(|&g| Operand::Const(base.v[case.generators[g].bus])).collect();
        Self { p0, v0 }
    }
}

/// Active response restriction of one generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActiveMode {
    /// `p = p0 + αΔ` inside the box.
    Follow,
    /// `p = p̲` and `p0 + αΔ ≤ p̲`.
    AtLower,
    /// `p = p̄` and `p0 + αΔ ≥ p̄`.
    AtUpper,
}

/// Reactive response restriction of one generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReactiveMode {
    /// `v = v0`, `q` free in its box.
    HoldVoltage,
    /// `q = q̄` and `v ≤ v0`.
    AtUpper,
    /// `q = q̲` and `v ≥ v0`.
    AtLower,
}

/// How the generator response disjunctions are represented.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingKind {
    /// Continuous relaxation of the mixed-integer active response and
    /// voltage held at the base value.
    BigM,
    /// Softplus response and the relaxed PV/PQ set.
    Smoothed { eps: f64 },
    /// Each generator pinned to one branch of each disjunction.
    Restricted { active: Vec<ActiveMode>, reactive: Vec<ReactiveMode> },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Aux {
    None,
    Binaries { lo: usize, hi: usize },
    Deviations { plus: usize, minus: usize },
}

/// Auxiliary variables created by [`add_coupling`].
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingVars {
    aux: Vec<Aux>,
    source: CouplingSource,
}

impl CouplingVars {
    /// Fills the auxiliary variables consistently with the state values in `x`.
    pub fn write_start(&self, case: &NetworkCase, vars: &StateVars, x: &mut [f64]) {
        for (pos, aux) in self.aux.iter().enumerate() {
            match *aux {
                Aux::None => {}
                Aux::Binaries { lo, hi } => {
                    x[lo] = 0.0;
                    x[hi] = 0.0;
                }
                Aux::Deviations { plus, minus } => {
                    let bus = case.generators[vars.layout.gens[pos]].bus;
                    let d = x[vars.v(bus)] - self.source.v0[pos].value(x);
                    x[plus] = d.max(0.0);
                    x[minus] = (-d).max(0.0);
                }
            }
        }
    }
}

/// Adds the active and reactive response constraints of contingency block
/// `vars` against `source`.
pub fn add_coupling(
    model: &mut Model,
    case: &NetworkCase,
    vars: &StateVars,
    source: &CouplingSource,
    kind: &CouplingKind,
) -> Result<CouplingVars> {
    let delta = vars.delta.ok_or_else(|| Error::invalid("coupling needs a contingency state"))?;
    let ng = vars.layout.gens.len();
    if source.p0.len() != ng || source.v0.len() != ng {
        return Err(Error::dim("coupling source does not match the generator count"));
    }
    if let CouplingKind::Restricted { active, reactive } = kind {
        if active.len() != ng || reactive.len() != ng {
            return Err(Error::dim("restriction does not match the generator count"));
        }
    }
    let dbound = case.delta_bound();
    let mut aux = Vec::with_capacity(ng);
    for pos in 0..ng {
        let gen = &case.generators[vars.layout.gens[pos]];
        let (p, q, v) = (vars.p(pos), vars.q(pos), vars.v(gen.bus));
        let (p0, v0) = (source.p0[pos], source.v0[pos]);
        let span = case.buses[gen.bus].v_hi - case.buses[gen.bus].v_lo;
        // p − p0 − αΔ
        let gap = |model_p: f64| vec![Term::linear(p, model_p), p0.term(-1.0), Term::linear(delta, -gen.alpha)];
        match kind {
            CouplingKind::BigM => {
                let m = (gen.p_hi - gen.p_lo) + gen.alpha * dbound;
                let lo = model.add_var(0.0, 1.0);
                let hi = model.add_var(0.0, 1.0);
                let mut t = gap(1.0);
                t.push(Term::linear(hi, m));
                model.add_constraint(t, 0.0, f64::INFINITY, Tag::ActiveCoupling);
                let mut t = gap(1.0);
                t.push(Term::linear(lo, -m));
                model.add_constraint(t, f64::NEG_INFINITY, 0.0, Tag::ActiveCoupling);
                model.add_constraint(vec![Term::linear(p, 1.0), Term::linear(hi, -m)], gen.p_hi - m, f64::INFINITY, Tag::ActiveCoupling);
                model.add_constraint(vec![Term::linear(p, 1.0), Term::linear(lo, m)], f64::NEG_INFINITY, gen.p_lo + m, Tag::ActiveCoupling);
                model.add_constraint(vec![Term::linear(lo, 1.0), Term::linear(hi, 1.0)], f64::NEG_INFINITY, 1.0, Tag::ActiveCoupling);
                model.add_eq(vec![Term::linear(v, 1.0), v0.term(-1.0)], 0.0, Tag::ReactiveCoupling);
                aux.push(Aux::Binaries { lo, hi });
            }
            CouplingKind::Smoothed { eps } => {
                let mut args = vec![(delta, gen.alpha)];
                let offset = p0.smooth_arg(1.0, &mut args);
                let func = Scalar::ResponseFull { lo: gen.p_lo, hi: gen.p_hi, eps: *eps };
                model.add_eq(
                    vec![Term::linear(p, 1.0), Term::Smooth { args, offset, scale: -1.0, func }],
                    0.0,
                    Tag::ActiveCoupling,
                );
                let plus = model.add_var(0.0, span);
                let minus = model.add_var(0.0, span);
                model.add_eq(
                    vec![Term::linear(v, 1.0), v0.term(-1.0), Term::linear(plus, -1.0), Term::linear(minus, 1.0)],
                    0.0,
                    Tag::ReactiveCoupling,
                );
                let sp = Scalar::Softplus { eps: *eps };
                let cap = eps * std::f64::consts::LN_2;
                model.add_constraint(
                    vec![
                        Term::linear(plus, 1.0),
                        Term::Smooth { args: vec![(plus, 1.0), (q, -1.0)], offset: gen.q_lo, scale: -1.0, func: sp },
                    ],
                    f64::NEG_INFINITY,
                    cap,
                    Tag::ReactiveCoupling,
                );
                model.add_constraint(
                    vec![
                        Term::linear(minus, 1.0),
                        Term::Smooth { args: vec![(minus, 1.0), (q, 1.0)], offset: -gen.q_hi, scale: -1.0, func: sp },
                    ],
                    f64::NEG_INFINITY,
                    cap,
                    Tag::ReactiveCoupling,
                );
                aux.push(Aux::Deviations { plus, minus });
            }
            CouplingKind::Restricted { active, reactive } => {
                let t = gap(0.0);
                match active[pos] {
                    ActiveMode::Follow => {
                        model.add_eq(gap(1.0), 0.0, Tag::Restriction);
                    }
                    ActiveMode::AtLower => {
                        model.fix(p, gen.p_lo);
                        model.add_constraint(t, -gen.p_lo, f64::INFINITY, Tag::Restriction);
                    }
                    ActiveMode::AtUpper => {
                        model.fix(p, gen.p_hi);
                        model.add_constraint(t, f64::NEG_INFINITY, -gen.p_hi, Tag::Restriction);
                    }
                }
                let dv = vec![Term::linear(v, 1.0), v0.term(-1.0)];
                match reactive[pos] {
                    ReactiveMode::HoldVoltage => {
                        model.add_eq(dv, 0.0, Tag::Restriction);
                    }
                    ReactiveMode::AtUpper => {
                        model.fix(q, gen.q_hi);
                        model.add_constraint(dv, f64::NEG_INFINITY, 0.0, Tag::Restriction);
                    }
                    ReactiveMode::AtLower => {
                        model.fix(q, gen.q_lo);
                        model.add_constraint(dv, 0.0, f64::INFINITY, Tag::Restriction);
                    }
                }
                aux.push(Aux::None);
            }
        }
    }
    Ok(CouplingVars { aux, source: source.clone() })
}

/// Slack values below this are candidates for being fixed at zero by [`polish`].
pub const POLISH_THRESHOLDS: [f64; 2] = [1e-3, 1e-5];

/// Re-solves `model` from `x` with every small slack group of `states` fixed
/// at zero, trying each of [`POLISH_THRESHOLDS`] in turn. Returns `None` when
/// nothing is fixed or no re-solve reaches a feasible point at least as good.
pub fn polish(model: &Model, states: &[&StateVars], x: &[f64], opts: &NlpOptions) -> Option<NlpResult> {
    let before = model.objective(x);
    let mut last_fixed = usize::MAX;
    for threshold in POLISH_THRESHOLDS {
        let mut m = model.clone();
        let mut fixed = 0;
        for sv in states {
            for sp in sv.splits.iter().filter(|s| s.slack) {
                if sp.inputs.iter().all(|&i| x[i].abs() < threshold) {
                    for &i in sp.inputs.iter().chain(&sp.pieces) {
                        m.fix(i, 0.0);
                    }
                    fixed += 1;
                }
            }
        }
        if fixed == 0 || fixed == last_fixed {
            continue;
        }
        last_fixed = fixed;
        m.drop_constant_rows();
        let mut start = x.to_vec();
        for i in 0..start.len() {
            if m.lo[i] == m.hi[i] {
                start[i] = m.lo[i];
            }
        }
        let o = NlpOptions { mu_init: 1e-4, tol: opts.tol.min(1e-9), max_iter: opts.max_iter.min(100), ..*opts };
        let r = nlp::solve(&m, &start, &o, None);
        let feasible = r.converged() || (r.violation <= opts.tol && r.x.iter().all(|v| v.is_finite()));
        if feasible && r.objective <= before + 1e-6 * (1.0 + before.abs()) {
            return Some(r);
        }
    }
    None
}

/// Result of a single-state solve.
#[derive(Debug, Clone)]
pub struct StateSolution {
    pub state: StateVector,
    pub result: NlpResult,
}

/// Base-state ACOPF: generation cost plus base penalty, from a flat start or
/// a given starting state.
pub fn solve_base_acopf(case: &NetworkCase, start: Option<&StateVector>, opts: &NlpOptions) -> Result<StateSolution> {
    let mut model = Model::new();
    let vars = add_state(&mut model, case, StateId::Base, BlockObjective { generation: 1.0, penalty: 1.0 })?;
    let init = match start {
        Some(s) => s.clone(),
        None => StateVector::flat_start(case, &vars.layout),
    };
    let mut x0 = vec![0.0; model.lo.len()];
    vars.write_start(case, &init, &mut x0);
    let mut result = nlp::solve(&model, &x0, opts, None);
    if result.converged() {
        if let Some(r) = polish(&model, &[&vars], &result.x, opts) {
            result = NlpResult { status: result.status, ..r };
        }
    }
    let mut state = vars.extract(case, &result.x)?;
    rebalance_slacks(case, &mut state)?;
    Ok(StateSolution { state, result })
}
