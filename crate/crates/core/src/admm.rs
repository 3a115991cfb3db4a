//! Two-level ADMM for the base case.
//!
//! Each selected contingency keeps a copy `x_k^base` of the base vector `x_0`.
//! The consensus `x_0 = x_k^base` is relaxed with a slack `z_k` that carries
//! an outer multiplier `λ_k` and penalty `β`; the relaxation is solved by a
//! three-block ADMM (base block, contingency blocks, slacks) and the outer
//! loop updates `λ` and `β` until the copies agree.
//!
//! The driver is generic over [`Subproblems`]. [`ScopfSubproblems`] builds the
//! power-system blocks; any other implementation (a box QP, say) runs through
//! the same code.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formulation::{
    add_coupling, add_state, polish, solve_base_acopf, BlockObjective, CouplingKind, CouplingSource, CouplingVars, Operand,
    StateVars,
};
use crate::model::{flat_bounds, generation_cost, state_penalty, NetworkCase, StateId, StateLayout, StateVector};
use crate::nlp::{self, Model, NlpOptions, Term, WarmStart};
use crate::recourse::{self, CONTINUATION_EPSILON};

/// How a contingency block couples its response to the base copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingMode {
    Smoothed,
    BigM,
}

impl FromStr for CouplingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "smoothed" => Ok(CouplingMode::Smoothed),
            "bigm" | "big-m" => Ok(CouplingMode::BigM),
            _ => Err(Error::invalid(format!("unknown coupling mode {s:?}"))),
        }
    }
}

impl fmt::Display for CouplingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingMode::Smoothed => "smoothed",
            CouplingMode::BigM => "bigm",
        })
    }
}

/// Outer penalty schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaRule {
    /// `β_r = β_0 c^r`.
    Geometric,
    /// Starts at `β_0`; multiplied by `factor` whenever the consensus residual
    /// is above `ratio` times its previous value.
    Practical { factor: f64, ratio: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmConfig {
    /// `ρ = τβ`.
    pub tau: f64,
    pub beta0: f64,
    /// Growth factor of the geometric rule and base of the outer bound.
    pub c: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    /// Inner tolerance at round `r` is `inner_tol / r`.
    pub inner_tol: f64,
    pub consensus_tol: f64,
    /// Inner loop also waits for the dual residuals `d_0`, `d_k`.
    pub stationary_inner: bool,
    pub beta_rule: BetaRule,
    pub max_inner: usize,
    pub max_total_inner: usize,
    pub max_outer: usize,
    pub time_limit: Option<Duration>,
    pub coupling: CouplingMode,
    /// Smoothing width of the smoothed coupling.
    pub epsilon: f64,
    /// Floor on the measured descent coefficient in the bounds.
    pub gamma_min: f64,
    /// Threads for the contingency solves; the global pool when `None`.
    pub workers: Option<usize>,
    pub record_history: bool,
    pub nlp: NlpOptions,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        Self {
            tau: 2.0,
            beta0: 2000.0,
            c: 8.0,
            lambda_lo: -1e7,
            lambda_hi: 1e7,
            inner_tol: 0.1,
            consensus_tol: 1e-4,
            stationary_inner: false,
            beta_rule: BetaRule::Practical { factor: 8.0, ratio: 0.5 },
            max_inner: 200,
            max_total_inner: 1000,
            max_outer: 30,
            time_limit: None,
            coupling: CouplingMode::BigM,
            epsilon: 1e-6,
            gamma_min: 1e-3,
            workers: None,
            record_history: false,
            nlp: NlpOptions::default(),
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 1.0) {
            return Err(Error::invalid("tau must exceed 1"));
        }
        if !(self.beta0 > 0.0) {
            return Err(Error::invalid("beta0 must be positive"));
        }
        if !(self.c > 1.0) {
            return Err(Error::invalid("c must exceed 1"));
        }
        if !(self.lambda_lo <= self.lambda_hi) {
            return Err(Error::invalid("lambda bounds are inverted"));
        }
        if !(self.inner_tol > 0.0 && self.consensus_tol > 0.0 && self.epsilon > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if let BetaRule::Practical { factor, ratio } = self.beta_rule {
            if !(factor > 1.0 && ratio > 0.0) {
                return Err(Error::invalid("practical beta rule needs factor > 1 and ratio > 0"));
            }
        }
        Ok(())
    }

    pub fn inner_tol(&self, r: usize) -> f64 {
        self.inner_tol / r.max(1) as f64
    }

    /// Penalty of round `r ≥ 1` under the geometric rule, or of round 1 under
    /// the practical rule.
    pub fn initial_beta(&self) -> f64 {
        match self.beta_rule {
            BetaRule::Geometric => self.beta0 * self.c,
            BetaRule::Practical { .. } => self.beta0,
        }
    }
}

/// Point of one contingency block: its own variables and its base copy.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPoint {
    pub local: Vec<f64>,
    pub copy: Vec<f64>,
}

/// The two kinds of block minimization the ADMM needs.
pub trait Subproblems: Sync {
    /// Per-block cache carried between solves.
    type Warm: Send + Default;

    fn dim(&self) -> usize;
    fn num_blocks(&self) -> usize;
    /// `f_0(x_0)`.
    fn base_cost(&self, x0: &[f64]) -> f64;
    /// `f_k(x_k)`.
    fn block_cost(&self, k: usize, p: &BlockPoint) -> f64;
    /// Lower bound of `f_0 + Σ f_k` used by the complexity bounds.
    fn cost_lower_bound(&self) -> f64;
    /// Box of the base vector; the copies share it.
    fn bounds(&self) -> (Vec<f64>, Vec<f64>);
    fn initial_base(&self) -> Result<Vec<f64>>;
    /// A point of block `k` whose copy equals `x0`.
    fn initial_block(&self, k: usize, x0: &[f64]) -> Result<BlockPoint>;
    /// Minimizes `f_0(x) + ⟨lin, x⟩ + (weight/2)‖x − center‖²` over `X_0`.
    fn solve_base(&self, start: &[f64], lin: &[f64], weight: f64, center: &[f64], warm: &mut Self::Warm) -> Option<Vec<f64>>;
    /// Minimizes `f_k(x_k) − ⟨y, copy⟩ + (ρ/2)‖copy − center‖²` over `X_k`.
    fn solve_block(
        &self,
        k: usize,
        start: &BlockPoint,
        y: &[f64],
        rho: f64,
        center: &[f64],
        warm: &mut Self::Warm,
    ) -> Option<BlockPoint>;
}

/// Consensus variables of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingBlock {
    pub local: Vec<f64>,
    pub x_base_copy: Vec<f64>,
    pub z: Vec<f64>,
    pub y: Vec<f64>,
    pub lambda: Vec<f64>,
}

impl CouplingBlock {
    fn point(&self) -> BlockPoint {
        BlockPoint { local: self.local.clone(), copy: self.x_base_copy.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x0: Vec<f64>,
    pub blocks: Vec<CouplingBlock>,
    pub beta: f64,
    pub rho: f64,
    /// Outer round, from 1.
    pub r: usize,
    /// Inner iteration within the round.
    pub t: usize,
}

/// Residuals of one inner iteration, all in the ∞-norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub d0: f64,
    pub dk: Vec<f64>,
    /// `x_0 − x_k^base + z_k`.
    pub s: Vec<f64>,
    /// `x_0 − x_k^base`.
    pub r: Vec<f64>,
}

impl Residuals {
    pub fn max_dk(&self) -> f64 {
        self.dk.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_s(&self) -> f64 {
        self.s.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_r(&self) -> f64 {
        self.r.iter().copied().fold(0.0, f64::max)
    }

    pub fn max(&self) -> f64 {
        self.d0.max(self.max_dk()).max(self.max_s())
    }

    /// Every residual at most `eps`.
    pub fn is_stationary(&self, eps: f64) -> bool {
        self.max() <= eps
    }
}

fn inf_norm<'a>(v: impl IntoIterator<Item = &'a f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dual and primal residuals from two consecutive iterates:
/// `d_0 = ρ Σ_k (x_k^base,t − x_k^base,t+1 + z_k^t+1 − z_k^t)`,
/// `d_k = ρ (z_k^t+1 − z_k^t)`, `s_k = x_0 − x_k^base + z_k`, `r_k = x_0 − x_k^base`.
pub fn stationarity_residuals(
    rho: f64,
    x0: &[f64],
    prev_copy: &[Vec<f64>],
    prev_z: &[Vec<f64>],
    copy: &[Vec<f64>],
    z: &[Vec<f64>],
) -> Residuals {
    let n = x0.len();
    let mut d0 = vec![0.0; n];
    let mut dk = Vec::with_capacity(copy.len());
    let mut s = Vec::with_capacity(copy.len());
    let mut r = Vec::with_capacity(copy.len());
    for k in 0..copy.len() {
        let mut dkk: f64 = 0.0;
        let mut sk: f64 = 0.0;
        let mut rk: f64 = 0.0;
        for j in 0..n {
            let dz = z[k][j] - prev_z[k][j];
            d0[j] += rho * (prev_copy[k][j] - copy[k][j] + dz);
            dkk = dkk.max((rho * dz).abs());
            sk = sk.max((x0[j] - copy[k][j] + z[k][j]).abs());
            rk = rk.max((x0[j] - copy[k][j]).abs());
        }
        dk.push(dkk);
        s.push(sk);
        r.push(rk);
    }
    Residuals { d0: inf_norm(&d0), dk, s, r }
}

/// `L_ρ` at the current iterate.
pub fn augmented_lagrangian<S: Subproblems>(sub: &S, st: &AdmmState) -> f64 {
    let mut l = sub.base_cost(&st.x0);
    for (k, b) in st.blocks.iter().enumerate() {
        l += sub.block_cost(k, &b.point());
        l += dot(&b.lambda, &b.z) + 0.5 * st.beta * dot(&b.z, &b.z);
        let s: Vec<f64> = (0..st.x0.len()).map(|j| st.x0[j] - b.x_base_copy[j] + b.z[j]).collect();
        l += dot(&b.y, &s) + 0.5 * st.rho * dot(&s, &s);
    }
    l
}

/// One row of the per-iteration diagnostics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    pub r: usize,
    pub al: f64,
    pub max_s: f64,
    pub max_r: f64,
    pub d0: f64,
    pub max_dk: f64,
    pub beta: f64,
    pub wall_time: f64,
    /// Base subproblem value did not increase.
    pub base_descent: bool,
    /// Every contingency subproblem decreased by at least `γ_min β ‖Δx^base‖²`.
    pub ctg_descent: bool,
    /// Smallest observed descent coefficient over the blocks that moved.
    pub gamma: Option<f64>,
    pub base_fallback: bool,
    pub ctg_fallbacks: usize,
    /// `max |λ + βz + y|`.
    pub z_identity: f64,
    /// `max |y⁺ − y − β(z − z⁺)|`.
    pub dual_identity: f64,
}

impl IterationRecord {
    pub fn certificates_hold(&self) -> bool {
        self.base_descent && self.ctg_descent
    }
}

/// Why an inner loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerStop {
    Tolerance,
    IterationCap,
    TimeCap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdmmStatus {
    Converged,
    IterationLimit,
    TimeLimit,
}

/// Summary of one outer round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub r: usize,
    pub beta: f64,
    pub rho: f64,
    pub iterations: usize,
    pub stop: InnerStop,
    /// `L̄(λ, β)`: the augmented Lagrangian at the start of the round.
    pub l_upper: f64,
    /// `L̲(λ, β)`.
    pub l_lower: f64,
    /// Measured descent coefficient, floored at `γ_min`.
    pub gamma: f64,
    pub certificates_hold: bool,
    /// Inner iteration bound at `ε = inner_tol(r)`.
    pub t_bound: f64,
    pub consensus: f64,
}

/// Constants of the outer complexity bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexityBounds {
    /// `max Σ ‖λ_k‖²` over the multiplier box.
    pub lambda_sq: f64,
    pub l_upper: f64,
    pub l_lower: f64,
    pub delta_l: f64,
    pub gamma: f64,
    pub eta: f64,
    pub r_bound: f64,
}

/// Inner iteration bound
/// `⌈2ρ²|K|(L̄ − L̲) / (min{γβ, (β+ρ)/2 − β²/ρ} ε²)⌉`.
pub fn inner_bound(rho: f64, beta: f64, blocks: usize, l_upper: f64, l_lower: f64, gamma: f64, eps: f64) -> f64 {
    let m = (gamma * beta).min((beta + rho) / 2.0 - beta * beta / rho);
    (2.0 * rho * rho * blocks as f64 * (l_upper - l_lower).max(0.0) / (m * eps * eps)).ceil()
}

/// `η = min{γ, (τ+1)/2 − 1/τ}`.
pub fn eta(gamma: f64, tau: f64) -> f64 {
    gamma.min((tau + 1.0) / 2.0 - 1.0 / tau)
}

/// Outer bound `⌈log_c(4δ_L / (β_0 ε²))⌉` and its constants.
pub fn complexity_bounds<S: Subproblems>(sub: &S, rounds: &[RoundSummary], config: &AdmmConfig) -> ComplexityBounds {
    let n = sub.dim() * sub.num_blocks();
    let lambda_sq = n as f64 * config.lambda_lo.powi(2).max(config.lambda_hi.powi(2));
    let l_upper = rounds.iter().map(|r| r.l_upper).fold(f64::NEG_INFINITY, f64::max);
    let l_lower = sub.cost_lower_bound() - lambda_sq / config.beta0;
    let delta_l = l_upper - l_lower;
    let gamma = rounds.iter().map(|r| r.gamma).fold(f64::INFINITY, f64::min).max(config.gamma_min);
    let arg = 4.0 * delta_l / (config.beta0 * config.consensus_tol.powi(2));
    let r_bound = (arg.ln() / config.c.ln()).ceil().max(0.0);
    ComplexityBounds { lambda_sq, l_upper, l_lower, delta_l, gamma, eta: eta(gamma, config.tau), r_bound }
}

/// Stored iterate for offline checks.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub r: usize,
    pub t: usize,
    pub beta: f64,
    pub rho: f64,
    pub x0: Vec<f64>,
    pub copy: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
    pub lambda: Vec<Vec<f64>>,
}

impl Snapshot {
    fn of(st: &AdmmState) -> Self {
        Snapshot {
            r: st.r,
            t: st.t,
            beta: st.beta,
            rho: st.rho,
            x0: st.x0.clone(),
            copy: st.blocks.iter().map(|b| b.x_base_copy.clone()).collect(),
            z: st.blocks.iter().map(|b| b.z.clone()).collect(),
            y: st.blocks.iter().map(|b| b.y.clone()).collect(),
            lambda: st.blocks.iter().map(|b| b.lambda.clone()).collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdmmResult {
    pub state: AdmmState,
    pub status: AdmmStatus,
    pub rounds: Vec<RoundSummary>,
    pub iterations: Vec<IterationRecord>,
    /// Iterates after initialization and after every inner iteration.
    pub history: Vec<Snapshot>,
    pub bounds: ComplexityBounds,
    pub total_inner: usize,
    pub wall_time: Duration,
}

impl AdmmResult {
    pub fn consensus(&self) -> f64 {
        consensus(&self.state)
    }
}

/// `max_k ‖x_0 − x_k^base‖_∞`.
pub fn consensus(st: &AdmmState) -> f64 {
    st.blocks.iter().map(|b| inf_norm(&sq_free_diff(&st.x0, &b.x_base_copy))).fold(0.0, f64::max)
}

fn sq_free_diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Initial iterate: `x_0`, blocks at copy `x_0`, `λ = 0` (clipped into its
/// box), `z = x^base − x_0` and `y = −λ − βz`.
pub fn initialize<S: Subproblems>(sub: &S, config: &AdmmConfig) -> Result<AdmmState> {
    config.validate()?;
    if sub.num_blocks() == 0 {
        return Err(Error::invalid("no contingency blocks selected"));
    }
    let x0 = sub.initial_base()?;
    if x0.len() != sub.dim() {
        return Err(Error::dim("initial base point has the wrong length"));
    }
    let beta = config.initial_beta();
    let lambda0 = 0.0f64.clamp(config.lambda_lo, config.lambda_hi);
    let points: Vec<Result<BlockPoint>> = (0..sub.num_blocks()).into_par_iter().map(|k| sub.initial_block(k, &x0)).collect();
    let mut blocks = Vec::with_capacity(points.len());
    for p in points {
        let p = p?;
        let n = x0.len();
        blocks.push(CouplingBlock { local: p.local, x_base_copy: p.copy, z: vec![0.0; n], y: vec![0.0; n], lambda: vec![lambda0; n] });
    }
    let mut st = AdmmState { x0, blocks, beta, rho: config.tau * beta, r: 1, t: 0 };
    restart(&mut st);
    Ok(st)
}

/// Re-initializes `z` and `y` for the current `λ` and `β`.
fn restart(st: &mut AdmmState) {
    for b in &mut st.blocks {
        for j in 0..st.x0.len() {
            b.z[j] = b.x_base_copy[j] - st.x0[j];
            b.y[j] = -b.lambda[j] - st.beta * b.z[j];
        }
    }
    st.t = 0;
}

/// Caches kept between subproblem solves.
pub struct WarmCaches<W> {
    base: W,
    blocks: Vec<W>,
}

impl<W: Default> WarmCaches<W> {
    pub fn new(blocks: usize) -> Self {
        Self { base: W::default(), blocks: (0..blocks).map(|_| W::default()).collect() }
    }
}

/// One inner iteration: base block, contingency blocks (in parallel), slacks,
/// duals. Failed or non-descending block solves keep the previous point.
pub fn inner_iterate<S: Subproblems>(
    sub: &S,
    st: &mut AdmmState,
    warm: &mut WarmCaches<S::Warm>,
    config: &AdmmConfig,
    started: Instant,
) -> IterationRecord {
    let n = st.x0.len();
    let kk = st.blocks.len();
    let (beta, rho) = (st.beta, st.rho);

    // Base block.
    let mut lin = vec![0.0; n];
    let mut center = vec![0.0; n];
    for b in &st.blocks {
        for j in 0..n {
            lin[j] += b.y[j];
            center[j] += (b.x_base_copy[j] - b.z[j]) / kk as f64;
        }
    }
    let base_obj = |x: &[f64]| {
        let mut v = sub.base_cost(x) + dot(&lin, x);
        for b in &st.blocks {
            for j in 0..n {
                let s = x[j] - b.x_base_copy[j] + b.z[j];
                v += 0.5 * rho * s * s;
            }
        }
        v
    };
    let before = base_obj(&st.x0);
    let mut base_fallback = true;
    if let Some(x) = sub.solve_base(&st.x0, &lin, kk as f64 * rho, &center, &mut warm.base) {
        if base_obj(&x) <= before {
            st.x0 = x;
            base_fallback = false;
        }
    }
    let base_descent = base_obj(&st.x0) <= before;

    // Contingency blocks.
    let x0 = &st.x0;
    let solve_all = |blocks: &mut Vec<CouplingBlock>, caches: &mut Vec<S::Warm>| {
        blocks
            .par_iter_mut()
            .zip(caches.par_iter_mut())
            .enumerate()
            .map(|(k, (b, w))| {
                let center: Vec<f64> = (0..n).map(|j| x0[j] + b.z[j]).collect();
                let obj = |p: &BlockPoint| {
                    sub.block_cost(k, p) - dot(&b.y, &p.copy) + 0.5 * rho * sq_dist(&p.copy, &center)
                };
                let old = b.point();
                let before = obj(&old);
                let mut fallback = true;
                if let Some(p) = sub.solve_block(k, &old, &b.y, rho, &center, w) {
                    if obj(&p) <= before {
                        b.local = p.local;
                        b.x_base_copy = p.copy;
                        fallback = false;
                    }
                }
                let after = obj(&b.point());
                let moved = sq_dist(&b.x_base_copy, &old.copy);
                let ratio = (moved > 1e-24).then(|| (before - after) / (beta * moved));
                let ok = before - after >= config.gamma_min * beta * moved - 1e-12 * (1.0 + before.abs());
                let prev = (old.copy, b.z.clone(), b.y.clone());
                (fallback, ratio, ok, prev)
            })
            .collect::<Vec<_>>()
    };
    let outcomes = solve_all(&mut st.blocks, &mut warm.blocks);

    let mut ctg_fallbacks = 0;
    let mut ctg_descent = true;
    let mut gamma: Option<f64> = None;
    let mut prev_copy = Vec::with_capacity(kk);
    let mut prev_z = Vec::with_capacity(kk);
    let mut z_identity: f64 = 0.0;
    let mut dual_identity: f64 = 0.0;
    for (b, (fallback, ratio, ok, (pc, pz, py))) in st.blocks.iter_mut().zip(outcomes) {
        ctg_fallbacks += fallback as usize;
        ctg_descent &= ok;
        if let Some(g) = ratio {
            gamma = Some(gamma.map_or(g, |m| m.min(g)));
        }
        // Slack and dual updates.
        for j in 0..n {
            b.z[j] = (rho * (b.x_base_copy[j] - st.x0[j]) - b.lambda[j] - b.y[j]) / (beta + rho);
            b.y[j] += rho * (st.x0[j] - b.x_base_copy[j] + b.z[j]);
            z_identity = z_identity.max((b.lambda[j] + beta * b.z[j] + b.y[j]).abs());
            dual_identity = dual_identity.max((b.y[j] - py[j] - beta * (pz[j] - b.z[j])).abs());
        }
        prev_copy.push(pc);
        prev_z.push(pz);
    }
    st.t += 1;

    let copy: Vec<Vec<f64>> = st.blocks.iter().map(|b| b.x_base_copy.clone()).collect();
    let z: Vec<Vec<f64>> = st.blocks.iter().map(|b| b.z.clone()).collect();
    let res = stationarity_residuals(rho, &st.x0, &prev_copy, &prev_z, &copy, &z);
    IterationRecord {
        t: st.t,
        r: st.r,
        al: augmented_lagrangian(sub, st),
        max_s: res.max_s(),
        max_r: res.max_r(),
        d0: res.d0,
        max_dk: res.max_dk(),
        beta,
        wall_time: started.elapsed().as_secs_f64(),
        base_descent,
        ctg_descent,
        gamma,
        base_fallback,
        ctg_fallbacks,
        z_identity,
        dual_identity,
    }
}

/// Whether the inner loop of round `r` ends after `rec`.
pub fn inner_should_stop(
    rec: &IterationRecord,
    r: usize,
    iterations: usize,
    config: &AdmmConfig,
    elapsed: Duration,
) -> Option<InnerStop> {
    let res = if config.stationary_inner { rec.max_s.max(rec.d0).max(rec.max_dk) } else { rec.max_s };
    if res <= config.inner_tol(r) {
        Some(InnerStop::Tolerance)
    } else if config.time_limit.is_some_and(|l| elapsed >= l) {
        Some(InnerStop::TimeCap)
    } else if iterations >= config.max_inner {
        Some(InnerStop::IterationCap)
    } else {
        None
    }
}

/// `λ ← Π(λ + βz)` and the next `β`. `prev_consensus` is the consensus
/// residual at the end of the previous round.
pub fn outer_update(st: &mut AdmmState, config: &AdmmConfig, prev_consensus: Option<f64>) {
    let current = consensus(st);
    for b in &mut st.blocks {
        for j in 0..b.lambda.len() {
            b.lambda[j] = (b.lambda[j] + st.beta * b.z[j]).clamp(config.lambda_lo, config.lambda_hi);
        }
    }
    st.beta = next_beta(st.beta, st.r, current, prev_consensus, config);
    st.rho = config.tau * st.beta;
    st.r += 1;
}

/// Penalty for round `r + 1`.
pub fn next_beta(beta: f64, r: usize, current: f64, previous: Option<f64>, config: &AdmmConfig) -> f64 {
    match config.beta_rule {
        BetaRule::Geometric => config.beta0 * config.c.powi(r as i32 + 1),
        BetaRule::Practical { factor, ratio } => match previous {
            Some(p) if current > ratio * p => beta * factor,
            _ => beta,
        },
    }
}

/// Runs the two-level ADMM to consensus or a cap.
pub fn run<S: Subproblems>(sub: &S, config: &AdmmConfig) -> Result<AdmmResult> {
    match config.workers {
        Some(w) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Solver(format!("thread pool: {e}")))?;
            pool.install(|| run_inner(sub, config))
        }
        None => run_inner(sub, config),
    }
}

fn run_inner<S: Subproblems>(sub: &S, config: &AdmmConfig) -> Result<AdmmResult> {
    let started = Instant::now();
    let mut st = initialize(sub, config)?;
    let mut warm = WarmCaches::<S::Warm>::new(st.blocks.len());
    let mut rounds = Vec::new();
    let mut iterations = Vec::new();
    let mut history = Vec::new();
    let mut total = 0;
    let mut prev_consensus = None;
    let status = loop {
        if config.record_history {
            history.push(Snapshot::of(&st));
        }
        let l_upper = augmented_lagrangian(sub, &st);
        let lam_sq: f64 = st.blocks.iter().map(|b| dot(&b.lambda, &b.lambda)).sum();
        let l_lower = sub.cost_lower_bound() - lam_sq / st.beta;
        let mut gamma = f64::INFINITY;
        let mut clean = true;
        let mut count = 0;
        let stop = loop {
            let rec = inner_iterate(sub, &mut st, &mut warm, config, started);
            count += 1;
            total += 1;
            clean &= rec.certificates_hold();
            if let Some(g) = rec.gamma {
                gamma = gamma.min(g);
            }
            let stop = inner_should_stop(&rec, st.r, count, config, started.elapsed());
            iterations.push(rec);
            if config.record_history {
                history.push(Snapshot::of(&st));
            }
            if let Some(s) = stop {
                break s;
            }
            if total >= config.max_total_inner {
                break InnerStop::IterationCap;
            }
        };
        let gamma = if gamma.is_finite() { gamma.max(config.gamma_min) } else { config.gamma_min };
        let cons = consensus(&st);
        rounds.push(RoundSummary {
            r: st.r,
            beta: st.beta,
            rho: st.rho,
            iterations: count,
            stop,
            l_upper,
            l_lower,
            gamma,
            certificates_hold: clean,
            t_bound: inner_bound(st.rho, st.beta, st.blocks.len(), l_upper, l_lower, gamma, config.inner_tol(st.r)),
            consensus: cons,
        });
        log::debug!("admm round {} iterations {} consensus {:.3e} beta {}", st.r, count, cons, st.beta);
        if cons <= config.consensus_tol {
            break AdmmStatus::Converged;
        }
        if config.time_limit.is_some_and(|l| started.elapsed() >= l) {
            break AdmmStatus::TimeLimit;
        }
        if total >= config.max_total_inner || rounds.len() >= config.max_outer {
            break AdmmStatus::IterationLimit;
        }
        outer_update(&mut st, config, prev_consensus);
        prev_consensus = Some(cons);
        restart(&mut st);
    };
    let bounds = complexity_bounds(sub, &rounds, config);
    Ok(AdmmResult { state: st, status, rounds, iterations, history, bounds, total_inner: total, wall_time: started.elapsed() })
}

/// Writes one JSON object per record and line.
pub fn write_diagnostics<W: Write>(records: &[IterationRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads records written by [`write_diagnostics`].
pub fn read_diagnostics(text: &str) -> Result<Vec<IterationRecord>> {
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

struct BaseBlock {
    model: Model,
    vars: StateVars,
}

struct CtgBlock {
    model: Model,
    /// Same block at the continuation width, for cold starts of narrow
    /// smoothed couplings.
    coarse: Option<Model>,
    vars: StateVars,
    coupling: CouplingVars,
    /// `(base flat index, model variable)` of the coupled copy components.
    copies: Vec<(usize, usize)>,
}

/// Solver cache of one block: last raw point and multipliers.
#[derive(Default)]
pub struct NlpWarm(Option<(Vec<f64>, WarmStart)>);

/// SC-ACOPF blocks over a selected set of contingencies.
pub struct ScopfSubproblems {
    case: NetworkCase,
    selected: Vec<usize>,
    base_layout: StateLayout,
    lo: Vec<f64>,
    hi: Vec<f64>,
    base: BaseBlock,
    blocks: Vec<CtgBlock>,
    block_weight: f64,
    opts: NlpOptions,
    start: Option<StateVector>,
}

/// Builds the base and contingency blocks of the relaxation over `selected`
/// (contingency indices of `case`).
pub fn build_relaxation(case: &NetworkCase, selected: &[usize], config: &AdmmConfig) -> Result<ScopfSubproblems> {
    config.validate()?;
    if selected.is_empty() {
        return Err(Error::invalid("no contingencies selected"));
    }
    let base_layout = StateLayout::new(case, StateId::Base)?;
    let (lo, hi) = flat_bounds(case, &base_layout);
    if lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::invalid("base variable box is empty"));
    }
    let mut model = Model::new();
    let vars = add_state(&mut model, case, StateId::Base, BlockObjective { generation: 1.0, penalty: case.delta_weight })?;
    let base = BaseBlock { model, vars };

    let weight = (1.0 - case.delta_weight) / selected.len() as f64;
    let kind = match config.coupling {
        CouplingMode::BigM => CouplingKind::BigM,
        CouplingMode::Smoothed => CouplingKind::Smoothed { eps: config.epsilon },
    };
    let nb = case.num_buses();
    let mut blocks = Vec::with_capacity(selected.len());
    for &k in selected {
        if k >= case.contingencies.len() {
            return Err(Error::invalid(format!("contingency index {k} out of range")));
        }
        let mut model = Model::new();
        let vars = add_state(&mut model, case, StateId::Contingency(k), BlockObjective { generation: 0.0, penalty: weight })?;
        let mut copies = Vec::new();
        let mut p0 = Vec::new();
        let mut v0 = Vec::new();
        let mut bus_var = vec![None; nb];
        for &g in &vars.layout.gens {
            let gen = &case.generators[g];
            let j = 6 * nb + g;
            let var = model.add_var(lo[j], hi[j]);
            copies.push((j, var));
            p0.push(Operand::Var(var));
            let var = match bus_var[gen.bus] {
                Some(v) => v,
                None => {
                    let v = model.add_var(lo[gen.bus], hi[gen.bus]);
                    copies.push((gen.bus, v));
                    bus_var[gen.bus] = Some(v);
                    v
                }
            };
            v0.push(Operand::Var(var));
        }
        let source = CouplingSource { p0, v0 };
        let coarse = match kind {
            CouplingKind::Smoothed { eps } if eps < CONTINUATION_EPSILON => {
                let mut m = model.clone();
                add_coupling(&mut m, case, &vars, &source, &CouplingKind::Smoothed { eps: CONTINUATION_EPSILON })?;
                Some(m)
            }
            _ => None,
        };
        let coupling = add_coupling(&mut model, case, &vars, &source, &kind)?;
        blocks.push(CtgBlock { model, coarse, vars, coupling, copies });
    }
    Ok(ScopfSubproblems {
        case: case.clone(),
        selected: selected.to_vec(),
        base_layout,
        lo,
        hi,
        base,
        blocks,
        block_weight: weight,
        opts: config.nlp,
        start: None,
    })
}

impl ScopfSubproblems {
    /// Starts the base block from `sv` instead of a flat start.
    pub fn with_start(mut self, sv: StateVector) -> Self {
        self.start = Some(sv);
        self
    }

    pub fn case(&self) -> &NetworkCase {
        &self.case
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn base_state(&self, x0: &[f64]) -> Result<StateVector> {
        StateVector::from_vec(&self.case, &self.base_layout, x0, 0.0)
    }

    pub fn block_state(&self, k: usize, p: &BlockPoint) -> Result<StateVector> {
        let b = &self.blocks[k];
        let (flat, delta) = p.local.split_at(p.local.len() - 1);
        StateVector::from_vec(&self.case, &b.vars.layout, flat, delta[0])
    }

    fn local_of(&self, b: &CtgBlock, x: &[f64]) -> Vec<f64> {
        let mut v = x[b.vars.offset..b.vars.offset + b.vars.flat_len].to_vec();
        v.push(b.vars.delta.map_or(0.0, |d| x[d]));
        v
    }

    fn block_start(&self, k: usize, p: &BlockPoint) -> Option<Vec<f64>> {
        let b = &self.blocks[k];
        let sv = self.block_state(k, p).ok()?;
        let mut x = vec![0.0; b.model.lo.len()];
        b.vars.write_start(&self.case, &sv, &mut x);
        for &(j, var) in &b.copies {
            x[var] = p.copy[j];
        }
        b.coupling.write_start(&self.case, &b.vars, &mut x);
        Some(x)
    }

    fn solve_cached(
        &self,
        model: &Model,
        coarse: Option<&Model>,
        vars: &StateVars,
        start: &[f64],
        warm: &mut NlpWarm,
    ) -> Option<Vec<f64>> {
        let clamp = |x: &[f64]| -> Vec<f64> { x.iter().enumerate().map(|(i, v)| v.clamp(model.lo[i], model.hi[i])).collect() };
        let mut r = None;
        if let Some((x, ws)) = &warm.0 {
            if x.len() == model.lo.len() {
                let res = nlp::solve(model, &clamp(x), &self.opts, Some(ws));
                if res.converged() {
                    r = Some(res);
                }
            }
        }
        if r.is_none() {
            if let Some(c) = coarse {
                let first = nlp::solve(c, &clamp(start), &self.opts, None);
                if first.converged() {
                    let res = nlp::solve(model, &first.x, &self.opts, first.warm.as_ref());
                    if res.converged() {
                        r = Some(res);
                    }
                }
            }
        }
        let r = match r {
            Some(r) => r,
            None => {
                let res = nlp::solve(model, &clamp(start), &self.opts, None);
                if !res.converged() {
                    return None;
                }
                res
            }
        };
        warm.0 = r.warm.clone().map(|w| (r.x.clone(), w));
        Some(polish(model, &[vars], &r.x, &self.opts).map_or(r.x, |p| p.x))
    }
}

fn add_prox(model: &mut Model, var: usize, lin: f64, weight: f64, center: f64) {
    model.add_objective(Term::Product { a: var, b: var, coef: 0.5 * weight });
    model.add_objective(Term::linear(var, lin - weight * center));
    model.add_objective(Term::Constant(0.5 * weight * center * center));
}

impl Subproblems for ScopfSubproblems {
    type Warm = NlpWarm;

    fn dim(&self) -> usize {
        self.lo.len()
    }

    fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn base_cost(&self, x0: &[f64]) -> f64 {
        match self.base_state(x0) {
            Ok(sv) => {
                let g = generation_cost(&self.case, &sv).unwrap_or(f64::INFINITY);
                let p = state_penalty(&self.case, &sv).unwrap_or(f64::INFINITY);
                g + self.case.delta_weight * p
            }
            Err(_) => f64::INFINITY,
        }
    }

    fn block_cost(&self, k: usize, p: &BlockPoint) -> f64 {
        match self.block_state(k, p) {
            Ok(sv) => self.block_weight * state_penalty(&self.case, &sv).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    }

    fn cost_lower_bound(&self) -> f64 {
        self.case
            .generators
            .iter()
            .map(|g| g.cost.eval(g.p_lo.max(0.0).min(g.cost.total_length())).unwrap_or(0.0))
            .sum()
    }

    fn bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lo.clone(), self.hi.clone())
    }

    fn initial_base(&self) -> Result<Vec<f64>> {
        let sol = solve_base_acopf(&self.case, self.start.as_ref(), &self.opts)?;
        if !sol.result.converged() && sol.result.violation > self.opts.tol {
            return Err(Error::Solver(format!("base ACOPF failed: {:?}", sol.result.status)));
        }
        Ok(sol.state.to_vec())
    }

    fn initial_block(&self, k: usize, x0: &[f64]) -> Result<BlockPoint> {
        let b = &self.blocks[k];
        let base = self.base_state(x0)?;
        let sv = recourse::warm_start(&self.case, self.selected[k], &base)?;
        let mut local = sv.to_vec();
        local.push(sv.delta);
        let fallback = BlockPoint { local, copy: x0.to_vec() };
        let fixed = |m: &Model| {
            let mut m = m.clone();
            for &(j, var) in &b.copies {
                m.fix(var, x0[j]);
            }
            m
        };
        let model = fixed(&b.model);
        let coarse = b.coarse.as_ref().map(fixed);
        let Some(start) = self.block_start(k, &fallback) else {
            return Ok(fallback);
        };
        match self.solve_cached(&model, coarse.as_ref(), &b.vars, &start, &mut NlpWarm::default()) {
            Some(x) => Ok(BlockPoint { local: self.local_of(b, &x), copy: x0.to_vec() }),
            None => Ok(fallback),
        }
    }

    fn solve_base(&self, start: &[f64], lin: &[f64], weight: f64, center: &[f64], warm: &mut NlpWarm) -> Option<Vec<f64>> {
        let mut model = self.base.model.clone();
        let vars = &self.base.vars;
        for j in 0..lin.len() {
            add_prox(&mut model, vars.flat(j), lin[j], weight, center[j]);
        }
        let sv = self.base_state(start).ok()?;
        let mut x = vec![0.0; model.lo.len()];
        vars.write_start(&self.case, &sv, &mut x);
        let x = self.solve_cached(&model, None, vars, &x, warm)?;
        Some(x[vars.offset..vars.offset + vars.flat_len].to_vec())
    }

    fn solve_block(
        &self,
        k: usize,
        start: &BlockPoint,
        y: &[f64],
        rho: f64,
        center: &[f64],
        warm: &mut NlpWarm,
    ) -> Option<BlockPoint> {
        let b = &self.blocks[k];
        let with_prox = |m: &Model| {
            let mut m = m.clone();
            for &(j, var) in &b.copies {
                add_prox(&mut m, var, -y[j], rho, center[j]);
            }
            m
        };
        let model = with_prox(&b.model);
        let coarse = b.coarse.as_ref().map(with_prox);
        let x_start = self.block_start(k, start)?;
        let x = self.solve_cached(&model, coarse.as_ref(), &b.vars, &x_start, warm)?;
        let mut copy: Vec<f64> =
            (0..center.len()).map(|j| (center[j] + y[j] / rho).clamp(self.lo[j], self.hi[j])).collect();
        for &(j, var) in &b.copies {
            copy[j] = x[var];
        }
        Some(BlockPoint { local: self.local_of(b, &x), copy })
    }
}
