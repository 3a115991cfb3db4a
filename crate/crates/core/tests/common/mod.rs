#![allow(dead_code)]

//! Oracles shared by the integration tests. Nothing here calls the crate's
//! own flow, cost or residual routines.

use num_complex::Complex64;
use scopf::admm::Snapshot;
use scopf::model::{BranchRef, NetworkCase, StateId, StateLayout, StateVector};
use scopf::nlp::NlpProblem;

pub fn phasor(v: f64, theta: f64) -> Complex64 {
    Complex64::from_polar(v, theta)
}

/// `(Y_oo, Y_od, Y_do, Y_dd)` of a branch: series admittance `g + jb`,
/// total charging `b_ch` split between the ends, ideal transformer of ratio
/// `tap·e^{j·shift}` on the origin side.
pub fn branch_admittance(case: &NetworkCase, br: BranchRef) -> [Complex64; 4] {
    let (g, b, b_ch, tap, shift) = match br {
        BranchRef::Line(i) => {
            let l = &case.lines[i];
            (l.g, l.b, l.b_ch, 1.0, 0.0)
        }
        BranchRef::Transformer(i) => {
            let t = &case.transformers[i];
            (t.g, t.b, t.b_ch, t.tap, t.shift)
        }
    };
    let y = Complex64::new(g, b);
    let ych = Complex64::new(0.0, b_ch / 2.0);
    let ratio = Complex64::from_polar(tap, shift);
    [(y + ych) / (tap * tap), -y / ratio.conj(), -y / ratio, y + ych]
}

/// Complex power leaving each end of a branch.
pub fn branch_power(case: &NetworkCase, br: BranchRef, v: &[f64], theta: &[f64]) -> (Complex64, Complex64) {
    let (o, d) = case.branch_ends(br);
    let [yoo, yod, ydo, ydd] = branch_admittance(case, br);
    let (vo, vd) = (phasor(v[o], theta[o]), phasor(v[d], theta[d]));
    let io = yoo * vo + yod * vd;
    let id = ydo * vo + ydd * vd;
    (vo * io.conj(), vd * id.conj())
}

/// Dense bus admittance matrix over the in-service branches.
pub fn ybus(case: &NetworkCase, branches: &[BranchRef]) -> Vec<Vec<Complex64>> {
    let nb = case.num_buses();
    let mut y = vec![vec![Complex64::new(0.0, 0.0); nb]; nb];
    for &br in branches {
        let (o, d) = case.branch_ends(br);
        let [yoo, yod, ydo, ydd] = branch_admittance(case, br);
        y[o][o] += yoo;
        y[o][d] += yod;
        y[d][o] += ydo;
        y[d][d] += ydd;
    }
    y
}

/// Complex injection `V_i · conj((Y V)_i)` into the network at each bus.
pub fn network_injection(y: &[Vec<Complex64>], v: &[f64], theta: &[f64]) -> Vec<Complex64> {
    let vv: Vec<Complex64> = v.iter().zip(theta).map(|(&m, &a)| phasor(m, a)).collect();
    (0..vv.len())
        .map(|i| {
            let cur: Complex64 = (0..vv.len()).map(|j| y[i][j] * vv[j]).sum();
            vv[i] * cur.conj()
        })
        .collect()
}

/// Piecewise-linear cost by walking the pieces.
pub fn pwl(lengths: &[f64], slopes: &[f64], x: f64) -> f64 {
    assert!(x >= 0.0);
    let mut left = x;
    let mut total = 0.0;
    for (&l, &s) in lengths.iter().zip(slopes) {
        let take = left.min(l);
        total += take * s;
        left -= take;
        if left <= 0.0 {
            break;
        }
    }
    assert!(left <= 0.0, "argument beyond the cost domain");
    total
}

/// Severity of contingency `k` by summing shed-injection costs at the
/// terminal buses of the outaged element.
pub fn severity_oracle(case: &NetworkCase, base: &StateVector, k: usize) -> f64 {
    let c = &case.contingencies[k];
    let pen = case.penalties(StateId::Contingency(k));
    let cost = |p: f64, q: f64| pwl(pen.p.lengths(), pen.p.slopes(), p) + pwl(pen.q.lengths(), pen.q.slopes(), q);
    match c.kind {
        scopf::model::ElementKind::Generator => cost(base.p[c.element].abs(), base.q[c.element].abs()),
        kind => {
            let br = if kind == scopf::model::ElementKind::Line { BranchRef::Line(c.element) } else { BranchRef::Transformer(c.element) };
            let (so, sd) = branch_power(case, br, &base.v, &base.theta);
            cost(so.re.abs(), so.im.abs()) + cost(sd.re.abs(), sd.im.abs())
        }
    }
}

/// Largest relative error `|analytic − fd| / max(1, |analytic|)` of the
/// gradient and the constraint Jacobian, by central differences. The
/// objective is differenced with a wider step than the constraints: its
/// value is dominated by large penalty slopes, so a narrow step loses the
/// small gradient entries to rounding.
pub fn fd_errors<P: NlpProblem>(p: &P, x: &[f64]) -> (f64, f64) {
    let (n, m) = (p.num_vars(), p.num_cons());
    let mut g = vec![0.0; n];
    p.gradient(x, &mut g);
    let mut jac = vec![0.0; m * n];
    p.jacobian(x, &mut jac);
    let (mut ge, mut je): (f64, f64) = (0.0, 0.0);
    let mut xp = x.to_vec();
    let (mut cp, mut cm) = (vec![0.0; m], vec![0.0; m]);
    for j in 0..n {
        let scale = x[j].abs().max(1.0);
        let (h, hf) = (1e-6 * scale, 1e-3 * scale);
        xp[j] = x[j] + hf;
        let fp = p.objective(&xp);
        xp[j] = x[j] - hf;
        let fm = p.objective(&xp);
        let fd = (fp - fm) / (2.0 * hf);
        xp[j] = x[j] + h;
        p.constraints(&xp, &mut cp);
        xp[j] = x[j] - h;
        p.constraints(&xp, &mut cm);
        xp[j] = x[j];
        ge = ge.max((g[j] - fd).abs() / g[j].abs().max(1.0));
        for i in 0..m {
            let a = jac[i * n + j];
            let fd = (cp[i] - cm[i]) / (2.0 * h);
            je = je.max((a - fd).abs() / a.abs().max(1.0));
        }
    }
    (ge, je)
}

/// Optimal generation cost of the three-bus case by a scan over the angle
/// of bus 2 with bus 3 solved by Newton's method at each point, then a
/// golden-section refinement around the best grid point.
pub fn three_bus_grid_optimum(case: &NetworkCase) -> f64 {
    assert_eq!(case.num_buses(), 3);
    let layout = StateLayout::new(case, StateId::Base).unwrap();
    let branches = layout.branches.clone();
    let cost_at = |th2: f64| -> Option<f64> {
        let mut v = [1.0, 1.0, 1.0];
        let mut th = [0.0, th2, 0.0];
        let load = Complex64::new(case.buses[2].load_p, case.buses[2].load_q);
        let mismatch = |v: &[f64; 3], th: &[f64; 3]| -> Complex64 {
            let mut s = load;
            for &br in &branches {
                let (o, d) = case.branch_ends(br);
                let (so, sd) = branch_power(case, br, v, th);
                if o == 2 {
                    s += so;
                }
                if d == 2 {
                    s += sd;
                }
            }
            s
        };
        for _ in 0..50 {
            let f = mismatch(&v, &th);
            if f.norm() < 1e-13 {
                break;
            }
            let h = 1e-7;
            let (mut va, mut ta) = (v, th);
            va[2] += h;
            let dv = (mismatch(&va, &th) - f) / h;
            ta[2] += h;
            let dt = (mismatch(&v, &ta) - f) / h;
            let det = dv.re * dt.im - dt.re * dv.im;
            let step_v = (f.re * dt.im - dt.re * f.im) / det;
            let step_t = (dv.re * f.im - f.re * dv.im) / det;
            v[2] -= step_v;
            th[2] -= step_t;
        }
        if mismatch(&v, &th).norm() > 1e-10 || !(case.buses[2].v_lo..=case.buses[2].v_hi).contains(&v[2]) {
            return None;
        }
        let mut inj = [Complex64::new(0.0, 0.0); 3];
        for &br in &branches {
            let (o, d) = case.branch_ends(br);
            let (so, sd) = branch_power(case, br, &v, &th);
            inj[o] += so;
            inj[d] += sd;
            let limit = match br {
                BranchRef::Line(i) => case.lines[i].r_max_base,
                BranchRef::Transformer(i) => case.transformers[i].s_max_base,
            };
            if so.norm() > limit * v[o] || sd.norm() > limit * v[d] {
                return None;
            }
        }
        let mut total = 0.0;
        for g in &case.generators {
            let s = inj[g.bus] + Complex64::new(case.buses[g.bus].load_p, case.buses[g.bus].load_q);
            if s.re < g.p_lo - 1e-12 || s.re > g.p_hi + 1e-12 || s.im < g.q_lo - 1e-12 || s.im > g.q_hi + 1e-12 {
                return None;
            }
            total += pwl(g.cost.lengths(), g.cost.slopes(), s.re.max(0.0));
        }
        Some(total)
    };
    let (lo, hi, n) = (-0.6, 0.6, 24001);
    let step = (hi - lo) / (n - 1) as f64;
    let (mut best, mut best_th) = (f64::INFINITY, 0.0);
    for i in 0..n {
        let th = lo + step * i as f64;
        if let Some(c) = cost_at(th) {
            if c < best {
                best = c;
                best_th = th;
            }
        }
    }
    let (mut a, mut b) = (best_th - step, best_th + step);
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let f = |t: f64| cost_at(t).unwrap_or(f64::INFINITY);
    for _ in 0..200 {
        let c = b - r * (b - a);
        let d = a + r * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.min(f(0.5 * (a + b)))
}

/// Residuals of consecutive snapshots, recomputed from their vectors:
/// `(d0, max dk, max s, max r)`.
pub fn replay_residuals(prev: &Snapshot, cur: &Snapshot) -> (f64, f64, f64, f64) {
    let rho = cur.rho;
    let n = cur.x0.len();
    let mut d0 = vec![0.0; n];
    let (mut dk, mut s, mut r): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..cur.copy.len() {
        for j in 0..n {
            let dz = cur.z[k][j] - prev.z[k][j];
            d0[j] += rho * (prev.copy[k][j] - cur.copy[k][j] + dz);
            dk = dk.max((rho * dz).abs());
            s = s.max((cur.x0[j] - cur.copy[k][j] + cur.z[k][j]).abs());
            r = r.max((cur.x0[j] - cur.copy[k][j]).abs());
        }
    }
    (d0.iter().fold(0.0, |m: f64, x| m.max(x.abs())), dk, s, r)
}
