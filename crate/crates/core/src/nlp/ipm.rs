//! Primal-dual interior-point method with an `ℓ1` merit line search.
//!
//! Fixed variables are removed, inequality rows get bounded slacks, and the
//! objective and rows are scaled by their starting gradients. Each step solves
//! the regularized primal-dual system with a symmetric indefinite
//! factorization whose inertia drives the Hessian regularization.

use std::time::Instant;

use super::fd::lagrangian_gradient;
use super::ldl::Ldl;
use super::{violation, NlpOptions, NlpProblem, NlpResult, NlpStatus, WarmStart};

const KAPPA_SIGMA: f64 = 1e10;
const S_MAX: f64 = 100.0;
const MAX_SOC: usize = 4;
const ARMIJO: f64 = 1e-4;
const MAX_LS_FAILURES: usize = 5;

struct Reduced<'a, P: ?Sized> {
    p: &'a P,
    n: usize,
    m0: usize,
    base_x: Vec<f64>,
    free: Vec<usize>,
    rows: Vec<usize>,
    /// Constraint lower bound for equality rows, `None` for slack rows.
    eq_rhs: Vec<Option<f64>>,
    slack_of: Vec<Option<usize>>,
    nw: usize,
    lw: Vec<f64>,
    uw: Vec<f64>,
    sf: f64,
    sc: Vec<f64>,
}

struct Eval {
    f: f64,
    grad: Vec<f64>,
    h: Vec<f64>,
    jac: Vec<f64>,
    c: Vec<f64>,
}

impl<P: NlpProblem + ?Sized> Reduced<'_, P> {
    fn m(&self) -> usize {
        self.rows.len()
    }

    fn full_x(&self, w: &[f64]) -> Vec<f64> {
        let mut x = self.base_x.clone();
        for (a, &i) in self.free.iter().enumerate() {
            x[i] = w[a];
        }
        x
    }

    fn eval(&self, w: &[f64]) -> Option<Eval> {
        let x = self.full_x(w);
        let (n, m) = (self.n, self.m());
        let f = self.p.objective(&x);
        let mut g = vec![0.0; n];
        self.p.gradient(&x, &mut g);
        let mut c = vec![0.0; self.m0];
        self.p.constraints(&x, &mut c);
        let mut j0 = vec![0.0; self.m0 * n];
        self.p.jacobian(&x, &mut j0);
        let mut grad = vec![0.0; self.nw];
        for (a, &i) in self.free.iter().enumerate() {
            grad[a] = self.sf * g[i];
        }
        let mut h = vec![0.0; m];
        let mut jac = vec![0.0; m * self.nw];
        for (r, &j) in self.rows.iter().enumerate() {
            let s = self.sc[r];
            h[r] = match (self.eq_rhs[r], self.slack_of[r]) {
                (Some(rhs), _) => s * (c[j] - rhs),
                (None, Some(k)) => s * c[j] - w[k],
                _ => unreachable!(),
            };
            let row = &mut jac[r * self.nw..(r + 1) * self.nw];
            for (a, &i) in self.free.iter().enumerate() {
                row[a] = s * j0[j * n + i];
            }
            if let Some(k) = self.slack_of[r] {
                row[k] = -1.0;
            }
        }
        let finite = f.is_finite()
            && grad.iter().all(|v| v.is_finite())
            && h.iter().all(|v| v.is_finite())
            && jac.iter().all(|v| v.is_finite());
        finite.then_some(Eval { f: self.sf * f, grad, h, jac, c })
    }

    /// Hessian of the scaled Lagrangian in the reduced space (`nw × nw`).
    fn hessian(&self, w: &[f64], lam: &[f64]) -> Option<Vec<f64>> {
        let x = self.full_x(w);
        let n = self.n;
        let mut lam0 = vec![0.0; self.m0];
        for (r, &j) in self.rows.iter().enumerate() {
            lam0[j] = lam[r] * self.sc[r];
        }
        let mut h0 = vec![0.0; n * n];
        if !self.p.hessian(&x, self.sf, &lam0, &mut h0) {
            let unscaled: Vec<f64> = lam0.iter().map(|l| l / self.sf).collect();
            let mut xp = x.clone();
            let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
            let mut jac = vec![0.0; self.m0 * n];
            for &i in &self.free {
                let step = 1e-6 * x[i].abs().max(1.0);
                xp[i] = x[i] + step;
                lagrangian_gradient(self.p, &xp, &unscaled, &mut gp, &mut jac);
                xp[i] = x[i] - step;
                lagrangian_gradient(self.p, &xp, &unscaled, &mut gm, &mut jac);
                xp[i] = x[i];
                for r in 0..n {
                    h0[r * n + i] = self.sf * (gp[r] - gm[r]) / (2.0 * step);
                }
            }
            for a in 0..n {
                for b in 0..a {
                    let s = 0.5 * (h0[a * n + b] + h0[b * n + a]);
                    h0[a * n + b] = s;
                    h0[b * n + a] = s;
                }
            }
        }
        let mut h = vec![0.0; self.nw * self.nw];
        for (a, &i) in self.free.iter().enumerate() {
            for (b, &k) in self.free.iter().enumerate() {
                h[a * self.nw + b] = h0[i * n + k];
            }
        }
        h.iter().all(|v| v.is_finite()).then_some(h)
    }

    fn barrier(&self, w: &[f64], f: f64, mu: f64) -> f64 {
        let mut phi = f;
        for i in 0..self.nw {
            if self.lw[i].is_finite() {
                phi -= mu * (w[i] - self.lw[i]).ln();
            }
            if self.uw[i].is_finite() {
                phi -= mu * (self.uw[i] - w[i]).ln();
            }
        }
        phi
    }

    fn barrier_gradient(&self, w: &[f64], grad: &[f64], mu: f64) -> Vec<f64> {
        (0..self.nw)
            .map(|i| {
                let mut g = grad[i];
                if self.lw[i].is_finite() {
                    g -= mu / (w[i] - self.lw[i]);
                }
                if self.uw[i].is_finite() {
                    g += mu / (self.uw[i] - w[i]);
                }
                g
            })
            .collect()
    }
}

fn norm1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

fn push_into(x: f64, l: f64, u: f64, kappa: f64) -> f64 {
    let width = u - l;
    let pl = if l.is_finite() { (kappa * l.abs().max(1.0)).min(if width.is_finite() { kappa * width } else { f64::INFINITY }) } else { 0.0 };
    let pu = if u.is_finite() { (kappa * u.abs().max(1.0)).min(if width.is_finite() { kappa * width } else { f64::INFINITY }) } else { 0.0 };
    let mut v = x;
    if l.is_finite() {
        v = v.max(l + pl);
    }
    if u.is_finite() {
        v = v.min(u - pu);
    }
    v
}

struct Residuals {
    dual: f64,
    primal: f64,
    compl: f64,
    sd: f64,
    sc: f64,
}

impl Residuals {
    fn error(&self) -> f64 {
        (self.dual / self.sd).max(self.primal).max(self.compl / self.sc)
    }
}

/// Solves `p` from `start` (projected into the bounds).
pub fn solve<P: NlpProblem + ?Sized>(p: &P, start: &[f64], opts: &NlpOptions, warm: Option<&WarmStart>) -> NlpResult {
    let t0 = Instant::now();
    let n = p.num_vars();
    let m0 = p.num_cons();
    assert_eq!(start.len(), n, "start point has the wrong dimension");
    let (xl, xu) = p.var_bounds();
    let (cl, cu) = p.con_bounds();

    let fail = |x: Vec<f64>, iterations: usize| {
        let objective = p.objective(&x);
        NlpResult {
            violation: violation(p, &x),
            x,
            objective,
            stationarity: f64::INFINITY,
            status: NlpStatus::NumericalFailure,
            iterations,
            wall_time: t0.elapsed(),
            lambda: vec![0.0; m0],
            warm: None,
        }
    };

    let mut base_x: Vec<f64> =
        (0..n).map(|i| if start[i].is_finite() { start[i] } else { 0.0 }.max(xl[i]).min(xu[i])).collect();
    if (0..n).any(|i| xl[i] > xu[i]) || (0..m0).any(|j| cl[j] > cu[j]) {
        return fail(base_x, 0);
    }
    let free: Vec<usize> = (0..n).filter(|&i| xl[i] < xu[i]).collect();
    let nf = free.len();
    let rows: Vec<usize> = (0..m0).filter(|&j| cl[j].is_finite() || cu[j].is_finite()).collect();
    let m = rows.len();
    let mut eq_rhs = Vec::with_capacity(m);
    let mut slack_of = Vec::with_capacity(m);
    let mut nw = nf;
    for &j in &rows {
        if cl[j] == cu[j] {
            eq_rhs.push(Some(cl[j]));
            slack_of.push(None);
        } else {
            eq_rhs.push(None);
            slack_of.push(Some(nw));
            nw += 1;
        }
    }
    let warm = warm.filter(|w| w.con_scale.len() == m && w.lambda.len() == m && w.z_lo.len() == nw && w.z_hi.len() == nw);
    let kappa = if warm.is_some() { 1e-10 } else { 1e-2 };
    for &i in &free {
        base_x[i] = push_into(base_x[i], xl[i], xu[i], kappa);
    }

    // Scaling from the starting derivatives.
    let mut g0 = vec![0.0; n];
    p.gradient(&base_x, &mut g0);
    let mut j0 = vec![0.0; m0 * n];
    p.jacobian(&base_x, &mut j0);
    let (sf, sc) = match warm {
        Some(w) => (w.obj_scale, w.con_scale.clone()),
        None => {
            let gmax = free.iter().fold(0.0f64, |a, &i| a.max(g0[i].abs()));
            let sf = opts.obj_scale.unwrap_or(if gmax > 0.0 { (S_MAX / gmax).min(1.0) } else { 1.0 });
            let sc = rows
                .iter()
                .map(|&j| {
                    let rmax = free.iter().fold(0.0f64, |a, &i| a.max(j0[j * n + i].abs()));
                    if rmax > 0.0 {
                        (S_MAX / rmax).min(1.0)
                    } else {
                        1.0
                    }
                })
                .collect();
            (sf, sc)
        }
    };
    if !(sf.is_finite() && sf > 0.0) || sc.iter().any(|s: &f64| !s.is_finite()) {
        return fail(base_x, 0);
    }

    let mut lw = Vec::with_capacity(nw);
    let mut uw = Vec::with_capacity(nw);
    for &i in &free {
        lw.push(xl[i]);
        uw.push(xu[i]);
    }
    for (r, &j) in rows.iter().enumerate() {
        if slack_of[r].is_some() {
            lw.push(sc[r] * cl[j]);
            uw.push(sc[r] * cu[j]);
        }
    }
    let red = Reduced { p, n, m0, base_x: base_x.clone(), free, rows, eq_rhs, slack_of, nw, lw, uw, sf, sc };

    let mut c0 = vec![0.0; m0];
    p.constraints(&base_x, &mut c0);
    let mut w = vec![0.0; nw];
    for (a, &i) in red.free.iter().enumerate() {
        w[a] = base_x[i];
    }
    for (r, &j) in red.rows.iter().enumerate() {
        if let Some(k) = red.slack_of[r] {
            let v = if c0[j].is_finite() { red.sc[r] * c0[j] } else { 0.0 };
            let v = v.max(red.lw[k]).min(red.uw[k]);
            w[k] = push_into(v, red.lw[k], red.uw[k], kappa);
        }
    }

    let Some(mut ev) = red.eval(&w) else {
        return fail(red.full_x(&w), 0);
    };

    let mut zl: Vec<f64> = (0..nw).map(|i| if red.lw[i].is_finite() { 1.0 } else { 0.0 }).collect();
    let mut zu: Vec<f64> = (0..nw).map(|i| if red.uw[i].is_finite() { 1.0 } else { 0.0 }).collect();
    let mut lam = vec![0.0; m];
    let mut mu = opts.mu_init;
    if let Some(ws) = warm {
        lam = ws.lambda.clone();
        for i in 0..nw {
            zl[i] = if red.lw[i].is_finite() { ws.z_lo[i].max(1e-20) } else { 0.0 };
            zu[i] = if red.uw[i].is_finite() { ws.z_hi[i].max(1e-20) } else { 0.0 };
        }
        mu = ws.mu;
    } else if m > 0 {
        lam = least_squares_multipliers(&ev, &zl, &zu, nw, m);
    }
    let mu_min = opts.tol / 10.0;

    let residuals = |ev: &Eval, w: &[f64], lam: &[f64], zl: &[f64], zu: &[f64], mu: f64| {
        let mut dual: f64 = 0.0;
        for i in 0..nw {
            let mut d = ev.grad[i] - zl[i] + zu[i];
            for r in 0..m {
                d += ev.jac[r * nw + i] * lam[r];
            }
            dual = dual.max(d.abs());
        }
        let mut compl: f64 = 0.0;
        for i in 0..nw {
            if red.lw[i].is_finite() {
                compl = compl.max(((w[i] - red.lw[i]) * zl[i] - mu).abs());
            }
            if red.uw[i].is_finite() {
                compl = compl.max(((red.uw[i] - w[i]) * zu[i] - mu).abs());
            }
        }
        let zsum = norm1(zl) + norm1(zu);
        let sd = ((norm1(lam) + zsum) / ((m + 2 * nw).max(1) as f64)).max(S_MAX) / S_MAX;
        let sc = (zsum / ((2 * nw).max(1) as f64)).max(S_MAX) / S_MAX;
        Residuals { dual, primal: norm_inf(&ev.h), compl, sd, sc }
    };
    let orig_violation = |ev: &Eval| {
        let mut v: f64 = 0.0;
        for &j in &red.rows {
            v = v.max(cl[j] - ev.c[j]).max(ev.c[j] - cu[j]);
        }
        v
    };

    let mut nu: f64 = 1.0;
    let mut last_dw: f64 = 0.0;
    let mut forced_dw: f64 = 0.0;
    let mut ls_failures = 0;
    let mut iter = 0;
    let status = loop {
        let res0 = residuals(&ev, &w, &lam, &zl, &zu, 0.0);
        if res0.error() <= opts.tol && orig_violation(&ev) <= opts.tol {
            break NlpStatus::Converged;
        }
        if iter >= opts.max_iter {
            break NlpStatus::IterationLimit;
        }
        if opts.time_limit.is_some_and(|tl| t0.elapsed() >= tl) {
            break NlpStatus::TimeLimit;
        }
        loop {
            let e_mu = residuals(&ev, &w, &lam, &zl, &zu, mu).error();
            if mu <= mu_min || e_mu > 10.0 * mu {
                break;
            }
            mu = mu_min.max((0.2 * mu).min(mu.powf(1.5)));
        }
        let tau = (1.0 - mu).max(0.99);

        let Some(hess) = red.hessian(&w, &lam) else {
            break NlpStatus::NumericalFailure;
        };
        let mut sigma = vec![0.0; nw];
        for i in 0..nw {
            if red.lw[i].is_finite() {
                sigma[i] += zl[i] / (w[i] - red.lw[i]);
            }
            if red.uw[i].is_finite() {
                sigma[i] += zu[i] / (red.uw[i] - w[i]);
            }
        }
        let gphi = red.barrier_gradient(&w, &ev.grad, mu);
        let mut rhs = vec![0.0; nw + m];
        for i in 0..nw {
            let mut v = gphi[i];
            for r in 0..m {
                v += ev.jac[r * nw + i] * lam[r];
            }
            rhs[i] = -v;
        }
        for r in 0..m {
            rhs[nw + r] = -ev.h[r];
        }

        let Some((kkt, fact, dw_used)) = factor_kkt(&hess, &sigma, &ev.jac, nw, m, mu, forced_dw, last_dw) else {
            break NlpStatus::NumericalFailure;
        };
        if dw_used > 0.0 {
            last_dw = dw_used;
        }
        let sol = refined_solve(&kkt, &fact, &rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            break NlpStatus::NumericalFailure;
        }
        let (dx, dlam) = sol.split_at(nw);
        let mut dzl = vec![0.0; nw];
        let mut dzu = vec![0.0; nw];
        for i in 0..nw {
            if red.lw[i].is_finite() {
                let s = w[i] - red.lw[i];
                dzl[i] = mu / s - zl[i] - zl[i] / s * dx[i];
            }
            if red.uw[i].is_finite() {
                let s = red.uw[i] - w[i];
                dzu[i] = mu / s - zu[i] + zu[i] / s * dx[i];
            }
        }
        let alpha_max = max_step(&w, dx, &red.lw, &red.uw, tau);
        let mut alpha_z: f64 = 1.0;
        for i in 0..nw {
            if dzl[i] < 0.0 {
                alpha_z = alpha_z.min(-tau * zl[i] / dzl[i]);
            }
            if dzu[i] < 0.0 {
                alpha_z = alpha_z.min(-tau * zu[i] / dzu[i]);
            }
        }

        // Merit parameter and directional derivative.
        let h1 = norm1(&ev.h);
        let gd: f64 = gphi.iter().zip(dx).map(|(a, b)| a * b).sum();
        let mut quad = 0.0;
        for a in 0..nw {
            let mut s = 0.0;
            for b in 0..nw {
                s += kkt[a * (nw + m) + b] * dx[b];
            }
            quad += dx[a] * s;
        }
        if h1 > 0.0 {
            let trial = (gd + 0.5 * quad.max(0.0)) / (0.9 * h1);
            if nu < trial {
                nu = trial + 1e-6;
            }
        }
        let phi = red.barrier(&w, ev.f, mu) + nu * h1;
        let dphi = gd - nu * h1;
        let step_len = norm_inf(dx);

        let mut accepted: Option<(Vec<f64>, Eval, f64)> = None;
        if dphi > -1e-14 * (1.0 + phi.abs()) || step_len <= 1e-14 * (1.0 + norm_inf(&w)) {
            let wt: Vec<f64> = (0..nw).map(|i| w[i] + alpha_max * dx[i]).collect();
            if let Some(et) = red.eval(&wt) {
                accepted = Some((wt, et, alpha_max));
            }
        } else {
            let mut alpha = alpha_max;
            let mut first = true;
            while alpha > 1e-14 {
                let wt: Vec<f64> = (0..nw).map(|i| w[i] + alpha * dx[i]).collect();
                if let Some(et) = red.eval(&wt) {
                    let phit = red.barrier(&wt, et.f, mu) + nu * norm1(&et.h);
                    if phit <= phi + ARMIJO * alpha * dphi {
                        accepted = Some((wt, et, alpha));
                        break;
                    }
                    if first && norm1(&et.h) >= h1 {
                        if let Some(found) = second_order_correction(&red, &kkt, &fact, &rhs, &w, &ev.h, &et.h, alpha, tau, mu, nu, phi, dphi) {
                            accepted = Some(found);
                            break;
                        }
                    }
                }
                first = false;
                alpha *= 0.5;
            }
        }
        iter += 1;
        match accepted {
            Some((wt, et, alpha)) => {
                w = wt;
                ev = et;
                for r in 0..m {
                    lam[r] += alpha * dlam[r];
                }
                for i in 0..nw {
                    if red.lw[i].is_finite() {
                        let s = w[i] - red.lw[i];
                        zl[i] = (zl[i] + alpha_z * dzl[i]).clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
                    }
                    if red.uw[i].is_finite() {
                        let s = red.uw[i] - w[i];
                        zu[i] = (zu[i] + alpha_z * dzu[i]).clamp(mu / (KAPPA_SIGMA * s), KAPPA_SIGMA * mu / s);
                    }
                }
                ls_failures = 0;
                forced_dw = 0.0;
            }
            None => {
                ls_failures += 1;
                forced_dw = (10.0 * last_dw.max(forced_dw)).max(1e-4);
                if ls_failures >= MAX_LS_FAILURES {
                    break NlpStatus::NumericalFailure;
                }
            }
        }
    };

    let mut x = red.full_x(&w);
    for i in 0..n {
        x[i] = x[i].max(xl[i]).min(xu[i]);
    }
    let res = residuals(&ev, &w, &lam, &zl, &zu, 0.0);
    let mut lambda = vec![0.0; m0];
    for (r, &j) in red.rows.iter().enumerate() {
        lambda[j] = lam[r] * red.sc[r] / red.sf;
    }
    NlpResult {
        objective: p.objective(&x),
        violation: violation(p, &x),
        x,
        stationarity: res.dual / res.sd,
        status,
        iterations: iter,
        wall_time: t0.elapsed(),
        lambda,
        warm: Some(WarmStart { obj_scale: red.sf, con_scale: red.sc.clone(), lambda: lam, z_lo: zl, z_hi: zu, mu }),
    }
}

fn max_step(w: &[f64], d: &[f64], lw: &[f64], uw: &[f64], tau: f64) -> f64 {
    let mut a: f64 = 1.0;
    for i in 0..w.len() {
        if d[i] < 0.0 && lw[i].is_finite() {
            a = a.min(-tau * (w[i] - lw[i]) / d[i]);
        }
        if d[i] > 0.0 && uw[i].is_finite() {
            a = a.min(tau * (uw[i] - w[i]) / d[i]);
        }
    }
    a
}

fn least_squares_multipliers(ev: &Eval, zl: &[f64], zu: &[f64], nw: usize, m: usize) -> Vec<f64> {
    let dim = nw + m;
    let mut k = vec![0.0; dim * dim];
    for i in 0..nw {
        k[i * dim + i] = 1.0;
    }
    for r in 0..m {
        for i in 0..nw {
            let v = ev.jac[r * nw + i];
            k[(nw + r) * dim + i] = v;
            k[i * dim + nw + r] = v;
        }
    }
    let mut rhs = vec![0.0; dim];
    for i in 0..nw {
        rhs[i] = -(ev.grad[i] - zl[i] + zu[i]);
    }
    let f = Ldl::factor(k, dim, 1e-12);
    let sol = f.solve(&rhs);
    let lam = sol[nw..].to_vec();
    if f.inertia().zero > 0 || lam.iter().any(|v| !v.is_finite()) || norm_inf(&lam) > 1e3 {
        vec![0.0; m]
    } else {
        lam
    }
}

/// Assembles and factors the primal-dual matrix, increasing the primal
/// regularization until the inertia is `(nw, m, 0)`.
#[allow(clippy::too_many_arguments)]
fn factor_kkt(
    hess: &[f64],
    sigma: &[f64],
    jac: &[f64],
    nw: usize,
    m: usize,
    mu: f64,
    forced_dw: f64,
    last_dw: f64,
) -> Option<(Vec<f64>, Ldl, f64)> {
    let dim = nw + m;
    let mut base = vec![0.0; dim * dim];
    for a in 0..nw {
        for b in 0..nw {
            base[a * dim + b] = hess[a * nw + b];
        }
        base[a * dim + a] += sigma[a];
    }
    for r in 0..m {
        for i in 0..nw {
            let v = jac[r * nw + i];
            base[(nw + r) * dim + i] = v;
            base[i * dim + nw + r] = v;
        }
    }
    let zero_tol = 1e-13;
    let mut dw = forced_dw;
    let mut dc = 0.0;
    loop {
        let mut k = base.clone();
        for a in 0..nw {
            k[a * dim + a] += dw;
        }
        for r in 0..m {
            k[(nw + r) * dim + nw + r] -= dc;
        }
        let f = Ldl::factor(k.clone(), dim, zero_tol);
        let inertia = f.inertia();
        if inertia.positive == nw && inertia.negative == m && inertia.zero == 0 {
            return Some((k, f, dw));
        }
        if inertia.zero > 0 && dc == 0.0 && m > 0 {
            dc = 1e-8 * mu.powf(0.25);
            if dw == 0.0 {
                continue;
            }
        }
        dw = if dw == 0.0 {
            if last_dw == 0.0 {
                1e-4
            } else {
                (last_dw / 3.0).max(1e-20)
            }
        } else if last_dw == 0.0 {
            dw * 100.0
        } else {
            dw * 8.0
        };
        if dw > 1e40 {
            return None;
        }
    }
}

fn refined_solve(k: &[f64], f: &Ldl, rhs: &[f64]) -> Vec<f64> {
    let dim = rhs.len();
    let mut x = f.solve(rhs);
    let tol = 1e-13 * (1.0 + norm_inf(rhs));
    for _ in 0..3 {
        let r: Vec<f64> = (0..dim)
            .map(|i| rhs[i] - (0..dim).map(|j| k[i * dim + j] * x[j]).sum::<f64>())
            .collect();
        if norm_inf(&r) <= tol {
            break;
        }
        let d = f.solve(&r);
        for i in 0..dim {
            x[i] += d[i];
        }
    }
    x
}

#[allow(clippy::too_many_arguments)]
fn second_order_correction<P: NlpProblem + ?Sized>(
    red: &Reduced<'_, P>,
    kkt: &[f64],
    fact: &Ldl,
    rhs: &[f64],
    w: &[f64],
    h: &[f64],
    h_trial: &[f64],
    alpha: f64,
    tau: f64,
    mu: f64,
    nu: f64,
    phi: f64,
    dphi: f64,
) -> Option<(Vec<f64>, Eval, f64)> {
    let nw = red.nw;
    let mut r = rhs.to_vec();
    let mut c_soc: Vec<f64> = h.iter().zip(h_trial).map(|(a, b)| alpha * a + b).collect();
    let mut h_prev = norm1(h_trial);
    for _ in 0..MAX_SOC {
        for (i, v) in c_soc.iter().enumerate() {
            r[nw + i] = -v;
        }
        let sol = refined_solve(kkt, fact, &r);
        let d = &sol[..nw];
        if d.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let a_soc = max_step(w, d, &red.lw, &red.uw, tau);
        let wt: Vec<f64> = (0..nw).map(|i| w[i] + a_soc * d[i]).collect();
        let et = red.eval(&wt)?;
        let ht = norm1(&et.h);
        let phit = red.barrier(&wt, et.f, mu) + nu * ht;
        if phit <= phi + ARMIJO * alpha * dphi {
            return Some((wt, et, alpha));
        }
        if ht > 0.99 * h_prev {
            return None;
        }
        h_prev = ht;
        for (c, v) in c_soc.iter_mut().zip(&et.h) {
            *c = a_soc * *c + v;
        }
    }
    None
}
