//! Central-difference checks of problem derivatives.

use super::NlpProblem;

/// Largest relative errors `|analytic − fd| / max(1, |analytic|)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DerivativeReport {
    pub max_grad_err: f64,
    pub max_jac_err: f64,
    pub max_hess_err: f64,
}

impl DerivativeReport {
    pub fn max(&self) -> f64 {
        self.max_grad_err.max(self.max_jac_err).max(self.max_hess_err)
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(1.0)
}

fn step(x: f64) -> f64 {
    1e-6 * x.abs().max(1.0)
}

/// Compares the gradient, Jacobian and Lagrangian Hessian at `x` (multipliers
/// `lambda`, objective factor 1) with central differences.
pub fn check_derivatives<P: NlpProblem + ?Sized>(p: &P, x: &[f64], lambda: &[f64]) -> DerivativeReport {
    let (n, m) = (p.num_vars(), p.num_cons());
    let mut g = vec![0.0; n];
    p.gradient(x, &mut g);
    let mut jac = vec![0.0; m * n];
    p.jacobian(x, &mut jac);
    let mut hess = vec![0.0; n * n];
    let has_hess = p.hessian(x, 1.0, lambda, &mut hess);

    let mut rep = DerivativeReport::default();
    let mut xp = x.to_vec();
    let (mut cp, mut cm) = (vec![0.0; m], vec![0.0; m]);
    let (mut gp, mut gm) = (vec![0.0; n], vec![0.0; n]);
    let (mut jp, mut jm) = (vec![0.0; m * n], vec![0.0; m * n]);
    for i in 0..n {
        let h = step(x[i]);
        xp[i] = x[i] + h;
        let fp = p.objective(&xp);
        p.constraints(&xp, &mut cp);
        lagrangian_gradient(p, &xp, lambda, &mut gp, &mut jp);
        xp[i] = x[i] - h;
        let fm = p.objective(&xp);
        p.constraints(&xp, &mut cm);
        lagrangian_gradient(p, &xp, lambda, &mut gm, &mut jm);
        xp[i] = x[i];

        rep.max_grad_err = rep.max_grad_err.max(rel(g[i], (fp - fm) / (2.0 * h)));
        for j in 0..m {
            rep.max_jac_err = rep.max_jac_err.max(rel(jac[j * n + i], (cp[j] - cm[j]) / (2.0 * h)));
        }
        if has_hess {
            for r in 0..n {
                let fd = (gp[r] - gm[r]) / (2.0 * h);
                rep.max_hess_err = rep.max_hess_err.max(rel(hess[r * n + i], fd));
            }
        }
    }
    rep
}

/// Gradient of `f + Σ λⱼ cⱼ`.
pub(crate) fn lagrangian_gradient<P: NlpProblem + ?Sized>(p: &P, x: &[f64], lambda: &[f64], g: &mut [f64], jac: &mut [f64]) {
    let n = p.num_vars();
    p.gradient(x, g);
    p.jacobian(x, jac);
    for (j, &l) in lambda.iter().enumerate() {
        if l != 0.0 {
            for i in 0..n {
                g[i] += l * jac[j * n + i];
            }
        }
    }
}
