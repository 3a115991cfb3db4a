//! Term-based problem description with analytic first and second derivatives.

use super::NlpProblem;
use crate::smoothing::{response_full_u, response_upper_u, softplus, softplus_d1, softplus_d2};

/// Univariate function applied to an affine form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scalar {
    /// `u²`
    Square,
    /// `ε·ln(1 + exp(u/ε))`
    Softplus { eps: f64 },
    /// Smoothed `proj[lo, hi](u)`.
    ResponseFull { lo: f64, hi: f64, eps: f64 },
    /// Smoothed `min(hi, u)`.
    ResponseUpper { hi: f64, eps: f64 },
}

impl Scalar {
    pub fn eval(&self, u: f64) -> (f64, f64, f64) {
        match *self {
            Scalar::Square => (u * u, 2.0 * u, 2.0),
            Scalar::Softplus { eps } => (softplus(u, eps), softplus_d1(u, eps), softplus_d2(u, eps)),
            Scalar::ResponseFull { lo, hi, eps } => response_full_u(u, lo, hi, eps),
            Scalar::ResponseUpper { hi, eps } => response_upper_u(u, hi, eps),
        }
    }
}

/// One additive term of an objective or constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Constant(f64),
    Linear { var: usize, coef: f64 },
    /// `coef · x_a · x_b` (`a == b` allowed).
    Product { a: usize, b: usize, coef: f64 },
    /// `x_va · x_vb · (cos_coef·cos(x_ta − x_tb + shift) + sin_coef·sin(x_ta − x_tb + shift))`
    Trig { va: usize, vb: usize, ta: usize, tb: usize, shift: f64, cos_coef: f64, sin_coef: f64 },
    /// `scale · f(Σ aⱼ xⱼ + offset)`
    Smooth { args: Vec<(usize, f64)>, offset: f64, scale: f64, func: Scalar },
}

impl Term {
    pub fn linear(var: usize, coef: f64) -> Self {
        Term::Linear { var, coef }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, Term::Constant(_) | Term::Linear { .. })
    }

    fn value(&self, x: &[f64]) -> f64 {
        match self {
            Term::Constant(c) => *c,
            Term::Linear { var, coef } => coef * x[*var],
            Term::Product { a, b, coef } => coef * x[*a] * x[*b],
            Term::Trig { va, vb, ta, tb, shift, cos_coef, sin_coef } => {
                let t = x[*ta] - x[*tb] + shift;
                x[*va] * x[*vb] * (cos_coef * t.cos() + sin_coef * t.sin())
            }
            Term::Smooth { args, offset, scale, func } => {
                let u = args.iter().map(|(i, a)| a * x[*i]).sum::<f64>() + offset;
                scale * func.eval(u).0
            }
        }
    }

    fn add_gradient(&self, x: &[f64], w: f64, g: &mut [f64]) {
        match self {
            Term::Constant(_) => {}
            Term::Linear { var, coef } => g[*var] += w * coef,
            Term::Product { a, b, coef } => {
                g[*a] += w * coef * x[*b];
                g[*b] += w * coef * x[*a];
            }
            Term::Trig { va, vb, ta, tb, shift, cos_coef, sin_coef } => {
                let t = x[*ta] - x[*tb] + shift;
                let (s, c) = t.sin_cos();
                let f = cos_coef * c + sin_coef * s;
                let df = -cos_coef * s + sin_coef * c;
                let (a, b) = (x[*va], x[*vb]);
                g[*va] += w * b * f;
                g[*vb] += w * a * f;
                g[*ta] += w * a * b * df;
                g[*tb] -= w * a * b * df;
            }
            Term::Smooth { args, offset, scale, func } => {
                let u = args.iter().map(|(i, a)| a * x[*i]).sum::<f64>() + offset;
                let d1 = func.eval(u).1;
                for (i, a) in args {
                    g[*i] += w * scale * d1 * a;
                }
            }
        }
    }

    fn add_hessian(&self, x: &[f64], w: f64, n: usize, h: &mut [f64]) {
        if w == 0.0 {
            return;
        }
        match self {
            Term::Constant(_) | Term::Linear { .. } => {}
            Term::Product { a, b, coef } => {
                h[a * n + b] += w * coef;
                h[b * n + a] += w * coef;
            }
            Term::Trig { va, vb, ta, tb, shift, cos_coef, sin_coef } => {
                let t = x[*ta] - x[*tb] + shift;
                let (s, c) = t.sin_cos();
                let f = cos_coef * c + sin_coef * s;
                let df = -cos_coef * s + sin_coef * c;
                let d2f = -f;
                let (a, b) = (x[*va], x[*vb]);
                let idx = [*va, *vb, *ta, *tb];
                // Local Hessian in (va, vb, ta, tb).
                let loc = [
                    [0.0, f, b * df, -b * df],
                    [f, 0.0, a * df, -a * df],
                    [b * df, a * df, a * b * d2f, -a * b * d2f],
                    [-b * df, -a * df, -a * b * d2f, a * b * d2f],
                ];
                for p in 0..4 {
                    for q in 0..4 {
                        h[idx[p] * n + idx[q]] += w * loc[p][q];
                    }
                }
            }
            Term::Smooth { args, offset, scale, func } => {
                let u = args.iter().map(|(i, a)| a * x[*i]).sum::<f64>() + offset;
                let d2 = w * scale * func.eval(u).2;
                for (i, ai) in args {
                    for (j, aj) in args {
                        h[i * n + j] += d2 * ai * aj;
                    }
                }
            }
        }
    }
}

/// Label attached to each constraint for inspection and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Generic,
    PwlSplit,
    FlowDefinition,
    NodalActive,
    NodalReactive,
    BranchLimit,
    ActiveCoupling,
    ReactiveCoupling,
    Restriction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub terms: Vec<Term>,
    pub lo: f64,
    pub hi: f64,
    pub tag: Tag,
}

/// An NLP assembled from terms.
#[derive(Debug, Clone, Default)]
pub struct Model {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub objective: Vec<Term>,
    pub constraints: Vec<Constraint>,
}

impl Model {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_var(&mut self, lo: f64, hi: f64) -> usize {
        self.lo.push(lo);
        self.hi.push(hi);
        self.lo.len() - 1
    }

    pub fn fix(&mut self, var: usize, value: f64) {
        self.lo[var] = value;
        self.hi[var] = value;
    }

    pub fn add_objective(&mut self, t: Term) {
        self.objective.push(t);
    }

    pub fn add_constraint(&mut self, terms: Vec<Term>, lo: f64, hi: f64, tag: Tag) -> usize {
        self.constraints.push(Constraint { terms, lo, hi, tag });
        self.constraints.len() - 1
    }

    pub fn add_eq(&mut self, terms: Vec<Term>, rhs: f64, tag: Tag) -> usize {
        self.add_constraint(terms, rhs, rhs, tag)
    }

    /// Removes rows whose variables are all fixed.
    pub fn drop_constant_rows(&mut self) {
        let (lo, hi) = (&self.lo, &self.hi);
        let fixed = |i: usize| lo[i] == hi[i];
        self.constraints.retain(|c| {
            !c.terms.iter().all(|t| match t {
                Term::Constant(_) => true,
                Term::Linear { var, .. } => fixed(*var),
                Term::Product { a, b, .. } => fixed(*a) && fixed(*b),
                Term::Trig { va, vb, ta, tb, .. } => fixed(*va) && fixed(*vb) && fixed(*ta) && fixed(*tb),
                Term::Smooth { args, .. } => args.iter().all(|(i, _)| fixed(*i)),
            })
        });
    }

    pub fn constraint_value(&self, j: usize, x: &[f64]) -> f64 {
        self.constraints[j].terms.iter().map(|t| t.value(x)).sum()
    }
}

impl NlpProblem for Model {
    fn num_vars(&self) -> usize {
        self.lo.len()
    }

    fn num_cons(&self) -> usize {
        self.constraints.len()
    }

    fn var_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.lo.clone(), self.hi.clone())
    }

    fn con_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        (self.constraints.iter().map(|c| c.lo).collect(), self.constraints.iter().map(|c| c.hi).collect())
    }

    fn objective(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|t| t.value(x)).sum()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        g.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.objective {
            t.add_gradient(x, 1.0, g);
        }
    }

    fn constraints(&self, x: &[f64], c: &mut [f64]) {
        for (j, con) in self.constraints.iter().enumerate() {
            c[j] = con.terms.iter().map(|t| t.value(x)).sum();
        }
    }

    fn jacobian(&self, x: &[f64], jac: &mut [f64]) {
        let n = self.num_vars();
        jac.iter_mut().for_each(|v| *v = 0.0);
        for (j, con) in self.constraints.iter().enumerate() {
            let row = &mut jac[j * n..(j + 1) * n];
            for t in &con.terms {
                t.add_gradient(x, 1.0, row);
            }
        }
    }

    fn hessian(&self, x: &[f64], obj_factor: f64, lambda: &[f64], h: &mut [f64]) -> bool {
        let n = self.num_vars();
        h.iter_mut().for_each(|v| *v = 0.0);
        for t in &self.objective {
            t.add_hessian(x, obj_factor, n, h);
        }
        for (con, &l) in self.constraints.iter().zip(lambda) {
            for t in &con.terms {
                t.add_hessian(x, l, n, h);
            }
        }
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nlp::fd::{check_derivatives, DerivativeReport};

    #[test]
    fn all_term_kinds_match_differences() {
        let mut m = Model::new();
        for _ in 0..5 {
            m.add_var(-2.0, 2.0);
        }
        m.add_objective(Term::Product { a: 0, b: 1, coef: 1.5 });
        m.add_objective(Term::Smooth { args: vec![(2, 1.0), (3, -2.0)], offset: 0.3, scale: 2.0, func: Scalar::Square });
        m.add_constraint(
            vec![Term::Trig { va: 0, vb: 1, ta: 2, tb: 3, shift: 0.1, cos_coef: -0.7, sin_coef: 4.0 }, Term::linear(4, 1.0)],
            0.0,
            0.0,
            Tag::Generic,
        );
        m.add_constraint(vec![Term::Trig { va: 0, vb: 0, ta: 2, tb: 4, shift: 0.0, cos_coef: 1.0, sin_coef: 0.5 }], 0.0, 1.0, Tag::Generic);
        m.add_constraint(
            vec![Term::Smooth { args: vec![(0, 1.0), (4, 0.5)], offset: 0.0, scale: 1.0, func: Scalar::ResponseFull { lo: -0.3, hi: 0.4, eps: 0.1 } }],
            0.0,
            0.0,
            Tag::Generic,
        );
        m.add_constraint(
            vec![
                Term::Smooth { args: vec![(1, 1.0)], offset: 0.0, scale: -1.0, func: Scalar::Softplus { eps: 0.2 } },
                Term::Smooth { args: vec![(3, 2.0)], offset: 0.1, scale: 1.0, func: Scalar::ResponseUpper { hi: 0.5, eps: 0.3 } },
            ],
            f64::NEG_INFINITY,
            0.0,
            Tag::Generic,
        );
        let x = [0.3, -0.8, 0.4, 0.1, 0.7];
        let DerivativeReport { max_grad_err, max_jac_err, max_hess_err } = check_derivatives(&m, &x, &[0.5, -1.2, 2.0, 0.7]);
        assert!(max_grad_err < 1e-7, "{max_grad_err}");
        assert!(max_jac_err < 1e-7, "{max_jac_err}");
        assert!(max_hess_err < 1e-6, "{max_hess_err}");
    }
}
