//! Dense symmetric indefinite factorization `P A Pᵀ = L D Lᵀ` with
//! Bunch-Kaufman diagonal pivoting. Only the lower triangle of the input is read.

const ALPHA: f64 = 0.640_388_203_202_208; // (1 + sqrt(17)) / 8

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

#[derive(Debug, Clone, Copy)]
enum Block {
    One(f64),
    Two(f64, f64, f64),
}

/// Factorization of a dense symmetric matrix.
#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    a: Vec<f64>,
    perm: Vec<usize>,
    blocks: Vec<(usize, Block)>,
    inertia: Inertia,
}

impl Ldl {
    /// Factors the `n × n` row-major matrix `a`; pivots with magnitude at most
    /// `zero_tol` count as zero eigenvalues.
    pub fn factor(mut a: Vec<f64>, n: usize, zero_tol: f64) -> Self {
        assert_eq!(a.len(), n * n);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut blocks = Vec::new();
        let mut inertia = Inertia::default();
        let idx = |i: usize, j: usize| i * n + j;
        let mut k = 0;
        while k < n {
            let akk = a[idx(k, k)].abs();
            let (mut lambda, mut r) = (0.0, k);
            for i in k + 1..n {
                let v = a[idx(i, k)].abs();
                if v > lambda {
                    lambda = v;
                    r = i;
                }
            }
            if akk.max(lambda) <= zero_tol {
                inertia.zero += 1;
                for i in k + 1..n {
                    a[idx(i, k)] = 0.0;
                }
                blocks.push((k, Block::One(0.0)));
                k += 1;
                continue;
            }
            let mut size = 1;
            if akk < ALPHA * lambda {
                let mut sigma: f64 = 0.0;
                for j in k..n {
                    if j != r {
                        let v = if j < r { a[idx(r, j)] } else { a[idx(j, r)] };
                        sigma = sigma.max(v.abs());
                    }
                }
                if akk * sigma >= ALPHA * lambda * lambda {
                    // keep k
                } else if a[idx(r, r)].abs() >= ALPHA * sigma {
                    swap_sym(&mut a, n, k, r);
                    perm.swap(k, r);
                } else {
                    size = 2;
                    if r != k + 1 {
                        swap_sym(&mut a, n, k + 1, r);
                        perm.swap(k + 1, r);
                    }
                }
            }
            if size == 1 {
                let d = a[idx(k, k)];
                if d.abs() <= zero_tol {
                    inertia.zero += 1;
                } else if d > 0.0 {
                    inertia.positive += 1;
                } else {
                    inertia.negative += 1;
                }
                let inv = if d.abs() <= zero_tol { 0.0 } else { 1.0 / d };
                for i in k + 1..n {
                    a[idx(i, k)] *= inv;
                }
                for j in k + 1..n {
                    let ljd = a[idx(j, k)] * d;
                    if ljd == 0.0 {
                        continue;
                    }
                    for i in j..n {
                        a[idx(i, j)] -= a[idx(i, k)] * ljd;
                    }
                }
                blocks.push((k, Block::One(d)));
                k += 1;
            } else {
                let (d11, d21, d22) = (a[idx(k, k)], a[idx(k + 1, k)], a[idx(k + 1, k + 1)]);
                let det = d11 * d22 - d21 * d21;
                let scale = d11.abs().max(d22.abs()).max(d21.abs());
                if det.abs() <= zero_tol * scale {
                    inertia.zero += 1;
                    if d11 + d22 >= 0.0 {
                        inertia.positive += 1;
                    } else {
                        inertia.negative += 1;
                    }
                } else if det < 0.0 {
                    inertia.positive += 1;
                    inertia.negative += 1;
                } else if d11 + d22 > 0.0 {
                    inertia.positive += 2;
                } else {
                    inertia.negative += 2;
                }
                let (i11, i21, i22) = if det == 0.0 { (0.0, 0.0, 0.0) } else { (d22 / det, -d21 / det, d11 / det) };
                for i in k + 2..n {
                    let (x, y) = (a[idx(i, k)], a[idx(i, k + 1)]);
                    a[idx(i, k)] = x * i11 + y * i21;
                    a[idx(i, k + 1)] = x * i21 + y * i22;
                }
                for j in k + 2..n {
                    let (w1, w2) = (
                        a[idx(j, k)] * d11 + a[idx(j, k + 1)] * d21,
                        a[idx(j, k)] * d21 + a[idx(j, k + 1)] * d22,
                    );
                    for i in j..n {
                        a[idx(i, j)] -= a[idx(i, k)] * w1 + a[idx(i, k + 1)] * w2;
                    }
                }
                a[idx(k + 1, k)] = 0.0;
                blocks.push((k, Block::Two(d11, d21, d22)));
                k += 2;
            }
        }
        Self { n, a, perm, blocks, inertia }
    }

    pub fn inertia(&self) -> Inertia {
        self.inertia
    }

    /// Solves `A x = b`; zero pivots contribute zero components.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let idx = |i: usize, j: usize| i * n + j;
        let mut y: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for j in 0..n {
            let yj = y[j];
            if yj != 0.0 {
                for i in j + 1..n {
                    y[i] -= self.a[idx(i, j)] * yj;
                }
            }
        }
        for &(k, blk) in &self.blocks {
            match blk {
                Block::One(d) => y[k] = if d == 0.0 { 0.0 } else { y[k] / d },
                Block::Two(d11, d21, d22) => {
                    let det = d11 * d22 - d21 * d21;
                    let (u, v) = (y[k], y[k + 1]);
                    if det == 0.0 {
                        y[k] = 0.0;
                        y[k + 1] = 0.0;
                    } else {
                        y[k] = (d22 * u - d21 * v) / det;
                        y[k + 1] = (d11 * v - d21 * u) / det;
                    }
                }
            }
        }
        for j in (0..n).rev() {
            let mut s = y[j];
            for i in j + 1..n {
                s -= self.a[idx(i, j)] * y[i];
            }
            y[j] = s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

/// Symmetric row/column interchange of `p < q` in lower-triangular storage.
fn swap_sym(a: &mut [f64], n: usize, p: usize, q: usize) {
    let (p, q) = if p < q { (p, q) } else { (q, p) };
    if p == q {
        return;
    }
    let idx = |i: usize, j: usize| i * n + j;
    for j in 0..p {
        a.swap(idx(p, j), idx(q, j));
    }
    a.swap(idx(p, p), idx(q, q));
    for j in p + 1..q {
        a.swap(idx(j, p), idx(q, j));
    }
    for i in q + 1..n {
        a.swap(idx(i, p), idx(i, q));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn sym(n: usize, vals: &[f64]) -> Vec<f64> {
        let mut a = vec![0.0; n * n];
        let mut t = 0;
        for i in 0..n {
            for j in 0..=i {
                a[i * n + j] = vals[t % vals.len()];
                a[j * n + i] = a[i * n + j];
                t += 1;
            }
        }
        a
    }

    #[test]
    fn kkt_inertia() {
        // [[2, 0, 1], [0, 1, 1], [1, 1, 0]]: two positive, one negative.
        let a = vec![2.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 0.0];
        let f = Ldl::factor(a.clone(), 3, 1e-14);
        assert_eq!(f.inertia(), Inertia { positive: 2, negative: 1, zero: 0 });
        let x = f.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_diagonal_needs_two_by_two() {
        let a = vec![0.0, 1.0, 1.0, 0.0];
        let f = Ldl::factor(a, 2, 1e-14);
        assert_eq!(f.inertia(), Inertia { positive: 1, negative: 1, zero: 0 });
        let x = f.solve(&[3.0, 5.0]);
        assert!((x[0] - 5.0).abs() < 1e-14 && (x[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn singular_detected() {
        let a = vec![1.0, 1.0, 1.0, 1.0];
        assert_eq!(Ldl::factor(a, 2, 1e-12).inertia().zero, 1);
    }

    proptest! {
        #[test]
        fn matches_dense_solver(n in 1usize..12, vals in prop::collection::vec(-5.0f64..5.0, 80)) {
            let a = sym(n, &vals);
            let m = DMatrix::from_row_slice(n, n, &a);
            let eig = m.clone().symmetric_eigen();
            prop_assume!(eig.eigenvalues.iter().all(|e| e.abs() > 1e-6));
            let f = Ldl::factor(a, n, 1e-14);
            let pos = eig.eigenvalues.iter().filter(|e| **e > 0.0).count();
            prop_assert_eq!(f.inertia().positive, pos);
            prop_assert_eq!(f.inertia().negative, n - pos);
            let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
            let x = f.solve(&b);
            let r = &m * DVector::from_vec(x) - DVector::from_vec(b);
            let cond = eig.eigenvalues.iter().map(|e| e.abs()).fold(0.0, f64::max)
                / eig.eigenvalues.iter().map(|e| e.abs()).fold(f64::INFINITY, f64::min);
            prop_assert!(r.amax() < 1e-10 * cond.max(1.0));
        }
    }
}
