//! AC branch flow functions.
//!
//! Every end flow has the shape `sq·a² + a·b·(c_cos·cos(c − d + φ) + c_sin·sin(c − d + φ))`
//! where `(a, c)` are the magnitude and angle at the metered end and `(b, d)` those
//! at the far end. Transformers use the tap/phase π-model, which reduces to the
//! line equations at unit tap and zero shift.

/// Series and charging admittance plus tap data of a branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    pub g: f64,
    pub b: f64,
    pub b_ch: f64,
    pub tap: f64,
    pub shift: f64,
}

/// Coefficients of one end-flow expression.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndCoefficients {
    pub sq: f64,
    pub cos: f64,
    pub sin: f64,
    pub shift: f64,
}

impl EndCoefficients {
    pub fn eval(&self, a: f64, b: f64, c: f64, d: f64) -> f64 {
        let x = c - d + self.shift;
        self.sq * a * a + a * b * (self.cos * x.cos() + self.sin * x.sin())
    }

    /// Gradient with respect to `(a, b, c, d)`.
    pub fn grad(&self, a: f64, b: f64, c: f64, d: f64) -> [f64; 4] {
        let x = c - d + self.shift;
        let (s, co) = x.sin_cos();
        let t = self.cos * co + self.sin * s;
        let dt = -self.cos * s + self.sin * co;
        [2.0 * self.sq * a + b * t, a * t, a * b * dt, -a * b * dt]
    }
}

/// Flows at both ends of a branch, positive when leaving the bus.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BranchFlow {
    pub p_o: f64,
    pub q_o: f64,
    pub p_d: f64,
    pub q_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum End {
    Origin,
    Destination,
}

impl FlowParams {
    pub fn line(g: f64, b: f64, b_ch: f64) -> Self {
        Self { g, b, b_ch, tap: 1.0, shift: 0.0 }
    }

    /// `(active, reactive)` coefficients for the given end. The arguments of
    /// the destination expressions are `(v_d, v_o, θ_d, θ_o)`.
    pub fn end_coefficients(&self, end: End) -> (EndCoefficients, EndCoefficients) {
        let t = self.tap;
        let (g, b, bc) = (self.g, self.b, self.b_ch);
        let (sq_scale, shift) = match end {
            End::Origin => (1.0 / (t * t), -self.shift),
            End::Destination => (1.0, self.shift),
        };
        let p = EndCoefficients { sq: g * sq_scale, cos: -g / t, sin: -b / t, shift };
        let q = EndCoefficients { sq: -(b + bc / 2.0) * sq_scale, cos: b / t, sin: -g / t, shift };
        (p, q)
    }

    pub fn flow(&self, v_o: f64, v_d: f64, th_o: f64, th_d: f64) -> BranchFlow {
        let (po, qo) = self.end_coefficients(End::Origin);
        let (pd, qd) = self.end_coefficients(End::Destination);
        BranchFlow {
            p_o: po.eval(v_o, v_d, th_o, th_d),
            q_o: qo.eval(v_o, v_d, th_o, th_d),
            p_d: pd.eval(v_d, v_o, th_d, th_o),
            q_d: qd.eval(v_d, v_o, th_d, th_o),
        }
    }
}

/// Line end flows.
pub fn line_flow(line: &super::Line, v_o: f64, v_d: f64, th_o: f64, th_d: f64) -> BranchFlow {
    line.params().flow(v_o, v_d, th_o, th_d)
}

/// Transformer end flows.
pub fn transformer_flow(xf: &super::Transformer, v_o: f64, v_d: f64, th_o: f64, th_d: f64) -> BranchFlow {
    xf.params().flow(v_o, v_d, th_o, th_d)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lossless_zero_angle() {
        let f = FlowParams::line(1.0, 0.0, 0.0).flow(1.0, 1.0, 0.3, 0.3);
        assert!(f.p_o.abs() < 1e-15);
    }

    #[test]
    fn reactance_only_line() {
        let f = FlowParams::line(0.0, -10.0, 0.0).flow(1.0, 1.0, 0.1, 0.0);
        assert!((f.p_o - 0.998_334_166_468_281_6).abs() < 1e-12);
        assert!((f.p_o + f.p_d).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_differences() {
        let c = FlowParams { g: 0.8, b: -7.0, b_ch: 0.1, tap: 1.04, shift: 0.2 }.end_coefficients(End::Origin).1;
        let x = [1.02, 0.97, 0.13, -0.05];
        let g = c.grad(x[0], x[1], x[2], x[3]);
        for i in 0..4 {
            let h = 1e-6;
            let mut up = x;
            let mut dn = x;
            up[i] += h;
            dn[i] -= h;
            let fd = (c.eval(up[0], up[1], up[2], up[3]) - c.eval(dn[0], dn[1], dn[2], dn[3])) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()));
        }
    }

    proptest! {
        #[test]
        fn swapped_origin_equals_destination(
            g in 0.0f64..2.0, b in -20.0f64..0.0, bc in 0.0f64..0.5,
            vo in 0.9f64..1.1, vd in 0.9f64..1.1, to in -0.5f64..0.5, td in -0.5f64..0.5,
        ) {
            let p = FlowParams::line(g, b, bc);
            let f = p.flow(vo, vd, to, td);
            let s = p.flow(vd, vo, td, to);
            prop_assert!((f.p_o - s.p_d).abs() < 1e-12);
            prop_assert!((f.q_o - s.q_d).abs() < 1e-12);
        }

        #[test]
        fn lossless_antisymmetric(b in -20.0f64..-0.1, vo in 0.8f64..1.2, vd in 0.8f64..1.2, d in -1.0f64..1.0) {
            let f = FlowParams::line(0.0, b, 0.0).flow(vo, vd, d, 0.0);
            prop_assert!((f.p_o + f.p_d).abs() < 1e-12);
        }

        #[test]
        fn losses_nonnegative(g in 0.0f64..3.0, b in -20.0f64..0.0, vo in 0.8f64..1.2, vd in 0.8f64..1.2, d in -1.5f64..1.5) {
            let f = FlowParams::line(g, b, 0.0).flow(vo, vd, d, 0.0);
            prop_assert!(f.p_o + f.p_d >= -1e-12);
        }

        #[test]
        fn unit_tap_reduces_to_line(
            g in 0.0f64..2.0, b in -20.0f64..0.0, bc in 0.0f64..0.5,
            vo in 0.9f64..1.1, vd in 0.9f64..1.1, d in -0.5f64..0.5,
        ) {
            let l = FlowParams::line(g, b, bc).flow(vo, vd, d, 0.0);
            let t = FlowParams { g, b, b_ch: bc, tap: 1.0, shift: 0.0 }.flow(vo, vd, d, 0.0);
            prop_assert_eq!(l, t);
        }
    }
}
