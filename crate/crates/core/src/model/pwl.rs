//! Convex, nondecreasing piecewise-linear costs.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A convex increasing piecewise-linear function on `[0, total_length]`.
///
/// Piece `j` has width `lengths[j]` and slope `slopes[j]`. The last piece may be
/// unbounded (`f64::INFINITY`).
#[derive(Debug, Clone, PartialEq)]
pub struct PwlCost {
    lengths: Vec<f64>,
    slopes: Vec<f64>,
}

impl PwlCost {
    pub fn new(lengths: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if lengths.is_empty() || lengths.len() != slopes.len() {
            return Err(Error::invalid("pwl cost needs matching, nonempty lengths and slopes"));
        }
        for (j, &l) in lengths.iter().enumerate() {
            let last = j + 1 == lengths.len();
            if !(l > 0.0) || (l.is_infinite() && !last) {
                return Err(Error::invalid(format!("pwl piece {j} has invalid length {l}")));
            }
        }
        if slopes.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::invalid("pwl slopes must be finite and nonnegative"));
        }
        if slopes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("pwl slopes must be strictly increasing"));
        }
        Ok(Self { lengths, slopes })
    }

    /// Single unbounded piece.
    pub fn linear(slope: f64) -> Result<Self> {
        Self::new(vec![f64::INFINITY], vec![slope])
    }

    /// Lengths and slopes given in MW-based units, converted to per unit.
    pub fn from_natural_units(lengths_mw: &[f64], slopes_per_mw: &[f64], s_base: f64) -> Result<Self> {
        Self::new(
            lengths_mw.iter().map(|l| l / s_base).collect(),
            slopes_per_mw.iter().map(|s| s * s_base).collect(),
        )
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    pub fn pieces(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.lengths.iter().copied().zip(self.slopes.iter().copied())
    }

    pub fn total_length(&self) -> f64 {
        self.lengths.iter().sum()
    }

    pub fn max_slope(&self) -> f64 {
        *self.slopes.last().expect("nonempty")
    }

    pub fn is_unbounded(&self) -> bool {
        self.lengths.last().map_or(false, |l| l.is_infinite())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        eval_pwl(self, x)
    }
}

/// Evaluates `cost` at `x >= 0`.
pub fn eval_pwl(cost: &PwlCost, x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("pwl argument {x} is negative or NaN")));
    }
    let total = cost.total_length();
    if x > total {
        return Err(Error::Domain(format!("pwl argument {x} exceeds domain length {total}")));
    }
    let mut rest = x;
    let mut value = 0.0;
    for (len, slope) in cost.pieces() {
        let take = rest.min(len);
        value += slope * take;
        rest -= take;
        if rest <= 0.0 {
            break;
        }
    }
    Ok(value)
}

#[derive(Serialize, Deserialize)]
struct RawPwl {
    lengths: Vec<Option<f64>>,
    slopes: Vec<f64>,
}

impl Serialize for PwlCost {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        RawPwl {
            lengths: self.lengths.iter().map(|l| l.is_finite().then_some(*l)).collect(),
            slopes: self.slopes.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for PwlCost {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawPwl::deserialize(d)?;
        let lengths = raw.lengths.iter().map(|l| l.unwrap_or(f64::INFINITY)).collect();
        PwlCost::new(lengths, raw.slopes).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn appendix() -> PwlCost {
        PwlCost::new(vec![0.02, 0.5, f64::INFINITY], vec![1e5, 5e5, 1e8]).unwrap()
    }

    // Independent evaluation: maximum of the affine pieces.
    fn max_affine(c: &PwlCost, x: f64) -> f64 {
        let mut start = 0.0;
        let mut base = 0.0;
        let mut best = f64::NEG_INFINITY;
        for (len, slope) in c.pieces() {
            best = best.max(base + slope * (x - start));
            base += slope * len;
            start += len;
        }
        best
    }

    #[test]
    fn hand_values() {
        let c = appendix();
        assert_eq!(c.eval(0.0).unwrap(), 0.0);
        assert!((c.eval(0.01).unwrap() - 1000.0).abs() < 1e-9);
        assert!((c.eval(1.0).unwrap() - 48_252_000.0).abs() / 48_252_000.0 < 1e-12);
        assert!((c.eval(0.2).unwrap() - 92_000.0).abs() < 1e-9);
    }

    #[test]
    fn negative_is_domain_error() {
        assert!(matches!(appendix().eval(-1e-12), Err(Error::Domain(_))));
        assert!(appendix().eval(f64::NAN).is_err());
    }

    #[test]
    fn bounded_domain() {
        let c = PwlCost::new(vec![1.0, 2.0], vec![1.0, 3.0]).unwrap();
        assert_eq!(c.eval(3.0).unwrap(), 7.0);
        assert!(c.eval(3.5).is_err());
    }

    #[test]
    fn rejects_nonconvex() {
        assert!(PwlCost::new(vec![1.0, 1.0], vec![2.0, 1.0]).is_err());
        assert!(PwlCost::new(vec![f64::INFINITY, 1.0], vec![1.0, 2.0]).is_err());
        assert!(PwlCost::new(vec![0.0], vec![1.0]).is_err());
    }

    #[test]
    fn natural_units() {
        let c = PwlCost::from_natural_units(&[2.0, 50.0, f64::INFINITY], &[1e3, 5e3, 1e6], 100.0).unwrap();
        assert_eq!(c.lengths()[..2], [0.02, 0.5]);
        assert_eq!(c.slopes(), &[1e5, 5e5, 1e8]);
    }

    #[test]
    fn json_round_trip() {
        let c = appendix();
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("null"));
        let back: PwlCost = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }

    proptest! {
        #[test]
        fn matches_max_of_affine_pieces(x in 0.0f64..3.0) {
            let c = appendix();
            let v = c.eval(x).unwrap();
            prop_assert!((v - max_affine(&c, x)).abs() <= 1e-9 * (1.0 + v.abs()));
        }

        #[test]
        fn convex(x in 0.0f64..2.0, y in 0.0f64..2.0, t in 0.0f64..1.0) {
            let c = appendix();
            let lhs = c.eval(t * x + (1.0 - t) * y).unwrap();
            let rhs = t * c.eval(x).unwrap() + (1.0 - t) * c.eval(y).unwrap();
            prop_assert!(lhs <= rhs + 1e-9 * (1.0 + rhs.abs()));
        }

        #[test]
        fn nondecreasing(x in 0.0f64..2.0, d in 0.0f64..1.0) {
            let c = appendix();
            prop_assert!(c.eval(x + d).unwrap() >= c.eval(x).unwrap());
        }
    }
}
