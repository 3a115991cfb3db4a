//! Per-state decision vectors and the equipment layout of each state.

use super::case::{BranchRef, ElementKind, NetworkCase, StateId};
use crate::error::{Error, Result};

/// Surviving equipment of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub state: StateId,
    /// Indices of in-service generators, in case order.
    pub gens: Vec<usize>,
    /// In-service branches, lines first.
    pub branches: Vec<BranchRef>,
    /// Lowest-index bus of each electrical island; its angle is the island reference.
    pub reference_buses: Vec<usize>,
}

impl StateLayout {
    pub fn new(case: &NetworkCase, state: StateId) -> Result<Self> {
        let outage = match state {
            StateId::Base => None,
            StateId::Contingency(k) => {
                let c = case
                    .contingencies
                    .get(k)
                    .ok_or_else(|| Error::invalid(format!("contingency index {k} out of range")))?;
                Some((c.kind, c.element))
            }
        };
        let gens = (0..case.generators.len()).filter(|&g| outage != Some((ElementKind::Generator, g))).collect();
        let branches: Vec<BranchRef> = case
            .branches()
            .filter(|br| match (br, outage) {
                (BranchRef::Line(i), Some((ElementKind::Line, e))) => *i != e,
                (BranchRef::Transformer(i), Some((ElementKind::Transformer, e))) => *i != e,
                _ => true,
            })
            .collect();

        let n = case.num_buses();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut i: usize) -> usize {
            while p[i] != i {
                p[i] = p[p[i]];
                i = p[i];
            }
            i
        }
        for br in &branches {
            let (a, b) = case.branch_ends(*br);
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                parent[hi] = lo;
            }
        }
        let reference_buses = (0..n).filter(|&i| find(&mut parent, i) == i).collect();
        Ok(Self { state, gens, branches, reference_buses })
    }

    pub fn num_buses(&self, case: &NetworkCase) -> usize {
        case.num_buses()
    }

    /// Length of the flat vector (without Δ).
    pub fn flat_len(&self, case: &NetworkCase) -> usize {
        6 * case.num_buses() + 2 * self.gens.len() + self.branches.len()
    }

    /// Position of generator `g` (case index) in this layout.
    pub fn gen_position(&self, g: usize) -> Option<usize> {
        self.gens.iter().position(|&x| x == g)
    }

    pub fn branch_position(&self, br: BranchRef) -> Option<usize> {
        self.branches.iter().position(|&x| x == br)
    }

    /// Branch limit of the given branch in this state.
    pub fn branch_limit(&self, case: &NetworkCase, br: BranchRef) -> f64 {
        let base = self.state == StateId::Base;
        match br {
            BranchRef::Line(i) => {
                if base {
                    case.lines[i].r_max_base
                } else {
                    case.lines[i].r_max_ctg
                }
            }
            BranchRef::Transformer(i) => {
                if base {
                    case.transformers[i].s_max_base
                } else {
                    case.transformers[i].s_max_ctg
                }
            }
        }
    }
}

/// All variables of one state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub state: StateId,
    pub v: Vec<f64>,
    pub theta: Vec<f64>,
    pub sp_plus: Vec<f64>,
    pub sp_minus: Vec<f64>,
    pub sq_plus: Vec<f64>,
    pub sq_minus: Vec<f64>,
    /// Per in-service generator, layout order.
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    /// Per in-service branch, layout order.
    pub s_branch: Vec<f64>,
    pub delta: f64,
}

impl StateVector {
    pub fn zeros(case: &NetworkCase, layout: &StateLayout) -> Self {
        let nb = case.num_buses();
        Self {
            state: layout.state,
            v: vec![0.0; nb],
            theta: vec![0.0; nb],
            sp_plus: vec![0.0; nb],
            sp_minus: vec![0.0; nb],
            sq_plus: vec![0.0; nb],
            sq_minus: vec![0.0; nb],
            p: vec![0.0; layout.gens.len()],
            q: vec![0.0; layout.gens.len()],
            s_branch: vec![0.0; layout.branches.len()],
            delta: 0.0,
        }
    }

    /// Unit voltages (clipped to bounds), zero angles, mid-range injections.
    pub fn flat_start(case: &NetworkCase, layout: &StateLayout) -> Self {
        let mut sv = Self::zeros(case, layout);
        for (i, b) in case.buses.iter().enumerate() {
            sv.v[i] = 1.0f64.clamp(b.v_lo, b.v_hi);
        }
        for (pos, &g) in layout.gens.iter().enumerate() {
            let gen = &case.generators[g];
            sv.p[pos] = 0.5 * (gen.p_lo + gen.p_hi);
            sv.q[pos] = 0.0f64.clamp(gen.q_lo, gen.q_hi);
        }
        sv
    }

    pub fn check_dims(&self, case: &NetworkCase, layout: &StateLayout) -> Result<()> {
        let nb = case.num_buses();
        let bus_ok = [&self.v, &self.theta, &self.sp_plus, &self.sp_minus, &self.sq_plus, &self.sq_minus]
            .iter()
            .all(|x| x.len() == nb);
        if !bus_ok || self.p.len() != layout.gens.len() || self.q.len() != layout.gens.len() {
            return Err(Error::dim("state vector does not match bus or generator count"));
        }
        if self.s_branch.len() != layout.branches.len() || self.state != layout.state {
            return Err(Error::dim("state vector does not match branch count or state"));
        }
        if self.state == StateId::Base && self.delta != 0.0 {
            return Err(Error::invalid("base state must have zero imbalance"));
        }
        Ok(())
    }

    /// Flat vector `[v, θ, σP+, σP−, σQ+, σQ−, p, q, σS]` (Δ excluded).
    pub fn to_vec(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(6 * self.v.len() + 2 * self.p.len() + self.s_branch.len());
        for part in [
            &self.v,
            &self.theta,
            &self.sp_plus,
            &self.sp_minus,
            &self.sq_plus,
            &self.sq_minus,
            &self.p,
            &self.q,
            &self.s_branch,
        ] {
            out.extend_from_slice(part);
        }
        out
    }

    pub fn from_vec(case: &NetworkCase, layout: &StateLayout, x: &[f64], delta: f64) -> Result<Self> {
        if x.len() != layout.flat_len(case) {
            return Err(Error::dim(format!("expected {} entries, got {}", layout.flat_len(case), x.len())));
        }
        let nb = case.num_buses();
        let ng = layout.gens.len();
        let mut it = x.iter().copied();
        let mut take = |n: usize| -> Vec<f64> { it.by_ref().take(n).collect() };
        Ok(Self {
            state: layout.state,
            v: take(nb),
            theta: take(nb),
            sp_plus: take(nb),
            sp_minus: take(nb),
            sq_plus: take(nb),
            sq_minus: take(nb),
            p: take(ng),
            q: take(ng),
            s_branch: take(layout.branches.len()),
            delta,
        })
    }

    /// Smallest slack entry.
    pub fn min_slack(&self) -> f64 {
        [&self.sp_plus, &self.sp_minus, &self.sq_plus, &self.sq_minus, &self.s_branch]
            .iter()
            .flat_map(|v| v.iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Box bounds of each entry of the flat vector of a state.
pub fn flat_bounds(case: &NetworkCase, layout: &StateLayout) -> (Vec<f64>, Vec<f64>) {
    let nb = case.num_buses();
    let mut lo = Vec::with_capacity(layout.flat_len(case));
    let mut hi = Vec::with_capacity(layout.flat_len(case));
    for b in &case.buses {
        lo.push(b.v_lo);
        hi.push(b.v_hi);
    }
    for i in 0..nb {
        if layout.reference_buses.contains(&i) {
            lo.push(0.0);
            hi.push(0.0);
        } else {
            lo.push(f64::NEG_INFINITY);
            hi.push(f64::INFINITY);
        }
    }
    for _ in 0..4 * nb {
        lo.push(0.0);
        hi.push(f64::INFINITY);
    }
    for &g in &layout.gens {
        lo.push(case.generators[g].p_lo);
        hi.push(case.generators[g].p_hi);
    }
    for &g in &layout.gens {
        lo.push(case.generators[g].q_lo);
        hi.push(case.generators[g].q_hi);
    }
    for _ in &layout.branches {
        lo.push(0.0);
        hi.push(f64::INFINITY);
    }
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundled::five_bus;

    #[test]
    fn layout_drops_outaged_equipment() {
        let case = five_bus();
        let base = StateLayout::new(&case, StateId::Base).unwrap();
        assert_eq!(base.gens.len(), 3);
        assert_eq!(base.branches.len(), 6);
        assert_eq!(base.reference_buses, vec![0]);
        let k_gen = case.contingency_index("G2-out").unwrap();
        let l = StateLayout::new(&case, StateId::Contingency(k_gen)).unwrap();
        assert_eq!(l.gens, vec![0, 2]);
        let k_isl = case.contingency_index("L5-out").unwrap();
        let l = StateLayout::new(&case, StateId::Contingency(k_isl)).unwrap();
        assert_eq!(l.branches.len(), 5);
        assert_eq!(l.reference_buses, vec![0, 4]);
    }

    #[test]
    fn flat_round_trip() {
        let case = five_bus();
        let layout = StateLayout::new(&case, StateId::Base).unwrap();
        let mut sv = StateVector::flat_start(&case, &layout);
        sv.theta[2] = 0.1;
        sv.s_branch[3] = 0.5;
        let x = sv.to_vec();
        assert_eq!(x.len(), layout.flat_len(&case));
        assert_eq!(StateVector::from_vec(&case, &layout, &x, 0.0).unwrap(), sv);
        assert!(StateVector::from_vec(&case, &layout, &x[1..], 0.0).is_err());
        let (lo, hi) = flat_bounds(&case, &layout);
        assert_eq!(lo.len(), x.len());
        assert!(x.iter().zip(lo.iter().zip(&hi)).all(|(x, (l, h))| l <= x && x <= h));
    }

    #[test]
    fn dims_are_checked() {
        let case = five_bus();
        let layout = StateLayout::new(&case, StateId::Base).unwrap();
        let mut sv = StateVector::flat_start(&case, &layout);
        assert!(sv.check_dims(&case, &layout).is_ok());
        sv.delta = 1.0;
        assert!(sv.check_dims(&case, &layout).is_err());
        sv.delta = 0.0;
        sv.p.pop();
        assert!(sv.check_dims(&case, &layout).is_err());
    }
}
