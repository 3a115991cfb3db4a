mod common;

use common::{branch_power, network_injection, ybus};
use proptest::prelude::*;
use scopf::bundled;
use scopf::model::{nodal_residuals, state_flows, NetworkCase, StateId, StateLayout, StateVector};

fn random_state(case: &NetworkCase, state: StateId, u: &[f64]) -> (StateLayout, StateVector) {
    let layout = StateLayout::new(case, state).unwrap();
    let mut sv = StateVector::flat_start(case, &layout);
    let mut it = u.iter().cycle().copied();
    for (i, b) in case.buses.iter().enumerate() {
        sv.v[i] = b.v_lo + (b.v_hi - b.v_lo) * it.next().unwrap();
        sv.theta[i] = 0.8 * (it.next().unwrap() - 0.5);
        sv.sp_plus[i] = 0.1 * it.next().unwrap();
        sv.sp_minus[i] = 0.1 * it.next().unwrap();
        sv.sq_plus[i] = 0.1 * it.next().unwrap();
        sv.sq_minus[i] = 0.1 * it.next().unwrap();
    }
    for (pos, &g) in layout.gens.iter().enumerate() {
        let gen = &case.generators[g];
        sv.p[pos] = gen.p_lo + (gen.p_hi - gen.p_lo) * it.next().unwrap();
        sv.q[pos] = gen.q_lo + (gen.q_hi - gen.q_lo) * it.next().unwrap();
    }
    if state != StateId::Base {
        sv.delta = 0.2 * (it.next().unwrap() - 0.5);
    }
    (layout, sv)
}

fn states(case: &NetworkCase) -> Vec<StateId> {
    std::iter::once(StateId::Base).chain((0..case.contingencies.len()).map(StateId::Contingency)).collect()
}

fn check(case: &NetworkCase, u: &[f64]) -> Result<(), TestCaseError> {
    for state in states(case) {
        let (layout, sv) = random_state(case, state, u);
        let flows = state_flows(case, &layout, &sv);
        for (f, &br) in flows.iter().zip(&layout.branches) {
            let (so, sd) = branch_power(case, br, &sv.v, &sv.theta);
            for (a, b) in [(f.p_o, so.re), (f.q_o, so.im), (f.p_d, sd.re), (f.q_d, sd.im)] {
                prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{state:?} {br:?}: {a} vs {b}");
            }
        }
        let y = ybus(case, &layout.branches);
        let inj = network_injection(&y, &sv.v, &sv.theta);
        let mut gp: Vec<f64> = case.buses.iter().map(|b| -b.load_p).collect();
        let mut gq: Vec<f64> = case.buses.iter().map(|b| -b.load_q).collect();
        for (pos, &g) in layout.gens.iter().enumerate() {
            gp[case.generators[g].bus] += sv.p[pos];
            gq[case.generators[g].bus] += sv.q[pos];
        }
        let (dp, dq) = nodal_residuals(case, state, &sv).unwrap();
        for i in 0..case.num_buses() {
            let ep = gp[i] - inj[i].re - sv.sp_plus[i] + sv.sp_minus[i];
            let eq = gq[i] - inj[i].im - sv.sq_plus[i] + sv.sq_minus[i];
            prop_assert!((dp[i] - ep).abs() <= 1e-10, "{state:?} bus {i} active: {} vs {ep}", dp[i]);
            prop_assert!((dq[i] - eq).abs() <= 1e-10, "{state:?} bus {i} reactive: {} vs {eq}", dq[i]);
        }
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn five_bus_flows_and_residuals_match_ybus(u in prop::collection::vec(0.0f64..1.0, 64)) {
        check(&bundled::five_bus(), &u)?;
    }

    #[test]
    fn three_bus_flows_and_residuals_match_ybus(u in prop::collection::vec(0.0f64..1.0, 32)) {
        check(&bundled::three_bus(), &u)?;
    }
}
