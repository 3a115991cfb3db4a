mod common;

use scopf::admm::{self, AdmmConfig};
use scopf::bundled;

#[test]
fn logged_residuals_match_replayed_iterates() {
    let case = bundled::five_bus();
    let config = AdmmConfig { workers: Some(1), record_history: true, ..AdmmConfig::default() };
    let sub = admm::build_relaxation(&case, &[0, 1], &config).unwrap();
    let res = admm::run(&sub, &config).unwrap();
    let h = &res.history;
    let mut matched = 0;
    for rec in &res.iterations {
        let cur = h.iter().position(|s| s.r == rec.r && s.t == rec.t).unwrap_or_else(|| panic!("no snapshot for r {} t {}", rec.r, rec.t));
        assert!(cur > 0);
        let prev = &h[cur - 1];
        assert_eq!(prev.r, rec.r);
        let (d0, dk, s, r) = common::replay_residuals(prev, &h[cur]);
        for (name, logged, replay) in [("d0", rec.d0, d0), ("dk", rec.max_dk, dk), ("s", rec.max_s, s), ("r", rec.max_r, r)] {
            assert!((logged - replay).abs() <= 1e-9 * replay.max(1.0), "r {} t {} {name}: logged {logged:e}, replay {replay:e}", rec.r, rec.t);
        }
        matched += 1;
    }
    assert!(matched > 0);
    assert_eq!(matched, res.total_inner);
}
