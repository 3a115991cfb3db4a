//! Small cases shipped with the crate.

use crate::model::NetworkCase;

/// JSON text of the five-bus case.
pub const CASE5_JSON: &str = include_str!("../data/case5.json");
/// JSON text of the three-bus case.
pub const CASE3_JSON: &str = include_str!("../data/case3.json");

/// Five buses, three generators, five lines, one transformer and four
/// contingencies (generator, line, transformer and a radial line whose loss
/// islands bus 5).
pub fn five_bus() -> NetworkCase {
    NetworkCase::from_json(CASE5_JSON).expect("bundled case is valid")
}

/// Two fixed-voltage generator buses feeding one load bus.
pub fn three_bus() -> NetworkCase {
    NetworkCase::from_json(CASE3_JSON).expect("bundled case is valid")
}
