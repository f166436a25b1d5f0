//! Action selection from the combined demand, and the set of cores each
//! action suspends.
//!
//! The combined demand is `cd = sqrt(sd^2 + pd^2)`. Thresholds:
//!
//! | condition             | action |
//! |-----------------------|--------|
//! | cd < sqrt(2)          | A00    |
//! | sqrt(2) <= cd <= 2*sqrt(2) | A01 |
//! | cd > 2*sqrt(2)        | A10    |
//!
//! Comparisons run on the integer `sd^2 + pd^2` against 2 and 8, so the
//! boundary cases (1,1) and (2,2) are decided exactly.

use crate::demand::{check_level, ActionId, ActionMap};
use crate::error::Result;
use crate::topology::{CoreId, Topology};

const LOWER_SQ: u8 = 2;
const UPPER_SQ: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CombinedDemand {
    sum_sq: u8,
}

impl CombinedDemand {
    /// `sd^2 + pd^2`, in 0..=18.
    pub fn squared(&self) -> u8 {
        self.sum_sq
    }

    pub fn value(&self) -> f64 {
        (self.sum_sq as f64).sqrt()
    }
}

pub fn compute_cd(sd: u8, pd: u8) -> Result<CombinedDemand> {
    check_level("sd", sd)?;
    check_level("pd", pd)?;
    Ok(CombinedDemand {
        sum_sq: sd * sd + pd * pd,
    })
}

pub fn select_action(cd: CombinedDemand) -> ActionId {
    if cd.sum_sq < LOWER_SQ {
        ActionId::A00
    } else if cd.sum_sq <= UPPER_SQ {
        ActionId::A01
    } else {
        ActionId::A10
    }
}

pub fn build_default_action_map() -> ActionMap {
    let mut map = ActionMap::uniform(ActionId::A00);
    for sd in 0..4u8 {
        for pd in 0..4u8 {
            let action = select_action(compute_cd(sd, pd).expect("levels in range"));
            map.set(sd, pd, action).expect("levels in range");
        }
    }
    map
}

/// Cores suspended while a protected process runs on `protected_core`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtectionScope {
    pub protected_core: CoreId,
    /// Ascending, never contains `protected_core`.
    pub halt_set: Vec<CoreId>,
}

impl ProtectionScope {
    pub fn halts(&self, lc: CoreId) -> bool {
        self.halt_set.binary_search(&lc).is_ok()
    }
}

pub fn protection_scope(action: ActionId, lc: CoreId, topo: &Topology) -> Result<ProtectionScope> {
    topo.check(lc)?;
    let halt_set = match action {
        ActionId::A00 => Vec::new(),
        ActionId::A01 => topo.hlc_of(lc)?,
        ActionId::A10 => topo.logical_cores().filter(|&c| c != lc).collect(),
    };
    Ok(ProtectionScope {
        protected_core: lc,
        halt_set,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn cd(sd: u8, pd: u8) -> CombinedDemand {
        compute_cd(sd, pd).unwrap()
    }

    #[test]
    fn cd_values() {
        assert!((cd(1, 1).value() - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(cd(0, 0).value(), 0.0);
        assert!((cd(3, 3).value() - 4.242_640_687_119_285).abs() < 1e-12);
        assert!(matches!(compute_cd(4, 0), Err(Error::InvalidDemand { .. })));
    }

    #[test]
    fn threshold_examples() {
        assert_eq!(select_action(cd(0, 0)), ActionId::A00);
        assert_eq!(select_action(cd(1, 1)), ActionId::A01);
        assert_eq!(select_action(cd(3, 3)), ActionId::A10);
    }

    #[test]
    fn default_map_boundaries() {
        let map = build_default_action_map();
        assert_eq!(map.get(0, 1).unwrap(), ActionId::A00);
        assert_eq!(map.get(2, 2).unwrap(), ActionId::A01);
        assert_eq!(map.get(0, 3).unwrap(), ActionId::A10);
    }

    // Independent route: compare the real-valued cd against the thresholds
    // with a tolerance band around the exact boundary points.
    #[test]
    fn exact_rule_agrees_with_float_rule_off_boundary() {
        let lo = std::f64::consts::SQRT_2;
        let hi = 2.0 * lo;
        for sd in 0..4u8 {
            for pd in 0..4u8 {
                let v = cd(sd, pd).value();
                let action = select_action(cd(sd, pd));
                if (v - lo).abs() < 1e-9 || (v - hi).abs() < 1e-9 {
                    assert_eq!(action, ActionId::A01, "boundary ({sd},{pd})");
                } else if v < lo {
                    assert_eq!(action, ActionId::A00);
                } else if v < hi {
                    assert_eq!(action, ActionId::A01);
                } else {
                    assert_eq!(action, ActionId::A10);
                }
            }
        }
    }

    #[test]
    fn monotone_and_symmetric() {
        for a in 0..4u8 {
            for b in 0..4u8 {
                assert_eq!(cd(a, b), cd(b, a));
                if a < 3 {
                    assert!(select_action(cd(a + 1, b)) >= select_action(cd(a, b)));
                    assert!(select_action(cd(b, a + 1)) >= select_action(cd(b, a)));
                }
            }
        }
    }

    #[test]
    fn step_function_has_two_jumps() {
        let jumps = (0..18u8)
            .filter(|&s| {
                select_action(CombinedDemand { sum_sq: s })
                    != select_action(CombinedDemand { sum_sq: s + 1 })
            })
            .collect::<Vec<_>>();
        assert_eq!(jumps, vec![1, 8]);
    }

    #[test]
    fn scope_examples() {
        let topo = Topology::new(4, 2).unwrap();
        let s = protection_scope(ActionId::A01, CoreId(0), &topo).unwrap();
        assert_eq!(s.halt_set, vec![CoreId(1)]);
        let s = protection_scope(ActionId::A00, CoreId(0), &topo).unwrap();
        assert!(s.halt_set.is_empty());
        let s = protection_scope(ActionId::A10, CoreId(0), &topo).unwrap();
        assert_eq!(s.halt_set, (1..8).map(CoreId).collect::<Vec<_>>());
        assert!(protection_scope(ActionId::A01, CoreId(8), &topo).is_err());
    }

    #[test]
    fn scopes_nest() {
        for (p, t) in [(4, 2), (2, 4), (3, 1)] {
            let topo = Topology::new(p, t).unwrap();
            for lc in topo.logical_cores() {
                let sets: Vec<_> = ActionId::ALL
                    .iter()
                    .map(|&a| protection_scope(a, lc, &topo).unwrap())
                    .collect();
                for w in sets.windows(2) {
                    assert!(w[0].halt_set.iter().all(|c| w[1].halts(*c)));
                }
                assert!(sets.iter().all(|s| !s.halts(lc)));
            }
        }
    }
}
