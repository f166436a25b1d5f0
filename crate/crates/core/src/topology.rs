//! Processor layout: physical cores and their SMT sibling logical cores.
//!
//! Logical cores are paired contiguously, so logical core `i` belongs to
//! physical core `i / threads_per_core`.

use std::fmt;

use crate::error::{Error, Result};

/// Logical core (hardware thread) index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CoreId(pub usize);

impl fmt::Display for CoreId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Physical core index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PhysId(pub usize);

impl fmt::Display for PhysId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Topology {
    physical_count: usize,
    threads_per_core: usize,
}

impl Topology {
    pub fn new(physical_count: usize, threads_per_core: usize) -> Result<Self> {
        if physical_count == 0 {
            return Err(Error::InvalidTopology(
                "physical core count must be positive".into(),
            ));
        }
        if threads_per_core == 0 {
            return Err(Error::InvalidTopology(
                "threads per core must be positive".into(),
            ));
        }
        Ok(Self {
            physical_count,
            threads_per_core,
        })
    }

    pub fn physical_count(&self) -> usize {
        self.physical_count
    }

    pub fn threads_per_core(&self) -> usize {
        self.threads_per_core
    }

    pub fn logical_count(&self) -> usize {
        self.physical_count * self.threads_per_core
    }

    pub fn check(&self, lc: CoreId) -> Result<()> {
        if lc.0 < self.logical_count() {
            Ok(())
        } else {
            Err(Error::InvalidCore {
                core: lc,
                total: self.logical_count(),
            })
        }
    }

    pub fn physical_of(&self, lc: CoreId) -> Result<PhysId> {
        self.check(lc)?;
        Ok(PhysId(lc.0 / self.threads_per_core))
    }

    /// Position of `lc` within its physical core (0 for the first thread).
    pub fn slot_of(&self, lc: CoreId) -> Result<usize> {
        self.check(lc)?;
        Ok(lc.0 % self.threads_per_core)
    }

    /// Homologous logical cores: every sibling on `lc`'s physical core, `lc` excluded.
    pub fn hlc_of(&self, lc: CoreId) -> Result<Vec<CoreId>> {
        let phys = self.physical_of(lc)?;
        Ok(self.members(phys).filter(|&c| c != lc).collect())
    }

    /// Logical cores of one physical core, ascending.
    pub fn members(&self, phys: PhysId) -> impl Iterator<Item = CoreId> {
        let base = phys.0 * self.threads_per_core;
        (base..base + self.threads_per_core).map(CoreId)
    }

    pub fn logical_cores(&self) -> impl Iterator<Item = CoreId> {
        (0..self.logical_count()).map(CoreId)
    }

    pub fn physical_cores(&self) -> impl Iterator<Item = PhysId> {
        (0..self.physical_count).map(PhysId)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn topo(p: usize, t: usize) -> Topology {
        Topology::new(p, t).unwrap()
    }

    #[test]
    fn physical_of_contiguous_pairing() {
        let t = topo(4, 2);
        assert_eq!(t.physical_of(CoreId(1)).unwrap(), PhysId(0));
        assert_eq!(t.physical_of(CoreId(0)).unwrap(), PhysId(0));
        assert_eq!(t.physical_of(CoreId(7)).unwrap(), PhysId(3));
    }

    #[test]
    fn hlc_examples() {
        assert_eq!(topo(4, 2).hlc_of(CoreId(0)).unwrap(), vec![CoreId(1)]);
        assert_eq!(topo(4, 2).hlc_of(CoreId(5)).unwrap(), vec![CoreId(4)]);
        assert!(topo(4, 1).hlc_of(CoreId(2)).unwrap().is_empty());
    }

    #[test]
    fn out_of_range_core_rejected() {
        let t = topo(4, 2);
        assert!(matches!(
            t.physical_of(CoreId(8)),
            Err(Error::InvalidCore { total: 8, .. })
        ));
        assert!(t.hlc_of(CoreId(9)).is_err());
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(Topology::new(0, 2).is_err());
        assert!(Topology::new(2, 0).is_err());
    }

    proptest! {
        #[test]
        fn sibling_relation_laws(p in 1usize..6, t in 1usize..5) {
            let topo = topo(p, t);
            let mut seen = vec![0u32; topo.logical_count()];
            for phys in topo.physical_cores() {
                for lc in topo.members(phys) {
                    seen[lc.0] += 1;
                    prop_assert_eq!(topo.physical_of(lc).unwrap(), phys);
                }
            }
            prop_assert!(seen.iter().all(|&n| n == 1));

            for a in topo.logical_cores() {
                let hlc = topo.hlc_of(a).unwrap();
                prop_assert!(!hlc.contains(&a));
                prop_assert_eq!(hlc.len(), t - 1);
                for b in hlc {
                    prop_assert!(topo.hlc_of(b).unwrap().contains(&a));
                }
            }
        }
    }
}
