//! Deterministic simulator of SMT cores sharing execution ports, with
//! demand-driven dynamic halting of sibling logical cores.
//!
//! Users register a security/performance demand per logical core. The
//! combined demand selects an action that decides which other logical cores
//! are suspended, and for exactly how long: from the first to the last cycle
//! of the key process. A port-contention spy on the sibling thread serves as
//! the security oracle.

pub mod attack;
pub mod demand;
pub mod engine;
pub mod error;
pub mod policy;
pub mod report;
pub mod scenario;
pub mod topology;

pub use attack::{
    recover_secret, AttackSetup, Calibration, LeakageReport, SecretKey, SpyTrace, VictimProfile,
};
pub use demand::{
    decode_demand, encode_demand, ActionId, ActionMap, DemandMap, DemandRecord, MsrWord,
};
pub use engine::{run, EventKind, Machine, PortOp, Process, SimResult, Workload};
pub use error::{Diagnostic, Error, Result};
pub use policy::{compute_cd, protection_scope, select_action, CombinedDemand, ProtectionScope};
pub use report::{run_bench, BenchConfig, Mode, SlowdownRow};
pub use scenario::{parse_scenario, KeySpec, Scenario};
pub use topology::{CoreId, PhysId, Topology};
