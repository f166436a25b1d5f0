//! Cycle-level simulation of SMT cores sharing execution ports.
//!
//! Timing model: every op occupies one port for one cycle, each logical core
//! issues at most one op per cycle, and siblings that want the same port in
//! the same cycle are arbitrated round-robin per (physical core, port). The
//! loser retries next cycle.
//!
//! Each cycle runs in five phases:
//!
//! 1. release protection scopes whose owner finished last cycle (RESUME),
//! 2. arrivals (ARRIVE, and BLOCK when the target core is halted),
//! 3. admission and starts, ascending core id (ADMIT, START, HLT),
//! 4. port arbitration and issue (STALL for losers),
//! 5. completions (FINISH).
//!
//! A protected process halts its scope's cores in the same cycle it starts,
//! so it never shares a port with a sibling. Its scope is released in the
//! cycle after its last op.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use tracing::{debug, trace};

use crate::attack::{SpyTrace, TraceWindow};
use crate::demand::{ActionId, ActionMap, DemandMap};
use crate::error::{Diagnostic, Error, Result};
use crate::policy::{protection_scope, ProtectionScope};
use crate::topology::{CoreId, PhysId, Topology};

pub const DEFAULT_PORT_COUNT: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PortOp {
    pub port: u8,
}

impl PortOp {
    pub fn on(port: u8) -> Self {
        Self { port }
    }
}

/// `count` consecutive ops on `port`.
pub fn burst(port: u8, count: usize) -> impl Iterator<Item = PortOp> {
    std::iter::repeat_n(PortOp::on(port), count)
}

/// `len` ops on ports drawn uniformly from `0..ports`.
pub fn random_stream<R: Rng + ?Sized>(rng: &mut R, len: usize, ports: usize) -> Vec<PortOp> {
    (0..len)
        .map(|_| PortOp::on(rng.gen_range(0..ports) as u8))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Process {
    /// Label used in the timeline.
    pub name: String,
    pub pid: u32,
    pub arrival: u64,
    pub core: CoreId,
    pub stream: Vec<PortOp>,
    /// When set, the engine times every `n` completed ops as one window.
    pub probe_window: Option<usize>,
}

impl Process {
    pub fn new(
        name: impl Into<String>,
        pid: u32,
        arrival: u64,
        core: CoreId,
        stream: Vec<PortOp>,
    ) -> Self {
        Self {
            name: name.into(),
            pid,
            arrival,
            core,
            stream,
            probe_window: None,
        }
    }

    pub fn with_probe(mut self, window_size: usize) -> Self {
        self.probe_window = Some(window_size);
        self
    }
}

/// A fully expanded, runnable description of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Workload {
    pub topology: Topology,
    pub port_count: usize,
    pub processes: Vec<Process>,
    pub demands: DemandMap,
    pub actions: ActionMap,
    pub cycle_budget: u64,
    /// Keep only the first thread of every physical core online for the whole run.
    pub smt_off: bool,
}

impl Workload {
    pub fn new(topology: Topology) -> Self {
        Self {
            topology,
            port_count: DEFAULT_PORT_COUNT,
            processes: Vec::new(),
            demands: DemandMap::new(),
            actions: ActionMap::default(),
            cycle_budget: 1_000_000,
            smt_off: false,
        }
    }

    /// Action the process would receive, A00 when it registered no demand.
    pub fn resolved_action(&self, process: &Process) -> ActionId {
        match self.demands.get(process.core) {
            Some(rec) if rec.user_pid() == process.pid => self.actions.lookup(rec),
            _ => ActionId::A00,
        }
    }

    pub fn is_protected(&self, process: &Process) -> bool {
        self.resolved_action(process) != ActionId::A00
    }

    pub fn validate(&self) -> Result<()> {
        let mut diags = Vec::new();
        let topo = &self.topology;
        if self.port_count == 0 || self.port_count > u8::MAX as usize + 1 {
            diags.push(Diagnostic::global(format!(
                "port count {} out of range",
                self.port_count
            )));
        }
        if self.cycle_budget == 0 {
            diags.push(Diagnostic::global("cycle budget must be positive"));
        }
        for (i, p) in self.processes.iter().enumerate() {
            if topo.check(p.core).is_err() {
                diags.push(Diagnostic::global(format!(
                    "process {}: core {} does not exist ({} logical cores)",
                    p.name,
                    p.core,
                    topo.logical_count()
                )));
            } else if self.smt_off && topo.slot_of(p.core).unwrap_or(0) != 0 {
                diags.push(Diagnostic::global(format!(
                    "process {}: core {} is offline with SMT disabled",
                    p.name, p.core
                )));
            }
            if let Some(op) = p
                .stream
                .iter()
                .find(|op| op.port as usize >= self.port_count)
            {
                diags.push(Diagnostic::global(format!(
                    "process {}: port {} out of range (port count {})",
                    p.name, op.port, self.port_count
                )));
            }
            if p.probe_window == Some(0) {
                diags.push(Diagnostic::global(format!(
                    "process {}: probe window must be positive",
                    p.name
                )));
            }
            if let Some(dup) = self.processes[..i].iter().find(|q| q.name == p.name) {
                diags.push(Diagnostic::global(format!(
                    "duplicate process name {}",
                    dup.name
                )));
            }
            if let Some(dup) = self.processes[..i].iter().find(|q| q.pid == p.pid) {
                diags.push(Diagnostic::global(format!(
                    "processes {} and {} share pid {}",
                    dup.name, p.name, p.pid
                )));
            }
        }
        for (lc, _) in self.demands.iter() {
            if topo.check(lc).is_err() {
                diags.push(Diagnostic::global(format!(
                    "demand registered on missing core {lc}"
                )));
            }
        }
        if diags.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(diags))
        }
    }
}

/// Timeline event kinds, in the order they sort within one cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EventKind {
    Arrive,
    Start,
    Block,
    Admit,
    Hlt,
    Resume,
    Finish,
    Stall,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrive => "ARRIVE",
            EventKind::Start => "START",
            EventKind::Block => "BLOCK",
            EventKind::Admit => "ADMIT",
            EventKind::Hlt => "HLT",
            EventKind::Resume => "RESUME",
            EventKind::Finish => "FINISH",
            EventKind::Stall => "STALL",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub cycle: u64,
    pub kind: EventKind,
    pub core: CoreId,
    /// Index into the workload's process list.
    pub process: Option<usize>,
}

/// One op leaving a logical core.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Issue {
    pub cycle: u64,
    pub core: CoreId,
    pub process: usize,
    pub op_index: usize,
    pub port: u8,
}

/// Architectural state saved on HLT: the resident process and the index of
/// the next op it will issue.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArchMarker {
    pub process: Option<usize>,
    pub next_op: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaltRecord {
    pub core: CoreId,
    pub halted_at: u64,
    pub resumed_at: Option<u64>,
    pub at_halt: ArchMarker,
    pub at_resume: Option<ArchMarker>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub names: Vec<String>,
    /// Sorted by cycle, then event kind, then core.
    pub timeline: Vec<Event>,
    pub starts: Vec<Option<u64>>,
    /// Cycle after each process's last op.
    pub completions: Vec<Option<u64>>,
    /// Spy traces, keyed by process index.
    pub traces: Vec<(usize, SpyTrace)>,
    pub issues: Vec<Issue>,
    pub halts: Vec<HaltRecord>,
    pub total_cycles: u64,
}

impl SimResult {
    pub fn process_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn trace_of(&self, process: usize) -> Option<&SpyTrace> {
        self.traces
            .iter()
            .find(|(p, _)| *p == process)
            .map(|(_, t)| t)
    }

    /// Inclusive cycle range during which the process issued ops.
    pub fn execution_window(&self, process: usize) -> Option<(u64, u64)> {
        let start = self.starts.get(process).copied().flatten()?;
        let end = self.completions.get(process).copied().flatten()?;
        if end > start {
            Some((start, end - 1))
        } else {
            None
        }
    }

    pub fn render_timeline(&self) -> String {
        let mut out = String::from("cycle,event,core,pid\n");
        for e in &self.timeline {
            let pid = e.process.map(|p| self.names[p].as_str()).unwrap_or("-");
            out.push_str(&format!("{},{},{},{}\n", e.cycle, e.kind, e.core, pid));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreStatus {
    Idle,
    Running(usize),
    Halted,
}

#[derive(Debug, Clone)]
pub struct CoreState {
    pub status: CoreStatus,
    /// Process that was resident when the core halted.
    pub prior: Option<usize>,
    pub queue: VecDeque<usize>,
    pub saved_marker: Option<ArchMarker>,
}

impl CoreState {
    fn new() -> Self {
        Self {
            status: CoreStatus::Idle,
            prior: None,
            queue: VecDeque::new(),
            saved_marker: None,
        }
    }

    pub fn is_halted(&self) -> bool {
        self.status == CoreStatus::Halted
    }

    fn resident(&self) -> Option<usize> {
        match self.status {
            CoreStatus::Running(p) => Some(p),
            CoreStatus::Halted => self.prior,
            CoreStatus::Idle => None,
        }
    }
}

/// Round-robin arbitration of each (physical core, port) pair.
///
/// Priority starts at the lowest-numbered thread. After a contested cycle it
/// moves to the thread after the winner, so with two threads the core that
/// lost most recently wins next.
#[derive(Debug, Clone)]
pub struct PortArbiter {
    threads: usize,
    ports: usize,
    next: Vec<usize>,
}

impl PortArbiter {
    pub fn new(topo: &Topology, ports: usize) -> Self {
        Self {
            threads: topo.threads_per_core(),
            ports,
            next: vec![0; topo.physical_count() * ports],
        }
    }

    /// Picks the winner among `contenders`, all siblings on `phys`.
    pub fn arbitrate(&mut self, phys: PhysId, port: u8, contenders: &[CoreId]) -> CoreId {
        assert!(
            !contenders.is_empty(),
            "arbitration needs at least one contender"
        );
        if contenders.len() == 1 {
            return contenders[0];
        }
        let key = phys.0 * self.ports + port as usize;
        let ptr = self.next[key];
        let threads = self.threads;
        let winner = *contenders
            .iter()
            .min_by_key(|c| (c.0 % threads + threads - ptr) % threads)
            .expect("non-empty");
        self.next[key] = (winner.0 % threads + 1) % threads;
        winner
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockReason {
    /// Target core is suspended by a protection scope.
    Halted,
    /// Process is protected and its scope would suspend another protected core.
    ScopeConflict,
}

#[derive(Debug, Clone)]
struct Probe {
    window_size: usize,
    ops_in_window: usize,
    window_start: u64,
    /// The current window overlapped a halt and will be discarded.
    tainted: bool,
    next_index: usize,
    trace: SpyTrace,
}

#[derive(Debug, Clone)]
struct ProcState {
    next_op: usize,
    started: Option<u64>,
    completed: Option<u64>,
    blocked: Option<BlockReason>,
    scope: Option<ProtectionScope>,
    probe: Option<Probe>,
}

#[derive(Debug, Clone)]
struct ActiveScope {
    owner: usize,
    scope: ProtectionScope,
}

/// Stepwise simulator state. [`run`] drives it to completion; tests can step
/// it and poke at cores directly.
#[derive(Debug, Clone)]
pub struct Machine<'w> {
    w: &'w Workload,
    cycle: u64,
    cores: Vec<CoreState>,
    procs: Vec<ProcState>,
    scopes: Vec<ActiveScope>,
    releasing: Vec<usize>,
    arbiter: PortArbiter,
    arrival_order: Vec<usize>,
    next_arrival: usize,
    unfinished: usize,
    events: Vec<Event>,
    issues: Vec<Issue>,
    halts: Vec<HaltRecord>,
    open_halts: Vec<Option<usize>>,
}

impl<'w> Machine<'w> {
    pub fn new(w: &'w Workload) -> Result<Self> {
        w.validate()?;
        let topo = &w.topology;
        let procs = w
            .processes
            .iter()
            .map(|p| {
                let action = w.resolved_action(p);
                let scope = if action == ActionId::A00 {
                    None
                } else {
                    Some(protection_scope(action, p.core, topo)?)
                };
                Ok(ProcState {
                    next_op: 0,
                    started: None,
                    completed: None,
                    blocked: None,
                    scope,
                    probe: p.probe_window.map(|n| Probe {
                        window_size: n,
                        ops_in_window: 0,
                        window_start: 0,
                        tainted: false,
                        next_index: 0,
                        trace: SpyTrace::new(n),
                    }),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut arrival_order: Vec<usize> = (0..w.processes.len()).collect();
        arrival_order.sort_by_key(|&i| (w.processes[i].arrival, w.processes[i].core, i));

        let mut m = Self {
            w,
            cycle: 0,
            cores: (0..topo.logical_count())
                .map(|_| CoreState::new())
                .collect(),
            procs,
            scopes: Vec::new(),
            releasing: Vec::new(),
            arbiter: PortArbiter::new(topo, w.port_count),
            arrival_order,
            next_arrival: 0,
            unfinished: w.processes.len(),
            events: Vec::new(),
            issues: Vec::new(),
            halts: Vec::new(),
            open_halts: vec![None; topo.logical_count()],
        };
        if w.smt_off {
            let offline: Vec<CoreId> = topo
                .logical_cores()
                .filter(|&lc| topo.slot_of(lc).unwrap_or(0) != 0)
                .collect();
            for lc in offline {
                m.hlt(lc)?;
            }
        }
        Ok(m)
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn core(&self, lc: CoreId) -> Result<&CoreState> {
        self.w.topology.check(lc)?;
        Ok(&self.cores[lc.0])
    }

    pub fn is_done(&self) -> bool {
        self.unfinished == 0 && self.releasing.is_empty()
    }

    /// Index of the next op `process` will issue.
    pub fn position(&self, process: usize) -> usize {
        self.procs[process].next_op
    }

    pub fn issues(&self) -> &[Issue] {
        &self.issues
    }

    fn protected_cores(&self) -> impl Iterator<Item = CoreId> + '_ {
        self.scopes.iter().map(|s| s.scope.protected_core)
    }

    fn scope_halts(&self, lc: CoreId) -> bool {
        self.scopes.iter().any(|s| s.scope.halts(lc))
    }

    fn held_offline(&self, lc: CoreId) -> bool {
        self.w.smt_off && self.w.topology.slot_of(lc).unwrap_or(0) != 0
    }

    fn emit(&mut self, kind: EventKind, core: CoreId, process: Option<usize>) {
        trace!(cycle = self.cycle, %kind, %core, ?process, "event");
        self.events.push(Event {
            cycle: self.cycle,
            kind,
            core,
            process,
        });
    }

    fn marker(&self, lc: CoreId) -> ArchMarker {
        let process = self.cores[lc.0].resident();
        ArchMarker {
            process,
            next_op: process.map(|p| self.procs[p].next_op).unwrap_or(0),
        }
    }

    /// Suspends `lc`. Returns whether the core changed state.
    pub fn hlt(&mut self, lc: CoreId) -> Result<bool> {
        self.w.topology.check(lc)?;
        if self.protected_cores().any(|c| c == lc) {
            return Err(Error::PolicyViolation(format!(
                "core {lc} runs a protected process and cannot be halted"
            )));
        }
        let core = &self.cores[lc.0];
        let resident = match core.status {
            CoreStatus::Halted => return Ok(false),
            CoreStatus::Idle => None,
            CoreStatus::Running(p) => Some(p),
        };
        let marker = self.marker(lc);
        if let Some(probe) = resident.and_then(|p| self.procs[p].probe.as_mut()) {
            if probe.ops_in_window > 0 {
                probe.tainted = true;
            }
        }
        let core = &mut self.cores[lc.0];
        core.prior = resident;
        core.status = CoreStatus::Halted;
        core.saved_marker = Some(marker);
        self.open_halts[lc.0] = Some(self.halts.len());
        self.halts.push(HaltRecord {
            core: lc,
            halted_at: self.cycle,
            resumed_at: None,
            at_halt: marker,
            at_resume: None,
        });
        self.emit(EventKind::Hlt, lc, resident);
        Ok(true)
    }

    /// Wakes a halted core; it continues with the op after the suspension point.
    pub fn resume(&mut self, lc: CoreId) -> Result<()> {
        self.w.topology.check(lc)?;
        if !self.cores[lc.0].is_halted() {
            return Err(Error::State(format!("core {lc} is not halted")));
        }
        let marker = self.marker(lc);
        if let Some(idx) = self.open_halts[lc.0].take() {
            let rec = &mut self.halts[idx];
            rec.resumed_at = Some(self.cycle);
            rec.at_resume = Some(marker);
        }
        let cycle = self.cycle;
        let core = &mut self.cores[lc.0];
        let prior = core.prior.take();
        let runnable = prior.filter(|&p| self.procs[p].next_op < self.w.processes[p].stream.len());
        core.status = match runnable {
            Some(p) => CoreStatus::Running(p),
            None => CoreStatus::Idle,
        };
        if let Some(probe) = runnable.and_then(|p| self.procs[p].probe.as_mut()) {
            if probe.ops_in_window == 0 {
                probe.window_start = cycle;
                probe.tainted = false;
            }
        }
        self.emit(EventKind::Resume, lc, prior);
        Ok(())
    }

    /// Advances one cycle.
    pub fn step(&mut self) -> Result<()> {
        self.release_scopes()?;
        self.arrive();
        self.start_ready()?;
        self.issue();
        self.cycle += 1;
        Ok(())
    }

    fn release_scopes(&mut self) -> Result<()> {
        for owner in std::mem::take(&mut self.releasing) {
            let Some(pos) = self.scopes.iter().position(|s| s.owner == owner) else {
                continue;
            };
            let ended = self.scopes.remove(pos);
            debug!(cycle = self.cycle, owner, "protection scope released");
            for &lc in &ended.scope.halt_set {
                if !self.scope_halts(lc) && !self.held_offline(lc) && self.cores[lc.0].is_halted() {
                    self.resume(lc)?;
                }
            }
        }
        Ok(())
    }

    fn arrive(&mut self) {
        while let Some(&p) = self.arrival_order.get(self.next_arrival) {
            if self.w.processes[p].arrival != self.cycle {
                break;
            }
            self.next_arrival += 1;
            let lc = self.w.processes[p].core;
            self.emit(EventKind::Arrive, lc, Some(p));
            self.cores[lc.0].queue.push_back(p);
            if self.cores[lc.0].is_halted() {
                self.procs[p].blocked = Some(BlockReason::Halted);
                self.emit(EventKind::Block, lc, Some(p));
            }
        }
    }

    fn start_ready(&mut self) -> Result<()> {
        for i in 0..self.cores.len() {
            let lc = CoreId(i);
            if self.cores[i].is_halted() {
                if let Some(&head) = self.cores[i].queue.front() {
                    if self.cores[i].prior.is_none() && self.procs[head].blocked.is_none() {
                        self.procs[head].blocked = Some(BlockReason::Halted);
                        self.emit(EventKind::Block, lc, Some(head));
                    }
                }
                continue;
            }

            let waiting: Vec<usize> = self.cores[i]
                .queue
                .iter()
                .copied()
                .filter(|&p| self.procs[p].blocked == Some(BlockReason::Halted))
                .collect();
            for p in waiting {
                self.procs[p].blocked = None;
                self.emit(EventKind::Admit, lc, Some(p));
            }

            while self.cores[i].status == CoreStatus::Idle {
                let Some(&head) = self.cores[i].queue.front() else {
                    break;
                };
                let empty = self.w.processes[head].stream.is_empty();
                let scope = self.procs[head].scope.clone().filter(|_| !empty);
                if let Some(scope) = &scope {
                    let conflict = self.protected_cores().any(|c| scope.halts(c));
                    if conflict {
                        if self.procs[head].blocked.is_none() {
                            self.procs[head].blocked = Some(BlockReason::ScopeConflict);
                            self.emit(EventKind::Block, lc, Some(head));
                        }
                        break;
                    }
                }
                self.cores[i].queue.pop_front();
                if self.procs[head].blocked.take().is_some() {
                    self.emit(EventKind::Admit, lc, Some(head));
                }
                self.emit(EventKind::Start, lc, Some(head));
                self.procs[head].started = Some(self.cycle);
                if empty {
                    self.complete(head, lc, self.cycle);
                    continue;
                }
                self.cores[i].status = CoreStatus::Running(head);
                if let Some(probe) = self.procs[head].probe.as_mut() {
                    probe.window_start = self.cycle;
                }
                if let Some(scope) = scope {
                    debug!(cycle = self.cycle, process = head, halt = ?scope.halt_set, "protection scope active");
                    let halt_set = scope.halt_set.clone();
                    self.scopes.push(ActiveScope { owner: head, scope });
                    for c in halt_set {
                        self.hlt(c)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn issue(&mut self) {
        let topo = self.w.topology;
        let mut finished = Vec::new();
        for phys in topo.physical_cores() {
            let mut demand: Vec<(u8, CoreId, usize)> = topo
                .members(phys)
                .filter_map(|lc| match self.cores[lc.0].status {
                    CoreStatus::Running(p) => {
                        let op = self.w.processes[p].stream[self.procs[p].next_op];
                        Some((op.port, lc, p))
                    }
                    _ => None,
                })
                .collect();
            demand.sort_unstable();
            for group in demand.chunk_by(|a, b| a.0 == b.0) {
                let port = group[0].0;
                let contenders: Vec<CoreId> = group.iter().map(|&(_, lc, _)| lc).collect();
                let winner = self.arbiter.arbitrate(phys, port, &contenders);
                for &(_, lc, p) in group {
                    if lc == winner {
                        if self.issue_op(lc, p, port) {
                            finished.push((p, lc));
                        }
                    } else {
                        self.emit(EventKind::Stall, lc, Some(p));
                    }
                }
            }
        }
        for (p, lc) in finished {
            self.cores[lc.0].status = CoreStatus::Idle;
            self.complete(p, lc, self.cycle + 1);
        }
    }

    /// Returns true when this was the process's last op.
    fn issue_op(&mut self, lc: CoreId, p: usize, port: u8) -> bool {
        let cycle = self.cycle;
        let st = &mut self.procs[p];
        self.issues.push(Issue {
            cycle,
            core: lc,
            process: p,
            op_index: st.next_op,
            port,
        });
        st.next_op += 1;
        if let Some(probe) = st.probe.as_mut() {
            probe.ops_in_window += 1;
            if probe.ops_in_window == probe.window_size {
                if !probe.tainted {
                    probe.trace.windows.push(TraceWindow {
                        index: probe.next_index,
                        start: probe.window_start,
                        end: cycle + 1,
                        elapsed: cycle + 1 - probe.window_start,
                    });
                }
                probe.next_index += 1;
                probe.ops_in_window = 0;
                probe.window_start = cycle + 1;
                probe.tainted = false;
            }
        }
        st.next_op == self.w.processes[p].stream.len()
    }

    fn complete(&mut self, p: usize, lc: CoreId, completion: u64) {
        self.emit(EventKind::Finish, lc, Some(p));
        self.procs[p].completed = Some(completion);
        self.unfinished -= 1;
        if self.scopes.iter().any(|s| s.owner == p) {
            self.releasing.push(p);
        }
    }

    /// Consumes the machine and assembles the result as of the current cycle.
    pub fn into_result(self) -> SimResult {
        let mut timeline = self.events;
        timeline.sort_by_key(|e| (e.cycle, e.kind, e.core));
        let completions: Vec<Option<u64>> = self.procs.iter().map(|p| p.completed).collect();
        let total_cycles = completions.iter().flatten().copied().max().unwrap_or(0);
        let traces = self
            .procs
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.probe.as_ref().map(|pr| (i, pr.trace.clone())))
            .collect();
        SimResult {
            names: self.w.processes.iter().map(|p| p.name.clone()).collect(),
            timeline,
            starts: self.procs.iter().map(|p| p.started).collect(),
            completions,
            traces,
            issues: self.issues,
            halts: self.halts,
            total_cycles,
        }
    }
}

/// Runs the workload to completion or until the cycle budget runs out.
pub fn run(w: &Workload) -> Result<SimResult> {
    let mut m = Machine::new(w)?;
    while !m.is_done() {
        if m.cycle >= w.cycle_budget {
            let unfinished = m.unfinished;
            return Err(Error::Deadline {
                budget: w.cycle_budget,
                unfinished,
                partial: Box::new(m.into_result()),
            });
        }
        m.step()?;
    }
    Ok(m.into_result())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::DemandRecord;

    fn topo(p: usize, t: usize) -> Topology {
        Topology::new(p, t).unwrap()
    }

    fn ops(port: u8, n: usize) -> Vec<PortOp> {
        burst(port, n).collect()
    }

    fn protect(w: &mut Workload, lc: usize, pid: u32, sd: u8, pd: u8) {
        let topo = w.topology;
        w.demands
            .register(&topo, CoreId(lc), DemandRecord::new(pid, sd, pd).unwrap())
            .unwrap();
    }

    #[test]
    fn solo_process_runs_one_op_per_cycle() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("P", 1, 3, CoreId(0), ops(0, 10)));
        let r = run(&w).unwrap();
        assert_eq!(r.completions[0], Some(13));
        assert_eq!(r.total_cycles, 13);
    }

    #[test]
    fn siblings_on_one_port_alternate() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("X", 1, 0, CoreId(0), ops(0, 8)));
        w.processes
            .push(Process::new("Y", 2, 0, CoreId(1), ops(0, 8)));
        let r = run(&w).unwrap();
        let winners: Vec<usize> = r.issues.iter().map(|i| i.core.0).collect();
        assert_eq!(winners, [0, 1].repeat(8));
        assert_eq!(r.completions, vec![Some(15), Some(16)]);
        assert_eq!(r.total_cycles, 16);
        let stalls = r
            .timeline
            .iter()
            .filter(|e| e.kind == EventKind::Stall)
            .count();
        assert_eq!(stalls, 15);
    }

    #[test]
    fn different_ports_do_not_contend() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("X", 1, 0, CoreId(0), ops(0, 8)));
        w.processes
            .push(Process::new("Y", 2, 0, CoreId(1), ops(1, 8)));
        let r = run(&w).unwrap();
        assert_eq!(r.completions, vec![Some(8), Some(8)]);
    }

    #[test]
    fn arbiter_round_robin() {
        let t = topo(1, 2);
        let mut arb = PortArbiter::new(&t, 3);
        let both = [CoreId(0), CoreId(1)];
        let w: Vec<_> = (0..3)
            .map(|_| arb.arbitrate(PhysId(0), 0, &both).0)
            .collect();
        assert_eq!(w, vec![0, 1, 0]);
        assert_eq!(arb.arbitrate(PhysId(0), 0, &[CoreId(0)]), CoreId(0));
        // A lone contender does not disturb the pending priority.
        assert_eq!(arb.arbitrate(PhysId(0), 0, &both), CoreId(1));
        // Ports are arbitrated independently.
        assert_eq!(arb.arbitrate(PhysId(0), 2, &both), CoreId(0));
    }

    #[test]
    fn arbiter_rotates_over_four_threads() {
        let t = topo(1, 4);
        let mut arb = PortArbiter::new(&t, 1);
        let all: Vec<CoreId> = (0..4).map(CoreId).collect();
        let w: Vec<_> = (0..8)
            .map(|_| arb.arbitrate(PhysId(0), 0, &all).0)
            .collect();
        assert_eq!(w, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn halted_sibling_frees_the_port() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("V", 1, 0, CoreId(0), ops(0, 10)));
        w.processes
            .push(Process::new("S", 2, 0, CoreId(1), ops(0, 10)));
        let mut m = Machine::new(&w).unwrap();
        m.step().unwrap();
        m.step().unwrap();
        m.hlt(CoreId(1)).unwrap();
        let before = m.issues().len();
        for _ in 0..5 {
            m.step().unwrap();
        }
        let after: Vec<_> = m.issues()[before..].to_vec();
        assert_eq!(after.len(), 5);
        assert!(after.iter().all(|i| i.core == CoreId(0)));
    }

    #[test]
    fn hlt_is_idempotent_and_guards_protected_core() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("A", 1, 0, CoreId(0), ops(0, 10)));
        protect(&mut w, 0, 1, 1, 1);
        let mut m = Machine::new(&w).unwrap();
        m.step().unwrap();
        assert!(m.core(CoreId(1)).unwrap().is_halted());
        assert!(!m.hlt(CoreId(1)).unwrap());
        assert!(matches!(m.hlt(CoreId(0)), Err(Error::PolicyViolation(_))));
    }

    #[test]
    fn resume_continues_after_suspension_point() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("P", 1, 0, CoreId(1), ops(2, 12)));
        let mut m = Machine::new(&w).unwrap();
        for _ in 0..5 {
            m.step().unwrap();
        }
        assert_eq!(m.position(0), 5);
        m.hlt(CoreId(1)).unwrap();
        let saved = m.core(CoreId(1)).unwrap().saved_marker;
        for _ in 0..3 {
            m.step().unwrap();
        }
        assert_eq!(m.position(0), 5);
        m.resume(CoreId(1)).unwrap();
        assert_eq!(m.core(CoreId(1)).unwrap().saved_marker, saved);
        assert_eq!(m.core(CoreId(1)).unwrap().status, CoreStatus::Running(0));
        m.step().unwrap();
        let last = *m.issues().last().unwrap();
        assert_eq!(last.op_index, 5);
        while !m.is_done() {
            m.step().unwrap();
        }
        let r = m.into_result();
        let idx: Vec<usize> = r.issues.iter().map(|i| i.op_index).collect();
        assert_eq!(idx, (0..12).collect::<Vec<_>>());
        assert_eq!(r.halts[0].at_halt, r.halts[0].at_resume.unwrap());
    }

    #[test]
    fn resume_idle_core_stays_idle() {
        let w = Workload::new(topo(1, 2));
        let mut m = Machine::new(&w).unwrap();
        m.hlt(CoreId(1)).unwrap();
        m.resume(CoreId(1)).unwrap();
        assert_eq!(m.core(CoreId(1)).unwrap().status, CoreStatus::Idle);
    }

    #[test]
    fn resume_running_core_is_an_error() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("P", 1, 0, CoreId(0), ops(0, 4)));
        let mut m = Machine::new(&w).unwrap();
        m.step().unwrap();
        assert!(matches!(m.resume(CoreId(0)), Err(Error::State(_))));
    }

    #[test]
    fn protection_window_matches_execution() {
        let mut w = Workload::new(topo(2, 2));
        w.processes
            .push(Process::new("A", 1, 10, CoreId(0), ops(0, 41)));
        w.processes
            .push(Process::new("N", 2, 0, CoreId(1), ops(1, 100)));
        protect(&mut w, 0, 1, 1, 1);
        let r = run(&w).unwrap();
        assert_eq!(r.execution_window(0), Some((10, 50)));
        let hlt: Vec<_> = r
            .timeline
            .iter()
            .filter(|e| e.kind == EventKind::Hlt)
            .collect();
        let res: Vec<_> = r
            .timeline
            .iter()
            .filter(|e| e.kind == EventKind::Resume)
            .collect();
        assert_eq!((hlt.len(), hlt[0].cycle, hlt[0].core), (1, 10, CoreId(1)));
        assert_eq!((res.len(), res[0].cycle, res[0].core), (1, 51, CoreId(1)));
        assert!(r
            .issues
            .iter()
            .filter(|i| i.core == CoreId(1))
            .all(|i| !(10..=50).contains(&i.cycle)));
        assert_eq!(r.completions[1], Some(141));
    }

    #[test]
    fn empty_protected_process_halts_nothing() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("A", 1, 0, CoreId(0), Vec::new()));
        w.processes
            .push(Process::new("B", 2, 0, CoreId(1), ops(0, 3)));
        protect(&mut w, 0, 1, 3, 3);
        let r = run(&w).unwrap();
        assert!(r.timeline.iter().all(|e| e.kind != EventKind::Hlt));
        assert_eq!(r.completions, vec![Some(0), Some(3)]);
    }

    #[test]
    fn disjoint_scopes_coexist() {
        let mut w = Workload::new(topo(2, 2));
        w.processes
            .push(Process::new("A", 1, 0, CoreId(0), ops(0, 20)));
        w.processes
            .push(Process::new("B", 2, 0, CoreId(2), ops(0, 20)));
        protect(&mut w, 0, 1, 1, 1);
        protect(&mut w, 2, 2, 1, 2);
        let mut m = Machine::new(&w).unwrap();
        m.step().unwrap();
        assert!(m.core(CoreId(1)).unwrap().is_halted());
        assert!(m.core(CoreId(3)).unwrap().is_halted());
        assert_eq!(m.scopes.len(), 2);
    }

    #[test]
    fn sibling_protected_processes_serialize() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("A", 1, 0, CoreId(0), ops(0, 10)));
        w.processes
            .push(Process::new("B", 2, 3, CoreId(1), ops(0, 10)));
        protect(&mut w, 0, 1, 1, 1);
        protect(&mut w, 1, 2, 1, 1);
        let r = run(&w).unwrap();
        assert_eq!(r.completions, vec![Some(10), Some(20)]);
        let b_block = r
            .timeline
            .iter()
            .find(|e| e.kind == EventKind::Block)
            .unwrap();
        assert_eq!((b_block.cycle, b_block.process), (3, Some(1)));
    }

    #[test]
    fn a10_conflict_blocks_until_other_scope_ends() {
        let mut w = Workload::new(topo(2, 2));
        w.processes
            .push(Process::new("A", 1, 0, CoreId(0), ops(0, 10)));
        w.processes
            .push(Process::new("Z", 2, 2, CoreId(2), ops(0, 5)));
        protect(&mut w, 0, 1, 1, 1);
        protect(&mut w, 2, 2, 3, 3);
        let r = run(&w).unwrap();
        // Z would halt core 0 while A is protected there.
        assert_eq!(r.starts[1], Some(10));
        assert_eq!(r.completions[1], Some(15));
    }

    #[test]
    fn running_sibling_is_suspended_then_resumed() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("X", 2, 0, CoreId(1), ops(1, 10)));
        w.processes
            .push(Process::new("A", 1, 4, CoreId(0), ops(0, 6)));
        protect(&mut w, 0, 1, 1, 1);
        let r = run(&w).unwrap();
        assert_eq!(r.completions, vec![Some(16), Some(10)]);
        assert_eq!(r.halts.len(), 1);
        assert_eq!(r.halts[0].at_halt.next_op, 4);
        assert_eq!(r.halts[0].at_resume.unwrap().next_op, 4);
    }

    #[test]
    fn static_smt_off_keeps_first_thread_only() {
        let mut w = Workload::new(topo(2, 2));
        w.smt_off = true;
        w.processes
            .push(Process::new("X", 1, 0, CoreId(0), ops(0, 5)));
        w.processes
            .push(Process::new("Y", 2, 0, CoreId(0), ops(0, 5)));
        let r = run(&w).unwrap();
        assert_eq!(r.completions, vec![Some(5), Some(10)]);

        w.processes
            .push(Process::new("Z", 3, 0, CoreId(3), ops(0, 5)));
        assert!(matches!(run(&w), Err(Error::Validation(_))));
    }

    #[test]
    fn budget_exhaustion_returns_partial_timeline() {
        let mut w = Workload::new(topo(1, 1));
        w.cycle_budget = 5;
        w.processes
            .push(Process::new("P", 1, 0, CoreId(0), ops(0, 50)));
        match run(&w) {
            Err(Error::Deadline {
                budget: 5,
                unfinished: 1,
                partial,
            }) => {
                assert_eq!(partial.issues.len(), 5);
                assert_eq!(partial.timeline[0].kind, EventKind::Arrive);
            }
            other => panic!("expected deadline, got {other:?}"),
        }
    }

    #[test]
    fn validation_lists_every_problem() {
        let mut w = Workload::new(topo(1, 2));
        w.processes
            .push(Process::new("P", 1, 0, CoreId(5), ops(7, 1)));
        w.processes
            .push(Process::new("P", 1, 0, CoreId(0), ops(0, 1)));
        match run(&w) {
            Err(Error::Validation(d)) => assert_eq!(d.len(), 4, "{d:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn timeline_sorted_by_cycle_kind_core() {
        let mut w = Workload::new(topo(2, 2));
        for i in 0..4 {
            w.processes.push(Process::new(
                format!("P{i}"),
                i as u32,
                0,
                CoreId(3 - i),
                ops(0, 3),
            ));
        }
        let r = run(&w).unwrap();
        let keys: Vec<_> = r
            .timeline
            .iter()
            .map(|e| (e.cycle, e.kind, e.core))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        assert!(r
            .render_timeline()
            .starts_with("cycle,event,core,pid\n0,ARRIVE,0,P3\n"));
    }
}
