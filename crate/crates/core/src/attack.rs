//! Port-contention attack model: a victim running left-to-right
//! double-and-add over a secret scalar, a spy hammering one execution port on
//! the sibling thread, and the analysis that turns the spy's timings back
//! into key bits.
//!
//! Every DOUBLE issues on port D and every ADD on port A. The spy sits on
//! port A, so each ADD shows up as a plateau of slow measurement windows.

use std::fmt;

use rand::Rng;

use crate::demand::DemandRecord;
use crate::engine::{self, burst, PortOp, Process, SimResult, Workload};
use crate::error::{Error, Result};
use crate::report::fmt_real;
use crate::topology::{CoreId, Topology};

/// Scalar bits, most significant first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SecretKey {
    bits: Vec<bool>,
}

impl SecretKey {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::EmptyKey);
        }
        Ok(Self { bits })
    }

    /// Four bits per hex digit, leading zeros kept. Accepts an optional `0x`.
    pub fn from_hex(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("0x").trim_start_matches("0X");
        let mut bits = Vec::with_capacity(digits.len() * 4);
        for ch in digits.chars().filter(|c| *c != '_') {
            let v = ch
                .to_digit(16)
                .ok_or_else(|| Error::Config(format!("invalid hex digit `{ch}` in key")))?;
            bits.extend((0..4).rev().map(|i| v >> i & 1 == 1));
        }
        Self::new(bits)
    }

    /// One bit per character. Accepts an optional `0b`.
    pub fn from_binary(s: &str) -> Result<Self> {
        let digits = s.trim().trim_start_matches("0b");
        let bits = digits
            .chars()
            .filter(|c| *c != '_')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Config(format!(
                    "invalid binary digit `{other}` in key"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bits)
    }

    /// `0b...` is binary, anything else hex.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.starts_with("0b") {
            Self::from_binary(s)
        } else {
            Self::from_hex(s)
        }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Result<Self> {
        Self::new((0..len).map(|_| rng.gen::<bool>()).collect())
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Every bit flipped: a different key of the same length.
    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }
}

impl fmt::Display for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("0b")?;
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VictimProfile {
    pub double_ops: usize,
    pub add_ops: usize,
    pub double_port: u8,
    pub add_port: u8,
}

impl Default for VictimProfile {
    fn default() -> Self {
        Self {
            double_ops: 8,
            add_ops: 8,
            double_port: 0,
            add_port: 1,
        }
    }
}

impl VictimProfile {
    pub fn validate(&self) -> Result<()> {
        if self.double_ops == 0 || self.add_ops == 0 {
            return Err(Error::Config("victim op counts must be at least 1".into()));
        }
        if self.double_port == self.add_port {
            return Err(Error::Config(
                "victim DOUBLE and ADD must use different ports".into(),
            ));
        }
        Ok(())
    }

    /// Upper bound on the victim's runtime with a sibling contending on every ADD op.
    pub fn worst_case_cycles(&self, bits: usize) -> u64 {
        (bits * (self.double_ops + 2 * self.add_ops)) as u64
    }
}

pub fn gen_victim(key: &SecretKey, profile: &VictimProfile) -> Result<Vec<PortOp>> {
    profile.validate()?;
    if key.is_empty() {
        return Err(Error::EmptyKey);
    }
    let mut stream = Vec::new();
    for &bit in key.bits() {
        stream.extend(burst(profile.double_port, profile.double_ops));
        if bit {
            stream.extend(burst(profile.add_port, profile.add_ops));
        }
    }
    Ok(stream)
}

/// The spy's op stream and how the engine should time it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpyPlan {
    pub stream: Vec<PortOp>,
    pub window_size: usize,
}

pub fn gen_spy(port: u8, total_windows: usize, window_size: usize) -> Result<SpyPlan> {
    if total_windows == 0 || window_size == 0 {
        return Err(Error::Config(
            "spy window count and size must be positive".into(),
        ));
    }
    Ok(SpyPlan {
        stream: burst(port, total_windows * window_size).collect(),
        window_size,
    })
}

/// One timed group of spy ops. `start..end` is half-open in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceWindow {
    pub index: usize,
    pub start: u64,
    pub end: u64,
    pub elapsed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpyTrace {
    pub window_size: usize,
    pub windows: Vec<TraceWindow>,
}

impl SpyTrace {
    pub fn new(window_size: usize) -> Self {
        Self {
            window_size,
            windows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    /// What the spy itself observes: window index and elapsed cycles.
    pub fn observations(&self) -> Vec<(usize, u64)> {
        self.windows.iter().map(|w| (w.index, w.elapsed)).collect()
    }

    pub fn same_observations(&self, other: &SpyTrace) -> bool {
        self.window_size == other.window_size && self.observations() == other.observations()
    }

    /// Windows overlapping the inclusive cycle range `[first, last]`.
    pub fn within(&self, first: u64, last: u64) -> SpyTrace {
        SpyTrace {
            window_size: self.window_size,
            windows: self
                .windows
                .iter()
                .filter(|w| w.start <= last && w.end > first)
                .copied()
                .collect(),
        }
    }

    /// Population variance of elapsed cycles; 0 for an empty trace.
    pub fn variance(&self) -> f64 {
        if self.windows.is_empty() {
            return 0.0;
        }
        let n = self.windows.len() as f64;
        let mean = self.windows.iter().map(|w| w.elapsed as f64).sum::<f64>() / n;
        self.windows
            .iter()
            .map(|w| (w.elapsed as f64 - mean).powi(2))
            .sum::<f64>()
            / n
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("window,elapsed\n");
        for w in &self.windows {
            out.push_str(&format!("{},{}\n", w.index, w.elapsed));
        }
        out
    }
}

/// What the attacker knows ahead of time: when the victim was triggered and
/// how long one DOUBLE takes on an uncontended port.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Calibration {
    pub origin: u64,
    pub double_cycles: u64,
}

impl Calibration {
    pub fn new(origin: u64, profile: &VictimProfile) -> Self {
        Self {
            origin,
            double_cycles: profile.double_ops as u64,
        }
    }
}

/// Threshold decoder.
///
/// Windows slower than the midpoint of the lowest and highest elapsed values
/// are contended. Each run of contended windows is one ADD. Walking from the
/// trigger cycle, the quiet stretch before an ADD spans `k` DOUBLEs, which
/// decodes as `k-1` zeros followed by a one. Whatever remains after the last
/// ADD is zeros. A flat trace therefore decodes as all zeros.
pub fn recover_secret(
    trace: &SpyTrace,
    expected_bits: usize,
    cal: &Calibration,
) -> Result<Vec<bool>> {
    if trace.len() < expected_bits || trace.is_empty() {
        return Err(Error::InsufficientTrace {
            windows: trace.len(),
            expected: expected_bits,
        });
    }
    let lo = trace.windows.iter().map(|w| w.elapsed).min().unwrap_or(0);
    let hi = trace.windows.iter().map(|w| w.elapsed).max().unwrap_or(0);
    let mut bits = Vec::with_capacity(expected_bits);
    if hi > lo {
        let mid = (lo + hi) as f64 / 2.0;
        let double = cal.double_cycles.max(1) as f64;
        let mut cursor = cal.origin;
        for (start, end) in contended_runs(trace, mid) {
            if bits.len() >= expected_bits {
                break;
            }
            let gap = start.saturating_sub(cursor) as f64;
            let doubles = ((gap / double).round() as usize).max(1);
            bits.extend(std::iter::repeat_n(false, doubles - 1));
            bits.push(true);
            cursor = end;
        }
    }
    bits.resize(expected_bits, false);
    Ok(bits)
}

/// Maximal runs of back-to-back windows above `threshold`, as cycle spans.
fn contended_runs(trace: &SpyTrace, threshold: f64) -> Vec<(u64, u64)> {
    let mut runs: Vec<(u64, u64)> = Vec::new();
    let mut open = false;
    for w in &trace.windows {
        let slow = w.elapsed as f64 > threshold;
        match runs.last_mut() {
            Some(run) if slow && open && run.1 == w.start => run.1 = w.end,
            _ if slow => runs.push((w.start, w.end)),
            _ => {}
        }
        open = slow;
    }
    runs
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakageReport {
    pub bits: usize,
    pub accuracy: f64,
    pub windows: usize,
    pub variance: f64,
    /// Windows overlapping the victim's execution.
    pub victim_windows: usize,
    pub victim_variance: f64,
    pub key_independent: bool,
}

impl LeakageReport {
    pub fn render(&self) -> String {
        format!(
            "bits={}\naccuracy={}\nwindows={}\nvariance={}\nvictim_windows={}\nvictim_variance={}\nkey_independent={}\n",
            self.bits,
            fmt_real(self.accuracy),
            self.windows,
            fmt_real(self.variance),
            self.victim_windows,
            fmt_real(self.victim_variance),
            self.key_independent
        )
    }
}

/// `comparison` is the spy's trace against a different key of the same length.
pub fn leakage_report(
    recovered: &[bool],
    truth: &SecretKey,
    trace: &SpyTrace,
    victim_window: Option<(u64, u64)>,
    comparison: &SpyTrace,
) -> Result<LeakageReport> {
    if recovered.len() != truth.len() {
        return Err(Error::Analysis(format!(
            "recovered {} bits but the key has {}",
            recovered.len(),
            truth.len()
        )));
    }
    let correct = recovered
        .iter()
        .zip(truth.bits())
        .filter(|(a, b)| a == b)
        .count();
    let inside = match victim_window {
        Some((first, last)) => trace.within(first, last),
        None => SpyTrace::new(trace.window_size),
    };
    Ok(LeakageReport {
        bits: truth.len(),
        accuracy: correct as f64 / truth.len() as f64,
        windows: trace.len(),
        variance: trace.variance(),
        victim_windows: inside.len(),
        victim_variance: inside.variance(),
        key_independent: trace.same_observations(comparison),
    })
}

/// Victim and spy co-located on sibling threads of one physical core.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSetup {
    pub topology: Topology,
    pub port_count: usize,
    pub victim_core: CoreId,
    pub spy_core: CoreId,
    pub profile: VictimProfile,
    pub window_size: usize,
    /// Spy windows; `None` sizes the spy to outlast the victim.
    pub windows: Option<usize>,
    /// Demand registered for the victim, if any.
    pub demand: Option<(u8, u8)>,
    pub arrival: u64,
}

pub const VICTIM_NAME: &str = "V";
pub const SPY_NAME: &str = "S";
const VICTIM_PID: u32 = 100;
const SPY_PID: u32 = 200;

impl AttackSetup {
    /// 4x2 cores, victim on core 0, spy on core 1, spy port = ADD port.
    pub fn standard(demand: Option<(u8, u8)>) -> Self {
        Self {
            topology: Topology::new(4, 2).expect("static topology"),
            port_count: engine::DEFAULT_PORT_COUNT,
            victim_core: CoreId(0),
            spy_core: CoreId(1),
            profile: VictimProfile::default(),
            window_size: 1,
            windows: None,
            demand,
            arrival: 0,
        }
    }

    pub fn spy_windows(&self, key_bits: usize) -> usize {
        self.windows.unwrap_or_else(|| {
            let cycles = self.profile.worst_case_cycles(key_bits) as usize;
            cycles.div_ceil(self.window_size) + 4
        })
    }

    pub fn calibration(&self) -> Calibration {
        Calibration::new(self.arrival, &self.profile)
    }

    pub fn workload(&self, key: &SecretKey) -> Result<Workload> {
        let mut w = Workload::new(self.topology);
        w.port_count = self.port_count;
        let spy = gen_spy(
            self.profile.add_port,
            self.spy_windows(key.len()),
            self.window_size,
        )?;
        let victim = gen_victim(key, &self.profile)?;
        w.cycle_budget = 4 * (victim.len() + spy.stream.len()) as u64 + self.arrival + 64;
        w.processes.push(Process::new(
            VICTIM_NAME,
            VICTIM_PID,
            self.arrival,
            self.victim_core,
            victim,
        ));
        w.processes.push(
            Process::new(SPY_NAME, SPY_PID, self.arrival, self.spy_core, spy.stream)
                .with_probe(spy.window_size),
        );
        if let Some((sd, pd)) = self.demand {
            let topo = w.topology;
            w.demands.register(
                &topo,
                self.victim_core,
                DemandRecord::new(VICTIM_PID, sd, pd)?,
            )?;
        }
        Ok(w)
    }
}

/// Everything one end-to-end attack run produced.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub result: SimResult,
    pub trace: SpyTrace,
    pub victim_window: Option<(u64, u64)>,
    pub recovered: Vec<bool>,
}

/// Runs `workload`, extracts the spy's trace and decodes `bits` key bits.
///
/// A trace too short to decode yields the flat (all-zero) guess.
pub fn execute(
    workload: &Workload,
    victim: &str,
    spy: &str,
    bits: usize,
    cal: &Calibration,
) -> Result<AttackRun> {
    let result = engine::run(workload)?;
    let missing = |name: &str| Error::Config(format!("attack process `{name}` not in workload"));
    let v = result
        .process_index(victim)
        .ok_or_else(|| missing(victim))?;
    let s = result.process_index(spy).ok_or_else(|| missing(spy))?;
    let trace = result
        .trace_of(s)
        .cloned()
        .ok_or_else(|| Error::Config(format!("process `{spy}` has no probe window")))?;
    let recovered = match recover_secret(&trace, bits, cal) {
        Ok(bits) => bits,
        Err(Error::InsufficientTrace { .. }) => vec![false; bits],
        Err(e) => return Err(e),
    };
    let victim_window = result.execution_window(v);
    Ok(AttackRun {
        result,
        trace,
        victim_window,
        recovered,
    })
}

/// Attack with `key`, repeat with its complement, and report.
pub fn evaluate(setup: &AttackSetup, key: &SecretKey) -> Result<(AttackRun, LeakageReport)> {
    let cal = setup.calibration();
    let run = execute(
        &setup.workload(key)?,
        VICTIM_NAME,
        SPY_NAME,
        key.len(),
        &cal,
    )?;
    let other = execute(
        &setup.workload(&key.complement())?,
        VICTIM_NAME,
        SPY_NAME,
        key.len(),
        &cal,
    )?;
    let report = leakage_report(
        &run.recovered,
        key,
        &run.trace,
        run.victim_window,
        &other.trace,
    )?;
    Ok((run, report))
}
