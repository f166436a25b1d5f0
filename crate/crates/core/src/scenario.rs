//! Scenario files: line-oriented `section.key = value` text.
//!
//! ```text
//! # comments start with '#'
//! topology.physical = 4
//! topology.threads  = 2
//! engine.ports  = 3
//! engine.budget = 100000
//! engine.seed   = 7
//!
//! process.A.pid     = 1001
//! process.A.arrival = 0
//! process.A.core    = 0
//! process.A.stream  = 0*20 1*20        # port*count runs, or random:N, victim, spy
//!
//! demand.0   = 1001,1,1                # core = pid,sd,pd
//! action.1.1 = A10                     # admin override for sd=1, pd=1
//!
//! attack.key    = 0b10110              # or hex; attack.bits = N draws a random key
//! attack.window = 1
//!
//! bench.name = mixed
//! bench.repetitions = 3
//! ```
//!
//! Parsing reports every problem it finds, each with its line number.

use std::collections::BTreeMap;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attack::{self, gen_spy, gen_victim, Calibration, SecretKey, VictimProfile};
use crate::demand::{ActionId, ActionMap, DemandMap, DemandRecord, MAX_DEMAND};
use crate::engine::{burst, random_stream, Process, Workload, DEFAULT_PORT_COUNT};
use crate::error::{Diagnostic, Error, Result};
use crate::report::BenchConfig;
use crate::topology::{CoreId, Topology};

const DEFAULT_BUDGET: u64 = 1_000_000;
const DEFAULT_THREADS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamSpec {
    /// Runs of `count` ops on `port`.
    Ops(Vec<(u8, usize)>),
    /// Uniform random ports, drawn from the scenario seed.
    Random(usize),
    /// Double-and-add stream over the attack key.
    Victim,
    /// Port hammer timed in windows.
    Spy,
}

impl fmt::Display for StreamSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamSpec::Ops(runs) => {
                let parts: Vec<String> = runs.iter().map(|(p, n)| format!("{p}*{n}")).collect();
                f.write_str(&parts.join(" "))
            }
            StreamSpec::Random(n) => write!(f, "random:{n}"),
            StreamSpec::Victim => f.write_str("victim"),
            StreamSpec::Spy => f.write_str("spy"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessSpec {
    pub name: String,
    pub pid: u32,
    pub arrival: u64,
    pub core: usize,
    pub stream: StreamSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DemandSpec {
    pub core: usize,
    pub pid: u32,
    pub sd: u8,
    pub pd: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KeySpec {
    Literal(SecretKey),
    RandomBits(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSpec {
    pub key: Option<KeySpec>,
    pub profile: VictimProfile,
    pub window: usize,
    pub windows: Option<usize>,
}

impl Default for AttackSpec {
    fn default() -> Self {
        Self {
            key: None,
            profile: VictimProfile::default(),
            window: 1,
            windows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub physical: usize,
    pub threads: usize,
    pub ports: usize,
    pub budget: u64,
    pub seed: u64,
    pub processes: Vec<ProcessSpec>,
    pub demands: Vec<DemandSpec>,
    pub overrides: Vec<(u8, u8, ActionId)>,
    pub attack: Option<AttackSpec>,
    pub bench_name: Option<String>,
    pub repetitions: usize,
}

impl Scenario {
    pub fn topology(&self) -> Result<Topology> {
        Topology::new(self.physical, self.threads)
    }

    pub fn action_map(&self) -> ActionMap {
        let mut map = ActionMap::default();
        for &(sd, pd, action) in &self.overrides {
            map.set(sd, pd, action).expect("validated at parse time");
        }
        map
    }

    fn process_named(&self, stream: &StreamSpec) -> Option<&ProcessSpec> {
        self.processes.iter().find(|p| &p.stream == stream)
    }

    pub fn victim(&self) -> Option<&ProcessSpec> {
        self.process_named(&StreamSpec::Victim)
    }

    pub fn spy(&self) -> Option<&ProcessSpec> {
        self.process_named(&StreamSpec::Spy)
    }

    /// Key for an attack run: the explicit override, else the scenario's key.
    /// Random keys come from the scenario seed.
    pub fn attack_key(&self, override_key: Option<&KeySpec>) -> Result<SecretKey> {
        let spec = override_key
            .or_else(|| self.attack.as_ref().and_then(|a| a.key.as_ref()))
            .ok_or_else(|| Error::Config("no attack key: set attack.key or attack.bits".into()))?;
        match spec {
            KeySpec::Literal(k) => Ok(k.clone()),
            KeySpec::RandomBits(n) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(1);
                SecretKey::random(*n, &mut rng)
            }
        }
    }

    pub fn calibration(&self) -> Option<Calibration> {
        let attack = self.attack.as_ref()?;
        let victim = self.victim()?;
        Some(Calibration::new(victim.arrival, &attack.profile))
    }

    /// Expands the scenario into a runnable workload. `key` feeds the victim
    /// stream; `repetition` offsets the seed for random streams.
    pub fn build(&self, key: Option<&SecretKey>, repetition: u64) -> Result<Workload> {
        let topology = self.topology()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(repetition));
        let mut w = Workload::new(topology);
        w.port_count = self.ports;
        w.cycle_budget = self.budget;
        w.actions = self.action_map();

        let key_len = key.map(SecretKey::len);
        for spec in &self.processes {
            let mut probe = None;
            let stream = match &spec.stream {
                StreamSpec::Ops(runs) => runs.iter().flat_map(|&(p, n)| burst(p, n)).collect(),
                StreamSpec::Random(n) => random_stream(&mut rng, *n, self.ports),
                StreamSpec::Victim => {
                    let attack = self.attack_spec()?;
                    let key =
                        key.ok_or_else(|| Error::Config("victim stream needs a key".into()))?;
                    gen_victim(key, &attack.profile)?
                }
                StreamSpec::Spy => {
                    let attack = self.attack_spec()?;
                    let bits = key_len
                        .ok_or_else(|| Error::Config("spy stream needs a key length".into()))?;
                    let windows = attack.windows.unwrap_or_else(|| {
                        (attack.profile.worst_case_cycles(bits) as usize).div_ceil(attack.window)
                            + 4
                    });
                    let plan = gen_spy(attack.profile.add_port, windows, attack.window)?;
                    probe = Some(plan.window_size);
                    plan.stream
                }
            };
            let mut p = Process::new(
                spec.name.clone(),
                spec.pid,
                spec.arrival,
                CoreId(spec.core),
                stream,
            );
            p.probe_window = probe;
            w.processes.push(p);
        }

        let mut demands = DemandMap::new();
        for d in &self.demands {
            demands.register(
                &topology,
                CoreId(d.core),
                DemandRecord::new(d.pid, d.sd, d.pd)?,
            )?;
        }
        w.demands = demands;
        w.validate()?;
        Ok(w)
    }

    fn attack_spec(&self) -> Result<&AttackSpec> {
        self.attack
            .as_ref()
            .ok_or_else(|| Error::Config("victim/spy streams need an attack section".into()))
    }

    /// Runs the attack once with `key`.
    pub fn run_attack(&self, key: &SecretKey) -> Result<attack::AttackRun> {
        let victim = self
            .victim()
            .ok_or_else(|| Error::Config("scenario has no victim process".into()))?;
        let spy = self
            .spy()
            .ok_or_else(|| Error::Config("scenario has no spy process".into()))?;
        let cal = self.calibration().expect("victim and attack present");
        attack::execute(
            &self.build(Some(key), 0)?,
            &victim.name,
            &spy.name,
            key.len(),
            &cal,
        )
    }

    pub fn bench_config(&self, name: &str, modes: Vec<crate::report::Mode>) -> Result<BenchConfig> {
        let repetitions = (0..self.repetitions.max(1) as u64)
            .map(|rep| self.build(None, rep))
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchConfig {
            name: self.bench_name.clone().unwrap_or_else(|| name.to_string()),
            modes,
            repetitions,
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "topology.physical = {}", self.physical)?;
        writeln!(f, "topology.threads = {}", self.threads)?;
        writeln!(f, "engine.ports = {}", self.ports)?;
        writeln!(f, "engine.budget = {}", self.budget)?;
        writeln!(f, "engine.seed = {}", self.seed)?;
        for p in &self.processes {
            writeln!(f, "process.{}.pid = {}", p.name, p.pid)?;
            writeln!(f, "process.{}.arrival = {}", p.name, p.arrival)?;
            writeln!(f, "process.{}.core = {}", p.name, p.core)?;
            writeln!(f, "process.{}.stream = {}", p.name, p.stream)?;
        }
        for d in &self.demands {
            writeln!(f, "demand.{} = {},{},{}", d.core, d.pid, d.sd, d.pd)?;
        }
        for (sd, pd, a) in &self.overrides {
            writeln!(f, "action.{sd}.{pd} = {a}")?;
        }
        if let Some(a) = &self.attack {
            match &a.key {
                Some(KeySpec::Literal(k)) => writeln!(f, "attack.key = {k}")?,
                Some(KeySpec::RandomBits(n)) => writeln!(f, "attack.bits = {n}")?,
                None => {}
            }
            writeln!(f, "attack.double_port = {}", a.profile.double_port)?;
            writeln!(f, "attack.add_port = {}", a.profile.add_port)?;
            writeln!(f, "attack.double_ops = {}", a.profile.double_ops)?;
            writeln!(f, "attack.add_ops = {}", a.profile.add_ops)?;
            writeln!(f, "attack.window = {}", a.window)?;
            if let Some(n) = a.windows {
                writeln!(f, "attack.windows = {n}")?;
            }
        }
        if let Some(name) = &self.bench_name {
            writeln!(f, "bench.name = {name}")?;
        }
        writeln!(f, "bench.repetitions = {}", self.repetitions)
    }
}

/// Collects diagnostics while walking the file.
struct Parser {
    diags: Vec<Diagnostic>,
    seen: BTreeMap<String, usize>,
}

impl Parser {
    fn err(&mut self, line: usize, msg: impl Into<String>) {
        self.diags.push(Diagnostic::new(line, msg));
    }

    fn num<T: std::str::FromStr>(&mut self, line: usize, key: &str, value: &str) -> Option<T> {
        match value.parse::<T>() {
            Ok(v) => Some(v),
            Err(_) => {
                self.err(
                    line,
                    format!("{key}: expected a non-negative integer, got `{value}`"),
                );
                None
            }
        }
    }

    fn positive(&mut self, line: usize, key: &str, value: &str) -> Option<usize> {
        let v: usize = self.num(line, key, value)?;
        if v == 0 {
            self.err(line, format!("{key}: must be positive"));
            return None;
        }
        Some(v)
    }

    fn level(&mut self, line: usize, key: &str, value: &str) -> Option<u8> {
        let v: u64 = self.num(line, key, value)?;
        if v > MAX_DEMAND as u64 {
            self.err(line, format!("{key}: {v} is outside [0,{MAX_DEMAND}]"));
            return None;
        }
        Some(v as u8)
    }
}

#[derive(Default)]
struct PartialProcess {
    line: usize,
    pid: Option<(u32, usize)>,
    arrival: Option<u64>,
    core: Option<(usize, usize)>,
    stream: Option<(StreamSpec, usize)>,
}

fn parse_stream(p: &mut Parser, line: usize, value: &str) -> Option<StreamSpec> {
    let v = value.trim();
    match v {
        "victim" => return Some(StreamSpec::Victim),
        "spy" => return Some(StreamSpec::Spy),
        _ => {}
    }
    if let Some(n) = v.strip_prefix("random:") {
        return p.num(line, "stream", n.trim()).map(StreamSpec::Random);
    }
    let mut runs = Vec::new();
    for tok in v
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
    {
        let (port, count) = match tok.split_once('*') {
            Some((a, b)) => (a, b),
            None => (tok, "1"),
        };
        match (port.parse::<u8>(), count.parse::<usize>()) {
            (Ok(port), Ok(count)) => runs.push((port, count)),
            _ => {
                p.err(
                    line,
                    format!("stream: bad token `{tok}` (expected PORT*COUNT)"),
                );
                return None;
            }
        }
    }
    Some(StreamSpec::Ops(runs))
}

fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let mut p = Parser {
        diags: Vec::new(),
        seen: BTreeMap::new(),
    };
    let mut physical: Option<(usize, usize)> = None;
    let mut threads: Option<usize> = None;
    let mut ports = DEFAULT_PORT_COUNT;
    let mut budget = DEFAULT_BUDGET;
    let mut seed = 0u64;
    let mut procs: Vec<(String, PartialProcess)> = Vec::new();
    let mut demands: Vec<(DemandSpec, usize)> = Vec::new();
    let mut overrides: Vec<(u8, u8, ActionId)> = Vec::new();
    let mut attack: Option<AttackSpec> = None;
    let mut attack_ports: Vec<(u8, usize)> = Vec::new();
    let mut bench_name = None;
    let mut repetitions = 1usize;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            p.err(
                line,
                format!("expected `section.key = value`, got `{content}`"),
            );
            continue;
        };
        let key = key.trim();
        let value = value.trim();
        if let Some(first) = p.seen.insert(key.to_string(), line) {
            p.err(
                line,
                format!("duplicate key `{key}` (first set on line {first})"),
            );
            continue;
        }
        let path: Vec<&str> = key.split('.').collect();
        match path.as_slice() {
            ["topology", "physical"] => {
                physical = p.positive(line, key, value).map(|v| (v, line));
            }
            ["topology", "threads"] => threads = p.positive(line, key, value),
            ["engine", "ports"] => {
                if let Some(v) = p.positive(line, key, value) {
                    if v > 256 {
                        p.err(line, format!("{key}: at most 256 ports"));
                    } else {
                        ports = v;
                    }
                }
            }
            ["engine", "budget"] => {
                if let Some(v) = p.positive(line, key, value) {
                    budget = v as u64;
                }
            }
            ["engine", "seed"] => seed = p.num(line, key, value).unwrap_or(0),
            ["process", name, field] => {
                if !valid_name(name) {
                    p.err(line, format!("invalid process name `{name}`"));
                    continue;
                }
                let pos = match procs.iter().position(|(n, _)| n == name) {
                    Some(i) => i,
                    None => {
                        procs.push((
                            name.to_string(),
                            PartialProcess {
                                line,
                                ..Default::default()
                            },
                        ));
                        procs.len() - 1
                    }
                };
                match *field {
                    "pid" => {
                        if let Some(v) = p.num::<u32>(line, key, value) {
                            procs[pos].1.pid = Some((v, line));
                        }
                    }
                    "arrival" => procs[pos].1.arrival = p.num(line, key, value),
                    "core" => {
                        if let Some(v) = p.num::<usize>(line, key, value) {
                            procs[pos].1.core = Some((v, line));
                        }
                    }
                    "stream" => {
                        if let Some(s) = parse_stream(&mut p, line, value) {
                            procs[pos].1.stream = Some((s, line));
                        }
                    }
                    other => p.err(line, format!("unknown process key `{other}`")),
                }
            }
            ["demand", core] => {
                let Some(core) = p.num::<usize>(line, key, core) else {
                    continue;
                };
                let fields: Vec<&str> = value.split(',').map(str::trim).collect();
                if fields.len() != 3 {
                    p.err(line, format!("{key}: expected `pid,sd,pd`, got `{value}`"));
                    continue;
                }
                let pid = p.num::<u32>(line, "pid", fields[0]);
                let sd = p.level(line, "sd", fields[1]);
                let pd = p.level(line, "pd", fields[2]);
                if let (Some(pid), Some(sd), Some(pd)) = (pid, sd, pd) {
                    demands.push((DemandSpec { core, pid, sd, pd }, line));
                }
            }
            ["action", sd, pd] => {
                let sd = p.level(line, "sd", sd);
                let pd = p.level(line, "pd", pd);
                match value.parse::<ActionId>() {
                    Ok(a) => {
                        if let (Some(sd), Some(pd)) = (sd, pd) {
                            overrides.push((sd, pd, a));
                        }
                    }
                    Err(e) => p.err(line, e),
                }
            }
            ["attack", field] => {
                let a = attack.get_or_insert_with(AttackSpec::default);
                match *field {
                    "key" => match SecretKey::parse(value) {
                        Ok(k) => a.key = Some(KeySpec::Literal(k)),
                        Err(e) => p.err(line, format!("{key}: {e}")),
                    },
                    "bits" => {
                        if let Some(n) = p.positive(line, key, value) {
                            attack.as_mut().expect("set above").key = Some(KeySpec::RandomBits(n));
                        }
                    }
                    "double_port" | "add_port" => {
                        if let Some(v) = p.num::<u8>(line, key, value) {
                            attack_ports.push((v, line));
                            let prof = &mut attack.as_mut().expect("set above").profile;
                            if *field == "double_port" {
                                prof.double_port = v;
                            } else {
                                prof.add_port = v;
                            }
                        }
                    }
                    "double_ops" | "add_ops" => {
                        if let Some(v) = p.positive(line, key, value) {
                            let prof = &mut attack.as_mut().expect("set above").profile;
                            if *field == "double_ops" {
                                prof.double_ops = v;
                            } else {
                                prof.add_ops = v;
                            }
                        }
                    }
                    "window" => {
                        if let Some(v) = p.positive(line, key, value) {
                            attack.as_mut().expect("set above").window = v;
                        }
                    }
                    "windows" => {
                        if let Some(v) = p.positive(line, key, value) {
                            attack.as_mut().expect("set above").windows = Some(v);
                        }
                    }
                    other => p.err(line, format!("unknown attack key `{other}`")),
                }
            }
            ["bench", "name"] => {
                if valid_name(value) {
                    bench_name = Some(value.to_string());
                } else {
                    p.err(line, format!("invalid bench name `{value}`"));
                }
            }
            ["bench", "repetitions"] => {
                if let Some(v) = p.positive(line, key, value) {
                    repetitions = v;
                }
            }
            _ => p.err(line, format!("unknown key `{key}`")),
        }
    }

    let Some((physical, _)) = physical else {
        p.diags.insert(
            0,
            Diagnostic::global("missing topology: set topology.physical"),
        );
        return Err(Error::Validation(p.diags));
    };
    let threads = threads.unwrap_or(DEFAULT_THREADS);
    let logical = physical * threads;

    let mut processes = Vec::new();
    for (name, pp) in procs {
        let (Some((pid, pid_line)), Some((core, core_line)), Some((stream, stream_line))) =
            (pp.pid, pp.core, pp.stream)
        else {
            let missing: Vec<&str> = ["pid", "core", "stream"]
                .into_iter()
                .filter(|f| !p.seen.contains_key(&format!("process.{name}.{f}")))
                .collect();
            if !missing.is_empty() {
                p.err(
                    pp.line,
                    format!("process {name}: missing {}", missing.join(", ")),
                );
            }
            continue;
        };
        if core >= logical {
            p.err(
                core_line,
                format!("process {name}: core {core} does not exist ({logical} logical cores)"),
            );
        }
        if let StreamSpec::Ops(runs) = &stream {
            if let Some((port, _)) = runs.iter().find(|(port, _)| *port as usize >= ports) {
                p.err(
                    stream_line,
                    format!("process {name}: port {port} out of range (engine.ports = {ports})"),
                );
            }
        }
        if let Some(other) = processes.iter().find(|q: &&ProcessSpec| q.pid == pid) {
            p.err(
                pid_line,
                format!("process {name}: pid {pid} already used by {}", other.name),
            );
        }
        processes.push(ProcessSpec {
            name,
            pid,
            arrival: pp.arrival.unwrap_or(0),
            core,
            stream,
        });
    }

    for (d, line) in &demands {
        if d.core >= logical {
            p.err(
                *line,
                format!(
                    "demand on core {} which does not exist ({logical} logical cores)",
                    d.core
                ),
            );
        }
    }
    for (port, line) in &attack_ports {
        if *port as usize >= ports {
            p.err(
                *line,
                format!("attack port {port} out of range (engine.ports = {ports})"),
            );
        }
    }
    if let Some(a) = &attack {
        if a.profile.double_port == a.profile.add_port {
            let line = attack_ports.last().map(|(_, l)| *l).unwrap_or(0);
            p.err(line, "attack.double_port and attack.add_port must differ");
        }
    }
    for kind in [StreamSpec::Victim, StreamSpec::Spy] {
        let users: Vec<&ProcessSpec> = processes.iter().filter(|q| q.stream == kind).collect();
        if users.len() > 1 {
            p.err(0, format!("at most one process may use stream `{kind}`"));
        }
        if !users.is_empty() && attack.is_none() {
            p.err(
                0,
                format!(
                    "process {} uses stream `{kind}` but there is no attack section",
                    users[0].name
                ),
            );
        }
    }

    if !p.diags.is_empty() {
        p.diags.sort_by_key(|d| d.line);
        return Err(Error::Validation(p.diags));
    }
    Ok(Scenario {
        physical,
        threads,
        ports,
        budget,
        seed,
        processes,
        demands: demands.into_iter().map(|(d, _)| d).collect(),
        overrides,
        attack,
        bench_name,
        repetitions,
    })
}
