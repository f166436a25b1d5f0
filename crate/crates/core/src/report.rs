//! Throughput comparison across mitigation modes, and CSV output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::demand::DemandRecord;
use crate::engine::{self, random_stream, Process, Workload};
use crate::error::{Error, Result};
use crate::topology::{CoreId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    /// SMT on, no demands honored.
    SmtOnBaseline,
    /// Demands honored; siblings halted only while key processes run.
    Ddm,
    /// One thread per physical core for the whole run.
    StaticSmtOff,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::SmtOnBaseline, Mode::Ddm, Mode::StaticSmtOff];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::SmtOnBaseline => "smt-on",
            Mode::Ddm => "ddm",
            Mode::StaticSmtOff => "static-off",
        }
    }

    /// Derives this mode's workload from a base workload.
    ///
    /// Static SMT-off moves every process onto the first thread of its
    /// physical core, the way an OS sees one CPU per core with SMT disabled.
    pub fn apply(self, base: &Workload) -> Workload {
        let mut w = base.clone();
        match self {
            Mode::Ddm => {}
            Mode::SmtOnBaseline => w.demands.clear(),
            Mode::StaticSmtOff => {
                w.demands.clear();
                w.smt_off = true;
                let threads = w.topology.threads_per_core();
                for p in &mut w.processes {
                    p.core = CoreId(p.core.0 - p.core.0 % threads);
                }
            }
        }
        w
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "smt-on" => Ok(Mode::SmtOnBaseline),
            "ddm" => Ok(Mode::Ddm),
            "static-off" => Ok(Mode::StaticSmtOff),
            other => Err(format!(
                "unknown mode `{other}` (expected smt-on, ddm or static-off)"
            )),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub name: String,
    pub modes: Vec<Mode>,
    /// One base workload per repetition.
    pub repetitions: Vec<Workload>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlowdownRow {
    pub workload: String,
    pub mode: Mode,
    pub cycles_baseline: f64,
    pub cycles_mode: f64,
    pub slowdown: f64,
}

/// Checks that `other` runs the same processes as `baseline`, ignoring core
/// placement (static SMT-off remaps cores).
pub fn check_same_workload(baseline: &Workload, other: &Workload) -> Result<()> {
    let same = baseline.topology == other.topology
        && baseline.processes.len() == other.processes.len()
        && baseline
            .processes
            .iter()
            .zip(&other.processes)
            .all(|(a, b)| {
                a.name == b.name && a.pid == b.pid && a.arrival == b.arrival && a.stream == b.stream
            });
    if same {
        Ok(())
    } else {
        Err(Error::Config(
            "compared modes must run identical workloads".into(),
        ))
    }
}

/// Total cycles of `modes` against the SMT-on baseline, averaged over repetitions.
pub fn run_bench(cfg: &BenchConfig) -> Result<Vec<SlowdownRow>> {
    if cfg.repetitions.is_empty() {
        return Err(Error::Config("bench needs at least one repetition".into()));
    }
    if cfg.modes.is_empty() {
        return Err(Error::Config("bench needs at least one mode".into()));
    }
    let mut modes = vec![Mode::SmtOnBaseline];
    modes.extend(
        cfg.modes
            .iter()
            .copied()
            .filter(|m| *m != Mode::SmtOnBaseline),
    );

    let mut totals = vec![0u64; modes.len()];
    for base in &cfg.repetitions {
        let variants: Vec<Workload> = modes.iter().map(|m| m.apply(base)).collect();
        for v in &variants[1..] {
            check_same_workload(&variants[0], v)?;
        }
        let cycles = std::thread::scope(|s| {
            let handles: Vec<_> = variants
                .iter()
                .map(|w| s.spawn(move || engine::run(w).map(|r| r.total_cycles)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("engine thread panicked"))
                .collect::<Result<Vec<u64>>>()
        })?;
        for (t, c) in totals.iter_mut().zip(cycles) {
            *t += c;
        }
    }

    let reps = cfg.repetitions.len() as f64;
    let baseline = totals[0] as f64 / reps;
    let rows = modes
        .iter()
        .zip(&totals)
        .filter(|(m, _)| cfg.modes.contains(m))
        .map(|(&mode, &total)| {
            let cycles = total as f64 / reps;
            SlowdownRow {
                workload: cfg.name.clone(),
                mode,
                cycles_baseline: baseline,
                cycles_mode: cycles,
                slowdown: slowdown(baseline, cycles),
            }
        })
        .collect::<Vec<_>>();
    let mut ordered = Vec::with_capacity(rows.len());
    for m in &cfg.modes {
        if let Some(r) = rows.iter().find(|r| r.mode == *m) {
            if !ordered.iter().any(|o: &SlowdownRow| o.mode == *m) {
                ordered.push(r.clone());
            }
        }
    }
    Ok(ordered)
}

pub fn slowdown(baseline: f64, cycles: f64) -> f64 {
    if baseline == 0.0 {
        0.0
    } else {
        (cycles - baseline) / baseline
    }
}

/// Six significant digits, locale independent, always with a decimal point
/// or exponent.
pub fn fmt_real(x: f64) -> String {
    if x == 0.0 {
        return "0.0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let mag = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&mag) {
        let s = format!("{x:.5e}");
        let (mantissa, exp) = s.split_once('e').expect("exponent form");
        let mantissa = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{mantissa}e{exp}");
    }
    let decimals = (5 - mag).max(0) as usize;
    let s = format!("{x:.decimals$}");
    if s.contains('.') {
        let t = s.trim_end_matches('0');
        if t.ends_with('.') {
            format!("{t}0")
        } else {
            t.to_string()
        }
    } else {
        format!("{s}.0")
    }
}

pub fn rows_to_csv(rows: &[SlowdownRow]) -> String {
    let mut out = String::from("workload,mode,cycles,slowdown\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.workload,
            r.mode,
            fmt_real(r.cycles_mode),
            fmt_real(r.slowdown)
        ));
    }
    out
}

pub fn render_table(rows: &[SlowdownRow]) -> String {
    let mut out = format!(
        "{:<16} {:<11} {:>12} {:>10}\n",
        "workload", "mode", "cycles", "slowdown"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:<11} {:>12} {:>9.2}%\n",
            r.workload,
            r.mode.to_string(),
            fmt_real(r.cycles_mode),
            r.slowdown * 100.0
        ));
    }
    out
}

pub fn emit_csv(path: &Path, csv: &str) -> Result<()> {
    std::fs::write(path, csv).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Eight processes on a 4x2 machine with random port streams. The process on
/// core 0 is a short key process (sd=1, pd=1, so A01) arriving mid-run.
pub fn mixed_workload(seed: u64, key_len: usize, background_len: usize) -> Workload {
    let topo = Topology::new(4, 2).expect("static topology");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Workload::new(topo);
    w.cycle_budget = 20 * (key_len + background_len) as u64 + 1000;
    let ports = w.port_count;
    w.processes.push(Process::new(
        "K",
        1,
        (background_len / 4) as u64,
        CoreId(0),
        random_stream(&mut rng, key_len, ports),
    ));
    for lc in 1..8 {
        w.processes.push(Process::new(
            format!("W{lc}"),
            1 + lc as u32,
            0,
            CoreId(lc),
            random_stream(&mut rng, background_len, ports),
        ));
    }
    w.demands
        .register(
            &topo,
            CoreId(0),
            DemandRecord::new(1, 1, 1).expect("levels in range"),
        )
        .expect("core 0 exists");
    w
}
