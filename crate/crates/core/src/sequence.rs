//! Pulse programs, the two built-in NOESY sequences, phase cycling and
//! States-TPPI acquisition of the hypercomplex 2D data set.

use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relax::{self, MixingSpec, RelaxationMatrix};
use crate::spin::{self, DensityState, Eigen, SpinSystem};

/// How the `d0` slots are bound to the encoded t1 value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SequenceKind {
    /// A single `d0 = t1` evolution.
    #[default]
    Conventional,
    /// Perfect-echo block: each `d0` lasts `t1_phys / 4` with `t1_phys = 2 t1`.
    PerfectEcho,
}

impl SequenceKind {
    /// Length of one `d0` slot for an encoded t1.
    pub fn d0(self, t1: f64) -> f64 {
        match self {
            SequenceKind::Conventional => t1,
            SequenceKind::PerfectEcho => t1 / 2.0,
        }
    }
}

/// A named cycle of phase quadrants (0..3 = x, y, -x, -y).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTable {
    name: String,
    quadrants: Vec<u8>,
}

impl PhaseTable {
    pub fn new(name: impl Into<String>, quadrants: Vec<u8>) -> Result<Self> {
        let name = name.into();
        if !matches!(quadrants.len(), 1 | 2 | 4 | 8) {
            return Err(Error::InvalidProgram(format!(
                "phase table {name} has length {}, expected 1, 2, 4 or 8",
                quadrants.len()
            )));
        }
        if let Some(q) = quadrants.iter().find(|&&q| q > 3) {
            return Err(Error::InvalidProgram(format!(
                "phase table {name} has quadrant {q} outside 0..3"
            )));
        }
        Ok(Self { name, quadrants })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn quadrants(&self) -> &[u8] {
        &self.quadrants
    }

    pub fn len(&self) -> usize {
        self.quadrants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quadrants.is_empty()
    }

    pub fn at(&self, scan: usize) -> u8 {
        self.quadrants[scan % self.quadrants.len()]
    }

    /// Same table with every entry advanced by `quadrants`.
    pub fn shifted(&self, quadrants: u8) -> Self {
        Self {
            name: self.name.clone(),
            quadrants: self.quadrants.iter().map(|q| (q + quadrants) % 4).collect(),
        }
    }
}

/// Length of a delay event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelaySlot {
    Fixed(f64),
    /// Refers to a binding in [`PulseProgram::delays`].
    Named(String),
    /// The incremented t1 slot.
    D0,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PulseEvent {
    HardPulse {
        flip_deg: f64,
        phase: usize,
    },
    /// Free precession; `couplings == false` evolves chemical shifts only.
    Delay {
        slot: DelaySlot,
        couplings: bool,
    },
    Purge,
    Mixing {
        spec: MixingSpec,
        /// Phase table of the filter chirp, if any.
        phase: Option<usize>,
    },
    Acquire {
        n_points: usize,
        dwell: f64,
        receiver: usize,
    },
}

/// An ordered event list with its phase tables and named delays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseProgram {
    pub kind: SequenceKind,
    pub phase_tables: Vec<PhaseTable>,
    pub delays: Vec<(String, f64)>,
    pub events: Vec<PulseEvent>,
}

impl PulseProgram {
    pub fn validate(&self) -> Result<()> {
        let n_tables = self.phase_tables.len();
        let check_table = |i: usize| {
            if i < n_tables {
                Ok(())
            } else {
                Err(Error::InvalidProgram(format!("phase table index {i} out of range")))
            }
        };
        let acquires = self
            .events
            .iter()
            .filter(|e| matches!(e, PulseEvent::Acquire { .. }))
            .count();
        if acquires != 1 {
            return Err(Error::InvalidProgram(format!(
                "expected exactly one acquire, found {acquires}"
            )));
        }
        if !matches!(self.events.last(), Some(PulseEvent::Acquire { .. })) {
            return Err(Error::InvalidProgram("acquire must be the last event".into()));
        }
        for (name, v) in &self.delays {
            if !(v.is_finite() && *v >= 0.0) {
                return Err(Error::InvalidProgram(format!("delay {name} = {v} is not a valid duration")));
            }
        }
        for e in &self.events {
            match e {
                PulseEvent::HardPulse { flip_deg, phase } => {
                    check_table(*phase)?;
                    if !flip_deg.is_finite() {
                        return Err(Error::InvalidProgram("non-finite flip angle".into()));
                    }
                }
                PulseEvent::Delay { slot, .. } => match slot {
                    DelaySlot::Fixed(v) => spin::check_duration(*v)?,
                    DelaySlot::Named(name) => {
                        self.delay(name)?;
                    }
                    DelaySlot::D0 => {}
                },
                PulseEvent::Purge => {}
                PulseEvent::Mixing { spec, phase } => {
                    spec.validate()?;
                    if let Some(p) = phase {
                        check_table(*p)?;
                    }
                }
                PulseEvent::Acquire {
                    n_points,
                    dwell,
                    receiver,
                } => {
                    check_table(*receiver)?;
                    if *n_points == 0 || !(dwell.is_finite() && *dwell > 0.0) {
                        return Err(Error::InvalidProgram("acquire needs points and a positive dwell".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn delay(&self, name: &str) -> Result<f64> {
        self.delays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::InvalidProgram(format!("unbound delay {name}")))
    }

    pub fn table(&self, name: &str) -> Option<usize> {
        self.phase_tables.iter().position(|t| t.name() == name)
    }

    /// Longest phase-cycle length, i.e. the minimum complete scan count.
    pub fn cycle_length(&self) -> usize {
        self.phase_tables.iter().map(PhaseTable::len).max().unwrap_or(1)
    }

    /// Indices of the hard pulses preceding the last `d0` slot; these form the
    /// t1 block whose phase the States and TPPI increments advance.
    pub fn t1_block(&self) -> Vec<usize> {
        let last_d0 = self
            .events
            .iter()
            .rposition(|e| matches!(e, PulseEvent::Delay { slot: DelaySlot::D0, .. }));
        match last_d0 {
            None => Vec::new(),
            Some(end) => (0..end)
                .filter(|&i| matches!(self.events[i], PulseEvent::HardPulse { .. }))
                .collect(),
        }
    }

    /// Every phase table (receiver included) advanced by `quadrants`.
    pub fn with_phases_shifted(&self, quadrants: u8) -> Self {
        let mut p = self.clone();
        p.phase_tables = p.phase_tables.iter().map(|t| t.shifted(quadrants)).collect();
        p
    }
}

/// Phase-table layout of the built-in sequences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseAssignment {
    /// Tables on the pulses that make the caption's receiver column select
    /// the zero-quantum NOE pathway.
    #[default]
    Coherent,
    /// Tables in the temporal order of the pulses. Kept for comparison; with
    /// ideal pulses it loses part of the desired pathway.
    Temporal,
}

fn tables(spec: &[(&str, &[u8])]) -> Vec<PhaseTable> {
    spec.iter()
        .map(|(n, q)| PhaseTable::new(*n, q.to_vec()).expect("built-in table"))
        .collect()
}

fn pulse(flip_deg: f64, phase: usize) -> PulseEvent {
    PulseEvent::HardPulse { flip_deg, phase }
}

fn d0() -> PulseEvent {
    PulseEvent::Delay {
        slot: DelaySlot::D0,
        couplings: true,
    }
}

const DEFAULT_ACQ_POINTS: usize = 256;
const DEFAULT_ACQ_DWELL: f64 = 1e-3;

fn acquire(receiver: usize) -> PulseEvent {
    PulseEvent::Acquire {
        n_points: DEFAULT_ACQ_POINTS,
        dwell: DEFAULT_ACQ_DWELL,
        receiver,
    }
}

/// Zero-quantum filtered NOESY: 90 - t1 - 90 - mixing - 90 - acquire.
pub fn build_noesy_zqf(mix: MixingSpec) -> PulseProgram {
    build_noesy_zqf_with(mix, PhaseAssignment::default())
}

pub fn build_noesy_zqf_with(mix: MixingSpec, assignment: PhaseAssignment) -> PulseProgram {
    let phase_tables = tables(&[
        ("1", &[0, 2]),
        ("2", &[0; 8]),
        ("3", &[0, 0, 2, 2, 1, 1, 3, 3]),
        ("4", &[0]),
        ("R", &[0, 2, 2, 0, 1, 3, 3, 1]),
    ]);
    let (store, read) = match assignment {
        PhaseAssignment::Coherent => (1, 2),
        PhaseAssignment::Temporal => (2, 3),
    };
    let chirp = match assignment {
        PhaseAssignment::Coherent => Some(3),
        PhaseAssignment::Temporal => None,
    };
    PulseProgram {
        kind: SequenceKind::Conventional,
        phase_tables,
        delays: Vec::new(),
        events: vec![
            pulse(90.0, 0),
            d0(),
            pulse(90.0, store),
            PulseEvent::Mixing { spec: mix, phase: chirp },
            pulse(90.0, read),
            acquire(4),
        ],
    }
}

/// Perfect-echo NOESY: 90 - d0 - 180 - d0 - 90 - d0 - d0 - 90 - mixing - 90 -
/// acquire, with all four `d0` slots equal to a quarter of the physical t1.
pub fn build_pe_noesy_zqf(mix: MixingSpec) -> PulseProgram {
    build_pe_noesy_zqf_with(mix, PhaseAssignment::default())
}

pub fn build_pe_noesy_zqf_with(mix: MixingSpec, assignment: PhaseAssignment) -> PulseProgram {
    let phase_tables = tables(&[
        ("1", &[0, 2]),
        ("2", &[0; 8]),
        ("3", &[0, 0, 0, 0, 2, 2, 2, 2]),
        ("4", &[0]),
        ("5", &[1, 1, 3, 3]),
        ("6", &[1, 3, 1, 3]),
        ("R", &[0, 2, 2, 0, 2, 0, 0, 2]),
    ]);
    // indices: 0 = 1, 1 = 2, 2 = 3, 3 = 4, 4 = 5, 5 = 6
    let (refocus, mid, store, read, chirp) = match assignment {
        PhaseAssignment::Coherent => (1, 5, 4, 2, Some(3)),
        PhaseAssignment::Temporal => (4, 5, 2, 3, None),
    };
    PulseProgram {
        kind: SequenceKind::PerfectEcho,
        phase_tables,
        delays: Vec::new(),
        events: vec![
            pulse(90.0, 0),
            d0(),
            pulse(180.0, refocus),
            d0(),
            pulse(90.0, mid),
            d0(),
            d0(),
            pulse(90.0, store),
            PulseEvent::Mixing { spec: mix, phase: chirp },
            pulse(90.0, read),
            acquire(6),
        ],
    }
}

/// A program with every slot bound to a concrete duration.
#[derive(Clone, Debug, PartialEq)]
pub enum Step {
    Pulse {
        flip_deg: f64,
        phase: usize,
        /// Member of the t1 block (receives States/TPPI increments).
        t1_block: bool,
    },
    Delay {
        duration: f64,
        couplings: bool,
    },
    Purge,
    Mixing {
        spec: MixingSpec,
        phase: Option<usize>,
    },
    Acquire {
        n_points: usize,
        dwell: f64,
        receiver: usize,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedProgram {
    pub steps: Vec<Step>,
    pub phase_tables: Vec<PhaseTable>,
}

/// Bind the `d0` slots for an encoded t1 according to the program's kind.
pub fn resolve_t1(program: &PulseProgram, t1: f64) -> Result<ResolvedProgram> {
    if !(t1.is_finite() && t1 >= 0.0) {
        return Err(Error::NegativeDuration(t1));
    }
    program.validate()?;
    let block = program.t1_block();
    let d0 = program.kind.d0(t1);
    let steps = program
        .events
        .iter()
        .enumerate()
        .map(|(i, e)| {
            Ok(match e {
                PulseEvent::HardPulse { flip_deg, phase } => Step::Pulse {
                    flip_deg: *flip_deg,
                    phase: *phase,
                    t1_block: block.contains(&i),
                },
                PulseEvent::Delay { slot, couplings } => Step::Delay {
                    duration: match slot {
                        DelaySlot::Fixed(v) => *v,
                        DelaySlot::Named(n) => program.delay(n)?,
                        DelaySlot::D0 => d0,
                    },
                    couplings: *couplings,
                },
                PulseEvent::Purge => Step::Purge,
                PulseEvent::Mixing { spec, phase } => Step::Mixing {
                    spec: spec.clone(),
                    phase: *phase,
                },
                PulseEvent::Acquire {
                    n_points,
                    dwell,
                    receiver,
                } => Step::Acquire {
                    n_points: *n_points,
                    dwell: *dwell,
                    receiver: *receiver,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResolvedProgram {
        steps,
        phase_tables: program.phase_tables.clone(),
    })
}

impl ResolvedProgram {
    /// Replace the acquisition window.
    pub fn with_acquisition(mut self, n_points: usize, dwell: f64) -> Self {
        for s in &mut self.steps {
            if let Step::Acquire { n_points: n, dwell: d, .. } = s {
                *n = n_points;
                *d = dwell;
            }
        }
        self
    }

    /// Index of the acquisition step.
    pub fn acquire_index(&self) -> usize {
        self.steps
            .iter()
            .position(|s| matches!(s, Step::Acquire { .. }))
            .expect("validated program has an acquire")
    }
}

/// Per-transient phase bookkeeping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScanPhase {
    pub scan: usize,
    /// Extra quadrants on the t1 block (States + TPPI).
    pub block_shift: u8,
    /// Extra quadrants on the receiver (TPPI).
    pub receiver_shift: u8,
}

impl ScanPhase {
    pub fn scan(scan: usize) -> Self {
        Self {
            scan,
            ..Self::default()
        }
    }
}

/// Precomputed Hamiltonian eigenbases for one spin system.
pub struct Kernel<'a> {
    sys: &'a SpinSystem,
    relaxation: &'a RelaxationMatrix,
    full: Eigen,
    shifts: Eigen,
}

impl<'a> Kernel<'a> {
    pub fn new(sys: &'a SpinSystem, relaxation: &'a RelaxationMatrix) -> Result<Self> {
        if relaxation.n_spins() != sys.n_spins() {
            return Err(Error::DimensionMismatch {
                expected: sys.n_spins(),
                got: relaxation.n_spins(),
            });
        }
        Ok(Self {
            sys,
            relaxation,
            full: sys.hamiltonian(true).eigen(),
            shifts: sys.hamiltonian(false).eigen(),
        })
    }

    pub fn system(&self) -> &SpinSystem {
        self.sys
    }

    /// Apply `steps[..end]` to `state`.
    pub fn propagate(
        &self,
        program: &ResolvedProgram,
        end: usize,
        state: DensityState,
        phase: ScanPhase,
    ) -> Result<DensityState> {
        let tables = &program.phase_tables;
        let mut rho = state;
        for step in &program.steps[..end] {
            rho = match step {
                Step::Pulse {
                    flip_deg,
                    phase: t,
                    t1_block,
                } => {
                    let shift = if *t1_block { phase.block_shift } else { 0 };
                    let q = (tables[*t].at(phase.scan) + shift) % 4;
                    spin::evolve(&rho, &spin::hard_pulse_propagator(self.sys, *flip_deg, q))?
                }
                Step::Delay { duration, couplings } => {
                    spin::check_duration(*duration)?;
                    if *duration == 0.0 {
                        rho
                    } else {
                        let eig = if *couplings { &self.full } else { &self.shifts };
                        let rho = spin::evolve(&rho, &eig.propagator(*duration))?;
                        spin::apply_t2_decay(&rho, self.sys, *duration)?
                    }
                }
                Step::Purge => rho.p0(),
                Step::Mixing { spec, phase: t } => {
                    let mut spec = spec.clone();
                    if spec.relaxation.is_none() {
                        spec.relaxation = Some(self.relaxation.clone());
                    }
                    if let (Some(f), Some(t)) = (spec.zq_filter.as_mut(), t) {
                        f.phase = (f.phase + tables[*t].at(phase.scan)) % 4;
                    }
                    relax::mixing_period(&rho, self.sys, &spec)?
                }
                Step::Acquire { .. } => rho,
            };
        }
        Ok(rho)
    }

    /// One transient from `initial`, returning the receiver-phased FID and
    /// the state at the start of acquisition.
    pub fn transient(
        &self,
        program: &ResolvedProgram,
        initial: DensityState,
        phase: ScanPhase,
    ) -> Result<(Vec<Complex64>, DensityState)> {
        let at = program.acquire_index();
        let rho = self.propagate(program, at, initial, phase)?;
        let Step::Acquire {
            n_points,
            dwell,
            receiver,
        } = &program.steps[at]
        else {
            unreachable!("acquire_index points at an acquire");
        };
        let q = (program.phase_tables[*receiver].at(phase.scan) + phase.receiver_shift) % 4;
        let rx = spin::quadrant_phasor(q).conj();
        let fid = self
            .acquire(&rho, *n_points, *dwell)?
            .into_iter()
            .map(|s| s * rx)
            .collect();
        Ok((fid, rho))
    }

    /// Sampled `Tr(rho(t) F+)` with free evolution and T2 between points.
    pub fn acquire(&self, rho: &DensityState, n_points: usize, dwell: f64) -> Result<Vec<Complex64>> {
        if self.full.vectors.is_none() {
            return Ok(acquire_diagonal(rho, self.sys, &self.full.energies, n_points, dwell));
        }
        let u = self.full.propagator(dwell);
        let mut out = Vec::with_capacity(n_points);
        let mut rho = rho.clone();
        for k in 0..n_points {
            if k > 0 {
                rho = spin::apply_t2_decay(&spin::evolve(&rho, &u)?, self.sys, dwell)?;
            }
            out.push(spin::detect(&rho));
        }
        Ok(out)
    }
}

/// Closed form for a diagonal Hamiltonian: every detected element evolves as
/// an independent damped exponential, identical to point-wise stepping.
fn acquire_diagonal(
    rho: &DensityState,
    sys: &SpinSystem,
    energies: &[f64],
    n_points: usize,
    dwell: f64,
) -> Vec<Complex64> {
    let n = sys.n_spins();
    let d = rho.dim();
    let mut lines = Vec::new();
    for a in 0..d {
        for i in 0..n {
            let b = 1usize << (n - 1 - i);
            if a & b != 0 {
                let amp = rho.matrix()[(a, a ^ b)];
                if amp != Complex64::new(0.0, 0.0) {
                    let omega = energies[a] - energies[a ^ b];
                    lines.push((amp, omega, spin::t2_rate(sys, a, a ^ b)));
                }
            }
        }
    }
    (0..n_points)
        .map(|k| {
            let t = k as f64 * dwell;
            lines
                .iter()
                .map(|&(amp, omega, rate)| amp * Complex64::from_polar((-rate * t).exp(), -omega * t))
                .sum()
        })
        .collect()
}

/// Single transient from equilibrium.
pub fn run_scan(
    program: &ResolvedProgram,
    sys: &SpinSystem,
    relaxation: &RelaxationMatrix,
    phase: ScanPhase,
) -> Result<Vec<Complex64>> {
    let kernel = Kernel::new(sys, relaxation)?;
    let (fid, _) = kernel.transient(program, DensityState::equilibrium(sys.n_spins()), phase)?;
    Ok(fid)
}

/// Inter-scan recovery model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recovery {
    /// Every transient starts from equilibrium.
    #[default]
    Complete,
    /// Longitudinal magnetization left after the read pulse recovers by the
    /// Solomon equations over acquisition plus relaxation delay; coherences
    /// are assumed spoiled.
    Solomon,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AcquisitionParams {
    pub n_t1: usize,
    /// Encoded t1 span in seconds.
    pub t1_max: f64,
    pub n_t2: usize,
    pub t2_max: f64,
    pub n_scans: usize,
    pub relaxation_delay: f64,
    /// Proton frequency in MHz; only used for ppm axes.
    pub spectrometer_freq: f64,
    #[serde(default)]
    pub recovery: Recovery,
}

impl Default for AcquisitionParams {
    fn default() -> Self {
        Self {
            n_t1: 50,
            t1_max: 0.05,
            n_t2: 250,
            t2_max: 0.25,
            n_scans: 8,
            relaxation_delay: 1.35,
            spectrometer_freq: 800.0,
            recovery: Recovery::Complete,
        }
    }
}

impl AcquisitionParams {
    pub fn dw1(&self) -> f64 {
        self.t1_max / self.n_t1 as f64
    }

    pub fn dw2(&self) -> f64 {
        self.t2_max / self.n_t2 as f64
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidAcquisition(m.into()));
        if self.n_t1 == 0 || self.n_t2 == 0 {
            return bad("point counts must be positive");
        }
        if !(self.t1_max.is_finite() && self.t1_max > 0.0 && self.t2_max.is_finite() && self.t2_max > 0.0) {
            return bad("acquisition times must be positive");
        }
        if self.n_scans == 0 || self.n_scans % 8 != 0 {
            return bad("scan count must be a positive multiple of 8");
        }
        if !(self.relaxation_delay.is_finite() && self.relaxation_delay >= 0.0) {
            return bad("relaxation delay must be non-negative");
        }
        Ok(())
    }
}

/// Hypercomplex States data: for each t1 a cosine and a sine FID.
#[derive(Clone, Debug, PartialEq)]
pub struct Raw2D {
    pub kind: SequenceKind,
    pub n_t1: usize,
    pub n_t2: usize,
    /// Encoded t1 increment.
    pub dw1: f64,
    pub dw2: f64,
    pub spectrometer_freq: f64,
    pub cos: Vec<Vec<Complex64>>,
    pub sin: Vec<Vec<Complex64>>,
    pub transients: usize,
}

impl Raw2D {
    /// Sum of squared magnitudes over both components.
    pub fn energy(&self) -> f64 {
        self.cos
            .iter()
            .chain(&self.sin)
            .flatten()
            .map(|z| z.norm_sqr())
            .sum()
    }

    pub fn max_abs_difference(&self, other: &Raw2D) -> f64 {
        self.cos
            .iter()
            .chain(&self.sin)
            .flatten()
            .zip(other.cos.iter().chain(&other.sin).flatten())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }
}

/// States component and TPPI increment for t1 index `k`.
pub fn states_tppi_phase(k: usize, sine: bool) -> (u8, u8) {
    let tppi = if k % 2 == 1 { 2 } else { 0 };
    (tppi + u8::from(sine), tppi)
}

/// Accumulate `n_scans` phase-cycled transients for one (t1, component) pair.
pub fn accumulate(
    kernel: &Kernel<'_>,
    program: &ResolvedProgram,
    acq: &AcquisitionParams,
    block_shift: u8,
    receiver_shift: u8,
    counter: &AtomicUsize,
) -> Result<Vec<Complex64>> {
    let n = kernel.system().n_spins();
    let r = kernel.relaxation;
    let eq = DensityState::equilibrium(n);
    let mut sum = vec![Complex64::new(0.0, 0.0); acq.n_t2];
    let mut start = eq.clone();
    for scan in 0..acq.n_scans {
        let phase = ScanPhase {
            scan,
            block_shift,
            receiver_shift,
        };
        let (fid, rho) = kernel.transient(program, start, phase)?;
        counter.fetch_add(1, Ordering::Relaxed);
        for (s, v) in sum.iter_mut().zip(fid) {
            *s += v;
        }
        start = match acq.recovery {
            Recovery::Complete => eq.clone(),
            Recovery::Solomon => {
                // z left by the read pulse, then T1 recovery towards 1
                let dev: Vec<f64> = rho.z_magnetizations().iter().map(|m| m - 1.0).collect();
                let rec = relax::solomon_evolve(&dev, r, acq.t2_max + acq.relaxation_delay)?;
                DensityState::longitudinal(&rec.iter().map(|v| v + 1.0).collect::<Vec<_>>())
            }
        };
    }
    Ok(sum)
}

/// Full States-TPPI 2D acquisition. Transients run in parallel per
/// (t1, component) pair; scans within a pair are summed in order, so the
/// result does not depend on the thread count.
pub fn run_2d(
    program: &PulseProgram,
    sys: &SpinSystem,
    relaxation: &RelaxationMatrix,
    acq: &AcquisitionParams,
) -> Result<Raw2D> {
    acq.validate()?;
    program.validate()?;
    if acq.n_scans % program.cycle_length() != 0 {
        return Err(Error::InvalidAcquisition(format!(
            "{} scans do not complete the {}-step phase cycle",
            acq.n_scans,
            program.cycle_length()
        )));
    }
    let kernel = Kernel::new(sys, relaxation)?;
    let (dw1, dw2) = (acq.dw1(), acq.dw2());
    let resolved = (0..acq.n_t1)
        .map(|k| Ok(resolve_t1(program, k as f64 * dw1)?.with_acquisition(acq.n_t2, dw2)))
        .collect::<Result<Vec<_>>>()?;
    let counter = AtomicUsize::new(0);
    let fids = (0..2 * acq.n_t1)
        .into_par_iter()
        .map(|job| {
            let (k, sine) = (job / 2, job % 2 == 1);
            let (block, rx) = states_tppi_phase(k, sine);
            accumulate(&kernel, &resolved[k], acq, block, rx, &counter)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cos = Vec::with_capacity(acq.n_t1);
    let mut sin = Vec::with_capacity(acq.n_t1);
    for (job, fid) in fids.into_iter().enumerate() {
        if job % 2 == 0 {
            cos.push(fid);
        } else {
            sin.push(fid);
        }
    }
    Ok(Raw2D {
        kind: program.kind,
        n_t1: acq.n_t1,
        n_t2: acq.n_t2,
        dw1,
        dw2,
        spectrometer_freq: acq.spectrometer_freq,
        cos,
        sin,
        transients: counter.into_inner(),
    })
}
