//! Brute-force reference integrator.
//!
//! Builds its own operators from Kronecker products and its own matrix
//! exponential, then multiplies piecewise-constant step propagators over a
//! timeline that may contain time-dependent RF. Nothing here calls the
//! propagator code in [`crate::spin`], which is what makes it useful as a
//! cross-check.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::relax::{ChirpSpec, ZqFilterSpec};
use crate::spin::{CouplingModel, DensityState, SpinSystem};

type M = DMatrix<Complex64>;

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Default convergence gate on step halving (Frobenius norm).
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Steps per period of the fastest frequency present.
pub const STEPS_PER_PERIOD: f64 = 50.0;

fn kron_chain(n: usize, spin: usize, op: &M) -> M {
    let eye = M::identity(2, 2);
    let mut out = M::from_element(1, 1, C1);
    for i in 0..n {
        out = out.kronecker(if i == spin { op } else { &eye });
    }
    out
}

/// Spin operators of an `n`-spin system built from 2x2 matrices.
struct Operators {
    x: Vec<M>,
    y: Vec<M>,
    z: Vec<M>,
}

impl Operators {
    fn new(n: usize) -> Self {
        let sx = M::from_row_slice(2, 2, &[C0, C1 * 0.5, C1 * 0.5, C0]);
        let sy = M::from_row_slice(
            2,
            2,
            &[C0, Complex64::new(0.0, -0.5), Complex64::new(0.0, 0.5), C0],
        );
        let sz = M::from_row_slice(2, 2, &[C1 * 0.5, C0, C0, C1 * -0.5]);
        Self {
            x: (0..n).map(|i| kron_chain(n, i, &sx)).collect(),
            y: (0..n).map(|i| kron_chain(n, i, &sy)).collect(),
            z: (0..n).map(|i| kron_chain(n, i, &sz)).collect(),
        }
    }

    fn sum(ops: &[M]) -> M {
        let d = ops[0].nrows();
        ops.iter().fold(M::zeros(d, d), |acc, o| acc + o)
    }

    /// Static Hamiltonian in rad/s, plus a common `offset` (Hz) on every spin.
    fn hamiltonian(&self, sys: &SpinSystem, offset: f64) -> M {
        let n = sys.n_spins();
        let d = self.z[0].nrows();
        let mut h = M::zeros(d, d);
        let w = |hz: f64| Complex64::new(2.0 * PI * hz, 0.0);
        for i in 0..n {
            h += &self.z[i] * w(sys.shift(i) + offset);
            for j in (i + 1)..n {
                let jij = sys.coupling(i, j);
                if jij == 0.0 {
                    continue;
                }
                h += &self.z[i] * &self.z[j] * w(jij);
                if sys.coupling_model() == CouplingModel::Strong {
                    h += (&self.x[i] * &self.x[j] + &self.y[i] * &self.y[j]) * w(jij);
                }
            }
        }
        h
    }

    /// `2 pi a (Fx cos phi + Fy sin phi)`.
    fn rf(&self, amplitude_hz: f64, phase_rad: f64) -> M {
        let fx = Self::sum(&self.x);
        let fy = Self::sum(&self.y);
        (fx * Complex64::new(phase_rad.cos(), 0.0) + fy * Complex64::new(phase_rad.sin(), 0.0))
            * Complex64::new(2.0 * PI * amplitude_hz, 0.0)
    }
}

fn one_norm(a: &M) -> f64 {
    (0..a.ncols())
        .map(|c| a.column(c).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `exp(a)` by Taylor series with scaling and squaring.
pub fn expm(a: &M) -> M {
    let d = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a * Complex64::new(0.5f64.powi(squarings), 0.0);
    let mut sum = M::identity(d, d);
    let mut term = M::identity(d, d);
    for k in 1..=30 {
        term = &term * &scaled * Complex64::new(1.0 / k as f64, 0.0);
        sum += &term;
        if one_norm(&term) < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

fn unitary(h: &M, dt: f64) -> M {
    expm(&(h * Complex64::new(0.0, -dt)))
}

/// A time-dependent RF segment in the carrier frame.
#[derive(Clone)]
pub struct RfSegment {
    pub duration: f64,
    /// Amplitude (Hz) at time `t` into the segment.
    pub amplitude: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Phase (rad) at time `t` into the segment.
    pub phase: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    /// Bound on the RF amplitude and on the instantaneous frequency (Hz).
    pub max_frequency: f64,
    /// Common offset (Hz) on every spin, e.g. from a gradient.
    pub offset: f64,
}

impl fmt::Debug for RfSegment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RfSegment")
            .field("duration", &self.duration)
            .field("max_frequency", &self.max_frequency)
            .field("offset", &self.offset)
            .finish_non_exhaustive()
    }
}

impl RfSegment {
    /// Constant-amplitude, constant-phase rectangular pulse.
    pub fn rectangular(duration: f64, amplitude_hz: f64, phase_rad: f64) -> Self {
        Self {
            duration,
            amplitude: Arc::new(move |_| amplitude_hz),
            phase: Arc::new(move |_| phase_rad),
            max_frequency: amplitude_hz.abs(),
            offset: 0.0,
        }
    }

    /// Linear chirp with the same sweep, amplitude envelope and phase
    /// quadrant as the engine's, seen by a slice at `offset`.
    pub fn chirp(chirp: &ChirpSpec, offset: f64, quadrant: u8) -> Self {
        let c = chirp.clone();
        let (sw, tau) = (chirp.sweep_width, chirp.duration);
        let base = f64::from(quadrant % 4) * PI / 2.0;
        Self {
            duration: tau,
            amplitude: Arc::new(move |t| c.amplitude(t)),
            // 2 pi times the integral of sw (t / tau - 1/2)
            phase: Arc::new(move |t| base + 2.0 * PI * sw * (t * t / (2.0 * tau) - t / 2.0)),
            max_frequency: (sw / 2.0).max(chirp.rf_field),
            offset,
        }
    }
}

#[derive(Clone, Debug)]
pub enum OracleEvent {
    /// Instantaneous rotation about an axis at `phase_deg` in the xy-plane.
    Rotation { flip_deg: f64, phase_deg: f64 },
    Free { duration: f64, offset: f64 },
    Rf(RfSegment),
}

impl OracleEvent {
    pub fn free(duration: f64) -> Self {
        OracleEvent::Free { duration, offset: 0.0 }
    }

    pub fn rotation(flip_deg: f64, phase_deg: f64) -> Self {
        OracleEvent::Rotation { flip_deg, phase_deg }
    }

    fn duration(&self) -> f64 {
        match self {
            OracleEvent::Rotation { .. } => 0.0,
            OracleEvent::Free { duration, .. } => *duration,
            OracleEvent::Rf(s) => s.duration,
        }
    }
}

/// Fastest frequency (Hz) in the timeline: shifts, couplings, offsets and RF.
pub fn max_frequency(sys: &SpinSystem, timeline: &[OracleEvent]) -> f64 {
    let n = sys.n_spins();
    let mut j = 0.0;
    for i in 0..n {
        for k in (i + 1)..n {
            j += sys.coupling(i, k).abs();
        }
    }
    let shift = (0..n).map(|i| sys.shift(i).abs()).fold(0.0, f64::max);
    let extra = timeline
        .iter()
        .map(|e| match e {
            OracleEvent::Rotation { .. } => 0.0,
            OracleEvent::Free { offset, .. } => offset.abs(),
            OracleEvent::Rf(s) => s.max_frequency + s.offset.abs(),
        })
        .fold(0.0, f64::max);
    shift + j + extra
}

/// Largest admissible step for the timeline.
pub fn step_limit(sys: &SpinSystem, timeline: &[OracleEvent]) -> f64 {
    let f = max_frequency(sys, timeline);
    if f == 0.0 {
        f64::INFINITY
    } else {
        1.0 / (STEPS_PER_PERIOD * f)
    }
}

fn event_propagator(ops: &Operators, sys: &SpinSystem, e: &OracleEvent, step: f64) -> Result<M> {
    let d = ops.z[0].nrows();
    let dur = e.duration();
    if !(dur.is_finite() && dur >= 0.0) {
        return Err(Error::NegativeDuration(dur));
    }
    Ok(match e {
        OracleEvent::Rotation { flip_deg, phase_deg } => {
            // exp(-i theta (Fx cos phi + Fy sin phi)) as an RF of unit length
            let a = ops.rf(flip_deg / 360.0, phase_deg.to_radians());
            unitary(&a, 1.0)
        }
        OracleEvent::Free { duration, offset } => {
            let h = ops.hamiltonian(sys, *offset);
            let steps = (duration / step).ceil().max(1.0) as usize;
            let u = unitary(&h, duration / steps as f64);
            let mut out = M::identity(d, d);
            for _ in 0..steps {
                out = &u * out;
            }
            out
        }
        OracleEvent::Rf(s) => {
            let h0 = ops.hamiltonian(sys, s.offset);
            let steps = (s.duration / step).ceil().max(1.0) as usize;
            let dt = s.duration / steps as f64;
            let mut out = M::identity(d, d);
            for k in 0..steps {
                let t = (k as f64 + 0.5) * dt;
                let h = &h0 + ops.rf((s.amplitude)(t), (s.phase)(t));
                out = unitary(&h, dt) * out;
            }
            out
        }
    })
}

/// Total propagator of a timeline at a fixed step. Events are integrated in
/// parallel and composed in order.
pub fn timeline_propagator(sys: &SpinSystem, timeline: &[OracleEvent], step: f64) -> Result<M> {
    let limit = step_limit(sys, timeline);
    if !(step.is_finite() && step > 0.0) || step > limit {
        return Err(Error::StepTooLarge { step, limit });
    }
    let ops = Operators::new(sys.n_spins());
    let parts = timeline
        .par_iter()
        .map(|e| event_propagator(&ops, sys, e, step))
        .collect::<Result<Vec<_>>>()?;
    let d = sys.dim();
    Ok(parts.into_iter().fold(M::identity(d, d), |acc, u| u * acc))
}

fn apply(u: &M, rho: &DensityState) -> Result<DensityState> {
    DensityState::new(u * rho.matrix() * u.adjoint(), rho.n_spins())
}

/// Single pass without the convergence gate.
pub fn integrate_fixed(
    sys: &SpinSystem,
    timeline: &[OracleEvent],
    initial: &DensityState,
    step: f64,
) -> Result<DensityState> {
    apply(&timeline_propagator(sys, timeline, step)?, initial)
}

/// Integrate at `step` and `step / 2`; the half-step result is returned when
/// the two differ by less than `tolerance` (Frobenius).
pub fn integrate_with_tolerance(
    sys: &SpinSystem,
    timeline: &[OracleEvent],
    initial: &DensityState,
    step: f64,
    tolerance: f64,
) -> Result<DensityState> {
    let coarse = integrate_fixed(sys, timeline, initial, step)?;
    let fine = integrate_fixed(sys, timeline, initial, step / 2.0)?;
    let change = coarse.distance(&fine);
    if change < tolerance {
        Ok(fine)
    } else {
        Err(Error::NotConverged(change))
    }
}

pub fn integrate(
    sys: &SpinSystem,
    timeline: &[OracleEvent],
    initial: &DensityState,
    step: f64,
) -> Result<DensityState> {
    integrate_with_tolerance(sys, timeline, initial, step, DEFAULT_TOLERANCE)
}

/// Slice average of the full chirp seen at each filter slice offset,
/// integrated at a fixed step. Slices run in parallel and are summed in order.
pub fn zq_filter_average(
    sys: &SpinSystem,
    state: &DensityState,
    filter: &ZqFilterSpec,
    step: f64,
) -> Result<DensityState> {
    filter.validate()?;
    let n = filter.chirp.n_slices;
    let parts = (0..n)
        .into_par_iter()
        .map(|k| {
            let seg = OracleEvent::Rf(RfSegment::chirp(&filter.chirp, filter.slice_offset(k), filter.phase));
            integrate_fixed(sys, std::slice::from_ref(&seg), state, step)
        })
        .collect::<Result<Vec<_>>>()?;
    let d = sys.dim();
    let sum = parts.iter().fold(M::zeros(d, d), |acc, p| acc + p.matrix());
    DensityState::new(sum / Complex64::new(n as f64, 0.0), sys.n_spins())
}

/// Largest step the limit rule allows for the filter chirp on `sys`.
pub fn zq_filter_step_limit(sys: &SpinSystem, filter: &ZqFilterSpec) -> f64 {
    (0..filter.chirp.n_slices)
        .map(|k| {
            let seg = OracleEvent::Rf(RfSegment::chirp(&filter.chirp, filter.slice_offset(k), filter.phase));
            step_limit(sys, std::slice::from_ref(&seg))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Equilibrium density operator built from the oracle's own operators.
pub fn equilibrium(n_spins: usize) -> Result<DensityState> {
    DensityState::new(Operators::sum(&Operators::new(n_spins).z), n_spins)
}
