//! Mixing-period physics: Solomon cross-relaxation of longitudinal
//! magnetization, zero-quantum evolution, and the swept-chirp plus gradient
//! zero-quantum filter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spin::{
    self, apply_t2_decay, evolve, free_propagator, ops, rotation_propagator, CMatrix,
    DensityState, Propagator, SpinSystem,
};

/// Auto- (diagonal) and cross-relaxation (off-diagonal) rates in 1/s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelaxationMatrix {
    auto_rates: Vec<f64>,
    cross_rates: Vec<Vec<f64>>,
}

impl RelaxationMatrix {
    pub fn new(auto_rates: Vec<f64>, cross_rates: Vec<Vec<f64>>) -> Result<Self> {
        let n = auto_rates.len();
        if cross_rates.len() != n || cross_rates.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidRelaxation(format!("cross rates must be {n}x{n}")));
        }
        if auto_rates.iter().any(|r| !r.is_finite() || *r < 0.0) {
            return Err(Error::InvalidRelaxation("auto rates must be finite and >= 0".into()));
        }
        for i in 0..n {
            if cross_rates[i][i] != 0.0 {
                return Err(Error::InvalidRelaxation(format!(
                    "cross rate on the diagonal for spin {}",
                    i + 1
                )));
            }
            for j in 0..n {
                if !cross_rates[i][j].is_finite() || cross_rates[i][j] != cross_rates[j][i] {
                    return Err(Error::InvalidRelaxation("cross rates must be symmetric".into()));
                }
            }
        }
        Ok(Self {
            auto_rates,
            cross_rates,
        })
    }

    /// No relaxation at all.
    pub fn zero(n_spins: usize) -> Self {
        Self {
            auto_rates: vec![0.0; n_spins],
            cross_rates: vec![vec![0.0; n_spins]; n_spins],
        }
    }

    /// Uniform auto rate plus pairwise cross rates `(i, j, sigma)`.
    pub fn from_pairs(auto_rate: f64, n_spins: usize, pairs: &[(usize, usize, f64)]) -> Result<Self> {
        let mut cross = vec![vec![0.0; n_spins]; n_spins];
        for &(i, j, s) in pairs {
            if i >= n_spins || j >= n_spins {
                return Err(Error::InvalidRelaxation(format!("pair ({i}, {j}) out of range")));
            }
            cross[i][j] = s;
            cross[j][i] = s;
        }
        Self::new(vec![auto_rate; n_spins], cross)
    }

    pub fn n_spins(&self) -> usize {
        self.auto_rates.len()
    }

    pub fn auto_rate(&self, i: usize) -> f64 {
        self.auto_rates[i]
    }

    pub fn auto_rates(&self) -> &[f64] {
        &self.auto_rates
    }

    pub fn cross_rate(&self, i: usize, j: usize) -> f64 {
        self.cross_rates[i][j]
    }

    pub fn cross_rates(&self) -> &[Vec<f64>] {
        &self.cross_rates
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.n_spins();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                self.auto_rates[i]
            } else {
                self.cross_rates[i][j]
            }
        })
    }
}

/// `exp(-R dur) m` for a deviation vector `m`.
pub fn solomon_evolve(m: &[f64], r: &RelaxationMatrix, dur: f64) -> Result<Vec<f64>> {
    spin::check_duration(dur)?;
    if m.len() != r.n_spins() {
        return Err(Error::DimensionMismatch {
            expected: r.n_spins(),
            got: m.len(),
        });
    }
    if dur == 0.0 {
        return Ok(m.to_vec());
    }
    let eig = r.matrix().symmetric_eigen();
    let v = &eig.eigenvectors;
    let decay = DVector::from_iterator(m.len(), eig.eigenvalues.iter().map(|l| (-l * dur).exp()));
    let coeffs = v.transpose() * DVector::from_column_slice(m);
    let out = v * coeffs.component_mul(&decay);
    Ok(out.iter().copied().collect())
}

/// Free evolution of the p = 0 block over `dur`. Input outside p = 0 is
/// discarded.
pub fn zq_evolve(state: &DensityState, sys: &SpinSystem, dur: f64) -> Result<DensityState> {
    evolve(&state.p0(), &free_propagator(sys, dur)?)
}

/// Swept-frequency inversion pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChirpSpec {
    /// Total sweep (Hz), centred on the carrier.
    pub sweep_width: f64,
    /// Pulse length tau_f (s).
    pub duration: f64,
    /// Peak RF amplitude (Hz).
    pub rf_field: f64,
    /// Fraction of the pulse at each end over which the amplitude ramps.
    pub smoothing_fraction: f64,
    /// Number of z-slices in the sample ensemble.
    pub n_slices: usize,
}

impl ChirpSpec {
    pub const STANDARD_SWEEP_HZ: f64 = 26_000.0;
    pub const STANDARD_DURATION_S: f64 = 0.016;
    pub const STANDARD_RF_HZ: f64 = 1_100.0;

    pub fn new(sweep_width: f64, duration: f64, rf_field: f64) -> Self {
        Self {
            sweep_width,
            duration,
            rf_field,
            smoothing_fraction: 0.1,
            n_slices: 64,
        }
    }

    /// 26 kHz sweep in 16 ms at 1.1 kHz, 64 slices.
    pub fn standard() -> Self {
        Self::new(Self::STANDARD_SWEEP_HZ, Self::STANDARD_DURATION_S, Self::STANDARD_RF_HZ)
    }

    pub fn with_slices(mut self, n: usize) -> Self {
        self.n_slices = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_slices == 0 {
            return Err(Error::InvalidFilter("n_slices must be >= 1".into()));
        }
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.sweep_width) || !positive(self.duration) || !positive(self.rf_field) {
            return Err(Error::InvalidFilter(
                "sweep width, duration and rf field must be > 0".into(),
            ));
        }
        if !(0.0..=0.5).contains(&self.smoothing_fraction) {
            return Err(Error::InvalidFilter("smoothing fraction must be in [0, 0.5]".into()));
        }
        if self.band_fraction() <= 0.0 {
            return Err(Error::InvalidFilter(
                "sweep too narrow for its rf field and smoothing".into(),
            ));
        }
        Ok(())
    }

    /// Fraction of the sweep occupied by the slice ensemble: the sweep minus
    /// the amplitude ramps and one RF-field width at each edge, where the
    /// passage is not yet adiabatic.
    pub fn band_fraction(&self) -> f64 {
        1.0 - 2.0 * (self.smoothing_fraction + self.rf_field / self.sweep_width)
    }

    /// Instantaneous sweep frequency (Hz) at time `t` into the pulse.
    pub fn frequency(&self, t: f64) -> f64 {
        self.sweep_width * (t / self.duration - 0.5)
    }

    /// RF amplitude (Hz) with quarter-sine ramps at both ends.
    pub fn amplitude(&self, t: f64) -> f64 {
        let ramp = self.smoothing_fraction * self.duration;
        if ramp <= 0.0 {
            return self.rf_field;
        }
        let edge = t.min(self.duration - t).max(0.0);
        if edge >= ramp {
            self.rf_field
        } else {
            self.rf_field * (0.5 * PI * edge / ramp).sin()
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    /// Instantaneous inversion at the slice's resonance time.
    #[default]
    IdealSlices,
    /// Step-wise integration of the chirp Hamiltonian for each slice.
    FullChirp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZqFilterSpec {
    pub chirp: ChirpSpec,
    /// Gradient strength in the pulse program's relative units; 0 disables
    /// the spatial encoding.
    pub gradient_g1: f64,
    pub mode: FilterMode,
    /// RF phase quadrant of the chirp (and of the bookkeeping inversion).
    #[serde(default)]
    pub phase: u8,
}

impl ZqFilterSpec {
    /// Chirp of 26 kHz / 16 ms / 1.1 kHz with G1 = 4.
    pub fn standard() -> Self {
        Self {
            chirp: ChirpSpec::standard(),
            gradient_g1: 4.0,
            mode: FilterMode::IdealSlices,
            phase: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.chirp.validate()?;
        if !self.gradient_g1.is_finite() || self.gradient_g1 < 0.0 {
            return Err(Error::InvalidFilter("gradient must be >= 0".into()));
        }
        Ok(())
    }

    /// Fractional position of slice `k` in (-1/2, 1/2).
    pub fn slice_position(&self, k: usize) -> f64 {
        (k as f64 + 0.5) / self.chirp.n_slices as f64 - 0.5
    }

    /// Common offset (Hz) the gradient adds to every spin in slice `k`.
    /// The gradient spreads the slices across the usable band of the sweep.
    pub fn slice_offset(&self, k: usize) -> f64 {
        if self.gradient_g1 == 0.0 {
            0.0
        } else {
            self.chirp.sweep_width * self.chirp.band_fraction() * self.slice_position(k)
        }
    }

    /// Time at which the sweep passes through slice `k`.
    pub fn inversion_time(&self, k: usize) -> f64 {
        if self.gradient_g1 == 0.0 {
            0.5 * self.chirp.duration
        } else {
            self.chirp.duration * (0.5 + self.chirp.band_fraction() * self.slice_position(k))
        }
    }
}

/// Propagator of one slice of the ensemble, including the gradient offset.
pub fn slice_propagator(sys: &SpinSystem, f: &ZqFilterSpec, k: usize) -> Result<Propagator> {
    let n = sys.n_spins();
    let offset = f.slice_offset(k);
    let fz = |dur: f64| offset_propagator(n, offset, dur);
    match f.mode {
        FilterMode::IdealSlices => {
            let t = f.inversion_time(k);
            let before = free_propagator(sys, t)?.then(&fz(t));
            let after = free_propagator(sys, f.chirp.duration - t)?.then(&fz(f.chirp.duration - t));
            let (c, s) = spin::quadrant_cos_sin(f.phase);
            Ok(before.then(&rotation_propagator(n, 180.0, c, s)).then(&after))
        }
        FilterMode::FullChirp => full_chirp_propagator(sys, &f.chirp, offset, f.phase),
    }
}

/// `exp(-i 2 pi offset F_z dur)`, diagonal.
fn offset_propagator(n_spins: usize, offset_hz: f64, dur: f64) -> Propagator {
    let d = ops::dim(n_spins);
    Propagator::from_matrix(CMatrix::from_fn(d, d, |r, c| {
        if r == c {
            let m = ops::twice_total_m(n_spins, r) as f64 * 0.5;
            Complex64::from_polar(1.0, -2.0 * PI * offset_hz * m * dur)
        } else {
            Complex64::new(0.0, 0.0)
        }
    }))
}

/// Number of integration steps used for one chirp.
pub fn chirp_steps(sys: &SpinSystem, chirp: &ChirpSpec) -> usize {
    let fmax = 0.5 * chirp.sweep_width + sys.max_frequency() + chirp.rf_field;
    ((chirp.duration * fmax * 40.0).ceil() as usize).max(2000)
}

/// Integrates the chirp in the frame that follows the sweep. The system
/// Hamiltonian commutes with F_z, so each step factors into the static
/// evolution, a diagonal frame term and the RF rotation (symmetric splitting).
/// The sweep is symmetric about the carrier, so the frame phase is zero at
/// both ends and no final frame correction is needed.
fn full_chirp_propagator(sys: &SpinSystem, chirp: &ChirpSpec, offset: f64, phase: u8) -> Result<Propagator> {
    let (cos_phi, sin_phi) = spin::quadrant_cos_sin(phase);
    let n = sys.n_spins();
    let steps = chirp_steps(sys, chirp);
    let dt = chirp.duration / steps as f64;
    let half_static = free_propagator(sys, 0.5 * dt)?;
    let mut u = Propagator::identity(sys.dim());
    for s in 0..steps {
        let t = (s as f64 + 0.5) * dt;
        let detuning = offset - chirp.frequency(t);
        let half = half_static.then(&offset_propagator(n, detuning, 0.5 * dt));
        let flip_deg = 360.0 * chirp.amplitude(t) * dt;
        let rf = rotation_propagator(n, flip_deg, cos_phi, sin_phi);
        u = u.then(&half).then(&rf).then(&half);
    }
    Ok(u)
}

/// Ensemble average over z-slices of the chirp-plus-gradient element.
/// Slices are evaluated in parallel and summed in slice order.
pub fn apply_zq_filter(state: &DensityState, sys: &SpinSystem, f: &ZqFilterSpec) -> Result<DensityState> {
    f.validate()?;
    let n = f.chirp.n_slices;
    let parts: Vec<DensityState> = (0..n)
        .into_par_iter()
        .map(|k| evolve(state, &slice_propagator(sys, f, k)?))
        .collect::<Result<_>>()?;
    let mut acc = DensityState::zeros(state.n_spins());
    for p in &parts {
        acc = acc.add(p);
    }
    Ok(acc.scaled(1.0 / n as f64))
}

/// Fraction of zero-quantum Frobenius norm that survives the filter.
pub fn zq_residual(state: &DensityState, sys: &SpinSystem, f: &ZqFilterSpec) -> Result<f64> {
    let before = state.zero_quantum().norm();
    if before == 0.0 {
        return Ok(0.0);
    }
    Ok(apply_zq_filter(state, sys, f)?.zero_quantum().norm() / before)
}

/// The complete mixing element.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixingSpec {
    pub tau_m: f64,
    /// `None` defers to the sample's relaxation matrix at run time.
    #[serde(default)]
    pub relaxation: Option<RelaxationMatrix>,
    #[serde(default)]
    pub zq_filter: Option<ZqFilterSpec>,
    /// Ideal coherence-order purge (homospoil gradients) at both ends.
    #[serde(default)]
    pub purge: bool,
}

impl MixingSpec {
    pub fn new(tau_m: f64) -> Self {
        Self {
            tau_m,
            relaxation: None,
            zq_filter: None,
            purge: false,
        }
    }

    pub fn with_filter(mut self, f: ZqFilterSpec) -> Self {
        self.zq_filter = Some(f);
        self
    }

    pub fn with_purge(mut self, purge: bool) -> Self {
        self.purge = purge;
        self
    }

    pub fn with_relaxation(mut self, r: RelaxationMatrix) -> Self {
        self.relaxation = Some(r);
        self
    }

    pub fn validate(&self) -> Result<()> {
        spin::check_duration(self.tau_m)?;
        if let Some(f) = &self.zq_filter {
            f.validate()?;
            if f.chirp.duration > self.tau_m {
                return Err(Error::ChirpLongerThanMixing {
                    chirp: f.chirp.duration,
                    mixing: self.tau_m,
                });
            }
        }
        Ok(())
    }
}

fn z_order_operator(n: usize, mask: usize, state: usize) -> f64 {
    // 2^(k-1) prod_{i in mask} m_i
    let k = mask.count_ones() as i32;
    let mut v = 2f64.powi(k - 1);
    for i in 0..n {
        if mask & ops::bit(n, i) != 0 {
            v *= ops::m_of(n, state, i);
        }
    }
    v
}

/// Longitudinal relaxation of the diagonal part: single-spin terms follow the
/// Solomon equations with recovery towards equilibrium, multi-spin order
/// decays with the sum of the involved auto rates.
fn relax_populations(pops: &DensityState, r: &RelaxationMatrix, dur: f64) -> Result<DensityState> {
    let n = pops.n_spins();
    let d = pops.dim();
    let diag: Vec<f64> = (0..d).map(|s| pops.matrix()[(s, s)].re).collect();
    let norm = d as f64 / 4.0; // Tr(Z_S^2) = 2^N / 4 for every S
    let trace_part = diag.iter().sum::<f64>() / d as f64;

    let single_mask = |i: usize| ops::bit(n, i);
    let coeff = |mask: usize| -> f64 {
        (0..d).map(|s| diag[s] * z_order_operator(n, mask, s)).sum::<f64>() / norm
    };

    let m: Vec<f64> = (0..n).map(|i| coeff(single_mask(i))).collect();
    let deviation: Vec<f64> = m.iter().map(|v| v - 1.0).collect();
    let relaxed: Vec<f64> = solomon_evolve(&deviation, r, dur)?
        .into_iter()
        .map(|v| v + 1.0)
        .collect();

    let mut out = vec![trace_part; d];
    for mask in 1..d {
        let c = if mask.count_ones() == 1 {
            let i = (0..n).find(|&i| single_mask(i) == mask).expect("single bit");
            relaxed[i]
        } else {
            let rate: f64 = (0..n)
                .filter(|&i| mask & ops::bit(n, i) != 0)
                .map(|i| r.auto_rate(i))
                .sum();
            coeff(mask) * (-rate * dur).exp()
        };
        if c != 0.0 {
            for (s, o) in out.iter_mut().enumerate() {
                *o += c * z_order_operator(n, mask, s);
            }
        }
    }
    let matrix = CMatrix::from_fn(d, d, |r, c| {
        if r == c {
            Complex64::new(out[r], 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    DensityState::new(matrix, n)
}

/// Purge, Solomon relaxation of populations, free evolution and decay of the
/// remaining coherences (zero-quantum decay follows the pairwise T2 rule),
/// and the optional filter occupying the final tau_f. The filter's population
/// inversion is undone by an ideal 180 so the z-bookkeeping is sign-stable.
pub fn mixing_period(state: &DensityState, sys: &SpinSystem, m: &MixingSpec) -> Result<DensityState> {
    m.validate()?;
    let n = sys.n_spins();
    let zero;
    let r = match &m.relaxation {
        Some(r) => {
            if r.n_spins() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.n_spins(),
                });
            }
            r
        }
        None => {
            zero = RelaxationMatrix::zero(n);
            &zero
        }
    };
    let rho = if m.purge { state.p0() } else { state.clone() };
    let pops = rho.populations();
    let coherences = rho.sub(&pops);

    let pops = relax_populations(&pops, r, m.tau_m)?;

    let filter_time = m.zq_filter.as_ref().map_or(0.0, |f| f.chirp.duration);
    let plain = m.tau_m - filter_time;
    let mut coh = evolve(&coherences, &free_propagator(sys, plain)?)?;
    coh = apply_t2_decay(&coh, sys, plain)?;
    if let Some(f) = &m.zq_filter {
        coh = apply_zq_filter(&coh, sys, f)?;
        coh = apply_t2_decay(&coh, sys, f.chirp.duration)?;
        let (c, s) = spin::quadrant_cos_sin(f.phase);
        coh = evolve(&coh, &rotation_propagator(n, 180.0, c, s))?;
    }
    let out = pops.add(&coh);
    Ok(if m.purge { out.p0() } else { out })
}
