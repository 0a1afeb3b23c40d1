//! Comparison harness: run both sequences on one sample with one axis set,
//! process identically and report cross peaks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::processing::{
    compare_cross_peak, integrate_peak, process_2d, CrossPeakComparison, PeakReport, PeakWindow, Phasing,
    ProcessingParams, Spectrum2D,
};
use crate::relax::{MixingSpec, RelaxationMatrix, ZqFilterSpec};
use crate::sequence::{build_noesy_zqf, build_pe_noesy_zqf, run_2d, AcquisitionParams, PulseProgram, Raw2D};
use crate::spin::{CouplingModel, SpinSystem};

/// A spin system together with its longitudinal relaxation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub system: SpinSystem,
    pub relaxation: RelaxationMatrix,
}

/// Shifts of the benchmark chain A, B, C in Hz.
pub const BENCHMARK_SHIFTS: [f64; 3] = [-200.0, 0.0, 250.0];
pub const BENCHMARK_J_AB: f64 = 10.0;
pub const BENCHMARK_T2: f64 = 0.3;
pub const BENCHMARK_SIGMA_BC: f64 = -0.05;
/// A-B cross-relaxation, so the A-B cross peak carries an NOE under its
/// zero-quantum artefact.
pub const BENCHMARK_SIGMA_AB: f64 = -0.05;
pub const BENCHMARK_RHO: f64 = 0.5;
pub const BENCHMARK_TAU_M: f64 = 0.25;

impl Sample {
    pub fn new(system: SpinSystem, relaxation: RelaxationMatrix) -> Result<Self> {
        if relaxation.n_spins() != system.n_spins() {
            return Err(Error::DimensionMismatch {
                expected: system.n_spins(),
                got: relaxation.n_spins(),
            });
        }
        Ok(Self { system, relaxation })
    }

    /// Three-spin chain: A-B scalar coupled, A-B and B-C cross-relaxing.
    pub fn benchmark() -> Self {
        Self::benchmark_with(
            BENCHMARK_J_AB,
            BENCHMARK_T2,
            &[(0, 1, BENCHMARK_SIGMA_AB), (1, 2, BENCHMARK_SIGMA_BC)],
        )
    }

    /// Benchmark shifts with a chosen A-B coupling, uniform T2 and
    /// cross-relaxation pairs (0-based).
    pub fn benchmark_with(j_ab: f64, t2: f64, sigma: &[(usize, usize, f64)]) -> Self {
        let mut j = vec![vec![0.0; 3]; 3];
        j[0][1] = j_ab;
        j[1][0] = j_ab;
        let system = SpinSystem::new(BENCHMARK_SHIFTS.to_vec(), j, vec![t2; 3], CouplingModel::Weak)
            .expect("benchmark system is valid");
        let relaxation = RelaxationMatrix::from_pairs(BENCHMARK_RHO, 3, sigma).expect("benchmark rates are valid");
        Self { system, relaxation }
    }

    /// Diagonal peak used as the phase reference.
    pub fn reference_peak(&self) -> (f64, f64) {
        let s = self.system.shifts();
        let i = (0..s.len())
            .find(|&i| (0..s.len()).all(|k| self.system.coupling(i, k) == 0.0))
            .unwrap_or(0);
        (s[i], s[i])
    }
}

/// Mixing with or without the standard chirp filter.
pub fn mixing(tau_m: f64, zq_filter: Option<ZqFilterSpec>) -> MixingSpec {
    let m = MixingSpec::new(tau_m);
    match zq_filter {
        Some(f) => m.with_filter(f),
        None => m,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulation {
    pub raw: Raw2D,
    pub spectrum: Spectrum2D,
}

/// Acquire and process one program. With [`Phasing::None`] in `processing`
/// the sample's reference diagonal peak is phased automatically.
pub fn simulate(
    program: &PulseProgram,
    sample: &Sample,
    acq: &AcquisitionParams,
    processing: &ProcessingParams,
) -> Result<Simulation> {
    let raw = run_2d(program, &sample.system, &sample.relaxation, acq)?;
    let mut params = *processing;
    if params.phasing == Phasing::None {
        let (f1_hz, f2_hz) = sample.reference_peak();
        params.phasing = Phasing::Auto { f1_hz, f2_hz };
    }
    let spectrum = process_2d(&raw, &params)?;
    Ok(Simulation { raw, spectrum })
}

/// Both sequences on one sample with one acquisition and processing set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSetup {
    pub mixing: MixingSpec,
    pub acquisition: AcquisitionParams,
    pub processing: ProcessingParams,
}

impl ComparisonSetup {
    pub fn benchmark() -> Self {
        Self {
            mixing: mixing(BENCHMARK_TAU_M, Some(ZqFilterSpec::standard())),
            acquisition: AcquisitionParams::default(),
            processing: ProcessingParams::default(),
        }
    }

    pub fn programs(&self) -> (PulseProgram, PulseProgram) {
        (build_noesy_zqf(self.mixing.clone()), build_pe_noesy_zqf(self.mixing.clone()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelledWindow {
    pub label: String,
    pub window: PeakWindow,
}

/// Per-window results; `ratio` is perfect-echo over conventional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowComparison {
    pub label: String,
    pub comparison: CrossPeakComparison,
}

impl WindowComparison {
    pub fn pe(&self) -> &PeakReport {
        &self.comparison.a
    }

    pub fn conventional(&self) -> &PeakReport {
        &self.comparison.b
    }
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub conventional: Simulation,
    pub pe: Simulation,
    pub windows: Vec<WindowComparison>,
}

/// Run the conventional and perfect-echo sequences and compare every window.
pub fn compare(sample: &Sample, setup: &ComparisonSetup, windows: &[LabelledWindow]) -> Result<Comparison> {
    let (conv_prog, pe_prog) = setup.programs();
    compare_programs(sample, &conv_prog, &pe_prog, &setup.acquisition, &setup.processing, windows)
}

/// As [`compare`] with explicit programs; `b` is the denominator.
pub fn compare_programs(
    sample: &Sample,
    b: &PulseProgram,
    a: &PulseProgram,
    acq: &AcquisitionParams,
    processing: &ProcessingParams,
    windows: &[LabelledWindow],
) -> Result<Comparison> {
    let conventional = simulate(b, sample, acq, processing)?;
    let pe = simulate(a, sample, acq, processing)?;
    let windows = windows
        .iter()
        .map(|w| {
            Ok(WindowComparison {
                label: w.label.clone(),
                comparison: compare_cross_peak(&pe.spectrum, &conventional.spectrum, &w.window)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Comparison {
        conventional,
        pe,
        windows,
    })
}

/// Square windows of half-width `half` Hz on every off-diagonal shift pair,
/// labelled `i-j` (1-based, F1 spin first).
pub fn cross_peak_windows(sys: &SpinSystem, half: f64) -> Vec<LabelledWindow> {
    let s = sys.shifts();
    let mut out = Vec::new();
    for i in 0..s.len() {
        for j in 0..s.len() {
            if i != j {
                out.push(LabelledWindow {
                    label: format!("{}-{}", i + 1, j + 1),
                    window: PeakWindow::around(s[i], s[j], half),
                });
            }
        }
    }
    out
}

/// Report on one window of a single spectrum.
pub fn peak(spec: &Spectrum2D, f1: f64, f2: f64, half: f64) -> Result<PeakReport> {
    integrate_peak(spec, &PeakWindow::around(f1, f2, half))
}

/// Half-width (Hz) of the square cross-peak windows.
pub const CROSS_PEAK_HALF_WIDTH: f64 = 30.0;

/// Spectral figures of the benchmark chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    /// Conventional A-B cross peak without the filter.
    pub antiphase_unfiltered: f64,
    /// Conventional A-B cross peak with the filter.
    pub antiphase_filtered: f64,
    /// `1 - |A-B| filtered / unfiltered` with the A-B NOE switched off, so
    /// the peak is pure zero-quantum artefact (`|.|` is abs_volume).
    pub zq_reduction: f64,
    /// Perfect-echo over conventional B-C volume, both filtered.
    pub pe_over_conventional: f64,
    /// Same for the largest point in the window.
    pub pe_over_conventional_height: f64,
}

impl BenchmarkMetrics {
    pub fn compute(acq: &AcquisitionParams, processing: &ProcessingParams) -> Result<Self> {
        let half = CROSS_PEAK_HALF_WIDTH;
        let [a, b, c] = BENCHMARK_SHIFTS;
        let filtered = mixing(BENCHMARK_TAU_M, Some(ZqFilterSpec::standard()));
        let plain = mixing(BENCHMARK_TAU_M, None);
        let sample = Sample::benchmark();
        let artefact_only = Sample::benchmark_with(BENCHMARK_J_AB, BENCHMARK_T2, &[(1, 2, BENCHMARK_SIGMA_BC)]);

        let run = |s: &Sample, p: &PulseProgram| simulate(p, s, acq, processing).map(|r| r.spectrum);
        let conv_plain = run(&sample, &build_noesy_zqf(plain.clone()))?;
        let conv_filt = run(&sample, &build_noesy_zqf(filtered.clone()))?;
        let pe_filt = run(&sample, &build_pe_noesy_zqf(filtered.clone()))?;
        let zq_plain = run(&artefact_only, &build_noesy_zqf(plain))?;
        let zq_filt = run(&artefact_only, &build_noesy_zqf(filtered))?;

        let bc = PeakWindow::around(b, c, half);
        let ratio = compare_cross_peak(&pe_filt, &conv_filt, &bc)?;
        Ok(Self {
            antiphase_unfiltered: peak(&conv_plain, a, b, half)?.antiphase_index,
            antiphase_filtered: peak(&conv_filt, a, b, half)?.antiphase_index,
            zq_reduction: 1.0 - peak(&zq_filt, a, b, half)?.abs_volume / peak(&zq_plain, a, b, half)?.abs_volume,
            pe_over_conventional: ratio.ratio,
            pe_over_conventional_height: ratio.a.max_amplitude / ratio.b.max_amplitude,
        })
    }
}

/// Local maxima of `trace` within `range` (indices) that exceed `fraction`
/// of the largest value there.
pub fn trace_maxima(trace: &[f64], range: (usize, usize), fraction: f64) -> Vec<usize> {
    let (lo, hi) = (range.0.max(1), range.1.min(trace.len().saturating_sub(2)));
    if lo > hi {
        return Vec::new();
    }
    let top = trace[lo..=hi].iter().cloned().fold(f64::MIN, f64::max);
    (lo..=hi)
        .filter(|&i| trace[i] > trace[i - 1] && trace[i] >= trace[i + 1] && trace[i] > fraction * top)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn benchmark_sample_shape() {
        let s = Sample::benchmark();
        assert_eq!(s.system.shifts(), &BENCHMARK_SHIFTS);
        assert_eq!(s.system.coupling(0, 1), 10.0);
        assert_eq!(s.system.coupling(1, 2), 0.0);
        assert_eq!(s.relaxation.cross_rate(2, 1), -0.05);
        assert_eq!(s.reference_peak(), (250.0, 250.0));
    }

    #[test]
    fn windows_cover_every_pair() {
        let w = cross_peak_windows(&Sample::benchmark().system, 30.0);
        assert_eq!(w.len(), 6);
        assert_eq!(w[1].label, "1-3");
        assert_eq!(w[1].window, PeakWindow::around(-200.0, 250.0, 30.0));
    }

    #[test]
    fn trace_maxima_finds_doublet() {
        let t = [0.0, 1.0, 3.0, 1.0, 2.9, 1.0, 0.0];
        assert_eq!(trace_maxima(&t, (0, 6), 0.5), vec![2, 4]);
        assert_eq!(trace_maxima(&t, (0, 6), 0.99), vec![2]);
    }

    #[test]
    fn mismatched_relaxation_is_rejected() {
        let sys = SpinSystem::weak(&[0.0, 10.0], &[]).unwrap();
        assert!(Sample::new(sys, RelaxationMatrix::zero(3)).is_err());
    }
}
