//! Hypercomplex 2D processing and peak metrics.
//!
//! The spectrum keeps all four States quadrants. `rr` is the absorptive
//! part; the first letter refers to F1, the second to F2. Values are scaled
//! by the dwell times, so summing a region and multiplying by the pixel area
//! approximates the continuous double integral.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::{Raw2D, SequenceKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Apodization {
    None,
    /// Quarter cosine from 1 at t = 0 towards 0 at the end of acquisition.
    #[default]
    Cosine,
    /// Exponential line broadening (Hz).
    Exponential { lb: f64 },
}

impl Apodization {
    pub fn weights(&self, n: usize, dwell: f64) -> Vec<f64> {
        (0..n)
            .map(|k| match self {
                Apodization::None => 1.0,
                Apodization::Cosine => (0.5 * std::f64::consts::PI * k as f64 / n as f64).cos(),
                Apodization::Exponential { lb } => (-std::f64::consts::PI * lb * k as f64 * dwell).exp(),
            })
            .collect()
    }
}

/// Zero-order phase handling.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Phasing {
    #[default]
    None,
    /// Fixed corrections in degrees.
    Fixed { f1_deg: f64, f2_deg: f64 },
    /// Make the strongest point near the reference (Hz) absorptive-positive.
    Auto { f1_hz: f64, f2_hz: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessingParams {
    pub apod_f1: Apodization,
    pub apod_f2: Apodization,
    /// Zero-fill factor (>= 1) applied in both dimensions.
    pub zero_fill: usize,
    /// Scale of the first point in each dimension.
    pub first_point: f64,
    pub phasing: Phasing,
}

impl Default for ProcessingParams {
    fn default() -> Self {
        Self {
            apod_f1: Apodization::Cosine,
            apod_f2: Apodization::Cosine,
            zero_fill: 2,
            first_point: 0.5,
            phasing: Phasing::None,
        }
    }
}

impl ProcessingParams {
    /// No window, no zero-fill, unscaled first point.
    pub fn plain() -> Self {
        Self {
            apod_f1: Apodization::None,
            apod_f2: Apodization::None,
            zero_fill: 1,
            first_point: 1.0,
            phasing: Phasing::None,
        }
    }

    pub fn with_phasing(mut self, phasing: Phasing) -> Self {
        self.phasing = phasing;
        self
    }
}

/// Linear frequency axis: point `i` sits at `start + i * step` Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreqAxis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl FreqAxis {
    fn centred(len: usize, dwell: f64) -> Self {
        let step = 1.0 / (len as f64 * dwell);
        Self {
            start: -(len as f64 / 2.0).floor() * step,
            step,
            len,
        }
    }

    pub fn hz(&self, i: usize) -> f64 {
        self.start + i as f64 * self.step
    }

    pub fn end(&self) -> f64 {
        self.hz(self.len - 1)
    }

    /// Nearest index to `hz`, if inside the axis.
    pub fn index(&self, hz: f64) -> Option<usize> {
        let x = ((hz - self.start) / self.step).round();
        (x >= 0.0 && x < self.len as f64).then_some(x as usize)
    }

    fn same_as(&self, o: &FreqAxis) -> bool {
        self.len == o.len && (self.start - o.start).abs() <= 1e-9 * self.step.abs().max(1.0) && (self.step - o.step).abs() <= 1e-12 * self.step.abs()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum2D {
    pub f1: FreqAxis,
    pub f2: FreqAxis,
    /// Row-major, `f1.len` rows of `f2.len` points.
    pub rr: Vec<f64>,
    pub ri: Vec<f64>,
    pub ir: Vec<f64>,
    pub ii: Vec<f64>,
    pub params: ProcessingParams,
    /// Applied zero-order phases (degrees).
    pub phase_f1_deg: f64,
    pub phase_f2_deg: f64,
    pub kind: SequenceKind,
    pub spectrometer_freq: f64,
}

impl Spectrum2D {
    #[inline]
    pub fn at(&self, i1: usize, i2: usize) -> f64 {
        self.rr[i1 * self.f2.len + i2]
    }

    pub fn pixel_area(&self) -> f64 {
        self.f1.step * self.f2.step
    }

    /// `sum |S|^2 df1 df2` over all four quadrants.
    pub fn energy(&self) -> f64 {
        let s: f64 = [&self.rr, &self.ri, &self.ir, &self.ii]
            .iter()
            .flat_map(|q| q.iter())
            .map(|v| v * v)
            .sum();
        s * self.pixel_area()
    }

    /// Absorptive trace along F1 at the F2 position nearest `f2_hz`.
    pub fn f1_trace(&self, f2_hz: f64) -> Result<Vec<f64>> {
        let i2 = self
            .f2
            .index(f2_hz)
            .ok_or_else(|| Error::Processing(format!("F2 position {f2_hz} Hz outside spectrum")))?;
        Ok((0..self.f1.len).map(|i1| self.at(i1, i2)).collect())
    }

    /// Full width at half maximum along F1 through the largest point of the
    /// F1 trace at `f2_hz` within `f1_range`, by linear interpolation.
    pub fn f1_linewidth(&self, f2_hz: f64, f1_range: (f64, f64)) -> Result<f64> {
        let trace = self.f1_trace(f2_hz)?;
        let (lo, hi) = index_range(&self.f1, f1_range)?;
        let peak = (lo..=hi)
            .max_by(|&a, &b| trace[a].total_cmp(&trace[b]))
            .expect("non-empty range");
        let half = trace[peak] / 2.0;
        if half <= 0.0 {
            return Err(Error::Processing("no positive peak in range".into()));
        }
        let mut left = None;
        for i in (0..peak).rev() {
            if trace[i] <= half {
                left = Some(i as f64 + (half - trace[i]) / (trace[i + 1] - trace[i]));
                break;
            }
        }
        let mut right = None;
        for i in peak + 1..trace.len() {
            if trace[i] <= half {
                right = Some(i as f64 - (half - trace[i]) / (trace[i - 1] - trace[i]));
                break;
            }
        }
        match (left, right) {
            (Some(l), Some(r)) => Ok((r - l) * self.f1.step),
            _ => Err(Error::Processing("half-maximum not reached inside spectrum".into())),
        }
    }
}

fn fft_in_place(planner: &mut FftPlanner<f64>, data: &mut [Complex64]) {
    planner.plan_fft_forward(data.len()).process(data);
}

/// Move zero frequency to the centre (index `len / 2`).
fn fftshift(v: &mut [Complex64]) {
    let n = v.len();
    v.rotate_right(n / 2);
}

/// Window, scale the first point, zero-fill and transform one time series.
fn transform(
    planner: &mut FftPlanner<f64>,
    points: &[Complex64],
    weights: &[f64],
    first_point: f64,
    len: usize,
    dwell: f64,
) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); len];
    for (k, (p, w)) in points.iter().zip(weights).enumerate() {
        buf[k] = p * (w * dwell);
    }
    if let Some(b) = buf.first_mut() {
        *b *= first_point;
    }
    fft_in_place(planner, &mut buf);
    fftshift(&mut buf);
    buf
}

/// States processing: transform t2, combine the cosine and sine components
/// into complex t1 series (the sine part enters with a negative sign, which
/// puts a positive offset at positive F1 with this crate's pulse and
/// receiver conventions), transform t1, then apply zero-order phases.
pub fn process_2d(raw: &Raw2D, params: &ProcessingParams) -> Result<Spectrum2D> {
    if raw.n_t1 == 0 || raw.n_t2 == 0 || raw.cos.is_empty() {
        return Err(Error::Processing("empty data set".into()));
    }
    if raw.cos.len() != raw.n_t1
        || raw.sin.len() != raw.n_t1
        || raw.cos.iter().chain(&raw.sin).any(|f| f.len() != raw.n_t2)
    {
        return Err(Error::Processing("raw dimensions do not match metadata".into()));
    }
    if params.zero_fill == 0 {
        return Err(Error::Processing("zero-fill factor must be >= 1".into()));
    }
    // a single increment stays a single row
    let n1 = if raw.n_t1 == 1 { 1 } else { raw.n_t1 * params.zero_fill };
    let n2 = raw.n_t2 * params.zero_fill;
    let w2 = params.apod_f2.weights(raw.n_t2, raw.dw2);
    let w1 = params.apod_f1.weights(raw.n_t1, raw.dw1);

    let rows: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..raw.n_t1)
        .into_par_iter()
        .map(|k| {
            let mut planner = FftPlanner::new();
            let c = transform(&mut planner, &raw.cos[k], &w2, params.first_point, n2, raw.dw2);
            let s = transform(&mut planner, &raw.sin[k], &w2, params.first_point, n2, raw.dw2);
            (c, s)
        })
        .collect();

    // columns: a = Re C - i Re S, b = Im C - i Im S
    let columns: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..n2)
        .into_par_iter()
        .map(|j| {
            let a: Vec<Complex64> = rows.iter().map(|(c, s)| Complex64::new(c[j].re, -s[j].re)).collect();
            let b: Vec<Complex64> = rows.iter().map(|(c, s)| Complex64::new(c[j].im, -s[j].im)).collect();
            let mut planner = FftPlanner::new();
            (
                transform(&mut planner, &a, &w1, params.first_point, n1, raw.dw1),
                transform(&mut planner, &b, &w1, params.first_point, n1, raw.dw1),
            )
        })
        .collect();

    let mut spec = Spectrum2D {
        f1: FreqAxis::centred(n1, raw.dw1),
        f2: FreqAxis::centred(n2, raw.dw2),
        rr: vec![0.0; n1 * n2],
        ri: vec![0.0; n1 * n2],
        ir: vec![0.0; n1 * n2],
        ii: vec![0.0; n1 * n2],
        params: *params,
        phase_f1_deg: 0.0,
        phase_f2_deg: 0.0,
        kind: raw.kind,
        spectrometer_freq: raw.spectrometer_freq,
    };
    for (j, (a, b)) in columns.iter().enumerate() {
        for i in 0..n1 {
            let p = i * n2 + j;
            spec.rr[p] = a[i].re;
            spec.ir[p] = a[i].im;
            spec.ri[p] = b[i].re;
            spec.ii[p] = b[i].im;
        }
    }

    let (p1, p2) = match params.phasing {
        Phasing::None => (0.0, 0.0),
        Phasing::Fixed { f1_deg, f2_deg } => (f1_deg, f2_deg),
        Phasing::Auto { f1_hz, f2_hz } => auto_phase(&spec, f1_hz, f2_hz)?,
    };
    apply_phase(&mut spec, p1, p2);
    Ok(spec)
}

/// Rotate the quadrants by zero-order phases (degrees) in F1 and F2.
pub fn apply_phase(spec: &mut Spectrum2D, f1_deg: f64, f2_deg: f64) {
    let (c1, s1) = (f1_deg.to_radians().cos(), f1_deg.to_radians().sin());
    let (c2, s2) = (f2_deg.to_radians().cos(), f2_deg.to_radians().sin());
    for p in 0..spec.rr.len() {
        let (rr, ri, ir, ii) = (spec.rr[p], spec.ri[p], spec.ir[p], spec.ii[p]);
        // F2: (x r + y i) -> multiply by exp(i phi2)
        let (rr, ri) = (rr * c2 - ri * s2, rr * s2 + ri * c2);
        let (ir, ii) = (ir * c2 - ii * s2, ir * s2 + ii * c2);
        // F1
        let (rr, ir) = (rr * c1 - ir * s1, rr * s1 + ir * c1);
        let (ri, ii) = (ri * c1 - ii * s1, ri * s1 + ii * c1);
        spec.rr[p] = rr;
        spec.ri[p] = ri;
        spec.ir[p] = ir;
        spec.ii[p] = ii;
    }
    spec.phase_f1_deg += f1_deg;
    spec.phase_f2_deg += f2_deg;
}

/// Search radius (points) around the auto-phase reference.
const AUTO_PHASE_RADIUS: usize = 3;

/// Phases (degrees) that make the strongest point near the reference
/// absorptive-positive.
fn auto_phase(spec: &Spectrum2D, f1_hz: f64, f2_hz: f64) -> Result<(f64, f64)> {
    let (c1, c2) = match (spec.f1.index(f1_hz), spec.f2.index(f2_hz)) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(Error::Processing("phase reference outside spectrum".into())),
    };
    let n2 = spec.f2.len;
    let mag = |p: usize| {
        (spec.rr[p].powi(2) + spec.ri[p].powi(2) + spec.ir[p].powi(2) + spec.ii[p].powi(2)).sqrt()
    };
    let lo1 = c1.saturating_sub(AUTO_PHASE_RADIUS);
    let hi1 = (c1 + AUTO_PHASE_RADIUS).min(spec.f1.len - 1);
    let lo2 = c2.saturating_sub(AUTO_PHASE_RADIUS);
    let hi2 = (c2 + AUTO_PHASE_RADIUS).min(n2 - 1);
    let p = (lo1..=hi1)
        .flat_map(|i| (lo2..=hi2).map(move |j| i * n2 + j))
        .max_by(|&a, &b| mag(a).total_cmp(&mag(b)))
        .expect("non-empty search box");
    if mag(p) == 0.0 {
        return Err(Error::Processing("phase reference has no signal".into()));
    }
    let (rr, ri, ir, ii) = (spec.rr[p], spec.ri[p], spec.ir[p], spec.ii[p]);
    // value = A exp(i1 phi1) exp(i2 phi2)
    let phi2 = if rr.hypot(ri) >= ir.hypot(ii) {
        ri.atan2(rr)
    } else {
        ii.atan2(ir)
    };
    let (c, s) = (phi2.cos(), phi2.sin());
    let phi1 = (ir * c + ii * s).atan2(rr * c + ri * s);
    Ok((-phi1.to_degrees(), -phi2.to_degrees()))
}

/// Rectangular integration region in Hz.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakWindow {
    pub f1: (f64, f64),
    pub f2: (f64, f64),
}

impl PeakWindow {
    pub fn new(f1: (f64, f64), f2: (f64, f64)) -> Self {
        Self { f1, f2 }
    }

    /// Square window of half-width `half` centred on (`f1`, `f2`).
    pub fn around(f1: f64, f2: f64, half: f64) -> Self {
        Self {
            f1: (f1 - half, f1 + half),
            f2: (f2 - half, f2 + half),
        }
    }
}

fn index_range(axis: &FreqAxis, (lo, hi): (f64, f64)) -> Result<(usize, usize)> {
    if !(lo < hi) {
        return Err(Error::Processing(format!("empty window [{lo}, {hi}]")));
    }
    let (a, b) = (axis.start, axis.end());
    if lo < a - 0.5 * axis.step || hi > b + 0.5 * axis.step {
        return Err(Error::Processing(format!(
            "window [{lo}, {hi}] Hz outside axis [{a}, {b}] Hz"
        )));
    }
    let i = ((lo - axis.start) / axis.step).ceil().max(0.0) as usize;
    let j = (((hi - axis.start) / axis.step).floor() as usize).min(axis.len - 1);
    if i > j {
        return Err(Error::Processing(format!("window [{lo}, {hi}] Hz holds no points")));
    }
    Ok((i, j))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeakReport {
    /// Position (Hz) of the largest |absorptive| point.
    pub center: (f64, f64),
    pub volume: f64,
    pub abs_volume: f64,
    pub antiphase_index: f64,
    pub max_amplitude: f64,
    /// Largest |absorptive| value along the F1 column through the centre,
    /// outside the window.
    pub f1_tail: f64,
}

impl PeakReport {
    pub const CSV_HEADER: &'static str =
        "label,center_f1_hz,center_f2_hz,volume,abs_volume,antiphase_index,max_amplitude,f1_tail";

    pub fn csv_row(&self, label: &str) -> String {
        format!(
            "{label},{},{},{:e},{:e},{},{:e},{:e}",
            self.center.0,
            self.center.1,
            self.volume,
            self.abs_volume,
            self.antiphase_index,
            self.max_amplitude,
            self.f1_tail
        )
    }
}

pub fn integrate_peak(spec: &Spectrum2D, window: &PeakWindow) -> Result<PeakReport> {
    let (a1, b1) = index_range(&spec.f1, window.f1)?;
    let (a2, b2) = index_range(&spec.f2, window.f2)?;
    let mut volume = 0.0;
    let mut abs_volume = 0.0;
    let mut best = (a1, a2, 0.0f64);
    for i in a1..=b1 {
        for j in a2..=b2 {
            let v = spec.at(i, j);
            volume += v;
            abs_volume += v.abs();
            if v.abs() > best.2 {
                best = (i, j, v.abs());
            }
        }
    }
    let area = spec.pixel_area();
    let (volume, abs_volume) = (volume * area, abs_volume * area);
    let antiphase_index = if abs_volume > 0.0 {
        (1.0 - volume.abs() / abs_volume).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let f1_tail = (0..spec.f1.len)
        .filter(|i| *i < a1 || *i > b1)
        .map(|i| spec.at(i, best.1).abs())
        .fold(0.0, f64::max);
    Ok(PeakReport {
        center: (spec.f1.hz(best.0), spec.f2.hz(best.1)),
        volume,
        abs_volume,
        antiphase_index,
        max_amplitude: best.2,
        f1_tail,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossPeakComparison {
    pub window: PeakWindow,
    /// `a.volume / b.volume`, sign kept.
    pub ratio: f64,
    pub a: PeakReport,
    pub b: PeakReport,
}

pub fn compare_cross_peak(a: &Spectrum2D, b: &Spectrum2D, window: &PeakWindow) -> Result<CrossPeakComparison> {
    if !a.f1.same_as(&b.f1) || !a.f2.same_as(&b.f2) {
        return Err(Error::Processing("spectra have different axes".into()));
    }
    let ra = integrate_peak(a, window)?;
    let rb = integrate_peak(b, window)?;
    Ok(CrossPeakComparison {
        window: *window,
        ratio: ra.volume / rb.volume,
        a: ra,
        b: rb,
    })
}

#[derive(Serialize)]
struct Sidecar<'a> {
    format: &'static str,
    rows: usize,
    cols: usize,
    f1: &'a FreqAxis,
    f2: &'a FreqAxis,
    f1_ppm: Option<(f64, f64)>,
    f2_ppm: Option<(f64, f64)>,
    spectrometer_freq_mhz: f64,
    kind: SequenceKind,
    params: &'a ProcessingParams,
    phase_f1_deg: f64,
    phase_f2_deg: f64,
    #[serde(flatten)]
    extra: &'a serde_json::Value,
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e.to_string())
}

/// Absorptive part as little-endian f32, row-major (F1 rows).
pub fn to_f32_bytes(spec: &Spectrum2D) -> Vec<u8> {
    spec.rr.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
}

/// Write `<base>.f32` and `<base>.json`; `extra` is merged into the sidecar.
pub fn write_spectrum(spec: &Spectrum2D, base: &Path, extra: &serde_json::Value) -> Result<(PathBuf, PathBuf)> {
    let bin = base.with_extension("f32");
    let json = base.with_extension("json");
    fs::write(&bin, to_f32_bytes(spec)).map_err(io)?;
    let ppm = |ax: &FreqAxis| {
        (spec.spectrometer_freq > 0.0)
            .then(|| (ax.start / spec.spectrometer_freq, ax.end() / spec.spectrometer_freq))
    };
    let extra_obj = if extra.is_object() {
        extra.clone()
    } else {
        serde_json::json!({})
    };
    let sidecar = Sidecar {
        format: "f32le-row-major",
        rows: spec.f1.len,
        cols: spec.f2.len,
        f1: &spec.f1,
        f2: &spec.f2,
        f1_ppm: ppm(&spec.f1),
        f2_ppm: ppm(&spec.f2),
        spectrometer_freq_mhz: spec.spectrometer_freq,
        kind: spec.kind,
        params: &spec.params,
        phase_f1_deg: spec.phase_f1_deg,
        phase_f2_deg: spec.phase_f2_deg,
        extra: &extra_obj,
    };
    let text = serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?;
    fs::write(&json, text).map_err(io)?;
    Ok((bin, json))
}

/// Labelled peak reports as CSV.
pub fn write_reports_csv(path: &Path, rows: &[(String, PeakReport)]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(io)?;
    writeln!(f, "{}", PeakReport::CSV_HEADER).map_err(io)?;
    for (label, r) in rows {
        writeln!(f, "{}", r.csv_row(label)).map_err(io)?;
    }
    Ok(())
}
