//! Run configuration: flags over TOML file over defaults.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::{Deserialize, Serialize};

use noesy::dsl::{parse_program, parse_spin_system, ParseError};
use noesy::experiment::{cross_peak_windows, LabelledWindow, Sample, BENCHMARK_TAU_M, CROSS_PEAK_HALF_WIDTH};
use noesy::processing::{Apodization, PeakWindow, ProcessingParams};
use noesy::sequence::{build_noesy_zqf, build_pe_noesy_zqf, Recovery};
use noesy::{AcquisitionParams, ChirpSpec, FilterMode, MixingSpec, PulseProgram, ZqFilterSpec};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "NOESY_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "noesy-out";

/// Nominal increment used when `--t1max 0` asks for a single row.
const SINGLE_ROW_DW1: f64 = 1e-3;

#[derive(Args, Debug, Clone, Default)]
pub struct CommonArgs {
    /// Spin system file (.spin)
    #[arg(long)]
    pub sys: Option<PathBuf>,
    /// TOML configuration file; flags take precedence over it
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory [default: $NOESY_OUT_DIR or ./noesy-out]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: available cores]; results do not depend on it
    #[arg(long)]
    pub threads: Option<usize>,

    /// Encoded t1 span in seconds; 0 records a single increment
    #[arg(long = "t1max")]
    pub t1_max: Option<f64>,
    #[arg(long = "n-t1")]
    pub n_t1: Option<usize>,
    /// Acquisition time in seconds
    #[arg(long = "t2max")]
    pub t2_max: Option<f64>,
    #[arg(long = "n-t2")]
    pub n_t2: Option<usize>,
    /// Scans per increment (multiple of 8)
    #[arg(long)]
    pub scans: Option<usize>,
    /// Inter-scan recovery: complete or solomon
    #[arg(long)]
    pub recovery: Option<String>,
    /// Relaxation delay in seconds (used by solomon recovery)
    #[arg(long = "d1")]
    pub relaxation_delay: Option<f64>,

    /// Mixing time in seconds
    #[arg(long)]
    pub mix: Option<f64>,
    /// Chirp filter as sweep_hz,duration_s,rf_hz
    #[arg(long)]
    pub zqf: Option<String>,
    /// Gradient strength during the chirp (sets the slice offset span)
    #[arg(long)]
    pub g1: Option<f64>,
    /// Number of filter slices
    #[arg(long)]
    pub slices: Option<usize>,
    /// Filter model: ideal or full
    #[arg(long = "filter-mode")]
    pub filter_mode: Option<String>,
    /// Run without the zero-quantum filter
    #[arg(long = "no-zq-filter")]
    pub no_zq_filter: bool,

    /// Apodization in both dimensions: cosine, none or exp:<lb_hz>
    #[arg(long)]
    pub apod: Option<String>,
    #[arg(long = "zero-fill")]
    pub zero_fill: Option<usize>,
}

impl CommonArgs {
    fn mixing_flags_given(&self) -> bool {
        self.mix.is_some()
            || self.zqf.is_some()
            || self.g1.is_some()
            || self.slices.is_some()
            || self.filter_mode.is_some()
            || self.no_zq_filter
    }
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub sys: Option<PathBuf>,
    pub seq: Option<String>,
    pub a: Option<String>,
    pub b: Option<String>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub acquisition: AcqSection,
    #[serde(default)]
    pub mixing: MixSection,
    #[serde(default)]
    pub processing: ProcSection,
    #[serde(default, rename = "window")]
    pub windows: Vec<WindowSection>,
    /// Directory of the file, for relative paths.
    #[serde(skip)]
    pub base: PathBuf,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct AcqSection {
    pub n_t1: Option<usize>,
    pub t1_max: Option<f64>,
    pub n_t2: Option<usize>,
    pub t2_max: Option<f64>,
    pub scans: Option<usize>,
    pub relaxation_delay: Option<f64>,
    pub spectrometer_freq: Option<f64>,
    pub recovery: Option<String>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct MixSection {
    pub tau_m: Option<f64>,
    pub zq_filter: Option<bool>,
    pub chirp: Option<[f64; 3]>,
    pub g1: Option<f64>,
    pub slices: Option<usize>,
    pub mode: Option<String>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields)]
pub struct ProcSection {
    pub apod: Option<String>,
    pub zero_fill: Option<usize>,
    pub first_point: Option<f64>,
}

#[derive(Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    pub label: String,
    pub f1: [f64; 2],
    pub f2: [f64; 2],
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut c: FileConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        c.base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(c)
    }

    fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }
}

/// Everything a run needs, after precedence is applied.
#[derive(Serialize, Debug, Clone)]
pub struct Resolved {
    pub sys_path: Option<PathBuf>,
    #[serde(skip)]
    pub out_dir: PathBuf,
    pub sample: Sample,
    pub acquisition: AcquisitionParams,
    pub mixing: MixingSpec,
    pub processing: ProcessingParams,
}

pub fn parse_apodization(s: &str) -> Result<Apodization> {
    Ok(match s {
        "cosine" => Apodization::Cosine,
        "none" => Apodization::None,
        other => match other.strip_prefix("exp:").map(str::parse::<f64>) {
            Some(Ok(lb)) if lb.is_finite() && lb >= 0.0 => Apodization::Exponential { lb },
            _ => bail!("unknown apodization '{other}' (cosine, none or exp:<lb_hz>)"),
        },
    })
}

fn parse_triplet(s: &str) -> Result<[f64; 3]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("--zqf expects sweep_hz,duration_s,rf_hz, got '{s}'"))?;
    match v.as_slice() {
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("--zqf expects three comma-separated numbers, got '{s}'"),
    }
}

/// Render parse diagnostics with the file name in front.
pub fn diagnostics(path: &Path, e: &ParseError) -> String {
    e.diagnostics
        .iter()
        .map(|d| format!("{}:{}:{}: [{}] {}", path.display(), d.line, d.column, d.code.as_str(), d.message))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn load_sample(path: &Path) -> Result<Sample> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading spin system {}", path.display()))?;
    let (sys, r) = parse_spin_system(&text).map_err(|e| anyhow::anyhow!("{}", diagnostics(path, &e)))?;
    Ok(Sample::new(sys, r)?)
}

/// Apply precedence. `fallback` is used when no spin system is named.
pub fn resolve(args: &CommonArgs, file: &FileConfig, fallback: Option<Sample>) -> Result<Resolved> {
    if args.no_zq_filter && (args.zqf.is_some() || args.g1.is_some() || args.slices.is_some() || args.filter_mode.is_some()) {
        bail!("--no-zq-filter cannot be combined with filter settings");
    }
    let (sys_path, sample) = match (&args.sys, &file.sys, fallback) {
        (Some(p), _, _) => (Some(p.clone()), load_sample(p)?),
        (None, Some(p), _) => (Some(file.path(p)), load_sample(&file.path(p))?),
        (None, None, Some(s)) => (None, s),
        (None, None, None) => bail!("no spin system given (--sys or `sys` in the config)"),
    };

    let d = AcquisitionParams::default();
    let a = &file.acquisition;
    let mut t1_max = args.t1_max.or(a.t1_max).unwrap_or(d.t1_max);
    let mut n_t1 = args.n_t1.or(a.n_t1).unwrap_or(d.n_t1);
    if t1_max == 0.0 {
        n_t1 = 1;
        t1_max = SINGLE_ROW_DW1;
    }
    let recovery = match args.recovery.as_deref().or(a.recovery.as_deref()) {
        None | Some("complete") => Recovery::Complete,
        Some("solomon") => Recovery::Solomon,
        Some(other) => bail!("unknown recovery '{other}' (complete or solomon)"),
    };
    let acquisition = AcquisitionParams {
        n_t1,
        t1_max,
        n_t2: args.n_t2.or(a.n_t2).unwrap_or(d.n_t2),
        t2_max: args.t2_max.or(a.t2_max).unwrap_or(d.t2_max),
        n_scans: args.scans.or(a.scans).unwrap_or(d.n_scans),
        relaxation_delay: args.relaxation_delay.or(a.relaxation_delay).unwrap_or(d.relaxation_delay),
        spectrometer_freq: a.spectrometer_freq.unwrap_or(d.spectrometer_freq),
        recovery,
    };
    acquisition.validate()?;

    let m = &file.mixing;
    let tau_m = args.mix.or(m.tau_m).unwrap_or(BENCHMARK_TAU_M);
    let filter_on = !args.no_zq_filter && m.zq_filter.unwrap_or(true);
    let mut mixing = MixingSpec::new(tau_m);
    if filter_on {
        let mut f = ZqFilterSpec::standard();
        if let Some(c) = args.zqf.as_deref().map(parse_triplet).transpose()?.or(m.chirp) {
            f.chirp = ChirpSpec::new(c[0], c[1], c[2]).with_slices(f.chirp.n_slices);
        }
        if let Some(n) = args.slices.or(m.slices) {
            f.chirp = f.chirp.with_slices(n);
        }
        if let Some(g) = args.g1.or(m.g1) {
            f.gradient_g1 = g;
        }
        f.mode = match args.filter_mode.as_deref().or(m.mode.as_deref()) {
            None | Some("ideal") => FilterMode::IdealSlices,
            Some("full") => FilterMode::FullChirp,
            Some(other) => bail!("unknown filter mode '{other}' (ideal or full)"),
        };
        mixing = mixing.with_filter(f);
    }
    mixing.validate()?;

    let p = &file.processing;
    let mut processing = ProcessingParams::default();
    if let Some(s) = args.apod.as_deref().or(p.apod.as_deref()) {
        let a = parse_apodization(s)?;
        processing.apod_f1 = a;
        processing.apod_f2 = a;
    }
    if let Some(z) = args.zero_fill.or(p.zero_fill) {
        if z == 0 {
            bail!("zero-fill factor must be >= 1");
        }
        processing.zero_fill = z;
    }
    if let Some(fp) = p.first_point {
        processing.first_point = fp;
    }

    let out_dir = match (&args.out, &file.out) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => file.path(p),
        (None, None) => std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR)),
    };

    Ok(Resolved {
        sys_path,
        out_dir,
        sample,
        acquisition,
        mixing,
        processing,
    })
}

/// A sequence selected by name or by `.pseq` path.
#[derive(Serialize, Debug, Clone)]
pub struct SequenceChoice {
    pub name: String,
    /// Canonical program text, so the manifest is self-contained.
    pub program_text: String,
    #[serde(skip)]
    pub program: PulseProgram,
}

pub fn resolve_sequence(spec: &str, mixing: &MixingSpec, mixing_flags: bool) -> Result<SequenceChoice> {
    let (name, program) = match spec {
        "noesy" => ("noesy".to_string(), build_noesy_zqf(mixing.clone())),
        "pe-noesy" => ("pe-noesy".to_string(), build_pe_noesy_zqf(mixing.clone())),
        path => {
            if mixing_flags {
                bail!("mixing flags apply to the built-in sequences; edit the `mix` line of {path} instead");
            }
            let p = Path::new(path);
            let text = std::fs::read(p).with_context(|| format!("reading pulse program {path}"))?;
            let program = noesy::dsl::parse_program_bytes(&text).map_err(|e| anyhow::anyhow!("{}", diagnostics(p, &e)))?;
            let stem = p.file_stem().and_then(|s| s.to_str()).unwrap_or("program").to_string();
            (stem, program)
        }
    };
    let program_text = noesy::dsl::serialize_program(&program);
    // the canonical text must read back as the same program
    debug_assert!(parse_program(&program_text).is_ok());
    Ok(SequenceChoice {
        name,
        program_text,
        program,
    })
}

pub fn sequence_flags(args: &CommonArgs) -> bool {
    args.mixing_flags_given()
}

/// Windows from flags, else the config, else every cross peak.
pub fn resolve_windows(flags: &[String], file: &FileConfig, sample: &Sample, half: Option<f64>) -> Result<Vec<LabelledWindow>> {
    if !flags.is_empty() {
        return flags.iter().map(|s| parse_window(s)).collect();
    }
    if !file.windows.is_empty() {
        return Ok(file
            .windows
            .iter()
            .map(|w| LabelledWindow {
                label: w.label.clone(),
                window: PeakWindow::new((w.f1[0], w.f1[1]), (w.f2[0], w.f2[1])),
            })
            .collect());
    }
    Ok(cross_peak_windows(&sample.system, half.unwrap_or(CROSS_PEAK_HALF_WIDTH)))
}

/// `label:f1_lo,f1_hi,f2_lo,f2_hi` in Hz.
fn parse_window(s: &str) -> Result<LabelledWindow> {
    let (label, rest) = s
        .split_once(':')
        .with_context(|| format!("window '{s}' must look like label:f1_lo,f1_hi,f2_lo,f2_hi"))?;
    let v: Vec<f64> = rest
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad numbers in window '{s}'"))?;
    match v.as_slice() {
        [a, b, c, d] => Ok(LabelledWindow {
            label: label.to_string(),
            window: PeakWindow::new((*a, *b), (*c, *d)),
        }),
        _ => bail!("window '{s}' needs four numbers"),
    }
}
