//! `noesy`: simulate and compare the conventional and perfect-echo
//! zero-quantum filtered NOESY sequences.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use config::{resolve, resolve_sequence, resolve_windows, sequence_flags, CommonArgs, FileConfig, Resolved, SequenceChoice};
use noesy::experiment::{compare_programs, simulate, BenchmarkMetrics, Sample, BENCHMARK_SHIFTS};
use noesy::oracle;
use noesy::processing::{write_reports_csv, write_spectrum, PeakReport};
use noesy::relax::zq_residual;
use noesy::spin::ops::{self, Axis};
use noesy::{Complex64, DensityState, FilterMode, SpinSystem, ZqFilterSpec};

#[derive(Parser, Debug)]
#[command(name = "noesy", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Acquire and process one sequence
    Simulate(SimulateArgs),
    /// Run two sequences and report cross-peak ratios (a over b)
    Compare(CompareArgs),
    /// Recompute the benchmark figures and the filter oracle check
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// noesy, pe-noesy or a .pseq file [default: pe-noesy]
    #[arg(long)]
    seq: Option<String>,
    /// Base name of the spectrum files [default: sequence name]
    #[arg(long)]
    name: Option<String>,
    /// Half-width in Hz of the default cross-peak windows
    #[arg(long = "half-width")]
    half_width: Option<f64>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Numerator sequence [default: pe-noesy]
    #[arg(long)]
    a: Option<String>,
    /// Denominator sequence [default: noesy]
    #[arg(long)]
    b: Option<String>,
    /// LABEL:f1_lo,f1_hi,f2_lo,f2_hi in Hz (repeatable)
    #[arg(long = "window")]
    windows: Vec<String>,
    /// Half-width in Hz of the default cross-peak windows
    #[arg(long = "half-width")]
    half_width: Option<f64>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    /// Output directory; without it the JSON only goes to stdout
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "t1max")]
    t1_max: Option<f64>,
    #[arg(long = "n-t1")]
    n_t1: Option<usize>,
    #[arg(long = "t2max")]
    t2_max: Option<f64>,
    #[arg(long = "n-t2")]
    n_t2: Option<usize>,
    #[arg(long)]
    apod: Option<String>,
    #[arg(long = "zero-fill")]
    zero_fill: Option<usize>,
}

/// Everything needed to reproduce a run. No thread count or timestamps so
/// that repeated runs write identical bytes.
#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    seed: u64,
    command: &'static str,
    config: &'a Resolved,
    sequences: Vec<&'a SequenceChoice>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Baseline(a) => cmd_baseline(a),
    }
}

fn set_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        anyhow::ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring worker threads")?;
    }
    Ok(())
}

fn load_config(common: &CommonArgs) -> Result<FileConfig> {
    common.config.as_deref().map(FileConfig::load).transpose().map(Option::unwrap_or_default)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    set_threads(args.common.threads)?;
    let file = load_config(&args.common)?;
    let cfg = resolve(&args.common, &file, None)?;
    let spec = args.seq.clone().or_else(|| file.seq.clone()).unwrap_or_else(|| "pe-noesy".into());
    let seq = resolve_sequence(&spec, &cfg.mixing, sequence_flags(&args.common))?;
    let windows = resolve_windows(&[], &file, &cfg.sample, args.half_width)?;

    let sim = simulate(&seq.program, &cfg.sample, &cfg.acquisition, &cfg.processing)?;
    prepare_out(&cfg.out_dir)?;
    let name = args.name.unwrap_or_else(|| seq.name.clone());
    write_spectrum(&sim.spectrum, &cfg.out_dir.join(&name), &json!({ "sequence": seq.name }))?;

    // a single increment has no F1 axis to integrate over
    let rows = windows
        .iter()
        .filter(|_| sim.spectrum.f1.len > 1)
        .map(|w| Ok((w.label.clone(), noesy::processing::integrate_peak(&sim.spectrum, &w.window)?)))
        .collect::<Result<Vec<(String, PeakReport)>>>()?;
    write_reports_csv(&cfg.out_dir.join("peaks.csv"), &rows)?;
    write_json(
        &cfg.out_dir.join("manifest.json"),
        &Manifest {
            version: env!("CARGO_PKG_VERSION"),
            seed: 0,
            command: "simulate",
            config: &cfg,
            sequences: vec![&seq],
        },
    )?;
    println!(
        "{}: {} x {} points in {}",
        seq.name,
        sim.spectrum.f1.len,
        sim.spectrum.f2.len,
        cfg.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ReportRow<'a> {
    label: &'a str,
    ratio: f64,
    a: &'a PeakReport,
    b: &'a PeakReport,
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    set_threads(args.common.threads)?;
    let file = load_config(&args.common)?;
    let cfg = resolve(&args.common, &file, None)?;
    let flags = sequence_flags(&args.common);
    let a_spec = args.a.clone().or_else(|| file.a.clone()).unwrap_or_else(|| "pe-noesy".into());
    let b_spec = args.b.clone().or_else(|| file.b.clone()).unwrap_or_else(|| "noesy".into());
    let a = resolve_sequence(&a_spec, &cfg.mixing, flags)?;
    let b = resolve_sequence(&b_spec, &cfg.mixing, flags)?;
    let windows = resolve_windows(&args.windows, &file, &cfg.sample, args.half_width)?;

    let c = compare_programs(&cfg.sample, &b.program, &a.program, &cfg.acquisition, &cfg.processing, &windows)?;
    prepare_out(&cfg.out_dir)?;
    write_spectrum(&c.pe.spectrum, &cfg.out_dir.join(format!("a-{}", a.name)), &json!({ "role": "a", "sequence": a.name }))?;
    write_spectrum(
        &c.conventional.spectrum,
        &cfg.out_dir.join(format!("b-{}", b.name)),
        &json!({ "role": "b", "sequence": b.name }),
    )?;

    let rows: Vec<ReportRow> = c
        .windows
        .iter()
        .map(|w| ReportRow {
            label: &w.label,
            ratio: w.comparison.ratio,
            a: &w.comparison.a,
            b: &w.comparison.b,
        })
        .collect();
    let mut csv = String::from("label,ratio,a_volume,b_volume,a_antiphase_index,b_antiphase_index\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.label, r.ratio, r.a.volume, r.b.volume, r.a.antiphase_index, r.b.antiphase_index
        ));
    }
    fs::write(cfg.out_dir.join("report.csv"), csv).context("writing report.csv")?;
    write_json(&cfg.out_dir.join("report.json"), &json!({ "a": a.name, "b": b.name, "windows": rows }))?;
    let peaks: Vec<(String, PeakReport)> = c
        .windows
        .iter()
        .flat_map(|w| {
            [
                (format!("{}:a", w.label), w.comparison.a.clone()),
                (format!("{}:b", w.label), w.comparison.b.clone()),
            ]
        })
        .collect();
    write_reports_csv(&cfg.out_dir.join("peaks.csv"), &peaks)?;
    write_json(
        &cfg.out_dir.join("manifest.json"),
        &Manifest {
            version: env!("CARGO_PKG_VERSION"),
            seed: 0,
            command: "compare",
            config: &cfg,
            sequences: vec![&a, &b],
        },
    )?;

    for r in &rows {
        println!("{:<8} {} / {} = {:.6}", r.label, a.name, b.name, r.ratio);
    }
    Ok(())
}

#[derive(Serialize)]
struct ZqOracleCheck {
    /// Zero-quantum fraction left by the filter, oracle integration.
    oracle_residual: f64,
    /// Change of the oracle residual when its step is halved.
    oracle_step_halving: f64,
    engine_full_chirp: f64,
    engine_ideal_slices: f64,
}

fn zq_oracle_check() -> Result<ZqOracleCheck> {
    let ab = SpinSystem::weak(&BENCHMARK_SHIFTS[..2], &[(0, 1, noesy::experiment::BENCHMARK_J_AB)])?;
    let f = ZqFilterSpec::standard();
    let zqx = (ops::product(2, &[(0, Axis::X), (1, Axis::X)]) + ops::product(2, &[(0, Axis::Y), (1, Axis::Y)]))
        * Complex64::new(0.5, 0.0);
    let rho = DensityState::new(zqx, 2)?;
    let before = rho.zero_quantum().norm();
    let h = oracle::zq_filter_step_limit(&ab, &f);
    let coarse = oracle::zq_filter_average(&ab, &rho, &f, h)?.zero_quantum().norm() / before;
    let fine = oracle::zq_filter_average(&ab, &rho, &f, h / 2.0)?.zero_quantum().norm() / before;
    let mut full = f.clone();
    full.mode = FilterMode::FullChirp;
    Ok(ZqOracleCheck {
        oracle_residual: fine,
        oracle_step_halving: (coarse - fine).abs(),
        engine_full_chirp: zq_residual(&rho, &ab, &full)?,
        engine_ideal_slices: zq_residual(&rho, &ab, &f)?,
    })
}

fn cmd_baseline(args: BaselineArgs) -> Result<()> {
    set_threads(args.threads)?;
    let common = CommonArgs {
        t1_max: args.t1_max,
        n_t1: args.n_t1,
        t2_max: args.t2_max,
        n_t2: args.n_t2,
        apod: args.apod,
        zero_fill: args.zero_fill,
        ..CommonArgs::default()
    };
    let cfg = resolve(&common, &FileConfig::default(), Some(Sample::benchmark()))?;
    let metrics = BenchmarkMetrics::compute(&cfg.acquisition, &cfg.processing)?;
    let check = zq_oracle_check()?;
    let out = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "acquisition": cfg.acquisition,
        "processing": cfg.processing,
        "metrics": metrics,
        "zq_oracle": check,
    });
    println!("{}", serde_json::to_string_pretty(&out)?);
    if let Some(dir) = args.out {
        prepare_out(&dir)?;
        write_json(&dir.join("baseline.json"), &out)?;
    }
    Ok(())
}
