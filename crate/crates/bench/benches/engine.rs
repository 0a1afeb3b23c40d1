use criterion::{black_box, criterion_group, criterion_main, Criterion};

use noesy::dsl::{parse_program, serialize_program};
use noesy::processing::{process_2d, ProcessingParams};
use noesy::relax::{apply_zq_filter, mixing_period};
use noesy::sequence::{build_noesy_zqf, build_pe_noesy_zqf, run_2d};
use noesy::FilterMode;
use noesy_bench::{filtered_mixing, sample, small_acquisition};

fn acquisition(c: &mut Criterion) {
    let s = sample();
    let acq = small_acquisition();
    let conv = build_noesy_zqf(filtered_mixing());
    let pe = build_pe_noesy_zqf(filtered_mixing());
    let mut g = c.benchmark_group("run_2d");
    g.sample_size(10);
    g.bench_function("noesy", |b| b.iter(|| run_2d(&conv, &s.system, &s.relaxation, &acq).unwrap()));
    g.bench_function("pe-noesy", |b| b.iter(|| run_2d(&pe, &s.system, &s.relaxation, &acq).unwrap()));
    g.finish();
}

fn mixing(c: &mut Criterion) {
    let s = sample();
    let rho = noesy::oracle::equilibrium(3).unwrap();
    let ideal = filtered_mixing();
    let mut full = ideal.clone();
    if let Some(f) = full.zq_filter.as_mut() {
        f.mode = FilterMode::FullChirp;
    }
    let mut g = c.benchmark_group("mixing");
    g.sample_size(10);
    g.bench_function("ideal_slices", |b| b.iter(|| mixing_period(black_box(&rho), &s.system, &ideal).unwrap()));
    g.bench_function("zq_filter_full_chirp", |b| {
        b.iter(|| apply_zq_filter(black_box(&rho), &s.system, full.zq_filter.as_ref().unwrap()).unwrap())
    });
    g.finish();
}

fn processing(c: &mut Criterion) {
    let s = sample();
    let raw = run_2d(&build_noesy_zqf(filtered_mixing()), &s.system, &s.relaxation, &small_acquisition()).unwrap();
    let params = ProcessingParams::default();
    c.bench_function("process_2d", |b| b.iter(|| process_2d(black_box(&raw), &params).unwrap()));
}

fn parsing(c: &mut Criterion) {
    let text = serialize_program(&build_pe_noesy_zqf(filtered_mixing()));
    c.bench_function("parse_program", |b| b.iter(|| parse_program(black_box(&text)).unwrap()));
}

criterion_group!(benches, acquisition, mixing, processing, parsing);
criterion_main!(benches);
