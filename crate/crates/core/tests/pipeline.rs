use noesy::dsl::{parse_program, parse_spin_system, serialize_program, serialize_spin_system};
use noesy::experiment::{compare, cross_peak_windows, mixing, simulate, ComparisonSetup, Sample};
use noesy::processing::{compare_cross_peak, process_2d, PeakWindow, ProcessingParams};
use noesy::sequence::{build_noesy_zqf, build_pe_noesy_zqf, run_2d};
use noesy::{AcquisitionParams, RelaxationMatrix, SpinSystem, ZqFilterSpec};

fn small_acq() -> AcquisitionParams {
    AcquisitionParams {
        n_t1: 32,
        t1_max: 0.032,
        n_t2: 64,
        t2_max: 0.064,
        ..AcquisitionParams::default()
    }
}

fn noe_pair(j: f64, t2: f64) -> Sample {
    let sys = SpinSystem::weak(&[-150.0, 220.0], &[(0, 1, j)])
        .unwrap()
        .with_uniform_t2(t2)
        .unwrap();
    let r = RelaxationMatrix::from_pairs(0.5, 2, &[(0, 1, -0.3)]).unwrap();
    Sample::new(sys, r).unwrap()
}

#[test]
fn dsl_rendition_simulates_like_builtin() {
    let sample = noe_pair(8.0, 0.3);
    let mix = mixing(0.1, Some(ZqFilterSpec::standard()));
    for built in [build_noesy_zqf(mix.clone()), build_pe_noesy_zqf(mix.clone())] {
        let parsed = parse_program(&serialize_program(&built)).unwrap();
        let a = run_2d(&built, &sample.system, &sample.relaxation, &small_acq()).unwrap();
        let b = run_2d(&parsed, &sample.system, &sample.relaxation, &small_acq()).unwrap();
        assert!(a.max_abs_difference(&b) < 1e-12);
    }
}

#[test]
fn spin_file_golden_round_trip() {
    let text = include_str!("golden/benchmark.spin");
    let (sys, r) = parse_spin_system(text).unwrap();
    let bench = Sample::benchmark();
    assert_eq!(sys, bench.system);
    assert_eq!(r, bench.relaxation);
    assert_eq!(serialize_spin_system(&sys, &r), text);
}

#[test]
fn degenerate_sequences_give_unit_ratio() {
    // J = 0 and T2 = inf: the sequences differ only by a t1 phase the
    // reference phasing removes
    let sample = noe_pair(0.0, f64::INFINITY);
    let setup = ComparisonSetup {
        mixing: mixing(0.1, None),
        acquisition: small_acq(),
        processing: ProcessingParams::default(),
    };
    let c = compare(&sample, &setup, &cross_peak_windows(&sample.system, 40.0)).unwrap();
    for w in &c.windows {
        assert!((w.comparison.ratio - 1.0).abs() < 1e-6, "{}: {}", w.label, w.comparison.ratio);
    }
}

#[test]
fn identical_spectra_compare_to_one() {
    let sample = noe_pair(8.0, 0.3);
    let s = simulate(&build_noesy_zqf(mixing(0.1, None)), &sample, &small_acq(), &ProcessingParams::default())
        .unwrap()
        .spectrum;
    let c = compare_cross_peak(&s, &s, &PeakWindow::around(-150.0, 220.0, 40.0)).unwrap();
    assert_eq!(c.ratio, 1.0);
}

#[test]
fn offsets_land_on_the_same_f1_in_both_sequences() {
    let sys = SpinSystem::weak(&[-210.0, 90.0], &[]).unwrap();
    let sample = Sample::new(sys, RelaxationMatrix::zero(2)).unwrap();
    let acq = AcquisitionParams {
        n_t1: 64,
        t1_max: 0.128,
        ..small_acq()
    };
    for prog in [build_noesy_zqf(mixing(0.05, None)), build_pe_noesy_zqf(mixing(0.05, None))] {
        let s = simulate(&prog, &sample, &acq, &ProcessingParams::default()).unwrap().spectrum;
        for shift in [-210.0, 90.0] {
            let r = noesy::experiment::peak(&s, shift, shift, 30.0).unwrap();
            assert!((r.center.0 - shift).abs() <= s.f1.step, "{:?}: {} vs {shift}", s.kind, r.center.0);
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let sample = noe_pair(8.0, 0.3);
    let prog = build_pe_noesy_zqf(mixing(0.1, Some(ZqFilterSpec::standard())));
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let raw = run_2d(&prog, &sample.system, &sample.relaxation, &small_acq()).unwrap();
                let spec = process_2d(&raw, &ProcessingParams::default()).unwrap();
                (raw, noesy::processing::to_f32_bytes(&spec))
            })
    };
    let (raw1, bytes1) = run(1);
    let (raw4, bytes4) = run(4);
    assert_eq!(raw1, raw4);
    assert_eq!(bytes1, bytes4);
}
