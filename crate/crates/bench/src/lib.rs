//! Shared fixtures for the benchmarks.

use noesy::experiment::{mixing, Sample};
use noesy::{AcquisitionParams, MixingSpec, ZqFilterSpec};

/// A reduced acquisition that keeps one iteration under a second.
pub fn small_acquisition() -> AcquisitionParams {
    AcquisitionParams {
        n_t1: 16,
        t1_max: 0.016,
        n_t2: 128,
        t2_max: 0.128,
        ..AcquisitionParams::default()
    }
}

pub fn filtered_mixing() -> MixingSpec {
    mixing(noesy::experiment::BENCHMARK_TAU_M, Some(ZqFilterSpec::standard()))
}

pub fn sample() -> Sample {
    Sample::benchmark()
}
