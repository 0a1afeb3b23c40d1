//! Liquid-state spin-dynamics engine for comparing the zero-quantum filtered
//! NOESY experiment with its perfect-echo variant.
//!
//! The crate is organised bottom-up:
//!
//! - [`spin`]: spin systems, Hamiltonians, propagators, detection and
//!   coherence-order bookkeeping on deviation density matrices.
//! - [`relax`]: the mixing period (Solomon cross-relaxation, zero-quantum
//!   evolution and the swept-chirp zero-quantum filter).
//! - [`sequence`]: pulse programs, the two built-in sequences, phase cycling
//!   and States-TPPI 2D acquisition.
//! - [`dsl`]: the `.pseq` / `.spin` text formats.
//! - [`processing`]: hypercomplex 2D Fourier processing and peak metrics.
//! - [`oracle`]: a brute-force time-sliced integrator used to cross-check the
//!   engine.
//! - [`experiment`]: the comparison harness shared by the CLI and tests.

pub mod dsl;
pub mod error;
pub mod experiment;
pub mod oracle;
pub mod processing;
pub mod relax;
pub mod sequence;
pub mod spin;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use relax::{ChirpSpec, FilterMode, MixingSpec, RelaxationMatrix, ZqFilterSpec};
pub use sequence::{AcquisitionParams, PulseProgram, Raw2D, SequenceKind};
pub use spin::{CouplingModel, DensityState, Propagator, SpinSystem};
