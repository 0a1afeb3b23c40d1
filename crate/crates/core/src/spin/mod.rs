//! Spin systems, Hamiltonians, propagators and density states.
//!
//! Conventions used throughout the crate:
//!
//! - Hamiltonians are in rad/s; offsets and couplings are stored in Hz.
//! - A pulse of flip angle theta and phase phi is `exp(-i theta (F_x cos phi + F_y sin phi))`,
//!   so a 90 degree x pulse takes I_z to -I_y.
//! - Density states are deviation density matrices with I_z = diag(1/2, -1/2).
//! - Free evolution is `rho -> U rho U^dagger` with `U = exp(-i H t)`; an
//!   offset of +Omega therefore rotates I_x towards I_y.

pub mod ops;

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use ops::{Axis, CMatrix};

pub const MAX_SPINS: usize = 6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingModel {
    /// Secular `2 pi J I_iz I_jz` coupling only.
    #[default]
    Weak,
    /// Full isotropic `2 pi J I_i . I_j` coupling.
    Strong,
}

/// A small network of coupled spin-1/2 nuclei.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpinSystem {
    shifts: Vec<f64>,
    couplings: Vec<Vec<f64>>,
    t2: Vec<f64>,
    coupling_model: CouplingModel,
}

impl SpinSystem {
    /// Builds a validated system. `couplings` must be symmetric with a zero
    /// diagonal; `t2` entries must be positive (`f64::INFINITY` allowed).
    pub fn new(
        shifts: Vec<f64>,
        couplings: Vec<Vec<f64>>,
        t2: Vec<f64>,
        coupling_model: CouplingModel,
    ) -> Result<Self> {
        let n = shifts.len();
        if n == 0 || n > MAX_SPINS {
            return Err(Error::InvalidSpinSystem(format!(
                "spin count {n} outside 1..={MAX_SPINS}"
            )));
        }
        if couplings.len() != n || couplings.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidSpinSystem(format!(
                "coupling matrix must be {n}x{n}"
            )));
        }
        if t2.len() != n {
            return Err(Error::InvalidSpinSystem(format!("expected {n} T2 values")));
        }
        if shifts.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidSpinSystem("non-finite shift".into()));
        }
        for i in 0..n {
            if couplings[i][i] != 0.0 {
                return Err(Error::InvalidSpinSystem(format!(
                    "spin {} has a self-coupling",
                    i + 1
                )));
            }
            for j in 0..n {
                let v = couplings[i][j];
                if !v.is_finite() || v != couplings[j][i] {
                    return Err(Error::InvalidSpinSystem(format!(
                        "coupling matrix not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        if t2.iter().any(|&t| t.is_nan() || t <= 0.0) {
            return Err(Error::InvalidSpinSystem("T2 must be > 0".into()));
        }
        Ok(Self {
            shifts,
            couplings,
            t2,
            coupling_model,
        })
    }

    /// Weakly coupled system with infinite T2 and the given pairwise couplings
    /// `(i, j, J_Hz)` (0-based indices).
    pub fn weak(shifts: &[f64], couplings: &[(usize, usize, f64)]) -> Result<Self> {
        let n = shifts.len();
        let mut j = vec![vec![0.0; n]; n];
        for &(a, b, v) in couplings {
            if a >= n || b >= n {
                return Err(Error::InvalidSpinSystem(format!(
                    "coupling index ({a}, {b}) out of range"
                )));
            }
            j[a][b] = v;
            j[b][a] = v;
        }
        Self::new(shifts.to_vec(), j, vec![f64::INFINITY; n], CouplingModel::Weak)
    }

    pub fn with_t2(mut self, t2: &[f64]) -> Result<Self> {
        self.t2 = t2.to_vec();
        Self::new(self.shifts, self.couplings, self.t2, self.coupling_model)
    }

    pub fn with_uniform_t2(self, t2: f64) -> Result<Self> {
        let n = self.n_spins();
        self.with_t2(&vec![t2; n])
    }

    pub fn with_coupling_model(mut self, model: CouplingModel) -> Self {
        self.coupling_model = model;
        self
    }

    pub fn n_spins(&self) -> usize {
        self.shifts.len()
    }

    pub fn dim(&self) -> usize {
        ops::dim(self.n_spins())
    }

    pub fn shifts(&self) -> &[f64] {
        &self.shifts
    }

    pub fn shift(&self, i: usize) -> f64 {
        self.shifts[i]
    }

    pub fn coupling(&self, i: usize, j: usize) -> f64 {
        self.couplings[i][j]
    }

    pub fn couplings(&self) -> &[Vec<f64>] {
        &self.couplings
    }

    pub fn t2(&self) -> &[f64] {
        &self.t2
    }

    pub fn coupling_model(&self) -> CouplingModel {
        self.coupling_model
    }

    /// Largest frequency scale present (Hz): |offset| plus the sum of |J|.
    pub fn max_frequency(&self) -> f64 {
        let shift = self.shifts.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        let j: f64 = self.couplings.iter().flatten().map(|v| v.abs()).sum::<f64>() / 2.0;
        shift + j
    }

    /// Hamiltonian in rad/s.
    pub fn hamiltonian(&self, include_couplings: bool) -> Hamiltonian {
        let n = self.n_spins();
        let d = self.dim();
        let diag: Vec<f64> = (0..d)
            .map(|s| {
                let mut e = 0.0;
                for i in 0..n {
                    let mi = ops::m_of(n, s, i);
                    e += self.shifts[i] * mi;
                    if include_couplings {
                        for j in (i + 1)..n {
                            e += self.couplings[i][j] * mi * ops::m_of(n, s, j);
                        }
                    }
                }
                2.0 * PI * e
            })
            .collect();
        let strong = include_couplings
            && self.coupling_model == CouplingModel::Strong
            && self.couplings.iter().flatten().any(|&v| v != 0.0);
        if !strong {
            return Hamiltonian::Diagonal(diag);
        }
        // Flip-flop part 2 pi J (I_x I_x + I_y I_y) = pi J (I+ I- + I- I+).
        let mut h = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            d,
            diag.iter().map(|&e| Complex64::new(e, 0.0)),
        ));
        for i in 0..n {
            for j in (i + 1)..n {
                let jij = self.couplings[i][j];
                if jij == 0.0 {
                    continue;
                }
                let (bi, bj) = (ops::bit(n, i), ops::bit(n, j));
                for s in 0..d {
                    // states where spins i and j are antiparallel
                    if ((s & bi) == 0) != ((s & bj) == 0) {
                        let t = s ^ bi ^ bj;
                        h[(t, s)] += Complex64::new(PI * jij, 0.0);
                    }
                }
            }
        }
        Hamiltonian::Dense(h)
    }
}

/// A time-independent Hamiltonian (rad/s). Weak-coupling Hamiltonians are
/// diagonal in the Zeeman basis and kept that way.
#[derive(Clone, Debug)]
pub enum Hamiltonian {
    Diagonal(Vec<f64>),
    Dense(CMatrix),
}

impl Hamiltonian {
    pub fn dim(&self) -> usize {
        match self {
            Hamiltonian::Diagonal(d) => d.len(),
            Hamiltonian::Dense(m) => m.nrows(),
        }
    }

    pub fn to_matrix(&self) -> CMatrix {
        match self {
            Hamiltonian::Diagonal(d) => DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
                d.len(),
                d.iter().map(|&e| Complex64::new(e, 0.0)),
            )),
            Hamiltonian::Dense(m) => m.clone(),
        }
    }

    /// Eigen-decomposition `H = V diag(E) V^dagger`.
    pub fn eigen(&self) -> Eigen {
        match self {
            Hamiltonian::Diagonal(d) => Eigen {
                energies: d.clone(),
                vectors: None,
            },
            Hamiltonian::Dense(m) => {
                let eig = m.clone().symmetric_eigen();
                Eigen {
                    energies: eig.eigenvalues.iter().copied().collect(),
                    vectors: Some(eig.eigenvectors),
                }
            }
        }
    }

    /// `exp(-i H dur)`.
    pub fn propagator(&self, dur: f64) -> Result<Propagator> {
        check_duration(dur)?;
        Ok(self.eigen().propagator(dur))
    }
}

/// Eigenbasis of a Hamiltonian; `vectors == None` means the Zeeman basis.
#[derive(Clone, Debug)]
pub struct Eigen {
    pub energies: Vec<f64>,
    pub vectors: Option<CMatrix>,
}

impl Eigen {
    pub fn propagator(&self, dur: f64) -> Propagator {
        let phases: Vec<Complex64> = self
            .energies
            .iter()
            .map(|&e| Complex64::from_polar(1.0, -e * dur))
            .collect();
        let d = phases.len();
        let matrix = match &self.vectors {
            None => CMatrix::from_fn(d, d, |r, c| if r == c { phases[r] } else { Complex64::new(0.0, 0.0) }),
            Some(v) => {
                let mut scaled = v.clone();
                for (c, p) in phases.iter().enumerate() {
                    for r in 0..d {
                        scaled[(r, c)] *= p;
                    }
                }
                scaled * v.adjoint()
            }
        };
        Propagator { matrix }
    }
}

pub(crate) fn check_duration(dur: f64) -> Result<()> {
    if dur.is_nan() || dur < 0.0 {
        Err(Error::NegativeDuration(dur))
    } else {
        Ok(())
    }
}

/// A unitary evolution operator.
#[derive(Clone, Debug, PartialEq)]
pub struct Propagator {
    matrix: CMatrix,
}

impl Propagator {
    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: CMatrix::identity(dim, dim),
        }
    }

    /// Wraps a matrix the caller guarantees to be unitary.
    pub fn from_matrix(matrix: CMatrix) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "propagator must be square");
        Self { matrix }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// The propagator for "self, then `next`", i.e. `next * self`.
    pub fn then(&self, next: &Propagator) -> Propagator {
        Propagator {
            matrix: &next.matrix * &self.matrix,
        }
    }

    pub fn adjoint(&self) -> Propagator {
        Propagator {
            matrix: self.matrix.adjoint(),
        }
    }

    /// Frobenius norm of `U U^dagger - 1`.
    pub fn unitarity_error(&self) -> f64 {
        let d = self.dim();
        (&self.matrix * self.matrix.adjoint() - CMatrix::identity(d, d)).norm()
    }

    pub fn is_diagonal(&self) -> bool {
        self.matrix
            .iter()
            .enumerate()
            .all(|(k, v)| k % (self.dim() + 1) == 0 || *v == Complex64::new(0.0, 0.0))
    }
}

/// Free-precession propagator `exp(-i H dur)` under offsets and couplings.
pub fn free_propagator(sys: &SpinSystem, dur: f64) -> Result<Propagator> {
    sys.hamiltonian(true).propagator(dur)
}

/// Free evolution under the offsets only (couplings switched off).
pub fn shift_propagator(sys: &SpinSystem, dur: f64) -> Result<Propagator> {
    sys.hamiltonian(false).propagator(dur)
}

/// `(cos, sin)` of a phase quadrant, exact.
pub fn quadrant_cos_sin(quadrant: u8) -> (f64, f64) {
    match quadrant % 4 {
        0 => (1.0, 0.0),
        1 => (0.0, 1.0),
        2 => (-1.0, 0.0),
        _ => (0.0, -1.0),
    }
}

/// `exp(i q pi/2)`, exact.
pub fn quadrant_phasor(quadrant: u8) -> Complex64 {
    let (c, s) = quadrant_cos_sin(quadrant);
    Complex64::new(c, s)
}

fn half_angle_cos_sin(flip_deg: f64) -> (f64, f64) {
    // exact values where the half angle is a multiple of 90 degrees
    let half = flip_deg / 2.0;
    if half.fract() == 0.0 && (half as i64) % 90 == 0 {
        let q = ((half as i64 / 90).rem_euclid(4)) as u8;
        return quadrant_cos_sin(q);
    }
    let h = half.to_radians();
    (h.cos(), h.sin())
}

/// Non-selective rotation of every spin about an axis in the xy-plane.
pub fn rotation_propagator(n_spins: usize, flip_deg: f64, cos_phi: f64, sin_phi: f64) -> Propagator {
    let (c, s) = half_angle_cos_sin(flip_deg);
    // single-spin exp(-i theta (cos phi I_x + sin phi I_y))
    let off_lower = Complex64::new(0.0, -s) * Complex64::new(cos_phi, sin_phi);
    let off_upper = Complex64::new(0.0, -s) * Complex64::new(cos_phi, -sin_phi);
    let r = [
        [Complex64::new(c, 0.0), off_upper],
        [off_lower, Complex64::new(c, 0.0)],
    ];
    let d = ops::dim(n_spins);
    let matrix = CMatrix::from_fn(d, d, |row, col| {
        let mut v = Complex64::new(1.0, 0.0);
        for spin in 0..n_spins {
            let b = ops::bit(n_spins, spin);
            let (ri, ci) = (usize::from(row & b != 0), usize::from(col & b != 0));
            v *= r[ri][ci];
        }
        v
    });
    Propagator { matrix }
}

/// Hard pulse of `flip_deg` with phase quadrant 0..3 = x, y, -x, -y.
pub fn hard_pulse_propagator(sys: &SpinSystem, flip_deg: f64, phase_quadrant: u8) -> Propagator {
    let (c, s) = quadrant_cos_sin(phase_quadrant);
    rotation_propagator(sys.n_spins(), flip_deg, c, s)
}

/// Deviation density matrix of a spin ensemble.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityState {
    matrix: CMatrix,
    n_spins: usize,
}

impl DensityState {
    pub fn new(matrix: CMatrix, n_spins: usize) -> Result<Self> {
        let d = ops::dim(n_spins);
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: matrix.nrows(),
            });
        }
        Ok(Self { matrix, n_spins })
    }

    pub fn zeros(n_spins: usize) -> Self {
        let d = ops::dim(n_spins);
        Self {
            matrix: CMatrix::zeros(d, d),
            n_spins,
        }
    }

    /// Thermal equilibrium, sum_i I_iz.
    pub fn equilibrium(n_spins: usize) -> Self {
        Self {
            matrix: ops::total(n_spins, Axis::Z),
            n_spins,
        }
    }

    /// Equilibrium scaled per spin, sum_i m_i I_iz.
    pub fn longitudinal(magnetizations: &[f64]) -> Self {
        let n = magnetizations.len();
        let d = ops::dim(n);
        let matrix = CMatrix::from_fn(d, d, |r, c| {
            if r != c {
                return Complex64::new(0.0, 0.0);
            }
            let v: f64 = (0..n).map(|i| magnetizations[i] * ops::m_of(n, r, i)).sum();
            Complex64::new(v, 0.0)
        });
        Self { matrix, n_spins: n }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut CMatrix {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn n_spins(&self) -> usize {
        self.n_spins
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> Complex64 {
        self.matrix.trace()
    }

    pub fn norm(&self) -> f64 {
        self.matrix.norm()
    }

    /// Frobenius norm of `rho - rho^dagger`.
    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).norm()
    }

    pub fn distance(&self, other: &DensityState) -> f64 {
        (&self.matrix - &other.matrix).norm()
    }

    pub fn scaled(&self, k: f64) -> DensityState {
        DensityState {
            matrix: &self.matrix * Complex64::new(k, 0.0),
            n_spins: self.n_spins,
        }
    }

    pub fn add(&self, other: &DensityState) -> DensityState {
        DensityState {
            matrix: &self.matrix + &other.matrix,
            n_spins: self.n_spins,
        }
    }

    pub fn sub(&self, other: &DensityState) -> DensityState {
        DensityState {
            matrix: &self.matrix - &other.matrix,
            n_spins: self.n_spins,
        }
    }

    /// Keeps the elements for which `keep(row, col)` holds, zeroing the rest.
    pub fn filtered(&self, keep: impl Fn(usize, usize) -> bool) -> DensityState {
        let d = self.dim();
        let matrix = CMatrix::from_fn(d, d, |r, c| {
            if keep(r, c) {
                self.matrix[(r, c)]
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        DensityState {
            matrix,
            n_spins: self.n_spins,
        }
    }

    /// Component with coherence order `p`.
    pub fn order(&self, p: i32) -> DensityState {
        let n = self.n_spins;
        self.filtered(|r, c| ops::coherence_order(n, r, c) == p)
    }

    /// Diagonal part (populations / longitudinal order).
    pub fn populations(&self) -> DensityState {
        self.filtered(|r, c| r == c)
    }

    /// Off-diagonal p = 0 part (zero-quantum coherence).
    pub fn zero_quantum(&self) -> DensityState {
        let n = self.n_spins;
        self.filtered(|r, c| r != c && ops::coherence_order(n, r, c) == 0)
    }

    /// Everything with p = 0 (populations plus ZQ).
    pub fn p0(&self) -> DensityState {
        self.order(0)
    }

    /// Coefficients of the single-spin I_iz operators.
    pub fn z_magnetizations(&self) -> Vec<f64> {
        (0..self.n_spins)
            .map(|i| ops::project(&self.matrix, &ops::iz(self.n_spins, i)).re)
            .collect()
    }
}

/// `rho -> U rho U^dagger`.
pub fn evolve(state: &DensityState, u: &Propagator) -> Result<DensityState> {
    if u.dim() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: u.dim(),
        });
    }
    let matrix = if u.is_diagonal() {
        let d = state.dim();
        CMatrix::from_fn(d, d, |r, c| {
            u.matrix[(r, r)] * state.matrix[(r, c)] * u.matrix[(c, c)].conj()
        })
    } else {
        &u.matrix * &state.matrix * u.matrix.adjoint()
    };
    Ok(DensityState {
        matrix,
        n_spins: state.n_spins,
    })
}

/// Relaxation rate (1/s) of element (row, col): mean of 1/T2 over the spins
/// whose single-spin state differs between the two basis states.
pub fn t2_rate(sys: &SpinSystem, row: usize, col: usize) -> f64 {
    let n = sys.n_spins();
    let diff = row ^ col;
    if diff == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        if diff & ops::bit(n, i) != 0 {
            sum += 1.0 / sys.t2[i];
            count += 1;
        }
    }
    sum / count as f64
}

/// Phenomenological transverse decay over `dur`; populations are untouched.
pub fn apply_t2_decay(state: &DensityState, sys: &SpinSystem, dur: f64) -> Result<DensityState> {
    check_duration(dur)?;
    if state.n_spins != sys.n_spins() {
        return Err(Error::DimensionMismatch {
            expected: sys.dim(),
            got: state.dim(),
        });
    }
    if dur == 0.0 {
        return Ok(state.clone());
    }
    let d = state.dim();
    let matrix = CMatrix::from_fn(d, d, |r, c| {
        let rate = t2_rate(sys, r, c);
        if rate == 0.0 {
            state.matrix[(r, c)]
        } else {
            state.matrix[(r, c)] * (-dur * rate).exp()
        }
    });
    Ok(DensityState {
        matrix,
        n_spins: state.n_spins,
    })
}

/// Quadrature signal `Tr(rho F+)` with `F+ = sum_i I_i^+`.
pub fn detect(state: &DensityState) -> Complex64 {
    let n = state.n_spins;
    let d = state.dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for a in 0..d {
        for i in 0..n {
            let b = ops::bit(n, i);
            if a & b != 0 {
                // (F+)_{a^b, a} = 1 contributes rho_{a, a^b}
                acc += state.matrix[(a, a ^ b)];
            }
        }
    }
    acc
}

/// A density state split by coherence order.
#[derive(Clone, Debug)]
pub struct CoherenceDecomposition {
    pub components: BTreeMap<i32, DensityState>,
    pub populations: DensityState,
    pub zero_quantum: DensityState,
}

impl CoherenceDecomposition {
    pub fn reconstruct(&self) -> DensityState {
        let mut it = self.components.values();
        let first = it.next().expect("at least one order").clone();
        it.fold(first, |acc, c| acc.add(c))
    }

    pub fn order(&self, p: i32) -> Option<&DensityState> {
        self.components.get(&p)
    }
}

pub fn coherence_decompose(state: &DensityState) -> CoherenceDecomposition {
    let n = state.n_spins as i32;
    let components = (-n..=n).map(|p| (p, state.order(p))).collect();
    CoherenceDecomposition {
        components,
        populations: state.populations(),
        zero_quantum: state.zero_quantum(),
    }
}
