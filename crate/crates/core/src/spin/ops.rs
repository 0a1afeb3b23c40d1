//! Spin-1/2 product operators in the Zeeman basis.
//!
//! Basis index bit `n - 1 - i` holds the state of spin `i` (0 = alpha,
//! m = +1/2; 1 = beta, m = -1/2), so operator matrices follow the usual
//! `I_1 (x) I_2 (x) ...` Kronecker ordering.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Cartesian component of a single-spin operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

#[inline]
pub fn dim(n_spins: usize) -> usize {
    1usize << n_spins
}

#[inline]
pub(crate) fn bit(n_spins: usize, spin: usize) -> usize {
    1usize << (n_spins - 1 - spin)
}

/// Magnetic quantum number m_i of `spin` in basis state `state`.
#[inline]
pub fn m_of(n_spins: usize, state: usize, spin: usize) -> f64 {
    if state & bit(n_spins, spin) == 0 {
        0.5
    } else {
        -0.5
    }
}

/// Total M = sum_i m_i, doubled so it stays integral.
#[inline]
pub(crate) fn twice_total_m(n_spins: usize, state: usize) -> i32 {
    n_spins as i32 - 2 * state.count_ones() as i32
}

/// Coherence order bridged by element (row, col).
#[inline]
pub fn coherence_order(n_spins: usize, row: usize, col: usize) -> i32 {
    (twice_total_m(n_spins, row) - twice_total_m(n_spins, col)) / 2
}

pub fn iz(n_spins: usize, spin: usize) -> CMatrix {
    let d = dim(n_spins);
    CMatrix::from_fn(d, d, |r, c| {
        if r == c {
            Complex64::new(m_of(n_spins, r, spin), 0.0)
        } else {
            ZERO
        }
    })
}

/// Raising operator I_i^+.
pub fn iplus(n_spins: usize, spin: usize) -> CMatrix {
    let d = dim(n_spins);
    let b = bit(n_spins, spin);
    CMatrix::from_fn(d, d, |r, c| {
        if c & b != 0 && r == c ^ b {
            ONE
        } else {
            ZERO
        }
    })
}

pub fn iminus(n_spins: usize, spin: usize) -> CMatrix {
    iplus(n_spins, spin).adjoint()
}

pub fn ix(n_spins: usize, spin: usize) -> CMatrix {
    (iplus(n_spins, spin) + iminus(n_spins, spin)) * Complex64::new(0.5, 0.0)
}

pub fn iy(n_spins: usize, spin: usize) -> CMatrix {
    (iplus(n_spins, spin) - iminus(n_spins, spin)) * Complex64::new(0.0, -0.5)
}

pub fn single(n_spins: usize, spin: usize, axis: Axis) -> CMatrix {
    match axis {
        Axis::X => ix(n_spins, spin),
        Axis::Y => iy(n_spins, spin),
        Axis::Z => iz(n_spins, spin),
    }
}

/// Sum over all spins of one Cartesian component (F_x, F_y, F_z).
pub fn total(n_spins: usize, axis: Axis) -> CMatrix {
    let d = dim(n_spins);
    (0..n_spins).fold(CMatrix::zeros(d, d), |acc, s| acc + single(n_spins, s, axis))
}

/// Normalised product operator 2^(k-1) * prod I_{i,a} over the `k` factors,
/// e.g. `product(2, &[(0, Axis::Y), (1, Axis::Z)])` is 2 I_1y I_2z.
pub fn product(n_spins: usize, factors: &[(usize, Axis)]) -> CMatrix {
    let d = dim(n_spins);
    let mut out = CMatrix::identity(d, d);
    for &(s, a) in factors {
        out *= single(n_spins, s, a);
    }
    if factors.len() > 1 {
        out *= Complex64::new(2f64.powi(factors.len() as i32 - 1), 0.0);
    }
    out
}

/// Hilbert-Schmidt inner product Tr(A^dagger B).
pub fn inner(a: &CMatrix, b: &CMatrix) -> Complex64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Coefficient of `basis` in `state` (orthogonal projection).
pub fn project(state: &CMatrix, basis: &CMatrix) -> Complex64 {
    inner(basis, state) / inner(basis, basis)
}
