//! Small dense linear-algebra helpers on complex Hermitian matrices.
//!
//! Everything here works on `DMatrix<Complex<f64>>`. Determinants are
//! returned in log form (log-magnitude plus phase) so that products of many
//! eigenvalues in [0,1] neither overflow nor underflow.

use nalgebra::DVector;
use num_complex::Complex;

use crate::{C64, CMatrix, Error, RVector};

/// Replace `m` by its Hermitian part `(m + m^dag)/2`, returning the maximum
/// elementwise drift `|m - m^dag|` that was removed.
pub fn hermitize(m: &mut CMatrix) -> f64 {
    let n = m.nrows();
    let mut drift = 0.0_f64;
    for i in 0..n {
        drift = drift.max(m[(i, i)].im.abs());
        m[(i, i)] = Complex::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let a = m[(i, j)];
            let b = m[(j, i)].conj();
            drift = drift.max((a - b).norm());
            let avg = 0.5 * (a + b);
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
    drift
}

/// Maximum elementwise deviation from Hermiticity.
pub fn hermiticity_drift(m: &CMatrix) -> f64 {
    let mut drift = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            drift = drift.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    drift
}

/// Eigendecomposition of a Hermitian matrix with eigenvalues sorted
/// ascending. Returns `(u, lambda)` with `m = u diag(lambda) u^dag`.
pub fn herm_eigen(m: &CMatrix) -> (CMatrix, RVector) {
    let mut h = m.clone();
    hermitize(&mut h);
    let eig = h.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut u = CMatrix::zeros(n, n);
    let mut lambda = DVector::zeros(n);
    for (dst, &src) in order.iter().enumerate() {
        lambda[dst] = eig.eigenvalues[src];
        u.set_column(dst, &eig.eigenvectors.column(src));
    }
    (u, lambda)
}

/// Complex determinant in log form: returns `(log|det|, arg(det))`.
///
/// Gaussian elimination with partial pivoting; the log of the absolute
/// pivots is accumulated instead of their product. A structurally singular
/// matrix gives `log|det| = -inf`.
pub fn log_det(m: &CMatrix) -> (f64, f64) {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "log_det needs a square matrix");
    let mut a = m.clone();
    let mut log_abs = 0.0_f64;
    let mut phase = 0.0_f64;
    for col in 0..n {
        let mut pivot_row = col;
        let mut pivot_mag = a[(col, col)].norm();
        for row in (col + 1)..n {
            let mag = a[(row, col)].norm();
            if mag > pivot_mag {
                pivot_mag = mag;
                pivot_row = row;
            }
        }
        if pivot_mag == 0.0 {
            return (f64::NEG_INFINITY, 0.0);
        }
        if pivot_row != col {
            a.swap_rows(pivot_row, col);
            phase += std::f64::consts::PI; // row swap flips the sign
        }
        let pivot = a[(col, col)];
        log_abs += pivot.norm().ln();
        phase += pivot.arg();
        for row in (col + 1)..n {
            let factor = a[(row, col)] / pivot;
            if factor.norm() == 0.0 {
                continue;
            }
            for k in (col + 1)..n {
                let sub = factor * a[(col, k)];
                a[(row, k)] -= sub;
            }
        }
    }
    (log_abs, rem_two_pi(phase))
}

/// Determinant of a matrix known to be real and nonnegative up to numerical
/// residue (e.g. probabilities expressed as functional determinants).
///
/// Returns the log of the determinant; fails if the phase indicates a
/// genuinely complex or negative value beyond `tol`.
pub fn log_det_real_nonneg(m: &CMatrix, tol: f64) -> Result<f64, Error> {
    let (log_abs, phase) = log_det(m);
    if log_abs == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sin = phase.sin().abs();
    let cos = phase.cos();
    if sin > tol || cos < 0.0 {
        return Err(Error::ImaginaryResidue(sin.max((1.0 - cos).abs())));
    }
    Ok(log_abs)
}

fn rem_two_pi(phase: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut p = phase % tau;
    if p > std::f64::consts::PI {
        p -= tau;
    } else if p < -std::f64::consts::PI {
        p += tau;
    }
    p
}

/// Principal square root of a Hermitian PSD matrix; eigenvalues are floored
/// at zero before the root.
pub fn sqrt_psd(m: &CMatrix) -> CMatrix {
    let (u, lambda) = herm_eigen(m);
    let n = lambda.len();
    let mut scaled = u.clone();
    for j in 0..n {
        let root = lambda[j].max(0.0).sqrt();
        for i in 0..n {
            scaled[(i, j)] *= Complex::new(root, 0.0);
        }
    }
    &scaled * u.adjoint()
}

/// `tr(a b)` without forming the product.
pub fn trace_prod(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            acc += a[(i, j)] * b[(j, i)];
        }
    }
    acc
}

/// Maximum elementwise magnitude.
pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Number of reals needed to pack an `n x n` complex matrix.
pub fn packed_len(n: usize) -> usize {
    2 * n * n
}

/// Serialize a complex matrix into a flat real slice (re, im pairs in
/// column-major order).
pub fn pack_cmatrix(m: &CMatrix, out: &mut [f64]) {
    debug_assert_eq!(out.len(), packed_len(m.nrows()));
    for (i, z) in m.iter().enumerate() {
        out[2 * i] = z.re;
        out[2 * i + 1] = z.im;
    }
}

/// Inverse of [`pack_cmatrix`].
pub fn unpack_cmatrix(data: &[f64], m: &mut CMatrix) {
    debug_assert_eq!(data.len(), packed_len(m.nrows()));
    for (i, z) in m.iter_mut().enumerate() {
        z.re = data[2 * i];
        z.im = data[2 * i + 1];
    }
}
