//! Small dense helpers shared by the numerical modules.

use nalgebra::{Complex, DMatrix, DVector, Schur, SymmetricEigen};

use crate::Scalar;

/// Largest absolute entry, zero for an empty matrix.
pub fn max_abs<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()))
}

/// Relative tolerance used for symmetry checks: `1e-12`, widened to a few
/// machine epsilons for low-precision scalars.
pub fn symmetry_tolerance<T: Scalar>() -> T {
    T::lit(1e-12).max(T::default_epsilon() * T::lit(16.0))
}

pub fn is_square<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.nrows() == m.ncols()
}

pub fn is_symmetric<T: Scalar>(m: &DMatrix<T>) -> bool {
    if !is_square(m) {
        return false;
    }
    let tol = symmetry_tolerance::<T>() * max_abs(m);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Every eigenvalue of the symmetric part strictly positive.
pub fn is_positive_definite<T: Scalar>(m: &DMatrix<T>) -> bool {
    if !is_square(m) || m.nrows() == 0 {
        return false;
    }
    let sym = (m + m.transpose()) * T::lit(0.5);
    let eig = SymmetricEigen::new(sym);
    eig.eigenvalues.iter().all(|&l| l > T::zero())
}

pub fn is_diagonal<T: Scalar>(m: &DMatrix<T>) -> bool {
    if !is_square(m) {
        return false;
    }
    m.iter()
        .enumerate()
        .all(|(idx, v)| idx % m.nrows() == idx / m.nrows() || *v == T::zero())
}

pub fn all_finite<T: Scalar>(m: &DMatrix<T>) -> bool {
    m.iter().all(|v| v.is_finite())
}

/// Block-diagonal matrix built from square blocks.
pub fn block_diagonal<T: Scalar>(blocks: &[DMatrix<T>]) -> DMatrix<T> {
    let size: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(size, size);
    let mut at = 0;
    for b in blocks {
        out.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(b);
        at += b.nrows();
    }
    out
}

/// `diag(d) * m` without forming the diagonal matrix.
pub fn scale_rows<T: Scalar>(d: &DVector<T>, m: &DMatrix<T>) -> DMatrix<T> {
    let mut out = m.clone();
    for (i, mut row) in out.row_iter_mut().enumerate() {
        row *= d[i];
    }
    out
}

/// `m * diag(d)` without forming the diagonal matrix.
pub fn scale_cols<T: Scalar>(m: &DMatrix<T>, d: &DVector<T>) -> DMatrix<T> {
    let mut out = m.clone();
    for (j, mut col) in out.column_iter_mut().enumerate() {
        col *= d[j];
    }
    out
}

/// Quadratic form `xᵀ M x`.
pub fn quad_form<T: Scalar>(m: &DMatrix<T>, x: &DVector<T>) -> T {
    x.dot(&(m * x))
}

/// Eigenvalues of a real square matrix via the real Schur form, sorted by
/// descending real part and then descending imaginary part. Returns `None`
/// when the QR iteration does not converge.
pub fn sorted_eigenvalues<T: Scalar>(m: &DMatrix<T>) -> Option<Vec<Complex<T>>> {
    let schur = Schur::try_new(m.clone(), T::default_epsilon(), 10_000)?;
    let mut eig: Vec<Complex<T>> = schur.complex_eigenvalues().iter().cloned().collect();
    eig.sort_by(|a, b| {
        b.re.partial_cmp(&a.re)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.im.partial_cmp(&a.im).unwrap_or(std::cmp::Ordering::Equal))
    });
    Some(eig)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius<T: Scalar>(m: &DMatrix<T>) -> Option<T> {
    let eig = sorted_eigenvalues(m)?;
    Some(eig.iter().fold(T::zero(), |acc, z| {
        acc.max((z.re * z.re + z.im * z.im).sqrt())
    }))
}

/// Neumaier-compensated running sum.
#[derive(Clone, Copy, Debug, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = CompensatedSum::default();
        for v in iter {
            s.add(v);
        }
        s
    }
}
