//! Small dense linear-algebra helpers shared by the solvers.
//!
//! Real matrices are `Array2<f64>`, complex ones `Array2<c64>`. Factorizations
//! go through faer.

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::Side;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
pub use num_complex::Complex64 as c64;

use crate::error::{Error, Result};

pub type Mat = Array2<f64>;
pub type CMat = Array2<c64>;

/// Relative floor under which negative eigenvalues of a PSD input are
/// treated as round-off and clamped to zero.
pub const PSD_CLAMP: f64 = 1e-8;

pub fn to_complex(m: &ArrayView2<'_, f64>) -> CMat {
    m.mapv(|x| c64::new(x, 0.0))
}

pub fn eye_c(n: usize) -> CMat {
    Array2::from_diag_elem(n, c64::new(1.0, 0.0))
}

pub fn frobenius(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn frobenius_real(m: &ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn trace_c(m: &CMat) -> c64 {
    m.diag().sum()
}

fn faer_real(m: &ArrayView2<'_, f64>) -> faer::Mat<f64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn faer_complex(m: &CMat) -> faer::Mat<c64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn backend<E: std::fmt::Debug>(e: E) -> Error {
    Error::Linalg(format!("{e:?}"))
}

/// Largest singular value.
pub fn spectral_norm(m: &CMat) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let sv = faer_complex(m).singular_values().map_err(backend)?;
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

pub fn spectral_norm_real(m: &ArrayView2<'_, f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let sv = faer_real(m).singular_values().map_err(backend)?;
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

/// Hermitian imaginary part `(M - M^*) / 2i`, which is again stored complex.
pub fn imag_part(m: &CMat) -> CMat {
    let mh = m.t().mapv(|z| z.conj());
    (m - &mh).mapv(|z| z / c64::new(0.0, 2.0))
}

/// Smallest eigenvalue of a Hermitian matrix (the lower triangle is read).
pub fn min_eig_hermitian(m: &CMat) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let vals = faer_complex(m).self_adjoint_eigenvalues(Side::Lower).map_err(backend)?;
    Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
}

pub fn min_eig_symmetric(m: &ArrayView2<'_, f64>) -> Result<f64> {
    if m.is_empty() {
        return Ok(0.0);
    }
    let vals = faer_real(m).self_adjoint_eigenvalues(Side::Lower).map_err(backend)?;
    Ok(vals.iter().cloned().fold(f64::INFINITY, f64::min))
}

/// LU inverse with partial pivoting; a non-finite result is reported as singular.
pub fn inverse_c(m: &CMat, context: &'static str) -> Result<CMat> {
    let inv = faer_complex(m).partial_piv_lu().inverse();
    let out = Array2::from_shape_fn((inv.nrows(), inv.ncols()), |(i, j)| inv[(i, j)]);
    if out.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::Singular(context));
    }
    Ok(out)
}

/// Solve `m x = b` for symmetric positive definite `m` by Cholesky.
pub fn solve_spd(m: &Mat, b: &ArrayView1<'_, f64>, context: &'static str) -> Result<Array1<f64>> {
    if m.nrows() != m.ncols() || m.nrows() != b.len() {
        return Err(Error::Shape(format!(
            "cannot solve {}x{} system against {} entries",
            m.nrows(),
            m.ncols(),
            b.len()
        )));
    }
    if b.is_empty() {
        return Ok(Array1::zeros(0));
    }
    let llt = faer_real(&m.view()).llt(Side::Lower).map_err(|_| Error::Singular(context))?;
    let rhs = faer::Mat::from_fn(b.len(), 1, |i, _| b[i]);
    let x = llt.solve(&rhs);
    let out: Array1<f64> = (0..b.len()).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(context));
    }
    Ok(out)
}

/// Inverse of a symmetric positive definite matrix by Cholesky.
pub fn inverse_spd(m: &Mat, context: &'static str) -> Result<Mat> {
    let n = m.nrows();
    if n != m.ncols() {
        return Err(Error::Shape(format!("expected a square matrix, got {}x{}", n, m.ncols())));
    }
    let llt = faer_real(&m.view()).llt(Side::Lower).map_err(|_| Error::Singular(context))?;
    let inv = llt.inverse();
    let out = Array2::from_shape_fn((n, n), |(i, j)| inv[(i, j)]);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(context));
    }
    Ok(out)
}

pub fn symmetrize(m: &mut Mat) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// `max |m_ij - m_ji|` relative to `max |m_ij|`.
pub fn asymmetry(m: &ArrayView2<'_, f64>) -> f64 {
    let scale = m.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0f64;
    for i in 0..m.nrows() {
        for j in (i + 1)..m.ncols() {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst / scale
}

/// Eigendecomposition of a symmetric PSD matrix with eigenvalues sorted in
/// descending order; tiny negative eigenvalues are clamped to zero.
#[derive(Debug, Clone)]
pub struct PsdEigen {
    pub values: Array1<f64>,
    /// Columns are the eigenvectors matching `values`.
    pub vectors: Mat,
}

impl PsdEigen {
    pub fn new(m: &ArrayView2<'_, f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Shape(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("symmetric eigendecomposition input"));
        }
        let n = m.nrows();
        if n == 0 {
            return Ok(Self {
                values: Array1::zeros(0),
                vectors: Array2::zeros((0, 0)),
            });
        }
        let evd = faer_real(m).self_adjoint_eigen(Side::Lower).map_err(backend)?;
        let (s, u) = (evd.S().column_vector(), evd.U());
        let vals: Vec<f64> = (0..n).map(|i| s[i]).collect();
        let max = vals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -PSD_CLAMP * max {
            return Err(Error::NegativeEigenvalue { value: min, max });
        }
        // faer returns ascending order.
        let values: Array1<f64> = vals.iter().rev().map(|&v| v.max(0.0)).collect();
        let vectors = Array2::from_shape_fn((n, n), |(i, j)| u[(i, n - 1 - j)]);
        Ok(Self { values, vectors })
    }

    pub fn max(&self) -> f64 {
        self.values.first().copied().unwrap_or(0.0)
    }

    /// `U f(Λ) U^T`.
    pub fn apply(&self, f: impl Fn(f64) -> f64) -> Mat {
        let scaled = &self.vectors * &self.values.mapv(f).insert_axis(Axis(0));
        scaled.dot(&self.vectors.t())
    }

    pub fn sqrt(&self) -> Mat {
        self.apply(f64::sqrt)
    }
}

/// Embed a block into a larger complex matrix at `(row, col)`.
pub fn put_block(dst: &mut CMat, row: usize, col: usize, block: &CMat) {
    dst.slice_mut(s![row..row + block.nrows(), col..col + block.ncols()])
        .assign(block);
}

pub fn block(m: &CMat, rows: std::ops::Range<usize>, cols: std::ops::Range<usize>) -> CMat {
    m.slice(s![rows, cols]).to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn psd_eigen_sorts_descending_and_reconstructs() {
        let m = array![[2.0, 1.0], [1.0, 2.0]];
        let e = PsdEigen::new(&m.view()).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        let back = e.apply(|x| x);
        assert!((&back - &m).iter().all(|d| d.abs() < 1e-13));
        let r = e.sqrt();
        assert!((r.dot(&r) - &m).iter().all(|d| d.abs() < 1e-13));
    }

    #[test]
    fn psd_eigen_clamps_round_off_and_rejects_real_negatives() {
        let tiny = array![[1.0, 0.0], [0.0, -1e-12]];
        let e = PsdEigen::new(&tiny.view()).unwrap();
        assert_eq!(e.values[1], 0.0);
        let bad = array![[1.0, 0.0], [0.0, -1e-3]];
        assert!(matches!(
            PsdEigen::new(&bad.view()),
            Err(Error::NegativeEigenvalue { .. })
        ));
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let m = array![[c64::new(0.0, 3.0), c64::new(0.0, 0.0)], [c64::new(0.0, 0.0), c64::new(-1.0, 0.0)]];
        assert!((spectral_norm(&m).unwrap() - 3.0).abs() < 1e-14);
    }

    #[test]
    fn imag_part_is_hermitian() {
        let m = array![[c64::new(1.0, 2.0), c64::new(0.5, -1.0)], [c64::new(3.0, 0.25), c64::new(0.0, -4.0)]];
        let im = imag_part(&m);
        assert!((im[[0, 0]] - c64::new(2.0, 0.0)).norm() < 1e-15);
        assert!((im[[0, 1]] - im[[1, 0]].conj()).norm() < 1e-15);
    }
}
