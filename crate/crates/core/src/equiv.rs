//! Deterministic equivalent of the random-features ridge test error.
//!
//! The scalar `alpha` solves `alpha = -(1 + sum_j l_j / (delta - d alpha l_j))^{-1}`
//! over the spectrum `l_j` of `K_aa`. Everything else is closed form in
//! `alpha` and `M11 = (delta I - d alpha K_aa)^{-1}`.

use ndarray::{Array1, ArrayView1, Axis};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::KernelSet;
use crate::linalg::{self, c64, CMat, Mat, PsdEigen};

pub const SCALAR_TOL: f64 = 1e-13;
pub const SCALAR_MAX_ITER: usize = 100_000;
pub const MATRIX_TOL: f64 = 1e-10;
pub const MATRIX_MAX_ITER: usize = 10_000;
pub const DENOM_GUARD: f64 = 1e-8;
const DAMPING: f64 = 0.5;
const OSCILLATION_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaSolution {
    pub alpha: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Spectrum of `K_aa`, descending, clamped at zero.
    pub eigenvalues: Vec<f64>,
}

/// The scalar map `T`.
pub fn alpha_map(eigenvalues: &[f64], d: usize, delta: f64, alpha: f64) -> f64 {
    let da = d as f64 * alpha;
    let s: f64 = eigenvalues.iter().map(|&l| l / (delta - da * l)).sum();
    -1.0 / (1.0 + s)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "delta must be positive and finite, got {delta}"
        )));
    }
    Ok(())
}

fn check_d(d: usize) -> Result<()> {
    if d == 0 {
        return Err(Error::InvalidArgument("d must be at least 1".into()));
    }
    Ok(())
}

pub fn solve_alpha(k_aa: &Mat, d: usize, delta: f64, tol: f64, max_iter: usize) -> Result<AlphaSolution> {
    let eig = PsdEigen::new(&k_aa.view())?;
    solve_alpha_from(eig.values.as_slice().unwrap(), d, delta, -1.0, tol, max_iter)
}

/// Picard iteration of [`alpha_map`] from `alpha0 <= 0`.
pub fn solve_alpha_from(
    eigenvalues: &[f64],
    d: usize,
    delta: f64,
    alpha0: f64,
    tol: f64,
    max_iter: usize,
) -> Result<AlphaSolution> {
    check_delta(delta)?;
    check_d(d)?;
    if !(alpha0 <= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "starting point must be non-positive, got {alpha0}"
        )));
    }
    let mut alpha = alpha0;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        let next = alpha_map(eigenvalues, d, delta, alpha);
        if !next.is_finite() {
            return Err(Error::NonFinite("alpha iteration"));
        }
        let step = (next - alpha).abs();
        alpha = next;
        if step <= tol {
            residual = (alpha - alpha_map(eigenvalues, d, delta, alpha)).abs();
            if residual <= tol {
                return Ok(AlphaSolution {
                    alpha,
                    iterations: it,
                    residual,
                    eigenvalues: eigenvalues.to_vec(),
                });
            }
        } else {
            residual = step;
        }
    }
    Err(Error::NonConvergence {
        what: "alpha fixed point",
        iterations: max_iter,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivSolution {
    pub alpha: f64,
    pub m11: Mat,
    pub beta: f64,
    pub denom: f64,
    pub effective_ridge: f64,
    pub predicted_error: f64,
    pub term_variance: f64,
    pub term_bias: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl Serialize for EquivSolution {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Report {
            alpha: f64,
            beta: f64,
            denom: f64,
            effective_ridge: f64,
            predicted_error: f64,
            term_variance: f64,
            term_bias: f64,
            iterations: usize,
            residual: f64,
        }
        Report {
            alpha: self.alpha,
            beta: self.beta,
            denom: self.denom,
            effective_ridge: self.effective_ridge,
            predicted_error: self.predicted_error,
            term_variance: self.term_variance,
            term_bias: self.term_bias,
            iterations: self.iterations,
            residual: self.residual,
        }
        .serialize(s)
    }
}

fn check_labels(k: &KernelSet, y: &ArrayView1<'_, f64>, yhat: &ArrayView1<'_, f64>) -> Result<()> {
    if y.len() != k.n_train() || yhat.len() != k.n_test() {
        return Err(Error::Shape(format!(
            "labels have lengths ({}, {}) but kernels expect ({}, {})",
            y.len(),
            yhat.len(),
            k.n_train(),
            k.n_test()
        )));
    }
    Ok(())
}

pub fn build_equiv(
    k: &KernelSet,
    y: &ArrayView1<'_, f64>,
    yhat: &ArrayView1<'_, f64>,
    d: usize,
    delta: f64,
    tol: f64,
) -> Result<EquivSolution> {
    check_labels(k, y, yhat)?;
    let eig = PsdEigen::new(&k.k_aa.view())?;
    let sol = solve_alpha_from(eig.values.as_slice().unwrap(), d, delta, -1.0, tol, SCALAR_MAX_ITER)?;
    let alpha = sol.alpha;
    let df = d as f64;
    let da = df * alpha;

    // M11 = U diag(m) U^T with m_j = 1 / (delta - d alpha l_j)
    let m: Array1<f64> = eig.values.mapv(|l| 1.0 / (delta - da * l));
    let m11 = eig.apply(|l| 1.0 / (delta - da * l));

    let denom = 1.0 - df * alpha * alpha * crate::report::compensated_sum(
        eig.values.iter().zip(m.iter()).map(|(l, mj)| l * l * mj * mj),
    );
    if !(denom > DENOM_GUARD) {
        return Err(Error::DenominatorDegenerate {
            denom,
            guard: DENOM_GUARD,
        });
    }

    // tr(K_ha M (I + delta M) K_ah) = tr(M (I + delta M) K_ah K_ha)
    let g = m11.dot(&k.k_ah);
    let inner = &g + &(m11.dot(&g) * delta);
    let cross: f64 = (&inner * &k.k_ah).sum();
    let trace = k.k_hh.diag().sum() + da * cross;
    let beta = (alpha * alpha * trace / denom).max(0.0);

    // ||K^{1/2} M y||^2 = sum_j l_j m_j^2 (u_j^T y)^2
    let proj = eig.vectors.t().dot(y);
    let kmy = crate::report::compensated_sum(
        eig.values
            .iter()
            .zip(m.iter())
            .zip(proj.iter())
            .map(|((l, mj), p)| l * mj * mj * p * p),
    );
    let term_variance = df * beta * kmy;

    let my = m11.dot(y);
    let resid = k.k_ha.dot(&my) * da + yhat;
    let term_bias = resid.dot(&resid);

    let effective_ridge = -delta / alpha;
    Ok(EquivSolution {
        alpha,
        m11,
        beta,
        denom,
        effective_ridge,
        predicted_error: term_variance + term_bias,
        term_variance,
        term_bias,
        iterations: sol.iterations,
        residual: sol.residual,
    })
}

/// The block matrix `M(0)` in the layout `(n_train, d, n_test, n_test)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockM0 {
    pub m11: Mat,
    /// `M22 = alpha I_d`.
    pub m22_scalar: f64,
    pub m13: Mat,
    pub m31: Mat,
    pub m33: Mat,
    pub d: usize,
}

impl BlockM0 {
    pub fn dim(&self) -> usize {
        self.m11.nrows() + self.d + 2 * self.m33.nrows()
    }

    /// Dense `M(0)`, including the `-I` blocks at (3,4) and (4,3).
    pub fn full(&self) -> Mat {
        let (nt, d, ns) = (self.m11.nrows(), self.d, self.m33.nrows());
        let (o2, o3, o4) = (nt, nt + d, nt + d + ns);
        let mut out = Mat::zeros((self.dim(), self.dim()));
        out.slice_mut(ndarray::s![..nt, ..nt]).assign(&self.m11);
        for i in 0..d {
            out[[o2 + i, o2 + i]] = self.m22_scalar;
        }
        out.slice_mut(ndarray::s![..nt, o3..o4]).assign(&self.m13);
        out.slice_mut(ndarray::s![o3..o4, ..nt]).assign(&self.m31);
        out.slice_mut(ndarray::s![o3..o4, o3..o4]).assign(&self.m33);
        for i in 0..ns {
            out[[o3 + i, o4 + i]] = -1.0;
            out[[o4 + i, o3 + i]] = -1.0;
        }
        out
    }
}

pub fn assemble_m0(k: &KernelSet, alpha: f64, d: usize, delta: f64, tol: f64) -> Result<BlockM0> {
    check_delta(delta)?;
    check_d(d)?;
    let eig = PsdEigen::new(&k.k_aa.view())?;
    let da = d as f64 * alpha;
    let m11 = eig.apply(|l| 1.0 / (delta - da * l));
    let tr: f64 = eig.values.iter().map(|&l| l / (delta - da * l)).sum();
    let residual = (alpha + 1.0 / (1.0 + tr)).abs();
    if !(residual <= 10.0 * tol) {
        return Err(Error::InconsistentAlpha { residual });
    }
    let m13 = m11.dot(&k.k_ah) * (-da);
    let m31 = k.k_ha.dot(&m11) * (-da);
    let m33 = k.k_ha.dot(&m11).dot(&k.k_ah) * (da * da) + &k.k_hh * da;
    Ok(BlockM0 {
        m11,
        m22_scalar: alpha,
        m13,
        m31,
        m33,
        d,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubDelOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Set to false to drop the self-energy term (testing only).
    pub self_energy: bool,
}

impl Default for SubDelOptions {
    fn default() -> Self {
        Self {
            tol: MATRIX_TOL,
            max_iter: MATRIX_MAX_ITER,
            self_energy: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubDelSolution {
    pub m11: CMat,
    pub m22_scalar: c64,
    pub iterations: usize,
    pub residual: f64,
    pub damped: bool,
}

fn check_z(z: c64) -> Result<()> {
    if !(z.im > 0.0 || z == c64::new(0.0, 0.0)) || !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "spectral parameter must satisfy Im z > 0 or z = 0, got {z}"
        )));
    }
    Ok(())
}

pub fn solve_subdel(k_aa: &Mat, d: usize, delta: f64, z: c64, tol: f64, max_iter: usize) -> Result<SubDelSolution> {
    solve_subdel_with(
        k_aa,
        d,
        delta,
        z,
        SubDelOptions {
            tol,
            max_iter,
            self_energy: true,
        },
    )
}

/// Picard iteration of `N -> (E L_sub - S_sub(N) - z I)^{-1}` on the upper-left
/// `(n_train + d)` block of the linearization. The iterate stays block diagonal
/// with a scalar lower block, so it is stored as `(N11, n22)`.
pub fn solve_subdel_with(k_aa: &Mat, d: usize, delta: f64, z: c64, opts: SubDelOptions) -> Result<SubDelSolution> {
    check_delta(delta)?;
    check_d(d)?;
    check_z(z)?;
    let n = k_aa.nrows();
    let kc = linalg::to_complex(&k_aa.view());
    let df = d as f64;
    let eye = linalg::eye_c(n);
    let one = c64::new(1.0, 0.0);
    let se = if opts.self_energy { 1.0 } else { 0.0 };

    let lhs11 = |n22: c64| -> CMat { &eye * (c64::new(delta, 0.0) - z) - &kc * (n22 * df * se) };
    let lhs22 = |n11: &CMat| -> c64 { -one - z - (&kc * &n11.t()).sum() * se };
    let apply = |n11: &CMat, n22: c64| -> Result<(CMat, c64)> {
        let a = linalg::inverse_c(&lhs11(n22), "sub-DEL update")?;
        let b = lhs22(n11);
        if b.norm() == 0.0 {
            return Err(Error::Singular("sub-DEL scalar update"));
        }
        Ok((a, one / b))
    };

    let start_shift = if z.im > 0.0 { c64::new(0.0, 1.0) } else { c64::new(0.0, 0.0) };
    let mut n11 = &eye * (one + start_shift);
    let mut n22 = -one + start_shift;
    let mut steps: Vec<f64> = Vec::new();
    let mut damped = false;
    let mut last_step = f64::INFINITY;

    for it in 1..=opts.max_iter {
        let (f11, f22) = apply(&n11, n22)?;
        let (new11, new22) = if damped {
            (&n11 * (1.0 - DAMPING) + &f11 * DAMPING, n22 * (1.0 - DAMPING) + f22 * DAMPING)
        } else {
            (f11, f22)
        };
        let step = (linalg::frobenius(&(&new11 - &n11)).powi(2) + df * (new22 - n22).norm_sqr()).sqrt();
        n11 = new11;
        n22 = new22;
        if !step.is_finite() {
            return Err(Error::NonFinite("sub-DEL iteration"));
        }
        if z.im > 0.0 {
            let min_eig = linalg::min_eig_hermitian(&linalg::imag_part(&n11))?.min(n22.im);
            if min_eig < -1e-10 {
                return Err(Error::HalfPlane { min_eig });
            }
        }
        steps.push(step);
        if !damped && steps.len() > OSCILLATION_WINDOW && step > steps[steps.len() - 1 - OSCILLATION_WINDOW] {
            damped = true;
        }
        // geometric tail estimate of the remaining error
        let rate = if last_step.is_finite() && last_step > 0.0 { (step / last_step).min(0.999_999) } else { 0.5 };
        let tail = step * rate / (1.0 - rate);
        last_step = step;
        if step <= opts.tol && tail <= opts.tol {
            let r11 = lhs11(n22).dot(&n11) - &eye;
            let r22 = lhs22(&n11) * n22 - one;
            let residual = (linalg::frobenius(&r11).powi(2) + df * r22.norm_sqr()).sqrt();
            return Ok(SubDelSolution {
                m11: n11,
                m22_scalar: n22,
                iterations: it,
                residual,
                damped,
            });
        }
    }
    Err(Error::NonConvergence {
        what: "sub-DEL iteration",
        iterations: opts.max_iter,
        residual: last_step,
    })
}

/// `||yhat - d K_ha (d K_aa + ridge I)^{-1} y||^2`.
pub fn kernel_ridge_error(
    k: &KernelSet,
    y: &ArrayView1<'_, f64>,
    yhat: &ArrayView1<'_, f64>,
    d: usize,
    ridge: f64,
) -> Result<f64> {
    check_labels(k, y, yhat)?;
    check_d(d)?;
    if !(ridge > 0.0) {
        return Err(Error::InvalidArgument(format!("ridge must be positive, got {ridge}")));
    }
    let df = d as f64;
    let mut sys = &k.k_aa * df;
    for i in 0..sys.nrows() {
        sys[[i, i]] += ridge;
    }
    let coef = linalg::solve_spd(&sys, y, "kernel ridge system")?;
    let r = yhat - &(k.k_ha.dot(&coef) * df);
    Ok(r.dot(&r))
}

/// Solution of the full RF Dyson equation `(E L - S(M) - z Lambda) M = I` for
/// `Im z > 0` or `z = 0`, in the layout `(n_train, d, n_test, n_test)`.
///
/// The scalar `m22` is found on the spectrum of `K_aa`; the remaining blocks
/// are closed form.
pub fn rf_dyson_solution(k: &KernelSet, d: usize, delta: f64, z: c64) -> Result<CMat> {
    check_delta(delta)?;
    check_d(d)?;
    check_z(z)?;
    let eig = PsdEigen::new(&k.k_aa.view())?;
    let df = d as f64;
    let one = c64::new(1.0, 0.0);
    let dz = c64::new(delta, 0.0) - z;
    let map = |m22: c64| -> c64 {
        let t = m22 * df;
        let s: c64 = eig.values.iter().map(|&l| l / (dz - t * l)).sum();
        -one / (one + z + s)
    };
    let mut m22 = if z.im > 0.0 { c64::new(-1.0, 1.0) } else { -one };
    let mut prev = f64::INFINITY;
    let mut hist: Vec<f64> = Vec::new();
    let mut damped = false;
    let mut converged = false;
    for _ in 0..SCALAR_MAX_ITER {
        let f = map(m22);
        let next = if damped { m22 * (1.0 - DAMPING) + f * DAMPING } else { f };
        let step = (next - m22).norm();
        m22 = next;
        hist.push(step);
        if !damped && hist.len() > OSCILLATION_WINDOW && step > hist[hist.len() - 1 - OSCILLATION_WINDOW] {
            damped = true;
        }
        let rate = if prev.is_finite() && prev > 0.0 { (step / prev).min(0.999_999) } else { 0.5 };
        prev = step;
        if step <= SCALAR_TOL && step * rate / (1.0 - rate) <= SCALAR_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            what: "RF Dyson scalar iteration",
            iterations: SCALAR_MAX_ITER,
            residual: prev,
        });
    }
    let t = m22 * df;
    let uc = linalg::to_complex(&eig.vectors.view());
    let diag: Array1<c64> = eig.values.mapv(|l| one / (dz - t * l));
    let m11 = (&uc * &diag.insert_axis(Axis(0))).dot(&uc.t());
    let kah = linalg::to_complex(&k.k_ah.view());
    let kha = linalg::to_complex(&k.k_ha.view());
    let khh = linalg::to_complex(&k.k_hh.view());
    let m13 = m11.dot(&kah) * (-t);
    let m31 = kha.dot(&m11) * (-t);
    let m33 = kha.dot(&m11).dot(&kah) * (t * t) + &khh * t;

    let (nt, ns) = (k.n_train(), k.n_test());
    let (o2, o3, o4) = (nt, nt + d, nt + d + ns);
    let ell = o4 + ns;
    let mut out = CMat::zeros((ell, ell));
    linalg::put_block(&mut out, 0, 0, &m11);
    for i in 0..d {
        out[[o2 + i, o2 + i]] = m22;
    }
    linalg::put_block(&mut out, 0, o3, &m13);
    linalg::put_block(&mut out, o3, 0, &m31);
    linalg::put_block(&mut out, o3, o3, &m33);
    for i in 0..ns {
        out[[o3 + i, o4 + i]] = -one;
        out[[o4 + i, o3 + i]] = -one;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn toy_kernels(c_ah: f64) -> KernelSet {
        KernelSet::new(Mat::eye(2), array![[c_ah], [0.0]], array![[c_ah, 0.0]], Mat::eye(1), 0).unwrap()
    }

    #[test]
    fn zero_kernel_gives_minus_one_in_one_step() {
        let s = solve_alpha(&Mat::zeros((3, 3)), 5, 0.3, SCALAR_TOL, SCALAR_MAX_ITER).unwrap();
        assert_eq!(s.alpha, -1.0);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn toy_instance_alpha_and_terms() {
        let k = toy_kernels(0.0);
        let y = array![1.0, 0.0];
        let yhat = array![0.7];
        let e = build_equiv(&k, &y.view(), &yhat.view(), 2, 1.0, SCALAR_TOL).unwrap();
        assert!((e.alpha + 0.5).abs() < 1e-12);
        assert!((e.denom - 0.75).abs() < 1e-12);
        assert!((e.beta - 1.0 / 3.0).abs() < 1e-12);
        assert!((e.term_variance - 1.0 / 6.0).abs() < 1e-12);
        assert!((e.term_bias - 0.49).abs() < 1e-12);
        assert!((&e.m11 - &(Mat::eye(2) * 0.5)).iter().all(|v| v.abs() < 1e-12));
        assert!((e.effective_ridge - 2.0).abs() < 1e-12);
    }

    #[test]
    fn m0_blocks_on_toy() {
        let k = toy_kernels(0.3);
        let b = assemble_m0(&k, -0.5, 2, 1.0, SCALAR_TOL).unwrap();
        assert!((&b.m13 - &(&k.k_ah * 0.5)).iter().all(|v| v.abs() < 1e-14));
        assert!(matches!(
            assemble_m0(&k, -0.4, 2, 1.0, SCALAR_TOL),
            Err(Error::InconsistentAlpha { .. })
        ));
        assert_eq!(b.full().dim(), (2 + 2 + 2, 2 + 2 + 2));
    }

    #[test]
    fn subdel_without_self_energy_is_plain_inverse() {
        let k = Mat::eye(2) * 0.7;
        let z = c64::new(0.2, 1.0);
        let s = solve_subdel_with(&k, 3, 0.5, z, SubDelOptions { self_energy: false, ..Default::default() }).unwrap();
        let expect = c64::new(1.0, 0.0) / (c64::new(0.5, 0.0) - z);
        assert!((s.m11[[0, 0]] - expect).norm() < 1e-14);
        assert!((s.m22_scalar - c64::new(1.0, 0.0) / (c64::new(-1.0, 0.0) - z)).norm() < 1e-14);
    }

    #[test]
    fn subdel_matches_scalar_route_at_zero() {
        let s = solve_subdel(&Mat::eye(2), 2, 1.0, c64::new(0.0, 0.0), MATRIX_TOL, MATRIX_MAX_ITER).unwrap();
        assert!((s.m22_scalar - c64::new(-0.5, 0.0)).norm() < 10.0 * MATRIX_TOL);
    }

    #[test]
    fn kernel_ridge_matches_bias() {
        let k = toy_kernels(0.4);
        let y = array![1.0, -2.0];
        let yhat = array![0.3];
        let e = build_equiv(&k, &y.view(), &yhat.view(), 2, 1.0, SCALAR_TOL).unwrap();
        let kr = kernel_ridge_error(&k, &y.view(), &yhat.view(), 2, e.effective_ridge).unwrap();
        assert!((kr - e.term_bias).abs() <= 1e-12 * e.term_bias.abs().max(1.0));
    }

    #[test]
    fn dyson_solution_m22_matches_alpha_at_zero() {
        let k = toy_kernels(0.2);
        let m = rf_dyson_solution(&k, 2, 1.0, c64::new(0.0, 0.0)).unwrap();
        assert!((m[[2, 2]] - c64::new(-0.5, 0.0)).norm() < 1e-12);
        assert!((m[[0, 0]] - c64::new(0.5, 0.0)).norm() < 1e-12);
    }
}
