//! Regularized Dyson equation for linearizations.
//!
//! Given `E L`, a partial identity `Lambda` and a positivity-preserving linear
//! superoperator `S`, [`solve_rdel`] finds the fixed point of
//! `M -> (E L - S(M) - z Lambda - i tau I)^{-1}` by Picard iteration.

use std::fmt;
use std::sync::Arc;

use ndarray::{s, Array1};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::KernelSet;
use crate::linalg::{self, c64, CMat, Mat};
use crate::rng;

pub const RDEL_TOL: f64 = 1e-10;
pub const RDEL_MAX_ITER: usize = 10_000;
pub const LINEARITY_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;
/// Imaginary-part floor accepted for solver output.
pub const IMAG_TOL: f64 = 1e-8;

/// Linear map on complex `dim x dim` matrices.
pub trait SuperOperator: Send + Sync {
    fn dim(&self) -> usize;
    fn apply(&self, m: &CMat) -> CMat;
}

#[derive(Debug, Clone, Copy)]
pub struct ZeroSuperoperator(pub usize);

impl SuperOperator for ZeroSuperoperator {
    fn dim(&self) -> usize {
        self.0
    }
    fn apply(&self, _m: &CMat) -> CMat {
        CMat::zeros((self.0, self.0))
    }
}

/// Wraps a closure as a superoperator.
pub struct FnSuperoperator<F> {
    dim: usize,
    f: F,
}

impl<F> FnSuperoperator<F>
where
    F: Fn(&CMat) -> CMat + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> SuperOperator for FnSuperoperator<F>
where
    F: Fn(&CMat) -> CMat + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, m: &CMat) -> CMat {
        (self.f)(m)
    }
}

/// Block sizes `(n_train, d, n_test)` of the RF linearization; the layout is
/// `(n_train, d, n_test, n_test)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RfDims {
    pub n_train: usize,
    pub d: usize,
    pub n_test: usize,
}

impl RfDims {
    pub fn ell(&self) -> usize {
        self.n_train + self.d + 2 * self.n_test
    }
    fn offsets(&self) -> (usize, usize, usize) {
        let o2 = self.n_train;
        let o3 = o2 + self.d;
        (o2, o3, o3 + self.n_test)
    }
}

/// Superoperator of the RF linearization. With `t = tr(M22)` it places
/// `t K` on the (1,1), (1,4), (4,1), (4,4) blocks and
/// `rho(M) = tr(K_aa M11 + K_ah M41 + K_ha M14 + K_hh M44)` times `I_d` on (2,2).
#[derive(Debug, Clone)]
pub struct RfSuperoperator {
    dims: RfDims,
    k_aa: CMat,
    k_ah: CMat,
    k_ha: CMat,
    k_hh: CMat,
}

pub fn rf_superoperator(k: &KernelSet, dims: RfDims) -> Result<RfSuperoperator> {
    if k.n_train() != dims.n_train || k.n_test() != dims.n_test || dims.d == 0 {
        return Err(Error::Shape(format!(
            "superoperator dims {:?} do not match kernels ({} train, {} test)",
            dims,
            k.n_train(),
            k.n_test()
        )));
    }
    Ok(RfSuperoperator {
        dims,
        k_aa: linalg::to_complex(&k.k_aa.view()),
        k_ah: linalg::to_complex(&k.k_ah.view()),
        k_ha: linalg::to_complex(&k.k_ha.view()),
        k_hh: linalg::to_complex(&k.k_hh.view()),
    })
}

/// `tr(A B)` without forming the product.
fn trace_prod(a: &CMat, b: ndarray::ArrayView2<'_, c64>) -> c64 {
    (a * &b.t()).sum()
}

impl SuperOperator for RfSuperoperator {
    fn dim(&self) -> usize {
        self.dims.ell()
    }

    fn apply(&self, m: &CMat) -> CMat {
        let nt = self.dims.n_train;
        let (o2, o3, o4) = self.dims.offsets();
        let ell = self.dims.ell();
        let t: c64 = m.slice(s![o2..o3, o2..o3]).diag().sum();
        let rho = trace_prod(&self.k_aa, m.slice(s![..nt, ..nt]))
            + trace_prod(&self.k_ah, m.slice(s![o4.., ..nt]))
            + trace_prod(&self.k_ha, m.slice(s![..nt, o4..]))
            + trace_prod(&self.k_hh, m.slice(s![o4.., o4..]));
        let mut out = CMat::zeros((ell, ell));
        linalg::put_block(&mut out, 0, 0, &(&self.k_aa * t));
        linalg::put_block(&mut out, 0, o4, &(&self.k_ah * t));
        linalg::put_block(&mut out, o4, 0, &(&self.k_ha * t));
        linalg::put_block(&mut out, o4, o4, &(&self.k_hh * t));
        for i in o2..o3 {
            out[[i, i]] = rho;
        }
        out
    }
}

/// `E L`, the `Lambda` mask and the superoperator of a linearization.
#[derive(Clone)]
pub struct LinearizationSpec {
    expectation: Mat,
    lambda_mask: Vec<bool>,
    superop: Arc<dyn SuperOperator>,
}

impl fmt::Debug for LinearizationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LinearizationSpec")
            .field("dim", &self.dim())
            .field("lambda_rank", &self.lambda_mask.iter().filter(|&&b| b).count())
            .finish()
    }
}

impl LinearizationSpec {
    pub fn new(expectation: Mat, lambda_mask: Vec<bool>, superop: Arc<dyn SuperOperator>) -> Result<Self> {
        let ell = expectation.nrows();
        if expectation.ncols() != ell || lambda_mask.len() != ell || superop.dim() != ell {
            return Err(Error::Shape(format!(
                "expectation {:?}, mask length {}, superoperator dim {}",
                expectation.dim(),
                lambda_mask.len(),
                superop.dim()
            )));
        }
        if !lambda_mask.iter().any(|&b| b) {
            return Err(Error::InvalidArgument("lambda mask needs at least one entry".into()));
        }
        if expectation.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linearization expectation"));
        }
        let defect = linalg::asymmetry(&expectation.view());
        if defect > 1e-12 {
            return Err(Error::BlockMismatch {
                block: "expectation symmetry",
                defect,
            });
        }
        let spec = Self {
            expectation,
            lambda_mask,
            superop,
        };
        spec.probe_superoperator()?;
        Ok(spec)
    }

    /// The RF linearization with `E A = E Ahat = 0`.
    pub fn rf(k: &KernelSet, d: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
        }
        let dims = RfDims {
            n_train: k.n_train(),
            d,
            n_test: k.n_test(),
        };
        let sup = rf_superoperator(k, dims)?;
        let ell = dims.ell();
        let (o2, o3, o4) = dims.offsets();
        let mut el = Mat::zeros((ell, ell));
        for i in 0..o2 {
            el[[i, i]] = delta;
        }
        for i in o2..o3 {
            el[[i, i]] = -1.0;
        }
        for i in 0..dims.n_test {
            el[[o3 + i, o4 + i]] = -1.0;
            el[[o4 + i, o3 + i]] = -1.0;
        }
        let mask = (0..ell).map(|i| i < o3).collect();
        Self::new(el, mask, Arc::new(sup))
    }

    pub fn dim(&self) -> usize {
        self.expectation.nrows()
    }

    pub fn expectation(&self) -> &Mat {
        &self.expectation
    }

    pub fn lambda_mask(&self) -> &[bool] {
        &self.lambda_mask
    }

    pub fn superop(&self) -> &dyn SuperOperator {
        self.superop.as_ref()
    }

    fn p_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.lambda_mask[i]).collect()
    }

    fn q_indices(&self) -> Vec<usize> {
        (0..self.dim()).filter(|&i| !self.lambda_mask[i]).collect()
    }

    fn probe_superoperator(&self) -> Result<()> {
        let ell = self.dim();
        let mut r = rng::stream(0x5eed_0f5a, "superop-probe", ell as u64);
        let random = |r: &mut rand_chacha::ChaCha8Rng| {
            CMat::from_shape_simple_fn((ell, ell), || c64::new(r.random::<f64>() - 0.5, r.random::<f64>() - 0.5))
        };
        for _ in 0..2 {
            let x = random(&mut r);
            let y = random(&mut r);
            let a = c64::new(r.random::<f64>() * 2.0 - 1.0, r.random::<f64>());
            let b = c64::new(r.random::<f64>() * 2.0 - 1.0, -r.random::<f64>());
            let lhs = self.superop.apply(&(&x * a + &y * b));
            let sx = self.superop.apply(&x);
            let sy = self.superop.apply(&y);
            let rhs = &sx * a + &sy * b;
            let scale = 1.0f64.max(linalg::frobenius(&sx)).max(linalg::frobenius(&sy));
            let defect = linalg::frobenius(&(&lhs - &rhs)) / scale;
            if !(defect <= LINEARITY_TOL) {
                return Err(Error::BrokenSuperoperator {
                    probe: "linearity",
                    defect,
                });
            }

            let g = random(&mut r);
            let p = g.dot(&g.t().mapv(|v| v.conj()));
            let sp = self.superop.apply(&p);
            let herm = (&sp + &sp.t().mapv(|v| v.conj())).mapv(|v| v * 0.5);
            let scale = 1.0f64.max(linalg::spectral_norm(&herm)?);
            let min = linalg::min_eig_hermitian(&herm)?;
            if min < -POSITIVITY_TOL * scale {
                return Err(Error::BrokenSuperoperator {
                    probe: "positivity",
                    defect: -min,
                });
            }
        }
        Ok(())
    }

    /// `E L - S(M) - z Lambda - i tau I`.
    fn shifted(&self, m: &CMat, z: c64, tau: f64) -> CMat {
        let mut a = linalg::to_complex(&self.expectation.view()) - self.superop.apply(m);
        for i in 0..self.dim() {
            let shift = if self.lambda_mask[i] { z } else { c64::new(0.0, 0.0) };
            a[[i, i]] -= shift + c64::new(0.0, tau);
        }
        a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsReport {
    /// Spectral norm of `M`.
    pub norm: f64,
    /// Spectral norm of the `Lambda` block of `M`.
    pub lambda_block_norm: f64,
    pub min_imag_eig: f64,
    pub norm_ok: bool,
    pub lambda_block_ok: bool,
    pub imag_ok: bool,
}

#[derive(Debug, Clone)]
pub struct RDELSolution {
    pub m: CMat,
    pub z: c64,
    pub tau: f64,
    pub residual: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Geometric mean residual ratio over the last quarter of iterations.
    pub rate: f64,
    pub bounds: BoundsReport,
}

impl RDELSolution {
    /// True when the residual is non-increasing over the last quarter of the run.
    pub fn tail_monotone(&self) -> bool {
        let h = &self.residual_history;
        let start = h.len() - h.len().div_ceil(4);
        h[start..].windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RdelOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RdelOptions {
    fn default() -> Self {
        Self {
            tol: RDEL_TOL,
            max_iter: RDEL_MAX_ITER,
        }
    }
}

pub fn solve_rdel(spec: &LinearizationSpec, z: c64, tau: f64, tol: f64, max_iter: usize) -> Result<RDELSolution> {
    solve_rdel_from(spec, z, tau, RdelOptions { tol, max_iter }, None)
}

/// Like [`solve_rdel`] but optionally warm-started from `start`.
pub fn solve_rdel_from(
    spec: &LinearizationSpec,
    z: c64,
    tau: f64,
    opts: RdelOptions,
    start: Option<&CMat>,
) -> Result<RDELSolution> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("tau must be positive, got {tau}")));
    }
    if !(z.im >= 0.0) || !z.re.is_finite() || !z.im.is_finite() {
        return Err(Error::InvalidArgument(format!("z must satisfy Im z >= 0, got {z}")));
    }
    let ell = spec.dim();
    let eye = linalg::eye_c(ell);
    let mut m = match start {
        Some(s) if s.dim() == (ell, ell) => s.clone(),
        Some(_) => return Err(Error::Shape("warm start has the wrong size".into())),
        None => &eye * c64::new(0.0, (1.0 / tau).min(1.0)),
    };
    let mut history = Vec::new();
    for it in 0..opts.max_iter {
        let a = spec.shifted(&m, z, tau);
        let residual = linalg::frobenius(&(a.dot(&m) - &eye));
        if !residual.is_finite() {
            return Err(Error::NonFinite("RDEL iteration"));
        }
        history.push(residual);
        if residual <= opts.tol {
            let bounds = bounds_report(spec, &m, z, tau, opts.tol)?;
            let q = history.len().div_ceil(4).max(1);
            let tail = &history[history.len() - q..];
            let rate = if tail.len() >= 2 && tail[0] > 0.0 {
                (tail[tail.len() - 1] / tail[0]).powf(1.0 / (tail.len() - 1) as f64)
            } else {
                0.0
            };
            return Ok(RDELSolution {
                m,
                z,
                tau,
                residual,
                iterations: it,
                residual_history: history,
                rate,
                bounds,
            });
        }
        m = linalg::inverse_c(&a, "RDEL update")?;
    }
    Err(Error::NonConvergence {
        what: "RDEL iteration",
        iterations: opts.max_iter,
        residual: history.last().copied().unwrap_or(f64::INFINITY),
    })
}

fn bounds_report(spec: &LinearizationSpec, m: &CMat, z: c64, tau: f64, tol: f64) -> Result<BoundsReport> {
    let norm = linalg::spectral_norm(m)?;
    let p = spec.p_indices();
    let mp = m.select(ndarray::Axis(0), &p).select(ndarray::Axis(1), &p);
    let lambda_block_norm = linalg::spectral_norm(&mp)?;
    let min_imag_eig = linalg::min_eig_hermitian(&linalg::imag_part(m))?;
    Ok(BoundsReport {
        norm,
        lambda_block_norm,
        min_imag_eig,
        norm_ok: norm <= 1.0 / tau + tol,
        lambda_block_ok: z.im <= 0.0 || lambda_block_norm <= 1.0 / z.im + tol,
        imag_ok: min_imag_eig >= -IMAG_TOL,
    })
}

/// Solve on the real axis at `tau` in `{1e-2, 1e-3, 1e-4}` and extrapolate
/// linearly in `tau` to zero from the last two.
pub fn solve_rdel_real_axis(spec: &LinearizationSpec, x: f64, opts: RdelOptions) -> Result<CMat> {
    let z = c64::new(x, 0.0);
    let taus = [1e-2, 1e-3, 1e-4];
    let mut sols: Vec<CMat> = Vec::with_capacity(3);
    for &tau in &taus {
        let s = solve_rdel_from(spec, z, tau, opts, sols.last())?;
        sols.push(s.m);
    }
    let (t1, t2) = (taus[1], taus[2]);
    let slope = (&sols[1] - &sols[2]) / c64::new(t1 - t2, 0.0);
    Ok(&sols[2] - &(slope * c64::new(t2, 0.0)))
}

/// `diag{0, (E Q - i tau I)^{-1}}` in the layout given by the mask.
pub fn m_infinity(spec: &LinearizationSpec, tau: f64) -> Result<CMat> {
    let ell = spec.dim();
    let q = spec.q_indices();
    let mut out = CMat::zeros((ell, ell));
    if q.is_empty() {
        return Ok(out);
    }
    let eq = spec
        .expectation
        .select(ndarray::Axis(0), &q)
        .select(ndarray::Axis(1), &q);
    let mut shifted = linalg::to_complex(&eq.view());
    for i in 0..q.len() {
        shifted[[i, i]] -= c64::new(0.0, tau);
    }
    let inv = linalg::inverse_c(&shifted, "m_infinity: E Q - i tau I")?;
    for (a, &i) in q.iter().enumerate() {
        for (b, &j) in q.iter().enumerate() {
            out[[i, j]] = inv[[a, b]];
        }
    }
    Ok(out)
}

/// `E B` (Q x P), `E Q` (Q x Q) and `E[B B^T]` (Q x Q) of a linearization.
#[derive(Debug, Clone)]
pub struct BlockMoments {
    pub eb: Mat,
    pub eq: Mat,
    pub ebbt: Mat,
}

/// Moments for the RF linearization: `B` has `Ahat` in its lower-right
/// corner, so `E B = 0` and `E[B B^T] = diag(0, d K_hh)`.
pub fn rf_block_moments(k: &KernelSet, d: usize) -> BlockMoments {
    let (nt, ns) = (k.n_train(), k.n_test());
    let p = nt + d;
    let mut eq = Mat::zeros((2 * ns, 2 * ns));
    for i in 0..ns {
        eq[[i, ns + i]] = -1.0;
        eq[[ns + i, i]] = -1.0;
    }
    let mut ebbt = Mat::zeros((2 * ns, 2 * ns));
    ebbt.slice_mut(s![ns.., ns..]).assign(&(&k.k_hh * d as f64));
    BlockMoments {
        eb: Mat::zeros((2 * ns, p)),
        eq,
        ebbt,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZerothMomentOptions {
    pub tau: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ZerothMomentOptions {
    fn default() -> Self {
        Self {
            tau: 1e-10,
            tol: 1e-12,
            max_iter: RDEL_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZerothMomentRow {
    pub eta: f64,
    pub delta: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZerothMomentReport {
    pub rows: Vec<ZerothMomentRow>,
    pub monotone: bool,
    /// Least-squares slope of `log delta` against `log eta`.
    pub slope: f64,
}

/// The matrix `[[I, -E B^T (E Q)^{-1}], [-(E Q)^{-1} E B, (E Q)^{-1} E[B B^T] (E Q)^{-1}]]`
/// scattered into the layout of `spec`.
pub fn zeroth_moment(spec: &LinearizationSpec, mom: &BlockMoments) -> Result<CMat> {
    let p = spec.p_indices();
    let q = spec.q_indices();
    if mom.eb.dim() != (q.len(), p.len()) || mom.eq.dim() != (q.len(), q.len()) || mom.ebbt.dim() != (q.len(), q.len()) {
        return Err(Error::Shape(format!(
            "moment blocks {:?}, {:?}, {:?} do not fit a {}+{} layout",
            mom.eb.dim(),
            mom.eq.dim(),
            mom.ebbt.dim(),
            p.len(),
            q.len()
        )));
    }
    let ell = spec.dim();
    let mut out = CMat::zeros((ell, ell));
    for &i in &p {
        out[[i, i]] = c64::new(1.0, 0.0);
    }
    if q.is_empty() {
        return Ok(out);
    }
    let eq_inv = linalg::inverse_c(&linalg::to_complex(&mom.eq.view()), "zeroth moment: E Q")?;
    let eb = linalg::to_complex(&mom.eb.view());
    let lower_left = eq_inv.dot(&eb).mapv(|v| -v);
    let upper_right = eb.t().dot(&eq_inv).mapv(|v| -v);
    let lower_right = eq_inv.dot(&linalg::to_complex(&mom.ebbt.view())).dot(&eq_inv);
    for (a, &i) in q.iter().enumerate() {
        for (b, &j) in p.iter().enumerate() {
            out[[i, j]] = lower_left[[a, b]];
            out[[j, i]] = upper_right[[b, a]];
        }
        for (b, &j) in q.iter().enumerate() {
            out[[i, j]] = lower_right[[a, b]];
        }
    }
    Ok(out)
}

pub fn zeroth_moment_check(
    spec: &LinearizationSpec,
    mom: &BlockMoments,
    eta_list: &[f64],
    opts: ZerothMomentOptions,
) -> Result<ZerothMomentReport> {
    if eta_list.is_empty() || eta_list.windows(2).any(|w| !(w[0] < w[1])) || eta_list[0] <= 0.0 {
        return Err(Error::InvalidArgument("eta_list must be positive and increasing".into()));
    }
    let omega = zeroth_moment(spec, mom)?;
    let m_inf = m_infinity(spec, opts.tau)?;
    let mut rows = Vec::with_capacity(eta_list.len());
    let mut warm: Option<CMat> = None;
    for &eta in eta_list {
        let z = c64::new(0.0, eta);
        let sol = solve_rdel_from(
            spec,
            z,
            opts.tau,
            RdelOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
            },
            warm.as_ref(),
        )?;
        let scaled = (&sol.m - &m_inf) * c64::new(0.0, -eta);
        let delta = linalg::spectral_norm(&(&scaled - &omega))?;
        rows.push(ZerothMomentRow {
            eta,
            delta,
            iterations: sol.iterations,
        });
        warm = Some(sol.m);
    }
    let monotone = rows.windows(2).all(|w| w[1].delta < w[0].delta);
    let slope = loglog_slope(
        &rows.iter().map(|r| r.eta).collect::<Vec<_>>(),
        &rows.iter().map(|r| r.delta).collect::<Vec<_>>(),
    );
    Ok(ZerothMomentReport { rows, monotone, slope })
}

/// Least-squares slope of `log y` on `log x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Array1<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Array1<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, my) = (lx.mean().unwrap_or(0.0), ly.mean().unwrap_or(0.0));
    let cov: f64 = lx.iter().zip(ly.iter()).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    cov / var
}

#[cfg(test)]
mod tests {
    use super::*;

    fn semicircle() -> LinearizationSpec {
        let sup = FnSuperoperator::new(1, |m: &CMat| m.clone());
        LinearizationSpec::new(Mat::zeros((1, 1)), vec![true], Arc::new(sup)).unwrap()
    }

    #[test]
    fn zero_superoperator_is_one_step() {
        let el = ndarray::array![[1.0, 0.5], [0.5, -2.0]];
        let spec = LinearizationSpec::new(el.clone(), vec![true, false], Arc::new(ZeroSuperoperator(2))).unwrap();
        let z = c64::new(0.3, 0.7);
        let s = solve_rdel(&spec, z, 0.2, 1e-12, 100).unwrap();
        let mut a = linalg::to_complex(&el.view());
        a[[0, 0]] -= z + c64::new(0.0, 0.2);
        a[[1, 1]] -= c64::new(0.0, 0.2);
        let expect = linalg::inverse_c(&a, "test").unwrap();
        assert!(linalg::frobenius(&(&s.m - &expect)) < 1e-14);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn semicircle_root() {
        let z = c64::new(0.0, 2.0);
        let s = solve_rdel(&semicircle(), z, 1e-8, 1e-12, 10_000).unwrap();
        let exact = (-z + (z * z - 4.0).sqrt()) / 2.0;
        assert!((exact.im - (2f64.sqrt() - 1.0)).abs() < 1e-14);
        assert!((s.m[[0, 0]] - exact).norm() < 1e-6);
        assert!(s.tail_monotone());
    }

    #[test]
    fn m_infinity_identity_block() {
        let spec = LinearizationSpec::new(Mat::eye(3), vec![true, false, false], Arc::new(ZeroSuperoperator(3))).unwrap();
        let m = m_infinity(&spec, 1.0).unwrap();
        assert!((m[[1, 1]] - c64::new(0.5, 0.5)).norm() < 1e-15);
        assert_eq!(m[[0, 0]], c64::new(0.0, 0.0));
        let m0 = m_infinity(&spec, 0.0).unwrap();
        assert_eq!(m0[[2, 2]], c64::new(1.0, 0.0));
    }

    #[test]
    fn broken_superoperator_rejected() {
        let nonlinear = FnSuperoperator::new(2, |m: &CMat| m.mapv(|v| v * v));
        let r = LinearizationSpec::new(Mat::eye(2), vec![true, true], Arc::new(nonlinear));
        assert!(matches!(r, Err(Error::BrokenSuperoperator { probe: "linearity", .. })));
        let negative = FnSuperoperator::new(2, |m: &CMat| m.mapv(|v| -v));
        let r = LinearizationSpec::new(Mat::eye(2), vec![true, true], Arc::new(negative));
        assert!(matches!(r, Err(Error::BrokenSuperoperator { probe: "positivity", .. })));
    }

    #[test]
    fn rf_superoperator_on_identity() {
        let ds = crate::model::synthetic_regression(3, 2, 4, 0.0, 1).unwrap();
        let k = crate::kernels::analytic_identity_kernels(&ds, 4);
        let dims = RfDims { n_train: 3, d: 5, n_test: 2 };
        let sup = rf_superoperator(&k, dims).unwrap();
        let out = sup.apply(&linalg::eye_c(dims.ell()));
        let block = out.slice(s![..3, ..3]).mapv(|v| v.re);
        assert!((&block - &(&k.k_aa * 5.0)).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn real_axis_outside_bulk() {
        let exact = (-3.0 + 5f64.sqrt()) / 2.0;
        let m = solve_rdel_real_axis(&semicircle(), 3.0, RdelOptions::default()).unwrap();
        assert!((m[[0, 0]] - c64::new(exact, 0.0)).norm() < 1e-6);
    }
}
