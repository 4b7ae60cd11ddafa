//! Monte Carlo simulation of the random-features model and diagnostics
//! against the deterministic equivalent.

use std::ops::Range;

use ndarray::{s, Array1, ArrayView1, ArrayView2};
use serde::Serialize;

use crate::equiv::{self, SCALAR_TOL};
use crate::error::{Error, Result};
use crate::kernels::{self, KernelSet};
use crate::linalg::{self, c64, CMat, Mat, PsdEigen};
use crate::model::{Activation, Dataset, RFConfig};
use crate::par::{self, Execution};
use crate::report::{self, mean_std};
use crate::rng;

pub const DEFAULT_REPS: usize = 30;
/// `||(L - z Lambda) G - I||_F` allowed per unit of `max(1, ||G||_F)`.
pub const DEFECT_TOL: f64 = 1e-9;
pub const BLOCK_TOL: f64 = 1e-8;

/// Gaussian weights `Z` (n0 x d) used by [`sample_features`] for `seed`.
pub fn feature_weights(n0: usize, d: usize, seed: u64) -> Mat {
    rng::standard_normal_matrix(&mut rng::stream(seed, "features", 0), n0, d)
}

/// `A = n^{-1/2} sigma(X phi(Z))`, `Ahat = n^{-1/2} sigma(Xhat phi(Z))`.
pub fn sample_features(
    ds: &Dataset,
    sigma: &Activation,
    phi: &Activation,
    d: usize,
    n: usize,
    seed: u64,
) -> Result<(Mat, Mat)> {
    if d == 0 || n == 0 {
        return Err(Error::InvalidArgument("d and n must be at least 1".into()));
    }
    let mut w = feature_weights(ds.n0(), d, seed);
    phi.apply_inplace(&mut w)?;
    let f = kernels::feature_block(ds, sigma, &w, n)?;
    let nt = ds.n_train();
    Ok((f.slice(s![..nt, ..]).to_owned(), f.slice(s![nt.., ..]).to_owned()))
}

/// `||yhat - Ahat A^T (A A^T + delta I)^{-1} y||^2` via a Cholesky solve.
pub fn empirical_test_error(
    a: &ArrayView2<'_, f64>,
    ahat: &ArrayView2<'_, f64>,
    y: &ArrayView1<'_, f64>,
    yhat: &ArrayView1<'_, f64>,
    delta: f64,
) -> Result<f64> {
    if a.ncols() != ahat.ncols() || a.nrows() != y.len() || ahat.nrows() != yhat.len() {
        return Err(Error::Shape(format!(
            "A {:?}, Ahat {:?}, y {}, yhat {}",
            a.dim(),
            ahat.dim(),
            y.len(),
            yhat.len()
        )));
    }
    if !(delta > 0.0) {
        return Err(Error::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let mut gram = a.dot(&a.t());
    for i in 0..gram.nrows() {
        gram[[i, i]] += delta;
    }
    let coef = linalg::solve_spd(&gram, y, "ridge system")?;
    let pred = ahat.dot(&a.t().dot(&coef));
    let r = yhat - &pred;
    Ok(r.dot(&r))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub model: &'static str,
    pub sigma: String,
    pub phi: String,
    pub d: usize,
    pub delta: f64,
    pub n: usize,
    pub seed: u64,
    pub reps: usize,
    pub n_train: usize,
    pub n_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub config: SimConfig,
    #[serde(rename = "replicates")]
    pub replicate_errors: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub predicted: f64,
    pub rel_gap: f64,
}

impl SimReport {
    fn new(config: SimConfig, replicate_errors: Vec<f64>, predicted: f64) -> Self {
        let (mean, std) = mean_std(&replicate_errors);
        let rel_gap = if predicted > 0.0 {
            (mean - predicted).abs() / predicted
        } else {
            f64::NAN
        };
        Self {
            config,
            replicate_errors,
            mean,
            std,
            predicted,
            rel_gap,
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        self.std / (self.replicate_errors.len() as f64).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("replicate,test_error\n");
        for (i, e) in self.replicate_errors.iter().enumerate() {
            s.push_str(&format!("{i},{e:.16e}\n"));
        }
        s
    }

    pub fn to_json(&self) -> Result<String> {
        report::to_json_string(self)
    }
}

pub fn run_replicates(
    ds: &Dataset,
    sigma: &Activation,
    phi: &Activation,
    cfg: &RFConfig,
    reps: usize,
    k: &KernelSet,
) -> Result<SimReport> {
    run_replicates_with(Execution::available(), ds, sigma, phi, cfg, reps, k)
}

pub fn run_replicates_with(
    exec: Execution,
    ds: &Dataset,
    sigma: &Activation,
    phi: &Activation,
    cfg: &RFConfig,
    reps: usize,
    k: &KernelSet,
) -> Result<SimReport> {
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let predicted = equiv::build_equiv(k, &ds.y().view(), &ds.yhat().view(), cfg.d, cfg.delta, SCALAR_TOL)?
        .predicted_error;
    let errors = par::try_map_indexed(exec, reps, |r| {
        let seed = rng::child_seed(cfg.seed, "replicate", r as u64);
        let (a, ah) = sample_features(ds, sigma, phi, cfg.d, cfg.n, seed)?;
        empirical_test_error(&a.view(), &ah.view(), &ds.y().view(), &ds.yhat().view(), cfg.delta)
    })?;
    let config = SimConfig {
        model: "random-features",
        sigma: sigma.to_string(),
        phi: phi.to_string(),
        d: cfg.d,
        delta: cfg.delta,
        n: cfg.n,
        seed: cfg.seed,
        reps,
        n_train: ds.n_train(),
        n_test: ds.n_test(),
    };
    Ok(SimReport::new(config, errors, predicted))
}

/// Jointly Gaussian columns with covariance `[[K_aa, K_ah], [K_ha, K_hh]]`
/// in place of the random features.
pub fn gaussian_surrogate_run(
    k: &KernelSet,
    y: &ArrayView1<'_, f64>,
    yhat: &ArrayView1<'_, f64>,
    cfg: &RFConfig,
    reps: usize,
    seed: u64,
) -> Result<SimReport> {
    gaussian_surrogate_run_with(Execution::available(), k, y, yhat, cfg, reps, seed)
}

pub fn gaussian_surrogate_run_with(
    exec: Execution,
    k: &KernelSet,
    y: &ArrayView1<'_, f64>,
    yhat: &ArrayView1<'_, f64>,
    cfg: &RFConfig,
    reps: usize,
    seed: u64,
) -> Result<SimReport> {
    cfg.validate()?;
    if reps == 0 {
        return Err(Error::InvalidArgument("reps must be at least 1".into()));
    }
    let predicted = equiv::build_equiv(k, y, yhat, cfg.d, cfg.delta, SCALAR_TOL)?.predicted_error;
    let root = PsdEigen::new(&k.joint().view())?.sqrt();
    let nt = k.n_train();
    let errors = par::try_map_indexed(exec, reps, |r| {
        let mut g = rng::stream(rng::child_seed(seed, "surrogate", r as u64), "surrogate-draws", 0);
        let f = root.dot(&rng::standard_normal_matrix(&mut g, root.ncols(), cfg.d));
        let (a, ah) = (f.slice(s![..nt, ..]), f.slice(s![nt.., ..]));
        empirical_test_error(&a, &ah, y, yhat, cfg.delta)
    })?;
    let config = SimConfig {
        model: "gaussian-surrogate",
        sigma: "gaussian".into(),
        phi: "gaussian".into(),
        d: cfg.d,
        delta: cfg.delta,
        n: cfg.n,
        seed,
        reps,
        n_train: nt,
        n_test: k.n_test(),
    };
    Ok(SimReport::new(config, errors, predicted))
}

/// Index ranges of the four blocks `(n_train, d, n_test, n_test)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout4 {
    pub n_train: usize,
    pub d: usize,
    pub n_test: usize,
}

impl Layout4 {
    pub fn ell(&self) -> usize {
        self.n_train + self.d + 2 * self.n_test
    }

    /// Range of block `b` (1-based, as in the block display).
    pub fn range(&self, b: usize) -> Range<usize> {
        let o = [0, self.n_train, self.n_train + self.d, self.n_train + self.d + self.n_test, self.ell()];
        o[b - 1]..o[b]
    }

    pub fn lambda_len(&self) -> usize {
        self.n_train + self.d
    }
}

/// The linearization `L` and its pseudo-resolvent `(L - z Lambda)^{-1}`.
#[derive(Debug, Clone)]
pub struct PseudoResolvent {
    pub l: Mat,
    pub z: c64,
    pub value: CMat,
    pub layout: Layout4,
}

impl PseudoResolvent {
    pub fn block(&self, i: usize, j: usize) -> CMat {
        linalg::block(&self.value, self.layout.range(i), self.layout.range(j))
    }

    /// `||yhat - G31 y||^2`, the test error read off the linearization at `z = 0`.
    pub fn test_error(&self, y: &ArrayView1<'_, f64>, yhat: &ArrayView1<'_, f64>) -> f64 {
        let yc: Array1<c64> = y.mapv(|v| c64::new(v, 0.0));
        let pred = self.block(3, 1).dot(&yc);
        yhat.iter().zip(pred.iter()).map(|(t, p)| (c64::new(*t, 0.0) - p).norm_sqr()).sum()
    }
}

/// `L = [[delta I, A, 0, 0], [A^T, -I, 0, Ahat^T], [0, 0, 0, -I], [0, Ahat, -I, 0]]`.
pub fn linearization(a: &ArrayView2<'_, f64>, ahat: &ArrayView2<'_, f64>, delta: f64) -> Result<(Mat, Layout4)> {
    if a.ncols() != ahat.ncols() {
        return Err(Error::Shape(format!("A {:?} and Ahat {:?}", a.dim(), ahat.dim())));
    }
    let lay = Layout4 {
        n_train: a.nrows(),
        d: a.ncols(),
        n_test: ahat.nrows(),
    };
    let (r1, r2, r3, r4) = (lay.range(1), lay.range(2), lay.range(3), lay.range(4));
    let mut l = Mat::zeros((lay.ell(), lay.ell()));
    for i in r1.clone() {
        l[[i, i]] = delta;
    }
    for i in r2.clone() {
        l[[i, i]] = -1.0;
    }
    l.slice_mut(s![r1.clone(), r2.clone()]).assign(a);
    l.slice_mut(s![r2.clone(), r1]).assign(&a.t());
    l.slice_mut(s![r2.clone(), r4.clone()]).assign(&ahat.t());
    l.slice_mut(s![r4.clone(), r2]).assign(ahat);
    for (i, j) in r3.zip(r4) {
        l[[i, j]] = -1.0;
        l[[j, i]] = -1.0;
    }
    Ok((l, lay))
}

/// `L - z Lambda - i tau I` as a complex matrix.
pub fn shifted_linearization(l: &Mat, lambda_len: usize, z: c64, tau: f64) -> CMat {
    let mut m = linalg::to_complex(&l.view());
    for i in 0..m.nrows() {
        let shift = if i < lambda_len { z } else { c64::new(0.0, 0.0) };
        m[[i, i]] -= shift + c64::new(0.0, tau);
    }
    m
}

fn relative_gap(got: &CMat, want: &CMat) -> f64 {
    linalg::frobenius(&(got - want)) / linalg::frobenius(want).max(1.0)
}

pub fn build_pseudoresolvent(
    a: &ArrayView2<'_, f64>,
    ahat: &ArrayView2<'_, f64>,
    delta: f64,
    z: c64,
) -> Result<PseudoResolvent> {
    if !(z.im > 0.0 || (z == c64::new(0.0, 0.0) && delta > 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "need Im z > 0, or z = 0 with delta > 0 (got z = {z}, delta = {delta})"
        )));
    }
    let (l, lay) = linearization(a, ahat, delta)?;
    let shifted = shifted_linearization(&l, lay.lambda_len(), z, 0.0);
    let value = linalg::inverse_c(&shifted, "pseudo-resolvent")?;

    let eye = linalg::eye_c(lay.ell());
    let defect = linalg::frobenius(&(shifted.dot(&value) - &eye));
    if defect > DEFECT_TOL * linalg::frobenius(&value).max(1.0) {
        return Err(Error::BlockMismatch {
            block: "pseudo-resolvent defect",
            defect,
        });
    }

    let pr = PseudoResolvent { l, z, value, layout: lay };
    let closed = closed_form_blocks(a, ahat, delta, z)?;
    for (name, (i, j), want) in [
        ("block (1,1)", (1, 1), &closed.r11),
        ("block (2,2)", (2, 2), &closed.r22),
        ("block (3,1)", (3, 1), &closed.r31),
    ] {
        let gap = relative_gap(&pr.block(i, j), want);
        if gap > BLOCK_TOL {
            return Err(Error::BlockMismatch { block: name, defect: gap });
        }
    }
    Ok(pr)
}

/// Blocks (1,1), (2,2), (3,1) of the pseudo-resolvent from the block
/// inversion formula.
pub struct ClosedFormBlocks {
    pub r11: CMat,
    pub r22: CMat,
    pub r31: CMat,
}

pub fn closed_form_blocks(a: &ArrayView2<'_, f64>, ahat: &ArrayView2<'_, f64>, delta: f64, z: c64) -> Result<ClosedFormBlocks> {
    let one = c64::new(1.0, 0.0);
    let w = one / (one + z);
    let dz = c64::new(delta, 0.0) - z;
    let ac = linalg::to_complex(a);
    let ahc = linalg::to_complex(ahat);
    let mut r_inv = ac.dot(&ac.t()) * w;
    for i in 0..r_inv.nrows() {
        r_inv[[i, i]] += dz;
    }
    let r = linalg::inverse_c(&r_inv, "closed-form R")?;
    let mut rb_inv = ac.t().dot(&ac) / dz;
    for i in 0..rb_inv.nrows() {
        rb_inv[[i, i]] += one + z;
    }
    let rb = linalg::inverse_c(&rb_inv, "closed-form Rbar")?.mapv(|v| -v);
    let r31 = ahc.dot(&ac.t()).dot(&r) * w;
    Ok(ClosedFormBlocks { r11: r, r22: rb, r31 })
}

/// Both sides of `||(L - z Lambda - i tau I)^{-1} - (L - z Lambda)^{-1}|| <= tau ||(L - z Lambda)^{-1}||^2`.
pub fn ftau_sides(pr: &PseudoResolvent, tau: f64) -> Result<(f64, f64)> {
    let shifted = shifted_linearization(&pr.l, pr.layout.lambda_len(), pr.z, tau);
    let g_tau = linalg::inverse_c(&shifted, "regularized pseudo-resolvent")?;
    let lhs = linalg::spectral_norm(&(&g_tau - &pr.value))?;
    let g = linalg::spectral_norm(&pr.value)?;
    Ok((lhs, tau * g * g))
}

/// `|tr(U (G - M))|`.
pub fn anisotropic_gap(pr: &PseudoResolvent, m_theory: &CMat, u: &CMat) -> Result<f64> {
    if m_theory.dim() != pr.value.dim() || u.dim() != pr.value.dim() {
        return Err(Error::Shape(format!(
            "pseudo-resolvent {:?}, theory {:?}, probe {:?}",
            pr.value.dim(),
            m_theory.dim(),
            u.dim()
        )));
    }
    let diff = &pr.value - m_theory;
    Ok((u * &diff.t()).sum().norm())
}

/// Rank-one probe `u v^*` with independent uniformly random unit vectors;
/// its nuclear norm is 1.
pub fn random_unit_probe(ell: usize, seed: u64) -> CMat {
    let mut r = rng::stream(seed, "probe", 0);
    let g = rng::standard_normal_matrix(&mut r, 2, 2 * ell);
    let unit = |row: usize| -> Array1<c64> {
        let v: Array1<c64> = (0..ell).map(|i| c64::new(g[[row, 2 * i]], g[[row, 2 * i + 1]])).collect();
        let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        v.mapv(|x| x / norm)
    };
    let (u, v) = (unit(0), unit(1));
    let mut out = CMat::zeros((ell, ell));
    for i in 0..ell {
        for j in 0..ell {
            out[[i, j]] = u[i] * v[j].conj();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeltaEstimate {
    /// Spectral norm of the replicate average.
    pub norm: f64,
    /// Frobenius norm of the standard error of the replicate average.
    pub std_error: f64,
    pub reps: usize,
}

/// Monte Carlo estimate of the Stein discrepancy
/// `E[(L - E L) G] + E[(L' - E L) G (L' - E L) G]`, `G = (L - z Lambda - i tau I)^{-1}`,
/// pairing replicate `r` with `r + 1 (mod reps)` as the independent copy.
#[allow(clippy::too_many_arguments)]
pub fn estimate_delta_gaussianity(
    ds: &Dataset,
    sigma: &Activation,
    phi: &Activation,
    cfg: &RFConfig,
    z: c64,
    tau: f64,
    reps: usize,
    seed: u64,
) -> Result<DeltaEstimate> {
    estimate_delta_gaussianity_with(Execution::available(), ds, sigma, phi, cfg, z, tau, reps, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn estimate_delta_gaussianity_with(
    exec: Execution,
    ds: &Dataset,
    sigma: &Activation,
    phi: &Activation,
    cfg: &RFConfig,
    z: c64,
    tau: f64,
    reps: usize,
    seed: u64,
) -> Result<DeltaEstimate> {
    cfg.validate()?;
    if !(tau > 0.0) || reps < 2 {
        return Err(Error::InvalidArgument("need tau > 0 and reps >= 2".into()));
    }
    let ls = par::try_map_indexed(exec, reps, |r| -> Result<Mat> {
        let (a, ah) = sample_features(ds, sigma, phi, cfg.d, cfg.n, rng::child_seed(seed, "stein", r as u64))?;
        Ok(linearization(&a.view(), &ah.view(), cfg.delta)?.0)
    })?;
    let lambda_len = ds.n_train() + cfg.d;
    let ell = ls[0].nrows();
    let mut mean_l = Mat::zeros((ell, ell));
    for l in &ls {
        mean_l += l;
    }
    mean_l /= reps as f64;
    let terms = par::try_map_indexed(exec, reps, |r| -> Result<CMat> {
        let g = linalg::inverse_c(&shifted_linearization(&ls[r], lambda_len, z, tau), "Stein resolvent")?;
        let x = linalg::to_complex(&(&ls[r] - &mean_l).view());
        let xt = linalg::to_complex(&(&ls[(r + 1) % reps] - &mean_l).view());
        Ok(x.dot(&g) + xt.dot(&g).dot(&xt).dot(&g))
    })?;
    let mut avg = CMat::zeros((ell, ell));
    for t in &terms {
        avg += t;
    }
    avg /= c64::new(reps as f64, 0.0);
    let ss: f64 = report::compensated_sum(terms.iter().map(|t| linalg::frobenius(&(t - &avg)).powi(2)));
    let std_error = (ss / (reps as f64 * (reps as f64 - 1.0))).sqrt();
    Ok(DeltaEstimate {
        norm: linalg::spectral_norm(&avg)?,
        std_error,
        reps,
    })
}
