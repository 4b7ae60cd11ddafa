//! Second-moment kernels of random-feature columns.
//!
//! A column is `f = n^{-1/2} (sigma(X w), sigma(Xhat w))` with `w = phi(z)`
//! and `z ~ N(0, I_{n0})`. The four blocks of `E[f f^T]` form a [`KernelSet`].

use std::path::Path;

use ndarray::{concatenate, s, Array1, Axis};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, Mat};
use crate::model::{self, Activation, Dataset, Layout};
use crate::par::{self, Execution};
use crate::report::Neumaier;
use crate::rng;

/// Monte Carlo draws handled by one task. Fixed so that results do not
/// depend on the number of workers.
pub const CHUNK: usize = 512;

/// Chunks accumulated per parallel round; bounds peak memory.
const ROUND: usize = 16;

/// Symmetry tolerance (relative) for user-supplied kernels.
pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub k_aa: Mat,
    pub k_ah: Mat,
    pub k_ha: Mat,
    pub k_hh: Mat,
    /// Number of Monte Carlo draws; 0 marks an exact (analytic) kernel.
    pub samples: usize,
}

impl KernelSet {
    /// Validates shapes and symmetry, then stores `K_ha` as the exact
    /// transpose of `K_ah` and both diagonal blocks exactly symmetric.
    pub fn new(k_aa: Mat, k_ah: Mat, k_ha: Mat, k_hh: Mat, samples: usize) -> Result<Self> {
        let (nt, ns) = (k_aa.nrows(), k_hh.nrows());
        if k_aa.ncols() != nt || k_hh.ncols() != ns {
            return Err(Error::Shape("K_aa and K_hh must be square".into()));
        }
        if k_ah.dim() != (nt, ns) || k_ha.dim() != (ns, nt) {
            return Err(Error::Shape(format!(
                "K_ah is {:?} and K_ha is {:?}, expected ({nt}, {ns}) and ({ns}, {nt})",
                k_ah.dim(),
                k_ha.dim()
            )));
        }
        for (name, m) in [("K_aa", &k_aa), ("K_ah", &k_ah), ("K_ha", &k_ha), ("K_hh", &k_hh)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name));
            }
        }
        for (block, m) in [("K_aa symmetry", &k_aa), ("K_hh symmetry", &k_hh)] {
            let defect = linalg::asymmetry(&m.view());
            if defect > SYMMETRY_TOL {
                return Err(Error::BlockMismatch { block, defect });
            }
        }
        let scale = k_ah.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let defect = (&k_ha - &k_ah.t()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale > 0.0 && defect / scale > SYMMETRY_TOL || scale == 0.0 && defect > 0.0 {
            return Err(Error::BlockMismatch {
                block: "K_ha transpose",
                defect,
            });
        }
        let (mut k_aa, mut k_hh) = (k_aa, k_hh);
        linalg::symmetrize(&mut k_aa);
        linalg::symmetrize(&mut k_hh);
        let k_ha = k_ah.t().to_owned();
        Ok(Self {
            k_aa,
            k_ah,
            k_ha,
            k_hh,
            samples,
        })
    }

    /// Split a symmetric `(n_train + n_test)` joint matrix into blocks.
    pub fn from_joint(joint: &Mat, n_train: usize, samples: usize) -> Self {
        let k_aa = joint.slice(s![..n_train, ..n_train]).to_owned();
        let k_ah = joint.slice(s![..n_train, n_train..]).to_owned();
        let k_hh = joint.slice(s![n_train.., n_train..]).to_owned();
        let k_ha = k_ah.t().to_owned();
        Self {
            k_aa,
            k_ah,
            k_ha,
            k_hh,
            samples,
        }
    }

    pub fn n_train(&self) -> usize {
        self.k_aa.nrows()
    }

    pub fn n_test(&self) -> usize {
        self.k_hh.nrows()
    }

    pub fn joint(&self) -> Mat {
        let top = concatenate![Axis(1), self.k_aa, self.k_ah];
        let bottom = concatenate![Axis(1), self.k_ha, self.k_hh];
        concatenate![Axis(0), top, bottom]
    }

    /// `min eig / max eig` of the joint matrix (0 for the zero kernel).
    pub fn psd_ratio(&self) -> Result<f64> {
        let joint = self.joint();
        let max = linalg::spectral_norm_real(&joint.view())?;
        if max == 0.0 {
            return Ok(0.0);
        }
        Ok(linalg::min_eig_symmetric(&joint.view())? / max)
    }

    pub fn to_json(&self) -> Result<String> {
        crate::report::to_json_string(self)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Write `<prefix>K_aa.bin` and its three siblings in the raw layout.
    pub fn write_raw_blocks(&self, prefix: &str) -> Result<()> {
        for (name, m) in self.named_blocks() {
            let path = format!("{prefix}{name}.bin");
            model::write_matrix(Path::new(&path), &m.view(), Layout::RawF64Le)?;
        }
        Ok(())
    }

    fn named_blocks(&self) -> [(&'static str, &Mat); 4] {
        [
            ("K_aa", &self.k_aa),
            ("K_ah", &self.k_ah),
            ("K_ha", &self.k_ha),
            ("K_hh", &self.k_hh),
        ]
    }
}

#[derive(Serialize, Deserialize)]
struct KernelSetJson {
    n_train: usize,
    n_test: usize,
    samples: usize,
    #[serde(rename = "K_aa", with = "crate::report::rows")]
    k_aa: Mat,
    #[serde(rename = "K_ah", with = "crate::report::rows")]
    k_ah: Mat,
    #[serde(rename = "K_ha", with = "crate::report::rows")]
    k_ha: Mat,
    #[serde(rename = "K_hh", with = "crate::report::rows")]
    k_hh: Mat,
}

impl Serialize for KernelSet {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        KernelSetJson {
            n_train: self.n_train(),
            n_test: self.n_test(),
            samples: self.samples,
            k_aa: self.k_aa.clone(),
            k_ah: self.k_ah.clone(),
            k_ha: self.k_ha.clone(),
            k_hh: self.k_hh.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for KernelSet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let raw = KernelSetJson::deserialize(d)?;
        // an empty row list carries no column count; recover it from n_train/n_test
        let fix = |m: Mat, r: usize, c: usize| if m.is_empty() { Mat::zeros((r, c)) } else { m };
        let (nt, ns) = (raw.n_train, raw.n_test);
        let ks = KernelSet::new(
            fix(raw.k_aa, nt, nt),
            fix(raw.k_ah, nt, ns),
            fix(raw.k_ha, ns, nt),
            fix(raw.k_hh, ns, ns),
            raw.samples,
        )
        .map_err(D::Error::custom)?;
        if ks.n_train() != nt || ks.n_test() != ns {
            return Err(D::Error::custom(format!(
                "declared n_train={nt}, n_test={ns} but blocks are {}x{}",
                ks.n_train(),
                ks.n_test()
            )));
        }
        Ok(ks)
    }
}

/// `max(20 (n_train + n_test), 10^4)`.
pub fn default_samples(n_train: usize, n_test: usize) -> usize {
    (20 * (n_train + n_test)).max(10_000)
}

/// Stacked feature rows `n^{-1/2} [sigma(X W); sigma(Xhat W)]` for weights `W`.
pub fn feature_block(ds: &Dataset, sigma: &Activation, w: &Mat, n: usize) -> Result<Mat> {
    let xx = concatenate![Axis(0), ds.x().view(), ds.xhat().view()];
    let mut f = xx.dot(w);
    sigma.apply_inplace(&mut f)?;
    if f.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("activation output"));
    }
    f *= 1.0 / (n as f64).sqrt();
    Ok(f)
}

fn chunk_features(
    ds: &Dataset,
    sigma: &Activation,
    phi: &Activation,
    n: usize,
    seed: u64,
    chunk: usize,
    size: usize,
) -> Result<Mat> {
    let mut r = rng::stream(seed, "kernel-draws", chunk as u64);
    let mut w = rng::standard_normal_matrix(&mut r, ds.n0(), size);
    phi.apply_inplace(&mut w)?;
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("weight map output"));
    }
    feature_block(ds, sigma, &w, n)
}

struct Moments {
    outer: Vec<Neumaier>,
    col_sum: Vec<Neumaier>,
    sq_norm: Neumaier,
}

fn accumulate<F>(
    exec: Execution,
    m: usize,
    dim: usize,
    want_outer: bool,
    compute: F,
) -> Result<Moments>
where
    F: Fn(usize, usize) -> Result<Mat> + Sync + Send,
{
    let sizes = par::chunk_sizes(m, CHUNK);
    let mut acc = Moments {
        outer: vec![Neumaier::default(); if want_outer { dim * dim } else { 0 }],
        col_sum: vec![Neumaier::default(); dim],
        sq_norm: Neumaier::default(),
    };
    for round in (0..sizes.len()).step_by(ROUND) {
        let hi = (round + ROUND).min(sizes.len());
        let partials = par::try_map_indexed(exec, hi - round, |k| -> Result<(Option<Mat>, Array1<f64>, f64)> {
            let c = round + k;
            let f = compute(c, sizes[c])?;
            let outer = want_outer.then(|| f.dot(&f.t()));
            let sums = f.sum_axis(Axis(1));
            let sq = f.iter().map(|v| v * v).sum::<f64>();
            Ok((outer, sums, sq))
        })?;
        for (outer, sums, sq) in partials {
            if let Some(o) = outer {
                for (a, v) in acc.outer.iter_mut().zip(o.iter()) {
                    a.add(*v);
                }
            }
            for (a, v) in acc.col_sum.iter_mut().zip(sums.iter()) {
                a.add(*v);
            }
            acc.sq_norm.add(sq);
        }
    }
    Ok(acc)
}

pub fn estimate_kernels(
    ds: &Dataset,
    sigma: &Activation,
    phi: &Activation,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<KernelSet> {
    estimate_kernels_with(Execution::available(), ds, sigma, phi, n, m, seed)
}

pub fn estimate_kernels_with(
    exec: Execution,
    ds: &Dataset,
    sigma: &Activation,
    phi: &Activation,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<KernelSet> {
    if m == 0 {
        return Err(Error::InvalidArgument("sample count m must be at least 1".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("normalization n must be at least 1".into()));
    }
    let dim = ds.n_train() + ds.n_test();
    let acc = accumulate(exec, m, dim, true, |c, size| {
        chunk_features(ds, sigma, phi, n, seed, c, size)
    })?;
    let inv_m = 1.0 / m as f64;
    let mut joint = Mat::from_shape_vec((dim, dim), acc.outer.iter().map(|a| a.value() * inv_m).collect())
        .expect("dim*dim entries");
    linalg::symmetrize(&mut joint);
    Ok(KernelSet::from_joint(&joint, ds.n_train(), m))
}

/// Exact kernels for `sigma = phi = identity`: `E[X z z^T X^T] / n = X X^T / n`.
pub fn analytic_identity_kernels(ds: &Dataset, n: usize) -> KernelSet {
    let s = 1.0 / n as f64;
    let (x, xh) = (ds.x(), ds.xhat());
    let mut k_aa = x.dot(&x.t()) * s;
    let k_ah = x.dot(&xh.t()) * s;
    let mut k_hh = xh.dot(&xh.t()) * s;
    linalg::symmetrize(&mut k_aa);
    linalg::symmetrize(&mut k_hh);
    let k_ha = k_ah.t().to_owned();
    KernelSet {
        k_aa,
        k_ah,
        k_ha,
        k_hh,
        samples: 0,
    }
}

/// `||mean f|| / sqrt(E||f - mean f||^2)` over `m` draws of the joint column.
///
/// Near zero when the features are centered; of order one otherwise.
pub fn verify_centering(
    sigma: &Activation,
    phi: &Activation,
    ds: &Dataset,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<f64> {
    verify_centering_with(Execution::available(), sigma, phi, ds, n, m, seed)
}

pub fn verify_centering_with(
    exec: Execution,
    sigma: &Activation,
    phi: &Activation,
    ds: &Dataset,
    n: usize,
    m: usize,
    seed: u64,
) -> Result<f64> {
    if m < 2 {
        return Err(Error::InvalidArgument("centering check needs m >= 2".into()));
    }
    let dim = ds.n_train() + ds.n_test();
    let acc = accumulate(exec, m, dim, false, |c, size| {
        let mut r = rng::stream(seed, "centering-draws", c as u64);
        let mut w = rng::standard_normal_matrix(&mut r, ds.n0(), size);
        phi.apply_inplace(&mut w)?;
        feature_block(ds, sigma, &w, n)
    })?;
    let mf = m as f64;
    let mean: Vec<f64> = acc.col_sum.iter().map(|a| a.value() / mf).collect();
    let mean_sq: f64 = mean.iter().map(|v| v * v).sum();
    let centered = ((acc.sq_norm.value() - mf * mean_sq) / (mf - 1.0)).max(0.0);
    if centered == 0.0 {
        return Ok(if mean_sq == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(mean_sq.sqrt() / centered.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::synthetic_regression;
    use ndarray::array;

    fn toy() -> Dataset {
        synthetic_regression(5, 3, 4, 0.1, 11).unwrap()
    }

    #[test]
    fn estimate_is_deterministic_and_worker_independent() {
        let ds = toy();
        let a = estimate_kernels_with(Execution::Sequential, &ds, &Activation::Erf, &Activation::Identity, 4, 1500, 3).unwrap();
        let b = estimate_kernels_with(Execution::Parallel, &ds, &Activation::Erf, &Activation::Identity, 4, 1500, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.k_ha, a.k_ah.t());
        assert_eq!(a.samples, 1500);
    }

    #[test]
    fn zero_design_gives_zero_kernels_for_erf() {
        let ds = Dataset::new(Mat::zeros((3, 2)), Mat::zeros((2, 2)), Array1::zeros(3), Array1::zeros(2)).unwrap();
        let k = estimate_kernels(&ds, &Activation::Erf, &Activation::Identity, 2, 100, 0).unwrap();
        assert!(k.joint().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn analytic_small_cases() {
        let ds = Dataset::new(Mat::eye(2), Mat::eye(2), Array1::zeros(2), Array1::zeros(2)).unwrap();
        let k = analytic_identity_kernels(&ds, 2);
        assert_eq!(k.k_aa, Mat::eye(2) * 0.5);
        let ds = Dataset::new(array![[1.0, 0.0]], array![[0.0, 1.0]], array![0.0], array![0.0]).unwrap();
        assert_eq!(analytic_identity_kernels(&ds, 1).k_ah, array![[0.0]]);
    }

    #[test]
    fn json_round_trip() {
        let ds = toy();
        let k = estimate_kernels(&ds, &Activation::Sign, &Activation::Identity, 4, 600, 1).unwrap();
        let back = KernelSet::from_json(&k.to_json().unwrap()).unwrap();
        assert_eq!(k, back);
    }

    #[test]
    fn new_rejects_broken_transpose() {
        let k = KernelSet::new(Mat::eye(2), array![[1.0], [0.0]], array![[0.0, 1.0]], Mat::eye(1), 1);
        assert!(matches!(k, Err(Error::BlockMismatch { .. })));
    }

    #[test]
    fn shifted_identity_is_not_centered() {
        let ds = Dataset::new(array![[1.0]], array![[1.0]], array![0.0], array![0.0]).unwrap();
        let shift = Activation::table(vec![-50.0, 50.0], vec![-49.0, 51.0]).unwrap();
        let m = 20_000;
        let v = verify_centering(&shift, &Activation::Identity, &ds, 1, m, 5).unwrap();
        assert!((v - 1.0).abs() < 0.05, "centering score {v}");
    }
}
