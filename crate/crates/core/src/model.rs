//! Datasets, activations, the random-features configuration, and matrix I/O.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng;

/// Train and test design matrices with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Mat,
    xhat: Mat,
    y: Array1<f64>,
    yhat: Array1<f64>,
}

impl Dataset {
    pub fn new(x: Mat, xhat: Mat, y: Array1<f64>, yhat: Array1<f64>) -> Result<Self> {
        if x.ncols() != xhat.ncols() {
            return Err(Error::Shape(format!(
                "X has {} columns but Xhat has {}",
                x.ncols(),
                xhat.ncols()
            )));
        }
        if y.len() != x.nrows() {
            return Err(Error::Shape(format!(
                "y has length {} but X has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if yhat.len() != xhat.nrows() {
            return Err(Error::Shape(format!(
                "yhat has length {} but Xhat has {} rows",
                yhat.len(),
                xhat.nrows()
            )));
        }
        if !x
            .iter()
            .chain(xhat.iter())
            .chain(y.iter())
            .chain(yhat.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite("dataset"));
        }
        Ok(Self { x, xhat, y, yhat })
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }
    pub fn xhat(&self) -> &Mat {
        &self.xhat
    }
    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }
    pub fn yhat(&self) -> &Array1<f64> {
        &self.yhat
    }
    pub fn n_train(&self) -> usize {
        self.x.nrows()
    }
    pub fn n_test(&self) -> usize {
        self.xhat.nrows()
    }
    pub fn n0(&self) -> usize {
        self.x.ncols()
    }

    /// Same inputs with the test side replaced by the training side.
    pub fn as_training(&self) -> Self {
        Self {
            x: self.x.clone(),
            xhat: self.x.clone(),
            y: self.y.clone(),
            yhat: self.y.clone(),
        }
    }
}

/// Entrywise nonlinearity used for both sigma and the weight map phi.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Erf,
    /// `sign(0) = 0`.
    Sign,
    Sin,
    Relu,
    /// Piecewise-linear interpolation through `(xs[i], ys[i])`.
    CustomTable { xs: Vec<f64>, ys: Vec<f64> },
}

impl Activation {
    pub fn table(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() < 2 || xs.len() != ys.len() {
            return Err(Error::InvalidArgument(format!(
                "table needs at least two points and matching lengths (got {} and {})",
                xs.len(),
                ys.len()
            )));
        }
        if xs.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "table abscissae must be strictly increasing".into(),
            ));
        }
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("activation table"));
        }
        Ok(Activation::CustomTable { xs, ys })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(match self {
            Activation::Identity => x,
            Activation::Erf => libm::erf(x),
            Activation::Sign => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            Activation::Sin => x.sin(),
            Activation::Relu => x.max(0.0),
            Activation::CustomTable { xs, ys } => {
                let (lo, hi) = (xs[0], xs[xs.len() - 1]);
                if !(lo..=hi).contains(&x) {
                    return Err(Error::OutsideTable { value: x, lo, hi });
                }
                let k = xs.partition_point(|&g| g <= x).clamp(1, xs.len() - 1);
                let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
        })
    }

    pub fn apply(&self, m: &ArrayView2<'_, f64>) -> Result<Mat> {
        match self {
            Activation::Identity => Ok(m.to_owned()),
            Activation::CustomTable { .. } => {
                let mut out = Array2::zeros(m.raw_dim());
                for (o, &v) in out.iter_mut().zip(m.iter()) {
                    *o = self.eval(v)?;
                }
                Ok(out)
            }
            _ => Ok(m.mapv(|v| self.eval(v).expect("closed-form activations are total"))),
        }
    }

    pub fn apply_inplace(&self, m: &mut Mat) -> Result<()> {
        match self {
            Activation::Identity => Ok(()),
            Activation::CustomTable { .. } => {
                for v in m.iter_mut() {
                    *v = self.eval(*v)?;
                }
                Ok(())
            }
            _ => {
                m.mapv_inplace(|v| self.eval(v).expect("closed-form activations are total"));
                Ok(())
            }
        }
    }

    /// True for activations with `f(-x) = -f(x)`.
    pub fn is_odd(&self) -> bool {
        matches!(
            self,
            Activation::Identity | Activation::Erf | Activation::Sign | Activation::Sin
        )
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Activation::Identity => "identity",
            Activation::Erf => "erf",
            Activation::Sign => "sign",
            Activation::Sin => "sin",
            Activation::Relu => "relu",
            Activation::CustomTable { .. } => "custom-table",
        };
        f.write_str(s)
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "identity" | "id" | "linear" => Ok(Activation::Identity),
            "erf" => Ok(Activation::Erf),
            "sign" => Ok(Activation::Sign),
            "sin" => Ok(Activation::Sin),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }
}

/// Width, ridge, normalization and seed of a random-features model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RFConfig {
    pub d: usize,
    pub delta: f64,
    pub n: usize,
    pub seed: u64,
}

impl RFConfig {
    pub fn new(d: usize, delta: f64, n: usize, seed: u64) -> Result<Self> {
        let cfg = Self { d, delta, n, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::InvalidArgument("d must be at least 1".into()));
        }
        if !(self.delta > 0.0) || !self.delta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "delta must be positive and finite, got {}",
                self.delta
            )));
        }
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Csv,
    RawF64Le,
}

impl Layout {
    /// `.bin`, `.raw` and `.f64` mean raw; everything else is csv.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin" | "raw" | "f64") => Layout::RawF64Le,
            _ => Layout::Csv,
        }
    }
}

pub fn load_matrix(path: &Path, layout: Layout) -> Result<Mat> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    match layout {
        Layout::Csv => {
            let text = String::from_utf8(bytes).map_err(|e| {
                Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
            })?;
            parse_csv(&text)
        }
        Layout::RawF64Le => parse_raw(&bytes),
    }
}

pub fn parse_csv(text: &str) -> Result<Mat> {
    let mut data = Vec::new();
    let mut ncols = None;
    let mut nrows = 0;
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|c| !c.is_empty())
            .collect();
        match ncols {
            None => ncols = Some(cells.len()),
            Some(n) if n != cells.len() => {
                return Err(Error::RaggedRows {
                    row,
                    expected: n,
                    found: cells.len(),
                })
            }
            _ => {}
        }
        for (col, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::NonNumeric {
                row,
                col,
                cell: cell.to_string(),
            })?;
            data.push(v);
        }
        nrows += 1;
    }
    let ncols = ncols.unwrap_or(0);
    Array2::from_shape_vec((nrows, ncols), data).map_err(|e| Error::Shape(e.to_string()))
}

pub fn parse_raw(bytes: &[u8]) -> Result<Mat> {
    if bytes.len() < 16 {
        return Err(Error::HeaderMismatch {
            rows: 0,
            cols: 0,
            body_bytes: bytes.len(),
        });
    }
    let rows = u64::from_le_bytes(bytes[0..8].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let body = &bytes[16..];
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(8))
        .filter(|&n| n == body.len() as u64);
    if expected.is_none() {
        return Err(Error::HeaderMismatch {
            rows,
            cols,
            body_bytes: body.len(),
        });
    }
    let data: Vec<f64> = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Array2::from_shape_vec((rows as usize, cols as usize), data)
        .map_err(|e| Error::Shape(e.to_string()))
}

pub fn matrix_to_raw(m: &ArrayView2<'_, f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn matrix_to_csv(m: &ArrayView2<'_, f64>) -> String {
    let mut s = String::new();
    for row in m.outer_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_matrix(path: &Path, m: &ArrayView2<'_, f64>, layout: Layout) -> Result<()> {
    let bytes = match layout {
        Layout::Csv => matrix_to_csv(m).into_bytes(),
        Layout::RawF64Le => matrix_to_raw(m),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// A vector stored as a single row or a single column.
pub fn load_vector(path: &Path, layout: Layout) -> Result<Array1<f64>> {
    let m = load_matrix(path, layout)?;
    match m.dim() {
        (_, 1) | (1, _) | (0, 0) => Ok(Array1::from_iter(m.iter().copied())),
        (r, c) => Err(Error::Shape(format!(
            "expected a vector, got a {r}x{c} matrix in {}",
            path.display()
        ))),
    }
}

/// Unit-norm teacher that `synthetic_regression` uses for `seed`.
pub fn synthetic_teacher(n0: usize, seed: u64) -> Array1<f64> {
    let mut r = rng::stream(seed, "teacher", 0);
    let mut w: Array1<f64> = (0..n0).map(|_| StandardNormal.sample(&mut r)).collect();
    let norm = w.dot(&w).sqrt();
    if norm > 0.0 {
        w /= norm;
    } else {
        w[0] = 1.0;
    }
    w
}

/// Gaussian design with a linear unit-norm teacher and Gaussian label noise.
pub fn synthetic_regression(
    n_train: usize,
    n_test: usize,
    n0: usize,
    noise_sd: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 || n0 == 0 {
        return Err(Error::InvalidArgument(
            "synthetic dimensions must all be at least 1".into(),
        ));
    }
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_sd must be nonnegative, got {noise_sd}"
        )));
    }
    let x = rng::standard_normal_matrix(&mut rng::stream(seed, "x", 0), n_train, n0);
    let xhat = rng::standard_normal_matrix(&mut rng::stream(seed, "xhat", 0), n_test, n0);
    let w = synthetic_teacher(n0, seed);
    let mut y = x.dot(&w);
    let mut yhat = xhat.dot(&w);
    if noise_sd > 0.0 {
        let mut r = rng::stream(seed, "noise", 0);
        for v in y.iter_mut().chain(yhat.iter_mut()) {
            let e: f64 = StandardNormal.sample(&mut r);
            *v += noise_sd * e;
        }
    }
    Dataset::new(x, xhat, y, yhat)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn csv_parses_commas_and_whitespace() {
        assert_eq!(parse_csv("1,2\n3,4").unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(parse_csv("1 2\n3\t4\n").unwrap(), array![[1.0, 2.0], [3.0, 4.0]]);
        assert_eq!(parse_csv("1\n2\n3").unwrap().dim(), (3, 1));
    }

    #[test]
    fn csv_errors() {
        assert!(matches!(parse_csv("1,2\n3"), Err(Error::RaggedRows { row: 1, .. })));
        assert!(matches!(
            parse_csv("1,x"),
            Err(Error::NonNumeric { row: 0, col: 1, .. })
        ));
    }

    #[test]
    fn raw_layout() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&2u64.to_le_bytes());
        bytes.extend_from_slice(&3u64.to_le_bytes());
        for v in 0..6 {
            bytes.extend_from_slice(&(v as f64).to_le_bytes());
        }
        let m = parse_raw(&bytes).unwrap();
        assert_eq!(m, array![[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]]);
        assert!(matches!(
            parse_raw(&bytes[..bytes.len() - 8]),
            Err(Error::HeaderMismatch { rows: 2, cols: 3, .. })
        ));
    }

    #[test]
    fn activations_on_small_inputs() {
        let m = array![[-3.0, 0.0, 5.0]];
        assert_eq!(Activation::Sign.apply(&m.view()).unwrap(), array![[-1.0, 0.0, 1.0]]);
        assert_eq!(Activation::Identity.apply(&array![[-1.0, 2.0]].view()).unwrap(), array![[-1.0, 2.0]]);
        assert_eq!(Activation::Erf.apply(&array![[0.0]].view()).unwrap(), array![[0.0]]);
        assert_eq!(Activation::Relu.eval(-2.0).unwrap(), 0.0);
    }

    #[test]
    fn table_interpolates_and_rejects_outside() {
        let t = Activation::table(vec![-1.0, 0.0, 2.0], vec![0.0, 1.0, 5.0]).unwrap();
        assert_eq!(t.eval(-0.5).unwrap(), 0.5);
        assert_eq!(t.eval(1.0).unwrap(), 3.0);
        assert_eq!(t.eval(2.0).unwrap(), 5.0);
        assert!(matches!(t.eval(2.5), Err(Error::OutsideTable { .. })));
        assert!(Activation::table(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn dataset_validation() {
        let ok = Dataset::new(Array2::zeros((3, 2)), Array2::zeros((1, 2)), Array1::zeros(3), Array1::zeros(1));
        assert!(ok.is_ok());
        let bad = Dataset::new(Array2::zeros((3, 2)), Array2::zeros((1, 3)), Array1::zeros(3), Array1::zeros(1));
        assert!(matches!(bad, Err(Error::Shape(_))));
        let nan = Dataset::new(array![[f64::NAN]], array![[0.0]], array![0.0], array![0.0]);
        assert!(matches!(nan, Err(Error::NonFinite(_))));
    }

    #[test]
    fn noise_free_synthetic_is_the_teacher() {
        let ds = synthetic_regression(4, 2, 3, 0.0, 7).unwrap();
        let w = synthetic_teacher(3, 7);
        assert_eq!(ds.y(), &ds.x().dot(&w));
        assert_eq!(ds.yhat(), &ds.xhat().dot(&w));
        assert!((w.dot(&w) - 1.0).abs() < 1e-15);
        assert_eq!(ds, synthetic_regression(4, 2, 3, 0.0, 7).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(RFConfig::new(0, 1.0, 1, 0).is_err());
        assert!(RFConfig::new(1, 0.0, 1, 0).is_err());
        assert!(RFConfig::new(1, 1.0, 0, 0).is_err());
        assert!(RFConfig::new(1, 1.0, 1, 0).is_ok());
    }
}
