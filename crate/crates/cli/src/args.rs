use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use rf_equiv::c64;

#[derive(Debug, Parser)]
#[command(name = "rf-equiv", version, about = "Deterministic equivalents for random features ridge regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo estimate of the kernel blocks K_aa, K_ah, K_ha, K_hh.
    EstimateKernels(EstimateArgs),
    /// Deterministic-equivalent test error.
    Predict(PredictArgs),
    /// Empirical test error over independent feature draws.
    Simulate(SimulateArgs),
    /// Empirical and predicted test error side by side.
    Compare(SimulateArgs),
    /// Compare over a (d, delta) grid and write CSV.
    Sweep(SweepArgs),
    /// Gaussianity, anisotropic-law, zeroth-moment and centering diagnostics.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Training inputs, one row per sample (csv or raw-f64-le).
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Test inputs.
    #[arg(long)]
    pub xhat: Option<PathBuf>,
    /// Training labels.
    #[arg(long)]
    pub y: Option<PathBuf>,
    /// Test labels.
    #[arg(long)]
    pub yhat: Option<PathBuf>,
    /// Generate a synthetic dataset instead of reading one.
    #[arg(long, value_name = "NTRAIN,NTEST,N0")]
    pub synthetic: Option<String>,
    /// Label noise of the synthetic dataset.
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub noise_sd: f64,
}

#[derive(Debug, Args)]
pub struct FeatureArgs {
    /// Activation: identity, erf, sign, sin, relu, or table:PATH (two-column csv).
    #[arg(long, default_value = "erf")]
    pub sigma: String,
    /// Weight map applied to the Gaussian weights.
    #[arg(long, default_value = "identity")]
    pub phi: String,
    /// Normalization n in A = n^{-1/2} sigma(X W); defaults to the input dimension.
    #[arg(long)]
    pub n: Option<usize>,
    /// Monte Carlo draws for kernel estimation; defaults to max(20 (n_train + n_test), 10^4).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Also write the four blocks as raw-f64-le files `{prefix}K_aa.bin` etc.
    #[arg(long)]
    pub raw_prefix: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    /// Kernel JSON from estimate-kernels; estimated from the data when absent.
    #[arg(long)]
    pub kernels: Option<PathBuf>,
    #[arg(long)]
    pub d: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long)]
    pub kernels: Option<PathBuf>,
    #[arg(long)]
    pub d: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-replicate test errors as csv.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long)]
    pub kernels: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true)]
    pub d_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    pub delta_list: Vec<f64>,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub features: FeatureArgs,
    #[arg(long)]
    pub kernels: Option<PathBuf>,
    #[arg(long)]
    pub d: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub delta: f64,
    /// Spectral parameter, e.g. `i`, `0.5+1i`.
    #[arg(long, default_value = "i", allow_hyphen_values = true)]
    pub z: c64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub tau: f64,
    #[arg(long, default_value_t = 30)]
    pub reps: usize,
    /// Largest linearization size n_train + d + 2 n_test accepted.
    #[arg(long, default_value_t = 2000)]
    pub max_ell: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}
