use std::path::{Path, PathBuf};

use ndarray::Array1;
use rf_equiv::equiv::{self, SCALAR_TOL};
use rf_equiv::kernels::{self, default_samples};
use rf_equiv::model::{load_matrix, load_vector, synthetic_regression};
use rf_equiv::rdel::{self, LinearizationSpec, ZerothMomentOptions, ZerothMomentReport};
use rf_equiv::sim::{self, DeltaEstimate, SimReport};
use rf_equiv::{par, report, rng, Activation, Dataset, Error, Execution, KernelSet, Layout, RFConfig};
use serde::Serialize;

use crate::args::{DataArgs, DiagnoseArgs, EstimateArgs, FeatureArgs, PredictArgs, SimulateArgs, SweepArgs};

/// Values of `eta` at which the zeroth-moment table is evaluated.
const ETA_LIST: [f64; 3] = [1e2, 1e3, 1e4];

#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) | Failure::Core(Error::InvalidArgument(_)) => 2,
            Failure::Core(e) if e.is_solver_failure() => 4,
            Failure::Core(_) => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "Usage",
            Failure::Core(e) => e.name(),
        }
    }

    pub fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

pub type Outcome = Result<(), Failure>;

fn usage<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Usage(msg.into()))
}

pub fn parse_activation(spec: &str) -> Result<Activation, Failure> {
    if let Some(path) = spec.strip_prefix("table:") {
        let grid = load_matrix(Path::new(path), Layout::Csv)?;
        if grid.ncols() != 2 {
            return usage(format!("activation table {path} must have two columns, found {}", grid.ncols()));
        }
        return Ok(Activation::table(grid.column(0).to_vec(), grid.column(1).to_vec())?);
    }
    spec.parse::<Activation>()
        .or_else(|_| usage(format!("unknown activation {spec:?}; expected identity, erf, sign, sin, relu or table:PATH")))
}

fn parse_synthetic(spec: &str) -> Result<(usize, usize, usize), Failure> {
    let parts: Vec<_> = spec.split(',').map(|p| p.trim().parse::<usize>()).collect();
    match parts.as_slice() {
        [Ok(a), Ok(b), Ok(c)] => Ok((*a, *b, *c)),
        _ => usage(format!("--synthetic expects NTRAIN,NTEST,N0, got {spec:?}")),
    }
}

fn load_dataset(data: &DataArgs, seed: u64) -> Result<Option<Dataset>, Failure> {
    let files = [&data.x, &data.xhat, &data.y, &data.yhat];
    if let Some(spec) = &data.synthetic {
        if files.iter().any(|f| f.is_some()) {
            return usage("--synthetic cannot be combined with --x, --xhat, --y or --yhat");
        }
        let (nt, ns, n0) = parse_synthetic(spec)?;
        return Ok(Some(synthetic_regression(nt, ns, n0, data.noise_sd, seed)?));
    }
    match (&data.x, &data.xhat) {
        (None, None) => Ok(None),
        (Some(x), Some(xhat)) => {
            let (Some(y), Some(yhat)) = (&data.y, &data.yhat) else {
                return usage("--x and --xhat need --y and --yhat");
            };
            let read = |p: &PathBuf| load_matrix(p, Layout::from_path(p));
            Ok(Some(Dataset::new(
                read(x)?,
                read(xhat)?,
                load_vector(y, Layout::from_path(y))?,
                load_vector(yhat, Layout::from_path(yhat))?,
            )?))
        }
        _ => usage("--x and --xhat must be given together"),
    }
}

struct Features {
    sigma: Activation,
    phi: Activation,
    seed: u64,
}

fn features(f: &FeatureArgs) -> Result<Features, Failure> {
    Ok(Features {
        sigma: parse_activation(&f.sigma)?,
        phi: parse_activation(&f.phi)?,
        seed: f.seed,
    })
}

/// Everything a verb needs: kernels, labels, and the dataset when inputs were given.
struct Instance {
    ds: Option<Dataset>,
    k: KernelSet,
    y: Array1<f64>,
    yhat: Array1<f64>,
    n: usize,
}

fn normalization(f: &FeatureArgs, ds: &Dataset) -> Result<usize, Failure> {
    match f.n {
        Some(0) => usage("--n must be at least 1"),
        Some(n) => Ok(n),
        None => Ok(ds.n0()),
    }
}

fn estimate(ds: &Dataset, f: &FeatureArgs, feat: &Features) -> Result<KernelSet, Failure> {
    let n = normalization(f, ds)?;
    let m = f.samples.unwrap_or_else(|| default_samples(ds.n_train(), ds.n_test()));
    let seed = rng::child_seed(feat.seed, "kernels", 0);
    Ok(kernels::estimate_kernels(ds, &feat.sigma, &feat.phi, n, m, seed)?)
}

fn instance(data: &DataArgs, f: &FeatureArgs, feat: &Features, kernels_path: Option<&Path>) -> Result<Instance, Failure> {
    let ds = load_dataset(data, feat.seed)?;
    let k = match (kernels_path, &ds) {
        (Some(p), _) => KernelSet::load(p)?,
        (None, Some(ds)) => estimate(ds, f, feat)?,
        (None, None) => return usage("need --kernels, --synthetic, or --x/--xhat/--y/--yhat"),
    };
    let (y, yhat, n) = match &ds {
        Some(ds) => (ds.y().clone(), ds.yhat().clone(), normalization(f, ds)?),
        None => {
            let (Some(y), Some(yhat)) = (&data.y, &data.yhat) else {
                return usage("--kernels without input data needs --y and --yhat");
            };
            let n = f.n.unwrap_or(1).max(1);
            (load_vector(y, Layout::from_path(y))?, load_vector(yhat, Layout::from_path(yhat))?, n)
        }
    };
    Ok(Instance { ds, k, y, yhat, n })
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| {
            Failure::Core(Error::Io {
                path: p.to_path_buf(),
                source: e,
            })
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: Option<&Path>, value: &T) -> Outcome {
    emit(out, &report::to_json_string(value)?)
}

pub fn estimate_kernels(a: &EstimateArgs) -> Outcome {
    let feat = features(&a.features)?;
    let Some(ds) = load_dataset(&a.data, feat.seed)? else {
        return usage("estimate-kernels needs --synthetic or --x/--xhat/--y/--yhat");
    };
    let k = estimate(&ds, &a.features, &feat)?;
    if let Some(prefix) = &a.raw_prefix {
        k.write_raw_blocks(prefix)?;
    }
    emit(a.out.as_deref(), &k.to_json()?)
}

pub fn predict(a: &PredictArgs) -> Outcome {
    let feat = features(&a.features)?;
    let inst = instance(&a.data, &a.features, &feat, a.kernels.as_deref())?;
    let sol = equiv::build_equiv(&inst.k, &inst.y.view(), &inst.yhat.view(), a.d, a.delta, SCALAR_TOL)?;
    emit_json(a.out.as_deref(), &sol)
}

fn replicates(inst: &Instance, feat: &Features, cfg: &RFConfig, reps: usize) -> Result<SimReport, Failure> {
    Ok(match &inst.ds {
        Some(ds) => sim::run_replicates(ds, &feat.sigma, &feat.phi, cfg, reps, &inst.k)?,
        None => sim::gaussian_surrogate_run(&inst.k, &inst.y.view(), &inst.yhat.view(), cfg, reps, cfg.seed)?,
    })
}

pub fn simulate(a: &SimulateArgs) -> Outcome {
    let feat = features(&a.features)?;
    let inst = instance(&a.data, &a.features, &feat, a.kernels.as_deref())?;
    let cfg = RFConfig::new(a.d, a.delta, inst.n, rng::child_seed(feat.seed, "simulate", 0))?;
    let rep = replicates(&inst, &feat, &cfg, a.reps)?;
    if let Some(p) = &a.csv {
        emit(Some(p), &rep.to_csv())?;
    }
    emit(a.out.as_deref(), &rep.to_json()?)
}

#[derive(Debug, Serialize)]
struct CompareReport {
    model: &'static str,
    d: usize,
    delta: f64,
    n: usize,
    reps: usize,
    seed: u64,
    empirical_mean: f64,
    empirical_std: f64,
    empirical_std_error: f64,
    predicted: f64,
    rel_gap: f64,
    alpha: f64,
    effective_ridge: f64,
    term_variance: f64,
    term_bias: f64,
}

pub fn compare(a: &SimulateArgs) -> Outcome {
    let feat = features(&a.features)?;
    let inst = instance(&a.data, &a.features, &feat, a.kernels.as_deref())?;
    let cfg = RFConfig::new(a.d, a.delta, inst.n, rng::child_seed(feat.seed, "simulate", 0))?;
    let sol = equiv::build_equiv(&inst.k, &inst.y.view(), &inst.yhat.view(), a.d, a.delta, SCALAR_TOL)?;
    let rep = replicates(&inst, &feat, &cfg, a.reps)?;
    if let Some(p) = &a.csv {
        emit(Some(p), &rep.to_csv())?;
    }
    let out = CompareReport {
        model: rep.config.model,
        d: a.d,
        delta: a.delta,
        n: inst.n,
        reps: a.reps,
        seed: cfg.seed,
        empirical_mean: rep.mean,
        empirical_std: rep.std,
        empirical_std_error: rep.std_error(),
        predicted: sol.predicted_error,
        rel_gap: rep.rel_gap,
        alpha: sol.alpha,
        effective_ridge: sol.effective_ridge,
        term_variance: sol.term_variance,
        term_bias: sol.term_bias,
    };
    emit_json(a.out.as_deref(), &out)
}

pub fn sweep(a: &SweepArgs) -> Outcome {
    let feat = features(&a.features)?;
    let inst = instance(&a.data, &a.features, &feat, a.kernels.as_deref())?;
    let mut cells: Vec<(usize, f64)> = a
        .d_list
        .iter()
        .flat_map(|&d| a.delta_list.iter().map(move |&delta| (d, delta)))
        .collect();
    cells.sort_by(|p, q| p.0.cmp(&q.0).then(p.1.total_cmp(&q.1)));
    let rows = par::try_map_indexed(Execution::available(), cells.len(), |c| -> Result<String, Failure> {
        let (d, delta) = cells[c];
        let cfg = RFConfig::new(d, delta, inst.n, rng::child_seed(feat.seed, "sweep", c as u64))?;
        let rep = replicates(&inst, &feat, &cfg, a.reps)?;
        Ok(format!(
            "{d},{delta:?},{:.16e},{:.16e},{:.16e}\n",
            rep.predicted, rep.mean, rep.rel_gap
        ))
    })?;
    let mut csv = String::from("d,delta,predicted,empirical_mean,rel_gap\n");
    csv.extend(rows);
    emit(a.out.as_deref(), &csv)
}

#[derive(Debug, Serialize)]
struct AnisotropicSamples {
    samples: Vec<f64>,
    median: f64,
}

#[derive(Debug, Serialize)]
struct DiagnoseReport {
    d: usize,
    delta: f64,
    z: [f64; 2],
    tau: f64,
    reps: usize,
    ell: usize,
    delta_gaussianity: DeltaEstimate,
    anisotropic_gap: AnisotropicSamples,
    zeroth_moment: ZerothMomentReport,
    centering_score: f64,
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

pub fn diagnose(a: &DiagnoseArgs) -> Outcome {
    let feat = features(&a.features)?;
    let inst = instance(&a.data, &a.features, &feat, a.kernels.as_deref())?;
    let Some(ds) = &inst.ds else {
        return usage("diagnose needs input data (--synthetic or --x/--xhat/--y/--yhat)");
    };
    let ell = ds.n_train() + a.d + 2 * ds.n_test();
    if ell > a.max_ell {
        return usage(format!(
            "linearization size {ell} exceeds --max-ell {}; raise it to run anyway",
            a.max_ell
        ));
    }
    if a.reps < 2 {
        return usage("diagnose needs --reps >= 2");
    }
    let seed = feat.seed;
    let cfg = RFConfig::new(a.d, a.delta, inst.n, seed)?;

    let stein_seed = rng::child_seed(seed, "diagnose-stein", 0);
    let delta_gaussianity =
        sim::estimate_delta_gaussianity(ds, &feat.sigma, &feat.phi, &cfg, a.z, a.tau, a.reps, stein_seed)?;

    let m = equiv::rf_dyson_solution(&inst.k, a.d, a.delta, a.z)?;
    let samples = par::try_map_indexed(Execution::available(), a.reps, |s| -> rf_equiv::Result<f64> {
        let fs = rng::child_seed(seed, "diagnose-features", s as u64);
        let (f, fh) = sim::sample_features(ds, &feat.sigma, &feat.phi, a.d, inst.n, fs)?;
        let pr = sim::build_pseudoresolvent(&f.view(), &fh.view(), a.delta, a.z)?;
        let u = sim::random_unit_probe(ell, rng::child_seed(seed, "diagnose-probe", s as u64));
        sim::anisotropic_gap(&pr, &m, &u)
    })?;

    let spec = LinearizationSpec::rf(&inst.k, a.d, a.delta)?;
    let mom = rdel::rf_block_moments(&inst.k, a.d);
    let zeroth_moment = rdel::zeroth_moment_check(&spec, &mom, &ETA_LIST, ZerothMomentOptions::default())?;

    let m_center = a
        .features
        .samples
        .unwrap_or_else(|| default_samples(ds.n_train(), ds.n_test()));
    let centering_score = kernels::verify_centering(
        &feat.sigma,
        &feat.phi,
        ds,
        inst.n,
        m_center,
        rng::child_seed(seed, "diagnose-centering", 0),
    )?;

    let out = DiagnoseReport {
        d: a.d,
        delta: a.delta,
        z: [a.z.re, a.z.im],
        tau: a.tau,
        reps: a.reps,
        ell,
        delta_gaussianity,
        anisotropic_gap: AnisotropicSamples {
            median: median(samples.clone()),
            samples,
        },
        zeroth_moment,
        centering_score,
    };
    emit_json(a.out.as_deref(), &out)
}

#[derive(Debug, Serialize)]
struct FailureReport<'a> {
    status: &'static str,
    failure: &'a str,
    exit_code: u8,
    message: String,
}

/// Best-effort failure report; the exit status carries the outcome either way.
pub fn write_failure(out: &Path, f: &Failure) {
    let rep = FailureReport {
        status: "failure",
        failure: f.name(),
        exit_code: f.exit_code(),
        message: f.message(),
    };
    if let Ok(text) = report::to_json_string(&rep) {
        let _ = std::fs::write(out, text);
    }
}
