//! Command-line surface: coefficient tables, the numerical verification
//! suites, training, sampling, and SVG plotting.
//!
//! Every run that writes files also writes a key=value manifest next to
//! its primary output, capturing the resolved configuration, the seed,
//! and start/end timestamps, so any output can be regenerated.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use num_traits::Zero;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::data::{self, DatasetName};
use crate::dynamics::{self, DriftSpec};
use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::parallel;
use crate::score::{self, ScoreNet, TrainConfig};
use crate::sde::{self, ReverseConfig};
use crate::spectral::{self, rat, rat_int, Rat, Surd};

#[derive(Parser, Debug)]
#[command(
    name = "holdpp",
    version,
    about = "Critically damped higher-order Langevin diffusion for toy generative modeling"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,

    /// RNG seed; precedence: this flag, config file, HOLDPP_SEED, 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Plain key=value config file overriding built-in defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Print the critically damped coefficient family for order n.
    Params {
        #[arg(long)]
        n: usize,
    },

    /// Run numerical property suites; exit nonzero on any failure.
    Verify {
        /// Exact-arithmetic identities behind the coefficient family.
        #[arg(long)]
        spectral: bool,
        /// Drift/diffusion identities, propagator, and covariance law.
        #[arg(long)]
        dynamics: bool,
        /// Spectral-abscissa lower bound and attainment at criticality.
        #[arg(long)]
        optimality: bool,
        /// All of the above (default when no suite flag is given).
        #[arg(long)]
        all: bool,
        /// Largest order the suites exercise.
        #[arg(long, default_value_t = 6)]
        n_max: usize,
    },

    /// Train a score network on a toy dataset and write a checkpoint.
    Train {
        #[arg(long)]
        dataset: String,
        /// Order of the process (1 = plain overdamped diffusion).
        #[arg(long)]
        n: usize,
        /// Dataset points drawn before training.
        #[arg(long, default_value_t = 50_000)]
        count: usize,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },

    /// Integrate reverse chains from a checkpoint; write positions CSV.
    Sample {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        count: usize,
        /// Reverse integration steps per chain.
        #[arg(long, default_value_t = 250)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },

    /// Render an SVG scatter of data/samples, or reverse trajectories.
    Plot {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Plot position-vs-time reverse chains instead of a scatter.
        #[arg(long)]
        trajectory: bool,
        /// Checkpoint driving the trajectory chains.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        chains: usize,
        #[arg(long, default_value_t = 250)]
        steps: usize,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let seed_flag = cli.seed;
    let config = cli.config.as_deref();
    match cli.cmd {
        Cmd::Params { n } => cmd_params(n, &mut out),
        Cmd::Verify {
            spectral,
            dynamics,
            optimality,
            all,
            n_max,
        } => cmd_verify(spectral, dynamics, optimality, all, n_max, &mut out),
        Cmd::Train {
            dataset,
            n,
            count,
            iters,
            batch,
            lr,
            out: out_path,
        } => cmd_train(
            &dataset, n, count, iters, batch, lr, &out_path, seed_flag, config, &mut out,
        ),
        Cmd::Sample {
            ckpt,
            count,
            steps,
            out: out_path,
        } => cmd_sample(&ckpt, count, steps, &out_path, seed_flag, config, &mut out),
        Cmd::Plot {
            data,
            samples,
            out: out_path,
            trajectory,
            ckpt,
            chains,
            steps,
        } => cmd_plot(
            data.as_deref(),
            samples.as_deref(),
            &out_path,
            trajectory,
            ckpt.as_deref(),
            chains,
            steps,
            seed_flag,
            config,
            &mut out,
        ),
    }
}

// ---------------------------------------------------------------------
// Configuration resolution
// ---------------------------------------------------------------------

/// Parses a plain key=value config file; `#` starts a comment line.
pub fn load_config(path: &Path) -> Result<HashMap<String, String>> {
    let text = std::fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!(
                "{} line {}: expected key=value, got {:?}",
                path.display(),
                idx + 1,
                line
            ))
        })?;
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

/// Applies config-file keys onto the built-in training defaults. Known
/// keys: T, l_inv, alpha, batch, iters, lr, t_eps, seed.
pub fn resolve_train_config(file: &HashMap<String, String>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (key, value) in file {
        let bad = |kind: &str| {
            Error::Usage(format!("config key {} needs a {} value, got {:?}", key, kind, value))
        };
        match key.as_str() {
            "T" => cfg.t_horizon = value.parse().map_err(|_| bad("float"))?,
            "l_inv" => cfg.l_inv = value.parse().map_err(|_| bad("float"))?,
            "alpha" => cfg.alpha = value.parse().map_err(|_| bad("float"))?,
            "batch" => cfg.batch = value.parse().map_err(|_| bad("integer"))?,
            "iters" => cfg.iters = value.parse().map_err(|_| bad("integer"))?,
            "lr" => cfg.lr = value.parse().map_err(|_| bad("float"))?,
            "t_eps" => cfg.t_eps = value.parse().map_err(|_| bad("float"))?,
            "seed" => {
                value.parse::<u64>().map_err(|_| bad("integer"))?;
            }
            other => {
                return Err(Error::Usage(format!("unknown config key {:?}", other)));
            }
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Seed precedence: --seed flag, config file, HOLDPP_SEED, then 0.
pub fn resolve_seed(flag: Option<u64>, file: &HashMap<String, String>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(v) = file.get("seed") {
        return v
            .parse()
            .map_err(|_| Error::Usage(format!("config seed must be an integer, got {:?}", v)));
    }
    match std::env::var("HOLDPP_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| Error::Usage(format!("HOLDPP_SEED must be an integer, got {:?}", v))),
        Err(_) => Ok(0),
    }
}

fn build_spec(n: usize, l_inv: f64) -> Result<DriftSpec> {
    if n == 0 {
        return Err(Error::Usage("--n must be at least 1".into()));
    }
    if n == 1 {
        return dynamics::order_one_params(l_inv);
    }
    let mut spec = dynamics::critical_params(n)?;
    spec.l_inv = l_inv;
    Ok(spec)
}

// ---------------------------------------------------------------------
// Manifests
// ---------------------------------------------------------------------

fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Writes `<out>.manifest` next to the primary output file.
pub fn write_manifest(
    out_path: &Path,
    subcommand: &str,
    seed: u64,
    entries: &[(String, String)],
    start: DateTime<Utc>,
) -> Result<PathBuf> {
    let mut name = out_path.as_os_str().to_owned();
    name.push(".manifest");
    let path = PathBuf::from(name);
    let mut text = String::new();
    let _ = writeln!(text, "subcommand={}", subcommand);
    let _ = writeln!(text, "version={}", version_string());
    let _ = writeln!(text, "seed={}", seed);
    let _ = writeln!(text, "start={}", start.to_rfc3339_opts(SecondsFormat::Millis, true));
    let _ = writeln!(
        text,
        "end={}",
        Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
    );
    for (k, v) in entries {
        let _ = writeln!(text, "{}={}", k, v);
    }
    data::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

fn cfg_entries(cfg: &TrainConfig) -> Vec<(String, String)> {
    vec![
        ("T".into(), format!("{:?}", cfg.t_horizon)),
        ("l_inv".into(), format!("{:?}", cfg.l_inv)),
        ("alpha".into(), format!("{:?}", cfg.alpha)),
        ("batch".into(), cfg.batch.to_string()),
        ("iters".into(), cfg.iters.to_string()),
        ("lr".into(), format!("{:?}", cfg.lr)),
        ("t_eps".into(), format!("{:?}", cfg.t_eps)),
    ]
}

// ---------------------------------------------------------------------
// params
// ---------------------------------------------------------------------

pub fn cmd_params(n: usize, out: &mut impl Write) -> Result<()> {
    if n < 2 {
        return Err(Error::Usage(
            "params needs --n 2 or higher; order 1 has no damping coefficients (use train --n 1 for plain diffusion)"
                .into(),
        ));
    }
    let spec = dynamics::critical_params(n)?;
    let lam = spec.lambda_star.expect("critical spec");
    let (f, _) = dynamics::build_drift(&spec);
    let eigs = linalg::eigenvalues(&f)?;
    let collapsed = linalg::collapse_defective_clusters(&eigs, f.frobenius_norm());
    let residual = collapsed
        .iter()
        .map(|e| (e - Complex64::new(lam, 0.0)).norm())
        .fold(0.0, f64::max);
    writeln!(out, "order n      = {}", n)?;
    writeln!(out, "lambda_star  = {:.15}", lam)?;
    writeln!(out, "xi           = {:.15}", spec.xi)?;
    for (i, g) in spec.gammas.iter().enumerate() {
        writeln!(out, "gamma_{:<6} = {:.15}", i + 1, g)?;
    }
    writeln!(out, "eigenvalue residual max|eig - lambda_star| = {:.3e}", residual)?;
    Ok(())
}

// ---------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckReport {
    fn pass(name: &str, detail: String) -> Self {
        CheckReport {
            name: name.into(),
            passed: true,
            detail,
        }
    }

    fn fail(name: &str, detail: String) -> Self {
        CheckReport {
            name: name.into(),
            passed: false,
            detail,
        }
    }

    fn bounded(name: &str, worst: f64, bound: f64) -> Self {
        CheckReport {
            name: name.into(),
            passed: worst <= bound,
            detail: format!("worst residual {:.3e} (bound {:.1e})", worst, bound),
        }
    }
}

/// Exact-arithmetic identities behind the coefficient family, for all
/// orders up to n_max: the closed-form minor table versus its
/// recurrence, the characteristic polynomial collapsing to a single
/// shifted power, and recovery of the coefficient ratios from the table.
pub fn verify_spectral(n_max: usize) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    let n_max = n_max.max(2);

    let mut mismatches = 0usize;
    let mut compared = 0usize;
    for n in 2..=n_max {
        let lam_sq = rat_int(2 * n as i64 - 3);
        let table = spectral::s_recurrence(n, &spectral::critical_gammas_sq(n));
        for i in 1..n {
            for k in 0..=(n / 2) {
                if (n - i) as i64 > 2 * k as i64 - 2 {
                    compared += 1;
                    let closed = match spectral::s_closed(n, i, k, &lam_sq) {
                        Ok(v) => v,
                        Err(_) => {
                            mismatches += 1;
                            continue;
                        }
                    };
                    if closed != table.get((n - i) as i64, k as i64) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    reports.push(if mismatches == 0 {
        CheckReport::pass(
            "minor table closed form vs recurrence",
            format!("{} entries equal exactly, n <= {}", compared, n_max),
        )
    } else {
        CheckReport::fail(
            "minor table closed form vs recurrence",
            format!("{} of {} entries differ", mismatches, compared),
        )
    });

    let mut poly_bad = 0usize;
    for n in 2..=n_max {
        let m = 2 * n as i64 - 3;
        let xi = Surd::new(Rat::zero(), rat_int(n as i64), m);
        let q = match spectral::q_poly(n, &spectral::critical_gammas_sq(n), &xi) {
            Ok(q) => q,
            Err(_) => {
                poly_bad += 1;
                continue;
            }
        };
        let signed = if n % 2 == 0 { q } else { q.neg() };
        if signed != spectral::critical_char_poly_expanded(n) {
            poly_bad += 1;
        }
    }
    reports.push(if poly_bad == 0 {
        CheckReport::pass(
            "characteristic polynomial is one shifted power",
            format!("exact for n <= {}", n_max),
        )
    } else {
        CheckReport::fail(
            "characteristic polynomial is one shifted power",
            format!("{} orders differ", poly_bad),
        )
    });

    let mut ratio_bad = 0usize;
    for n in 2..=n_max {
        let lam_sq = rat_int(2 * n as i64 - 3);
        let table = spectral::s_recurrence(n, &spectral::critical_gammas_sq(n));
        for i in 1..n {
            let expected = rat((n * n) as i64 - (i * i) as i64, 4 * (i * i) as i64 - 1)
                * lam_sq.clone();
            for k in 1..=(n / 2) {
                let jn = (n - i) as i64;
                if jn > 2 * k as i64 - 2 && !table.get(jn - 2, k as i64 - 1).is_zero() {
                    match spectral::gamma_from_s(n, i, k, &table) {
                        Ok(got) if got == expected => {}
                        _ => ratio_bad += 1,
                    }
                }
            }
        }
    }
    reports.push(if ratio_bad == 0 {
        CheckReport::pass(
            "coefficient ratios recovered from minor table",
            format!("k-invariant and exact for n <= {}", n_max),
        )
    } else {
        CheckReport::fail(
            "coefficient ratios recovered from minor table",
            format!("{} (n,i,k) cells differ", ratio_bad),
        )
    });

    reports
}

/// Floating-point identities of one drift family: the diffusion/drift
/// cancellation, the trace, and the collapsed spectrum. Usable on a
/// doctored spec, where the spectrum check must fail.
pub fn check_drift_identities(spec: &DriftSpec) -> Vec<CheckReport> {
    let mut reports = Vec::new();
    let (f, ggt) = dynamics::build_drift(spec);
    let sym = f.add(&f.transpose()).scale(spec.l_inv);
    let residual = ggt.add(&sym).max_abs();
    reports.push(CheckReport::bounded(
        "diffusion cancels the symmetrized drift",
        residual,
        0.0,
    ));
    reports.push(CheckReport::bounded(
        "trace equals minus the damping",
        (f.trace() + spec.xi).abs(),
        0.0,
    ));
    if let Some(lam) = spec.lambda_star {
        let report = match linalg::eigenvalues(&f) {
            Ok(eigs) => {
                let collapsed = linalg::collapse_defective_clusters(&eigs, f.frobenius_norm());
                let worst = collapsed
                    .iter()
                    .map(|e| (e - Complex64::new(lam, 0.0)).norm())
                    .fold(0.0, f64::max);
                CheckReport::bounded("spectrum collapses to lambda_star", worst, 1e-4)
            }
            Err(e) => CheckReport::fail("spectrum collapses to lambda_star", e.to_string()),
        };
        reports.push(report);
    }
    reports
}

/// Numerical dynamics suite across critical orders up to n_max: drift
/// identities, the terminating propagator series against dense scaling
/// and squaring, the covariance law against an ODE integrator, and
/// stationarity of l_inv * I.
pub fn verify_dynamics(n_max: usize) -> Vec<CheckReport> {
    let n_max = n_max.clamp(2, 8);
    let mut reports = Vec::new();

    let mut identity_worst: f64 = 0.0;
    let mut trace_worst: f64 = 0.0;
    let mut spectrum_worst: f64 = 0.0;
    let mut spectrum_ok = true;
    for n in 2..=n_max {
        let spec = dynamics::critical_params(n).expect("order >= 2");
        for report in check_drift_identities(&spec) {
            let worst = match report.name.as_str() {
                "diffusion cancels the symmetrized drift" => &mut identity_worst,
                "trace equals minus the damping" => &mut trace_worst,
                _ => {
                    spectrum_ok &= report.passed;
                    &mut spectrum_worst
                }
            };
            if let Some(v) = report
                .detail
                .split_whitespace()
                .find_map(|tok| tok.parse::<f64>().ok())
            {
                *worst = worst.max(v);
            }
        }
    }
    reports.push(CheckReport::bounded(
        "diffusion cancels the symmetrized drift",
        identity_worst,
        0.0,
    ));
    reports.push(CheckReport::bounded(
        "trace equals minus the damping",
        trace_worst,
        0.0,
    ));
    reports.push(CheckReport {
        name: "spectrum collapses to lambda_star".into(),
        passed: spectrum_ok,
        detail: format!("worst residual {:.3e} (bound 1.0e-4)", spectrum_worst),
    });

    let mut prop_worst: f64 = 0.0;
    for n in 2..=n_max {
        let spec = dynamics::critical_params(n).expect("order >= 2");
        let (f, _) = dynamics::build_drift(&spec);
        for t in [0.1, 1.0, 5.0] {
            let fast = match dynamics::expm_critical(&spec, t) {
                Ok(m) => m,
                Err(e) => return vec![CheckReport::fail("terminating propagator series", e.to_string())],
            };
            let dense = match linalg::expm_oracle(&f, t) {
                Ok(m) => m,
                Err(e) => return vec![CheckReport::fail("terminating propagator series", e.to_string())],
            };
            prop_worst = prop_worst.max(fast.sub(&dense).max_abs());
        }
    }
    reports.push(CheckReport::bounded(
        "terminating propagator series vs dense exponential",
        prop_worst,
        1e-10,
    ));

    let mut cov_worst: f64 = 0.0;
    for n in 2..=n_max.min(6) {
        let spec = dynamics::critical_params(n).expect("order >= 2");
        let (f, ggt) = dynamics::build_drift(&spec);
        let mut diag = vec![spec.l_inv; n];
        diag[0] = 0.0;
        let s0 = Matrix::diag(&diag);
        let t = 1.0;
        let stats = match dynamics::forward_stats(&spec, t, &s0) {
            Ok(s) => s,
            Err(e) => return vec![CheckReport::fail("covariance law", e.to_string())],
        };
        let oracle = dynamics::cov_ode_oracle(&f, &ggt, &s0, t, 1e-3);
        cov_worst = cov_worst.max(stats.cov_factor.sub(&oracle).frobenius_norm());
    }
    reports.push(CheckReport::bounded(
        "closed-form covariance vs ODE integration",
        cov_worst,
        1e-6,
    ));

    let mut stat_worst: f64 = 0.0;
    let mut relax_worst: f64 = 0.0;
    for n in 2..=n_max {
        let spec = dynamics::critical_params(n).expect("order >= 2");
        let (f, ggt) = dynamics::build_drift(&spec);
        let stationary = Matrix::identity(n).scale(spec.l_inv);
        match linalg::lyapunov_residual(&f, &stationary, &ggt) {
            Ok(r) => stat_worst = stat_worst.max(r),
            Err(e) => return vec![CheckReport::fail("stationary covariance", e.to_string())],
        }
        let s0 = Matrix::zeros(n, n);
        match dynamics::forward_stats(&spec, 50.0, &s0) {
            Ok(stats) => {
                relax_worst = relax_worst.max(stats.cov_factor.sub(&stationary).max_abs());
            }
            Err(e) => return vec![CheckReport::fail("stationary covariance", e.to_string())],
        }
    }
    reports.push(CheckReport::bounded(
        "l_inv * I solves the Lyapunov equation",
        stat_worst,
        1e-12,
    ));
    reports.push(CheckReport::bounded(
        "covariance relaxes to l_inv * I",
        relax_worst,
        1e-6,
    ));

    reports
}

/// Spectral-abscissa suite: random coupling perturbations never push the
/// slowest mode left of lambda_star, and the critical family attains it.
pub fn verify_optimality(n_max: usize) -> Vec<CheckReport> {
    let n_max = n_max.clamp(2, 6);
    let mut bound_worst = f64::INFINITY;
    let mut attain_worst: f64 = 0.0;
    for n in 2..=n_max {
        let spec = dynamics::critical_params(n).expect("order >= 2");
        let lam = spec.lambda_star.expect("critical spec");
        let mut rng = ChaCha12Rng::seed_from_u64(0xC0FFEE + n as u64);
        for _ in 0..200 {
            let mut perturbed = spec.clone();
            perturbed.lambda_star = None;
            for g in perturbed.gammas.iter_mut() {
                *g *= rng.random_range(0.5..2.0);
            }
            let (f, _) = dynamics::build_drift(&perturbed);
            let eigs = match linalg::eigenvalues(&f) {
                Ok(e) => e,
                Err(e) => return vec![CheckReport::fail("abscissa lower bound", e.to_string())],
            };
            let max_re = eigs.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
            bound_worst = bound_worst.min(max_re - lam);
        }
        let (f, _) = dynamics::build_drift(&spec);
        match linalg::eigenvalues(&f) {
            Ok(eigs) => {
                let collapsed = linalg::collapse_defective_clusters(&eigs, f.frobenius_norm());
                let max_re = collapsed.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
                attain_worst = attain_worst.max((max_re - lam).abs());
            }
            Err(e) => return vec![CheckReport::fail("abscissa attained at criticality", e.to_string())],
        }
    }
    vec![
        CheckReport {
            name: "abscissa lower bound under perturbation".into(),
            passed: bound_worst >= -1e-6,
            detail: format!("worst margin {:+.3e} (allowed >= -1.0e-6)", bound_worst),
        },
        CheckReport::bounded("abscissa attained at criticality", attain_worst, 1e-4),
    ]
}

pub fn cmd_verify(
    spectral: bool,
    dynamics: bool,
    optimality: bool,
    all: bool,
    n_max: usize,
    out: &mut impl Write,
) -> Result<()> {
    if n_max < 2 {
        return Err(Error::Usage("--n-max must be at least 2".into()));
    }
    let all = all || !(spectral || dynamics || optimality);
    let mut reports = Vec::new();
    if all || spectral {
        reports.extend(verify_spectral(n_max));
    }
    if all || dynamics {
        reports.extend(verify_dynamics(n_max));
    }
    if all || optimality {
        reports.extend(verify_optimality(n_max));
    }
    let mut failures = Vec::new();
    for r in &reports {
        let tag = if r.passed { "ok  " } else { "FAIL" };
        writeln!(out, "{} {:<48} {}", tag, r.name, r.detail)?;
        if !r.passed {
            failures.push(r.name.clone());
        }
    }
    if failures.is_empty() {
        writeln!(out, "all {} checks passed", reports.len())?;
        Ok(())
    } else {
        Err(Error::CheckFailed(failures.join("; ")))
    }
}

// ---------------------------------------------------------------------
// train / sample / plot
// ---------------------------------------------------------------------

#[allow(clippy::too_many_arguments)]
pub fn cmd_train(
    dataset: &str,
    n: usize,
    count: usize,
    iters: Option<usize>,
    batch: Option<usize>,
    lr: Option<f64>,
    out_path: &Path,
    seed_flag: Option<u64>,
    config_path: Option<&Path>,
    out: &mut impl Write,
) -> Result<()> {
    let start = Utc::now();
    let file = match config_path {
        Some(p) => load_config(p)?,
        None => HashMap::new(),
    };
    let mut cfg = resolve_train_config(&file)?;
    cfg.seed = resolve_seed(seed_flag, &file)?;
    if let Some(v) = iters {
        cfg.iters = v;
    }
    if let Some(v) = batch {
        cfg.batch = v;
    }
    if let Some(v) = lr {
        cfg.lr = v;
    }
    cfg.validate()?;

    let name: DatasetName = dataset.parse()?;
    let h = name.dim();
    let spec = build_spec(n, cfg.l_inv)?;
    let ds = data::make_dataset(name, count, cfg.seed)?;
    let mut init_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let net = ScoreNet::new(ScoreNet::default_dims(n, h), cfg.t_horizon, &mut init_rng)?;
    writeln!(
        out,
        "training on {} ({} points, h={}) at order n={}: {} iterations, batch {}, lr {}",
        name, count, h, n, cfg.iters, cfg.batch, cfg.lr
    )?;
    let (net, trace) = score::train(net, &spec, &ds.points, &cfg)?;
    for (it, v) in &trace {
        writeln!(out, "iter {:>7}  loss {:.6}", it, v)?;
    }
    data::save_checkpoint(&net, &spec, &cfg, out_path)?;
    let mut entries = vec![
        ("dataset".to_string(), name.to_string()),
        ("n".to_string(), n.to_string()),
        ("count".to_string(), count.to_string()),
    ];
    entries.extend(cfg_entries(&cfg));
    if let Some((_, v)) = trace.last() {
        entries.push(("final_loss".to_string(), format!("{:?}", v)));
    }
    entries.push(("checkpoint".to_string(), out_path.display().to_string()));
    let manifest = write_manifest(out_path, "train", cfg.seed, &entries, start)?;
    writeln!(out, "wrote {} and {}", out_path.display(), manifest.display())?;
    Ok(())
}

/// Integrates `count` independent reverse chains and returns their final
/// positions; chain seeds come off one master stream, so the result only
/// depends on `seed`.
pub fn generate_samples(
    net: &ScoreNet,
    spec: &DriftSpec,
    rev: &ReverseConfig,
    count: usize,
) -> Result<Vec<Vec<f64>>> {
    let h = net.output_dim();
    let mut master = ChaCha12Rng::seed_from_u64(rev.seed);
    let chain_seeds: Vec<u64> = (0..count).map(|_| master.next_u64()).collect();
    let chunks = parallel::map_chunks(&chain_seeds, 8, parallel::parallel_enabled(), |chunk| {
        chunk
            .iter()
            .map(|&s| {
                let mut rng = ChaCha12Rng::seed_from_u64(s);
                sde::em_reverse(spec, h, |st, t| score::net_forward(net, st, t), rev, &mut rng)
                    .map(|st| st.position().to_vec())
            })
            .collect::<Result<Vec<_>>>()
    });
    let mut samples = Vec::with_capacity(count);
    for chunk in chunks {
        samples.extend(chunk?);
    }
    Ok(samples)
}

pub fn cmd_sample(
    ckpt: &Path,
    count: usize,
    steps: usize,
    out_path: &Path,
    seed_flag: Option<u64>,
    config_path: Option<&Path>,
    out: &mut impl Write,
) -> Result<()> {
    let start = Utc::now();
    if count == 0 {
        return Err(Error::Usage("--count must be at least 1".into()));
    }
    let file = match config_path {
        Some(p) => load_config(p)?,
        None => HashMap::new(),
    };
    let seed = resolve_seed(seed_flag, &file)?;
    let (net, spec, cfg) = data::load_checkpoint(ckpt)?;
    let rev = ReverseConfig {
        steps,
        t_end: cfg.t_horizon,
        t_eps: cfg.t_eps,
        seed,
    };
    rev.validate()?;
    writeln!(
        out,
        "sampling {} chains of {} reverse steps from {} (n={}, h={})",
        count,
        steps,
        ckpt.display(),
        spec.n,
        net.output_dim()
    )?;
    let samples = generate_samples(&net, &spec, &rev, count)?;
    data::save_positions_csv(out_path, &samples)?;
    let entries = vec![
        ("checkpoint".to_string(), ckpt.display().to_string()),
        ("count".to_string(), count.to_string()),
        ("steps".to_string(), steps.to_string()),
        ("n".to_string(), spec.n.to_string()),
        ("h".to_string(), net.output_dim().to_string()),
        ("t_end".to_string(), format!("{:?}", rev.t_end)),
        ("t_eps".to_string(), format!("{:?}", rev.t_eps)),
        ("samples".to_string(), out_path.display().to_string()),
    ];
    let manifest = write_manifest(out_path, "sample", seed, &entries, start)?;
    writeln!(out, "wrote {} and {}", out_path.display(), manifest.display())?;
    Ok(())
}

// ---------------------------------------------------------------------
// SVG rendering
// ---------------------------------------------------------------------

const SVG_SIZE: f64 = 800.0;

#[derive(Debug, Clone, Copy)]
struct ViewBounds {
    min_x: f64,
    max_x: f64,
    min_y: f64,
    max_y: f64,
}

impl ViewBounds {
    /// Tight bounds over all points, widened by a 5% margin per side; a
    /// degenerate axis is padded to unit width.
    fn of<'a>(points: impl Iterator<Item = &'a (f64, f64)>) -> ViewBounds {
        let mut b = ViewBounds {
            min_x: f64::INFINITY,
            max_x: f64::NEG_INFINITY,
            min_y: f64::INFINITY,
            max_y: f64::NEG_INFINITY,
        };
        for (x, y) in points {
            b.min_x = b.min_x.min(*x);
            b.max_x = b.max_x.max(*x);
            b.min_y = b.min_y.min(*y);
            b.max_y = b.max_y.max(*y);
        }
        let pad = |lo: &mut f64, hi: &mut f64| {
            if !lo.is_finite() || !hi.is_finite() {
                *lo = 0.0;
                *hi = 1.0;
            }
            let span = *hi - *lo;
            if span <= 0.0 {
                *lo -= 0.5;
                *hi += 0.5;
            } else {
                *lo -= 0.05 * span;
                *hi += 0.05 * span;
            }
        };
        pad(&mut b.min_x, &mut b.max_x);
        pad(&mut b.min_y, &mut b.max_y);
        b
    }

    fn map(&self, x: f64, y: f64) -> (f64, f64) {
        let px = (x - self.min_x) / (self.max_x - self.min_x) * SVG_SIZE;
        let py = SVG_SIZE - (y - self.min_y) / (self.max_y - self.min_y) * SVG_SIZE;
        (px, py)
    }
}

pub struct ScatterLayer<'a> {
    pub points: &'a [(f64, f64)],
    pub color: &'a str,
    pub radius: f64,
    pub opacity: f64,
}

fn svg_header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n\
         <rect width=\"{s}\" height=\"{s}\" fill=\"#ffffff\"/>\n\
         <rect x=\"0.5\" y=\"0.5\" width=\"{w}\" height=\"{w}\" fill=\"none\" stroke=\"#333333\"/>\n",
        s = SVG_SIZE,
        w = SVG_SIZE - 1.0
    )
}

/// Renders point layers into a fixed 800x800 viewport with shared
/// autoscaled bounds.
pub fn svg_scatter(layers: &[ScatterLayer]) -> String {
    let bounds = ViewBounds::of(layers.iter().flat_map(|l| l.points.iter()));
    let mut svg = svg_header();
    for layer in layers {
        for (x, y) in layer.points {
            let (px, py) = bounds.map(*x, *y);
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{}\" fill=\"{}\" fill-opacity=\"{}\"/>",
                px, py, layer.radius, layer.color, layer.opacity
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

/// Renders polylines (e.g. position-vs-time trajectories) into the same
/// fixed viewport.
pub fn svg_polylines(lines: &[(Vec<(f64, f64)>, &str)]) -> String {
    let bounds = ViewBounds::of(lines.iter().flat_map(|(pts, _)| pts.iter()));
    let mut svg = svg_header();
    for (pts, color) in lines {
        let coords: Vec<String> = pts
            .iter()
            .map(|(x, y)| {
                let (px, py) = bounds.map(*x, *y);
                format!("{:.2},{:.2}", px, py)
            })
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.2\" stroke-opacity=\"0.85\"/>",
            coords.join(" "),
            color
        );
    }
    svg.push_str("</svg>\n");
    svg
}

const TRAJECTORY_PALETTE: [&str; 8] = [
    "#1b6ca8", "#d95f02", "#2e8b57", "#a23b72", "#708090", "#b8860b", "#4b0082", "#c03546",
];

fn as_plane(points: &[Vec<f64>]) -> Vec<(f64, f64)> {
    // 1-D data is spread along the vertical axis by sample index so the
    // marginal stays readable as a strip plot.
    if points[0].len() >= 2 {
        points.iter().map(|p| (p[0], p[1])).collect()
    } else {
        let denom = (points.len().max(2) - 1) as f64;
        points
            .iter()
            .enumerate()
            .map(|(i, p)| (p[0], i as f64 / denom))
            .collect()
    }
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_plot(
    data_csv: Option<&Path>,
    samples_csv: Option<&Path>,
    out_path: &Path,
    trajectory: bool,
    ckpt: Option<&Path>,
    chains: usize,
    steps: usize,
    seed_flag: Option<u64>,
    config_path: Option<&Path>,
    out: &mut impl Write,
) -> Result<()> {
    let start = Utc::now();
    let file = match config_path {
        Some(p) => load_config(p)?,
        None => HashMap::new(),
    };
    let seed = resolve_seed(seed_flag, &file)?;
    let mut entries: Vec<(String, String)> = Vec::new();
    let svg = if trajectory {
        let ckpt = ckpt.ok_or_else(|| Error::Usage("--trajectory needs --ckpt".into()))?;
        if chains == 0 {
            return Err(Error::Usage("--chains must be at least 1".into()));
        }
        let (net, spec, cfg) = data::load_checkpoint(ckpt)?;
        let rev = ReverseConfig {
            steps,
            t_end: cfg.t_horizon,
            t_eps: cfg.t_eps,
            seed,
        };
        rev.validate()?;
        let h = net.output_dim();
        let mut master = ChaCha12Rng::seed_from_u64(seed);
        let mut lines: Vec<(Vec<(f64, f64)>, &str)> = Vec::new();
        for c in 0..chains {
            let chain_seed = master.next_u64();
            let mut rng = ChaCha12Rng::seed_from_u64(chain_seed);
            let trace = sde::em_reverse_traced(
                &spec,
                h,
                |st, t| score::net_forward(&net, st, t),
                &rev,
                &mut rng,
            )?;
            let color = TRAJECTORY_PALETTE[c % TRAJECTORY_PALETTE.len()];
            for d in 0..h {
                let pts: Vec<(f64, f64)> = trace
                    .iter()
                    .map(|(t, state)| (rev.t_end - t, state.position()[d]))
                    .collect();
                lines.push((pts, color));
            }
        }
        entries.push(("checkpoint".into(), ckpt.display().to_string()));
        entries.push(("chains".into(), chains.to_string()));
        entries.push(("steps".into(), steps.to_string()));
        writeln!(
            out,
            "plotted {} reverse chains of {} steps from {}",
            chains,
            steps,
            ckpt.display()
        )?;
        svg_polylines(&lines)
    } else {
        if data_csv.is_none() && samples_csv.is_none() {
            return Err(Error::Usage(
                "plot needs --data and/or --samples (or --trajectory)".into(),
            ));
        }
        let data_pts = data_csv.map(data::load_positions_csv).transpose()?;
        let sample_pts = samples_csv.map(data::load_positions_csv).transpose()?;
        if let (Some(a), Some(b)) = (&data_pts, &sample_pts) {
            if a[0].len() != b[0].len() {
                return Err(Error::Dimension(format!(
                    "data has h={} but samples have h={}",
                    a[0].len(),
                    b[0].len()
                )));
            }
        }
        let data_plane = data_pts.as_deref().map(as_plane);
        let sample_plane = sample_pts.as_deref().map(as_plane);
        let mut layers = Vec::new();
        if let Some(pts) = &data_plane {
            layers.push(ScatterLayer {
                points: pts,
                color: "#9aa0a6",
                radius: 2.0,
                opacity: 0.35,
            });
        }
        if let Some(pts) = &sample_plane {
            layers.push(ScatterLayer {
                points: pts,
                color: "#d95f02",
                radius: 2.2,
                opacity: 0.8,
            });
        }
        if let Some(p) = data_csv {
            entries.push(("data".into(), p.display().to_string()));
        }
        if let Some(p) = samples_csv {
            entries.push(("samples".into(), p.display().to_string()));
        }
        writeln!(
            out,
            "plotted {} data and {} sample points",
            data_plane.as_ref().map_or(0, |p| p.len()),
            sample_plane.as_ref().map_or(0, |p| p.len())
        )?;
        svg_scatter(&layers)
    };
    data::write_atomic(out_path, svg.as_bytes())?;
    entries.push(("figure".into(), out_path.display().to_string()));
    let manifest = write_manifest(out_path, "plot", seed, &entries, start)?;
    writeln!(out, "wrote {} and {}", out_path.display(), manifest.display())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_overrides_defaults_and_rejects_unknown_keys() {
        let mut file = HashMap::new();
        file.insert("iters".to_string(), "7".to_string());
        file.insert("lr".to_string(), "0.01".to_string());
        let cfg = resolve_train_config(&file).unwrap();
        assert_eq!(cfg.iters, 7);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.batch, TrainConfig::default().batch);

        file.insert("volume".to_string(), "11".to_string());
        assert!(matches!(resolve_train_config(&file), Err(Error::Usage(_))));

        let mut bad = HashMap::new();
        bad.insert("batch".to_string(), "many".to_string());
        assert!(resolve_train_config(&bad).is_err());
    }

    #[test]
    fn seed_precedence_flag_over_config() {
        let mut file = HashMap::new();
        file.insert("seed".to_string(), "5".to_string());
        assert_eq!(resolve_seed(Some(9), &file).unwrap(), 9);
        assert_eq!(resolve_seed(None, &file).unwrap(), 5);
        file.insert("seed".to_string(), "x".to_string());
        assert!(resolve_seed(None, &file).is_err());
    }

    #[test]
    fn params_prints_known_values_and_rejects_order_one() {
        let mut buf = Vec::new();
        cmd_params(2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("-1.000000000000000"));
        assert!(text.contains("2.000000000000000"));
        assert!(text.contains("1.000000000000000"));

        let mut buf = Vec::new();
        cmd_params(3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("2.828427124746190"));
        assert!(text.contains("5.196152422706632"));

        assert!(matches!(cmd_params(1, &mut Vec::new()), Err(Error::Usage(_))));
    }

    #[test]
    fn verify_suites_pass_on_the_real_family() {
        assert!(verify_spectral(8).iter().all(|r| r.passed));
        assert!(verify_dynamics(4).iter().all(|r| r.passed));
        assert!(verify_optimality(3).iter().all(|r| r.passed));
    }

    #[test]
    fn doctored_coupling_is_caught() {
        // A magnitude error spreads the spectrum off lambda_star.
        let mut spec = dynamics::critical_params(3).unwrap();
        spec.gammas[1] *= 1.05;
        let reports = check_drift_identities(&spec);
        let spectrum = reports
            .iter()
            .find(|r| r.name.contains("spectrum"))
            .unwrap();
        assert!(!spectrum.passed, "{:?}", spectrum);

        // A sign flip leaves the spectrum unchanged (conjugating by a
        // diagonal sign matrix negates both off-diagonal entries of the
        // pair), so the positivity gate is what rejects it.
        let mut spec = dynamics::critical_params(3).unwrap();
        spec.gammas[1] = -spec.gammas[1];
        assert!(spec.validate().is_err());
        let reports = check_drift_identities(&spec);
        assert!(reports.iter().all(|r| r.passed));
    }

    #[test]
    fn cmd_verify_reports_and_exits_clean() {
        let mut buf = Vec::new();
        cmd_verify(false, false, true, false, 3, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("ok  "));
        assert!(text.contains("checks passed"));
        assert!(matches!(
            cmd_verify(true, false, false, false, 1, &mut Vec::new()),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn svg_scatter_handles_degenerate_and_normal_bounds() {
        let pts = vec![(1.0, 1.0), (1.0, 1.0)];
        let svg = svg_scatter(&[ScatterLayer {
            points: &pts,
            color: "#000000",
            radius: 2.0,
            opacity: 1.0,
        }]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<circle").count(), 2);

        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (i * i) as f64)).collect();
        let svg = svg_scatter(&[ScatterLayer {
            points: &pts,
            color: "#ff0000",
            radius: 1.5,
            opacity: 0.5,
        }]);
        assert_eq!(svg.matches("<circle").count(), 10);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn one_dimensional_points_become_a_strip() {
        let pts = vec![vec![3.0], vec![4.0], vec![5.0]];
        let plane = as_plane(&pts);
        assert_eq!(plane[0], (3.0, 0.0));
        assert_eq!(plane[2], (5.0, 1.0));
    }
}
