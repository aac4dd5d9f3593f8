//! Forward-process construction: drift and diffusion matrices, the
//! critically damped coefficient family, the nilpotent matrix exponential,
//! and closed-form forward statistics in Kronecker-factored form.
//!
//! The full state covariance is always `S_t (x) I_h`; only the n x n factor
//! `S_t` is ever formed, so every operation here is independent of the data
//! dimension h.

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Coefficients of the order-n forward SDE.
///
/// `gammas[i]` is the coupling coefficient between blocks i+1 and i+2
/// (one-based gamma_{i+1}); `xi` is the friction on the last block;
/// `l_inv` scales the stationary variance. `lambda_star` is present iff
/// the spec is critically damped, in which case every eigenvalue of the
/// drift matrix equals it.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftSpec {
    pub n: usize,
    pub gammas: Vec<f64>,
    pub xi: f64,
    pub l_inv: f64,
    pub lambda_star: Option<f64>,
}

impl DriftSpec {
    /// Checks structural invariants: positive coefficients, coefficient
    /// count n-1, and (when `lambda_star` is present) the critical-damping
    /// relations to 1e-12 relative.
    pub fn validate(&self) -> Result<()> {
        if self.n < 1 {
            return Err(Error::InvalidSpec("order must be at least 1".into()));
        }
        if self.gammas.len() != self.n - 1 {
            return Err(Error::InvalidSpec(format!(
                "expected {} coupling coefficients, got {}",
                self.n - 1,
                self.gammas.len()
            )));
        }
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(Error::InvalidSpec("xi must be positive".into()));
        }
        if !(self.l_inv > 0.0 && self.l_inv.is_finite()) {
            return Err(Error::InvalidSpec("l_inv must be positive".into()));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidSpec("gammas must be positive".into()));
        }
        if let Some(lam) = self.lambda_star {
            if !(lam < 0.0 && lam.is_finite()) {
                return Err(Error::InvalidSpec("lambda_star must be negative".into()));
            }
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            if rel(self.xi, self.n as f64 * lam.abs()) > 1e-12 {
                return Err(Error::InvalidSpec(
                    "critically damped spec requires xi = n|lambda_star|".into(),
                ));
            }
            for i in 1..self.n {
                let num = (self.n * self.n - i * i) as f64;
                let den = (4 * i * i - 1) as f64;
                let want = num / den * lam * lam;
                let got = self.gammas[self.n - i - 1];
                if rel(got * got, want) > 1e-12 {
                    return Err(Error::InvalidSpec(format!(
                        "gamma_{} breaks the critical-damping relation",
                        self.n - i
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_critical(&self) -> bool {
        self.lambda_star.is_some()
    }
}

/// Closed-form forward statistics at one time: the state propagator
/// `e^{Ft}` and the covariance Kronecker factor with its Cholesky factor.
///
/// `chol_factor * chol_factor^T` reproduces `cov_factor` to 1e-10; for a
/// critically damped spec the propagator decays to zero and `cov_factor`
/// approaches `l_inv * I` as t grows.
#[derive(Debug, Clone)]
pub struct ForwardStats {
    pub t: f64,
    pub propagator: Matrix,
    pub cov_factor: Matrix,
    pub chol_factor: Matrix,
}

/// Builds the critically damped coefficient family for order n >= 2:
/// lambda_star = -sqrt(2n-3), xi = n*sqrt(2n-3), and
/// gamma_{n-i} = sqrt(2n-3) * sqrt((n^2-i^2)/(4i^2-1)).
///
/// The i = n-1 ratio collapses to exactly 1/(2n-3), so gamma_1 comes out
/// exactly 1.0 in floating point. `l_inv` defaults to 0.5.
pub fn critical_params(n: usize) -> Result<DriftSpec> {
    if n < 2 {
        return Err(Error::InvalidSpec(
            "critical damping needs order at least 2".into(),
        ));
    }
    let m = (2 * n - 3) as f64;
    let lambda_star = -m.sqrt();
    let mut gammas = vec![0.0; n - 1];
    for i in 1..n {
        // gamma^2 = (2n-3)(n^2-i^2) / (4i^2-1) with integer numerator and
        // denominator, so equal factors cancel exactly at i = n-1.
        let num = ((2 * n - 3) * (n * n - i * i)) as f64;
        let den = (4 * i * i - 1) as f64;
        gammas[n - i - 1] = (num / den).sqrt();
    }
    Ok(DriftSpec {
        n,
        gammas,
        xi: n as f64 * m.sqrt(),
        l_inv: 0.5,
        lambda_star: Some(lambda_star),
    })
}

/// Order-1 degenerate case: a plain Ornstein-Uhlenbeck process. There is
/// no damping structure to tune, so the rate is fixed at 1 and the
/// spectrum is the single eigenvalue -1.
pub fn order_one_params(l_inv: f64) -> Result<DriftSpec> {
    let spec = DriftSpec {
        n: 1,
        gammas: Vec::new(),
        xi: 1.0,
        l_inv,
        lambda_star: Some(-1.0),
    };
    spec.validate()?;
    Ok(spec)
}

/// Assembles the drift matrix F and the diffusion product GG^T.
///
/// F has gamma_i on the superdiagonal, -gamma_i on the subdiagonal, and
/// -xi in the last diagonal entry; GG^T is 2*xi*l_inv in that same corner
/// and zero elsewhere, so GG^T + l_inv*(F + F^T) = 0 holds exactly.
pub fn build_drift(spec: &DriftSpec) -> (Matrix, Matrix) {
    let n = spec.n;
    let mut f = Matrix::zeros(n, n);
    for (k, g) in spec.gammas.iter().enumerate() {
        f.set(k, k + 1, *g);
        f.set(k + 1, k, -*g);
    }
    f.set(n - 1, n - 1, -spec.xi);
    let mut ggt = Matrix::zeros(n, n);
    ggt.set(n - 1, n - 1, 2.0 * spec.xi * spec.l_inv);
    (f, ggt)
}

/// Matrix exponential of F*t for a critically damped spec.
///
/// With a single eigenvalue, F - lambda_star*I is nilpotent of index n and
/// the series terminates: e^{Ft} = e^{lambda_star*t} * sum_{k<n} N^k t^k / k!.
pub fn expm_critical(spec: &DriftSpec, t: f64) -> Result<Matrix> {
    let lam = spec
        .lambda_star
        .ok_or_else(|| Error::InvalidSpec("spec is not critically damped".into()))?;
    assert!(t >= 0.0 && t.is_finite(), "time must be finite and nonnegative");
    let n = spec.n;
    let (f, _) = build_drift(spec);
    let nil = f.sub(&Matrix::identity(n).scale(lam));
    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..n {
        term = nil.matmul(&term).scale(t / k as f64);
        sum = sum.add(&term);
    }
    Ok(sum.scale((lam * t).exp()))
}

/// 12-point Gauss-Legendre nodes and weights on [-1, 1], found by Newton
/// iteration on the three-term Legendre recurrence. Exact for polynomials
/// of degree 23, which covers every u^{j+k} moment (j, k < n <= 8) in the
/// noise Gram integrand with room to spare for the exponential factor.
fn gauss_legendre_12() -> &'static [(f64, f64)] {
    static NODES: std::sync::OnceLock<Vec<(f64, f64)>> = std::sync::OnceLock::new();
    NODES.get_or_init(|| {
        let m = 12usize;
        let eval = |x: f64| {
            let mut prev = 1.0;
            let mut p = x;
            for k in 1..m {
                let next = ((2 * k + 1) as f64 * x * p - k as f64 * prev) / (k + 1) as f64;
                prev = p;
                p = next;
            }
            let dp = m as f64 * (x * p - prev) / (x * x - 1.0);
            (p, dp)
        };
        (0..m)
            .map(|i| {
                let mut x =
                    (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
                for _ in 0..20 {
                    let (p, dp) = eval(x);
                    let dx = p / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                let (_, dp) = eval(x);
                (x, 2.0 / ((1.0 - x * x) * dp * dp))
            })
            .collect()
    })
}

/// Lower-triangular square root of the time-t covariance, assembled as an
/// LQ reduction of the Gram form `[e^{Ft} chol(s0) | noise columns]`.
///
/// The noise columns encode `int_0^t e^{Fu} G G^T e^{F^T u} du`: G is a
/// single column, so the integrand is rank one and panelwise
/// Gauss-Legendre nodes of the propagator's last column represent it as a
/// sum of outer products with no subtraction anywhere. Factoring the
/// assembled covariance instead would fail from order 4 up near t = 0,
/// where the position variance decays like t^{2n-1} and falls below the
/// roundoff left by cancelling against the stationary part.
fn stable_cov_sqrt(
    spec: &DriftSpec,
    t: f64,
    propagator: &Matrix,
    s0_chol: &Matrix,
) -> Result<Matrix> {
    let n = spec.n;
    let nodes = gauss_legendre_12();
    let panels = if t > 0.0 { (t / 0.5).ceil() as usize } else { 0 };
    let mut gram = Matrix::zeros(n, n + panels * nodes.len());
    let pushed = propagator.matmul(s0_chol);
    for i in 0..n {
        for j in 0..n {
            gram.set(i, j, pushed.get(i, j));
        }
    }
    if panels > 0 {
        let scale_sq = 2.0 * spec.xi * spec.l_inv;
        let width = t / panels as f64;
        let (f, _) = build_drift(spec);
        // Last propagator column at a node: terminating nilpotent series
        // for a critical spec, dense oracle otherwise.
        let nil_powers = spec.lambda_star.map(|lam| {
            let nil = f.sub(&Matrix::identity(n).scale(lam));
            let mut power = vec![0.0; n];
            power[n - 1] = 1.0;
            let mut powers = vec![power.clone()];
            for _ in 1..n {
                power = nil.matvec(&power);
                powers.push(power.clone());
            }
            (lam, powers)
        });
        let mut col = n;
        let mut acc = vec![0.0; n];
        for p in 0..panels {
            let left = p as f64 * width;
            for &(x, w) in nodes {
                let u = left + 0.5 * width * (x + 1.0);
                let coeff = (0.5 * scale_sq * w * width).sqrt();
                match &nil_powers {
                    Some((lam, powers)) => {
                        let decay = (lam * u).exp() * coeff;
                        acc.iter_mut().for_each(|v| *v = 0.0);
                        let mut term = 1.0;
                        for (k, power) in powers.iter().enumerate() {
                            if k > 0 {
                                term *= u / k as f64;
                            }
                            for i in 0..n {
                                acc[i] += term * power[i];
                            }
                        }
                        for i in 0..n {
                            gram.set(i, col, acc[i] * decay);
                        }
                    }
                    None => {
                        let prop_u = linalg::expm_oracle(&f, u)?;
                        for i in 0..n {
                            gram.set(i, col, prop_u.get(i, n - 1) * coeff);
                        }
                    }
                }
                col += 1;
            }
        }
    }
    Ok(linalg::lq_factor(&gram))
}

/// Closed-form forward statistics at time t from the initial covariance
/// factor `s0`: propagator e^{Ft} and
/// `cov = l_inv*I + e^{Ft} (s0 - l_inv*I) e^{Ft}^T`.
///
/// Uses the terminating series when the spec is critically damped and the
/// scaling-and-squaring oracle otherwise. The square root comes from the
/// Gram form rather than a Cholesky of the assembled covariance, so it
/// stays accurate at small times and high orders where the position rows
/// are many orders of magnitude below the rest.
pub fn forward_stats(spec: &DriftSpec, t: f64, s0: &Matrix) -> Result<ForwardStats> {
    let n = spec.n;
    if s0.rows() != n || s0.cols() != n {
        return Err(Error::Dimension(format!(
            "initial covariance factor must be {}x{}, got {}x{}",
            n,
            n,
            s0.rows(),
            s0.cols()
        )));
    }
    let propagator = if spec.is_critical() {
        expm_critical(spec, t)?
    } else {
        let (f, _) = build_drift(spec);
        linalg::expm_oracle(&f, t)?
    };
    let stationary = Matrix::identity(n).scale(spec.l_inv);
    let pushed = propagator
        .matmul(&s0.sub(&stationary))
        .matmul(&propagator.transpose());
    let cov_factor = stationary.add(&pushed).symmetrize();
    let s0_chol = linalg::cholesky(s0)?;
    let chol_factor = stable_cov_sqrt(spec, t, &propagator, &s0_chol)?;
    Ok(ForwardStats {
        t,
        propagator,
        cov_factor,
        chol_factor,
    })
}

/// Scalar forward statistics of the order-1 process:
/// mean coefficient e^{-xi t} and standard deviation
/// sqrt(l_inv + (sigma0_sq - l_inv) e^{-2 xi t}).
pub fn ou_stats(xi: f64, l_inv: f64, sigma0_sq: f64, t: f64) -> (f64, f64) {
    assert!(xi > 0.0 && l_inv > 0.0 && sigma0_sq >= 0.0 && t >= 0.0);
    let mean_coeff = (-xi * t).exp();
    let var = l_inv + (sigma0_sq - l_inv) * (-2.0 * xi * t).exp();
    // Cannot go negative for sigma0_sq >= 0; guard against future misuse.
    assert!(var >= 0.0, "variance formula produced a negative value");
    (mean_coeff, var.sqrt())
}

/// Reference covariance by RK4 integration of dS/dt = FS + SF^T + GG^T,
/// used as an independent oracle against the closed form.
pub fn cov_ode_oracle(f: &Matrix, ggt: &Matrix, s0: &Matrix, t: f64, step: f64) -> Matrix {
    assert!(t >= 0.0 && step > 0.0);
    if t == 0.0 {
        return s0.clone();
    }
    let deriv = |s: &Matrix| -> Matrix {
        let fs = f.matmul(s);
        fs.add(&fs.transpose()).add(ggt)
    };
    let steps = (t / step).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let mut s = s0.clone();
    for _ in 0..steps {
        let k1 = deriv(&s);
        let k2 = deriv(&s.add(&k1.scale(h / 2.0)));
        let k3 = deriv(&s.add(&k2.scale(h / 2.0)));
        let k4 = deriv(&s.add(&k3.scale(h)));
        let incr = k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4);
        s = s.add(&incr.scale(h / 6.0));
    }
    s
}
