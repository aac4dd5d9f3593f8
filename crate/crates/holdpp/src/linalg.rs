//! Dense real linear algebra for small square matrices (n <= 16).
//!
//! Everything here is sized for the drift matrices of the Langevin process
//! and the brute-force oracles that cross-check them; no attempt is made at
//! cache blocking or sparsity.

use crate::error::{Error, Result};
use num_complex::Complex64;

const EPS: f64 = f64::EPSILON;

/// Pivots with |pivot| at or below this are clamped to zero during Cholesky;
/// anything more negative is rejected as not PSD.
pub const CHOLESKY_PIVOT_CLAMP: f64 = 1e-10;

/// Row-major dense matrix of 64-bit reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "entry count must be rows*cols");
        assert!(
            data.iter().all(|x| x.is_finite()),
            "matrix entries must be finite"
        );
        Matrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Matrix::zeros(entries.len(), entries.len());
        for (i, &v) in entries.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = out.get(i, j) + a * other.get(k, j);
                    out.set(i, j, v);
                }
            }
        }
        out
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, x.len(), "vector length must equal cols");
        let mut out = vec![0.0; self.rows];
        for i in 0..self.rows {
            let mut acc = 0.0;
            for j in 0..self.cols {
                acc += self.get(i, j) * x[j];
            }
            out[i] = acc;
        }
        out
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    /// (A + A^T)/2; removes roundoff asymmetry from products like P S P^T.
    pub fn symmetrize(&self) -> Matrix {
        assert!(self.is_square());
        Matrix::from_fn(self.rows, self.cols, |i, j| {
            0.5 * (self.get(i, j) + self.get(j, i))
        })
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        let mut best = 0.0f64;
        for j in 0..self.cols {
            let mut s = 0.0;
            for i in 0..self.rows {
                s += self.get(i, j).abs();
            }
            best = best.max(s);
        }
        best
    }

    pub fn trace(&self) -> f64 {
        assert!(self.is_square());
        (0..self.rows).map(|i| self.get(i, i)).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Lower-triangular Cholesky factor of a symmetric PSD matrix.
///
/// Pivots within `CHOLESKY_PIVOT_CLAMP` of zero are clamped: the diagonal
/// entry and the rest of that column are set to zero, which handles factors
/// with an exactly singular block (zero initial position variance). A pivot
/// below the negative clamp is rejected.
pub fn cholesky(s: &Matrix) -> Result<Matrix> {
    if !s.is_square() {
        return Err(Error::Dimension(format!(
            "cholesky needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    let n = s.rows();
    let scale = s.max_abs();
    let mut dev = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            dev = dev.max((s.get(i, j) - s.get(j, i)).abs());
        }
    }
    if dev > 1e-12 * scale.max(1e-300) {
        return Err(Error::NotSymmetric { deviation: dev });
    }

    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut pivot = s.get(j, j);
        for k in 0..j {
            pivot -= l.get(j, k) * l.get(j, k);
        }
        if pivot < -CHOLESKY_PIVOT_CLAMP {
            return Err(Error::NotPsd { pivot, index: j });
        }
        if pivot.abs() <= CHOLESKY_PIVOT_CLAMP {
            // Clamp: zero diagonal, zero column below.
            continue;
        }
        let d = pivot.sqrt();
        l.set(j, j, d);
        for i in (j + 1)..n {
            let mut v = s.get(i, j);
            for k in 0..j {
                v -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, v / d);
        }
    }
    Ok(l)
}

/// Solves L L^T x = b given the lower-triangular factor L (strictly positive
/// diagonal required).
pub fn cholesky_solve(l: &Matrix, b: &[f64]) -> Vec<f64> {
    let n = l.rows();
    assert_eq!(b.len(), n);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut v = b[i];
        for k in 0..i {
            v -= l.get(i, k) * y[k];
        }
        y[i] = v / l.get(i, i);
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut v = y[i];
        for k in (i + 1)..n {
            v -= l.get(k, i) * x[k];
        }
        x[i] = v / l.get(i, i);
    }
    x
}

/// Lower-triangular L with L L^T = A A^T, by Householder reduction of the
/// rows of A (an LQ factorization with the orthogonal part discarded).
///
/// This factors a covariance given in square-root (Gram) form without ever
/// assembling the product: errors enter linearly through the entries of A,
/// where a Cholesky of A A^T would square the conditioning. Rows of wildly
/// different scale are handled exactly as well as balanced ones, which is
/// what makes the graded small-time covariances of the forward process
/// factorable at all. The diagonal is normalized to be nonnegative.
pub fn lq_factor(a: &Matrix) -> Matrix {
    let n = a.rows();
    let m = a.cols();
    let mut w = a.clone();
    let mut v = vec![0.0; m];
    for j in 0..n.min(m) {
        let mut norm_sq = 0.0;
        for k in j..m {
            norm_sq += w.get(j, k) * w.get(j, k);
        }
        if norm_sq == 0.0 {
            continue;
        }
        let norm = norm_sq.sqrt();
        let pivot = w.get(j, j);
        let alpha = if pivot >= 0.0 { -norm } else { norm };
        v[j] = pivot - alpha;
        for k in (j + 1)..m {
            v[k] = w.get(j, k);
        }
        // |v|^2 with the sign choice above; both terms are nonnegative.
        let vtv = norm_sq + alpha * alpha - 2.0 * alpha * pivot;
        w.set(j, j, alpha);
        for k in (j + 1)..m {
            w.set(j, k, 0.0);
        }
        for i in (j + 1)..n {
            let mut dot = 0.0;
            for k in j..m {
                dot += w.get(i, k) * v[k];
            }
            let c = 2.0 * dot / vtv;
            for k in j..m {
                w.set(i, k, w.get(i, k) - c * v[k]);
            }
        }
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i.min(m.saturating_sub(1)) {
            l.set(i, j, w.get(i, j));
        }
    }
    for j in 0..n {
        if l.get(j, j) < 0.0 {
            for i in j..n {
                l.set(i, j, -l.get(i, j));
            }
        }
    }
    l
}

/// e^{At} by scaling and squaring with a truncated Taylor series.
///
/// The argument is scaled until its 1-norm is at most 0.5, the series is
/// summed until a term falls below 1e-18 in max-abs, and the result is
/// squared back up. Serves as the independent oracle for the closed-form
/// nilpotent exponential.
pub fn expm_oracle(a: &Matrix, t: f64) -> Result<Matrix> {
    assert!(a.is_square(), "expm needs a square matrix");
    assert!(t.is_finite() && t >= 0.0, "time must be finite and nonnegative");
    let n = a.rows();
    let b = a.scale(t);
    let norm = b.norm_1();
    let mut squarings = 0u32;
    let mut scaled = b;
    if norm > 0.5 {
        squarings = (norm / 0.5).log2().ceil() as u32;
        scaled = scaled.scale(0.5f64.powi(squarings as i32));
    }

    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..200 {
        term = term.matmul(&scaled).scale(1.0 / k as f64);
        result = result.add(&term);
        if term.max_abs() < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result);
        if !result.all_finite() {
            return Err(Error::Overflow);
        }
    }
    if !result.all_finite() {
        return Err(Error::Overflow);
    }
    Ok(result)
}

/// Determinant via LU with partial pivoting.
pub fn det(a: &Matrix) -> f64 {
    assert!(a.is_square());
    let n = a.rows();
    let mut m = a.clone();
    let mut sign = 1.0;
    let mut d = 1.0;
    for k in 0..n {
        let mut p = k;
        for i in (k + 1)..n {
            if m.get(i, k).abs() > m.get(p, k).abs() {
                p = i;
            }
        }
        if m.get(p, k) == 0.0 {
            return 0.0;
        }
        if p != k {
            for j in 0..n {
                let tmp = m.get(k, j);
                m.set(k, j, m.get(p, j));
                m.set(p, j, tmp);
            }
            sign = -sign;
        }
        let piv = m.get(k, k);
        d *= piv;
        for i in (k + 1)..n {
            let f = m.get(i, k) / piv;
            for j in k..n {
                let v = m.get(i, j) - f * m.get(k, j);
                m.set(i, j, v);
            }
        }
    }
    sign * d
}

/// Frobenius norm of F S + S F^T + Q, the residual of the continuous-time
/// Lyapunov equation. Zero at the stationary covariance.
pub fn lyapunov_residual(f: &Matrix, s: &Matrix, q: &Matrix) -> Result<f64> {
    let n = f.rows();
    if !f.is_square() || !s.is_square() || !q.is_square() || s.rows() != n || q.rows() != n {
        return Err(Error::Dimension(format!(
            "lyapunov_residual needs three n x n matrices, got {}x{}, {}x{}, {}x{}",
            f.rows(),
            f.cols(),
            s.rows(),
            s.cols(),
            q.rows(),
            q.cols()
        )));
    }
    let fs = f.matmul(s);
    let resid = fs.add(&fs.transpose()).add(q);
    Ok(resid.frobenius_norm())
}

/// Reduces a copy of `a` to upper Hessenberg form by Householder similarity
/// transforms.
fn hessenberg(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut h = a.clone();
    if n < 3 {
        return h;
    }
    let mut v = vec![0.0; n];
    for k in 0..(n - 2) {
        let mut sigma = 0.0;
        for i in (k + 1)..n {
            sigma += h.get(i, k) * h.get(i, k);
        }
        sigma = sigma.sqrt();
        if sigma == 0.0 {
            continue;
        }
        let x0 = h.get(k + 1, k);
        let alpha = if x0 >= 0.0 { -sigma } else { sigma };
        let mut vnorm2 = 0.0;
        for i in (k + 1)..n {
            v[i] = h.get(i, k);
        }
        v[k + 1] -= alpha;
        for i in (k + 1)..n {
            vnorm2 += v[i] * v[i];
        }
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // Left: H <- H - beta v (v^T H) on rows k+1..n.
        for j in 0..n {
            let mut dot = 0.0;
            for i in (k + 1)..n {
                dot += v[i] * h.get(i, j);
            }
            let f = beta * dot;
            for i in (k + 1)..n {
                let val = h.get(i, j) - f * v[i];
                h.set(i, j, val);
            }
        }
        // Right: H <- H - beta (H v) v^T on cols k+1..n.
        for i in 0..n {
            let mut dot = 0.0;
            for j in (k + 1)..n {
                dot += h.get(i, j) * v[j];
            }
            let f = beta * dot;
            for j in (k + 1)..n {
                let val = h.get(i, j) - f * v[j];
                h.set(i, j, val);
            }
        }
        h.set(k + 1, k, alpha);
        for i in (k + 2)..n {
            h.set(i, k, 0.0);
        }
    }
    h
}

/// Eigenvalues of a real upper Hessenberg matrix by the implicit
/// double-shift QR iteration, with exceptional shifts every ten sweeps.
fn hqr(h: &mut Matrix) -> Result<Vec<Complex64>> {
    let n = h.rows();
    let mut eigs = vec![Complex64::new(0.0, 0.0); n];
    if n == 0 {
        return Ok(eigs);
    }
    let mut anorm = 0.0;
    for i in 0..n {
        let lo = i.saturating_sub(1);
        for j in lo..n {
            anorm += h.get(i, j).abs();
        }
    }
    if anorm == 0.0 {
        return Ok(eigs);
    }

    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let mut its = 0;
        loop {
            // Find the smallest l with a negligible subdiagonal below it.
            let mut l = nn;
            while l >= 1 {
                let s = h.get(l as usize - 1, l as usize - 1).abs()
                    + h.get(l as usize, l as usize).abs();
                let s = if s == 0.0 { anorm } else { s };
                if h.get(l as usize, l as usize - 1).abs() <= EPS * s {
                    h.set(l as usize, l as usize - 1, 0.0);
                    break;
                }
                l -= 1;
            }
            let x = h.get(nn as usize, nn as usize);
            if l == nn {
                // Single real eigenvalue.
                eigs[nn as usize] = Complex64::new(x + t, 0.0);
                nn -= 1;
                break;
            }
            let y = h.get(nn as usize - 1, nn as usize - 1);
            let w = h.get(nn as usize, nn as usize - 1) * h.get(nn as usize - 1, nn as usize);
            if l == nn - 1 {
                // 2x2 block: real pair or complex conjugates.
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let z = q.abs().sqrt();
                let x = x + t;
                if q >= 0.0 {
                    let z = p + if p >= 0.0 { z } else { -z };
                    let e1 = x + z;
                    let e2 = if z != 0.0 { x - w / z } else { e1 };
                    eigs[nn as usize - 1] = Complex64::new(e1, 0.0);
                    eigs[nn as usize] = Complex64::new(e2, 0.0);
                } else {
                    eigs[nn as usize - 1] = Complex64::new(x + p, z);
                    eigs[nn as usize] = Complex64::new(x + p, -z);
                }
                nn -= 2;
                break;
            }
            if its == 30 {
                return Err(Error::NoConvergence {
                    residual: h.get(nn as usize, nn as usize - 1).abs(),
                });
            }
            let (mut x, mut y, mut w) = (x, y, w);
            if its == 10 || its == 20 {
                // Exceptional shift.
                t += x;
                for i in 0..=(nn as usize) {
                    let v = h.get(i, i) - x;
                    h.set(i, i, v);
                }
                let s = h.get(nn as usize, nn as usize - 1).abs()
                    + h.get(nn as usize - 1, nn as usize - 2).abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;

            // Look for two consecutive small subdiagonals.
            let mut m = nn - 2;
            let (mut p, mut q, mut r) = (0.0, 0.0, 0.0);
            while m >= l {
                let mu = m as usize;
                let z = h.get(mu, mu);
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / h.get(mu + 1, mu) + h.get(mu, mu + 1);
                q = h.get(mu + 1, mu + 1) - z - rr - ss;
                r = h.get(mu + 2, mu + 1);
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = h.get(mu, mu - 1).abs() * (q.abs() + r.abs());
                let v = p.abs() * (h.get(mu - 1, mu - 1).abs() + z.abs() + h.get(mu + 1, mu + 1).abs());
                if u <= EPS * v {
                    break;
                }
                m -= 1;
            }
            let m = m.max(l) as usize;
            for i in (m + 2)..=(nn as usize) {
                h.set(i, i - 2, 0.0);
                if i != m + 2 {
                    h.set(i, i - 3, 0.0);
                }
            }

            // Double QR sweep on rows/cols m..nn.
            for k in m..(nn as usize) {
                if k != m {
                    p = h.get(k, k - 1);
                    q = h.get(k + 1, k - 1);
                    r = if k != nn as usize - 1 {
                        h.get(k + 2, k - 1)
                    } else {
                        0.0
                    };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = {
                    let mag = (p * p + q * q + r * r).sqrt();
                    if p >= 0.0 {
                        mag
                    } else {
                        -mag
                    }
                };
                if s == 0.0 {
                    continue;
                }
                if k == m {
                    if l as usize != m {
                        let v = -h.get(k, k - 1);
                        h.set(k, k - 1, v);
                    }
                } else {
                    h.set(k, k - 1, -s * x);
                }
                p += s;
                x = p / s;
                y = q / s;
                let z = r / s;
                q /= p;
                r /= p;
                for j in k..=(nn as usize) {
                    let mut pp = h.get(k, j) + q * h.get(k + 1, j);
                    if k != nn as usize - 1 {
                        pp += r * h.get(k + 2, j);
                        let v = h.get(k + 2, j) - pp * z;
                        h.set(k + 2, j, v);
                    }
                    let v1 = h.get(k + 1, j) - pp * y;
                    h.set(k + 1, j, v1);
                    let v0 = h.get(k, j) - pp * x;
                    h.set(k, j, v0);
                }
                let mmin = (nn as usize).min(k + 3);
                for i in (l as usize)..=mmin {
                    let mut pp = x * h.get(i, k) + y * h.get(i, k + 1);
                    if k != nn as usize - 1 {
                        pp += z * h.get(i, k + 2);
                        let v = h.get(i, k + 2) - pp * r;
                        h.set(i, k + 2, v);
                    }
                    let v1 = h.get(i, k + 1) - pp * q;
                    h.set(i, k + 1, v1);
                    let v0 = h.get(i, k) - pp;
                    h.set(i, k, v0);
                }
            }
        }
    }
    Ok(eigs)
}

/// All eigenvalues of a square matrix, with multiplicity, via Hessenberg
/// reduction and double-shift QR. Simple eigenvalues of well-scaled inputs
/// come out to about 1e-6 absolute or better; defective ones split into a
/// ring of radius roughly (eps*norm)^(1/multiplicity), which
/// `collapse_defective_clusters` can undo when the structure is known.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<Complex64>> {
    assert!(a.is_square(), "eigenvalues needs a square matrix");
    assert!(a.rows() <= 16, "sized for small matrices only");
    let mut h = hessenberg(a);
    hqr(&mut h)
}

/// Replaces clusters of computed eigenvalues by their mean when the cluster
/// is consistent with the rounding-induced splitting of a defective
/// eigenvalue: a group of m values merges only if it chains together within
/// 10*(eps*scale)^(1/m) and has at least m members. Apply only when the
/// matrix is expected to carry defective eigenvalues; for a cluster spanning
/// the whole spectrum the mean equals trace/n up to roundoff.
pub fn collapse_defective_clusters(eigs: &[Complex64], scale: f64) -> Vec<Complex64> {
    let n = eigs.len();
    let mut out = eigs.to_vec();
    let mut done = vec![false; n];
    for m in (2..=n).rev() {
        let tau = 10.0 * (EPS * scale).powf(1.0 / m as f64);
        // Single-linkage components among the unmerged values.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut Vec<usize>, mut a: usize) -> usize {
            while parent[a] != a {
                parent[a] = parent[parent[a]];
                a = parent[a];
            }
            a
        }
        for a in 0..n {
            if done[a] {
                continue;
            }
            for b in (a + 1)..n {
                if done[b] {
                    continue;
                }
                if (out[a] - out[b]).norm() <= tau {
                    let ra = find(&mut parent, a);
                    let rb = find(&mut parent, b);
                    if ra != rb {
                        parent[ra] = rb;
                    }
                }
            }
        }
        let mut comps: std::collections::HashMap<usize, Vec<usize>> = std::collections::HashMap::new();
        for a in 0..n {
            if !done[a] {
                let r = find(&mut parent, a);
                comps.entry(r).or_default().push(a);
            }
        }
        for comp in comps.values() {
            if comp.len() < m {
                continue;
            }
            let mut mean = Complex64::new(0.0, 0.0);
            for &a in comp {
                mean += out[a];
            }
            mean /= comp.len() as f64;
            // A conjugation-closed cluster of a real matrix has a real mean.
            let conj_closed = comp.iter().all(|&a| {
                comp.iter()
                    .any(|&b| (out[a].conj() - out[b]).norm() <= tau)
            });
            if conj_closed {
                mean = Complex64::new(mean.re, 0.0);
            }
            for &a in comp {
                out[a] = mean;
                done[a] = true;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_matrix(n: usize, rng: &mut ChaCha12Rng, scale: f64) -> Matrix {
        Matrix::from_fn(n, n, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * scale)
    }

    #[test]
    fn cholesky_identity() {
        let l = cholesky(&Matrix::identity(3)).unwrap();
        assert_eq!(l, Matrix::identity(3));
    }

    #[test]
    fn cholesky_diagonal() {
        let l = cholesky(&Matrix::diag(&[4.0, 9.0])).unwrap();
        assert_eq!(l, Matrix::diag(&[2.0, 3.0]));
    }

    #[test]
    fn cholesky_reconstructs() {
        let s = Matrix::new(2, 2, vec![2.0, 1.0, 1.0, 2.0]);
        let l = cholesky(&s).unwrap();
        let r = l.matmul(&l.transpose());
        assert!(r.sub(&s).max_abs() <= 1e-12);
        for i in 0..2 {
            assert!(l.get(i, i) >= 0.0);
        }
    }

    #[test]
    fn cholesky_clamps_singular_block() {
        // Zero first pivot: the factor of diag(0, v) is diag(0, sqrt(v)).
        let s = Matrix::diag(&[0.0, 0.04]);
        let l = cholesky(&s).unwrap();
        assert_eq!(l.get(0, 0), 0.0);
        assert!((l.get(1, 1) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn cholesky_rejects_negative() {
        match cholesky(&Matrix::diag(&[1.0, -1.0])) {
            Err(Error::NotPsd { index: 1, .. }) => {}
            other => panic!("expected NotPsd at index 1, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn cholesky_rejects_asymmetric() {
        let s = Matrix::new(2, 2, vec![1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(cholesky(&s), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn cholesky_random_psd_suite() {
        // 1000 random PSD matrices A A^T + 1e-6 I, n <= 8.
        let mut rng = ChaCha12Rng::seed_from_u64(101);
        for trial in 0..1000 {
            let n = 1 + (trial % 8);
            let a = random_matrix(n, &mut rng, 1.0);
            let s = a.matmul(&a.transpose()).add(&Matrix::identity(n).scale(1e-6));
            let l = cholesky(&s).unwrap();
            let resid = l.matmul(&l.transpose()).sub(&s).frobenius_norm();
            assert!(
                resid <= 1e-10 * s.frobenius_norm(),
                "trial {}: relative residual {:.3e}",
                trial,
                resid / s.frobenius_norm()
            );
        }
    }

    #[test]
    fn cholesky_solve_roundtrip() {
        let s = Matrix::new(3, 3, vec![4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        let l = cholesky(&s).unwrap();
        let x_true = vec![1.0, -2.0, 0.5];
        let b = s.matvec(&x_true);
        let x = cholesky_solve(&l, &b);
        for i in 0..3 {
            assert!((x[i] - x_true[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn expm_zero_is_identity() {
        let e = expm_oracle(&Matrix::zeros(3, 3), 2.5).unwrap();
        assert_eq!(e, Matrix::identity(3));
    }

    #[test]
    fn expm_scalar() {
        let e = expm_oracle(&Matrix::diag(&[-1.0]), 1.0).unwrap();
        assert!((e.get(0, 0) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn expm_nilpotent_closed_form() {
        // A = [[0,1],[-1,-2]] has (A+I)^2 = 0, so e^A = e^{-1} (I + (A+I)).
        let a = Matrix::new(2, 2, vec![0.0, 1.0, -1.0, -2.0]);
        let e = expm_oracle(&a, 1.0).unwrap();
        let c = (-1.0f64).exp();
        let expected = Matrix::new(2, 2, vec![2.0 * c, c, -c, 0.0]);
        assert!(e.sub(&expected).max_abs() < 1e-12);
    }

    #[test]
    fn expm_semigroup() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for trial in 0..50 {
            let n = 2 + trial % 4;
            let a = random_matrix(n, &mut rng, 5.0 / n as f64);
            let s = rng.random::<f64>() * 2.0;
            let t = rng.random::<f64>() * 2.0;
            let e_st = expm_oracle(&a, s + t).unwrap();
            let prod = expm_oracle(&a, s).unwrap().matmul(&expm_oracle(&a, t).unwrap());
            assert!(
                e_st.sub(&prod).max_abs() <= 1e-9,
                "trial {}: semigroup deviation {:.3e}",
                trial,
                e_st.sub(&prod).max_abs()
            );
        }
    }

    #[test]
    fn eigenvalues_diagonal() {
        let mut eigs = eigenvalues(&Matrix::diag(&[1.0, 2.0, 3.0])).unwrap();
        eigs.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        for (e, want) in eigs.iter().zip([1.0, 2.0, 3.0]) {
            assert!((e.re - want).abs() < 1e-12 && e.im == 0.0);
        }
    }

    #[test]
    fn eigenvalues_rotation_generator() {
        let a = Matrix::new(2, 2, vec![0.0, 1.0, -1.0, 0.0]);
        let mut eigs = eigenvalues(&a).unwrap();
        eigs.sort_by(|a, b| a.im.partial_cmp(&b.im).unwrap());
        assert!((eigs[0] - Complex64::new(0.0, -1.0)).norm() < 1e-12);
        assert!((eigs[1] - Complex64::new(0.0, 1.0)).norm() < 1e-12);
    }

    #[test]
    fn eigenvalues_known_spectrum_under_rotation() {
        // Similarity by a Givens rotation preserves the spectrum.
        let d = Matrix::diag(&[-3.0, 0.5, 2.0, 4.0]);
        let (c, s) = (0.6f64, 0.8f64);
        let mut g = Matrix::identity(4);
        g.set(0, 0, c);
        g.set(0, 2, s);
        g.set(2, 0, -s);
        g.set(2, 2, c);
        let a = g.matmul(&d).matmul(&g.transpose());
        let mut eigs = eigenvalues(&a).unwrap();
        eigs.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
        for (e, want) in eigs.iter().zip([-3.0, 0.5, 2.0, 4.0]) {
            assert!((e.re - want).abs() < 1e-8, "got {} want {}", e.re, want);
            assert!(e.im.abs() < 1e-10);
        }
    }

    #[test]
    fn eigenvalues_trace_and_det_invariants() {
        let mut rng = ChaCha12Rng::seed_from_u64(55);
        for trial in 0..200 {
            let n = 2 + trial % 5; // up to 6
            let a = random_matrix(n, &mut rng, 2.0);
            let eigs = eigenvalues(&a).unwrap();
            let sum: Complex64 = eigs.iter().sum();
            assert!(
                (sum.re - a.trace()).abs() <= 1e-8 * (1.0 + a.trace().abs()),
                "trial {}: eigenvalue sum {} vs trace {}",
                trial,
                sum.re,
                a.trace()
            );
            assert!(sum.im.abs() <= 1e-8);
            let prod: Complex64 = eigs.iter().fold(Complex64::new(1.0, 0.0), |p, e| p * e);
            let d = det(&a);
            assert!(
                (prod.re - d).abs() <= 1e-6 * (1.0 + d.abs()),
                "trial {}: eigenvalue product {} vs det {}",
                trial,
                prod.re,
                d
            );
        }
    }

    #[test]
    fn collapse_merges_defective_ring_only() {
        // A full-multiplicity cluster merges to its mean; well-separated
        // values pass through untouched.
        let ring: Vec<Complex64> = (0..5)
            .map(|k| {
                let th = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
                Complex64::new(-2.0 + 1e-3 * th.cos(), 1e-3 * th.sin())
            })
            .collect();
        let merged = collapse_defective_clusters(&ring, 10.0);
        for e in &merged {
            assert!((e - Complex64::new(-2.0, 0.0)).norm() < 1e-4);
            assert_eq!(e.im, 0.0);
        }
        let separated = vec![
            Complex64::new(1.0, 0.0),
            Complex64::new(1.05, 0.0),
            Complex64::new(3.0, 0.0),
        ];
        let out = collapse_defective_clusters(&separated, 3.3);
        assert_eq!(out, separated);
    }

    #[test]
    fn lyapunov_zero_cases() {
        let z = Matrix::zeros(2, 2);
        assert_eq!(lyapunov_residual(&z, &z, &z).unwrap(), 0.0);
        let f = Matrix::identity(2).scale(-1.0);
        let s = Matrix::identity(2).scale(0.5);
        let q = Matrix::identity(2);
        assert_eq!(lyapunov_residual(&f, &s, &q).unwrap(), 0.0);
    }

    #[test]
    fn lyapunov_dimension_mismatch() {
        let f = Matrix::zeros(2, 2);
        let s = Matrix::zeros(3, 3);
        assert!(matches!(
            lyapunov_residual(&f, &s, &f),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn det_known() {
        let a = Matrix::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        assert!((det(&a) + 2.0).abs() < 1e-14);
        assert!((det(&Matrix::identity(5)) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lq_factor_reproduces_gram_product() {
        let mut rng = ChaCha12Rng::seed_from_u64(40);
        for (n, m) in [(1, 1), (3, 3), (4, 9), (5, 40)] {
            let mut a = Matrix::zeros(n, m);
            for i in 0..n {
                for j in 0..m {
                    a.set(i, j, rng.random_range(-1.0..1.0));
                }
            }
            let l = lq_factor(&a);
            let gram = a.matmul(&a.transpose());
            let rebuilt = l.matmul(&l.transpose());
            assert!(rebuilt.sub(&gram).max_abs() < 1e-13 * gram.max_abs().max(1.0));
            for i in 0..n {
                assert!(l.get(i, i) >= 0.0);
                for j in (i + 1)..n {
                    assert_eq!(l.get(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn lq_factor_matches_cholesky_of_product() {
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let a = random_matrix(5, &mut rng, 1.0);
        let l_lq = lq_factor(&a);
        let l_chol = cholesky(&a.matmul(&a.transpose()).symmetrize()).unwrap();
        assert!(l_lq.sub(&l_chol).max_abs() < 1e-12);
    }

    #[test]
    fn lq_factor_survives_badly_graded_rows() {
        // A row eight orders of magnitude below the rest, nearly parallel
        // to the span of the others: the Gram product would put the small
        // row's independent content below roundoff, but the factorization
        // must still return a consistent factor with a tiny first pivot.
        let tiny = 1e-8;
        let a = Matrix::new(
            3,
            4,
            vec![
                tiny, 0.9 * tiny, 0.0, 0.0, //
                1.0, 0.9, 0.1, 0.0, //
                0.3, 0.4, 0.0, 0.2,
            ],
        );
        let l = lq_factor(&a);
        let rebuilt = l.matmul(&l.transpose());
        let gram = a.matmul(&a.transpose());
        assert!(rebuilt.sub(&gram).max_abs() < 1e-15);
        let first = l.get(0, 0);
        assert!(first > 0.0 && first < 2.0 * tiny);
        for j in 0..3 {
            assert!(l.get(j, j) > 0.0);
        }
    }

    #[test]
    fn lq_factor_zero_row_stays_deterministic() {
        let a = Matrix::new(2, 3, vec![0.0, 0.0, 0.0, 1.0, 2.0, 2.0]);
        let l = lq_factor(&a);
        // Row 0 gets no innovation; row 1 keeps its full length. A nonzero
        // subdiagonal entry is harmless because it multiplies a component
        // the zero diagonal already silences.
        assert_eq!(l.get(0, 0), 0.0);
        assert_eq!(l.get(0, 1), 0.0);
        let row1 = l.get(1, 0) * l.get(1, 0) + l.get(1, 1) * l.get(1, 1);
        assert!((row1 - 9.0).abs() < 1e-13);
    }
}
