//! Small dense real matrices.
//!
//! Everything here targets desk-scale problems: square matrices up to
//! [`MAX_DIM`] rows, row-major storage, no sparsity. The three non-trivial
//! routines are the matrix exponential (scaling and squaring around a
//! degree-13 Taylor polynomial), the eigenvalue solver (Householder
//! Hessenberg reduction followed by Francis double-shift QR) and the spectral
//! norm (power iteration on `AᵀA`).

use std::fmt;
use std::ops::{Index, IndexMut};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Eigenvalues and other complex quantities.
pub type ComplexScalar = Complex64;

/// Largest supported square dimension.
pub const MAX_DIM: usize = 64;

const TAYLOR_DEGREE: usize = 13;
const EXP_SCALE_TARGET: f64 = 0.5;
const QR_DEFLATION_TOL: f64 = 1e-14;
const POWER_ITER_CAP: usize = 10_000;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major entries. Entries must be finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::Parameter(format!("matrix entry {bad} is not finite")));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(r, c, rows.iter().flat_map(|row| row.iter().copied()).collect())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { rows: self.rows, cols: self.cols, data })
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::Dimension(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::Dimension(format!(
                "cannot apply {}x{} matrix to vector of length {}",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), v)).collect())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Maximum absolute column sum.
    pub fn norm_1(&self) -> f64 {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    fn same_shape(&self, other: &Self) -> Result<()> {
        if self.rows == other.rows && self.cols == other.cols {
            Ok(())
        } else {
            Err(Error::Dimension(format!("shape {}x{} vs {}x{}", self.rows, self.cols, other.rows, other.cols)))
        }
    }

    fn check_square(&self) -> Result<()> {
        if !self.is_square() {
            return Err(Error::Dimension(format!("square matrix required, got {}x{}", self.rows, self.cols)));
        }
        if self.rows > MAX_DIM {
            return Err(Error::Dimension(format!("dimension {} exceeds supported maximum {MAX_DIM}", self.rows)));
        }
        Ok(())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `exp(tA)` by scaling and squaring.
///
/// The argument is scaled by `2^-s` until its 1-norm drops below 0.5, the
/// degree-13 Taylor polynomial is evaluated with Horner's scheme and the
/// result is squared `s` times.
pub fn mat_exp(a: &Matrix, t: f64) -> Result<Matrix> {
    a.check_square()?;
    if !t.is_finite() {
        return Err(Error::Parameter(format!("time {t} is not finite")));
    }
    let n = a.rows();
    let ta = a.scale(t);
    let norm = ta.norm_1();
    let mut squarings = 0u32;
    if norm >= EXP_SCALE_TARGET {
        squarings = (norm / EXP_SCALE_TARGET).log2().floor() as u32 + 1;
    }
    let scaled = ta.scale(0.5f64.powi(squarings as i32));

    // Horner: I + X(I + X/2(I + X/3(...)))
    let id = Matrix::identity(n);
    let mut acc = id.clone();
    for k in (1..=TAYLOR_DEGREE).rev() {
        acc = id.add(&scaled.mul(&acc)?.scale(1.0 / k as f64))?;
    }
    for _ in 0..squarings {
        acc = acc.mul(&acc)?;
    }
    Ok(acc)
}

/// The block matrix `[[0, A], [I/h, -I/h]]` governing the deterministic
/// Euler dynamics of `u' = Au`.
pub fn build_b(a: &Matrix, h: f64) -> Result<Matrix> {
    a.check_square()?;
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Parameter(format!("stepsize parameter h must be positive, got {h}")));
    }
    let d = a.rows();
    let mut b = Matrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            b[(i, d + j)] = a[(i, j)];
        }
        b[(d + i, i)] = 1.0 / h;
        b[(d + i, d + i)] = -1.0 / h;
    }
    Ok(b)
}

/// Largest singular value via power iteration on `AᵀA`.
pub fn spectral_norm(a: &Matrix) -> Result<f64> {
    if a.rows() == 0 || a.cols() == 0 {
        return Ok(0.0);
    }
    let ata = a.transpose().mul(a)?;
    let n = ata.rows();
    // Deterministic start with no special alignment to coordinate axes.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1.0 / (i as f64 + 2.0)).collect();
    let nv = norm2(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut mu_prev = f64::NAN;
    for _ in 0..POWER_ITER_CAP {
        let w = ata.mul_vec(&v)?;
        let mu = dot(&v, &w);
        let nw = norm2(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        if (mu - mu_prev).abs() <= 1e-13 * mu.abs() {
            return Ok(mu.max(0.0).sqrt());
        }
        mu_prev = mu;
        v = w.into_iter().map(|x| x / nw).collect();
    }
    Err(Error::Convergence { what: "spectral norm power iteration", iterations: POWER_ITER_CAP, partial: vec![] })
}

/// Eigenvalues with multiplicity, sorted by real part then imaginary part.
pub fn eigenvalues(a: &Matrix) -> Result<Vec<ComplexScalar>> {
    a.check_square()?;
    let n = a.rows();
    if n == 0 {
        return Ok(vec![]);
    }
    let mut h = a.clone();
    hessenberg_reduce(&mut h);
    let mut eigs = francis_qr(&mut h)?;
    sort_eigenvalues(&mut eigs);
    Ok(eigs)
}

fn sort_eigenvalues(eigs: &mut [ComplexScalar]) {
    eigs.sort_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)));
}

/// In-place Householder reduction to upper Hessenberg form.
fn hessenberg_reduce(h: &mut Matrix) {
    let n = h.rows();
    if n < 3 {
        return;
    }
    let mut ort = vec![0.0; n];
    for m in 1..n - 1 {
        let scale: f64 = (m..n).map(|i| h[(i, m - 1)].abs()).sum();
        if scale == 0.0 {
            continue;
        }
        let mut hh = 0.0;
        for i in (m..n).rev() {
            ort[i] = h[(i, m - 1)] / scale;
            hh += ort[i] * ort[i];
        }
        let mut g = hh.sqrt();
        if ort[m] > 0.0 {
            g = -g;
        }
        hh -= ort[m] * g;
        ort[m] -= g;

        // H = (I - u uᵀ/hh) H (I - u uᵀ/hh)
        for j in m..n {
            let f = (m..n).rev().map(|i| ort[i] * h[(i, j)]).sum::<f64>() / hh;
            for i in m..n {
                h[(i, j)] -= f * ort[i];
            }
        }
        for i in 0..n {
            let f = (m..n).rev().map(|j| ort[j] * h[(i, j)]).sum::<f64>() / hh;
            for j in m..n {
                h[(i, j)] -= f * ort[j];
            }
        }
        ort[m] *= scale;
        h[(m, m - 1)] = scale * g;
        for i in m + 1..n {
            h[(i, m - 1)] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix (eigenvalues only).
fn francis_qr(h: &mut Matrix) -> Result<Vec<ComplexScalar>> {
    let nn = h.rows();
    let mut re = vec![0.0; nn];
    let mut im = vec![0.0; nn];
    let max_sweeps = 100 * nn;
    let mut sweeps = 0usize;

    let mut norm = 0.0;
    for i in 0..nn {
        for j in i.saturating_sub(1)..nn {
            norm += h[(i, j)].abs();
        }
    }

    let mut n = nn as isize - 1;
    let mut exshift = 0.0;
    let mut iter = 0;
    let (mut p, mut q, mut r, mut s, mut z): (f64, f64, f64, f64, f64);
    let mut w;
    let mut x;
    let mut y;

    while n >= 0 {
        let nu = n as usize;
        // Look for a single small subdiagonal element.
        let mut l = nu;
        while l > 0 {
            s = h[(l - 1, l - 1)].abs() + h[(l, l)].abs();
            if s == 0.0 {
                s = norm;
            }
            if h[(l, l - 1)].abs() < QR_DEFLATION_TOL * s {
                break;
            }
            l -= 1;
        }

        if l == nu {
            // One root found.
            h[(nu, nu)] += exshift;
            re[nu] = h[(nu, nu)];
            im[nu] = 0.0;
            n -= 1;
            iter = 0;
        } else if l + 1 == nu {
            // Two roots found: closed form on the trailing 2x2 block.
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];
            p = (h[(nu - 1, nu - 1)] - h[(nu, nu)]) / 2.0;
            q = p * p + w;
            z = q.abs().sqrt();
            h[(nu, nu)] += exshift;
            h[(nu - 1, nu - 1)] += exshift;
            x = h[(nu, nu)];
            if q >= 0.0 {
                z = if p >= 0.0 { p + z } else { p - z };
                re[nu - 1] = x + z;
                re[nu] = re[nu - 1];
                if z != 0.0 {
                    re[nu] = x - w / z;
                }
                im[nu - 1] = 0.0;
                im[nu] = 0.0;
            } else {
                re[nu - 1] = x + p;
                re[nu] = x + p;
                im[nu - 1] = z;
                im[nu] = -z;
            }
            n -= 2;
            iter = 0;
        } else {
            sweeps += 1;
            if sweeps > max_sweeps {
                let mut partial: Vec<ComplexScalar> = (nu + 1..nn).map(|i| Complex64::new(re[i], im[i])).collect();
                sort_eigenvalues(&mut partial);
                return Err(Error::Convergence { what: "Francis QR", iterations: max_sweeps, partial });
            }
            x = h[(nu, nu)];
            y = h[(nu - 1, nu - 1)];
            w = h[(nu, nu - 1)] * h[(nu - 1, nu)];

            // Exceptional shifts break rare cycles.
            if iter == 10 {
                exshift += x;
                for i in 0..=nu {
                    h[(i, i)] -= x;
                }
                s = h[(nu, nu - 1)].abs() + h[(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            if iter == 30 {
                s = (y - x) / 2.0;
                s = s * s + w;
                if s > 0.0 {
                    s = s.sqrt();
                    if y < x {
                        s = -s;
                    }
                    s = x - w / ((y - x) / 2.0 + s);
                    for i in 0..=nu {
                        h[(i, i)] -= s;
                    }
                    exshift += s;
                    x = 0.964;
                    y = x;
                    w = x;
                }
            }
            iter += 1;

            // Look for two consecutive small subdiagonal elements.
            let mut m = nu - 2;
            loop {
                z = h[(m, m)];
                r = x - z;
                s = y - z;
                p = (r * s - w) / h[(m + 1, m)] + h[(m, m + 1)];
                q = h[(m + 1, m + 1)] - z - r - s;
                r = h[(m + 2, m + 1)];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let lhs = h[(m, m - 1)].abs() * (q.abs() + r.abs());
                let rhs = QR_DEFLATION_TOL * (p.abs() * (h[(m - 1, m - 1)].abs() + z.abs() + h[(m + 1, m + 1)].abs()));
                if lhs < rhs {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                h[(i, i - 2)] = 0.0;
                if i > m + 2 {
                    h[(i, i - 3)] = 0.0;
                }
            }

            // Double QR step on rows l..=n, columns m..=n.
            for k in m..nu {
                let notlast = k + 1 != nu;
                if k != m {
                    p = h[(k, k - 1)];
                    q = h[(k + 1, k - 1)];
                    r = if notlast { h[(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x == 0.0 {
                        continue;
                    }
                    p /= x;
                    q /= x;
                    r /= x;
                } else {
                    x = 0.0;
                }
                s = (p * p + q * q + r * r).sqrt();
                if p < 0.0 {
                    s = -s;
                }
                if s == 0.0 {
                    continue;
                }
                if k != m {
                    h[(k, k - 1)] = -s * x;
                } else if l != m {
                    h[(k, k - 1)] = -h[(k, k - 1)];
                }
                p += s;
                x = p / s;
                y = q / s;
                z = r / s;
                q /= p;
                r /= p;

                for j in k..nn {
                    let mut pj = h[(k, j)] + q * h[(k + 1, j)];
                    if notlast {
                        pj += r * h[(k + 2, j)];
                        h[(k + 2, j)] -= pj * z;
                    }
                    h[(k, j)] -= pj * x;
                    h[(k + 1, j)] -= pj * y;
                }
                for i in 0..=nu.min(k + 3) {
                    let mut pi = x * h[(i, k)] + y * h[(i, k + 1)];
                    if notlast {
                        pi += z * h[(i, k + 2)];
                        h[(i, k + 2)] -= pi * r;
                    }
                    h[(i, k)] -= pi;
                    h[(i, k + 1)] -= pi * q;
                }
            }
        }
    }

    Ok(re.into_iter().zip(im).map(|(a, b)| Complex64::new(a, b)).collect())
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(a: &Matrix) -> Result<f64> {
    a.check_square()?;
    let n = a.rows();
    let mut m = a.clone();
    let mut det = 1.0;
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[(i, c)].abs().total_cmp(&m[(j, c)].abs())).unwrap();
        if m[(piv, c)] == 0.0 {
            return Ok(0.0);
        }
        if piv != c {
            for j in 0..n {
                let tmp = m[(c, j)];
                m[(c, j)] = m[(piv, j)];
                m[(piv, j)] = tmp;
            }
            det = -det;
        }
        det *= m[(c, c)];
        for i in c + 1..n {
            let f = m[(i, c)] / m[(c, c)];
            for j in c..n {
                m[(i, j)] -= f * m[(c, j)];
            }
        }
    }
    Ok(det)
}
