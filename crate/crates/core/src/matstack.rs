//! Dense real matrices and the handful of factorizations the controller
//! synthesis needs: LU with partial pivoting, Hessenberg + shifted QR for
//! nonsymmetric eigenvalues, cyclic Jacobi for symmetric eigenvalues, and a
//! one-sided Jacobi SVD for singular values and the pseudoinverse.
//!
//! Everything here is sized for matrices up to roughly 100x100.

use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Neg, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Row-major dense matrix with finite entries.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Mat {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            write!(f, "  ")?;
            for j in 0..self.cols {
                write!(f, "{:>12.6} ", self[(i, j)])?;
            }
            writeln!(f)?;
        }
        write!(f, "]")
    }
}

fn check_finite(rows: usize, cols: usize, data: &[f64]) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            row: pos / cols.max(1),
            col: pos % cols.max(1),
        });
    }
    debug_assert_eq!(rows * cols, data.len());
    Ok(())
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension {
                context: "Mat::new",
                detail: format!("{} entries for a {rows}x{cols} matrix", data.len()),
            });
        }
        check_finite(rows, cols, &data)?;
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. All rows must have equal length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != ncols {
                return Err(Error::Dimension {
                    context: "Mat::from_rows",
                    detail: format!("row {i} has {} entries, expected {ncols}", r.len()),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(nrows, ncols, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Result<Self> {
        check_finite(1, values.len(), values)?;
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        Ok(m)
    }

    /// Column vector from a slice.
    pub fn col(values: &[f64]) -> Result<Self> {
        Self::new(values.len(), 1, values.to_vec())
    }

    pub fn block_diag(blocks: &[Mat]) -> Self {
        let rows = blocks.iter().map(Mat::rows).sum();
        let cols = blocks.iter().map(Mat::cols).sum();
        let mut m = Self::zeros(rows, cols);
        let (mut r, mut c) = (0, 0);
        for b in blocks {
            m.set_block(r, c, b);
            r += b.rows;
            c += b.cols;
        }
        m
    }

    /// Horizontal concatenation; all blocks must share the row count.
    pub fn hstack(blocks: &[Mat]) -> Result<Self> {
        let rows = blocks.first().map_or(0, Mat::rows);
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::Dimension {
                context: "Mat::hstack",
                detail: "row counts differ".into(),
            });
        }
        let cols = blocks.iter().map(Mat::cols).sum();
        let mut m = Self::zeros(rows, cols);
        let mut c = 0;
        for b in blocks {
            m.set_block(0, c, b);
            c += b.cols;
        }
        Ok(m)
    }

    /// Vertical concatenation; all blocks must share the column count.
    pub fn vstack(blocks: &[Mat]) -> Result<Self> {
        let cols = blocks.first().map_or(0, Mat::cols);
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::Dimension {
                context: "Mat::vstack",
                detail: "column counts differ".into(),
            });
        }
        let rows = blocks.iter().map(Mat::rows).sum();
        let mut m = Self::zeros(rows, cols);
        let mut r = 0;
        for b in blocks {
            m.set_block(r, 0, b);
            r += b.rows;
        }
        Ok(m)
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &Mat) -> Mat {
        let mut m = Mat::zeros(self.rows * other.rows, self.cols * other.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let s = self[(i, j)];
                if s == 0.0 {
                    continue;
                }
                for k in 0..other.rows {
                    for l in 0..other.cols {
                        m[(i * other.rows + k, j * other.cols + l)] = s * other[(k, l)];
                    }
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
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

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Mat {
        assert!(
            r0 + rows <= self.rows && c0 + cols <= self.cols,
            "block out of range"
        );
        let mut b = Mat::zeros(rows, cols);
        for i in 0..rows {
            b.data[i * cols..(i + 1) * cols].copy_from_slice(
                &self.data[(r0 + i) * self.cols + c0..(r0 + i) * self.cols + c0 + cols],
            );
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &Mat) {
        assert!(
            r0 + b.rows <= self.rows && c0 + b.cols <= self.cols,
            "block out of range"
        );
        for i in 0..b.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + b.cols].copy_from_slice(b.row(i));
        }
    }

    /// Checked product.
    pub fn matmul(&self, rhs: &Mat) -> Result<Mat> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension {
                context: "matmul",
                detail: format!(
                    "{}x{} times {}x{}",
                    self.rows, self.cols, rhs.rows, rhs.cols
                ),
            });
        }
        let mut out = Mat::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &rhs.data[k * rhs.cols..(k + 1) * rhs.cols];
                let dst = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "mul_vec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn scale(&self, s: f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Quadratic form `vᵀ M v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        dot(v, &self.mul_vec(v))
    }

    pub fn symmetrize(&self) -> Mat {
        let t = self.transpose();
        (self + &t).scale(0.5)
    }

    pub fn norm_fro(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Spectral norm (largest singular value).
    pub fn norm2(&self) -> f64 {
        max_singular_value(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn approx_eq(&self, other: &Mat, tol: f64) -> bool {
        self.shape() == other.shape()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| (a - b).abs() <= tol)
    }
}

impl Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl Mul for &Mat {
    type Output = Mat;
    fn mul(self, rhs: &Mat) -> Mat {
        self.matmul(rhs).expect("matrix product dimension mismatch")
    }
}

impl Add for &Mat {
    type Output = Mat;
    fn add(self, rhs: &Mat) -> Mat {
        assert_eq!(self.shape(), rhs.shape(), "matrix sum dimension mismatch");
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Mat {
    type Output = Mat;
    fn sub(self, rhs: &Mat) -> Mat {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "matrix difference dimension mismatch"
        );
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&rhs.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Neg for &Mat {
    type Output = Mat;
    fn neg(self) -> Mat {
        self.scale(-1.0)
    }
}

impl Serialize for Mat {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Mat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(deserializer)?;
        Mat::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

// ---------------------------------------------------------------------------
// vector helpers

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

// ---------------------------------------------------------------------------
// linear solves

/// Solves `a x = b` by LU factorization with partial pivoting.
///
/// A pivot smaller than `1e-12 * max|a|` is treated as singular.
pub fn solve_linear(a: &Mat, b: &Mat) -> Result<Mat> {
    if !a.is_square() {
        return Err(Error::Dimension {
            context: "solve_linear",
            detail: format!("coefficient matrix is {}x{}", a.rows, a.cols),
        });
    }
    if b.rows != a.rows {
        return Err(Error::Dimension {
            context: "solve_linear",
            detail: format!("right-hand side has {} rows, expected {}", b.rows, a.rows),
        });
    }
    let n = a.rows;
    let mut lu = a.clone();
    let mut x = b.clone();
    let scale = a.max_abs();
    let tiny = 1e-12 * scale;
    for k in 0..n {
        let (p, pivot) = (k..n)
            .map(|i| (i, lu[(i, k)].abs()))
            .fold(
                (k, -1.0),
                |best, cur| if cur.1 > best.1 { cur } else { best },
            );
        if pivot <= tiny || pivot == 0.0 {
            return Err(Error::Singular { column: k, pivot });
        }
        if p != k {
            for j in 0..n {
                lu.data.swap(k * n + j, p * n + j);
            }
            for j in 0..x.cols {
                x.data.swap(k * x.cols + j, p * x.cols + j);
            }
        }
        let d = lu[(k, k)];
        for i in k + 1..n {
            let f = lu[(i, k)] / d;
            if f == 0.0 {
                continue;
            }
            lu[(i, k)] = 0.0;
            for j in k + 1..n {
                lu[(i, j)] -= f * lu[(k, j)];
            }
            for j in 0..x.cols {
                x[(i, j)] -= f * x[(k, j)];
            }
        }
    }
    for k in (0..n).rev() {
        for j in 0..x.cols {
            let mut s = x[(k, j)];
            for i in k + 1..n {
                s -= lu[(k, i)] * x[(i, j)];
            }
            x[(k, j)] = s / lu[(k, k)];
        }
    }
    Ok(x)
}

pub fn inverse(a: &Mat) -> Result<Mat> {
    solve_linear(a, &Mat::identity(a.rows))
}

// ---------------------------------------------------------------------------
// nonsymmetric eigenvalues

/// Complex eigenvalue as `(re, im)`.
pub type Eigenvalue = (f64, f64);

/// All eigenvalues of a square matrix via balancing, Hessenberg reduction
/// by stabilized elimination, and Francis double-shift QR.
pub fn eigenvalues(m: &Mat) -> Result<Vec<Eigenvalue>> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: "eigenvalues",
            detail: format!("matrix is {}x{}", m.rows, m.cols),
        });
    }
    let n = m.rows;
    if n == 0 {
        return Ok(Vec::new());
    }
    // 1-based working copy keeps the QR sweep close to its textbook form.
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = m[(i, j)];
        }
    }
    balance(&mut a, n);
    to_hessenberg(&mut a, n);
    hessenberg_qr(&mut a, n)
}

fn balance(a: &mut [Vec<f64>], n: usize) {
    const RADIX: f64 = 2.0;
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 1..=n {
            let (mut r, mut c) = (0.0, 0.0);
            for j in 1..=n {
                if j != i {
                    c += a[j][i].abs();
                    r += a[i][j].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let mut g = r / RADIX;
                let mut f = 1.0;
                let s = c + r;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 1..=n {
                        a[i][j] *= g;
                    }
                    for j in 1..=n {
                        a[j][i] *= f;
                    }
                }
            }
        }
    }
}

fn to_hessenberg(a: &mut [Vec<f64>], n: usize) {
    if n < 3 {
        return;
    }
    for m in 2..n {
        let mut x = 0.0_f64;
        let mut piv = m;
        for j in m..=n {
            if a[j][m - 1].abs() > x.abs() {
                x = a[j][m - 1];
                piv = j;
            }
        }
        if piv != m {
            for j in (m - 1)..=n {
                let t = a[piv][j];
                a[piv][j] = a[m][j];
                a[m][j] = t;
            }
            for row in a.iter_mut().skip(1) {
                row.swap(piv, m);
            }
        }
        if x != 0.0 {
            for i in (m + 1)..=n {
                let mut y = a[i][m - 1];
                if y != 0.0 {
                    y /= x;
                    a[i][m - 1] = y;
                    for j in m..=n {
                        a[i][j] -= y * a[m][j];
                    }
                    for row in a.iter_mut().skip(1) {
                        row[m] += y * row[i];
                    }
                }
            }
        }
    }
    for i in 3..=n {
        for j in 1..i - 1 {
            a[i][j] = 0.0;
        }
    }
}

fn hessenberg_qr(a: &mut [Vec<f64>], n: usize) -> Result<Vec<Eigenvalue>> {
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let mut anorm = 0.0;
    for i in 1..=n {
        for j in i.saturating_sub(1).max(1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n as isize;
    let mut t = 0.0;
    let at = |i: isize| i as usize;
    while nn >= 1 {
        let mut its = 0;
        let mut l: isize;
        loop {
            // look for a single small subdiagonal element
            l = nn;
            while l >= 2 {
                let mut s = a[at(l - 1)][at(l - 1)].abs() + a[at(l)][at(l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[at(l)][at(l - 1)].abs() + s == s {
                    a[at(l)][at(l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[at(nn)][at(nn)];
            if l == nn {
                wr[at(nn)] = x + t;
                wi[at(nn)] = 0.0;
                nn -= 1;
            } else {
                let mut y = a[at(nn - 1)][at(nn - 1)];
                let mut w = a[at(nn)][at(nn - 1)] * a[at(nn - 1)][at(nn)];
                if l == nn - 1 {
                    let p = 0.5 * (y - x);
                    let q = p * p + w;
                    let mut z = q.abs().sqrt();
                    x += t;
                    if q >= 0.0 {
                        z = p + z.copysign(p);
                        wr[at(nn - 1)] = x + z;
                        wr[at(nn)] = x + z;
                        if z != 0.0 {
                            wr[at(nn)] = x - w / z;
                        }
                        wi[at(nn - 1)] = 0.0;
                        wi[at(nn)] = 0.0;
                    } else {
                        wr[at(nn - 1)] = x + p;
                        wr[at(nn)] = x + p;
                        wi[at(nn - 1)] = -z;
                        wi[at(nn)] = z;
                    }
                    nn -= 2;
                } else {
                    if its == 60 {
                        return Err(Error::EigenNoConvergence);
                    }
                    if its == 10 || its == 20 || its == 40 {
                        // exceptional shift
                        t += x;
                        for i in 1..=at(nn) {
                            a[i][i] -= x;
                        }
                        let s = a[at(nn)][at(nn - 1)].abs() + a[at(nn - 1)][at(nn - 2)].abs();
                        x = 0.75 * s;
                        y = x;
                        w = -0.4375 * s * s;
                    }
                    its += 1;
                    let (mut p, mut q, mut r, mut z);
                    let mut m = nn - 2;
                    loop {
                        z = a[at(m)][at(m)];
                        r = x - z;
                        let s0 = y - z;
                        p = (r * s0 - w) / a[at(m + 1)][at(m)] + a[at(m)][at(m + 1)];
                        q = a[at(m + 1)][at(m + 1)] - z - r - s0;
                        r = a[at(m + 2)][at(m + 1)];
                        let s = p.abs() + q.abs() + r.abs();
                        p /= s;
                        q /= s;
                        r /= s;
                        if m == l {
                            break;
                        }
                        let u = a[at(m)][at(m - 1)].abs() * (q.abs() + r.abs());
                        let v = p.abs()
                            * (a[at(m - 1)][at(m - 1)].abs()
                                + z.abs()
                                + a[at(m + 1)][at(m + 1)].abs());
                        if u + v == v {
                            break;
                        }
                        m -= 1;
                    }
                    for i in (m + 2)..=nn {
                        a[at(i)][at(i - 2)] = 0.0;
                        if i != m + 2 {
                            a[at(i)][at(i - 3)] = 0.0;
                        }
                    }
                    let mut k = m;
                    while k < nn {
                        if k != m {
                            p = a[at(k)][at(k - 1)];
                            q = a[at(k + 1)][at(k - 1)];
                            r = 0.0;
                            if k != nn - 1 {
                                r = a[at(k + 2)][at(k - 1)];
                            }
                            x = p.abs() + q.abs() + r.abs();
                            if x != 0.0 {
                                p /= x;
                                q /= x;
                                r /= x;
                            }
                        }
                        let s = (p * p + q * q + r * r).sqrt().copysign(p);
                        if s != 0.0 {
                            if k == m {
                                if l != m {
                                    a[at(k)][at(k - 1)] = -a[at(k)][at(k - 1)];
                                }
                            } else {
                                a[at(k)][at(k - 1)] = -s * x;
                            }
                            p += s;
                            x = p / s;
                            y = q / s;
                            z = r / s;
                            q /= p;
                            r /= p;
                            for j in k..=nn {
                                let mut pp = a[at(k)][at(j)] + q * a[at(k + 1)][at(j)];
                                if k != nn - 1 {
                                    pp += r * a[at(k + 2)][at(j)];
                                    a[at(k + 2)][at(j)] -= pp * z;
                                }
                                a[at(k + 1)][at(j)] -= pp * y;
                                a[at(k)][at(j)] -= pp * x;
                            }
                            let mmin = if nn < k + 3 { nn } else { k + 3 };
                            for i in l..=mmin {
                                let mut pp = x * a[at(i)][at(k)] + y * a[at(i)][at(k + 1)];
                                if k != nn - 1 {
                                    pp += z * a[at(i)][at(k + 2)];
                                    a[at(i)][at(k + 2)] -= pp * r;
                                }
                                a[at(i)][at(k + 1)] -= pp * q;
                                a[at(i)][at(k)] -= pp;
                            }
                        }
                        k += 1;
                    }
                }
            }
            if l >= nn - 1 {
                break;
            }
        }
    }
    Ok((1..=n).map(|i| (wr[i], wi[i])).collect())
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m)?
        .into_iter()
        .map(|(re, im)| re.hypot(im))
        .fold(0.0, f64::max))
}

// ---------------------------------------------------------------------------
// symmetric eigenvalues

/// Eigenvalues of a symmetric matrix (cyclic Jacobi), ascending.
/// Only the upper triangle is trusted; callers symmetrize first.
pub fn symmetric_eigenvalues(m: &Mat) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: "symmetric_eigenvalues",
            detail: format!("matrix is {}x{}", m.rows, m.cols),
        });
    }
    let n = m.rows;
    let mut a = m.symmetrize();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= 1e-30 * a.norm_fro().powi(2).max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}

fn asymmetry(m: &Mat) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.rows {
        for j in i + 1..m.cols {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Checks symmetry to `1e-10·max(1, ‖m‖)`.
pub fn check_symmetric(m: &Mat) -> Result<()> {
    if !m.is_square() {
        return Err(Error::Dimension {
            context: "check_symmetric",
            detail: format!("matrix is {}x{}", m.rows, m.cols),
        });
    }
    let asym = asymmetry(m);
    if asym > 1e-10 * m.max_abs().max(1.0) {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    Ok(())
}

/// True iff every eigenvalue of the symmetrized matrix exceeds
/// `1e-10·max(1, ‖m‖)`.
pub fn is_positive_definite(m: &Mat) -> Result<bool> {
    check_symmetric(m)?;
    let ev = symmetric_eigenvalues(m)?;
    let tol = 1e-10 * m.norm2().max(1.0);
    Ok(ev.iter().all(|&l| l > tol))
}

/// True iff every eigenvalue of the symmetrized matrix is at least
/// `-1e-10·max(1, ‖m‖)`.
pub fn is_positive_semidefinite(m: &Mat) -> Result<bool> {
    check_symmetric(m)?;
    let ev = symmetric_eigenvalues(m)?;
    let tol = 1e-10 * m.norm2().max(1.0);
    Ok(ev.iter().all(|&l| l >= -tol))
}

// ---------------------------------------------------------------------------
// singular values

/// Thin SVD `m = U diag(s) Vᵀ`.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Mat,
    pub s: Vec<f64>,
    pub v: Mat,
}

/// One-sided (Hestenes) Jacobi SVD. Orthogonalizes the columns of `m`
/// directly, which diagonalizes `mᵀm` without ever forming it.
pub fn svd(m: &Mat) -> Svd {
    if m.rows < m.cols {
        let t = svd(&m.transpose());
        return Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        };
    }
    let (cols_u, s, cols_v) = hestenes(m, true);
    let v = cols_v.expect("requested");
    let mut u = Mat::zeros(m.rows, m.cols);
    let mut vm = Mat::zeros(m.cols, m.cols);
    for j in 0..m.cols {
        for i in 0..m.rows {
            u[(i, j)] = if s[j] > 0.0 {
                cols_u[j][i] / s[j]
            } else {
                cols_u[j][i]
            };
        }
        for i in 0..m.cols {
            vm[(i, j)] = v[j][i];
        }
    }
    Svd { u, s, v: vm }
}

type Columns = Vec<Vec<f64>>;

/// Column-oriented Jacobi sweeps. Returns the rotated columns, their norms,
/// and optionally the accumulated right rotation (as columns).
fn hestenes(m: &Mat, want_v: bool) -> (Columns, Vec<f64>, Option<Columns>) {
    let (rows, cols) = m.shape();
    let mut u: Vec<Vec<f64>> = (0..cols)
        .map(|j| (0..rows).map(|i| m[(i, j)]).collect())
        .collect();
    let mut v: Option<Vec<Vec<f64>>> = want_v.then(|| {
        (0..cols)
            .map(|j| {
                let mut e = vec![0.0; cols];
                e[j] = 1.0;
                e
            })
            .collect()
    });
    for _sweep in 0..80 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let (alpha, beta, gamma) = {
                    let (up, uq) = (&u[p], &u[q]);
                    let mut acc = (0.0, 0.0, 0.0);
                    for (a, b) in up.iter().zip(uq) {
                        acc.0 += a * a;
                        acc.1 += b * b;
                        acc.2 += a * b;
                    }
                    acc
                };
                if gamma == 0.0 || gamma.abs() <= 1e-15 * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = if zeta == 0.0 {
                    1.0
                } else {
                    zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut u, p, q, c, s);
                if let Some(v) = v.as_mut() {
                    rotate_pair(v, p, q, c, s);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let s = u.iter().map(|col| norm(col)).collect();
    (u, s, v)
}

fn rotate_pair(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (left, right) = cols.split_at_mut(q);
    for (a, b) in left[p].iter_mut().zip(right[0].iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

pub fn singular_values(m: &Mat) -> Vec<f64> {
    let mut s = if m.rows < m.cols {
        hestenes(&m.transpose(), false).1
    } else {
        hestenes(m, false).1
    };
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

pub fn max_singular_value(m: &Mat) -> f64 {
    if m.rows == 0 || m.cols == 0 {
        return 0.0;
    }
    singular_values(m)[0]
}

fn rank_tolerance(m: &Mat, smax: f64) -> f64 {
    m.rows.max(m.cols) as f64 * f64::EPSILON * smax
}

/// Numerical rank with an explicit cutoff relative to σ_max.
pub fn rank_with_tol(m: &Mat, rel_tol: f64) -> usize {
    let s = singular_values(m);
    let smax = s.first().copied().unwrap_or(0.0);
    s.iter().filter(|&&v| v > rel_tol * smax && v > 0.0).count()
}

pub fn rank(m: &Mat) -> usize {
    let s = singular_values(m);
    let smax = s.first().copied().unwrap_or(0.0);
    let tol = rank_tolerance(m, smax);
    s.iter().filter(|&&v| v > tol).count()
}

/// Moore–Penrose pseudoinverse.
pub fn pseudo_inverse(m: &Mat) -> Mat {
    let Svd { u, s, v } = svd(m);
    let smax = s.iter().copied().fold(0.0, f64::max);
    let tol = rank_tolerance(m, smax);
    let mut out = Mat::zeros(m.cols, m.rows);
    for (k, &sk) in s.iter().enumerate() {
        if sk <= tol || sk == 0.0 {
            continue;
        }
        let inv = 1.0 / sk;
        for i in 0..m.cols {
            let vik = v[(i, k)] * inv;
            if vik == 0.0 {
                continue;
            }
            for j in 0..m.rows {
                out[(i, j)] += vik * u[(j, k)];
            }
        }
    }
    out
}
