//! Small dense real matrices.
//!
//! Everything in this crate is built on [`Matrix`]: a row-major `f64` buffer
//! with the max-row-sum operator norm, a Padé(13) matrix exponential, integer
//! powers, a Gelfand-style spectral-radius bound and a pivoted elimination
//! used for rank and linear solves. Dimensions here are tiny (a handful of
//! states), so nothing is blocked or vectorised.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};

/// Default relative pivot tolerance for [`Matrix::rank`].
pub const RANK_TOL: f64 = 1e-9;

/// Relative pivot tolerance for [`Matrix::solve`].
pub const SOLVE_TOL: f64 = 1e-12;

/// `inf_norm(m) * t` above this is rejected by [`Matrix::exp`].
pub const EXP_NORM_CAP: f64 = 700.0;

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from a row-major buffer. Rejects empty shapes, length
    /// mismatches and non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Dimension(format!("empty {rows}x{cols} matrix")));
        }
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "entry ({}, {}) = {}",
                bad / cols,
                bad % cols,
                data[bad]
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != m) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.as_ref().iter().copied())
            .collect();
        Self::new(n, m, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "empty matrix");
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

    pub fn diag(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, v) in values.iter().enumerate() {
            m[(i, i)] = *v;
        }
        m
    }

    /// Column vector.
    pub fn column(values: &[f64]) -> Self {
        Self {
            rows: values.len(),
            cols: 1,
            data: values.to_vec(),
        }
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
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    /// Operator norm induced by the max vector norm: the largest absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matrix-vector shape mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Copy of the block starting at `(r0, c0)` with the given shape.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(
            r0 + rows <= self.rows && c0 + cols <= self.cols,
            "block out of range"
        );
        let mut b = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                b[(i, j)] = self[(r0 + i, c0 + j)];
            }
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Matrix) {
        assert!(
            r0 + src.rows <= self.rows && c0 + src.cols <= self.cols,
            "block out of range"
        );
        for i in 0..src.rows {
            for j in 0..src.cols {
                self[(r0 + i, c0 + j)] = src[(i, j)];
            }
        }
    }

    pub fn hstack(blocks: &[&Matrix]) -> Result<Self> {
        let rows = blocks.first().map_or(0, |b| b.rows);
        if blocks.iter().any(|b| b.rows != rows) {
            return Err(Error::Dimension("hstack row mismatch".into()));
        }
        let cols = blocks.iter().map(|b| b.cols).sum();
        let mut out = Self::zeros(rows, cols);
        let mut c0 = 0;
        for b in blocks {
            out.set_block(0, c0, b);
            c0 += b.cols;
        }
        Ok(out)
    }

    pub fn vstack(blocks: &[&Matrix]) -> Result<Self> {
        let cols = blocks.first().map_or(0, |b| b.cols);
        if blocks.iter().any(|b| b.cols != cols) {
            return Err(Error::Dimension("vstack column mismatch".into()));
        }
        let rows = blocks.iter().map(|b| b.rows).sum();
        let mut out = Self::zeros(rows, cols);
        let mut r0 = 0;
        for b in blocks {
            out.set_block(r0, 0, b);
            r0 += b.rows;
        }
        Ok(out)
    }

    /// Checked product.
    pub fn matmul(&self, rhs: &Matrix) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Dimension(format!(
                "product of {}x{} and {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs.data[k * rhs.cols + j];
                }
            }
        }
        Ok(out)
    }

    fn require_square(&self, what: &str) -> Result<()> {
        if self.is_square() {
            Ok(())
        } else {
            Err(Error::Dimension(format!(
                "{what} needs a square matrix, got {}x{}",
                self.rows, self.cols
            )))
        }
    }

    /// `self^k` by repeated squaring; `self^0` is the identity.
    pub fn pow(&self, k: u32) -> Result<Self> {
        self.require_square("pow")?;
        let mut result = Self::identity(self.rows);
        let mut base = self.clone();
        let mut e = k;
        while e > 0 {
            if e & 1 == 1 {
                result = &result * &base;
            }
            e >>= 1;
            if e > 0 {
                base = &base * &base;
            }
        }
        Ok(result)
    }

    /// `e^{self * t}` by scaling and squaring around a diagonal Padé(13)
    /// approximant. The scaled argument has max-norm at most 0.5.
    pub fn exp(&self, t: f64) -> Result<Self> {
        self.require_square("exp")?;
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!(
                "exp time must be finite and nonnegative, got {t}"
            )));
        }
        let n = self.rows;
        let a = self.scale(t);
        let norm = a.inf_norm();
        if norm > EXP_NORM_CAP {
            return Err(Error::Overflow(format!(
                "exp argument norm {norm:.3e} exceeds {EXP_NORM_CAP}"
            )));
        }
        if norm == 0.0 {
            return Ok(Self::identity(n));
        }
        let squarings = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as i32
        } else {
            0
        };
        let a = a.scale(0.5f64.powi(squarings));

        let b = &PADE13;
        let id = Self::identity(n);
        let a2 = &a * &a;
        let a4 = &a2 * &a2;
        let a6 = &a4 * &a2;
        let lin = |terms: &[(f64, &Matrix)]| {
            let mut acc = Self::zeros(n, n);
            for (c, m) in terms {
                for (x, y) in acc.data.iter_mut().zip(&m.data) {
                    *x += c * y;
                }
            }
            acc
        };
        let u_inner = &a6 * &lin(&[(b[13], &a6), (b[11], &a4), (b[9], &a2)]);
        let u = &a * &(&u_inner + &lin(&[(b[7], &a6), (b[5], &a4), (b[3], &a2), (b[1], &id)]));
        let v_inner = &a6 * &lin(&[(b[12], &a6), (b[10], &a4), (b[8], &a2)]);
        let v = &v_inner + &lin(&[(b[6], &a6), (b[4], &a4), (b[2], &a2), (b[0], &id)]);

        let mut r = (&v - &u).solve(&(&v + &u))?;
        for _ in 0..squarings {
            r = &r * &r;
        }
        if !r.all_finite() {
            return Err(Error::Overflow("matrix exponential overflowed".into()));
        }
        Ok(r)
    }

    /// Upper bound on the spectral radius: `min_{1<=k<=max_power} ||self^k||^(1/k)`.
    pub fn gelfand_radius(&self, max_power: u32) -> Result<GelfandBound> {
        self.require_square("gelfand_radius")?;
        if max_power < 8 {
            return Err(Error::Domain(format!(
                "max_power must be >= 8, got {max_power}"
            )));
        }
        let mut best = GelfandBound {
            value: f64::INFINITY,
            power: 1,
        };
        let mut p = Self::identity(self.rows);
        for k in 1..=max_power {
            p = &p * self;
            let norm = p.inf_norm();
            let v = if norm == 0.0 {
                0.0
            } else {
                norm.powf(1.0 / k as f64)
            };
            if v < best.value {
                best = GelfandBound { value: v, power: k };
            }
            if norm == 0.0 || !norm.is_finite() {
                break;
            }
        }
        Ok(best)
    }

    /// Numerical rank by row reduction with partial pivoting. A pivot counts
    /// as zero when it is below `tol` times the largest entry of the input.
    pub fn rank(&self, tol: f64) -> usize {
        assert!(tol > 0.0, "rank tolerance must be positive");
        let scale = self.max_abs();
        if scale == 0.0 {
            return 0;
        }
        let threshold = tol * scale;
        let mut m = self.clone();
        let (rows, cols) = self.shape();
        let mut rank = 0;
        for col in 0..cols {
            if rank == rows {
                break;
            }
            let (piv, val) =
                (rank..rows)
                    .map(|r| (r, m[(r, col)].abs()))
                    .fold(
                        (rank, -1.0),
                        |best, cur| if cur.1 > best.1 { cur } else { best },
                    );
            if val <= threshold {
                continue;
            }
            m.swap_rows(rank, piv);
            for r in rank + 1..rows {
                let f = m[(r, col)] / m[(rank, col)];
                if f != 0.0 {
                    for c in col..cols {
                        let v = m[(rank, c)];
                        m[(r, c)] -= f * v;
                    }
                }
            }
            rank += 1;
        }
        rank
    }

    /// Solves `self * x = b` by Gaussian elimination with partial pivoting.
    pub fn solve(&self, b: &Matrix) -> Result<Self> {
        self.require_square("solve")?;
        if b.rows != self.rows {
            return Err(Error::Dimension(format!(
                "solve with {}x{} system and {} right-hand rows",
                self.rows, self.cols, b.rows
            )));
        }
        let n = self.rows;
        let threshold = SOLVE_TOL * self.inf_norm().max(f64::MIN_POSITIVE);
        let mut a = self.clone();
        let mut x = b.clone();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
                .unwrap_or(col);
            if a[(piv, col)].abs() < threshold {
                return Err(Error::Singular(format!(
                    "pivot {:.3e} in column {col}",
                    a[(piv, col)]
                )));
            }
            a.swap_rows(col, piv);
            x.swap_rows(col, piv);
            for r in col + 1..n {
                let f = a[(r, col)] / a[(col, col)];
                if f == 0.0 {
                    continue;
                }
                for c in col..n {
                    let v = a[(col, c)];
                    a[(r, c)] -= f * v;
                }
                for c in 0..x.cols {
                    let v = x[(col, c)];
                    x[(r, c)] -= f * v;
                }
            }
        }
        for col in (0..n).rev() {
            for c in 0..x.cols {
                let mut s = x[(col, c)];
                for k in col + 1..n {
                    s -= a[(col, k)] * x[(k, c)];
                }
                x[(col, c)] = s / a[(col, col)];
            }
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Self> {
        self.solve(&Self::identity(self.rows))
    }

    /// Reciprocal condition estimate in the max norm, `1 / (||A|| ||A^-1||)`.
    /// Zero when the matrix is singular at [`SOLVE_TOL`].
    pub fn rcond(&self) -> f64 {
        match self.inverse() {
            Ok(inv) => 1.0 / (self.inf_norm() * inv.inf_norm()),
            Err(_) => 0.0,
        }
    }

    fn swap_rows(&mut self, i: usize, j: usize) {
        if i == j {
            return;
        }
        for c in 0..self.cols {
            self.data.swap(i * self.cols + c, j * self.cols + c);
        }
    }
}

/// Result of [`Matrix::gelfand_radius`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GelfandBound {
    pub value: f64,
    /// Power at which the minimum was attained.
    pub power: u32,
}

impl GelfandBound {
    /// Schur stability is certified when the bound is below one.
    pub fn is_conclusive(&self) -> bool {
        self.value < 1.0
    }
}

/// Max norm of a vector.
pub fn vec_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn vec_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn vec_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

// b_0..b_13 of the degree-13 diagonal Padé approximant to exp.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

// Operator impls panic on shape mismatch; fallible callers use `matmul`.
impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs).expect("matrix product shape mismatch")
    }
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.shape(), rhs.shape(), "matrix sum shape mismatch");
        Matrix {
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

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        assert_eq!(
            self.shape(),
            rhs.shape(),
            "matrix difference shape mismatch"
        );
        Matrix {
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

impl Neg for &Matrix {
    type Output = Matrix;
    fn neg(self) -> Matrix {
        self.scale(-1.0)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            let cells: Vec<String> = self.row(i).iter().map(|v| format!("{v:>12.6}")).collect();
            writeln!(f, "  {}", cells.join(" "))?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &Matrix, b: &Matrix, tol: f64) -> bool {
        (a - b).inf_norm() <= tol
    }

    /// Truncated Taylor series summed until the terms stop contributing.
    fn taylor_exp(m: &Matrix, t: f64) -> Matrix {
        let a = m.scale(t);
        let mut term = Matrix::identity(m.rows());
        let mut sum = term.clone();
        for k in 1..400 {
            term = (&term * &a).scale(1.0 / k as f64);
            sum = &sum + &term;
            if term.inf_norm() < 1e-18 * sum.inf_norm() {
                break;
            }
        }
        sum
    }

    fn batch_reactor_a() -> Matrix {
        Matrix::from_rows(&[
            [1.38, -0.2077, 6.715, -5.676],
            [-0.5814, -4.29, 0.0, 0.675],
            [1.067, 4.273, -6.654, 5.893],
            [0.048, 4.273, -1.343, -2.104],
        ])
        .unwrap()
    }

    #[test]
    fn rejects_non_finite_entries() {
        assert!(matches!(
            Matrix::new(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            Matrix::new(2, 2, vec![1.0; 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn inf_norm_examples() {
        assert_eq!(Matrix::identity(3).inf_norm(), 1.0);
        let m = Matrix::from_rows(&[[1.0, -2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(m.inf_norm(), 7.0);
        let a = batch_reactor_a();
        let row_sum = |i: usize| a.row(i).iter().map(|v| v.abs()).sum::<f64>();
        assert!((row_sum(0) - 13.9787).abs() < 1e-12);
        assert!((a.inf_norm() - 17.887).abs() < 1e-12);
        assert_eq!(a.inf_norm(), row_sum(2));
    }

    #[test]
    fn exp_closed_forms() {
        let z = Matrix::zeros(3, 3);
        assert_eq!(z.exp(2.5).unwrap(), Matrix::identity(3));

        let nil = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        let e = nil.exp(1.0).unwrap();
        assert!(close(
            &e,
            &Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap(),
            1e-15
        ));

        let d = Matrix::diag(&[-1.3, 0.7]);
        let e = d.exp(2.0).unwrap();
        assert!(close(
            &e,
            &Matrix::diag(&[(-2.6f64).exp(), 1.4f64.exp()]),
            1e-14
        ));
    }

    #[test]
    fn exp_matches_taylor_on_batch_reactor() {
        let a = batch_reactor_a();
        let got = a.exp(0.1).unwrap();
        let want = taylor_exp(&a, 0.1);
        assert!(
            (&got - &want).inf_norm() <= 1e-10,
            "{:e}",
            (&got - &want).inf_norm()
        );
    }

    #[test]
    fn exp_rejects_huge_arguments() {
        let m = Matrix::diag(&[1000.0]);
        assert!(matches!(m.exp(1.0), Err(Error::Overflow(_))));
    }

    #[test]
    fn pow_basics() {
        let m = Matrix::from_rows(&[[0.3, -1.2], [2.0, 0.5]]).unwrap();
        assert_eq!(m.pow(0).unwrap(), Matrix::identity(2));
        let nil = Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]).unwrap();
        assert_eq!(nil.pow(2).unwrap(), Matrix::zeros(2, 2));

        let r =
            Matrix::from_rows(&[[0.2, -0.7, 1.1], [0.4, 0.9, -0.3], [-1.5, 0.05, 0.6]]).unwrap();
        let mut naive = Matrix::identity(3);
        for _ in 0..5 {
            naive = &naive * &r;
        }
        assert!(close(&r.pow(5).unwrap(), &naive, 1e-12));
    }

    #[test]
    fn gelfand_examples() {
        let d = Matrix::diag(&[0.5, 0.2]);
        let g = d.gelfand_radius(32).unwrap();
        assert!(g.value >= 0.5 && g.value <= 0.5 + 1e-9);

        let nil = Matrix::from_rows(&[[0.0, 3.0], [0.0, 0.0]]).unwrap();
        assert_eq!(nil.gelfand_radius(8).unwrap().value, 0.0);

        let t = Matrix::from_rows(&[[0.9, 10.0], [0.0, 0.9]]).unwrap();
        let g = t.gelfand_radius(64).unwrap();
        assert!(g.value >= 0.9 && g.value <= 1.0, "{}", g.value);
        assert!(g.is_conclusive());

        assert!(d.gelfand_radius(4).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(Matrix::identity(4).rank(RANK_TOL), 4);
        assert_eq!(Matrix::zeros(3, 2).rank(RANK_TOL), 0);
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert_eq!(m.rank(RANK_TOL), 1);
    }

    #[test]
    fn solve_examples() {
        let b = Matrix::from_rows(&[[1.0, -2.0], [3.5, 0.25]]).unwrap();
        assert_eq!(Matrix::identity(2).solve(&b).unwrap(), b);

        let a = Matrix::diag(&[2.0, 4.0]);
        let x = a.solve(&Matrix::column(&[2.0, 8.0])).unwrap();
        assert_eq!(x, Matrix::column(&[1.0, 2.0]));

        let a = Matrix::from_rows(&[
            [4.0, 1.0, -0.5, 0.2],
            [1.0, 5.0, 0.3, -1.0],
            [0.0, -0.7, 3.0, 0.9],
            [0.6, 0.2, -1.1, 6.0],
        ])
        .unwrap();
        let b = Matrix::column(&[1.0, -2.0, 0.5, 3.0]);
        let x = a.solve(&b).unwrap();
        assert!((&(&a * &x) - &b).inf_norm() <= 1e-9);
    }

    #[test]
    fn solve_reports_singular() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [2.0, 4.0]]).unwrap();
        assert!(matches!(
            a.solve(&Matrix::identity(2)),
            Err(Error::Singular(_))
        ));
    }
}
