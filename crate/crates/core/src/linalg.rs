//! Dense linear algebra at desk scale (dimensions ≤ ~16): LU solve,
//! determinant, and rank by pivoted elimination with a relative threshold.

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map(|x| x.len()).unwrap_or(0);
        let mut m = Mat::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, v) in row.iter().enumerate() {
                m.set(i, j, *v);
            }
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Determinant via LU with partial pivoting. Square only.
    pub fn det(&self) -> f64 {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut a = self.clone();
        let mut det = 1.0;
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if a.get(i, k).abs() > a.get(p, k).abs() {
                    p = i;
                }
            }
            if a.get(p, k) == 0.0 {
                return 0.0;
            }
            if p != k {
                for j in 0..n {
                    let tmp = a.get(k, j);
                    a.set(k, j, a.get(p, j));
                    a.set(p, j, tmp);
                }
                det = -det;
            }
            det *= a.get(k, k);
            for i in k + 1..n {
                let f = a.get(i, k) / a.get(k, k);
                for j in k..n {
                    a.set(i, j, a.get(i, j) - f * a.get(k, j));
                }
            }
        }
        det
    }

    /// Solve `A x = b` by LU with partial pivoting. Returns an error naming
    /// the near-zero pivot when the system is singular to working precision.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(self.rows, self.cols);
        assert_eq!(b.len(), self.rows);
        let n = self.rows;
        let mut a = self.clone();
        let mut x = b.to_vec();
        let scale = self.max_abs().max(1.0);
        for k in 0..n {
            let mut p = k;
            for i in k + 1..n {
                if a.get(i, k).abs() > a.get(p, k).abs() {
                    p = i;
                }
            }
            if a.get(p, k).abs() < 1e-14 * scale {
                return Err(Error::SingularSystem(format!(
                    "pivot {:.3e} at column {k} (scale {scale:.3e})",
                    a.get(p, k)
                )));
            }
            if p != k {
                for j in 0..n {
                    let tmp = a.get(k, j);
                    a.set(k, j, a.get(p, j));
                    a.set(p, j, tmp);
                }
                x.swap(k, p);
            }
            for i in k + 1..n {
                let f = a.get(i, k) / a.get(k, k);
                for j in k..n {
                    a.set(i, j, a.get(i, j) - f * a.get(k, j));
                }
                x[i] -= f * x[k];
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= a.get(i, j) * x[j];
            }
            x[i] = s / a.get(i, i);
        }
        Ok(x)
    }

    pub fn inverse(&self) -> Result<Mat> {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        let mut inv = Mat::zeros(n, n);
        for j in 0..n {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            let col = self.solve(&e)?;
            for i in 0..n {
                inv.set(i, j, col[i]);
            }
        }
        Ok(inv)
    }

    /// Numerical rank by pivoted Gaussian elimination. A pivot counts while
    /// its magnitude exceeds `1e-10 ×` the largest absolute entry of the
    /// original matrix (taken as 1 for the zero matrix).
    pub fn rank(&self) -> usize {
        let threshold = 1e-10 * self.max_abs().max(f64::MIN_POSITIVE);
        let mut a = self.clone();
        let (r, c) = (a.rows, a.cols);
        let mut rank = 0;
        let mut row = 0;
        for col in 0..c {
            let mut p = row;
            for i in row..r {
                if a.get(i, col).abs() > a.get(p, col).abs() {
                    p = i;
                }
            }
            if p >= r || a.get(p, col).abs() <= threshold {
                continue;
            }
            if p != row {
                for j in 0..c {
                    let tmp = a.get(row, j);
                    a.set(row, j, a.get(p, j));
                    a.set(p, j, tmp);
                }
            }
            for i in row + 1..r {
                let f = a.get(i, col) / a.get(row, col);
                for j in col..c {
                    a.set(i, j, a.get(i, j) - f * a.get(row, j));
                }
            }
            rank += 1;
            row += 1;
            if row == r {
                break;
            }
        }
        rank
    }
}
