//! Small dense symmetric-matrix helpers for the species covariance.

use rayon::prelude::*;

/// Row-major square matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InversionFailure {
    Singular,
    IllConditioned(f64),
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let mut m = Self::zeros(n);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), n, "matrix must be square");
            m.data[i * n..(i + 1) * n].copy_from_slice(row);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.n)
            .map(|j| (0..self.n).map(|i| self.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let scale = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (0..self.n).all(|i| {
            (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= rel_tol * scale)
        })
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }

    /// Inverse together with its 1-norm condition number. Closed form for
    /// n <= 2, LU with partial pivoting otherwise.
    pub fn inverse(&self, max_condition: f64) -> Result<(SquareMatrix, f64), InversionFailure> {
        let inv = match self.n {
            0 => return Err(InversionFailure::Singular),
            1 => {
                let a = self.data[0];
                if a == 0.0 || !a.is_finite() {
                    return Err(InversionFailure::Singular);
                }
                SquareMatrix {
                    n: 1,
                    data: vec![1.0 / a],
                }
            }
            2 => {
                let (a, b, c, d) = (self.data[0], self.data[1], self.data[2], self.data[3]);
                let det = a * d - b * c;
                if det == 0.0 || !det.is_finite() {
                    return Err(InversionFailure::Singular);
                }
                SquareMatrix {
                    n: 2,
                    data: vec![d / det, -b / det, -c / det, a / det],
                }
            }
            _ => self.lu_inverse()?,
        };
        let cond = self.norm1() * inv.norm1();
        if !cond.is_finite() {
            return Err(InversionFailure::Singular);
        }
        if cond > max_condition {
            return Err(InversionFailure::IllConditioned(cond));
        }
        Ok((inv, cond))
    }

    fn lu_inverse(&self) -> Result<SquareMatrix, InversionFailure> {
        let n = self.n;
        let mut lu = self.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (pivot_row, pivot_abs) = (k..n)
                .map(|i| (i, lu[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot_abs == 0.0 || !pivot_abs.is_finite() {
                return Err(InversionFailure::Singular);
            }
            if pivot_row != k {
                for j in 0..n {
                    lu.swap(k * n + j, pivot_row * n + j);
                }
                perm.swap(k, pivot_row);
            }
            let pivot = lu[k * n + k];
            for i in (k + 1)..n {
                let factor = lu[i * n + k] / pivot;
                lu[i * n + k] = factor;
                for j in (k + 1)..n {
                    lu[i * n + j] -= factor * lu[k * n + j];
                }
            }
        }
        let mut inv = SquareMatrix::zeros(n);
        for col in 0..n {
            // solve L U x = P e_col
            let mut x: Vec<f64> = (0..n).map(|i| if perm[i] == col { 1.0 } else { 0.0 }).collect();
            for i in 0..n {
                for j in 0..i {
                    x[i] -= lu[i * n + j] * x[j];
                }
            }
            for i in (0..n).rev() {
                for j in (i + 1)..n {
                    x[i] -= lu[i * n + j] * x[j];
                }
                x[i] /= lu[i * n + i];
            }
            for (i, &v) in x.iter().enumerate() {
                inv.set(i, col, v);
            }
        }
        Ok(inv)
    }
}

/// Events per parallel chunk when accumulating per-event sums.
pub const REDUCTION_CHUNK: usize = 4096;

/// Sums a `width`-vector of per-event contributions over `0..n`.
///
/// Work is split into fixed-size chunks summed sequentially; the chunk
/// partials are combined by a pairwise tree in index order. The result is
/// bit-identical for any thread count.
pub fn chunked_sum<F>(n: usize, width: usize, contribute: F) -> Vec<f64>
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let n_chunks = n.div_ceil(REDUCTION_CHUNK);
    let partials: Vec<Vec<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            let end = ((c + 1) * REDUCTION_CHUNK).min(n);
            for e in c * REDUCTION_CHUNK..end {
                contribute(e, &mut acc);
            }
            acc
        })
        .collect();
    pairwise(partials, width)
}

fn pairwise(mut parts: Vec<Vec<f64>>, width: usize) -> Vec<f64> {
    if parts.is_empty() {
        return vec![0.0; width];
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Compensated (Neumaier) summation.
pub fn neumaier_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}
