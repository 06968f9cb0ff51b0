//! Compressed sparse row matrices used for Laplacians and level transfers.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from COO triplets. Duplicate entries are summed; column order
    /// within a row is ascending.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Result<Self> {
        let mut per_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); rows];
        for (r, c, v) in triplets {
            if r >= rows || c >= cols {
                return Err(Error::Shape(format!("entry ({r}, {c}) outside {rows}x{cols} matrix")));
            }
            per_row[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(rows + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for mut row in per_row {
            row.sort_by_key(|&(c, _)| c);
            for (c, v) in row {
                if indices.len() > *indptr.last().unwrap() && *indices.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    values.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows,
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: n,
            cols: n,
            indptr: (0..=n).collect(),
            indices: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.rows).flat_map(move |r| self.row(r).map(move |(c, v)| (r, c, v)))
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.row(r).find(|&(cc, _)| cc == c).map_or(0.0, |(_, v)| v)
    }

    pub fn row_sum(&self, r: usize) -> f64 {
        self.row(r).map(|(_, v)| v).sum()
    }

    /// `y = A x` where `x` is row-major `cols × width` and `y` is `rows × width`.
    pub fn mul_dense(&self, x: &[f64], width: usize) -> Result<Vec<f64>> {
        if x.len() != self.cols * width {
            return Err(Error::Shape(format!(
                "dense operand has {} entries, expected {}x{}",
                x.len(),
                self.cols,
                width
            )));
        }
        let mut y = vec![0.0; self.rows * width];
        for r in 0..self.rows {
            let out = &mut y[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let src = &x[c * width..(c + 1) * width];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(y)
    }

    /// `x = Aᵀ y`, the adjoint of [`mul_dense`](Self::mul_dense).
    pub fn mul_dense_transpose(&self, y: &[f64], width: usize) -> Result<Vec<f64>> {
        if y.len() != self.rows * width {
            return Err(Error::Shape(format!(
                "dense operand has {} entries, expected {}x{}",
                y.len(),
                self.rows,
                width
            )));
        }
        let mut x = vec![0.0; self.cols * width];
        for r in 0..self.rows {
            let src = &y[r * width..(r + 1) * width];
            for (c, v) in self.row(r) {
                let out = &mut x[c * width..(c + 1) * width];
                for (o, s) in out.iter_mut().zip(src) {
                    *o += v * s;
                }
            }
        }
        Ok(x)
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(self.cols, self.rows, self.triplets().map(|(r, c, v)| (c, r, v)))
            .expect("transpose indices are in range")
    }

    /// Keeps only the listed columns, renumbered in the given order.
    pub fn select_columns(&self, columns: &[usize]) -> Self {
        let mut remap = vec![usize::MAX; self.cols];
        for (new, &old) in columns.iter().enumerate() {
            remap[old] = new;
        }
        Self::from_triplets(
            self.rows,
            columns.len(),
            self.triplets()
                .filter(|&(_, c, _)| remap[c] != usize::MAX)
                .map(|(r, c, v)| (r, remap[c], v)),
        )
        .expect("selected indices are in range")
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.rows * self.cols];
        for (r, c, v) in self.triplets() {
            d[r * self.cols + c] = v;
        }
        d
    }
}

/// Solves `(AᵀA) x = Aᵀ b` by conjugate gradients on the normal equations.
/// `b` has `A.rows()` entries. Returns the solution and the iteration count.
pub fn least_squares_cg(a: &CsrMatrix, b: &[f64], x0: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, usize)> {
    let at = a.transpose();
    let normal = |v: &[f64]| -> Vec<f64> {
        let av = a.mul_dense(v, 1).expect("shape checked");
        at.mul_dense(&av, 1).expect("shape checked")
    };
    let rhs = at.mul_dense(b, 1)?;
    if x0.len() != a.cols() {
        return Err(Error::Shape("initial guess length".into()));
    }
    let mut x = x0.to_vec();
    let ax = normal(&x);
    let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let stop = tol * tol * dot(&rhs, &rhs).max(f64::MIN_POSITIVE);
    let mut iters = 0;
    while iters < max_iter && rs > stop {
        let ap = normal(&p);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Degenerate("singular least-squares system".into()));
        }
        let alpha = rs / pap;
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for i in 0..p.len() {
            p[i] = r[i] + beta * p[i];
        }
        rs = rs_new;
        iters += 1;
    }
    Ok((x, iters))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicates_are_summed() {
        let m = CsrMatrix::from_triplets(2, 2, [(0, 1, 1.0), (0, 1, 2.0), (1, 0, 4.0)]).unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn transpose_product_is_adjoint() {
        let m = CsrMatrix::from_triplets(2, 3, [(0, 0, 1.0), (0, 2, 2.0), (1, 1, -1.0)]).unwrap();
        let x = [1.0, 2.0, 3.0];
        let y = [0.5, -2.0];
        let ax = m.mul_dense(&x, 1).unwrap();
        let aty = m.mul_dense_transpose(&y, 1).unwrap();
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = aty.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn cg_solves_overdetermined_system() {
        // [1 0; 0 1; 1 1] x = [1, 2, 3] has the exact solution (1, 2).
        let a = CsrMatrix::from_triplets(3, 2, [(0, 0, 1.0), (1, 1, 1.0), (2, 0, 1.0), (2, 1, 1.0)]).unwrap();
        let (x, _) = least_squares_cg(&a, &[1.0, 2.0, 3.0], &[0.0, 0.0], 1e-12, 100).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn out_of_range_entry_is_rejected() {
        assert!(CsrMatrix::from_triplets(1, 1, [(0, 1, 1.0)]).is_err());
    }
}
