//! Sparse symmetric solvers: a reordered sparse Cholesky for the mesh-sized
//! systems and Jacobi-preconditioned conjugate gradients for texture grids.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::{CooMatrix, CscMatrix};

use crate::error::{Error, Result};

/// Accumulates entries of a symmetric matrix. Only one triangle needs to be
/// supplied through [`SymmetricBuilder::add_sym`]; duplicates are summed.
#[derive(Debug, Clone)]
pub struct SymmetricBuilder {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymmetricBuilder {
    pub fn new(n: usize) -> Self {
        SymmetricBuilder {
            n,
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    pub fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        self.push(i, j, v);
        if i != j {
            self.push(j, i, v);
        }
    }

    fn push(&mut self, i: usize, j: usize, v: f64) {
        self.rows.push(i);
        self.cols.push(j);
        self.vals.push(v);
    }

    pub fn to_csc(&self) -> CscMatrix<f64> {
        let coo = CooMatrix::try_from_triplets(self.n, self.n, self.rows.clone(), self.cols.clone(), self.vals.clone())
            .expect("builder indices are in range");
        CscMatrix::from(&coo)
    }
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `m`.
/// Returns `perm` with `perm[new] = old`.
pub fn reverse_cuthill_mckee(m: &CscMatrix<f64>) -> Vec<usize> {
    let n = m.ncols();
    let (offsets, rows) = (m.col_offsets(), m.row_indices());
    let adj: Vec<&[usize]> = (0..n).map(|j| &rows[offsets[j]..offsets[j + 1]]).collect();
    let degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (degree[v], v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

fn permute_symmetric(m: &CscMatrix<f64>, perm: &[usize]) -> CscMatrix<f64> {
    let n = m.ncols();
    let mut inv = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }
    let mut coo = CooMatrix::new(n, n);
    for (i, j, &v) in m.triplet_iter() {
        coo.push(inv[i], inv[j], v);
    }
    CscMatrix::from(&coo)
}

/// Cholesky factorization of a sparse symmetric positive-definite matrix
/// under a bandwidth-reducing permutation.
pub struct SpdSolver {
    perm: Vec<usize>,
    chol: CscCholesky<f64>,
}

impl SpdSolver {
    pub fn new(matrix: &CscMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::Solve("matrix is not square".into()));
        }
        let perm = reverse_cuthill_mckee(matrix);
        let permuted = permute_symmetric(matrix, &perm);
        let chol = CscCholesky::factor(&permuted)
            .map_err(|e| Error::Solve(format!("Cholesky factorization failed: {e:?}")))?;
        Ok(SpdSolver { perm, chol })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A X = B` for every column of `b`.
    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.perm.len();
        let mut pb = DMatrix::zeros(n, b.ncols());
        for (new, &old) in self.perm.iter().enumerate() {
            pb.row_mut(new).copy_from(&b.row(old));
        }
        let px = self.chol.solve(&pb);
        let mut x = DMatrix::zeros(n, b.ncols());
        for (new, &old) in self.perm.iter().enumerate() {
            x.row_mut(old).copy_from(&px.row(new));
        }
        x
    }

    pub fn solve_vec(&self, b: &[f64]) -> Vec<f64> {
        let bm = DMatrix::from_column_slice(b.len(), 1, b);
        self.solve(&bm).as_slice().to_vec()
    }
}

/// Compressed-row matrix for matrix-vector products.
#[derive(Debug, Clone)]
pub struct CsrOperator {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrOperator {
    /// Builds from per-row `(col, value)` lists.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        offsets.push(0);
        for r in rows {
            for (c, v) in r {
                cols.push(c);
                vals.push(v);
            }
            offsets.push(cols.len());
        }
        CsrOperator { offsets, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[i]..self.offsets[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn mul_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(c, v)| v * x[c]).sum();
        }
    }

    fn diagonal(&self) -> Vec<f64> {
        (0..self.dim())
            .map(|i| self.row(i).filter(|&(c, _)| c == i).map(|(_, v)| v).sum())
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CgReport {
    pub iterations: usize,
    pub residual_norm: f64,
}

/// Jacobi-preconditioned conjugate gradients. Stops when
/// `||b - A x|| <= tol * max(||b||, 1)`.
pub fn conjugate_gradient(a: &CsrOperator, b: &[f64], x: &mut [f64], tol: f64, max_iter: usize) -> Result<CgReport> {
    let n = a.dim();
    let diag = a.diagonal();
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(Error::Solve("conjugate gradient needs a positive diagonal".into()));
    }
    let mut r = vec![0.0; n];
    a.mul_into(x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    let threshold = tol * dot(b, b).sqrt().max(1.0);
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut res = dot(&r, &r).sqrt();
    for it in 0..max_iter {
        if res <= threshold {
            return Ok(CgReport {
                iterations: it,
                residual_norm: res,
            });
        }
        a.mul_into(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(Error::Solve("matrix is not positive definite".into()));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        res = dot(&r, &r).sqrt();
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    if res <= threshold {
        Ok(CgReport {
            iterations: max_iter,
            residual_norm: res,
        })
    } else {
        Err(Error::Solve(format!(
            "conjugate gradient did not converge in {max_iter} iterations (residual {res:e})"
        )))
    }
}
