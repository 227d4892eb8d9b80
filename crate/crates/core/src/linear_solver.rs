//! Sparse matrices and solvers for the assembled systems.
//!
//! The default path is a sparse LU factorization with partial pivoting
//! (backed by `faer`, run sequentially so that results are bit-reproducible).
//! An ILU(0)-preconditioned BiCGSTAB is available for large systems where a
//! direct factorization does not fit in memory.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};

/// Compressed sparse row matrix with a fixed pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl CsrMatrix {
    /// Builds a zero matrix on the pattern given by `(row, col)` pairs.
    pub fn from_pattern(n: usize, mut entries: Vec<(usize, usize)>) -> Self {
        entries.sort_unstable();
        entries.dedup();
        let mut row_ptr = vec![0usize; n + 1];
        for &(r, _) in &entries {
            row_ptr[r + 1] += 1;
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        let cols = entries.iter().map(|&(_, c)| c).collect::<Vec<_>>();
        let nnz = cols.len();
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals: vec![0.0; nnz],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::from_pattern(n, (0..n).map(|i| (i, i)).collect());
        m.vals.iter_mut().for_each(|v| *v = 1.0);
        m
    }

    pub fn from_dense(a: &[Vec<f64>]) -> Self {
        let n = a.len();
        let mut pat = Vec::new();
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 || i == j {
                    pat.push((i, j));
                }
            }
        }
        let mut m = Self::from_pattern(n, pat);
        for (i, row) in a.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 {
                    m.add(i, j, v);
                }
            }
        }
        m
    }

    pub fn zeros_like(&self) -> Self {
        CsrMatrix {
            vals: vec![0.0; self.vals.len()],
            ..self.clone()
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.vals
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &self.vals[r])
    }

    fn find(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].binary_search(&j).ok().map(|p| r.start + p)
    }

    /// Adds `v` to entry `(i, j)`, which must be in the pattern.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .find(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) not in sparsity pattern"));
        self.vals[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.find(i, j).map_or(0.0, |p| self.vals[p])
    }

    /// Scatters a dense local matrix `local[a][b]` into rows `dofs[a]`,
    /// columns `dofs[b]`.
    pub fn add_local(&mut self, dofs: &[usize], local: &[f64]) {
        let n = dofs.len();
        for a in 0..n {
            for b in 0..n {
                let v = local[a * n + b];
                if v != 0.0 {
                    self.add(dofs[a], dofs[b], v);
                }
            }
        }
    }

    /// `self += s · other` for matrices on the same pattern.
    pub fn axpy(&mut self, s: f64, other: &CsrMatrix) {
        assert!(self.row_ptr == other.row_ptr && self.cols == other.cols, "pattern mismatch");
        for (a, b) in self.vals.iter_mut().zip(&other.vals) {
            *a += s * b;
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &a)| a * x[j]).sum()
            })
            .collect()
    }

    pub fn dot_form(&self, x: &[f64], y: &[f64]) -> f64 {
        x.iter().zip(self.matvec(y)).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                row[j] = a;
            }
        }
        d
    }

    pub(crate) fn row_mut(&mut self, i: usize) -> (&[usize], &mut [f64]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.cols[r.clone()], &mut self.vals[r])
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let mut t = Vec::with_capacity(self.nnz());
        for i in 0..self.n {
            let (c, v) = self.row(i);
            for (&j, &a) in c.iter().zip(v) {
                t.push(Triplet::new(i, j, a));
            }
        }
        SparseColMat::try_new_from_triplets(self.n, self.n, &t).map_err(|e| Error::Solver {
            msg: format!("cannot build sparse matrix: {e:?}"),
            residual: f64::NAN,
        })
    }
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// `‖b − Ax‖ / ‖b‖`, or the absolute residual when `b = 0`.
pub fn relative_residual(a: &CsrMatrix, x: &[f64], b: &[f64]) -> f64 {
    let ax = a.matvec(x);
    let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
    let nb = norm2(b);
    if nb == 0.0 {
        norm2(&r)
    } else {
        norm2(&r) / nb
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum SolverMode {
    #[default]
    Direct,
    Iterative { tol: f64, max_iter: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverReport {
    pub relative_residual: f64,
    pub unknowns: usize,
    pub nnz: usize,
    /// Krylov iterations; zero for the direct path.
    pub iterations: usize,
}

/// Residual above which a direct solve is reported as numerically singular.
const SINGULAR_RESIDUAL: f64 = 1e-6;

/// A factorized matrix that can be applied to several right-hand sides.
pub struct Factorization {
    matrix: CsrMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

impl Factorization {
    pub fn new(matrix: &CsrMatrix) -> Result<Self> {
        let a = matrix.to_faer()?;
        let lu = a.sp_lu().map_err(|e| Error::Solver {
            msg: format!("LU factorization failed: {e:?}"),
            residual: f64::NAN,
        })?;
        Ok(Factorization {
            matrix: matrix.clone(),
            lu,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        let n = self.matrix.n();
        let rhs = Mat::<f64>::from_fn(n, 1, |i, _| b[i]);
        let sol = self.lu.solve(&rhs);
        let x: Vec<f64> = (0..n).map(|i| sol[(i, 0)]).collect();
        let res = relative_residual(&self.matrix, &x, b);
        if !res.is_finite() || x.iter().any(|v| !v.is_finite()) || res > SINGULAR_RESIDUAL {
            return Err(Error::Solver {
                msg: "matrix is numerically singular".into(),
                residual: res,
            });
        }
        Ok((
            x,
            SolverReport {
                relative_residual: res,
                unknowns: n,
                nnz: self.matrix.nnz(),
                iterations: 0,
            },
        ))
    }
}

pub fn solve(matrix: &CsrMatrix, b: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
    solve_with(matrix, b, SolverMode::Direct)
}

pub fn solve_with(matrix: &CsrMatrix, b: &[f64], mode: SolverMode) -> Result<(Vec<f64>, SolverReport)> {
    assert_eq!(matrix.n(), b.len(), "rhs length must equal matrix size");
    match mode {
        SolverMode::Direct => Factorization::new(matrix)?.solve(b),
        SolverMode::Iterative { tol, max_iter } => bicgstab_ilu0(matrix, b, tol, max_iter),
    }
}

/// ILU(0) factors stored on the pattern of `a`.
struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = a.n();
        let diag: Vec<usize> = (0..n)
            .map(|i| {
                lu.find(i, i).ok_or_else(|| Error::Solver {
                    msg: format!("structurally zero diagonal at row {i}"),
                    residual: f64::NAN,
                })
            })
            .collect::<Result<_>>()?;
        for i in 1..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for p in start..end {
                let k = lu.cols[p];
                if k >= i {
                    break;
                }
                let pivot = lu.vals[diag[k]];
                if pivot == 0.0 {
                    return Err(Error::Solver {
                        msg: format!("zero pivot in ILU(0) at row {k}"),
                        residual: f64::NAN,
                    });
                }
                let lik = lu.vals[p] / pivot;
                lu.vals[p] = lik;
                for q in p + 1..end {
                    let j = lu.cols[q];
                    if let Some(kj) = lu.find(k, j) {
                        lu.vals[q] -= lik * lu.vals[kj];
                    }
                }
            }
        }
        Ok(Ilu0 { lu, diag })
    }

    fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = r.len();
        let mut y = r.to_vec();
        for i in 0..n {
            let (c, v) = self.lu.row(i);
            for (&j, &a) in c.iter().zip(v) {
                if j >= i {
                    break;
                }
                y[i] -= a * y[j];
            }
        }
        for i in (0..n).rev() {
            let (c, v) = self.lu.row(i);
            for (&j, &a) in c.iter().zip(v) {
                if j > i {
                    y[i] -= a * y[j];
                }
            }
            y[i] /= self.lu.vals[self.diag[i]];
        }
        y
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn bicgstab_ilu0(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> Result<(Vec<f64>, SolverReport)> {
    let n = a.n();
    let pre = Ilu0::new(a)?;
    let nb = norm2(b).max(f64::MIN_POSITIVE);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let r0 = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let report = |x: &[f64], it: usize| SolverReport {
        relative_residual: relative_residual(a, x, b),
        unknowns: n,
        nnz: a.nnz(),
        iterations: it,
    };
    if norm2(b) == 0.0 {
        return Ok((x.clone(), report(&x, 0)));
    }
    for it in 1..=max_iter {
        let rho_new = dot(&r0, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let ph = pre.apply(&p);
        v = a.matvec(&ph);
        alpha = rho / dot(&r0, &v);
        let s: Vec<f64> = (0..n).map(|i| r[i] - alpha * v[i]).collect();
        if norm2(&s) / nb <= tol {
            for i in 0..n {
                x[i] += alpha * ph[i];
            }
            return Ok((x.clone(), report(&x, it)));
        }
        let sh = pre.apply(&s);
        let t = a.matvec(&sh);
        omega = dot(&t, &s) / dot(&t, &t);
        for i in 0..n {
            x[i] += alpha * ph[i] + omega * sh[i];
            r[i] = s[i] - omega * t[i];
        }
        if norm2(&r) / nb <= tol {
            return Ok((x.clone(), report(&x, it)));
        }
        if omega == 0.0 || !omega.is_finite() {
            break;
        }
    }
    let rep = report(&x, max_iter);
    Err(Error::Solver {
        msg: format!("BiCGSTAB did not converge in {max_iter} iterations"),
        residual: rep.relative_residual,
    })
}
