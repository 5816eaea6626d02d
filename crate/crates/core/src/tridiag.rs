//! Complex tridiagonal factorization with partial pivoting, Sturm counts and
//! the tridiagonal eigensolver bridge.

use faer::linalg::evd::{self, ComputeEigenvectors, SelfAdjointEvdParams};
use faer::{Col, Mat, Par, Spec};
use num_complex::Complex64;

use crate::error::{Error, Result};

type C = Complex64;

/// Tridiagonal matrix by diagonals: `lower[i] = A[i+1][i]`, `upper[i] = A[i][i+1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tri {
    pub lower: Vec<C>,
    pub diag: Vec<C>,
    pub upper: Vec<C>,
}

impl Tri {
    pub fn n(&self) -> usize {
        self.diag.len()
    }

    pub fn adjoint(&self) -> Tri {
        Tri {
            lower: self.upper.iter().map(|v| v.conj()).collect(),
            diag: self.diag.iter().map(|v| v.conj()).collect(),
            upper: self.lower.iter().map(|v| v.conj()).collect(),
        }
    }

    pub fn apply(&self, x: &[C]) -> Vec<C> {
        let n = self.n();
        (0..n)
            .map(|i| {
                let mut s = self.diag[i] * x[i];
                if i > 0 {
                    s += self.lower[i - 1] * x[i - 1];
                }
                if i + 1 < n {
                    s += self.upper[i] * x[i + 1];
                }
                s
            })
            .collect()
    }

    pub fn to_dense(&self) -> Mat<C> {
        let n = self.n();
        Mat::from_fn(n, n, |i, j| {
            if i == j {
                self.diag[i]
            } else if i == j + 1 {
                self.lower[j]
            } else if j == i + 1 {
                self.upper[i]
            } else {
                C::new(0.0, 0.0)
            }
        })
    }

    pub fn factor(&self) -> Result<TriLu> {
        TriLu::new(self)
    }
}

/// LU with row interchanges (the gttrf scheme).
#[derive(Debug, Clone)]
pub struct TriLu {
    dl: Vec<C>,
    d: Vec<C>,
    du: Vec<C>,
    du2: Vec<C>,
    swap: Vec<bool>,
}

impl TriLu {
    pub fn new(a: &Tri) -> Result<Self> {
        let n = a.n();
        let mut dl = a.lower.clone();
        let mut d = a.diag.clone();
        let mut du = a.upper.clone();
        let mut du2 = vec![C::new(0.0, 0.0); n.saturating_sub(2)];
        let mut swap = vec![false; n];
        for i in 0..n.saturating_sub(1) {
            if d[i].norm() >= dl[i].norm() {
                if d[i].norm() == 0.0 {
                    return Err(Error::NearSingular(format!("zero pivot at row {i}")));
                }
                let f = dl[i] / d[i];
                dl[i] = f;
                d[i + 1] -= f * du[i];
            } else {
                let f = d[i] / dl[i];
                d[i] = dl[i];
                dl[i] = f;
                let tmp = du[i];
                du[i] = d[i + 1];
                d[i + 1] = tmp - f * d[i + 1];
                if i + 2 < n {
                    du2[i] = du[i + 1];
                    du[i + 1] = -f * du[i + 1];
                }
                swap[i] = true;
            }
        }
        if n > 0 && d[n - 1].norm() == 0.0 {
            return Err(Error::NearSingular("zero pivot in last row".into()));
        }
        Ok(TriLu { dl, d, du, du2, swap })
    }

    pub fn solve_in_place(&self, b: &mut [C]) {
        let n = self.d.len();
        for i in 0..n.saturating_sub(1) {
            if self.swap[i] {
                b.swap(i, i + 1);
            }
            let t = b[i];
            b[i + 1] -= self.dl[i] * t;
        }
        if n == 0 {
            return;
        }
        b[n - 1] /= self.d[n - 1];
        if n > 1 {
            b[n - 2] = (b[n - 2] - self.du[n - 2] * b[n - 1]) / self.d[n - 2];
        }
        for i in (0..n.saturating_sub(2)).rev() {
            b[i] = (b[i] - self.du[i] * b[i + 1] - self.du2[i] * b[i + 2]) / self.d[i];
        }
    }

    pub fn solve(&self, b: &[C]) -> Vec<C> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Dense inverse, column by column.
    pub fn inverse(&self) -> Mat<C> {
        let n = self.d.len();
        let mut m = Mat::zeros(n, n);
        let mut e = vec![C::new(0.0, 0.0); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = C::new(0.0, 0.0));
            e[j] = C::new(1.0, 0.0);
            self.solve_in_place(&mut e);
            for i in 0..n {
                m[(i, j)] = e[i];
            }
        }
        m
    }
}

/// Number of eigenvalues below `x` of the real symmetric tridiagonal (diag, |off|).
pub fn sturm_count(diag: &[f64], off_abs: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = 1.0;
    for i in 0..diag.len() {
        let o2 = if i == 0 { 0.0 } else { off_abs[i - 1] * off_abs[i - 1] };
        q = diag[i] - x - if i == 0 { 0.0 } else { o2 / q };
        if q == 0.0 {
            q = -f64::EPSILON * (diag[i].abs() + 1.0);
        }
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

/// Eigenpairs of a real symmetric tridiagonal matrix, eigenvalues ascending.
pub fn sym_tridiag_eig(diag: &[f64], off: &[f64]) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = diag.len();
    let d = Col::<f64>::from_fn(n, |i| diag[i]);
    let e = Col::<f64>::from_fn(n, |i| if i + 1 < n { off[i] } else { 0.0 });
    let mut s = Col::<f64>::zeros(n);
    let mut u = Mat::<f64>::zeros(n, n);
    let params: Spec<SelfAdjointEvdParams, f64> = Default::default();
    let req = evd::self_adjoint_evd_scratch::<f64>(n, ComputeEigenvectors::Yes, Par::Seq, params);
    let mut mem = faer::dyn_stack::MemBuffer::new(req);
    let stack = faer::dyn_stack::MemStack::new(&mut mem);
    evd::tridiagonal_self_adjoint_evd(
        d.as_diagonal(),
        e.as_diagonal(),
        s.as_diagonal_mut(),
        Some(u.as_mut()),
        Par::Seq,
        stack,
        params,
    )
    .map_err(|e| Error::Numerical(format!("tridiagonal eigensolver: {e:?}")))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[a].total_cmp(&s[b]));
    if order.iter().enumerate().all(|(i, &j)| i == j) {
        return Ok(((0..n).map(|i| s[i]).collect(), u));
    }
    let vals = order.iter().map(|&j| s[j]).collect();
    let vecs = Mat::from_fn(n, n, |i, k| u[(i, order[k])]);
    Ok((vals, vecs))
}
