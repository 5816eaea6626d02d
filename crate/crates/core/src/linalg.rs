//! Operator-norm estimation and small dense helpers.

use faer::linalg::solvers::DenseSolveCore;
use faer::Mat;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

type C = Complex64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormOpts {
    pub tol: f64,
    pub max_iter: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for NormOpts {
    fn default() -> Self {
        NormOpts { tol: 1e-8, max_iter: 500, restarts: 2, seed: 7 }
    }
}

/// Norm estimate; `ln_value` stays finite when the value itself would overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormEstimate {
    pub ln_value: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl NormEstimate {
    pub fn value(&self) -> f64 {
        self.ln_value.exp()
    }
}

pub fn vnorm(x: &[C]) -> f64 {
    let m = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * x.iter().map(|v| (v / m).norm_sqr()).sum::<f64>().sqrt()
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<C> {
    let mut x: Vec<C> = (0..n).map(|_| C::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5)).collect();
    let s = vnorm(&x);
    x.iter_mut().for_each(|v| *v /= s);
    x
}

/// Largest singular value of A by power iteration on A*A, given A and A*.
pub fn power_norm<F, G>(n: usize, apply: F, adjoint: G, opts: NormOpts) -> Result<NormEstimate>
where
    F: Fn(&[C]) -> Vec<C>,
    G: Fn(&[C]) -> Vec<C>,
{
    if n == 0 {
        return Err(Error::Invalid("empty operator".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<NormEstimate> = None;
    for _ in 0..=opts.restarts {
        let mut x = random_unit(n, &mut rng);
        let mut prev = f64::NEG_INFINITY;
        let mut est = NormEstimate { ln_value: f64::NEG_INFINITY, iterations: 0, converged: false };
        for it in 1..=opts.max_iter {
            let y = apply(&x);
            let ny = vnorm(&y);
            if ny == 0.0 {
                est = NormEstimate { ln_value: f64::NEG_INFINITY, iterations: it, converged: true };
                break;
            }
            if !ny.is_finite() {
                return Err(Error::Numerical("operator application overflowed".into()));
            }
            let y: Vec<C> = y.iter().map(|v| v / ny).collect();
            let mut z = adjoint(&y);
            let nz = vnorm(&z);
            z.iter_mut().for_each(|v| *v /= nz);
            x = z;
            est.ln_value = ny.ln();
            est.iterations = it;
            if (est.ln_value - prev).abs() < opts.tol {
                est.converged = true;
                break;
            }
            prev = est.ln_value;
        }
        let better = best.is_none_or(|b| est.ln_value > b.ln_value);
        if better {
            best = Some(est);
        }
        if est.converged {
            break;
        }
    }
    Ok(best.unwrap())
}

/// Spectral norm of a dense matrix.
pub fn dense_norm(m: &Mat<C>) -> Result<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(0.0);
    }
    let sv = m.singular_values().map_err(|e| Error::Numerical(format!("svd: {e:?}")))?;
    Ok(sv.iter().cloned().fold(0.0, f64::max))
}

pub fn dense_inverse(m: &Mat<C>) -> Result<Mat<C>> {
    let n = m.nrows();
    let lu = m.partial_piv_lu();
    let inv = lu.inverse();
    if (0..n).any(|i| (0..n).any(|j| !inv[(i, j)].re.is_finite() || !inv[(i, j)].im.is_finite())) {
        return Err(Error::NearSingular("dense inverse is not finite".into()));
    }
    Ok(inv)
}

pub fn diag_mat(d: &[C]) -> Mat<C> {
    Mat::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { C::new(0.0, 0.0) })
}

/// diag(l) · m · diag(r)
pub fn scale_rows_cols(l: &[f64], m: &Mat<C>, r: &[f64]) -> Mat<C> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * (l[i] * r[j]))
}
