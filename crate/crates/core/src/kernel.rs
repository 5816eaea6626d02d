//! Free resolvent kernels in odd dimension, the even-dimension cosine
//! propagator profile, and band-limited Huygens checks.

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::special::binomial;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// p_d(z) with z^{(d-2)/2} H^-_{(d-2)/2}(z) = p_d(z) e^{-iz}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HankelHalfPoly {
    pub d: usize,
    /// ascending powers of z
    pub coeffs: Vec<Complex64>,
}

impl HankelHalfPoly {
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn eval(&self, z: Complex64) -> Complex64 {
        self.coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
    }

    /// ν-th derivative coefficients.
    pub fn derivative(&self, nu: usize) -> Vec<Complex64> {
        let mut c = self.coeffs.clone();
        for _ in 0..nu {
            if c.len() <= 1 {
                return vec![Complex64::new(0.0, 0.0)];
            }
            c = c.iter().enumerate().skip(1).map(|(j, a)| a * j as f64).collect();
        }
        c
    }
}

fn poly_eval(c: &[Complex64], z: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, a| acc * z + a)
}

/// Coefficients of q_n(z) = z^{n+1} h_n^{(2)}(z) e^{iz} via
/// q_{n+1} = (2n+1) q_n - z² q_{n-1}, q_0 = i, q_1 = i - z; p_d = sqrt(2/π) q_{(d-3)/2}.
pub fn hankel_half_poly(d: usize) -> Result<HankelHalfPoly> {
    if d < 3 || d.is_multiple_of(2) {
        return Err(Error::Dimension(d as i64));
    }
    let n = (d - 3) / 2;
    let mut prev = vec![I];
    let mut cur = vec![I, Complex64::new(-1.0, 0.0)];
    if n == 0 {
        cur = prev.clone();
    }
    for m in 1..n {
        let mut next = vec![Complex64::new(0.0, 0.0); m + 2];
        for (j, c) in cur.iter().enumerate() {
            next[j] += c * (2 * m + 1) as f64;
        }
        for (j, c) in prev.iter().enumerate() {
            next[j + 2] -= c;
        }
        prev = cur;
        cur = next;
    }
    let norm = (2.0 / PI).sqrt();
    Ok(HankelHalfPoly { d, coeffs: cur.into_iter().map(|c| c * norm).collect() })
}

fn check_lambda(lambda: Complex64) -> Result<()> {
    if lambda.im > 0.0 {
        return Err(Error::Domain(format!("kernel needs Im λ <= 0, got {lambda}")));
    }
    Ok(())
}

/// K₀(r; λ) = (i/4)(2π)^{-(d-2)/2} r^{-(d-2)} p_d(λr) e^{-iλr}.
pub fn free_kernel_odd(d: usize, lambda: Complex64, r: f64) -> Result<Complex64> {
    free_kernel_odd_deriv(d, lambda, r, 0)
}

/// ∂_λ^k K₀ = c r^{k-(d-2)} e^{-iz} Σ_ν C(k,ν) p^{(ν)}(z) (-i)^{k-ν}, z = λr.
pub fn free_kernel_odd_deriv(d: usize, lambda: Complex64, r: f64, k: usize) -> Result<Complex64> {
    check_lambda(lambda)?;
    if !(r > 0.0) {
        return Err(Error::Singular(format!("kernel evaluated at r = {r}")));
    }
    let p = hankel_half_poly(d)?;
    Ok(kernel_deriv_with(&p, lambda, r, k))
}

fn kernel_deriv_with(p: &HankelHalfPoly, lambda: Complex64, r: f64, k: usize) -> Complex64 {
    let d = p.d as f64;
    let pref = I * 0.25 * (2.0 * PI).powf(-(d - 2.0) / 2.0) * r.powf(k as f64 - (d - 2.0));
    let z = lambda * r;
    let mut acc = Complex64::new(0.0, 0.0);
    for nu in 0..=k.min(p.degree()) {
        acc += poly_eval(&p.derivative(nu), z) * (-I).powu((k - nu) as u32) * binomial(k, nu);
    }
    pref * (-I * z).exp() * acc
}

/// (r, K₀) samples for plotting.
pub fn kernel_profile(d: usize, lambda: Complex64, rs: &[f64]) -> Result<Vec<(f64, Complex64)>> {
    rs.iter().map(|&r| Ok((r, free_kernel_odd(d, lambda, r)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelBoundReport {
    pub d: usize,
    /// minimal constant per order k
    pub constants: Vec<f64>,
    pub constant: f64,
    pub ok: bool,
}

/// Minimal constants with |∂_λ^k K₀| <= C (r^{k-(d-1)/2} + (k+1)^{(d-3)/2} r^{k-d+2})
/// over the grids. `ok` when all are finite and within a factor 4 of each other.
pub fn kernel_deriv_bound_check(d: usize, k_max: usize, lambdas: &[f64], rs: &[f64]) -> Result<KernelBoundReport> {
    if k_max > 12 {
        return Err(Error::Range(format!("k_max = {k_max} > 12")));
    }
    if rs.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::Singular("radial grid touches r = 0".into()));
    }
    if lambdas.iter().any(|l| l.abs() > 1.0) {
        return Err(Error::Domain("bound applies for |λ| <= 1".into()));
    }
    let p = hankel_half_poly(d)?;
    let df = d as f64;
    let mut constants = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        let kf = k as f64;
        let mut c: f64 = 0.0;
        for &l in lambdas {
            for &r in rs {
                let v = kernel_deriv_with(&p, Complex64::new(l, 0.0), r, k).norm();
                let bound = r.powf(kf - (df - 1.0) / 2.0) + (kf + 1.0).powf((df - 3.0) / 2.0) * r.powf(kf - df + 2.0);
                c = c.max(v / bound);
            }
        }
        constants.push(c);
    }
    let max = constants.iter().cloned().fold(0.0, f64::max);
    let min = constants.iter().cloned().fold(f64::INFINITY, f64::min);
    let ok = max.is_finite() && min > 0.0 && max / min <= 4.0;
    Ok(KernelBoundReport { d, constants, constant: max, ok })
}

fn check_even(d: usize) -> Result<()> {
    if d == 0 || d % 2 == 1 {
        return Err(Error::Dimension(d as i64));
    }
    Ok(())
}

/// W(z) = Im(i^{d+1} (1 - z²)^{-(d+1)/2}) for 0 <= z < 1.
pub fn cosine_profile_w(d: usize, z: f64) -> Result<f64> {
    check_even(d)?;
    if !(z.abs() < 1.0) {
        return Err(Error::Domain(format!("profile needs |z| < 1, got {z}")));
    }
    let base = (1.0 - z * z).powf(-((d + 1) as f64) / 2.0);
    Ok((I.powu(d as u32 + 1) * base).im)
}

/// t^{-d} Im(i^{d+1}(1-(r/t)²)^{-(d+1)/2}), without the C_d factor.
pub fn cosine_kernel_even(d: usize, t: f64, r: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    if r.abs() >= t {
        return Err(Error::Domain(format!("r = {r} outside the light cone t = {t}")));
    }
    Ok(t.powi(-(d as i32)) * cosine_profile_w(d, r / t)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CosineKernelProfile {
    pub d: usize,
    pub c_d: f64,
    pub residual: f64,
    pub grid_size: usize,
    /// (z, W(z)) samples on [0, 1)
    pub samples: Vec<(f64, f64)>,
}

impl CosineKernelProfile {
    /// Max relative deviation of a Chebyshev interpolant (n nodes on [0, 0.9])
    /// from W at off-node points.
    pub fn analytic_fit_residual(&self, nodes: usize) -> Result<f64> {
        let a = 0.0;
        let b = 0.9;
        let xs: Vec<f64> = (0..nodes)
            .map(|j| 0.5 * (a + b) + 0.5 * (b - a) * (PI * (j as f64 + 0.5) / nodes as f64).cos())
            .collect();
        let ys: Vec<f64> = xs.iter().map(|&x| cosine_profile_w(self.d, x)).collect::<Result<_>>()?;
        let coef: Vec<f64> = (0..nodes)
            .map(|m| {
                let s: f64 = (0..nodes)
                    .map(|j| ys[j] * (PI * m as f64 * (j as f64 + 0.5) / nodes as f64).cos())
                    .sum();
                s * 2.0 / nodes as f64
            })
            .collect();
        let mut worst: f64 = 0.0;
        for i in 0..=400 {
            let x = a + (b - a) * i as f64 / 400.0;
            let t = (2.0 * x - a - b) / (b - a);
            let (mut b1, mut b2) = (0.0, 0.0);
            for c in coef.iter().skip(1).rev() {
                let tmp = 2.0 * t * b1 - b2 + c;
                b2 = b1;
                b1 = tmp;
            }
            let v = t * b1 - b2 + 0.5 * coef[0];
            let w = cosine_profile_w(self.d, x)?;
            worst = worst.max(((v - w) / w).abs());
        }
        Ok(worst)
    }
}

fn spectral_filter(k: f64, kmax: f64) -> f64 {
    (-36.0 * (k / kmax).powi(8)).exp()
}

struct Grid2 {
    n: usize,
    h: f64,
    kernel: Vec<f64>,
}

/// Kernel row of the band-limited cos(t|ξ|) on an n×n periodic box of side
/// 2πn/64, centered at the middle node.
fn cos_kernel_2d(n: usize, t: f64) -> Grid2 {
    let l = 2.0 * PI * n as f64 / 64.0;
    let h = l / n as f64;
    let kmax = PI / h;
    let freq = |j: usize| {
        let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
        2.0 * PI * m / l
    };
    let mut buf: Vec<Complex64> = vec![Complex64::new(0.0, 0.0); n * n];
    let c = n / 2;
    for a in 0..n {
        for b in 0..n {
            let k = (freq(a).powi(2) + freq(b).powi(2)).sqrt();
            // shift the delta to the center node
            let phase = 2.0 * PI * ((a * c + b * c) % n) as f64 / n as f64;
            buf[a * n + b] = Complex64::from_polar((t * k).cos() * spectral_filter(k, kmax), phase);
        }
    }
    fft2(&mut buf, n, true);
    let scale = 1.0 / (n * n) as f64 / (h * h);
    Grid2 { n, h, kernel: buf.iter().map(|v| v.re * scale).collect() }
}

fn fft2(buf: &mut [Complex64], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) };
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..n {
        for i in 0..n {
            col[i] = buf[i * n + j];
        }
        fft.process(&mut col);
        for i in 0..n {
            buf[i * n + j] = col[i];
        }
    }
}

/// Least-squares C_d of the periodic FFT propagator against the profile on
/// r/t <= `zmax`; returns (C_d, relative residual).
pub fn calibrate_cd_window(d: usize, grid_size: usize, zmax: f64) -> Result<(f64, f64)> {
    check_even(d)?;
    if d != 2 {
        return Err(Error::Dimension(d as i64));
    }
    if grid_size < 128 {
        return Err(Error::Resolution(format!("grid_size {grid_size} < 128")));
    }
    let l = 2.0 * PI * grid_size as f64 / 64.0;
    let t = 0.2 * l;
    let g = cos_kernel_2d(grid_size, t);
    let c = g.n / 2;
    let (mut num, mut den) = (0.0, 0.0);
    let mut pairs = Vec::new();
    for a in 0..g.n {
        for b in 0..g.n {
            let x = (a as f64 - c as f64) * g.h;
            let y = (b as f64 - c as f64) * g.h;
            let r = (x * x + y * y).sqrt();
            if r / t <= zmax {
                let w = cosine_kernel_even(d, t, r)?;
                let k = g.kernel[a * g.n + b];
                num += k * w;
                den += w * w;
                pairs.push((k, w));
            }
        }
    }
    let cd = num / den;
    let err: f64 = pairs.iter().map(|(k, w)| (k - cd * w).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = pairs.iter().map(|(k, _)| k * k).sum::<f64>().sqrt();
    Ok((cd, err / norm))
}

/// Fitted C_d and the profile W; fails when the residual exceeds 5e-2.
pub fn calibrate_cd(d: usize, grid_size: usize) -> Result<CosineKernelProfile> {
    let (c_d, residual) = calibrate_cd_window(d, grid_size, 0.5)?;
    if residual > 5e-2 {
        return Err(Error::Calibration(residual));
    }
    let samples = (0..100)
        .map(|i| {
            let z = i as f64 / 100.0;
            Ok((z, cosine_profile_w(d, z)?))
        })
        .collect::<Result<_>>()?;
    Ok(CosineKernelProfile { d, c_d, residual, grid_size, samples })
}

/// Fraction of the kernel row's L² mass strictly inside |x - y| < 0.9 t.
/// d = 1, 2 use periodic FFT grids of side 2πn/64; d = 3 uses the radial
/// sine-series reduction on [0, πn/32].
pub fn huygens_residual(d: usize, t: f64, grid_size: usize) -> Result<f64> {
    let n = grid_size;
    match d {
        1 => {
            let l = 2.0 * PI * n as f64 / 64.0;
            if t >= l / 4.0 {
                return Err(Error::Domain(format!("t = {t} wraps around the box {l}")));
            }
            let h = l / n as f64;
            let kmax = PI / h;
            let mut buf: Vec<Complex64> = (0..n)
                .map(|j| {
                    let m = if j <= n / 2 { j as f64 } else { j as f64 - n as f64 };
                    let k = 2.0 * PI * m / l;
                    let phase = 2.0 * PI * ((j * (n / 2)) % n) as f64 / n as f64;
                    Complex64::from_polar((t * k.abs()).cos() * spectral_filter(k.abs(), kmax), phase)
                })
                .collect();
            FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
            let (mut inner, mut total) = (0.0, 0.0);
            for (j, v) in buf.iter().enumerate() {
                let x = (j as f64 - (n / 2) as f64) * h;
                let m = v.re * v.re;
                total += m;
                if x.abs() < 0.9 * t {
                    inner += m;
                }
            }
            Ok(inner / total)
        }
        2 => {
            let l = 2.0 * PI * n as f64 / 64.0;
            if t >= l / 4.0 {
                return Err(Error::Domain(format!("t = {t} wraps around the box {l}")));
            }
            let g = cos_kernel_2d(n, t);
            let c = n / 2;
            let (mut inner, mut total) = (0.0, 0.0);
            for a in 0..n {
                for b in 0..n {
                    let x = (a as f64 - c as f64) * g.h;
                    let y = (b as f64 - c as f64) * g.h;
                    let m = g.kernel[a * n + b].powi(2);
                    total += m;
                    if (x * x + y * y).sqrt() < 0.9 * t {
                        inner += m;
                    }
                }
            }
            Ok(inner / total)
        }
        3 => {
            let h = PI / 32.0;
            let big_r = n as f64 * h;
            if t >= big_r / 4.0 {
                return Err(Error::Domain(format!("t = {t} wraps around the radius {big_r}")));
            }
            let kmax = PI / h;
            let dk = PI / big_r;
            let ks: Vec<f64> = (1..=n).map(|m| m as f64 * dk).collect();
            let amp: Vec<f64> = ks.iter().map(|&k| spectral_filter(k, kmax) * (t * k).cos() * k * dk).collect();
            let (mut inner, mut total) = (0.0, 0.0);
            for j in 1..n {
                let r = j as f64 * h;
                // w = r u; 3D mass density 4π|w|² dr
                let w: f64 = ks.iter().zip(&amp).map(|(k, a)| a * (k * r).sin()).sum::<f64>() / (2.0 * PI * PI);
                let m = w * w;
                total += m;
                if r < 0.9 * t {
                    inner += m;
                }
            }
            Ok(inner / total)
        }
        _ => Err(Error::Dimension(d as i64)),
    }
}
