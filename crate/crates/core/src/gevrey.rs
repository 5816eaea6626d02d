//! Decay profiles, weight sequences, the decay clock k(t), Gevrey cutoffs and
//! derivative-bound propagation.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;
use crate::special::{binomial, factorial, ln_factorial};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaKind {
    ExpPower,
    ExpPowerLog,
    Tabulated,
}

/// Θ(r) = exp(-(r+1)^s), exp(-(r+1)^s log(r+e)^β), or a monotone cubic
/// interpolant of tabulated samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaProfile {
    pub kind: ThetaKind,
    pub s: f64,
    pub beta: f64,
    pub c: f64,
    #[serde(rename = "C")]
    pub amp: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Table>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub r: Vec<f64>,
    pub theta: Vec<f64>,
    slopes: Vec<f64>,
}

impl Table {
    /// Fritsch-Carlson slopes; keeps the interpolant monotone.
    pub fn new(r: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        let n = r.len();
        if n < 4 || theta.len() != n {
            return Err(Error::Resolution("table needs at least 4 matching samples".into()));
        }
        if r[0] != 0.0 {
            return Err(Error::Invalid("table must start at r = 0".into()));
        }
        for i in 0..n - 1 {
            if r[i + 1] <= r[i] {
                return Err(Error::Invalid("table radii must increase".into()));
            }
            if !(theta[i + 1] < theta[i]) || theta[i + 1] <= 0.0 {
                return Err(Error::Invalid("tabulated theta must be positive and strictly decreasing".into()));
            }
        }
        let d: Vec<f64> = (0..n - 1).map(|i| (theta[i + 1] - theta[i]) / (r[i + 1] - r[i])).collect();
        let mut m = vec![0.0; n];
        m[0] = d[0];
        m[n - 1] = d[n - 2];
        for i in 1..n - 1 {
            m[i] = if d[i - 1] * d[i] <= 0.0 { 0.0 } else { 0.5 * (d[i - 1] + d[i]) };
        }
        for i in 0..n - 1 {
            if d[i] == 0.0 {
                m[i] = 0.0;
                m[i + 1] = 0.0;
                continue;
            }
            let a = m[i] / d[i];
            let b = m[i + 1] / d[i];
            let t = a * a + b * b;
            if t > 9.0 {
                let tau = 3.0 / t.sqrt();
                m[i] = tau * a * d[i];
                m[i + 1] = tau * b * d[i];
            }
        }
        Ok(Table { r, theta, slopes: m })
    }

    fn eval(&self, x: f64) -> Result<f64> {
        let n = self.r.len();
        if x > self.r[n - 1] {
            return Err(Error::Domain(format!("r = {x} beyond table end {}", self.r[n - 1])));
        }
        let i = match self.r.partition_point(|&ri| ri <= x) {
            0 => 0,
            p => (p - 1).min(n - 2),
        };
        let h = self.r[i + 1] - self.r[i];
        let t = (x - self.r[i]) / h;
        let (t2, t3) = (t * t, t * t * t);
        Ok((2.0 * t3 - 3.0 * t2 + 1.0) * self.theta[i]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[i]
            + (-2.0 * t3 + 3.0 * t2) * self.theta[i + 1]
            + (t3 - t2) * h * self.slopes[i + 1])
    }
}

impl ThetaProfile {
    pub fn exp_power(s: f64, c: f64, amp: f64) -> Result<Self> {
        let p = ThetaProfile { kind: ThetaKind::ExpPower, s, beta: 0.0, c, amp, table: None };
        p.validate()?;
        Ok(p)
    }

    pub fn exp_power_log(s: f64, beta: f64, c: f64, amp: f64) -> Result<Self> {
        let p = ThetaProfile { kind: ThetaKind::ExpPowerLog, s, beta, c, amp, table: None };
        p.validate()?;
        Ok(p)
    }

    pub fn tabulated(r: Vec<f64>, theta: Vec<f64>, c: f64, amp: f64) -> Result<Self> {
        let table = Table::new(r, theta)?;
        let p = ThetaProfile { kind: ThetaKind::Tabulated, s: f64::NAN, beta: 0.0, c, amp, table: Some(table) };
        p.validate()?;
        Ok(p)
    }

    /// Checks parameter ranges. Rapid decay is automatic for the closed
    /// forms; a table has to reach r = 1000 with a log-log slope that keeps
    /// steepening across the decades [10, 100] and [100, 1000].
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.amp > 0.0) {
            return Err(Error::Invalid("c and C must be positive".into()));
        }
        match self.kind {
            ThetaKind::ExpPower | ThetaKind::ExpPowerLog => {
                if !(self.s > 0.0 && self.s <= 1.0) {
                    return Err(Error::Invalid(format!("exponent s = {} outside (0, 1]", self.s)));
                }
                if self.kind == ThetaKind::ExpPowerLog && !(self.beta > 0.0) {
                    return Err(Error::Invalid("log variant needs beta > 0".into()));
                }
                Ok(())
            }
            ThetaKind::Tabulated => {
                let t = self.table.as_ref().ok_or_else(|| Error::Invalid("missing table".into()))?;
                let rmax = *t.r.last().unwrap();
                if rmax < 1000.0 {
                    return Err(Error::Resolution("table must extend to r = 1000".into()));
                }
                // log-log slope must steepen from decade to decade
                let slope = |a: f64, b: f64| -> Result<f64> {
                    Ok((self.ln_theta(a)? - self.ln_theta(b)?) / ((b + 1.0) / (a + 1.0)).ln())
                };
                let (s1, s2) = (slope(10.0, 100.0)?, slope(100.0, 1000.0)?);
                if !(s2 > 1.2 * s1 && s2 > 0.0) {
                    return Err(Error::Invalid("tabulated theta does not decay faster than every power".into()));
                }
                Ok(())
            }
        }
    }

    /// ln Θ(r) for the closed forms.
    fn ln_theta_closed(&self, r: f64) -> f64 {
        let g = (r + 1.0).powf(self.s);
        match self.kind {
            ThetaKind::ExpPower => -g,
            _ => -g * (r + std::f64::consts::E).ln().powf(self.beta),
        }
    }

    pub fn ln_theta(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("theta needs r >= 0, got {r}")));
        }
        match self.kind {
            ThetaKind::Tabulated => Ok(self.table.as_ref().unwrap().eval(r)?.ln()),
            _ => Ok(self.ln_theta_closed(r)),
        }
    }

    pub fn theta(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("theta needs r >= 0, got {r}")));
        }
        match self.kind {
            ThetaKind::Tabulated => self.table.as_ref().unwrap().eval(r),
            _ => Ok(self.ln_theta_closed(r).exp()),
        }
    }

    /// (Θ'/Θ, Θ''/Θ) at r.
    pub fn log_derivs(&self, r: f64) -> Result<(f64, f64)> {
        if !(r >= 0.0) {
            return Err(Error::Domain(format!("theta needs r >= 0, got {r}")));
        }
        let s = self.s;
        let (g1, g2) = match self.kind {
            ThetaKind::ExpPower => (s * (r + 1.0).powf(s - 1.0), s * (s - 1.0) * (r + 1.0).powf(s - 2.0)),
            ThetaKind::ExpPowerLog => {
                let b = self.beta;
                let q = r + std::f64::consts::E;
                let l = q.ln();
                let a0 = (r + 1.0).powf(s);
                let a1 = s * (r + 1.0).powf(s - 1.0);
                let a2 = s * (s - 1.0) * (r + 1.0).powf(s - 2.0);
                let b0 = l.powf(b);
                let b1 = b * l.powf(b - 1.0) / q;
                let b2 = (b * (b - 1.0) * l.powf(b - 2.0) - b * l.powf(b - 1.0)) / (q * q);
                (a1 * b0 + a0 * b1, a2 * b0 + 2.0 * a1 * b1 + a0 * b2)
            }
            ThetaKind::Tabulated => {
                let h = 1e-5 * (1.0 + r);
                let t = self.table.as_ref().unwrap();
                let lo = r - h;
                if lo < 0.0 || r + h > *t.r.last().unwrap() {
                    return Err(Error::Resolution(format!("difference stencil at r = {r} leaves the table")));
                }
                let (fm, f0, fp) = (t.eval(lo)?, t.eval(r)?, t.eval(r + h)?);
                let d1 = (fp - fm) / (2.0 * h) / f0;
                let d2 = (fp - 2.0 * f0 + fm) / (h * h) / f0;
                let i = t.r.partition_point(|&x| x <= r).clamp(1, t.r.len() - 1);
                let spacing = t.r[i] - t.r[i - 1];
                if !d1.is_finite() || !d2.is_finite() || spacing * d1.abs() > 1.0 {
                    return Err(Error::Resolution(format!("table too coarse near r = {r}")));
                }
                return Ok((d1, d2));
            }
        };
        Ok((-g1, g1 * g1 - g2))
    }
}

/// Evaluates Θ(r).
pub fn theta_eval(profile: &ThetaProfile, r: f64) -> Result<f64> {
    profile.theta(r)
}

/// μ(x) = sqrt(Θ(c⟨x⟩)).
pub fn mu_weight(profile: &ThetaProfile, x_radius: f64) -> Result<f64> {
    if !(x_radius >= 0.0) {
        return Err(Error::Domain(format!("radius must be >= 0, got {x_radius}")));
    }
    Ok((0.5 * profile.ln_theta(profile.c * (1.0 + x_radius * x_radius).sqrt())?).exp())
}

pub const TRIAL_C2: [f64; 3] = [0.5, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairConstant {
    pub c2: f64,
    /// `None` when the ratio keeps growing at the edge of the pair grid.
    pub c1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaReport {
    pub c_tilde: f64,
    pub pairs: Vec<PairConstant>,
    pub best_c2: Option<f64>,
    pub violation: bool,
}

/// Smallest constants making |∂^jΘ| ≤ C̃Θ (j = 1, 2) and
/// Θ(r1)Θ(r2) ≤ C1 Θ(C2(r1+r2)) hold on the supplied grids.
pub fn check_theta_conditions(profile: &ThetaProfile, r_grid: &[f64], pair_grid: &[(f64, f64)]) -> Result<ThetaReport> {
    if r_grid.is_empty() || pair_grid.is_empty() {
        return Err(Error::Invalid("empty grid".into()));
    }
    let mut c_tilde: f64 = 0.0;
    for &r in r_grid {
        let (d1, d2) = profile.log_derivs(r)?;
        c_tilde = c_tilde.max(d1.abs()).max(d2.abs());
    }
    let mut order: Vec<usize> = (0..pair_grid.len()).collect();
    order.sort_by(|&a, &b| {
        let sa = pair_grid[a].0 + pair_grid[a].1;
        let sb = pair_grid[b].0 + pair_grid[b].1;
        sa.total_cmp(&sb)
    });
    let mut pairs = Vec::new();
    for c2 in TRIAL_C2 {
        let mut logs = Vec::with_capacity(order.len());
        for &i in &order {
            let (r1, r2) = pair_grid[i];
            logs.push(profile.ln_theta(r1)? + profile.ln_theta(r2)? - profile.ln_theta(c2 * (r1 + r2))?);
        }
        let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let cut = (3 * logs.len()) / 4;
        let head = logs[..cut.max(1)].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // still climbing across the last quarter of the grid: no finite constant
        let growing = logs.len() >= 8 && max > head + 1.0 && max.is_finite();
        pairs.push(PairConstant { c2, c1: if growing || !max.is_finite() { None } else { Some(max.exp()) } });
    }
    let best = pairs
        .iter()
        .filter_map(|p| p.c1.map(|c1| (p.c2, c1)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| p.0);
    Ok(ThetaReport { c_tilde, violation: best.is_none() || !c_tilde.is_finite(), pairs, best_c2: best })
}

/// m̃_k = sup_r (r+1)^k sqrt(Θ(r)) by geometric bracketing and golden section.
pub fn compute_m_tilde(profile: &ThetaProfile, k: usize) -> Result<f64> {
    Ok(ln_m_tilde(profile, k)?.exp())
}

pub fn ln_m_tilde(profile: &ThetaProfile, k: usize) -> Result<f64> {
    let kf = k as f64;
    let rmax = match &profile.table {
        Some(t) => *t.r.last().unwrap(),
        None => f64::INFINITY,
    };
    // u = ln(1 + r)
    let obj = |u: f64| -> Result<f64> { Ok(kf * u + 0.5 * profile.ln_theta(u.exp_m1())?) };
    let mut us = vec![0.0];
    for j in -10..=60 {
        let r = 2f64.powi(j);
        if r > rmax {
            break;
        }
        us.push(r.ln_1p());
    }
    let vals: Vec<f64> = us.iter().map(|&u| obj(u)).collect::<Result<_>>()?;
    let (imax, _) = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    if imax == us.len() - 1 {
        return Err(Error::Divergence(format!("(r+1)^{k} sqrt(theta) still increasing at the end of the scan")));
    }
    if imax == 0 && vals[1] <= vals[0] && obj(1e-9)? <= vals[0] {
        return Ok(vals[0]);
    }
    let mut a = us[imax.saturating_sub(1)];
    let mut b = us[imax + 1];
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let mut f1 = obj(x1)?;
    let mut f2 = obj(x2)?;
    while b - a > 1e-13 * (1.0 + b.abs()) {
        if f1 < f2 {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = obj(x2)?;
        } else {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = obj(x1)?;
        }
    }
    Ok(f1.max(f2).max(vals[imax]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "provenance", rename_all = "kebab-case")]
pub enum Provenance {
    /// (k!)^{1/s}
    Factorial { s: f64 },
    /// running max of (k!)^{1/s} log(k+e)^{-βk/s}, floored at 1
    FactorialLog { s: f64, beta: f64 },
    Tabulated,
}

/// m_0..m_K stored as natural logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSequence {
    pub ln_values: Vec<f64>,
    pub provenance: Provenance,
    pub c3: Option<f64>,
    pub c4: Option<f64>,
}

pub const DEFAULT_K: usize = 24;

impl WeightSequence {
    pub fn factorial(s: f64, k_max: usize) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0) {
            return Err(Error::Invalid(format!("s = {s} outside (0, 1]")));
        }
        Self::closed(Provenance::Factorial { s }, k_max)
    }

    pub fn factorial_log(s: f64, beta: f64, k_max: usize) -> Result<Self> {
        if !(s > 0.0 && s <= 1.0 && beta > 0.0) {
            return Err(Error::Invalid("need 0 < s <= 1 and beta > 0".into()));
        }
        Self::closed(Provenance::FactorialLog { s, beta }, k_max)
    }

    pub fn for_profile(profile: &ThetaProfile, k_max: usize) -> Result<Self> {
        match profile.kind {
            ThetaKind::ExpPower => Self::factorial(profile.s, k_max),
            ThetaKind::ExpPowerLog => Self::factorial_log(profile.s, profile.beta, k_max),
            ThetaKind::Tabulated => Err(Error::Invalid("tabulated profiles need an explicit sequence".into())),
        }
    }

    pub fn tabulated(values: &[f64]) -> Result<Self> {
        if values.is_empty() || values[0] != 1.0 {
            return Err(Error::Invalid("m_0 must be 1".into()));
        }
        if values.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(Error::Invalid("sequence must be nondecreasing".into()));
        }
        let mut seq = WeightSequence {
            ln_values: values.iter().map(|v| v.ln()).collect(),
            provenance: Provenance::Tabulated,
            c3: None,
            c4: None,
        };
        seq.c4 = Some(seq.c4_min(seq.len() - 1));
        Ok(seq)
    }

    fn closed(p: Provenance, k_max: usize) -> Result<Self> {
        let mut seq = WeightSequence { ln_values: Vec::new(), provenance: p, c3: None, c4: None };
        let mut prev: f64 = 0.0;
        for k in 0..=k_max {
            let v = seq.closed_ln(k).unwrap().max(prev);
            seq.ln_values.push(v);
            prev = v;
        }
        seq.c4 = Some(seq.c4_min(k_max));
        Ok(seq)
    }

    fn closed_ln(&self, k: usize) -> Option<f64> {
        match self.provenance {
            Provenance::Factorial { s } => Some(ln_factorial(k) / s),
            Provenance::FactorialLog { s, beta } => {
                let v = ln_factorial(k) / s - beta * k as f64 / s * (k as f64 + std::f64::consts::E).ln().ln();
                Some(v.max(0.0))
            }
            Provenance::Tabulated => None,
        }
    }

    /// Highest stored index K.
    pub fn len(&self) -> usize {
        self.ln_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ln_values.is_empty()
    }

    pub fn k_max(&self) -> usize {
        self.ln_values.len() - 1
    }

    /// ln m_k, extending closed forms past the stored range.
    pub fn ln_m(&self, k: usize) -> Result<f64> {
        if let Some(v) = self.ln_values.get(k) {
            return Ok(*v);
        }
        match self.provenance {
            Provenance::Tabulated => Err(Error::Extension(format!("m_{k} not tabulated"))),
            Provenance::FactorialLog { .. } => {
                let mut prev = *self.ln_values.last().unwrap();
                for j in self.ln_values.len()..=k {
                    prev = self.closed_ln(j).unwrap().max(prev);
                }
                Ok(prev)
            }
            _ => Ok(self.closed_ln(k).unwrap()),
        }
    }

    pub fn m(&self, k: usize) -> Result<f64> {
        Ok(self.ln_m(k)?.exp())
    }

    pub fn c4_min(&self, k_max: usize) -> f64 {
        let mut best = f64::NEG_INFINITY;
        for k in 0..=k_max.min(self.k_max()) {
            for nu in 0..=k {
                let v = self.ln_values[nu] + self.ln_values[k - nu] + ln_factorial(k)
                    - ln_factorial(nu)
                    - ln_factorial(k - nu)
                    - self.ln_values[k];
                best = best.max(v);
            }
        }
        best.exp()
    }
}

/// Minimal (C3, C4) over the stored range, and whether both are finite.
pub fn check_weight_sequence(seq: &WeightSequence, mtilde: &[f64], k_max: usize) -> Result<(f64, f64, bool)> {
    if k_max < 4 {
        return Err(Error::Range(format!("K = {k_max} < 4")));
    }
    if seq.k_max() < k_max {
        return Err(Error::Range(format!("sequence stores K = {} < {k_max}", seq.k_max())));
    }
    let kc = k_max / 2 - 1;
    if mtilde.len() <= kc {
        return Err(Error::Range(format!("need m_tilde up to k = {kc}")));
    }
    let mut c3: f64 = 0.0;
    for k in 0..=kc {
        let terms = [
            ln_factorial(k),
            mtilde[k].ln(),
            seq.ln_values[k + 2],
            0.5 * seq.ln_values[2 * k],
        ];
        let lhs = crate::special::logsumexp(&terms);
        c3 = c3.max(((lhs - seq.ln_values[k]) / (k + 1) as f64).exp());
    }
    let c4 = seq.c4_min(k_max);
    Ok((c3, c4, c3.is_finite() && c4.is_finite()))
}

pub fn m_tilde_table(profile: &ThetaProfile, k_max: usize) -> Result<Vec<f64>> {
    (0..=k_max).map(|k| compute_m_tilde(profile, k)).collect()
}

/// Attaches (C3, C4) computed against the profile's m̃ over the stored range.
pub fn attach_constants(seq: &mut WeightSequence, profile: &ThetaProfile) -> Result<()> {
    let k = seq.k_max();
    let mt = m_tilde_table(profile, k / 2)?;
    let (c3, c4, _) = check_weight_sequence(seq, &mt, k)?;
    seq.c3 = Some(c3);
    seq.c4 = Some(c4);
    Ok(())
}

/// Largest k >= 1 with m_k^{1/k} <= t, or 0.
pub fn k_of_t(seq: &WeightSequence, t: f64) -> Result<usize> {
    if !(t > 1.0) {
        return Err(Error::Domain(format!("k(t) needs t > 1, got {t}")));
    }
    let lt = t.ln();
    let mut k = 0;
    loop {
        let next = k + 1;
        let v = seq.ln_m(next)? / next as f64;
        if v > lt {
            return Ok(k);
        }
        k = next;
        if k > 1_000_000 {
            return Err(Error::Extension("k(t) did not cross".into()));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GevreyCutoff {
    pub s: f64,
    pub a: f64,
    /// I = ∫χ
    pub norm: f64,
}

fn f_real(x: f64, a: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (-x.powf(-a)).exp()
    }
}

pub fn rho(x: f64, a: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let (p, q) = (f_real(x, a), f_real(1.0 - x, a));
    p / (p + q)
}

/// Continuation of ρ, or of ρ - 1 when `upper`; the shift keeps the Cauchy
/// sums free of cancellation against the constant near x = 1.
fn rho_c(z: Complex64, a: f64, upper: bool) -> Complex64 {
    let p = (-(z.ln() * -a).exp()).exp();
    let q = (-((Complex64::new(1.0, 0.0) - z).ln() * -a).exp()).exp();
    if upper {
        -q / (p + q)
    } else {
        p / (p + q)
    }
}

pub fn chi(sigma: f64, a: f64) -> f64 {
    rho(4.0 * (sigma - 0.5), a) * rho(4.0 * (2.0 - sigma), a)
}

const GLUE: [f64; 4] = [0.5, 0.75, 1.75, 2.0];

/// Builds ζ = χ/I with bump exponent a = s/(1-s).
pub fn build_cutoff(s: f64) -> Result<GevreyCutoff> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("cutoff order s = {s} must be positive")));
    }
    if s >= 1.0 {
        return Err(Error::Invalid("no compactly supported cutoff exists for s >= 1".into()));
    }
    let a = s / (1.0 - s);
    let mut norm = 0.0;
    for w in GLUE.windows(2) {
        norm += quad::integrate(|x| chi(x, a), w[0], w[1], 1e-13);
    }
    Ok(GevreyCutoff { s, a, norm })
}

impl GevreyCutoff {
    /// Branch containing the contour center, up to an additive constant.
    fn piece(&self, center: f64, z: Complex64) -> Complex64 {
        if center <= 0.75 {
            rho_c((z - 0.5) * 4.0, self.a, center > 0.625)
        } else if center < 1.75 {
            Complex64::new(0.0, 0.0)
        } else {
            rho_c((Complex64::new(2.0, 0.0) - z) * 4.0, self.a, center < 1.875)
        }
    }

    pub fn zeta(&self, sigma: f64) -> f64 {
        chi(sigma, self.a) / self.norm
    }

    pub fn contour_radius(&self, sigma: f64) -> f64 {
        let d = GLUE.iter().map(|g| (sigma - g).abs()).fold(f64::INFINITY, f64::min);
        d / self.a.max(2.0)
    }
}

/// ζ^{(order)}(σ); derivatives by trapezoid quadrature of the Cauchy integral.
pub fn cutoff_eval(cut: &GevreyCutoff, sigma: f64, order: usize) -> Result<f64> {
    if order > 30 {
        return Err(Error::Range(format!("derivative order {order} > 30")));
    }
    if order == 0 {
        return Ok(cut.zeta(sigma));
    }
    if sigma <= 0.5 || sigma >= 2.0 {
        if GLUE.iter().any(|g| (sigma - g).abs() < 1e-8) {
            return Err(Error::ContourRadius(sigma));
        }
        return Ok(0.0);
    }
    if (0.75..=1.75).contains(&sigma) && GLUE.iter().all(|g| (sigma - g).abs() >= 1e-8) {
        return Ok(0.0);
    }
    if GLUE.iter().any(|g| (sigma - g).abs() < 1e-8) {
        return Err(Error::ContourRadius(sigma));
    }
    let r = cut.contour_radius(sigma);
    let n = 64 * (order + 1);
    let mut acc = Complex64::new(0.0, 0.0);
    for j in 0..n {
        let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
        let e = Complex64::from_polar(1.0, th);
        acc += cut.piece(sigma, sigma + e * r) * Complex64::from_polar(1.0, -(order as f64) * th);
    }
    let lnscale = ln_factorial(order) - order as f64 * r.ln();
    Ok(acc.re / n as f64 * lnscale.exp() / cut.norm)
}

/// sup over (1/2, 3/4) of |ζ^{(k)}|; the falling edge mirrors it.
pub fn cutoff_deriv_sup(cut: &GevreyCutoff, order: usize, samples: usize) -> Result<f64> {
    let mut best: f64 = 0.0;
    for i in 1..samples {
        let sigma = 0.5 + 0.25 * i as f64 / samples as f64;
        best = best.max(cutoff_eval(cut, sigma, order)?.abs());
    }
    Ok(best)
}

/// ψ(λ) = ∫_{-∞}^λ ζ.
pub fn psi_eval(cut: &GevreyCutoff, lambda: f64) -> f64 {
    if lambda <= 0.5 {
        return 0.0;
    }
    if lambda >= 2.0 {
        return 1.0;
    }
    let mut acc = 0.0;
    for w in GLUE.windows(2) {
        if lambda <= w[0] {
            break;
        }
        let hi = lambda.min(w[1]);
        acc += quad::integrate(|x| chi(x, cut.a), w[0], hi, 1e-13);
    }
    (acc / cut.norm).clamp(0.0, 1.0)
}

/// Per-order bounds b_k with b_k <= scale * base^{k+1} m_k.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeBoundSeq {
    pub bounds: Vec<f64>,
    pub scale: f64,
    pub base: f64,
}

impl DerivativeBoundSeq {
    pub fn envelope(scale: f64, base: f64, seq: &WeightSequence, k_max: usize) -> Result<Self> {
        let bounds = (0..=k_max)
            .map(|k| Ok(scale * ((k + 1) as f64 * base.ln() + seq.ln_m(k)?).exp()))
            .collect::<Result<Vec<_>>>()?;
        Ok(DerivativeBoundSeq { bounds, scale, base })
    }

    /// Smallest C with b_k <= scale C^{k+1} m_k over stored k.
    pub fn fit_base(&self, seq: &WeightSequence) -> Result<f64> {
        let mut c = 0.0f64;
        for (k, b) in self.bounds.iter().enumerate() {
            if *b > 0.0 {
                let v = ((b / self.scale).ln() - seq.ln_m(k)?) / (k + 1) as f64;
                c = c.max(v.exp());
            }
        }
        Ok(c)
    }
}

/// Leibniz fold of the factors' bounds up to order K.
pub fn leibniz_bound_propagate(
    factors: &[DerivativeBoundSeq],
    seq: &WeightSequence,
    k_max: usize,
) -> Result<DerivativeBoundSeq> {
    let first = factors.first().ok_or_else(|| Error::Invalid("no factors".into()))?;
    for f in factors {
        if f.bounds.len() <= k_max {
            return Err(Error::Range(format!("factor stores {} orders, need {}", f.bounds.len(), k_max + 1)));
        }
    }
    let mut acc = DerivativeBoundSeq {
        bounds: first.bounds[..=k_max].to_vec(),
        scale: first.scale,
        base: first.base,
    };
    for f in &factors[1..] {
        let bounds = (0..=k_max)
            .map(|k| (0..=k).map(|nu| binomial(k, nu) * acc.bounds[nu] * f.bounds[k - nu]).sum())
            .collect();
        acc = DerivativeBoundSeq { bounds, scale: acc.scale * f.scale, base: 0.0 };
        acc.base = acc.fit_base(seq)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InverseBoundReport {
    pub b: f64,
    pub envelope: DerivativeBoundSeq,
    pub recursion: Vec<f64>,
    pub ok: bool,
}

/// Inverse-derivative bounds B^{k+1} m_k with B = max(2C, 2C C̃ C4), plus the
/// recursion b_{k+1} = C̃ Σ_ν C^{k+1-ν} (k+1)! m_{k+1-ν}/(ν!(k+1-ν)!) b_ν from b_0 = C̃.
pub fn inverse_bound_propagate(c: f64, c_tilde: f64, seq: &WeightSequence, k_max: usize) -> Result<InverseBoundReport> {
    if !(c > 0.0 && c_tilde > 0.0) {
        return Err(Error::Invalid("C and C~ must be positive".into()));
    }
    let c4 = seq.c4.ok_or_else(|| Error::Invalid("sequence carries no C4".into()))?;
    let b = (2.0 * c).max(2.0 * c * c_tilde * c4);
    let envelope = DerivativeBoundSeq::envelope(1.0, b, seq, k_max)?;
    let mut rec = vec![c_tilde];
    for k in 0..k_max {
        let mut s = 0.0;
        for nu in 0..=k {
            let j = k + 1 - nu;
            s += c.powi(j as i32) * factorial(k + 1) / (factorial(nu) * factorial(j)) * seq.m(j)? * rec[nu];
        }
        rec.push(c_tilde * s);
    }
    let bad = rec.iter().zip(&envelope.bounds).position(|(r, e)| r > e);
    if let Some(k) = bad {
        return Err(Error::Consistency(format!(
            "recursion value {:.6e} exceeds B^{{k+1}} m_k = {:.6e} at k = {k}",
            rec[k], envelope.bounds[k]
        )));
    }
    Ok(InverseBoundReport { b, envelope, recursion: rec, ok: true })
}

/// JSON record {kind, s, beta, c, C, values[], C3, C4}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub kind: ThetaKind,
    pub s: f64,
    pub beta: f64,
    pub c: f64,
    #[serde(rename = "C")]
    pub amp: f64,
    pub values: Vec<f64>,
    #[serde(rename = "C3")]
    pub c3: Option<f64>,
    #[serde(rename = "C4")]
    pub c4: Option<f64>,
}

impl ProfileRecord {
    pub fn new(p: &ThetaProfile, seq: &WeightSequence) -> Self {
        ProfileRecord {
            kind: p.kind,
            s: p.s,
            beta: p.beta,
            c: p.c,
            amp: p.amp,
            values: seq.ln_values.iter().map(|v| v.exp()).collect(),
            c3: seq.c3,
            c4: seq.c4,
        }
    }
}
