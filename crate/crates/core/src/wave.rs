//! Wave propagation by spectral calculus, weighted local energy and decay fits.

use faer::Mat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gevrey::{k_of_t, mu_weight, psi_eval, GevreyCutoff, ThetaProfile, WeightSequence};
use crate::operator::{linear_fit, DiscreteOperator, Grid, SpectralDecomposition};
use crate::par::{map_range, Exec};
use crate::quad::trapezoid;

type C = Complex64;

const ZERO: C = C { re: 0.0, im: 0.0 };

#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub u: Vec<C>,
    /// ∂_t u
    pub v: Vec<C>,
    pub t: f64,
}

impl WaveState {
    pub fn zero(n: usize, t: f64) -> Self {
        WaveState { u: vec![ZERO; n], v: vec![ZERO; n], t }
    }
}

/// Low-frequency filter ψ(√P/δ); `None` propagates unfiltered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Filter {
    pub delta: f64,
    pub cut: GevreyCutoff,
}

impl Filter {
    pub fn new(delta: f64, cut: GevreyCutoff) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Domain(format!("filter scale δ = {delta} must be positive")));
        }
        Ok(Filter { delta, cut })
    }

    pub fn weight(&self, omega: f64) -> f64 {
        psi_eval(&self.cut, omega / self.delta)
    }
}

/// Mode data shared by every time: coefficients of f1, f2 and frequencies.
struct Modes {
    a: Vec<C>,
    b: Vec<C>,
    omega: Vec<f64>,
}

fn modes(decomp: &SpectralDecomposition, f1: &[C], f2: &[C], filter: Option<&Filter>) -> Result<Modes> {
    let n = decomp.n();
    if f1.len() != n || f2.len() != n {
        return Err(Error::Dimension(f1.len().max(f2.len()) as i64));
    }
    let top = decomp.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(e) = decomp.values.iter().find(|&&e| e < -1e-12 * top.max(1.0)) {
        return Err(Error::Assumption(format!("P >= 0 fails: eigenvalue {e:.3e}")));
    }
    let omega: Vec<f64> = decomp.values.iter().map(|e| e.max(0.0).sqrt()).collect();
    let (mut a, mut b) = (decomp.analyze(f1), decomp.analyze(f2));
    if let Some(f) = filter {
        for j in 0..n {
            let w = f.weight(omega[j]);
            a[j] *= w;
            b[j] *= w;
        }
    }
    Ok(Modes { a, b, omega })
}

fn sin_over(omega: f64, t: f64) -> f64 {
    if omega * t.abs() < 1e-8 {
        t
    } else {
        (omega * t).sin() / omega
    }
}

const CHUNK: usize = 32;

/// States at each time in one chunk, built with two dense products.
fn chunk_states(decomp: &SpectralDecomposition, m: &Modes, times: &[f64]) -> Vec<WaveState> {
    let n = decomp.n();
    let k = times.len();
    let cu = Mat::<C>::from_fn(n, k, |j, c| {
        let (w, t) = (m.omega[j], times[c]);
        m.a[j] * (w * t).cos() + m.b[j] * sin_over(w, t)
    });
    let cv = Mat::<C>::from_fn(n, k, |j, c| {
        let (w, t) = (m.omega[j], times[c]);
        -m.a[j] * (w * (w * t).sin()) + m.b[j] * (w * t).cos()
    });
    let (u, v) = (decomp.synthesize_many(&cu), decomp.synthesize_many(&cv));
    (0..k)
        .map(|c| WaveState { u: (0..n).map(|i| u[(i, c)]).collect(), v: (0..n).map(|i| v[(i, c)]).collect(), t: times[c] })
        .collect()
}

/// u(t) = cos(t√P)f1 + sin(t√P)/√P f2, both filtered by ψ_δ when a filter is given.
pub fn propagate(
    decomp: &SpectralDecomposition,
    f1: &[C],
    f2: &[C],
    times: &[f64],
    filter: Option<&Filter>,
    exec: Exec,
) -> Result<Vec<WaveState>> {
    let m = modes(decomp, f1, f2, filter)?;
    let chunks: Vec<&[f64]> = times.chunks(CHUNK).collect();
    Ok(map_range(chunks.len(), exec, |c| chunk_states(decomp, &m, chunks[c])).into_iter().flatten().collect())
}

/// μ sampled on the nodes and on the n+1 half nodes of the covariant gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyWeight {
    pub nodes: Vec<f64>,
    pub half: Vec<f64>,
}

impl EnergyWeight {
    pub fn from_fn(grid: &Grid, f: impl Fn(f64) -> f64) -> Self {
        let lo = grid.bounds().0;
        EnergyWeight {
            nodes: grid.nodes().iter().map(|&x| f(x)).collect(),
            half: (0..=grid.n).map(|j| f(lo + (j as f64 + 0.5) * grid.h)).collect(),
        }
    }

    pub fn from_profile(grid: &Grid, profile: &ThetaProfile) -> Result<Self> {
        let lo = grid.bounds().0;
        Ok(EnergyWeight {
            nodes: grid.mu(profile)?,
            half: (0..=grid.n).map(|j| mu_weight(profile, (lo + (j as f64 + 0.5) * grid.h).abs())).collect::<Result<_>>()?,
        })
    }

    pub fn unit(grid: &Grid) -> Self {
        EnergyWeight { nodes: vec![1.0; grid.n], half: vec![1.0; grid.n + 1] }
    }
}

/// (‖μ∂_t u‖², ‖μ(i∂ + b)u‖², ‖μu‖²) with the grid spacing as quadrature weight.
pub fn energy_components(state: &WaveState, op: &DiscreteOperator, mu: &EnergyWeight) -> Result<[f64; 3]> {
    let n = op.n();
    if state.u.len() != n || state.v.len() != n || mu.nodes.len() != n || mu.half.len() != n + 1 {
        return Err(Error::Dimension(state.u.len() as i64));
    }
    let h = op.grid.h;
    let g = op.covariant_gradient(&state.u);
    let wsum = |x: &[C], w: &[f64]| h * x.iter().zip(w).map(|(a, m)| a.norm_sqr() * m * m).sum::<f64>();
    Ok([wsum(&state.v, &mu.nodes), wsum(&g, &mu.half), wsum(&state.u, &mu.nodes)])
}

/// Weighted local energy; case b has b = 0 so the gradient is the plain one.
pub fn local_energy(state: &WaveState, op: &DiscreteOperator, mu: &EnergyWeight) -> Result<f64> {
    Ok(energy_components(state, op, mu)?.iter().sum())
}

/// ‖∂_t u‖² + ⟨Pu, u⟩ over the whole box.
pub fn full_energy(state: &WaveState, op: &DiscreteOperator) -> f64 {
    let h = op.grid.h;
    let pu = op.apply(&state.u);
    h * (state.v.iter().map(|v| v.norm_sqr()).sum::<f64>() + pu.iter().zip(&state.u).map(|(p, u)| (p * u.conj()).re).sum::<f64>())
}

/// N(μ)u = μ^{-1}(G*μ_h²G - μ²P)u; the kinetic part of P is G*G.
pub fn energy_commutator(op: &DiscreteOperator, mu: &EnergyWeight, u: &[C]) -> Vec<C> {
    let g = op.covariant_gradient(u);
    let mg: Vec<C> = g.iter().zip(&mu.half).map(|(a, m)| a * (m * m)).collect();
    let gmg = op.covariant_gradient_adjoint(&mg);
    let pu = op.apply(u);
    (0..u.len()).map(|i| (gmg[i] - pu[i] * mu.nodes[i].powi(2)) / mu.nodes[i]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDerivative {
    /// centered difference of E
    pub fd: f64,
    /// 2Re⟨N(μ)u, μ∂_t u⟩ + 2Re⟨μ∂_t u, μu⟩
    pub identity: f64,
    /// the N(μ) term alone
    pub commutator_term: f64,
    pub residual: f64,
}

pub fn default_step(decomp: &SpectralDecomposition) -> f64 {
    let top = decomp.values.last().copied().unwrap_or(1.0).max(1e-300);
    1e-3 / top.sqrt()
}

/// Compares dE/dt by centered difference of the states at t - h, t, t + h
/// with the energy identity evaluated at t.
pub fn energy_derivative_residual(
    prev: &WaveState,
    cur: &WaveState,
    next: &WaveState,
    op: &DiscreteOperator,
    mu: &EnergyWeight,
) -> Result<EnergyDerivative> {
    let h = 0.5 * (next.t - prev.t);
    if !(h > 1e-10 * cur.t.abs().max(1.0)) || ((next.t - cur.t) - (cur.t - prev.t)).abs() > 1e-9 * h {
        return Err(Error::Step(format!("need t ± h with h above the rounding floor, got h = {h:.3e}")));
    }
    let e = |s: &WaveState| local_energy(s, op, mu);
    let fd = (e(next)? - e(prev)?) / (2.0 * h);
    let hh = op.grid.h;
    let nu = energy_commutator(op, mu, &cur.u);
    let dot = |x: &[C], y: &[C]| hh * x.iter().zip(y).map(|(a, b)| (a * b.conj()).re).sum::<f64>();
    let mv: Vec<C> = cur.v.iter().zip(&mu.nodes).map(|(a, m)| a * m).collect();
    let mu_u: Vec<C> = cur.u.iter().zip(&mu.nodes).map(|(a, m)| a * m).collect();
    let commutator_term = 2.0 * dot(&nu, &mv);
    let identity = commutator_term + 2.0 * dot(&mv, &mu_u);
    let floor = 1e-12 * e(cur)?;
    let err = (fd - identity).abs();
    let residual = if err == 0.0 { 0.0 } else { err / (fd.abs() + floor.max(f64::MIN_POSITIVE)) };
    Ok(EnergyDerivative { fd, identity, commutator_term, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMeta {
    pub delta: f64,
    pub filtered: bool,
    pub potential_hash: String,
    /// last time before the boundary echo returns
    pub t_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyTrace {
    pub times: Vec<f64>,
    pub e: Vec<f64>,
    pub e_dt: Vec<f64>,
    pub e_grad: Vec<f64>,
    pub e_mass: Vec<f64>,
    pub meta: TraceMeta,
}

impl EnergyTrace {
    pub fn new(times: Vec<f64>, comps: Vec<[f64; 3]>, meta: TraceMeta) -> Result<Self> {
        if times.len() != comps.len() || times.is_empty() {
            return Err(Error::Invalid("trace needs one energy per time".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Invalid("trace times must increase strictly".into()));
        }
        if comps.iter().flatten().any(|c| !(*c >= 0.0)) {
            return Err(Error::Invalid("energies must be nonnegative".into()));
        }
        Ok(EnergyTrace {
            e: comps.iter().map(|c| c.iter().sum()).collect(),
            e_dt: comps.iter().map(|c| c[0]).collect(),
            e_grad: comps.iter().map(|c| c[1]).collect(),
            e_mass: comps.iter().map(|c| c[2]).collect(),
            times,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

pub fn potential_hash(op: &DiscreteOperator) -> String {
    let mut h = Sha256::new();
    for x in op.v.iter().chain(&op.b) {
        h.update(x.to_le_bytes());
    }
    h.update(op.grid.h.to_le_bytes());
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Propagates and records the local energy at every time; states are not kept.
#[allow(clippy::too_many_arguments)]
pub fn energy_trace(
    decomp: &SpectralDecomposition,
    op: &DiscreteOperator,
    f1: &[C],
    f2: &[C],
    times: &[f64],
    filter: Option<&Filter>,
    mu: &EnergyWeight,
    exec: Exec,
) -> Result<EnergyTrace> {
    let m = modes(decomp, f1, f2, filter)?;
    let chunks: Vec<&[f64]> = times.chunks(CHUNK).collect();
    let comps: Vec<Result<Vec<[f64; 3]>>> = map_range(chunks.len(), exec, |c| {
        chunk_states(decomp, &m, chunks[c]).iter().map(|s| energy_components(s, op, mu)).collect()
    });
    let mut all = Vec::with_capacity(times.len());
    for c in comps {
        all.extend(c?);
    }
    let meta = TraceMeta {
        delta: filter.map_or(0.0, |f| f.delta),
        filtered: filter.is_some(),
        potential_hash: potential_hash(op),
        t_max: None,
    };
    EnergyTrace::new(times.to_vec(), all, meta)
}

/// Smallest radius holding `frac` of Σ h w_j² (nodes taken by |x|).
pub fn effective_support(grid: &Grid, w: &[f64], frac: f64) -> f64 {
    let mut pairs: Vec<(f64, f64)> = grid.nodes().iter().zip(w).map(|(x, v)| (x.abs(), v * v)).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (r, m) in pairs {
        acc += m;
        if acc >= frac * total {
            return r;
        }
    }
    grid.truncation_radius()
}

/// Round-trip horizon 2(R - r_obs) - r_data, supports at 95% of the squared mass.
pub fn reflection_horizon(grid: &Grid, mu: &EnergyWeight, f: &[C]) -> f64 {
    let r_obs = effective_support(grid, &mu.nodes, 0.95);
    let fa: Vec<f64> = f.iter().map(|c| c.norm()).collect();
    let r_data = effective_support(grid, &fa, 0.95);
    2.0 * (grid.truncation_radius() - r_obs) - r_data
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DecayModel {
    /// √E ≤ C₀ e^{-k(c₀t)}
    Envelope,
    /// √E ≤ C₀ (c₀t)^{-p}
    PowerLaw { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub model: DecayModel,
    pub c0: f64,
    pub big_c0: f64,
    pub s_hat: Option<f64>,
    /// median log-slack ln(envelope/√E) over the last quarter
    pub residual: f64,
    /// the trace reaches the numerical floor (faster than any envelope)
    pub saturated: bool,
    /// the largest c₀ tried still majorizes
    pub c0_at_limit: bool,
}

const E_FLOOR: f64 = 1e-300;
/// rise over the running minimum that marks a returning echo
pub const RISE: f64 = 10.0;
const C0_RANGE: (f64, f64) = (1e-6, 1e3);

fn sqrt_e(trace: &EnergyTrace) -> Vec<f64> {
    trace.e.iter().map(|e| e.max(E_FLOOR).sqrt()).collect()
}

/// Rejects traces past the echo horizon or with a late rise above the running minimum.
pub fn check_contamination(trace: &EnergyTrace) -> Result<()> {
    if let Some(tm) = trace.meta.t_max {
        if let Some(t) = trace.times.iter().find(|&&t| t > tm * (1.0 + 1e-12)) {
            return Err(Error::Contaminated(format!("sample at t = {t} lies past the echo horizon {tm:.1}")));
        }
    }
    let top = trace.e.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-24 * top;
    let mut low = f64::INFINITY;
    for (t, &e) in trace.times.iter().zip(&trace.e) {
        if e > RISE * low && e > floor {
            return Err(Error::Contaminated(format!("energy rises {RISE}-fold over its running minimum by t = {t:.2}; boundary echo")));
        }
        low = low.min(e.max(floor));
    }
    Ok(())
}

fn clock(seq: &WeightSequence, x: f64) -> Result<f64> {
    if x <= 1.0 {
        Ok(0.0)
    } else {
        Ok(k_of_t(seq, x)? as f64)
    }
}

fn majorizes(seq: &WeightSequence, times: &[f64], se: &[f64], big: f64, c: f64) -> Result<bool> {
    for (t, s) in times.iter().zip(se) {
        if *s > big * (-clock(seq, c * t)?).exp() * (1.0 + 1e-12) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// One-sided fit of √E(t) ≤ C₀e^{-k(c₀t)} on t ≥ 1 with C₀ = max √E and the
/// largest admissible c₀.
pub fn fit_decay(trace: &EnergyTrace, seq: &WeightSequence) -> Result<DecayFit> {
    check_contamination(trace)?;
    let idx: Vec<usize> = (0..trace.len()).filter(|&i| trace.times[i] >= 1.0).collect();
    if idx.len() < 8 {
        return Err(Error::Range("decay fit needs at least 8 samples with t >= 1".into()));
    }
    let times: Vec<f64> = idx.iter().map(|&i| trace.times[i]).collect();
    let se: Vec<f64> = {
        let all = sqrt_e(trace);
        idx.iter().map(|&i| all[i]).collect()
    };
    let big = se.iter().cloned().fold(0.0, f64::max);
    if big <= E_FLOOR.sqrt() {
        return Err(Error::Range("trace is identically zero".into()));
    }
    let (mut lo, mut hi) = C0_RANGE;
    let at_limit = majorizes(seq, &times, &se, big, hi)?;
    if at_limit {
        lo = hi;
    } else {
        for _ in 0..60 {
            let mid = (lo * hi).sqrt();
            if majorizes(seq, &times, &se, big, mid)? {
                lo = mid;
            } else {
                hi = mid;
            }
        }
    }
    let c0 = lo;
    let q = 3 * times.len() / 4;
    let mut slack: Vec<f64> = Vec::new();
    for i in q..times.len() {
        slack.push(big.ln() - clock(seq, c0 * times[i])? - se[i].ln());
    }
    slack.sort_by(f64::total_cmp);
    let residual = slack[slack.len() / 2];
    let saturated = trace.e.iter().cloned().fold(f64::INFINITY, f64::min) < 1e-20 * big * big;
    Ok(DecayFit {
        model: DecayModel::Envelope,
        c0,
        big_c0: big,
        s_hat: fit_exponent(&times, &se, big),
        residual,
        saturated,
        c0_at_limit: at_limit,
    })
}

/// Exponent of ln√E ≈ a - c t^s fitted over the running upper hull of √E:
/// a scan over s with (a, c) by least squares, then golden-section refinement.
pub fn fit_exponent(times: &[f64], se: &[f64], big: f64) -> Option<f64> {
    let mut hull = se.to_vec();
    for i in (0..hull.len().saturating_sub(1)).rev() {
        hull[i] = hull[i].max(hull[i + 1]);
    }
    let floor = 1e-10 * big;
    let pts: Vec<(f64, f64)> = times.iter().zip(&hull).filter(|(_, s)| **s > floor).map(|(t, s)| (*t, s.ln())).collect();
    if pts.len() < 4 {
        return None;
    }
    let sse = |s: f64| -> Option<f64> {
        let xs: Vec<f64> = pts.iter().map(|p| p.0.powf(s)).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (a, b) = linear_fit(&xs, &ys);
        if b >= 0.0 {
            return None;
        }
        Some(xs.iter().zip(&ys).map(|(x, y)| (y - a - b * x).powi(2)).sum())
    };
    let (mut best_s, mut best) = (f64::NAN, f64::INFINITY);
    for i in 0..=400 {
        let s = 0.05 + 0.005 * i as f64;
        if let Some(v) = sse(s) {
            if v < best {
                best = v;
                best_s = s;
            }
        }
    }
    if !best_s.is_finite() {
        return None;
    }
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (best_s - 0.005, best_s + 0.005);
    let f = |s: f64| sse(s).unwrap_or(f64::INFINITY);
    for _ in 0..40 {
        let (m1, m2) = (hi - g * (hi - lo), lo + g * (hi - lo));
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Largest p with √E(t) ≤ C₀ t^{-p} on t ≥ 1, C₀ = max √E.
pub fn fit_power_law(trace: &EnergyTrace) -> Result<DecayFit> {
    check_contamination(trace)?;
    let se = sqrt_e(trace);
    let pts: Vec<(f64, f64)> = trace.times.iter().zip(&se).filter(|(t, _)| **t > 1.0).map(|(t, s)| (*t, *s)).collect();
    if pts.is_empty() {
        return Err(Error::Range("power-law fit needs samples with t > 1".into()));
    }
    let big = se.iter().cloned().fold(0.0, f64::max);
    let p = pts.iter().map(|(t, s)| (big / s).ln() / t.ln()).fold(f64::INFINITY, f64::min);
    Ok(DecayFit {
        model: DecayModel::PowerLaw { p },
        c0: 1.0,
        big_c0: big,
        s_hat: None,
        residual: 0.0,
        saturated: false,
        c0_at_limit: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralReport {
    pub ks: Vec<usize>,
    /// minimal C per k, infinite when the trace does not decay
    pub c_values: Vec<f64>,
    /// the same on the refined grid
    pub c_refined: Vec<f64>,
    /// max/min of c_values
    pub drift: f64,
    pub stable: bool,
    pub decays: bool,
    /// largest share of the tail estimate in ∫_t^∞ E
    pub tail_share: f64,
}

/// ∫_t^∞ E by trapezoid plus an exponential tail fitted on the last quarter.
fn tail_integrals(trace: &EnergyTrace, t_grid: &[f64]) -> Result<(Vec<f64>, f64, bool)> {
    let n = trace.len();
    let q = 3 * n / 4;
    let lt: Vec<f64> = trace.e[q..].iter().map(|e| e.max(E_FLOOR).ln()).collect();
    let (_, rate) = linear_fit(&trace.times[q..], &lt);
    let last = *trace.e.last().unwrap();
    let top = trace.e.iter().cloned().fold(0.0, f64::max);
    let decays = rate < -1e-3 && last < 1e-2 * top;
    if !decays {
        return Ok((vec![f64::INFINITY; t_grid.len()], 1.0, false));
    }
    let tail = last / -rate;
    let mut out = Vec::with_capacity(t_grid.len());
    let mut share: f64 = 0.0;
    for &t in t_grid {
        let i = trace.times.partition_point(|&s| s < t);
        if i >= n {
            return Err(Error::Range(format!("t = {t} lies past the trace end")));
        }
        let body = trapezoid(&trace.times[i..], &trace.e[i..]);
        let total = body + tail;
        share = share.max(tail / total);
        out.push(total);
    }
    Ok((out, share, true))
}

fn min_constant(ints: &[f64], t_grid: &[f64], seq: &WeightSequence, k: usize, f_norm_sq: f64) -> Result<f64> {
    let lm = seq.ln_m(k)?;
    let kk = k as f64;
    let mut best = f64::NEG_INFINITY;
    for (i, t) in ints.iter().zip(t_grid) {
        let v = (i.ln() + 2.0 * kk * t.ln() - 2.0 * lm - f_norm_sq.ln()) / (2.0 * kk + 2.0);
        best = best.max(v);
    }
    Ok(best.exp())
}

/// Minimal C with ∫_t^∞ E ≤ C^{2k+2} m_k² t^{-2k} ‖f‖² over `t_grid`, per k.
pub fn integral_estimate_check(
    trace: &EnergyTrace,
    seq: &WeightSequence,
    ks: &[usize],
    t_grid: &[f64],
    f_norm_sq: f64,
) -> Result<IntegralReport> {
    if ks.is_empty() || t_grid.is_empty() || !(f_norm_sq > 0.0) {
        return Err(Error::Invalid("need orders, a time grid and nonzero data".into()));
    }
    if t_grid.iter().any(|&t| t < 1.0) {
        return Err(Error::Domain("integral estimates are stated for t >= 1".into()));
    }
    let (ints, share, decays) = tail_integrals(trace, t_grid)?;
    if !decays {
        return Ok(IntegralReport {
            ks: ks.to_vec(),
            c_values: vec![f64::INFINITY; ks.len()],
            c_refined: vec![f64::INFINITY; ks.len()],
            drift: f64::INFINITY,
            stable: false,
            decays: false,
            tail_share: 1.0,
        });
    }
    if share > 0.5 {
        return Err(Error::Range(format!("tail estimate carries {:.0}% of the integral; extend T", 100.0 * share)));
    }
    let mut fine: Vec<f64> = t_grid.to_vec();
    for w in t_grid.windows(2) {
        fine.push(0.5 * (w[0] + w[1]));
    }
    fine.sort_by(f64::total_cmp);
    let (ints_f, _, _) = tail_integrals(trace, &fine)?;
    let mut c_values = Vec::new();
    let mut c_refined = Vec::new();
    for &k in ks {
        c_values.push(min_constant(&ints, t_grid, seq, k, f_norm_sq)?);
        c_refined.push(min_constant(&ints_f, &fine, seq, k, f_norm_sq)?);
    }
    let (lo, hi) = c_values.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &c| (l.min(c), h.max(c)));
    let stable = c_values.iter().zip(&c_refined).all(|(a, b)| (b / a - 1.0).abs() < 0.1);
    Ok(IntegralReport { ks: ks.to_vec(), c_values, c_refined, drift: hi / lo, stable, decays: true, tail_share: share })
}

/// Gaussian bump e^{-(x-c)²/w²} on the grid.
pub fn gaussian_data(grid: &Grid, center: f64, width: f64) -> Vec<C> {
    grid.nodes().iter().map(|&x| C::new((-((x - center) / width).powi(2)).exp(), 0.0)).collect()
}

pub fn l2_norm_sq(grid: &Grid, f: &[C]) -> f64 {
    grid.h * f.iter().map(|c| c.norm_sqr()).sum::<f64>()
}
