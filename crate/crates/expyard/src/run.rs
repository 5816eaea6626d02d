//! Scenario pipelines, artifacts and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use decaylab_core::gevrey::{self, ThetaProfile, WeightSequence};
use decaylab_core::kernel;
use decaylab_core::linalg::{dense_norm, NormOpts};
use decaylab_core::operator::*;
use decaylab_core::par::{try_map_range, Exec};
use decaylab_core::quad;
use decaylab_core::special::ln_factorial;
use decaylab_core::wave::{self, EnergyWeight, Filter};
use num_complex::Complex64 as C;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{hex, ExperimentConfig, GridParams, Scenario};
use crate::error::{YardError, YardResult};

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario: Scenario,
    pub config_hash: String,
    pub version: String,
    pub seed: u64,
    pub wall_time_s: f64,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub metrics: BTreeMap<String, f64>,
    pub notes: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> YardResult<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST))?;
        serde_json::from_str(&text).map_err(|e| YardError::Artifact(format!("{}: {e}", dir.display())))
    }

    /// Files whose checksum no longer matches (or that are missing).
    pub fn verify(&self, dir: &Path) -> Vec<String> {
        self.artifacts
            .iter()
            .filter(|a| fs::read(dir.join(&a.file)).map(|b| sha256(&b) != a.sha256).unwrap_or(true))
            .map(|a| a.file.clone())
            .collect()
    }
}

pub fn sha256(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

/// Collects the outputs of one scenario before they are written.
#[derive(Default)]
struct Outcome {
    checks: Vec<Check>,
    metrics: BTreeMap<String, f64>,
    notes: Vec<String>,
    files: Vec<(String, Vec<u8>)>,
}

impl Outcome {
    fn check(&mut self, name: &str, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check { name: name.into(), pass, detail: detail.into() });
    }

    fn metric(&mut self, name: &str, v: f64) {
        self.metrics.insert(name.into(), v);
    }

    fn json<T: Serialize>(&mut self, name: &str, v: &T) -> YardResult<()> {
        let text = serde_json::to_string_pretty(v).map_err(|e| YardError::Artifact(e.to_string()))?;
        self.files.push((name.into(), text.into_bytes()));
        Ok(())
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> YardResult<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| YardError::Artifact(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| YardError::Artifact(e.to_string()))?;
        self.files.push((name.into(), bytes));
        Ok(())
    }
}

/// Output directory: explicit flag, then DECAYLAB_OUT, then the config, then runs/<scenario>-<hash>.
pub fn resolve_out(flag: Option<&Path>, cfg: &ExperimentConfig) -> YardResult<PathBuf> {
    if let Some(p) = flag {
        return Ok(p.to_path_buf());
    }
    if let Ok(p) = std::env::var("DECAYLAB_OUT") {
        if !p.is_empty() {
            return Ok(PathBuf::from(p));
        }
    }
    if let Some(p) = &cfg.out_dir {
        return Ok(PathBuf::from(p));
    }
    Ok(PathBuf::from("runs").join(format!("{}-{}", cfg.scenario.name(), &cfg.content_hash()?[..12])))
}

/// Runs the scenario, writes artifacts and the manifest into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> YardResult<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let name = cfg.scenario.name();
    let wrap = |e: decaylab_core::Error| YardError::Module { scenario: name, source: e };
    let mut o = Outcome::default();
    match cfg.scenario {
        Scenario::ThetaCheck => theta_check(cfg, &mut o).map_err(wrap)?,
        Scenario::Cutoff => cutoff(cfg, &mut o).map_err(wrap)?,
        Scenario::KernelVerify => kernel_verify(&mut o).map_err(wrap)?,
        Scenario::ResolventSweep => resolvent_sweep(cfg, &mut o).map_err(wrap)?,
        Scenario::BornSeries => born(cfg, &mut o).map_err(wrap)?,
        Scenario::LapCheck => lap(cfg, &mut o).map_err(wrap)?,
        Scenario::WaveDecay => wave_decay(cfg, &mut o)?,
    }
    o.files.push(("config.toml".into(), cfg.to_text()?.into_bytes()));
    o.files.sort_by(|a, b| a.0.cmp(&b.0));

    fs::create_dir_all(out)?;
    let mut artifacts = Vec::new();
    for (file, bytes) in &o.files {
        fs::write(out.join(file), bytes)?;
        artifacts.push(Artifact { file: file.clone(), sha256: sha256(bytes) });
    }
    let manifest = RunManifest {
        scenario: cfg.scenario,
        config_hash: cfg.content_hash()?,
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        wall_time_s: start.elapsed().as_secs_f64(),
        passed: o.checks.iter().all(|c| c.pass),
        checks: o.checks,
        metrics: o.metrics,
        notes: o.notes,
        artifacts,
    };
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| YardError::Artifact(e.to_string()))?;
    fs::write(out.join(MANIFEST), text)?;
    Ok(manifest)
}

type R<T> = decaylab_core::Result<T>;

fn profile(cfg: &ExperimentConfig) -> R<ThetaProfile> {
    let p = &cfg.profile;
    match p.beta {
        Some(beta) => ThetaProfile::exp_power_log(p.s, beta, p.c, p.amp),
        None => ThetaProfile::exp_power(p.s, p.c, p.amp),
    }
}

fn grid(g: &GridParams) -> R<Grid> {
    let geometry = match g.geometry.as_str() {
        "radial" => Geometry::Radial { r: g.r },
        "full-line" => Geometry::FullLine { r: g.r },
        "exterior" => Geometry::Exterior { a: g.a.unwrap_or(1.0), r: g.r },
        other => return Err(decaylab_core::Error::Invalid(format!("unknown geometry {other}"))),
    };
    Grid::new(geometry, g.n, g.d as u32)
}

/// (free, perturbed) operators; exterior grids are case b with b = 0.
fn operators(cfg: &ExperimentConfig) -> R<(Grid, DiscreteOperator, DiscreteOperator)> {
    let prof = profile(cfg)?;
    let g = grid(cfg.grid.as_ref().unwrap())?;
    let case = if matches!(g.geometry, Geometry::Exterior { .. }) { Case::B } else { Case::A };
    let pp = cfg.potential.clone().unwrap_or(crate::config::PotentialParams { v_amp: 0.0, b_amp: 0.0, b_center: 3.0 });
    let th = |x: f64| prof.theta(x.abs()).unwrap_or(0.0);
    let b_amp = if case == Case::B { 0.0 } else { pp.b_amp };
    let pot = PotentialSpec::from_fn(&g, |x| pp.v_amp * th(x), |x| b_amp * th(x) * (-(x - pp.b_center).powi(2)).exp(), prof.clone(), case)?;
    let op = build_operator(&g, &pot)?;
    let free_grid = match g.geometry {
        Geometry::Exterior { r, .. } => Grid::new(Geometry::Radial { r }, ((r / g.h).round() as usize).saturating_sub(1), 3)?,
        _ => g,
    };
    let free = build_operator(&free_grid, &PotentialSpec::free(&free_grid, prof, Case::A)?)?;
    Ok((g, free, op))
}

fn theta_check(cfg: &ExperimentConfig, o: &mut Outcome) -> R<()> {
    let prof = profile(cfg)?;
    let rs: Vec<f64> = (0..=2000).map(|i| 0.1 * i as f64).collect();
    let pairs: Vec<(f64, f64)> = (0..40).flat_map(|i| (0..40).map(move |j| (2.5 * i as f64, 2.5 * j as f64))).collect();
    let rep = gevrey::check_theta_conditions(&prof, &rs, &pairs)?;
    o.metric("c_tilde", rep.c_tilde);
    if let Some(c2) = rep.best_c2 {
        o.metric("best_c2", c2);
    }
    o.check("theta-conditions", !rep.violation, format!("C~ = {}, best C2 = {:?}", rep.c_tilde, rep.best_c2));
    o.json("theta.json", &rep).map_err(|e| decaylab_core::Error::Numerical(e.to_string()))
}

#[derive(Serialize)]
struct CutoffRow {
    k: usize,
    sup: f64,
    normalized: f64,
}

fn cutoff(cfg: &ExperimentConfig, o: &mut Outcome) -> R<()> {
    let s = cfg.profile.s;
    let cut = gevrey::build_cutoff(s)?;
    let k_max = cfg.sweep.as_ref().map_or(20, |w| w.k_max);
    let mass: f64 = [0.5, 0.75, 1.75, 2.0].windows(2).map(|w| quad::integrate(|x| cut.zeta(x), w[0], w[1], 1e-13)).sum();
    o.metric("integral", mass);
    o.check("unit-mass", (mass - 1.0).abs() < 1e-10, format!("∫ζ = {mass}"));
    let rows = try_map_range(k_max + 1, Exec::Parallel, |k| {
        let sup = gevrey::cutoff_deriv_sup(&cut, k, 400)?;
        let normalized = ((sup.ln() - ln_factorial(k) / s) / (k as f64 + 1.0)).exp();
        Ok(CutoffRow { k, sup, normalized })
    })?;
    let (lo, hi) = rows.iter().fold((f64::INFINITY, 0.0f64), |(l, h), r| (l.min(r.normalized), h.max(r.normalized)));
    o.metric("ratio", hi / lo);
    o.check("normalized-ratio", hi / lo <= 5.0, format!("max/min = {:.3}", hi / lo));
    o.csv("cutoff.csv", &rows).map_err(|e| decaylab_core::Error::Numerical(e.to_string()))
}

fn kernel_verify(o: &mut Outcome) -> R<()> {
    let g = Grid::new(Geometry::Radial { r: 40.0 }, 2000, 3)?;
    let prof = ThetaProfile::exp_power(0.5, 1.0, 1.0)?;
    let op = build_operator(&g, &PotentialSpec::free(&g, prof, Case::A)?)?;
    let (lam, j0) = (1.0, 1);
    let r0 = g.x(j0);
    let mut rhs = vec![C::new(0.0, 0.0); g.n];
    rhs[j0] = C::new(1.0 / g.h, 0.0);
    let w = resolvent_apply(&op, C::new(lam, 0.0), &rhs, &Boundary::Radiation)?;
    let mut worst: f64 = 0.0;
    for j in [100, 500, 1000, 1500] {
        let r = g.x(j);
        let k = kernel::free_kernel_odd(3, C::new(lam, 0.0), r)?;
        let from_grid = w[j].norm() * lam / (lam * r0).sin();
        worst = worst.max((from_grid - k.norm() * 4.0 * std::f64::consts::PI * r).abs());
    }
    o.metric("kernel_deviation", worst);
    o.check("d3-kernel", worst < 1e-3, format!("max ||K0| 4πr - grid| = {worst:.2e}"));
    let n = 2048;
    let t = 0.2 * std::f64::consts::PI * n as f64 / 32.0;
    let hy = kernel::huygens_residual(3, t, n)?;
    o.metric("huygens_interior_mass", hy);
    o.check("d3-huygens", hy < 1e-3, format!("interior mass {hy:.2e}"));
    let prof2 = kernel::calibrate_cd(2, 256)?;
    o.metric("d2_shape_residual", prof2.residual);
    o.check("d2-profile", prof2.residual < 1e-2, format!("shape residual {:.2e}, C_2 = {}", prof2.residual, prof2.c_d));
    Ok(())
}

fn resolvent_sweep(cfg: &ExperimentConfig, o: &mut Outcome) -> R<()> {
    let (g, _, op) = operators(cfg)?;
    let sweep = cfg.sweep.clone().unwrap_or(crate::config::SweepParams {
        lambdas: vec![1.0, 2.0, 4.0, 8.0],
        eps: vec![1e-2],
        k_max: 4,
        ells: vec![0, 1],
    });
    let sd = SpectralDecomposition::new(&op)?;
    let mu = g.mu(&op.profile)?;
    let opts = NormOpts { seed: cfg.seed, ..NormOpts::default() };
    let mut jobs = Vec::new();
    for &l in &sweep.lambdas {
        for &e in &sweep.eps {
            for &ell in &sweep.ells {
                for k in 0..=sweep.k_max {
                    jobs.push((l, e, ell, k));
                }
            }
        }
    }
    let case = if op.case == Case::A { "a" } else { "b" };
    let rows = try_map_range(jobs.len(), Exec::Parallel, |i| {
        let (l, e, ell, k) = jobs[i];
        let d = weighted_resolvent_deriv_norm(&op, C::new(l, 0.0), ell, k, &mu, NormMode::Spectral { decomp: &sd, eps: e }, opts)?;
        Ok((
            SweepRow { lambda: l, eps: e, ell, k, log_norm: d.ln_norm, bc_mode: "spectral".into(), case: case.into() },
            d.converged,
        ))
    })?;
    let all_ok = rows.iter().all(|(r, c)| *c && r.log_norm.is_finite());
    o.check("norms-converged", all_ok, format!("{} norms", rows.len()));
    o.metric("rows", rows.len() as f64);
    let rows: Vec<SweepRow> = rows.into_iter().map(|r| r.0).collect();
    o.csv("sweep.csv", &rows).map_err(|e| decaylab_core::Error::Numerical(e.to_string()))
}

fn born(cfg: &ExperimentConfig, o: &mut Outcome) -> R<()> {
    let (_, free, op) = operators(cfg)?;
    let z = cfg.sweep.as_ref().and_then(|s| s.lambdas.first().copied()).unwrap_or(2.0);
    let opts = BornOptions::default();
    let gamma = auto_gamma(&free, &op, z, 1.0, &opts)?;
    let lam = z + gamma / 2.0;
    let b = born_series_assemble(&free, &op, z, lam, gamma, &opts)?;
    let direct = direct_weighted_resolvent(&op, C::new(lam, 0.0), &opts.layer())?;
    let scale = dense_norm(&direct)?;
    let rel = dense_norm(&(&b.y - &direct))? / scale;
    let b2 = born_series_assemble(&free, &op, z + gamma / 4.0, lam, gamma, &opts)?;
    let anchor = dense_norm(&(&b.y - &b2.y))? / scale;
    o.metric("gamma", gamma);
    o.metric("relative_error", rel);
    o.metric("anchor_shift", anchor);
    o.metric("contraction", b.contraction());
    o.check("matches-direct", rel < 1e-7, format!("relative {rel:.2e} at λ = {lam}, γ = {gamma}"));
    o.check("anchor-independent", anchor < 1e-7, format!("{anchor:.2e}"));
    Ok(())
}

fn lap(cfg: &ExperimentConfig, o: &mut Outcome) -> R<()> {
    let (_, _, op) = operators(cfg)?;
    let sweep = cfg.sweep.clone().unwrap();
    let lam = sweep.lambdas.first().copied().unwrap_or(2.0);
    let rep = lap_continuity_check(&op, lam, &sweep.eps, cfg.profile.s, &Boundary::Radiation)?;
    o.metric("theta", rep.theta);
    o.metric("limit_mismatch", rep.limit_mismatch);
    o.check("holder", rep.pass && rep.theta > 0.3, format!("θ = {:.3}, Cauchy = {}", rep.theta, rep.cauchy));
    o.check("radiation-limit", rep.limit_mismatch < 1e-2, format!("{:.2e}", rep.limit_mismatch));
    o.json("lap.json", &rep).map_err(|e| decaylab_core::Error::Numerical(e.to_string()))
}

#[derive(Serialize)]
struct TraceRow {
    t: f64,
    e: f64,
    e_dt_term: f64,
    e_grad_term: f64,
    e_mass_term: f64,
}

#[derive(Serialize)]
struct FitRecord {
    c0: f64,
    big_c0: f64,
    s_hat: Option<f64>,
    residual: f64,
    t_max: f64,
    filter_delta: f64,
}

fn wave_decay(cfg: &ExperimentConfig, o: &mut Outcome) -> YardResult<()> {
    let wrap = |e: decaylab_core::Error| YardError::Module { scenario: "wave-decay", source: e };
    let w = cfg.wave.clone().unwrap();
    let (g, _, op) = operators(cfg).map_err(wrap)?;
    let prof = profile(cfg).map_err(wrap)?;
    let mu = EnergyWeight::from_profile(&g, &prof).map_err(wrap)?;
    let f1 = if w.zero_data { vec![C::new(0.0, 0.0); g.n] } else { wave::gaussian_data(&g, w.data_center, w.data_width) };
    let f2 = vec![C::new(0.0, 0.0); g.n];
    let times: Vec<f64> = (0..w.n_t).map(|i| w.t_end * i as f64 / (w.n_t.max(2) - 1) as f64).collect();
    let cut = gevrey::build_cutoff(0.5).map_err(wrap)?;
    let filter = Filter::new(w.delta, cut).map_err(wrap)?;
    let sd = SpectralDecomposition::new(&op).map_err(wrap)?;
    let mut tr = wave::energy_trace(&sd, &op, &f1, &f2, &times, Some(&filter), &mu, Exec::Parallel).map_err(wrap)?;
    let t_max = wave::reflection_horizon(&g, &mu, &f1);
    tr.meta.t_max = Some(t_max);
    let rows: Vec<TraceRow> = (0..tr.len())
        .map(|i| TraceRow { t: tr.times[i], e: tr.e[i], e_dt_term: tr.e_dt[i], e_grad_term: tr.e_grad[i], e_mass_term: tr.e_mass[i] })
        .collect();
    o.csv("trace.csv", &rows)?;
    o.metric("t_max", t_max);
    if tr.e.iter().all(|&e| e == 0.0) {
        o.notes.push("fit skipped: the trace is identically zero".into());
        return Ok(());
    }
    let seq = WeightSequence::for_profile(&prof, 400).map_err(wrap)?;
    match wave::fit_decay(&tr, &seq) {
        Ok(fit) => {
            o.metric("c0", fit.c0);
            o.metric("big_c0", fit.big_c0);
            if let Some(s) = fit.s_hat {
                o.metric("s_hat", s);
            }
            let s_ok = fit.s_hat.is_some_and(|s| s >= 0.8 * cfg.profile.s);
            o.check("envelope", true, format!("c0 = {:.4}, C0 = {:.4}", fit.c0, fit.big_c0));
            o.check("exponent", s_ok || fit.saturated, format!("s_hat = {:?}", fit.s_hat));
            o.json(
                "fit.json",
                &FitRecord { c0: fit.c0, big_c0: fit.big_c0, s_hat: fit.s_hat, residual: fit.residual, t_max, filter_delta: w.delta },
            )?;
        }
        Err(e @ decaylab_core::Error::Contaminated(_)) => o.check("envelope", false, e.to_string()),
        Err(e) => return Err(wrap(e)),
    }
    Ok(())
}

/// Every manifest directly in `dir` or one level below it.
pub fn find_runs(dir: &Path) -> YardResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    if dir.join(MANIFEST).is_file() {
        out.push(dir.to_path_buf());
    }
    let mut subs: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.join(MANIFEST).is_file()).collect();
    subs.sort();
    out.extend(subs);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub run: String,
    pub scenario: String,
    pub passed: bool,
    pub checks: usize,
    pub failed: String,
    pub artifacts_ok: bool,
}

/// Reads manifests and checks artifacts; nothing is written.
pub fn summarize(dir: &Path) -> YardResult<Vec<SummaryRow>> {
    let mut rows = Vec::new();
    for run in find_runs(dir)? {
        let m = RunManifest::load(&run)?;
        let bad = m.verify(&run);
        rows.push(SummaryRow {
            run: run.display().to_string(),
            scenario: m.scenario.name().into(),
            passed: m.passed,
            checks: m.checks.len(),
            failed: m.checks.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect::<Vec<_>>().join(";"),
            artifacts_ok: bad.is_empty(),
        });
    }
    Ok(rows)
}

pub fn summary_csv(rows: &[SummaryRow]) -> YardResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| YardError::Artifact(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| YardError::Artifact(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| YardError::Artifact(e.to_string()))
}

pub fn summary_text(rows: &[SummaryRow]) -> String {
    let mut s = format!("{:<40} {:<16} {:<6} {}\n", "run", "scenario", "status", "failed checks");
    for r in rows {
        let status = if r.passed && r.artifacts_ok { "PASS" } else { "FAIL" };
        let failed = if r.artifacts_ok { r.failed.clone() } else { format!("{} artifact-checksum", r.failed) };
        s.push_str(&format!("{:<40} {:<16} {:<6} {}\n", r.run, r.scenario, status, failed.trim()));
    }
    let n_pass = rows.iter().filter(|r| r.passed && r.artifacts_ok).count();
    s.push_str(&format!("{n_pass}/{} runs pass\n", rows.len()));
    s
}
