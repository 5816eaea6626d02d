//! Versioned plain-text (TOML) experiment configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{YardError, YardResult};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    ThetaCheck,
    Cutoff,
    KernelVerify,
    ResolventSweep,
    BornSeries,
    LapCheck,
    WaveDecay,
}

impl Scenario {
    pub const ALL: [Scenario; 7] = [
        Scenario::ThetaCheck,
        Scenario::Cutoff,
        Scenario::KernelVerify,
        Scenario::ResolventSweep,
        Scenario::BornSeries,
        Scenario::LapCheck,
        Scenario::WaveDecay,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::ThetaCheck => "theta-check",
            Scenario::Cutoff => "cutoff",
            Scenario::KernelVerify => "kernel-verify",
            Scenario::ResolventSweep => "resolvent-sweep",
            Scenario::BornSeries => "born-series",
            Scenario::LapCheck => "lap-check",
            Scenario::WaveDecay => "wave-decay",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileParams {
    pub s: f64,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "one")]
    pub amp: f64,
    /// log exponent β for e^{-r^s log^β r} profiles
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridParams {
    /// "radial", "full-line" or "exterior"
    pub geometry: String,
    pub r: f64,
    pub n: usize,
    #[serde(default = "three")]
    pub d: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
}

/// V = v_amp Θ, b = b_amp Θ e^{-(x - b_center)²}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialParams {
    #[serde(default)]
    pub v_amp: f64,
    #[serde(default)]
    pub b_amp: f64,
    #[serde(default = "three")]
    pub b_center: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepParams {
    #[serde(default = "default_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_eps")]
    pub eps: Vec<f64>,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_ells")]
    pub ells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveParams {
    #[serde(default = "half")]
    pub delta: f64,
    pub t_end: f64,
    pub n_t: usize,
    #[serde(default = "two")]
    pub data_center: f64,
    #[serde(default = "one")]
    pub data_width: f64,
    #[serde(default)]
    pub zero_data: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub scenario: Scenario,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<String>,
    pub profile: ProfileParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub potential: Option<PotentialParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wave: Option<WaveParams>,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn half() -> f64 {
    0.5
}
fn three<T: From<u8>>() -> T {
    T::from(3)
}
fn default_lambdas() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}
fn default_eps() -> Vec<f64> {
    vec![1e-1, 1e-2, 1e-3, 1e-4]
}
fn default_k_max() -> usize {
    4
}
fn default_ells() -> Vec<usize> {
    vec![0, 1]
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> YardResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| YardError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> YardResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| YardError::Usage(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> YardResult<String> {
        toml::to_string(self).map_err(|e| YardError::Config(e.to_string()))
    }

    /// SHA-256 of the canonical (key-sorted) JSON form.
    pub fn content_hash(&self) -> YardResult<String> {
        let v = serde_json::to_value(self).map_err(|e| YardError::Config(e.to_string()))?;
        let canon = serde_json::to_string(&v).map_err(|e| YardError::Config(e.to_string()))?;
        Ok(hex(&Sha256::digest(canon.as_bytes())))
    }

    pub fn validate(&self) -> YardResult<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(YardError::Config(format!("schema {} is not supported (expected {SCHEMA_VERSION})", self.schema)));
        }
        // TOML integers are signed 64-bit
        if self.seed > i64::MAX as u64 {
            return Err(YardError::Config(format!("seed {} does not fit a TOML integer", self.seed)));
        }
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { Err(YardError::Config(format!("{} needs a [{what}] section", self.scenario.name()))) };
        match self.scenario {
            Scenario::ThetaCheck | Scenario::Cutoff | Scenario::KernelVerify => Ok(()),
            Scenario::ResolventSweep | Scenario::LapCheck => need(self.grid.is_some(), "grid"),
            Scenario::BornSeries => need(self.grid.is_some(), "grid"),
            Scenario::WaveDecay => {
                need(self.grid.is_some(), "grid")?;
                need(self.wave.is_some(), "wave")
            }
        }
    }

    /// Built-in configuration used when a subcommand runs without --config.
    pub fn default_for(scenario: Scenario) -> Self {
        let profile = ProfileParams { s: 0.5, c: 1.0, amp: 1.0, beta: None };
        let radial = |r: f64, n: usize| Some(GridParams { geometry: "radial".into(), r, n, d: 3, a: None });
        let pot = Some(PotentialParams { v_amp: 0.5, b_amp: 0.3, b_center: 3.0 });
        let mut cfg = ExperimentConfig {
            schema: SCHEMA_VERSION,
            scenario,
            seed: 7,
            out_dir: None,
            profile,
            grid: None,
            potential: None,
            sweep: None,
            wave: None,
        };
        match scenario {
            Scenario::ThetaCheck | Scenario::KernelVerify => {}
            Scenario::Cutoff => {
                cfg.sweep = Some(SweepParams { lambdas: vec![], eps: vec![], k_max: 20, ells: vec![] });
            }
            Scenario::ResolventSweep => {
                cfg.grid = radial(30.0, 299);
                cfg.potential = pot;
                cfg.sweep = Some(SweepParams { lambdas: default_lambdas(), eps: vec![1e-2], k_max: 4, ells: default_ells() });
            }
            Scenario::BornSeries => {
                cfg.grid = radial(30.0, 299);
                cfg.potential = pot;
                cfg.sweep = Some(SweepParams { lambdas: vec![2.0], eps: vec![], k_max: 0, ells: vec![] });
            }
            Scenario::LapCheck => {
                cfg.grid = radial(2000.0, 19999);
                cfg.profile.s = 1.0;
                cfg.sweep = Some(SweepParams { lambdas: vec![2.0], eps: default_eps(), k_max: 0, ells: vec![] });
            }
            Scenario::WaveDecay => {
                cfg.grid = radial(150.0, 1499);
                cfg.potential = pot;
                cfg.wave = Some(WaveParams { delta: 0.5, t_end: 120.0, n_t: 241, data_center: 2.0, data_width: 1.0, zero_data: false });
            }
        }
        cfg
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
