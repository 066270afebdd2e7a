//! TOML configuration with one section per module.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analytic::ChannelParams;
use crate::error::{Error, Result};
use crate::optimizer::OptimizerSettings;
use crate::scenario::Scenario;
use crate::simulator::SimulatorSettings;
use crate::traffic::TrafficParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    pub k_users: usize,
    /// Number of orthogonal preambles.
    pub m_pre: usize,
    pub w_hz: f64,
    /// Power-control target at the receiver.
    pub p0_dbm: f64,
    pub noise_dbm: f64,
    /// Payload of one short packet.
    pub b_bits: f64,
    /// Per-attempt propagation and processing overhead.
    pub d_p_ms: f64,
    /// Fixed TTIs of the baseline schemes.
    #[serde(default = "default_baselines")]
    pub baseline_ttis_ms: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_baselines() -> Vec<f64> {
    vec![1.0, 0.5]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    /// Packet arrival rate (packets/s).
    pub lambda_rate: f64,
    /// Arrival window (s); the mean batch size is `lambda_rate * t_max_s`.
    #[serde(default = "default_t_max")]
    pub t_max_s: f64,
    /// Buffer size; arrivals beyond it are dropped.
    pub q_th: usize,
    /// Optional cap on packets per batch. Only `q_th` is supported.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max_packets: Option<usize>,
}

fn default_t_max() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub k_grid: Vec<usize>,
    pub b_grid: Vec<f64>,
    pub lambda_list: Vec<f64>,
    /// Blocklengths (symbols) for the success-probability sweep.
    pub n_grid: Vec<f64>,
    pub success_k_grid: Vec<usize>,
    /// Slots per user for the simulated check of each adaptive point;
    /// 0 disables it.
    pub sim_horizon: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        Self {
            k_grid: (1..=10).map(|i| 5 * i).collect(),
            b_grid: (1..=8).map(|i| 50.0 * i as f64).collect(),
            lambda_list: vec![0.2, 0.4],
            n_grid: (1..=40).map(|i| 50.0 * i as f64).collect(),
            success_k_grid: vec![5, 10, 20, 50],
            sim_horizon: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub system: SystemSection,
    pub traffic: TrafficSection,
    #[serde(default)]
    pub optimizer: OptimizerSettings,
    #[serde(default)]
    pub simulator: SimulatorSettings,
    #[serde(default)]
    pub experiment: ExperimentSettings,
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be a finite value > 0, got {v}")))
    }
}

fn non_negative(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::config(key, format!("must be a finite value >= 0, got {v}")))
    }
}

fn at_least_one(key: &str, v: u64) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::config(key, "must be >= 1"))
    }
}

fn non_empty<T>(key: &str, v: &[T]) -> Result<()> {
    if v.is_empty() {
        Err(Error::config(key, "must not be empty"))
    } else {
        Ok(())
    }
}

/// Turn a serde error into a key path. Missing fields are reported at the
/// parent, so the field name is appended.
fn key_path(path: &serde_path_to_error::Path, message: &str) -> String {
    let mut key = path.to_string();
    if key == "." {
        key.clear();
    }
    if let Some(rest) = message.split("missing field `").nth(1) {
        if let Some(field) = rest.split('`').next() {
            if key.is_empty() {
                key = field.to_string();
            } else {
                key = format!("{key}.{field}");
            }
        }
    }
    if key.is_empty() {
        "<root>".to_string()
    } else {
        key
    }
}

impl SystemConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(text)
            .map_err(|e| Error::config("<root>", e.to_string().trim().to_string()))?;
        let cfg: SystemConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let message = e.inner().to_string().trim().to_string();
            Error::config(key_path(e.path(), &message), message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("<root>", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?).map_err(|e| Error::io(path, e))
    }

    /// Hex SHA-256 of the serialized config.
    pub fn hash(&self) -> Result<String> {
        let text = self.to_toml_string()?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        at_least_one("system.k_users", s.k_users as u64)?;
        at_least_one("system.m_pre", s.m_pre as u64)?;
        positive("system.w_hz", s.w_hz)?;
        if !s.p0_dbm.is_finite() {
            return Err(Error::config("system.p0_dbm", "must be finite"));
        }
        if !s.noise_dbm.is_finite() {
            return Err(Error::config("system.noise_dbm", "must be finite"));
        }
        positive("system.b_bits", s.b_bits)?;
        non_negative("system.d_p_ms", s.d_p_ms)?;
        non_empty("system.baseline_ttis_ms", &s.baseline_ttis_ms)?;
        for &t in &s.baseline_ttis_ms {
            positive("system.baseline_ttis_ms", t)?;
        }

        let t = &self.traffic;
        non_negative("traffic.lambda_rate", t.lambda_rate)?;
        positive("traffic.t_max_s", t.t_max_s)?;
        if let Some(q_max) = t.q_max_packets {
            if q_max != t.q_th {
                return Err(Error::config(
                    "traffic.q_max_packets",
                    format!("only q_max_packets = q_th ({}) is supported, got {q_max}", t.q_th),
                ));
            }
        }

        let o = &self.optimizer;
        positive("optimizer.omega", o.omega)?;
        positive("optimizer.tau", o.tau)?;
        positive("optimizer.tol_inner", o.tol_inner)?;
        positive("optimizer.primal_tol", o.primal_tol)?;
        non_negative("optimizer.tol_outer_s", o.tol_outer_s)?;
        at_least_one("optimizer.max_inner", o.max_inner as u64)?;
        at_least_one("optimizer.max_outer", o.max_outer as u64)?;
        positive("optimizer.n_min", o.n_min)?;
        positive("optimizer.n_max", o.n_max)?;
        if o.n_max <= o.n_min {
            return Err(Error::config("optimizer.n_max", "must exceed optimizer.n_min"));
        }
        at_least_one("optimizer.golden_iters", o.golden_iters as u64)?;
        if o.scan_points < 2 {
            return Err(Error::config("optimizer.scan_points", "must be >= 2"));
        }
        positive("optimizer.n0_tti_ms", o.n0_tti_ms)?;
        if let Some(eps) = o.fixed_epsilon {
            if !(eps > 0.0 && eps < 1.0) {
                return Err(Error::config("optimizer.fixed_epsilon", "must lie in (0, 1)"));
            }
        }

        let m = &self.simulator;
        at_least_one("simulator.horizon", m.horizon)?;
        at_least_one("simulator.replications", m.replications as u64)?;
        at_least_one("simulator.cr_max_retx", m.cr_max_retx as u64)?;

        let e = &self.experiment;
        non_empty("experiment.k_grid", &e.k_grid)?;
        if e.k_grid.contains(&0) {
            return Err(Error::config("experiment.k_grid", "entries must be >= 1"));
        }
        non_empty("experiment.success_k_grid", &e.success_k_grid)?;
        if e.success_k_grid.contains(&0) {
            return Err(Error::config("experiment.success_k_grid", "entries must be >= 1"));
        }
        non_empty("experiment.b_grid", &e.b_grid)?;
        for &b in &e.b_grid {
            positive("experiment.b_grid", b)?;
        }
        non_empty("experiment.lambda_list", &e.lambda_list)?;
        for &l in &e.lambda_list {
            non_negative("experiment.lambda_list", l)?;
        }
        non_empty("experiment.n_grid", &e.n_grid)?;
        for &n in &e.n_grid {
            positive("experiment.n_grid", n)?;
        }
        Ok(())
    }

    /// Resolved scenario in linear units.
    pub fn scenario(&self) -> Result<Scenario> {
        let s = &self.system;
        let channel = ChannelParams::from_dbm(s.p0_dbm, s.noise_dbm)?;
        let traffic = TrafficParams::new(self.traffic.lambda_rate, self.traffic.t_max_s, self.traffic.q_th)?;
        let sc = Scenario {
            channel,
            traffic,
            k_users: s.k_users,
            m_pre: s.m_pre,
            w_hz: s.w_hz,
            b_bits: s.b_bits,
            d_p_s: s.d_p_ms * 1e-3,
        };
        sc.validate()?;
        Ok(sc)
    }
}
