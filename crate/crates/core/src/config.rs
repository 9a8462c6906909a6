//! Scenario configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{HamiltonianSpec, DEFAULT_DT};
use crate::error::{Result, TrekError};
use crate::hilbert::{joint_dimension, kron_op, AntiUnitaryOp, Ket, OperatorMatrix, DEFAULT_DIM_CAP};
use crate::protocol::{BobMode, ForwardOrdering, ProjectionMode};
use crate::purify::{harmonic_system, partial_swap_hamiltonian};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum HamiltonianConfig {
    Decoupled,
    Decomposable {
        #[serde(default = "default_terms")]
        terms: usize,
    },
    #[default]
    GenericCoupled,
    /// Joint matrix on system ⊗ pulse, optionally with a separate system part.
    CustomFile {
        path: PathBuf,
        #[serde(default)]
        system_path: Option<PathBuf>,
    },
}

fn default_terms() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum PulseProtocol {
    /// Given pulse states, or seeded random ones when omitted.
    ExplicitStates {
        #[serde(default)]
        states: Option<Vec<Vec<[f64; 2]>>>,
    },
    /// Ground-state pulses with partial-swap coupling to a harmonic system.
    ColdPartialSwap { theta: f64 },
}

impl Default for PulseProtocol {
    fn default() -> Self {
        PulseProtocol::ExplicitStates { states: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseReversal {
    #[default]
    Conjugation,
    /// `iσ_y·K` on each two-level pulse.
    SpinFlip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Engine {
    /// Full state vector, bounded by `dim_cap`.
    #[default]
    Dense,
    /// Sequential contraction; no register-size bound.
    Chain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub system_dim: usize,
    pub pulse_dim: usize,
    pub pulse_count: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hamiltonian: HamiltonianConfig,
    #[serde(default = "default_coupling")]
    pub coupling_strength: f64,
    #[serde(default)]
    pub pulse_protocol: PulseProtocol,
    #[serde(default)]
    pub bob_mode: BobMode,
    #[serde(default)]
    pub projection_mode: ProjectionMode,
    #[serde(default)]
    pub forward_ordering: ForwardOrdering,
    #[serde(default)]
    pub pulse_reversal: PulseReversal,
    #[serde(default)]
    pub engine: Engine,
    #[serde(default)]
    pub tolerances: BTreeMap<String, f64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub initial_state: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub target_index: Option<usize>,
    #[serde(default)]
    pub sweep_seeds: Option<Vec<u64>>,
    #[serde(default = "default_cap")]
    pub dim_cap: usize,
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_coupling() -> f64 {
    1.0
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("trekport-out")
}

fn default_cap() -> usize {
    DEFAULT_DIM_CAP
}

/// Invalid configuration, with the offending field.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("config field `{field}`: {message}")]
pub struct ConfigError {
    pub field: String,
    pub message: String,
}

impl ConfigError {
    fn new(field: &str, message: impl Into<String>) -> Self {
        ConfigError {
            field: field.to_string(),
            message: message.into(),
        }
    }
}

pub fn parse_config(path: &Path) -> std::result::Result<ScenarioConfig, ConfigError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ConfigError::new("<file>", format!("{}: {e}", path.display())))?;
    let mut config = parse_config_str(&text)?;
    // Relative custom-matrix paths are resolved against the config's directory.
    if let HamiltonianConfig::CustomFile { path: p, system_path } = &mut config.hamiltonian {
        let base = path.parent().unwrap_or(Path::new("."));
        if p.is_relative() {
            *p = base.join(&*p);
        }
        if let Some(sp) = system_path {
            if sp.is_relative() {
                *sp = base.join(&*sp);
            }
        }
    }
    Ok(config)
}

pub fn parse_config_str(text: &str) -> std::result::Result<ScenarioConfig, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        ConfigError::new(if field == "." { "<root>" } else { &field }, e.into_inner().to_string())
    })?;
    config.validate()?;
    Ok(config)
}

impl ScenarioConfig {
    /// Defaults for everything but the dimensions; not validated.
    pub fn minimal(system_dim: usize, pulse_dim: usize, pulse_count: usize) -> Self {
        serde_json::from_str(&format!(
            r#"{{"system_dim": {system_dim}, "pulse_dim": {pulse_dim}, "pulse_count": {pulse_count}}}"#
        ))
        .expect("dimensions alone deserialize")
    }

    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        for (name, v) in [("system_dim", self.system_dim), ("pulse_dim", self.pulse_dim)] {
            if v == 0 {
                return Err(ConfigError::new(name, "must be positive"));
            }
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(ConfigError::new("dt", "must be positive and finite"));
        }
        if self.engine == Engine::Dense {
            let dim = joint_dimension(self.system_dim, self.pulse_dim, self.pulse_count);
            if dim > self.dim_cap as u128 {
                return Err(ConfigError::new(
                    "pulse_count",
                    format!(
                        "joint dimension {}·{}^{} = {dim} exceeds the cap {}",
                        self.system_dim, self.pulse_dim, self.pulse_count, self.dim_cap
                    ),
                ));
            }
        }
        match &self.pulse_protocol {
            PulseProtocol::ColdPartialSwap { theta } => {
                if !(*theta > 0.0 && *theta <= std::f64::consts::PI) {
                    return Err(ConfigError::new("pulse_protocol.theta", "must lie in (0, π]"));
                }
                if self.pulse_dim < 2 {
                    return Err(ConfigError::new(
                        "pulse_dim",
                        "partial swaps need at least 2 pulse levels",
                    ));
                }
            }
            PulseProtocol::ExplicitStates { states: Some(states) } => {
                if states.len() != self.pulse_count {
                    return Err(ConfigError::new(
                        "pulse_protocol.states",
                        format!("expected {} states, got {}", self.pulse_count, states.len()),
                    ));
                }
                if states.iter().any(|s| s.len() != self.pulse_dim) {
                    return Err(ConfigError::new(
                        "pulse_protocol.states",
                        "each state needs pulse_dim amplitudes",
                    ));
                }
            }
            PulseProtocol::ExplicitStates { states: None } => {}
        }
        if let Some(s) = &self.initial_state {
            if s.len() != self.system_dim {
                return Err(ConfigError::new("initial_state", "needs system_dim amplitudes"));
            }
        }
        if let Some(p) = self.target_index {
            if p >= self.system_dim {
                return Err(ConfigError::new("target_index", "must be below system_dim"));
            }
        }
        if self.pulse_reversal == PulseReversal::SpinFlip && self.pulse_dim != 2 {
            return Err(ConfigError::new(
                "pulse_reversal",
                "spin-flip reversal needs pulse_dim = 2",
            ));
        }
        if let HamiltonianConfig::Decomposable { terms } = self.hamiltonian {
            if terms == 0 {
                return Err(ConfigError::new("hamiltonian.terms", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn tolerance(&self, key: &str, default: f64) -> f64 {
        self.tolerances.get(key).copied().unwrap_or(default)
    }

    /// Copy with a different seed and output directory.
    pub fn with_seed(&self, seed: u64, output_dir: PathBuf) -> Self {
        ScenarioConfig {
            seed,
            output_dir,
            sweep_seeds: None,
            ..self.clone()
        }
    }

    pub fn build_hamiltonian(&self) -> Result<HamiltonianSpec> {
        if let PulseProtocol::ColdPartialSwap { theta } = self.pulse_protocol {
            return partial_swap_hamiltonian(&harmonic_system(self.system_dim), self.pulse_dim, theta, self.dt);
        }
        let (n, m) = (self.system_dim, self.pulse_dim);
        match &self.hamiltonian {
            HamiltonianConfig::Decoupled => HamiltonianSpec::decoupled(
                crate::dynamics::random_tri_hamiltonian(n, self.seed.wrapping_mul(3), 1.0),
                crate::dynamics::random_tri_hamiltonian(m, self.seed.wrapping_mul(3).wrapping_add(1), 1.0),
            ),
            HamiltonianConfig::Decomposable { terms } => {
                let mut h = HamiltonianSpec::decomposable(n, m, *terms, self.seed)?;
                h.coupling_strength = self.coupling_strength;
                Ok(h)
            }
            HamiltonianConfig::GenericCoupled => {
                HamiltonianSpec::generic_coupled(n, m, self.seed, self.coupling_strength)
            }
            HamiltonianConfig::CustomFile { path, system_path } => {
                let joint = read_real_symmetric(path, n * m)?;
                let system = match system_path {
                    Some(p) => read_real_symmetric(p, n)?,
                    None => OperatorMatrix::zeros(n),
                };
                let interaction = joint.add(&kron_op(&system, &OperatorMatrix::identity(m))?.scaled(-1.0))?;
                let interaction = OperatorMatrix::hermitian(interaction.into_matrix())?;
                HamiltonianSpec::new(system, OperatorMatrix::zeros(m), interaction, 1.0)
            }
        }
    }

    pub fn pulse_reversal_op(&self) -> AntiUnitaryOp {
        match self.pulse_reversal {
            PulseReversal::Conjugation => AntiUnitaryOp::conjugation(self.pulse_dim),
            PulseReversal::SpinFlip => AntiUnitaryOp::spin_flip(),
        }
    }

    pub fn initial_ket(&self) -> Result<Option<Ket>> {
        self.initial_state
            .as_ref()
            .map(|v| Ket::from(v.clone()).normalized())
            .transpose()
    }
}

/// Reads whitespace-separated real rows into a symmetric matrix.
pub fn read_real_symmetric(path: &Path, dim: usize) -> Result<OperatorMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| TrekError::Io(format!("{}: {e}", path.display())))?;
    parse_real_symmetric(&text, dim)
}

pub fn parse_real_symmetric(text: &str, dim: usize) -> Result<OperatorMatrix> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| {
            l.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| TrekError::Io(format!("bad number `{t}`: {e}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(TrekError::DimensionMismatch {
            expected: dim,
            found: rows.len(),
        });
    }
    let m = DMatrix::from_fn(dim, dim, |i, j| rows[i][j]);
    let asym = (&m - m.transpose()).amax();
    if asym > 1e-12 {
        return Err(TrekError::NotHermitian { residual: asym });
    }
    let sym = DMatrix::from_fn(dim, dim, |i, j| if i <= j { m[(i, j)] } else { m[(j, i)] });
    OperatorMatrix::from_real_symmetric(&sym)
}
