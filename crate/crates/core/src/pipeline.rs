//! End-to-end runs driven by a [`ScenarioConfig`].

use serde::{Deserialize, Serialize};

use crate::analysis::{
    mixed_fidelity, schmidt_coefficients, teleportable_subspace, verify_separable_coefficients, CoefficientStructure,
    FidelityMode, SchmidtReport, SubspaceReport,
};
use crate::chain::ChainRegister;
use crate::classify::{apply_bob_inverse, classify_type, ClassificationResult, ClassifyOptions, DEFAULT_THRESHOLD};
use crate::config::{ConfigError, Engine, PulseProtocol, ScenarioConfig};
use crate::dynamics::{CycleOperators, HamiltonianSpec};
use crate::error::TrekError;
use crate::hilbert::{inner_product, system_state, AntiUnitaryOp, DensityMatrix, Ket, SpaceSpec};
use crate::memory::{teleport_memory, RecallOrder};
use crate::protocol::{
    alice_run, bob_forward_register, bob_inverse_register, classical_project_report, compare_forward_orderings,
    select_outcome, BobMode, ForwardOrdering, OrderingReport, PulseTrain,
};
use crate::purify::{EnergyBasis, PurificationTrace, DEFAULT_CONVERGENCE_TOL};
use crate::random::{random_ket, seeded_rng, SeededRng};
use crate::trace::{ProtocolTrace, SCHEMA_VERSION};

/// Failure of a configured run, split by exit status.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] TrekError),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Protocol(_) => 1,
        }
    }
}

pub type PipelineResult<T> = std::result::Result<T, PipelineError>;

/// Density matrix as rows of `[re, im]` pairs.
pub type MatrixRows = Vec<Vec<[f64; 2]>>;

fn matrix_rows(rho: &DensityMatrix) -> MatrixRows {
    let m = rho.matrix();
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurificationSummary {
    pub converged_at: Option<usize>,
    pub final_target_overlap: f64,
    pub final_energy: f64,
    pub target_energy: f64,
    /// `|⟨initial register| O_A⁻¹ |final register⟩|`.
    pub reversibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub mode: BobMode,
    pub engine: Engine,
    pub forward_ordering: ForwardOrdering,
    pub initial_state: Ket,
    pub alice_final_index: Option<usize>,
    pub outcome_probability: f64,
    /// Bob's reduced system state.
    pub bob_final_state: MatrixRows,
    pub bob_purity: f64,
    pub fidelity_to_conjugate: f64,
    pub fidelity_to_original: f64,
    /// Forward orderings against the reversed inverse output (dense forward runs only).
    pub ordering: Option<OrderingReport>,
    pub purification: Option<PurificationSummary>,
    pub trace: ProtocolTrace,
    #[serde(skip)]
    pub purification_trace: Option<PurificationTrace>,
}

/// Hamiltonian, operators and inputs resolved from a config.
pub struct Scenario {
    pub config: ScenarioConfig,
    pub hamiltonian: HamiltonianSpec,
    pub operators: CycleOperators,
    pub upsilon0: Ket,
    pub train: PulseTrain,
    rng: SeededRng,
}

impl Scenario {
    pub fn resolve(config: &ScenarioConfig) -> PipelineResult<Self> {
        config.validate()?;
        let hamiltonian = config.build_hamiltonian().map_err(|e| match e {
            TrekError::Precondition(_) | TrekError::TimeReversalViolated { .. } => PipelineError::Protocol(e),
            other => PipelineError::Config(ConfigError {
                field: "hamiltonian".into(),
                message: other.to_string(),
            }),
        })?;
        let operators = CycleOperators::new(&hamiltonian, config.dt)?;
        let mut rng = seeded_rng(config.seed);
        let drawn = random_ket(config.system_dim, &mut rng);
        let upsilon0 = config
            .initial_ket()
            .map_err(|e| ConfigError {
                field: "initial_state".into(),
                message: e.to_string(),
            })?
            .unwrap_or(drawn);
        let train = match &config.pulse_protocol {
            PulseProtocol::ColdPartialSwap { .. } => PulseTrain::cold(config.pulse_dim, config.pulse_count),
            PulseProtocol::ExplicitStates { states } => {
                let kets = match states {
                    Some(s) => s
                        .iter()
                        .map(|v| Ket::from(v.clone()).normalized())
                        .collect::<crate::Result<Vec<_>>>()
                        .map_err(|e| ConfigError {
                            field: "pulse_protocol.states".into(),
                            message: e.to_string(),
                        })?,
                    None => (0..config.pulse_count)
                        .map(|_| random_ket(config.pulse_dim, &mut rng))
                        .collect(),
                };
                PulseTrain::new(kets, config.pulse_dim)?
            }
        };
        Ok(Scenario {
            config: config.clone(),
            hamiltonian,
            operators,
            upsilon0,
            train,
            rng,
        })
    }

    pub fn spec(&self) -> PipelineResult<SpaceSpec> {
        let c = &self.config;
        Ok(SpaceSpec::with_cap(
            c.system_dim,
            c.pulse_dim,
            c.pulse_count,
            c.dim_cap,
        )?)
    }

    fn reversals(&self) -> (AntiUnitaryOp, AntiUnitaryOp) {
        (
            AntiUnitaryOp::conjugation(self.config.system_dim),
            self.config.pulse_reversal_op(),
        )
    }

    fn target_index(&self) -> usize {
        self.config.target_index.unwrap_or(0)
    }

    fn purifies(&self) -> bool {
        matches!(self.config.pulse_protocol, PulseProtocol::ColdPartialSwap { .. })
    }
}

struct BobOutcome {
    index: usize,
    probability: f64,
    system: DensityMatrix,
    trace: ProtocolTrace,
    ordering: Option<OrderingReport>,
    reversibility: f64,
}

/// Alice's cycles, the classical report, the memory transfer and Bob's
/// reconstruction, followed by the fidelity analysis.
pub fn run_full_pipeline(config: &ScenarioConfig) -> PipelineResult<PipelineReport> {
    let mut scenario = Scenario::resolve(config)?;
    let (t_sys, t_phi) = scenario.reversals();
    if config.bob_mode == BobMode::ForwardEmulation {
        scenario.hamiltonian.require_time_reversal_invariant(&t_sys, &t_phi)?;
    }
    let outcome = match config.engine {
        Engine::Dense => run_dense(&mut scenario, &t_sys, &t_phi)?,
        Engine::Chain => run_chain(&mut scenario, &t_sys, &t_phi)?,
    };
    let purification_trace = if scenario.purifies() {
        let chain = ChainRegister::alice(&scenario.upsilon0, &scenario.train, &scenario.operators)?;
        let h_sys = &scenario.hamiltonian.system_part;
        Some(PurificationTrace::from_states(
            &chain.system_states(),
            h_sys,
            &EnergyBasis::new(h_sys)?,
            scenario.target_index(),
            config.tolerance("convergence", DEFAULT_CONVERGENCE_TOL),
        ))
    } else {
        None
    };
    let purification = purification_trace.as_ref().map(|t| {
        let last = t.final_record().expect("trace holds the initial record");
        PurificationSummary {
            converged_at: t.converged_at,
            final_target_overlap: last.target_overlap,
            final_energy: last.energy,
            target_energy: t.target_energy,
            reversibility: outcome.reversibility,
        }
    });
    Ok(PipelineReport {
        schema_version: SCHEMA_VERSION,
        mode: config.bob_mode,
        engine: config.engine,
        forward_ordering: config.forward_ordering,
        initial_state: scenario.upsilon0.clone(),
        alice_final_index: Some(outcome.index),
        outcome_probability: outcome.probability,
        bob_final_state: matrix_rows(&outcome.system),
        bob_purity: outcome.system.purity(),
        fidelity_to_conjugate: mixed_fidelity(&scenario.upsilon0, &outcome.system, FidelityMode::Conjugate)?,
        fidelity_to_original: mixed_fidelity(&scenario.upsilon0, &outcome.system, FidelityMode::Direct)?,
        ordering: outcome.ordering,
        purification,
        trace: outcome.trace,
        purification_trace,
    })
}

fn run_dense(s: &mut Scenario, t_sys: &AntiUnitaryOp, t_phi: &AntiUnitaryOp) -> PipelineResult<BobOutcome> {
    let spec = s.spec()?;
    let c = s.config.clone();
    let h = &s.hamiltonian;
    let ops = &s.operators;
    let alice = alice_run(&s.upsilon0, &s.train, h, c.dt)?;
    let undone = apply_bob_inverse(&alice.register, ops, &spec)?;
    let initial = s.train.register(&s.upsilon0, spec.cap())?;
    let reversibility = inner_product(&initial, &undone)?.norm();
    let projection = classical_project_report(&alice.register, &spec, c.projection_mode, Some(&mut s.rng))?;
    let mem = teleport_memory(alice.memory)?;
    let mut trace = alice.trace;
    let (bob, ordering) = match c.bob_mode {
        BobMode::Inverse => (
            bob_inverse_register(projection.collapsed, mem, ops, &h.system_part, RecallOrder::Filo)?,
            None,
        ),
        BobMode::ForwardEmulation => {
            let ordering = if c.pulse_count > 0 {
                Some(compare_forward_orderings(
                    &projection.collapsed,
                    &mem,
                    h,
                    ops,
                    t_sys,
                    t_phi,
                )?)
            } else {
                None
            };
            let run = bob_forward_register(projection.collapsed, mem, h, ops, t_sys, t_phi, c.forward_ordering)?;
            (run, ordering)
        }
    };
    trace.append(&bob.trace);
    Ok(BobOutcome {
        index: projection.index,
        probability: projection.probability,
        system: system_state(&bob.register, c.system_dim)?,
        trace,
        ordering,
        reversibility,
    })
}

fn run_chain(s: &mut Scenario, t_sys: &AntiUnitaryOp, t_phi: &AntiUnitaryOp) -> PipelineResult<BobOutcome> {
    let c = s.config.clone();
    if c.bob_mode == BobMode::ForwardEmulation && c.forward_ordering == ForwardOrdering::Printed {
        return Err(ConfigError {
            field: "forward_ordering".into(),
            message: "the chain engine supports only the reordered form".into(),
        }
        .into());
    }
    let h = &s.hamiltonian;
    let ops = &s.operators;
    let chain = ChainRegister::alice(&s.upsilon0, &s.train, ops)?;
    let rho = chain.final_system_state();
    let probs: Vec<f64> = (0..c.system_dim).map(|i| rho.matrix()[(i, i)].re.max(0.0)).collect();
    let index = select_outcome(&probs, c.projection_mode, Some(&mut s.rng))?;
    let beta = Ket::basis(c.system_dim, index);
    let bob = match c.bob_mode {
        BobMode::Inverse => chain.bob_inverse(index, &beta, ops, &h.system_part)?,
        BobMode::ForwardEmulation => chain.bob_forward(index, &beta, h, ops, t_sys, t_phi)?,
    };
    let mut trace = chain.alice_trace(c.dt, &h.system_part);
    trace.append(&bob.trace);
    Ok(BobOutcome {
        index,
        probability: bob.probability,
        system: bob.system,
        trace,
        ordering: None,
        reversibility: chain.undo_overlap(ops).norm(),
    })
}

/// Type-1/type-2 decision for the configured Hamiltonian and register.
pub fn run_classification(config: &ScenarioConfig) -> PipelineResult<ClassificationResult> {
    let scenario = Scenario::resolve(config)?;
    let spec = scenario.spec()?;
    let options = ClassifyOptions {
        threshold: config.tolerance("classify_threshold", DEFAULT_THRESHOLD),
        seed: config.seed,
        ..ClassifyOptions::default()
    };
    Ok(classify_type(&scenario.hamiltonian, config.dt, &spec, &options)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurificationReport {
    pub schema_version: u32,
    pub initial_state: Ket,
    pub converged: bool,
    pub summary: PurificationSummary,
    pub trace: PurificationTrace,
}

/// Alice's purification alone, on the configured engine.
pub fn run_purification(config: &ScenarioConfig) -> PipelineResult<PurificationReport> {
    let PulseProtocol::ColdPartialSwap { theta } = config.pulse_protocol else {
        return Err(ConfigError {
            field: "pulse_protocol".into(),
            message: "purification needs the cold-partial-swap protocol".into(),
        }
        .into());
    };
    let scenario = Scenario::resolve(config)?;
    let params = crate::purify::PurificationParams {
        upsilon0: scenario.upsilon0.clone(),
        pulse_count: config.pulse_count,
        pulse_dim: config.pulse_dim,
        theta,
        h_sys: scenario.hamiltonian.system_part.clone(),
        dt: config.dt,
        target_index: scenario.target_index(),
    };
    let (trace, reversibility) = match config.engine {
        Engine::Dense => {
            scenario.spec()?;
            let run = crate::purify::purification_run(&params)?;
            let rev = crate::purify::reversibility_check(&run.joint, &run.memory, &params)?;
            (run.trace, rev)
        }
        Engine::Chain => {
            let run = crate::purify::purification_run_chain(&params)?;
            let rev = crate::purify::reversibility_check_chain(&run);
            (run.trace, rev)
        }
    };
    let tol = config.tolerance("convergence", DEFAULT_CONVERGENCE_TOL);
    let last = trace.final_record().expect("trace holds the initial record").clone();
    Ok(PurificationReport {
        schema_version: SCHEMA_VERSION,
        initial_state: scenario.upsilon0,
        converged: last.target_overlap >= 1.0 - tol,
        summary: PurificationSummary {
            converged_at: trace
                .records
                .iter()
                .find(|r| r.target_overlap >= 1.0 - tol)
                .map(|r| r.cycle),
            final_target_overlap: last.target_overlap,
            final_energy: last.energy,
            target_energy: trace.target_energy,
            reversibility,
        },
        trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub outcome_index: usize,
    pub subspace: SubspaceReport,
    /// System versus pulse after one cycle.
    pub schmidt: SchmidtReport,
    pub coefficient_structure: CoefficientStructure,
}

/// Single-cycle teleportable subspace and entanglement diagnostics.
pub fn run_analysis(config: &ScenarioConfig) -> PipelineResult<AnalysisReport> {
    if config.pulse_count != 1 {
        return Err(ConfigError {
            field: "pulse_count".into(),
            message: format!(
                "the teleportable-subspace analysis is defined for a single interrogation cycle only (pulse_count = 1, got {})",
                config.pulse_count
            ),
        }
        .into());
    }
    let scenario = Scenario::resolve(config)?;
    let spec = scenario.spec()?;
    let pulse0 = &scenario.train.states()[0];
    let h = &scenario.hamiltonian;
    let p = scenario.target_index();
    let subspace = teleportable_subspace(pulse0, h, config.dt, p, &spec)?;
    let joint = scenario.operators.cycle.apply(&scenario.upsilon0.tensor(pulse0)?)?;
    let schmidt = schmidt_coefficients(&joint, &spec.dims(), &[0])?;
    let coefficient_structure = verify_separable_coefficients(&scenario.upsilon0, pulse0, h, config.dt)?;
    Ok(AnalysisReport {
        schema_version: SCHEMA_VERSION,
        outcome_index: p,
        subspace,
        schmidt,
        coefficient_structure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config_str;

    fn config(extra: &str) -> ScenarioConfig {
        parse_config_str(&format!(
            r#"{{"system_dim": 4, "pulse_dim": 2, "pulse_count": 3{extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn decoupled_single_cycle_returns_the_conjugate_of_the_propagated_state() {
        // Without coupling Bob undoes 3Δt of free system evolution on e_p,
        // and the emulation returns the conjugate of that.
        let c = parse_config_str(
            r#"{"system_dim": 2, "pulse_dim": 2, "pulse_count": 1, "hamiltonian": {"kind": "decoupled"}}"#,
        )
        .unwrap();
        let report = run_full_pipeline(&c).unwrap();
        let s = Scenario::resolve(&c).unwrap();
        let p = report.alice_final_index.unwrap();
        let undo = crate::dynamics::HermitianEigen::new(&s.hamiltonian.system_part)
            .unwrap()
            .propagator(-3.0 * c.dt);
        let back = undo.apply(&Ket::basis(2, p)).unwrap();
        let rho = &report.bob_final_state;
        let v = back.conj();
        let mut pop = 0.0_f64;
        for (i, row) in rho.iter().enumerate() {
            for (j, z) in row.iter().enumerate() {
                let r = crate::hilbert::C64::new(z[0], z[1]);
                pop += (v.as_slice()[i].conj() * r * v.as_slice()[j]).re;
            }
        }
        assert!((pop - 1.0).abs() <= 1e-10, "{pop}");
    }

    #[test]
    fn inverse_and_forward_modes_are_mirror_images() {
        let inv = run_full_pipeline(&config(r#", "bob_mode": "inverse""#)).unwrap();
        let fwd = run_full_pipeline(&config("")).unwrap();
        assert_eq!(inv.alice_final_index, fwd.alice_final_index);
        assert!((inv.fidelity_to_original - fwd.fidelity_to_conjugate).abs() <= 1e-10);
        let ord = fwd.ordering.unwrap();
        assert!(ord.reordered_overlap >= 1.0 - 1e-9);
        assert_eq!(fwd.trace.records().len(), 18);
    }

    #[test]
    fn chain_engine_agrees_with_dense() {
        for extra in ["", r#", "bob_mode": "inverse""#] {
            let dense = run_full_pipeline(&config(extra)).unwrap();
            let chain = run_full_pipeline(&config(&format!(r#"{extra}, "engine": "chain""#))).unwrap();
            assert_eq!(dense.alice_final_index, chain.alice_final_index);
            assert!((dense.fidelity_to_conjugate - chain.fidelity_to_conjugate).abs() <= 1e-10);
            assert!((dense.outcome_probability - chain.outcome_probability).abs() <= 1e-12);
            assert!((dense.trace.records()[5].system_energy - chain.trace.records()[5].system_energy).abs() <= 1e-10);
        }
    }

    #[test]
    fn spin_flip_reversal_is_rejected_for_coupled_dynamics() {
        let err = run_full_pipeline(&config(r#", "pulse_reversal": "spin-flip""#)).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("time-reversal"));
    }

    #[test]
    fn analysis_needs_single_cycle() {
        let err = run_analysis(&config("")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("single interrogation cycle"));
        let c = ScenarioConfig {
            pulse_count: 1,
            ..config("")
        };
        let report = run_analysis(&c).unwrap();
        assert!(report.subspace.dimension <= 2);
        assert!(!report.schmidt.separable);
    }

    #[test]
    fn purification_reports_both_engines() {
        let extra = r#", "pulse_count": 8, "pulse_protocol": {"kind": "cold-partial-swap", "theta": 1.0}"#;
        let text = format!(r#"{{"system_dim": 3, "pulse_dim": 2{extra}}}"#);
        let c = parse_config_str(&text).unwrap();
        let dense = run_purification(&c).unwrap();
        let chain = run_purification(&ScenarioConfig {
            engine: Engine::Chain,
            ..c.clone()
        })
        .unwrap();
        assert!((dense.summary.final_target_overlap - chain.summary.final_target_overlap).abs() <= 1e-12);
        assert!(dense.summary.reversibility >= 1.0 - 1e-10);
        assert!(chain.summary.reversibility >= 1.0 - 1e-10);
        let err = run_purification(&config("")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn identical_configs_give_identical_reports() {
        let c = config(r#", "projection_mode": "sampled", "seed": 5"#);
        let a = serde_json::to_string(&run_full_pipeline(&c).unwrap()).unwrap();
        let b = serde_json::to_string(&run_full_pipeline(&c).unwrap()).unwrap();
        assert_eq!(a, b);
    }
}
