//! Interrogation, memory, classical report and reconstruction stages.
//!
//! The register is `[system, slot_0, ..., slot_{N'-1}]`. The active slot is
//! always register position 0; Alice left-rotates the pulse factors after each
//! cycle, Bob right-rotates before each of his.

use serde::{Deserialize, Serialize};

use crate::dynamics::{CycleOperators, HamiltonianSpec};
use crate::error::{Result, TrekError};
use crate::hilbert::{
    apply_leading, apply_on_factor, inner_product, permute_factors, system_state, AntiUnitaryOp, DensityMatrix, Ket,
    OperatorMatrix, SpaceSpec, ALGEBRAIC_TOL, C64,
};
use crate::random::SeededRng;

pub use crate::memory::{teleport_memory, FiloMemory, RecallOrder, Side};
pub use crate::trace::{Phase, ProtocolTrace, TraceRecord};

/// Initial product states of the pulse train.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseTrain {
    initial_states: Vec<Ket>,
    pulse_dim: usize,
}

impl PulseTrain {
    pub fn new(initial_states: Vec<Ket>, pulse_dim: usize) -> Result<Self> {
        for s in &initial_states {
            if s.dim() != pulse_dim {
                return Err(TrekError::DimensionMismatch {
                    expected: pulse_dim,
                    found: s.dim(),
                });
            }
            s.require_normalized()?;
        }
        Ok(PulseTrain {
            initial_states,
            pulse_dim,
        })
    }

    /// `count` copies of the pulse ground state.
    pub fn cold(pulse_dim: usize, count: usize) -> Self {
        PulseTrain {
            initial_states: vec![Ket::basis(pulse_dim, 0); count],
            pulse_dim,
        }
    }

    pub fn states(&self) -> &[Ket] {
        &self.initial_states
    }

    pub fn len(&self) -> usize {
        self.initial_states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.initial_states.is_empty()
    }

    pub fn pulse_dim(&self) -> usize {
        self.pulse_dim
    }

    /// Exchanges two pulses of the train.
    pub fn swapped(&self, i: usize, j: usize) -> Result<PulseTrain> {
        if i >= self.len() || j >= self.len() {
            return Err(TrekError::InvalidSlot(i.max(j)));
        }
        let mut states = self.initial_states.clone();
        states.swap(i, j);
        Ok(PulseTrain {
            initial_states: states,
            pulse_dim: self.pulse_dim,
        })
    }

    /// The product register `Υ0 ⊗ φ_0 ⊗ ... ⊗ φ_{N'-1}`.
    pub fn register(&self, upsilon0: &Ket, cap: usize) -> Result<Ket> {
        let dim = crate::hilbert::joint_dimension(upsilon0.dim(), self.pulse_dim, self.len());
        if dim > cap as u128 {
            return Err(TrekError::DimensionCap { dim, cap });
        }
        let mut out = upsilon0.clone();
        for s in &self.initial_states {
            out = out.tensor(s)?;
        }
        Ok(out)
    }
}

/// How Bob emulates the inverse evolution with forward-time unitaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForwardOrdering {
    /// One global reversal before the first cycle, none inside the cycles.
    #[default]
    Reordered,
    /// Additional pulse reversal inside cycles 2..N', as the operator product is printed.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BobMode {
    Inverse,
    #[default]
    ForwardEmulation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// Most probable outcome, lowest index on ties.
    #[default]
    Deterministic,
    Sampled,
}

/// Outcome of Alice's projective measurement of her system.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub index: usize,
    pub collapsed: Ket,
    pub probability: f64,
}

impl Projection {
    /// Normalized pulse-register state conditioned on the outcome.
    pub fn pulse_register(&self, system_dim: usize) -> Ket {
        let rest = self.collapsed.dim() / system_dim;
        let start = self.index * rest;
        Ket::from_vec(self.collapsed.as_slice()[start..start + rest].to_vec())
    }
}

/// Alice's register after all cycles.
#[derive(Debug, Clone)]
pub struct AliceRun {
    pub register: Ket,
    pub memory: FiloMemory,
    pub trace: ProtocolTrace,
}

/// Bob's register after reconstruction.
#[derive(Debug, Clone)]
pub struct BobRun {
    pub register: Ket,
    pub memory: FiloMemory,
    pub trace: ProtocolTrace,
}

impl BobRun {
    pub fn system_state(&self) -> Result<DensityMatrix> {
        system_state(&self.register, self.memory_system_dim())
    }

    fn memory_system_dim(&self) -> usize {
        self.trace.system_dim()
    }
}

fn factor_dims(spec: &SpaceSpec) -> Vec<usize> {
    spec.dims()
}

/// Cyclic left rotation of the pulse factors: slot order `(0, 1, ..., N'-1)`
/// becomes `(1, ..., N'-1, 0)`.
pub fn rotate_register(joint: &Ket, spec: &SpaceSpec) -> Result<Ket> {
    let n = spec.pulse_count();
    if n <= 1 {
        return Ok(joint.clone());
    }
    let order: Vec<usize> = std::iter::once(0).chain(2..=n).chain(std::iter::once(1)).collect();
    permute_factors(joint, &factor_dims(spec), &order)
}

/// Inverse of [`rotate_register`].
pub fn rotate_register_inverse(joint: &Ket, spec: &SpaceSpec) -> Result<Ket> {
    let n = spec.pulse_count();
    if n <= 1 {
        return Ok(joint.clone());
    }
    let order: Vec<usize> = [0, n].into_iter().chain(1..n).collect();
    permute_factors(joint, &factor_dims(spec), &order)
}

/// One cycle without rotation: joint interaction on system ⊗ position 0,
/// storage of `active_slot`, then free system evolution.
pub fn alice_interrogation_cycle(
    joint: &Ket,
    active_slot: usize,
    u_joint: &OperatorMatrix,
    u_free: &OperatorMatrix,
    mem: &mut FiloMemory,
) -> Result<Ket> {
    mem.store(active_slot)?;
    let state = apply_leading(u_joint, joint)?;
    apply_leading(u_free, &state)
}

fn check_train(upsilon0: &Ket, train: &PulseTrain, h: &HamiltonianSpec) -> Result<SpaceSpec> {
    if upsilon0.dim() != h.system_dim() {
        return Err(TrekError::DimensionMismatch {
            expected: h.system_dim(),
            found: upsilon0.dim(),
        });
    }
    if train.pulse_dim() != h.pulse_dim() {
        return Err(TrekError::DimensionMismatch {
            expected: h.pulse_dim(),
            found: train.pulse_dim(),
        });
    }
    upsilon0.require_normalized()?;
    SpaceSpec::new(h.system_dim(), h.pulse_dim(), train.len())
}

/// Alice's full run `O_A = (R·(U_sys(2Δt) ⊗ I)·U_joint(Δt))^{N'}`.
///
/// Requires `N'·N_φ ≥ N_Υ`; see [`alice_run_relaxed`] to skip that check.
pub fn alice_run(upsilon0: &Ket, train: &PulseTrain, h: &HamiltonianSpec, dt: f64) -> Result<AliceRun> {
    if train.len() * h.pulse_dim() < h.system_dim() {
        return Err(TrekError::Precondition(format!(
            "pulse train too short: N'·N_φ = {} < N_Υ = {}",
            train.len() * h.pulse_dim(),
            h.system_dim()
        )));
    }
    alice_run_relaxed(upsilon0, train, h, dt)
}

/// [`alice_run`] without the train-length precondition.
pub fn alice_run_relaxed(upsilon0: &Ket, train: &PulseTrain, h: &HamiltonianSpec, dt: f64) -> Result<AliceRun> {
    let spec = check_train(upsilon0, train, h)?;
    let ops = CycleOperators::new(h, dt)?;
    let register = train.register(upsilon0, spec.cap())?;
    alice_apply(register, &ops, &spec, &h.system_part)
}

/// Applies Alice's cycles to an arbitrary register.
pub fn alice_apply(register: Ket, ops: &CycleOperators, spec: &SpaceSpec, h_sys: &OperatorMatrix) -> Result<AliceRun> {
    let mut memory = FiloMemory::new();
    let mut trace = ProtocolTrace::new(ops.dt, spec.system_dim());
    let mut state = register;
    for slot in 0..spec.pulse_count() {
        memory.store(slot)?;
        state = apply_leading(&ops.joint, &state)?;
        trace.record(Phase::Interact, &state, h_sys)?;
        state = apply_leading(&ops.free_step, &state)?;
        trace.record(Phase::Store, &state, h_sys)?;
        state = apply_leading(&ops.free_step, &state)?;
        trace.record(Phase::Teleport, &state, h_sys)?;
        state = rotate_register(&state, spec)?;
    }
    Ok(AliceRun {
        register: state,
        memory,
        trace,
    })
}

/// Measures the system factor in the computational basis.
pub fn classical_project_report(
    joint: &Ket,
    spec: &SpaceSpec,
    mode: ProjectionMode,
    rng: Option<&mut SeededRng>,
) -> Result<Projection> {
    let rho = system_state(joint, spec.system_dim())?;
    let probs: Vec<f64> = (0..spec.system_dim())
        .map(|i| rho.matrix()[(i, i)].re.max(0.0))
        .collect();
    let index = select_outcome(&probs, mode, rng)?;
    let (collapsed, probability) = crate::hilbert::project_onto_basis(joint, &factor_dims(spec), 0, index)?;
    Ok(Projection {
        index,
        collapsed,
        probability,
    })
}

pub(crate) fn select_outcome(probs: &[f64], mode: ProjectionMode, rng: Option<&mut SeededRng>) -> Result<usize> {
    match (mode, rng) {
        (ProjectionMode::Sampled, Some(rng)) => {
            use rand::Rng;
            let total: f64 = probs.iter().sum();
            let mut u = rng.random_range(0.0..total);
            let mut last = None;
            for (i, &p) in probs.iter().enumerate() {
                if p > 0.0 {
                    last = Some(i);
                    if u < p {
                        return Ok(i);
                    }
                    u -= p;
                }
            }
            last.ok_or(TrekError::ZeroProbability { index: 0 })
        }
        (ProjectionMode::Sampled, None) => Err(TrekError::Precondition(
            "sampled projection requires a seeded generator".into(),
        )),
        (ProjectionMode::Deterministic, _) => {
            let mut best = 0;
            for (i, &p) in probs.iter().enumerate() {
                if p > probs[best] {
                    best = i;
                }
            }
            if probs[best] <= 0.0 {
                return Err(TrekError::ZeroProbability { index: best });
            }
            Ok(best)
        }
    }
}

fn bob_spec(register: &Ket, mem: &FiloMemory, ops: &CycleOperators) -> Result<SpaceSpec> {
    if !mem.is_teleported() {
        return Err(TrekError::NotTeleported);
    }
    let sys = ops.free.dim();
    let pulse = ops.joint.dim() / sys;
    let spec = SpaceSpec::new(sys, pulse, mem.len())?;
    if register.dim() != spec.total_dim() {
        return Err(TrekError::DimensionMismatch {
            expected: spec.total_dim(),
            found: register.dim(),
        });
    }
    Ok(spec)
}

/// Bob's exact inverse `O_B = (U_joint⁻¹·(U_sys(2Δt)⁻¹ ⊗ I)·R⁻¹)^{N'}` applied to
/// a full register. With [`RecallOrder::Fifo`] the slots are replayed in store
/// order instead, which a single recycled memory slot can realize.
pub fn bob_inverse_register(
    register: Ket,
    mut mem: FiloMemory,
    ops: &CycleOperators,
    h_sys: &OperatorMatrix,
    order: RecallOrder,
) -> Result<BobRun> {
    let spec = bob_spec(&register, &mem, ops)?;
    let free_step_inv = ops.free_step.adjoint();
    let mut trace = ProtocolTrace::new(ops.dt, spec.system_dim());
    let mut state = register;
    for _ in 0..spec.pulse_count() {
        mem.recall(order)?;
        if order == RecallOrder::Filo {
            state = rotate_register_inverse(&state, &spec)?;
        }
        trace.record(Phase::Recall, &state, h_sys)?;
        state = apply_leading(&free_step_inv, &state)?;
        state = apply_leading(&free_step_inv, &state)?;
        trace.record(Phase::FreeEvolve, &state, h_sys)?;
        state = apply_leading(&ops.joint_inv, &state)?;
        trace.record(Phase::Reverse, &state, h_sys)?;
        if order == RecallOrder::Fifo {
            state = rotate_register(&state, &spec)?;
        }
    }
    Ok(BobRun {
        register: state,
        memory: mem,
        trace,
    })
}

/// Bob's inverse reconstruction from his prepared system state and the
/// received pulse register.
pub fn bob_run_inverse(upsilon0_b: &Ket, mem_b: FiloMemory, h: &HamiltonianSpec, dt: f64) -> Result<BobRun> {
    let ops = CycleOperators::new(h, dt)?;
    let register = bob_register(upsilon0_b, &mem_b, h)?;
    bob_inverse_register(register, mem_b, &ops, &h.system_part, RecallOrder::Filo)
}

fn bob_register(upsilon0_b: &Ket, mem_b: &FiloMemory, h: &HamiltonianSpec) -> Result<Ket> {
    if !mem_b.is_teleported() {
        return Err(TrekError::NotTeleported);
    }
    if upsilon0_b.dim() != h.system_dim() {
        return Err(TrekError::DimensionMismatch {
            expected: h.system_dim(),
            found: upsilon0_b.dim(),
        });
    }
    upsilon0_b.require_normalized()?;
    match mem_b.contents() {
        Some(contents) => upsilon0_b.tensor(contents),
        None if mem_b.is_empty() => Ok(upsilon0_b.clone()),
        None => Err(TrekError::MissingContents),
    }
}

/// `t_sys ⊗ t_φ^{⊗N'}` on the whole register.
pub fn reverse_register(state: &Ket, spec: &SpaceSpec, t_sys: &AntiUnitaryOp, t_phi: &AntiUnitaryOp) -> Result<Ket> {
    let dims = factor_dims(spec);
    let mut out = if t_sys.conjugates() {
        state.conj()
    } else {
        state.clone()
    };
    if !is_identity(t_sys.unitary_part()) {
        out = apply_on_factor(t_sys.unitary_part(), &out, &dims, 0)?;
    }
    if !is_identity(t_phi.unitary_part()) {
        for f in 1..dims.len() {
            out = apply_on_factor(t_phi.unitary_part(), &out, &dims, f)?;
        }
    }
    Ok(out)
}

/// Pulse reversal on register position 0. Complex conjugation has no
/// factor-local meaning, so the antiunitary part acts on the whole register.
fn reverse_active_pulse(state: &Ket, spec: &SpaceSpec, t_phi: &AntiUnitaryOp) -> Result<Ket> {
    let out = if t_phi.conjugates() {
        state.conj()
    } else {
        state.clone()
    };
    if is_identity(t_phi.unitary_part()) || spec.pulse_count() == 0 {
        return Ok(out);
    }
    apply_on_factor(t_phi.unitary_part(), &out, &factor_dims(spec), 1)
}

fn is_identity(op: &OperatorMatrix) -> bool {
    op.max_abs_diff(&OperatorMatrix::identity(op.dim())) == 0.0
}

/// Forward-time emulation of Bob's inverse on a full register: reverse the
/// register, then `(U_joint(Δt)·(U_sys(2Δt) ⊗ I)·R⁻¹)^{N'}`.
#[allow(clippy::too_many_arguments)]
pub fn bob_forward_register(
    register: Ket,
    mut mem: FiloMemory,
    h: &HamiltonianSpec,
    ops: &CycleOperators,
    t_sys: &AntiUnitaryOp,
    t_phi: &AntiUnitaryOp,
    ordering: ForwardOrdering,
) -> Result<BobRun> {
    h.require_time_reversal_invariant(t_sys, t_phi)?;
    let spec = bob_spec(&register, &mem, ops)?;
    let h_sys = &h.system_part;
    let mut trace = ProtocolTrace::new(ops.dt, spec.system_dim());
    let mut state = reverse_register(&register, &spec, t_sys, t_phi)?;
    for cycle in 0..spec.pulse_count() {
        mem.recall(RecallOrder::Filo)?;
        state = rotate_register_inverse(&state, &spec)?;
        if ordering == ForwardOrdering::Printed && cycle > 0 {
            state = reverse_active_pulse(&state, &spec, t_phi)?;
        }
        trace.record(Phase::Recall, &state, h_sys)?;
        state = apply_leading(&ops.free_step, &state)?;
        state = apply_leading(&ops.free_step, &state)?;
        trace.record(Phase::FreeEvolve, &state, h_sys)?;
        state = apply_leading(&ops.joint, &state)?;
        trace.record(Phase::Reverse, &state, h_sys)?;
    }
    Ok(BobRun {
        register: state,
        memory: mem,
        trace,
    })
}

/// Bob's forward-time reconstruction from his prepared state and the
/// received pulse register, in the reordered form.
pub fn bob_run_forward(
    upsilon0_b: &Ket,
    mem_b: FiloMemory,
    h: &HamiltonianSpec,
    dt: f64,
    t_phi: &AntiUnitaryOp,
    t_sys: &AntiUnitaryOp,
) -> Result<BobRun> {
    bob_run_forward_with(upsilon0_b, mem_b, h, dt, t_phi, t_sys, ForwardOrdering::Reordered)
}

pub fn bob_run_forward_with(
    upsilon0_b: &Ket,
    mem_b: FiloMemory,
    h: &HamiltonianSpec,
    dt: f64,
    t_phi: &AntiUnitaryOp,
    t_sys: &AntiUnitaryOp,
    ordering: ForwardOrdering,
) -> Result<BobRun> {
    h.require_time_reversal_invariant(t_sys, t_phi)?;
    let ops = CycleOperators::new(h, dt)?;
    let register = bob_register(upsilon0_b, &mem_b, h)?;
    bob_forward_register(register, mem_b, h, &ops, t_sys, t_phi, ordering)
}

/// Agreement of both forward orderings with the reversed inverse output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    /// `|⟨t̂·O_B ψ | forward_reordered ψ⟩|`.
    pub reordered_overlap: f64,
    /// Same for the printed ordering.
    pub printed_overlap: f64,
}

pub fn compare_forward_orderings(
    register: &Ket,
    mem: &FiloMemory,
    h: &HamiltonianSpec,
    ops: &CycleOperators,
    t_sys: &AntiUnitaryOp,
    t_phi: &AntiUnitaryOp,
) -> Result<OrderingReport> {
    let spec = bob_spec(register, mem, ops)?;
    let inverse = bob_inverse_register(register.clone(), mem.clone(), ops, &h.system_part, RecallOrder::Filo)?;
    let target = reverse_register(&inverse.register, &spec, t_sys, t_phi)?;
    let overlap = |ordering| -> Result<f64> {
        let run = bob_forward_register(register.clone(), mem.clone(), h, ops, t_sys, t_phi, ordering)?;
        Ok(inner_product(&target, &run.register)?.norm())
    };
    Ok(OrderingReport {
        reordered_overlap: overlap(ForwardOrdering::Reordered)?,
        printed_overlap: overlap(ForwardOrdering::Printed)?,
    })
}

/// `|⟨a|b⟩|` after checking both are normalized within tolerance.
pub fn overlap_modulus(a: &Ket, b: &Ket) -> Result<f64> {
    let z: C64 = inner_product(a, b)?;
    if (a.norm() - 1.0).abs() > ALGEBRAIC_TOL.sqrt() || (b.norm() - 1.0).abs() > ALGEBRAIC_TOL.sqrt() {
        return Err(TrekError::NotNormalized {
            norm: a.norm().min(b.norm()),
        });
    }
    Ok(z.norm())
}
