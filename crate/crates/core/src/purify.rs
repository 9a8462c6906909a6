//! Reversible purification by partial swaps with cold pulses.
//!
//! Every system level `k ≥ 1` (in the energy eigenbasis) is paired with
//! `|k - d, d⟩`, `d = ((k - 1) mod (N_φ - 1)) + 1`, so each pulse can carry
//! away up to `N_φ - 1` quanta from any level. The pairs are disjoint, and
//! `exp(-iθG)` rotates each pair by `θ`. With a pulse spectrum matching the
//! system level spacing the pairs are resonant, so the joint step factorizes
//! into free evolution times the partial swap.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::chain::ChainRegister;
use crate::classify::apply_bob_inverse;
use crate::dynamics::{CycleOperators, HamiltonianSpec};
use crate::error::{Result, TrekError};
use crate::hilbert::{
    apply_leading, hermitian_deviation, inner_product, kron_op, system_state, DensityMatrix, Ket, OperatorMatrix,
    SpaceSpec, ALGEBRAIC_TOL, C64,
};
use crate::memory::FiloMemory;
use crate::protocol::{rotate_register, PulseTrain};

pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-6;

/// `θ·G` on system ⊗ pulse in the computational basis.
pub fn partial_swap_generator(theta: f64, system_dim: usize, pulse_dim: usize) -> Result<OperatorMatrix> {
    if pulse_dim < 2 {
        return Err(TrekError::Precondition(
            "partial swaps need a pulse dimension of at least 2".into(),
        ));
    }
    let d = system_dim * pulse_dim;
    let mut g = DMatrix::<f64>::zeros(d, d);
    for k in 1..system_dim {
        let shift = (k - 1) % (pulse_dim - 1) + 1;
        let upper = k * pulse_dim;
        let lower = (k - shift) * pulse_dim + shift;
        g[(upper, lower)] = theta;
        g[(lower, upper)] = theta;
    }
    OperatorMatrix::from_real_symmetric(&g)
}

/// `diag(0, 1, ..., n - 1)`.
pub fn harmonic_system(n: usize) -> OperatorMatrix {
    OperatorMatrix::diagonal(&(0..n).map(|k| k as f64).collect::<Vec<_>>())
}

/// Eigenpairs sorted by ascending energy.
#[derive(Debug, Clone)]
pub struct EnergyBasis {
    pub energies: Vec<f64>,
    /// Eigenvectors as columns.
    pub vectors: DMatrix<C64>,
}

impl EnergyBasis {
    pub fn new(h_sys: &OperatorMatrix) -> Result<Self> {
        let dev = hermitian_deviation(h_sys.matrix());
        if !h_sys.is_hermitian() || dev > ALGEBRAIC_TOL {
            return Err(TrekError::NotHermitian { residual: dev });
        }
        let m = h_sys.matrix();
        let n = m.nrows();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == C64::new(0.0, 0.0)));
        let (values, vectors): (Vec<f64>, DMatrix<C64>) = if diagonal {
            ((0..n).map(|i| m[(i, i)].re).collect(), DMatrix::identity(n, n))
        } else {
            let eig = m.clone().symmetric_eigen();
            (eig.eigenvalues.iter().cloned().collect(), eig.eigenvectors)
        };
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
        Ok(EnergyBasis {
            energies: order.iter().map(|&i| values[i]).collect(),
            vectors: DMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]),
        })
    }

    pub fn state(&self, index: usize) -> Ket {
        Ket::from_dvector(self.vectors.column(index).into_owned())
    }
}

/// Joint Hamiltonian realizing the partial swap in one step of length `dt`.
pub fn partial_swap_hamiltonian(
    h_sys: &OperatorMatrix,
    pulse_dim: usize,
    theta: f64,
    dt: f64,
) -> Result<HamiltonianSpec> {
    let basis = EnergyBasis::new(h_sys)?;
    let n = h_sys.dim();
    let spacing = if n > 1 {
        basis.energies[1] - basis.energies[0]
    } else {
        0.0
    };
    let pulse_part = OperatorMatrix::diagonal(&(0..pulse_dim).map(|k| k as f64 * spacing).collect::<Vec<_>>());
    let g = partial_swap_generator(1.0, n, pulse_dim)?;
    let v = kron_op(
        &OperatorMatrix::general(basis.vectors.clone())?,
        &OperatorMatrix::identity(pulse_dim),
    )?;
    let rotated = v.matrix() * g.matrix() * v.matrix().adjoint();
    let rotated = (&rotated + rotated.adjoint()) * C64::new(0.5, 0.0);
    HamiltonianSpec::new(
        h_sys.clone(),
        pulse_part,
        OperatorMatrix::hermitian(rotated)?,
        theta / dt,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurificationRecord {
    pub cycle: usize,
    pub energy: f64,
    pub target_overlap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurificationTrace {
    /// Cycle 0 is the initial state.
    pub records: Vec<PurificationRecord>,
    pub converged_at: Option<usize>,
    pub target_index: usize,
    pub target_energy: f64,
}

impl PurificationTrace {
    pub(crate) fn from_states(
        states: &[DMatrix<C64>],
        h_sys: &OperatorMatrix,
        basis: &EnergyBasis,
        target: usize,
        tol: f64,
    ) -> Self {
        let v = basis.state(target);
        let records: Vec<PurificationRecord> = states
            .iter()
            .enumerate()
            .map(|(cycle, rho)| {
                let rho = DensityMatrix::from_matrix_unchecked(rho.clone());
                PurificationRecord {
                    cycle,
                    energy: rho.expectation(h_sys).re,
                    target_overlap: rho.population(&v).clamp(0.0, 1.0),
                }
            })
            .collect();
        let converged_at = records.iter().find(|r| r.target_overlap >= 1.0 - tol).map(|r| r.cycle);
        PurificationTrace {
            records,
            converged_at,
            target_index: target,
            target_energy: basis.energies[target],
        }
    }

    pub fn final_record(&self) -> Option<&PurificationRecord> {
        self.records.last()
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["cycle", "energy", "target_overlap", "schema_version"])?;
        for r in &self.records {
            w.write_record([
                r.cycle.to_string(),
                format!("{:.12e}", r.energy),
                format!("{:.12e}", r.target_overlap),
                crate::trace::SCHEMA_VERSION.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything needed to repeat or undo a purification run.
#[derive(Debug, Clone)]
pub struct PurificationParams {
    pub upsilon0: Ket,
    pub pulse_count: usize,
    pub pulse_dim: usize,
    pub theta: f64,
    pub h_sys: OperatorMatrix,
    pub dt: f64,
    pub target_index: usize,
}

impl PurificationParams {
    pub fn hamiltonian(&self) -> Result<HamiltonianSpec> {
        partial_swap_hamiltonian(&self.h_sys, self.pulse_dim, self.theta, self.dt)
    }

    fn check(&self) -> Result<()> {
        if self.upsilon0.dim() != self.h_sys.dim() {
            return Err(TrekError::DimensionMismatch {
                expected: self.h_sys.dim(),
                found: self.upsilon0.dim(),
            });
        }
        if self.target_index >= self.h_sys.dim() {
            return Err(TrekError::InvalidSlot(self.target_index));
        }
        self.upsilon0.require_normalized()
    }
}

#[derive(Debug, Clone)]
pub struct PurificationRun {
    pub joint: Ket,
    pub memory: FiloMemory,
    pub trace: PurificationTrace,
}

/// Dense full-register purification.
pub fn purification_run(params: &PurificationParams) -> Result<PurificationRun> {
    params.check()?;
    let h = params.hamiltonian()?;
    let ops = CycleOperators::new(&h, params.dt)?;
    let spec = SpaceSpec::new(h.system_dim(), h.pulse_dim(), params.pulse_count)?;
    let register = PulseTrain::cold(h.pulse_dim(), params.pulse_count).register(&params.upsilon0, spec.cap())?;
    let mut memory = FiloMemory::new();
    let mut state = register;
    let mut states = vec![system_state(&state, spec.system_dim())?.matrix().clone()];
    for slot in 0..params.pulse_count {
        memory.store(slot)?;
        state = rotate_register(&apply_leading(&ops.cycle, &state)?, &spec)?;
        states.push(system_state(&state, spec.system_dim())?.matrix().clone());
    }
    let basis = EnergyBasis::new(&params.h_sys)?;
    Ok(PurificationRun {
        joint: state,
        memory,
        trace: PurificationTrace::from_states(
            &states,
            &params.h_sys,
            &basis,
            params.target_index,
            DEFAULT_CONVERGENCE_TOL,
        ),
    })
}

#[derive(Debug, Clone)]
pub struct ChainPurification {
    pub chain: ChainRegister,
    pub hamiltonian: HamiltonianSpec,
    pub operators: CycleOperators,
    pub trace: PurificationTrace,
}

/// Purification for trains too long for a dense register.
pub fn purification_run_chain(params: &PurificationParams) -> Result<ChainPurification> {
    params.check()?;
    let h = params.hamiltonian()?;
    let ops = CycleOperators::new(&h, params.dt)?;
    let chain = ChainRegister::alice(
        &params.upsilon0,
        &PulseTrain::cold(h.pulse_dim(), params.pulse_count),
        &ops,
    )?;
    let basis = EnergyBasis::new(&params.h_sys)?;
    let trace = PurificationTrace::from_states(
        &chain.system_states(),
        &params.h_sys,
        &basis,
        params.target_index,
        DEFAULT_CONVERGENCE_TOL,
    );
    Ok(ChainPurification {
        chain,
        hamiltonian: h,
        operators: ops,
        trace,
    })
}

/// `Tr{H_sys · Tr_pulses |joint⟩⟨joint|}`.
pub fn reduced_energy(joint: &Ket, spec: &SpaceSpec, h_sys: &OperatorMatrix) -> Result<f64> {
    let dev = hermitian_deviation(h_sys.matrix());
    if !h_sys.is_hermitian() || dev > ALGEBRAIC_TOL {
        return Err(TrekError::NotHermitian { residual: dev });
    }
    let rho = system_state(joint, spec.system_dim())?;
    let e = rho.expectation(h_sys);
    if e.im.abs() > ALGEBRAIC_TOL {
        return Err(TrekError::InvalidDensity(format!(
            "energy has imaginary part {:.3e}",
            e.im
        )));
    }
    Ok(e.re)
}

pub fn check_convergence(trace: &PurificationTrace, tol: f64) -> bool {
    trace.final_record().is_some_and(|r| r.target_overlap >= 1.0 - tol)
}

/// Undoes the run with exact inverse unitaries and returns the overlap
/// modulus with the initial register.
pub fn reversibility_check(joint_final: &Ket, mem: &FiloMemory, params: &PurificationParams) -> Result<f64> {
    params.check()?;
    if mem.len() != params.pulse_count {
        return Err(TrekError::ParameterMismatch(format!(
            "memory holds {} slots, run used {}",
            mem.len(),
            params.pulse_count
        )));
    }
    let h = params.hamiltonian()?;
    let spec = SpaceSpec::new(h.system_dim(), h.pulse_dim(), params.pulse_count)?;
    if joint_final.dim() != spec.total_dim() {
        return Err(TrekError::ParameterMismatch(format!(
            "register dimension {} does not match {}",
            joint_final.dim(),
            spec.total_dim()
        )));
    }
    let ops = CycleOperators::new(&h, params.dt)?;
    let undone = apply_bob_inverse(joint_final, &ops, &spec)?;
    let initial = PulseTrain::cold(h.pulse_dim(), params.pulse_count).register(&params.upsilon0, spec.cap())?;
    Ok(inner_product(&initial, &undone)?.norm())
}

/// [`reversibility_check`] for a chain run.
pub fn reversibility_check_chain(run: &ChainPurification) -> f64 {
    run.chain.undo_overlap(&run.operators).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::expm_hermitian;
    use crate::hilbert::{max_abs, partial_trace_dims};
    use crate::random::{random_ket, seeded_rng};
    use std::f64::consts::PI;

    fn params(u0: Ket, n_prime: usize, theta: f64) -> PurificationParams {
        let n = u0.dim();
        PurificationParams {
            upsilon0: u0,
            pulse_count: n_prime,
            pulse_dim: 2,
            theta,
            h_sys: harmonic_system(n),
            dt: 0.1,
            target_index: 0,
        }
    }

    #[test]
    fn zero_angle_is_identity() {
        let g = partial_swap_generator(0.0, 4, 2).unwrap();
        let u = expm_hermitian(&g, 1.0).unwrap();
        assert!(u.max_abs_diff(&OperatorMatrix::identity(8)) == 0.0);
    }

    #[test]
    fn full_swap_exchanges_excitation() {
        let g = partial_swap_generator(PI / 2.0, 2, 2).unwrap();
        let u = expm_hermitian(&g, 1.0).unwrap();
        // |1⟩|0⟩ → -i |0⟩|1⟩
        let out = u.apply(&Ket::basis(4, 2)).unwrap();
        assert!((out.as_slice()[1] - C64::new(0.0, -1.0)).norm() < 1e-15);
        assert!(out.as_slice()[2].norm() < 1e-15);
    }

    #[test]
    fn partial_swap_matches_hand_evolution() {
        let theta = PI / 8.0;
        let g = partial_swap_generator(theta, 2, 2).unwrap();
        let u = expm_hermitian(&g, 1.0).unwrap();
        let (c, s) = (theta.cos(), theta.sin());
        let i = C64::new(0.0, 1.0);
        let one = C64::new(1.0, 0.0);
        // basis |00⟩, |01⟩, |10⟩, |11⟩; only |01⟩ ↔ |10⟩ rotate
        let mut hand = DMatrix::<C64>::identity(4, 4);
        hand[(1, 1)] = one * c;
        hand[(2, 2)] = one * c;
        hand[(1, 2)] = -i * s;
        hand[(2, 1)] = -i * s;
        assert!(max_abs(&(u.matrix() - &hand)) <= 1e-12);
        let mut rng = seeded_rng(5);
        let psi = random_ket(4, &mut rng);
        let h = OperatorMatrix::diagonal(&[0.0, 0.0, 1.0, 1.0]);
        let after = u.apply(&psi).unwrap();
        let e = |k: &Ket| DensityMatrix::from_pure(k).expectation(&h).re;
        let hand_after = Ket::from_dvector(&hand * psi.amplitudes());
        assert!((e(&after) - e(&hand_after)).abs() <= 1e-12);
    }

    #[test]
    fn joint_step_factorizes_for_harmonic_system() {
        let h = partial_swap_hamiltonian(&harmonic_system(5), 3, 0.4, 0.1).unwrap();
        let joint = expm_hermitian(&h.joint().unwrap(), 0.1).unwrap();
        let h0 = kron_op(&h.system_part, &OperatorMatrix::identity(3))
            .unwrap()
            .add(&kron_op(&OperatorMatrix::identity(5), &h.pulse_part).unwrap())
            .unwrap();
        let free = expm_hermitian(&h0, 0.1).unwrap();
        let swap = expm_hermitian(&partial_swap_generator(0.4, 5, 3).unwrap(), 1.0).unwrap();
        assert!(joint.max_abs_diff(&free.compose(&swap).unwrap()) <= 1e-12);
    }

    #[test]
    fn target_state_is_stationary() {
        let run = purification_run(&params(Ket::basis(4, 0), 3, PI / 6.0)).unwrap();
        for r in &run.trace.records {
            assert!((r.target_overlap - 1.0).abs() <= 1e-14);
            assert!(r.energy.abs() <= 1e-14);
        }
        assert_eq!(run.trace.converged_at, Some(0));
    }

    #[test]
    fn full_swap_converges_in_one_cycle() {
        let run = purification_run(&params(Ket::basis(2, 1), 1, PI / 2.0)).unwrap();
        assert_eq!(run.trace.converged_at, Some(1));
        assert!(check_convergence(&run.trace, 1e-12));
    }

    #[test]
    fn reduced_energy_examples() {
        let spec = SpaceSpec::new(3, 2, 2).unwrap();
        let h = OperatorMatrix::diagonal(&[0.5, 1.5, 4.0]);
        let joint = Ket::basis(3, 2).tensor(&Ket::basis(4, 1)).unwrap();
        assert_eq!(reduced_energy(&joint, &spec, &h).unwrap(), 4.0);

        let bell = Ket::from_real(&[0.0, 1.0, 1.0, 0.0]).normalized().unwrap();
        let spec2 = SpaceSpec::new(2, 2, 1).unwrap();
        let e = reduced_energy(&bell, &spec2, &OperatorMatrix::diagonal(&[0.0, 1.0])).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reduced_energy_matches_summation_oracle() {
        let spec = SpaceSpec::new(3, 2, 2).unwrap();
        let mut rng = seeded_rng(9);
        let joint = random_ket(12, &mut rng);
        let h = crate::dynamics::random_tri_hamiltonian(3, 4, 1.0);
        let mut oracle = C64::new(0.0, 0.0);
        for i in 0..3 {
            for j in 0..3 {
                for rest in 0..4 {
                    oracle +=
                        h.matrix()[(j, i)] * joint.as_slice()[i * 4 + rest] * joint.as_slice()[j * 4 + rest].conj();
                }
            }
        }
        assert!((reduced_energy(&joint, &spec, &h).unwrap() - oracle.re).abs() <= 1e-12);
    }

    #[test]
    fn convergence_flags() {
        let mk = |o: &[f64]| PurificationTrace {
            records: o
                .iter()
                .enumerate()
                .map(|(cycle, &target_overlap)| PurificationRecord {
                    cycle,
                    energy: 0.0,
                    target_overlap,
                })
                .collect(),
            converged_at: None,
            target_index: 0,
            target_energy: 0.0,
        };
        assert!(check_convergence(&mk(&[0.2, 1.0]), 1e-6));
        assert!(!check_convergence(&mk(&[0.0, 0.0]), 1e-6));
        assert!(!check_convergence(&mk(&[]), 1e-6));
    }

    #[test]
    fn density_matrix_oracle_and_monotone_energy() {
        let mut rng = seeded_rng(31);
        let u0 = random_ket(4, &mut rng);
        let p = params(u0.clone(), 6, PI / 6.0);
        let run = purification_run(&p).unwrap();
        // Oracle: ρ ← Tr_φ[C (ρ ⊗ |0⟩⟨0|) C†] with the full 8×8 cycle matrix.
        let h = p.hamiltonian().unwrap();
        let ops = CycleOperators::new(&h, 0.1).unwrap();
        let mut rho = DensityMatrix::from_pure(&u0);
        let cold = DensityMatrix::from_pure(&Ket::basis(2, 0));
        for rec in &run.trace.records {
            let e = rho.expectation(&p.h_sys).re;
            assert!((rec.energy - e).abs() <= 1e-10, "cycle {}", rec.cycle);
            let joint = rho.matrix().kronecker(cold.matrix());
            let evolved = ops.cycle.matrix() * joint * ops.cycle.matrix().adjoint();
            rho = partial_trace_dims(&DensityMatrix::from_matrix_unchecked(evolved), &[4, 2], &[0]).unwrap();
        }
        for w in run.trace.records.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-9);
        }
        let dense_final = reduced_energy(&run.joint, &SpaceSpec::new(4, 2, 6).unwrap(), &p.h_sys).unwrap();
        assert!((dense_final - run.trace.final_record().unwrap().energy).abs() <= 1e-12);
    }

    #[test]
    fn dense_run_is_reversible() {
        let mut rng = seeded_rng(2);
        let p = params(random_ket(4, &mut rng), 5, PI / 6.0);
        let run = purification_run(&p).unwrap();
        assert!(reversibility_check(&run.joint, &run.memory, &p).unwrap() >= 1.0 - 1e-12);
        let chain = purification_run_chain(&p).unwrap();
        assert!(reversibility_check_chain(&chain) >= 1.0 - 1e-12);
        let mut wrong = p.clone();
        wrong.pulse_count = 4;
        assert!(matches!(
            reversibility_check(&run.joint, &run.memory, &wrong),
            Err(TrekError::ParameterMismatch(_))
        ));
    }

    #[test]
    fn zero_cycles_reversible_exactly() {
        let p = params(Ket::basis(3, 1), 0, PI / 6.0);
        let run = purification_run(&p).unwrap();
        assert_eq!(reversibility_check(&run.joint, &run.memory, &p).unwrap(), 1.0);
    }

    #[test]
    fn full_swap_reversible() {
        let mut rng = seeded_rng(3);
        let p = params(random_ket(4, &mut rng), 3, PI / 2.0);
        let run = purification_run(&p).unwrap();
        assert!((reversibility_check(&run.joint, &run.memory, &p).unwrap() - 1.0).abs() <= 1e-12);
    }
}
