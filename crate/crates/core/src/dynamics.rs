//! Hamiltonians and unitary evolution.
//!
//! Units have ħ = 1 and dimensionless time steps. All propagators come from a
//! full Hermitian eigendecomposition so that `U(t)·U(-t) = I` and
//! `U(t1)·U(t2) = U(t1 + t2)` hold to rounding.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrekError};
use crate::hilbert::{
    hermitian_deviation, kron_op, AntiUnitaryOp, Ket, OperatorMatrix, ALGEBRAIC_TOL, C64, UNITARY_TOL,
};
use crate::random::{random_real_symmetric, seeded_rng};

/// Default time step Δt.
pub const DEFAULT_DT: f64 = 0.1;

/// Commutation tolerance for decomposable Hamiltonians.
pub const COMMUTATION_TOL: f64 = 1e-10;

/// Cached eigendecomposition `H = V·diag(E)·V†`.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    values: DVector<f64>,
    vectors: DMatrix<C64>,
}

impl HermitianEigen {
    pub fn new(h: &OperatorMatrix) -> Result<Self> {
        let dev = hermitian_deviation(h.matrix());
        if !h.is_hermitian() || dev > ALGEBRAIC_TOL {
            return Err(TrekError::NotHermitian { residual: dev });
        }
        let eig = h.matrix().clone().symmetric_eigen();
        Ok(HermitianEigen {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        })
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn eigenvectors(&self) -> &DMatrix<C64> {
        &self.vectors
    }

    /// `exp(-i·H·dt)`.
    pub fn propagator(&self, dt: f64) -> OperatorMatrix {
        let phases = DVector::from_iterator(
            self.values.len(),
            self.values.iter().map(|&e| C64::from_polar(1.0, -e * dt)),
        );
        let v = &self.vectors;
        let mut scaled = v.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= phases[j];
        }
        OperatorMatrix::with_flags(scaled * v.adjoint(), false, true)
    }

    /// Index of the smallest eigenvalue (lowest index on ties).
    pub fn ground_index(&self) -> usize {
        let mut best = 0;
        for (i, &e) in self.values.iter().enumerate() {
            if e < self.values[best] {
                best = i;
            }
        }
        best
    }
}

/// `exp(-i·H·dt)` for a Hermitian `H`.
pub fn expm_hermitian(h: &OperatorMatrix, dt: f64) -> Result<OperatorMatrix> {
    Ok(HermitianEigen::new(h)?.propagator(dt))
}

/// Seeded real symmetric matrix; invariant under complex conjugation.
pub fn random_tri_hamiltonian(dim: usize, seed: u64, scale: f64) -> OperatorMatrix {
    let mut rng = seeded_rng(seed);
    let m = random_real_symmetric(dim, scale, &mut rng);
    OperatorMatrix::from_real_symmetric(&m).expect("symmetric by construction")
}

/// `Σ H_sys^i ⊗ H_pulse^i`, provided every pair of distinct terms commutes.
pub fn build_decomposable_hamiltonian(parts: &[(OperatorMatrix, OperatorMatrix)]) -> Result<OperatorMatrix> {
    let first = parts
        .first()
        .ok_or_else(|| TrekError::Precondition("no decomposition terms given".into()))?;
    let mut terms = Vec::with_capacity(parts.len());
    for (hs, hp) in parts {
        if !hs.is_hermitian() || !hp.is_hermitian() {
            return Err(TrekError::NotHermitian {
                residual: hermitian_deviation(hs.matrix()).max(hermitian_deviation(hp.matrix())),
            });
        }
        terms.push(kron_op(hs, hp)?);
    }
    let (ok, norm) = crate::classify::check_commuting_decomposition(&terms)?;
    if !ok {
        return Err(TrekError::NonCommuting { norm });
    }
    let dim = first.0.dim() * first.1.dim();
    terms.iter().try_fold(OperatorMatrix::zeros(dim), |acc, t| acc.add(t))
}

/// `‖t H t⁻¹ − H‖_max`.
pub fn time_reversal_residual(h: &OperatorMatrix, t: &AntiUnitaryOp) -> Result<f64> {
    let reversed = t.conjugate_operator(h)?;
    Ok(reversed.max_abs_diff(h))
}

/// Residual `‖U(dt)·t·U(dt)|ψ⟩ − t|ψ⟩‖`, which vanishes for time-reversal
/// invariant `H`.
pub fn verify_wigner_reversal(h: &OperatorMatrix, t: &AntiUnitaryOp, psi: &Ket, dt: f64) -> Result<f64> {
    psi.require_normalized()?;
    let residual = time_reversal_residual(h, t)?;
    if residual > UNITARY_TOL {
        return Err(TrekError::TimeReversalViolated { residual });
    }
    let u = expm_hermitian(h, dt)?;
    let forward = u.apply(psi)?;
    let lhs = u.apply(&t.apply(&forward)?)?;
    let rhs = t.apply(psi)?;
    Ok(lhs.distance(&rhs))
}

/// One time step of unitary evolution with its generator.
#[derive(Debug, Clone)]
pub struct EvolutionStep {
    pub dt: f64,
    pub operator: OperatorMatrix,
}

impl EvolutionStep {
    pub fn new(h: &OperatorMatrix, dt: f64) -> Result<Self> {
        Ok(EvolutionStep {
            dt,
            operator: expm_hermitian(h, dt)?,
        })
    }
}

/// System, pulse and interaction parts of the joint Hamiltonian
/// `H_sys ⊗ I + I ⊗ H_pulse + g·H_int`.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub system_part: OperatorMatrix,
    pub pulse_part: OperatorMatrix,
    pub interaction: OperatorMatrix,
    pub coupling_strength: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HamiltonianKind {
    Decoupled,
    Decomposable,
    GenericCoupled,
    PartialSwap,
    Custom,
}

impl HamiltonianSpec {
    pub fn new(
        system_part: OperatorMatrix,
        pulse_part: OperatorMatrix,
        interaction: OperatorMatrix,
        coupling_strength: f64,
    ) -> Result<Self> {
        for part in [&system_part, &pulse_part, &interaction] {
            let dev = hermitian_deviation(part.matrix());
            if !part.is_hermitian() || dev > ALGEBRAIC_TOL {
                return Err(TrekError::NotHermitian { residual: dev });
            }
        }
        let dim = system_part.dim() * pulse_part.dim();
        if interaction.dim() != dim {
            return Err(TrekError::DimensionMismatch {
                expected: dim,
                found: interaction.dim(),
            });
        }
        Ok(HamiltonianSpec {
            system_part,
            pulse_part,
            interaction,
            coupling_strength,
        })
    }

    pub fn system_dim(&self) -> usize {
        self.system_part.dim()
    }

    pub fn pulse_dim(&self) -> usize {
        self.pulse_part.dim()
    }

    /// No system-pulse interaction.
    pub fn decoupled(system_part: OperatorMatrix, pulse_part: OperatorMatrix) -> Result<Self> {
        let dim = system_part.dim() * pulse_part.dim();
        Self::new(system_part, pulse_part, OperatorMatrix::zeros(dim), 0.0)
    }

    /// Seeded random real-symmetric parts, interaction scaled by `coupling`.
    pub fn generic_coupled(system_dim: usize, pulse_dim: usize, seed: u64, coupling: f64) -> Result<Self> {
        let base = seed.wrapping_mul(3);
        Self::new(
            random_tri_hamiltonian(system_dim, base, 1.0),
            random_tri_hamiltonian(pulse_dim, base.wrapping_add(1), 1.0),
            random_tri_hamiltonian(system_dim * pulse_dim, base.wrapping_add(2), 1.0),
            coupling,
        )
    }

    /// Decomposable family whose terms act on distinct pulse slots without
    /// interfering: diagonal system parts, and pulse parts diagonal in one
    /// shared random real basis. All terms commute with each other and with
    /// the free system Hamiltonian.
    pub fn decomposable(system_dim: usize, pulse_dim: usize, terms: usize, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        let diag = |dim: usize, rng: &mut crate::random::SeededRng| -> Vec<f64> {
            random_real_symmetric(dim, 1.0, rng)
                .diagonal()
                .iter()
                .cloned()
                .collect()
        };
        let system_part = OperatorMatrix::diagonal(&diag(system_dim, &mut rng));
        let pulse_part = OperatorMatrix::from_real_symmetric(&random_real_symmetric(pulse_dim, 1.0, &mut rng))?;
        let basis = random_real_symmetric(pulse_dim, 1.0, &mut rng)
            .symmetric_eigen()
            .eigenvectors;
        let parts: Vec<_> = (0..terms)
            .map(|_| {
                let hs = OperatorMatrix::diagonal(&diag(system_dim, &mut rng));
                let d = DMatrix::from_diagonal(&DVector::from_vec(diag(pulse_dim, &mut rng)));
                let hp = &basis * d * basis.transpose();
                let hp = (&hp + hp.transpose()) * 0.5;
                (hs, OperatorMatrix::from_real_symmetric(&hp).expect("symmetric"))
            })
            .collect();
        let interaction = build_decomposable_hamiltonian(&parts)?;
        Self::new(system_part, pulse_part, interaction, 1.0)
    }

    /// The joint Hamiltonian on system ⊗ one pulse.
    pub fn joint(&self) -> Result<OperatorMatrix> {
        let ip = OperatorMatrix::identity(self.pulse_dim());
        let is = OperatorMatrix::identity(self.system_dim());
        kron_op(&self.system_part, &ip)?
            .add(&kron_op(&is, &self.pulse_part)?)?
            .add(&self.interaction.scaled(self.coupling_strength))
    }

    /// Largest residual of `t H t⁻¹ = H` over the joint and system parts.
    pub fn time_reversal_residual(&self, t_sys: &AntiUnitaryOp, t_pulse: &AntiUnitaryOp) -> Result<f64> {
        let joint = time_reversal_residual(&self.joint()?, &t_sys.kron(t_pulse)?)?;
        let sys = time_reversal_residual(&self.system_part, t_sys)?;
        Ok(joint.max(sys))
    }

    pub fn require_time_reversal_invariant(&self, t_sys: &AntiUnitaryOp, t_pulse: &AntiUnitaryOp) -> Result<()> {
        let residual = self.time_reversal_residual(t_sys, t_pulse)?;
        if residual > UNITARY_TOL {
            Err(TrekError::TimeReversalViolated { residual })
        } else {
            Ok(())
        }
    }
}

/// Propagators for one interrogation cycle, computed once from cached
/// eigendecompositions.
#[derive(Debug, Clone)]
pub struct CycleOperators {
    pub dt: f64,
    /// `U_joint(Δt)` on system ⊗ active pulse.
    pub joint: OperatorMatrix,
    pub joint_inv: OperatorMatrix,
    /// `U_sys(Δt)`, one free-evolution interval.
    pub free_step: OperatorMatrix,
    /// `U_sys(2Δt)`.
    pub free: OperatorMatrix,
    pub free_inv: OperatorMatrix,
    /// `(U_sys(2Δt) ⊗ I)·U_joint(Δt)`.
    pub cycle: OperatorMatrix,
    /// `U_joint(Δt)⁻¹·(U_sys(2Δt)⁻¹ ⊗ I)`.
    pub cycle_inv: OperatorMatrix,
}

impl CycleOperators {
    pub fn new(h: &HamiltonianSpec, dt: f64) -> Result<Self> {
        let joint_eig = HermitianEigen::new(&h.joint()?)?;
        let sys_eig = HermitianEigen::new(&h.system_part)?;
        let ip = OperatorMatrix::identity(h.pulse_dim());
        let joint = joint_eig.propagator(dt);
        let joint_inv = joint_eig.propagator(-dt);
        let free = sys_eig.propagator(2.0 * dt);
        let free_inv = sys_eig.propagator(-2.0 * dt);
        let cycle = kron_op(&free, &ip)?.compose(&joint)?;
        let cycle_inv = joint_inv.compose(&kron_op(&free_inv, &ip)?)?;
        Ok(CycleOperators {
            dt,
            joint,
            joint_inv,
            free_step: sys_eig.propagator(dt),
            free,
            free_inv,
            cycle,
            cycle_inv,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{max_abs, ONE, ZERO};
    use crate::random::random_ket;
    use std::f64::consts::PI;

    /// exp(-i H dt) by scaling-and-squaring a 60-term Taylor series.
    fn taylor_expm(h: &DMatrix<C64>, dt: f64) -> DMatrix<C64> {
        let n = h.nrows();
        let a = h * C64::new(0.0, -dt);
        let norm = a.iter().map(|z| z.norm()).sum::<f64>();
        let squarings = (norm.max(1.0).log2().ceil() as i32 + 4).max(0) as u32;
        let a = a / C64::new(2f64.powi(squarings as i32), 0.0);
        let mut term = DMatrix::<C64>::identity(n, n);
        let mut sum = term.clone();
        for k in 1..=60 {
            term = &term * &a / C64::new(k as f64, 0.0);
            sum += &term;
        }
        for _ in 0..squarings {
            sum = &sum * &sum;
        }
        sum
    }

    #[test]
    fn zero_hamiltonian_gives_identity() {
        let u = expm_hermitian(&OperatorMatrix::zeros(3), 1.0).unwrap();
        assert!(u.max_abs_diff(&OperatorMatrix::identity(3)) < 1e-15);
        assert!(u.is_unitary());
    }

    #[test]
    fn diagonal_hamiltonian_at_pi() {
        let u = expm_hermitian(&OperatorMatrix::diagonal(&[1.0, 2.0]), PI).unwrap();
        let want = DMatrix::from_row_slice(2, 2, &[-ONE, ZERO, ZERO, ONE]);
        assert!(max_abs(&(u.matrix() - want)) < 1e-14);
    }

    #[test]
    fn matches_taylor_oracle() {
        let h = random_tri_hamiltonian(6, 17, 1.0);
        let u = expm_hermitian(&h, 0.1).unwrap();
        let oracle = taylor_expm(h.matrix(), 0.1);
        assert!(max_abs(&(u.matrix() - oracle)) <= 1e-12);
    }

    #[test]
    fn rejects_non_hermitian() {
        let m = DMatrix::from_row_slice(2, 2, &[ZERO, ONE, ZERO, ZERO]);
        let op = OperatorMatrix::general(m).unwrap();
        assert!(matches!(expm_hermitian(&op, 0.1), Err(TrekError::NotHermitian { .. })));
    }

    #[test]
    fn tri_hamiltonian_is_real_symmetric_and_deterministic() {
        let a = random_tri_hamiltonian(5, 42, 2.0);
        let b = random_tri_hamiltonian(5, 42, 2.0);
        assert_eq!(a, b);
        let m = a.matrix();
        assert!(m.iter().all(|z| z.im == 0.0));
        assert_eq!(m.transpose(), *m);
        assert!(m.iter().all(|z| z.re.abs() <= 2.0));
        let one = random_tri_hamiltonian(1, 3, 1.0);
        assert_eq!(one.dim(), 1);
        assert_eq!(one.matrix()[(0, 0)].im, 0.0);
    }

    #[test]
    fn conjugated_propagator_is_inverse_for_real_symmetric() {
        let h = random_tri_hamiltonian(7, 9, 1.0);
        let u = expm_hermitian(&h, 0.37).unwrap();
        let back = expm_hermitian(&h, -0.37).unwrap();
        assert!(u.conj().max_abs_diff(&back) <= 1e-12);
    }

    #[test]
    fn decomposable_single_pair_is_kron() {
        let hs = random_tri_hamiltonian(3, 1, 1.0);
        let hp = random_tri_hamiltonian(2, 2, 1.0);
        let h = build_decomposable_hamiltonian(&[(hs.clone(), hp.clone())]).unwrap();
        assert!(h.max_abs_diff(&kron_op(&hs, &hp).unwrap()) == 0.0);
    }

    #[test]
    fn decomposable_diagonal_pairs_accepted() {
        let a = (
            OperatorMatrix::diagonal(&[1.0, 2.0]),
            OperatorMatrix::diagonal(&[0.5, -0.5]),
        );
        let b = (
            OperatorMatrix::diagonal(&[3.0, -1.0]),
            OperatorMatrix::diagonal(&[2.0, 7.0]),
        );
        let h = build_decomposable_hamiltonian(&[a, b]).unwrap();
        // element-wise oracle: diagonal entries d_a[i]p_a[j] + d_b[i]p_b[j]
        let want = [
            1.0 * 0.5 + 3.0 * 2.0,
            1.0 * -0.5 + 3.0 * 7.0,
            2.0 * 0.5 - 2.0,
            2.0 * -0.5 - 7.0,
        ];
        for (k, w) in want.iter().enumerate() {
            assert!((h.matrix()[(k, k)].re - w).abs() < 1e-15);
        }
    }

    #[test]
    fn decomposable_rejects_non_commuting() {
        let a = (random_tri_hamiltonian(2, 1, 1.0), random_tri_hamiltonian(2, 2, 1.0));
        let b = (random_tri_hamiltonian(2, 3, 1.0), random_tri_hamiltonian(2, 4, 1.0));
        match build_decomposable_hamiltonian(&[a, b]) {
            Err(TrekError::NonCommuting { norm }) => assert!(norm > 1e-6),
            other => panic!("expected NonCommuting, got {other:?}"),
        }
    }

    #[test]
    fn wigner_reversal_examples() {
        let k = AntiUnitaryOp::conjugation(5);
        let mut rng = seeded_rng(4);
        let psi = random_ket(5, &mut rng);
        let r0 = verify_wigner_reversal(&OperatorMatrix::zeros(5), &k, &psi, 0.3).unwrap();
        assert_eq!(r0, 0.0);
        let h = random_tri_hamiltonian(5, 77, 1.0);
        assert!(verify_wigner_reversal(&h, &k, &psi, 0.3).unwrap() <= 1e-10);

        let mut m = h.matrix().clone();
        m[(0, 1)] += C64::new(0.0, 0.5);
        m[(1, 0)] -= C64::new(0.0, 0.5);
        let complex_h = OperatorMatrix::hermitian(m).unwrap();
        assert!(matches!(
            verify_wigner_reversal(&complex_h, &k, &psi, 0.3),
            Err(TrekError::TimeReversalViolated { .. })
        ));
    }

    #[test]
    fn joint_hamiltonian_has_sum_form() {
        let h = HamiltonianSpec::generic_coupled(3, 2, 5, 0.7).unwrap();
        let joint = h.joint().unwrap();
        let manual = h.system_part.matrix().kronecker(&DMatrix::identity(2, 2))
            + DMatrix::<C64>::identity(3, 3).kronecker(h.pulse_part.matrix())
            + h.interaction.matrix() * C64::new(0.7, 0.0);
        assert!(max_abs(&(joint.matrix() - manual)) <= 1e-12);
        assert!(joint.is_hermitian());
    }

    #[test]
    fn cycle_operators_are_mutually_inverse() {
        let h = HamiltonianSpec::generic_coupled(4, 2, 8, 1.0).unwrap();
        let ops = CycleOperators::new(&h, 0.1).unwrap();
        let id = ops.cycle.compose(&ops.cycle_inv).unwrap();
        assert!(id.max_abs_diff(&OperatorMatrix::identity(8)) <= 1e-12);
        let two = ops.free_step.compose(&ops.free_step).unwrap();
        assert!(two.max_abs_diff(&ops.free) <= 1e-12);
    }
}
