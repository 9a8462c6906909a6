//! Fidelities, the single-cycle teleportable subspace and bipartite
//! entanglement diagnostics.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::dynamics::{CycleOperators, HamiltonianSpec};
use crate::error::{Result, TrekError};
use crate::hilbert::{
    inner_product, permute_factors, project_onto_basis, system_state, DensityMatrix, Ket, SpaceSpec, C64,
};
use crate::memory::{teleport_memory, RecallOrder};
use crate::protocol::{alice_run_relaxed, bob_inverse_register, PulseTrain};

/// Singular values below this count as zero.
pub const SCHMIDT_CUTOFF: f64 = 1e-10;

/// Singular values below this mark a solution of the product constraint.
pub const NULL_SPACE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FidelityMode {
    Direct,
    Conjugate,
}

/// `|⟨original|reconstructed⟩|²`, or with `conj(original)` in conjugate mode.
pub fn reconstruction_fidelity(original: &Ket, reconstructed: &Ket, mode: FidelityMode) -> Result<f64> {
    original.require_normalized()?;
    reconstructed.require_normalized()?;
    let reference = match mode {
        FidelityMode::Direct => original.clone(),
        FidelityMode::Conjugate => original.conj(),
    };
    Ok(inner_product(&reference, reconstructed)?.norm_sqr())
}

/// `⟨v|ρ|v⟩` for a possibly mixed reconstruction.
pub fn mixed_fidelity(original: &Ket, rho: &DensityMatrix, mode: FidelityMode) -> Result<f64> {
    let v = match mode {
        FidelityMode::Direct => original.clone(),
        FidelityMode::Conjugate => original.conj(),
    };
    if v.dim() != rho.dim() {
        return Err(TrekError::DimensionMismatch {
            expected: rho.dim(),
            found: v.dim(),
        });
    }
    Ok(rho.population(&v))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceReport {
    pub dimension: usize,
    pub basis: Vec<Ket>,
    /// Norm of the component of each member's preimage outside `pulse0`.
    pub residuals: Vec<f64>,
}

/// System states that a single cycle teleports exactly when Alice reports
/// outcome `p`.
///
/// Perfect reconstruction needs Alice's post-cycle register to be
/// `|e_p⟩ ⊗ β`, i.e. `Υ ⊗ pulse0 = C⁻¹(|e_p⟩ ⊗ β)` for the cycle operator `C`.
/// The admissible `β` form the null space of `(I ⊗ (1 − |pulse0⟩⟨pulse0|))·C⁻¹(e_p ⊗ ·)`,
/// so the subspace has dimension at most `N_φ`.
pub fn teleportable_subspace(
    pulse0: &Ket,
    h: &HamiltonianSpec,
    dt: f64,
    p: usize,
    spec: &SpaceSpec,
) -> Result<SubspaceReport> {
    if spec.pulse_count() != 1 {
        return Err(TrekError::Precondition(format!(
            "the teleportable subspace is defined for a single cycle, got {} pulses",
            spec.pulse_count()
        )));
    }
    let (n, m) = (h.system_dim(), h.pulse_dim());
    if spec.system_dim() != n || spec.pulse_dim() != m || pulse0.dim() != m {
        return Err(TrekError::ParameterMismatch(
            "dimensions differ from the Hamiltonian's".into(),
        ));
    }
    if p >= n {
        return Err(TrekError::InvalidSlot(p));
    }
    pulse0.require_normalized()?;
    let ops = CycleOperators::new(h, dt)?;
    // Columns Ω_j = C⁻¹ |e_p, e_j⟩.
    let omega = ops.cycle_inv.matrix().columns(p * m, m).into_owned();
    let pi = pulse0.as_slice();
    let mut outside = omega.clone();
    for j in 0..m {
        for s in 0..n {
            let along: C64 = (0..m).map(|q| pi[q].conj() * omega[(s * m + q, j)]).sum();
            for q in 0..m {
                outside[(s * m + q, j)] -= along * pi[q];
            }
        }
    }
    let svd = outside.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let mut basis = Vec::new();
    let mut residuals = Vec::new();
    for (k, &sigma) in svd.singular_values.iter().enumerate() {
        if sigma > NULL_SPACE_TOL {
            continue;
        }
        let beta = v_t.row(k).adjoint();
        let member = nalgebra::DVector::from_fn(n, |s, _| {
            (0..m)
                .map(|q| {
                    let col: C64 = (0..m).map(|j| omega[(s * m + q, j)] * beta[j]).sum();
                    pi[q].conj() * col
                })
                .sum::<C64>()
        });
        residuals.push((&outside * &beta).norm());
        basis.push(Ket::from_dvector(member).normalized()?);
    }
    Ok(SubspaceReport {
        dimension: basis.len(),
        basis,
        residuals,
    })
}

/// Single-cycle teleportation of `upsilon` with Alice's outcome fixed to `p`
/// and Bob's exact inverse; returns Bob's reduced system and the outcome
/// probability.
pub fn single_cycle_reconstruction(
    upsilon: &Ket,
    pulse0: &Ket,
    h: &HamiltonianSpec,
    dt: f64,
    p: usize,
) -> Result<(DensityMatrix, f64)> {
    let train = PulseTrain::new(vec![pulse0.clone()], h.pulse_dim())?;
    let run = alice_run_relaxed(upsilon, &train, h, dt)?;
    let dims = [h.system_dim(), h.pulse_dim()];
    let (collapsed, prob) = match project_onto_basis(&run.register, &dims, 0, p) {
        Ok(r) => r,
        Err(TrekError::ZeroProbability { .. }) => {
            return Ok((DensityMatrix::from_pure(&Ket::basis(h.system_dim(), p)), 0.0))
        }
        Err(e) => return Err(e),
    };
    let mem = teleport_memory(run.memory)?;
    let ops = CycleOperators::new(h, dt)?;
    let bob = bob_inverse_register(collapsed, mem, &ops, &h.system_part, RecallOrder::Filo)?;
    Ok((system_state(&bob.register, h.system_dim())?, prob))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtReport {
    pub coefficients: Vec<f64>,
    pub rank: usize,
    pub separable: bool,
}

/// Schmidt coefficients across the cut `factors | rest`.
pub fn schmidt_coefficients(joint: &Ket, dims: &[usize], factors: &[usize]) -> Result<SchmidtReport> {
    let mut side = factors.to_vec();
    side.sort_unstable();
    side.dedup();
    if side.is_empty() || side.len() >= dims.len() || side.len() != factors.len() {
        return Err(TrekError::InvalidPartition(format!(
            "{factors:?} is not a proper bipartition of {} factors",
            dims.len()
        )));
    }
    if let Some(&bad) = side.iter().find(|&&f| f >= dims.len()) {
        return Err(TrekError::UnknownFactor(format!("factor #{bad}")));
    }
    let mut order = side.clone();
    order.extend((0..dims.len()).filter(|f| !side.contains(f)));
    let arranged = permute_factors(joint, dims, &order)?;
    let rows: usize = side.iter().map(|&f| dims[f]).product();
    let cols = joint.dim() / rows;
    // Row-major amplitudes reshaped as rows × cols.
    let m = DMatrix::from_row_slice(rows, cols, arranged.as_slice());
    let mut coefficients: Vec<f64> = m.singular_values().iter().cloned().collect();
    coefficients.sort_by(|a, b| b.total_cmp(a));
    let rank = coefficients.iter().filter(|&&c| c > SCHMIDT_CUTOFF).count();
    Ok(SchmidtReport {
        coefficients,
        rank,
        separable: rank == 1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientStructure {
    /// Largest entry of `|M_direct − M_separable|`.
    pub residual: f64,
    /// Whether the post-cycle coefficients factorize (Schmidt rank 1).
    pub applicable: bool,
    pub rank: usize,
}

/// Compares `M_ij = Σ_l α_il α_jl` computed from `α_ij = ⟨Φ_ij|Υ0 ⊗ pulse0⟩`
/// with `Φ_ij = C⁻¹|e_i, e_j⟩`, against the form it takes when
/// `α_ij = a_i b_j`, with `a, b` read off the forward-simulated register.
pub fn verify_separable_coefficients(
    upsilon0: &Ket,
    pulse0: &Ket,
    h: &HamiltonianSpec,
    dt: f64,
) -> Result<CoefficientStructure> {
    let (n, m) = (h.system_dim(), h.pulse_dim());
    let psi = upsilon0.tensor(pulse0)?;
    psi.require_normalized()?;
    let ops = CycleOperators::new(h, dt)?;
    let phi = ops.cycle_inv.matrix();
    let alpha_direct = DMatrix::from_fn(n, m, |i, j| {
        let col = phi.column(i * m + j);
        col.iter().zip(psi.as_slice()).map(|(a, b)| a.conj() * b).sum::<C64>()
    });
    let direct = &alpha_direct * alpha_direct.transpose();

    let forward = ops.cycle.apply(&psi)?;
    let alpha = DMatrix::from_row_slice(n, m, forward.as_slice());
    let svd = alpha.clone().svd(true, true);
    let u = svd.u.expect("requested");
    let v_t = svd.v_t.expect("requested");
    let mut k = 0;
    for (idx, s) in svd.singular_values.iter().enumerate() {
        if *s > svd.singular_values[k] {
            k = idx;
        }
    }
    let sigma = svd.singular_values[k];
    let a = u.column(k) * C64::new(sigma, 0.0);
    let b = v_t.row(k).transpose();
    let bb: C64 = b.iter().map(|z| z * z).sum();
    let separable = &a * a.transpose() * bb;
    let rank = svd.singular_values.iter().filter(|&&s| s > SCHMIDT_CUTOFF).count();
    Ok(CoefficientStructure {
        residual: crate::hilbert::max_abs(&(direct - separable)),
        applicable: rank == 1,
        rank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::OperatorMatrix;
    use crate::purify::{harmonic_system, partial_swap_hamiltonian};
    use crate::random::{random_ket, seeded_rng};
    use std::f64::consts::PI;

    #[test]
    fn fidelity_examples() {
        let mut rng = seeded_rng(1);
        let a = random_ket(4, &mut rng);
        assert!((reconstruction_fidelity(&a, &a, FidelityMode::Direct).unwrap() - 1.0).abs() < 1e-14);
        assert!((reconstruction_fidelity(&a, &a.conj(), FidelityMode::Conjugate).unwrap() - 1.0).abs() < 1e-14);
        let e0 = Ket::basis(4, 0);
        assert_eq!(
            reconstruction_fidelity(&e0, &Ket::basis(4, 1), FidelityMode::Direct).unwrap(),
            0.0
        );
        assert!(reconstruction_fidelity(&e0, &Ket::basis(3, 1), FidelityMode::Direct).is_err());
    }

    #[test]
    fn schmidt_examples() {
        let prod = Ket::from_real(&[0.6, 0.8])
            .tensor(&Ket::from_real(&[0.8, 0.6]))
            .unwrap();
        let r = schmidt_coefficients(&prod, &[2, 2], &[0]).unwrap();
        assert!(r.separable);
        assert!((r.coefficients[0] - 1.0).abs() < 1e-14);

        let bell = Ket::from_real(&[1.0, 0.0, 0.0, 1.0]).normalized().unwrap();
        let r = schmidt_coefficients(&bell, &[2, 2], &[1]).unwrap();
        assert_eq!(r.rank, 2);
        for c in &r.coefficients {
            assert!((c - 0.5f64.sqrt()).abs() < 1e-14);
        }
        assert!(schmidt_coefficients(&bell, &[2, 2], &[0, 1]).is_err());
        assert!(schmidt_coefficients(&bell, &[2, 2], &[]).is_err());
    }

    #[test]
    fn schmidt_matches_svd_of_reshaped_amplitudes() {
        let mut rng = seeded_rng(7);
        let psi = random_ket(24, &mut rng);
        // cut factor 1 of [2, 3, 4]: rows indexed by the middle digit
        let r = schmidt_coefficients(&psi, &[2, 3, 4], &[1]).unwrap();
        let m = DMatrix::from_fn(3, 8, |j, c| {
            let (i, k) = (c / 4, c % 4);
            psi.as_slice()[(i * 3 + j) * 4 + k]
        });
        let mut want: Vec<f64> = m.singular_values().iter().cloned().collect();
        want.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in r.coefficients.iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
        let total: f64 = r.coefficients.iter().map(|c| c * c).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn decoupled_subspace_is_one_dimensional() {
        let h = HamiltonianSpec::decoupled(
            crate::dynamics::random_tri_hamiltonian(4, 1, 1.0),
            crate::dynamics::random_tri_hamiltonian(2, 2, 1.0),
        )
        .unwrap();
        let spec = SpaceSpec::new(4, 2, 1).unwrap();
        let r = teleportable_subspace(&Ket::basis(2, 0), &h, 0.1, 1, &spec).unwrap();
        assert_eq!(r.dimension, 1);
        let (rho, prob) = single_cycle_reconstruction(&r.basis[0], &Ket::basis(2, 0), &h, 0.1, 1).unwrap();
        assert!((prob - 1.0).abs() < 1e-12);
        assert!(mixed_fidelity(&r.basis[0], &rho, FidelityMode::Direct).unwrap() >= 1.0 - 1e-12);
    }

    #[test]
    fn full_swap_subspace_reaches_pulse_dimension() {
        for m in [2, 3] {
            let h = partial_swap_hamiltonian(&harmonic_system(4), m, PI / 2.0, 0.1).unwrap();
            let spec = SpaceSpec::new(4, m, 1).unwrap();
            let r = teleportable_subspace(&Ket::basis(m, 0), &h, 0.1, 0, &spec).unwrap();
            assert_eq!(r.dimension, m);
            for member in &r.basis {
                let (rho, _) = single_cycle_reconstruction(member, &Ket::basis(m, 0), &h, 0.1, 0).unwrap();
                assert!(mixed_fidelity(member, &rho, FidelityMode::Direct).unwrap() >= 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn generic_subspace_respects_bound() {
        let h = HamiltonianSpec::generic_coupled(5, 2, 3, 1.0).unwrap();
        let spec = SpaceSpec::new(5, 2, 1).unwrap();
        let r = teleportable_subspace(&Ket::basis(2, 0), &h, 0.1, 0, &spec).unwrap();
        assert!(r.dimension <= 2);
        let multi = SpaceSpec::new(5, 2, 2).unwrap();
        assert!(matches!(
            teleportable_subspace(&Ket::basis(2, 0), &h, 0.1, 0, &multi),
            Err(TrekError::Precondition(_))
        ));
    }

    #[test]
    fn coefficient_structure_trivial_and_separable() {
        let h = HamiltonianSpec::decoupled(OperatorMatrix::zeros(4), OperatorMatrix::zeros(2)).unwrap();
        let mut rng = seeded_rng(3);
        let u0 = random_ket(4, &mut rng);
        let p0 = random_ket(2, &mut rng);
        let r = verify_separable_coefficients(&u0, &p0, &h, 0.1).unwrap();
        assert!(r.applicable);
        assert!(r.residual <= 1e-14);

        let h = HamiltonianSpec::decomposable(4, 2, 2, 5).unwrap();
        let r = verify_separable_coefficients(&Ket::basis(4, 2), &p0, &h, 0.1).unwrap();
        assert!(r.applicable);
        assert!(r.residual <= 1e-10);

        let h = HamiltonianSpec::generic_coupled(4, 2, 5, 1.0).unwrap();
        let r = verify_separable_coefficients(&u0, &p0, &h, 0.1).unwrap();
        assert!(!r.applicable);
        assert!(r.residual > 1e-6);
    }
}
