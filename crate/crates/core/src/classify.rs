//! Pulse-order sensitivity: slot permutations and the type-1/type-2 decision.

use serde::{Deserialize, Serialize};

use crate::dynamics::{CycleOperators, HamiltonianSpec};
use crate::error::{Result, TrekError};
use crate::hilbert::{apply_leading, hermitian_deviation, permute_factors, Ket, OperatorMatrix, SpaceSpec};
use crate::protocol::rotate_register_inverse;
use crate::random::{random_ket, seeded_rng};

pub const DEFAULT_THRESHOLD: f64 = 1e-8;
pub const DEFAULT_PROBES: usize = 16;
const COMMUTATION_TOL: f64 = 1e-10;

/// Exchange of two pulse slots as a factor permutation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotPermutation {
    dims: Vec<usize>,
    order: Vec<usize>,
}

impl SlotPermutation {
    pub fn apply(&self, state: &Ket) -> Result<Ket> {
        permute_factors(state, &self.dims, &self.order)
    }
}

pub fn permutation_op(i: usize, j: usize, spec: &SpaceSpec) -> Result<SlotPermutation> {
    let n = spec.pulse_count();
    if i >= n {
        return Err(TrekError::InvalidSlot(i));
    }
    if j >= n || i == j {
        return Err(TrekError::InvalidSlot(j));
    }
    let mut order: Vec<usize> = (0..=n).collect();
    order.swap(i + 1, j + 1);
    Ok(SlotPermutation {
        dims: spec.dims(),
        order,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    Type1,
    Type2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub kind: ProtocolKind,
    /// Slot pair with the largest residual, if any pair exists.
    pub witness_pair: Option<(usize, usize)>,
    pub residual: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub threshold: f64,
    pub probes: usize,
    pub seed: u64,
}

impl Default for ClassifyOptions {
    fn default() -> Self {
        ClassifyOptions {
            threshold: DEFAULT_THRESHOLD,
            probes: DEFAULT_PROBES,
            seed: 0,
        }
    }
}

/// `O_B = (U_joint⁻¹·(U_sys(2Δt)⁻¹ ⊗ I)·R⁻¹)^{N'}` on a register.
pub fn apply_bob_inverse(state: &Ket, ops: &CycleOperators, spec: &SpaceSpec) -> Result<Ket> {
    let mut s = state.clone();
    for _ in 0..spec.pulse_count() {
        s = rotate_register_inverse(&s, spec)?;
        s = apply_leading(&ops.cycle_inv, &s)?;
    }
    Ok(s)
}

/// Pulse order is immaterial iff `O_B` commutes with every slot exchange.
/// Each pair is tested on random probe registers:
/// `‖O_B·P_ij·ψ − P_ij·O_B·ψ‖`.
pub fn classify_type(
    h: &HamiltonianSpec,
    dt: f64,
    spec: &SpaceSpec,
    options: &ClassifyOptions,
) -> Result<ClassificationResult> {
    if spec.system_dim() != h.system_dim() || spec.pulse_dim() != h.pulse_dim() {
        return Err(TrekError::ParameterMismatch(
            "register dimensions differ from the Hamiltonian's".into(),
        ));
    }
    let ops = CycleOperators::new(h, dt)?;
    let mut rng = seeded_rng(options.seed);
    let probes: Vec<Ket> = (0..options.probes)
        .map(|_| random_ket(spec.total_dim(), &mut rng))
        .collect();
    let images: Vec<Ket> = probes
        .iter()
        .map(|p| apply_bob_inverse(p, &ops, spec))
        .collect::<Result<_>>()?;
    let n = spec.pulse_count();
    let mut worst: Option<((usize, usize), f64)> = None;
    let mut trials = 0;
    for i in 0..n {
        for j in i + 1..n {
            let perm = permutation_op(i, j, spec)?;
            let mut pair_max: f64 = 0.0;
            for (probe, image) in probes.iter().zip(&images) {
                let lhs = apply_bob_inverse(&perm.apply(probe)?, &ops, spec)?;
                let rhs = perm.apply(image)?;
                pair_max = pair_max.max(lhs.distance(&rhs));
                trials += 1;
            }
            if worst.is_none_or(|(_, r)| pair_max > r) {
                worst = Some(((i, j), pair_max));
            }
        }
    }
    let residual = worst.map_or(0.0, |(_, r)| r);
    Ok(ClassificationResult {
        kind: if residual <= options.threshold {
            ProtocolKind::Type1
        } else {
            ProtocolKind::Type2
        },
        witness_pair: worst.map(|(pair, _)| pair),
        residual,
        trials,
    })
}

/// Whether all distinct terms commute, and the largest commutator found.
pub fn check_commuting_decomposition(parts: &[OperatorMatrix]) -> Result<(bool, f64)> {
    let Some(first) = parts.first() else {
        return Ok((true, 0.0));
    };
    for p in parts {
        if p.dim() != first.dim() {
            return Err(TrekError::DimensionMismatch {
                expected: first.dim(),
                found: p.dim(),
            });
        }
        let dev = hermitian_deviation(p.matrix());
        if dev > crate::hilbert::ALGEBRAIC_TOL {
            return Err(TrekError::NotHermitian { residual: dev });
        }
    }
    let mut max_norm: f64 = 0.0;
    for (k, a) in parts.iter().enumerate() {
        for b in &parts[k + 1..] {
            max_norm = max_norm.max(a.commutator_norm(b)?);
        }
    }
    Ok((max_norm <= COMMUTATION_TOL, max_norm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{kron_op, tensor_ket};
    use nalgebra::DMatrix;

    fn pauli_x() -> OperatorMatrix {
        OperatorMatrix::from_real_symmetric(&DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap()
    }

    #[test]
    fn swap_of_slots_one_and_two() {
        let spec = SpaceSpec::new(2, 2, 3).unwrap();
        let u = Ket::from_real(&[0.6, 0.8]);
        let a = Ket::basis(2, 0);
        let b = Ket::basis(2, 1);
        let c = Ket::from_real(&[0.8, -0.6]);
        let reg = tensor_ket(&tensor_ket(&tensor_ket(&u, &a).unwrap(), &b).unwrap(), &c).unwrap();
        let want = tensor_ket(&tensor_ket(&tensor_ket(&u, &a).unwrap(), &c).unwrap(), &b).unwrap();
        let p = permutation_op(1, 2, &spec).unwrap();
        assert_eq!(p.apply(&reg).unwrap(), want);
        assert_eq!(p.apply(&want).unwrap(), reg);
    }

    #[test]
    fn swap_matches_index_oracle() {
        let spec = SpaceSpec::new(3, 2, 3).unwrap();
        let mut rng = seeded_rng(12);
        let psi = random_ket(spec.total_dim(), &mut rng);
        let out = permutation_op(0, 2, &spec).unwrap().apply(&psi).unwrap();
        for s in 0..3 {
            for a in 0..2 {
                for b in 0..2 {
                    for c in 0..2 {
                        let src = ((s * 2 + a) * 2 + b) * 2 + c;
                        let dst = ((s * 2 + c) * 2 + b) * 2 + a;
                        assert_eq!(out.as_slice()[dst], psi.as_slice()[src]);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_slots_rejected() {
        let spec = SpaceSpec::new(2, 2, 2).unwrap();
        assert!(permutation_op(0, 0, &spec).is_err());
        assert!(permutation_op(0, 2, &spec).is_err());
    }

    #[test]
    fn commuting_checks() {
        let d1 = OperatorMatrix::diagonal(&[1.0, 2.0, 3.0, 4.0]);
        let d2 = OperatorMatrix::diagonal(&[0.0, -1.0, 5.0, 2.0]);
        assert_eq!(check_commuting_decomposition(&[d1.clone(), d2]).unwrap(), (true, 0.0));
        assert_eq!(check_commuting_decomposition(&[d1]).unwrap(), (true, 0.0));

        let i2 = OperatorMatrix::identity(2);
        let z = OperatorMatrix::diagonal(&[1.0, -1.0]);
        let xi = kron_op(&pauli_x(), &i2).unwrap();
        let zi = kron_op(&z, &i2).unwrap();
        let (ok, norm) = check_commuting_decomposition(&[xi, zi]).unwrap();
        assert!(!ok);
        assert!((norm - 2.0).abs() < 1e-15);
    }

    #[test]
    fn decoupled_is_type1() {
        let hs = crate::dynamics::random_tri_hamiltonian(3, 1, 1.0);
        let hp = crate::dynamics::random_tri_hamiltonian(2, 2, 1.0);
        let h = HamiltonianSpec::decoupled(hs, hp).unwrap();
        let spec = SpaceSpec::new(3, 2, 3).unwrap();
        let r = classify_type(&h, 0.1, &spec, &ClassifyOptions::default()).unwrap();
        assert_eq!(r.kind, ProtocolKind::Type1);
        assert!(r.residual <= 1e-12);
        assert_eq!(r.trials, 3 * DEFAULT_PROBES);
    }

    #[test]
    fn generic_is_type2() {
        let h = HamiltonianSpec::generic_coupled(4, 2, 3, 1.0).unwrap();
        let spec = SpaceSpec::new(4, 2, 3).unwrap();
        let r = classify_type(&h, 0.1, &spec, &ClassifyOptions::default()).unwrap();
        assert_eq!(r.kind, ProtocolKind::Type2);
        assert!(r.residual > 1e-3);
        assert!(r.witness_pair.is_some());
    }

    #[test]
    fn decomposable_is_type1() {
        let h = HamiltonianSpec::decomposable(4, 2, 2, 7).unwrap();
        let spec = SpaceSpec::new(4, 2, 3).unwrap();
        let r = classify_type(&h, 0.1, &spec, &ClassifyOptions::default()).unwrap();
        assert_eq!(r.kind, ProtocolKind::Type1, "residual {}", r.residual);
    }

    #[test]
    fn single_slot_is_vacuously_type1() {
        let h = HamiltonianSpec::generic_coupled(3, 2, 3, 1.0).unwrap();
        let spec = SpaceSpec::new(3, 2, 1).unwrap();
        let r = classify_type(&h, 0.1, &spec, &ClassifyOptions::default()).unwrap();
        assert_eq!(r.kind, ProtocolKind::Type1);
        assert_eq!(r.witness_pair, None);
    }
}
