//! Sequential engine for long pulse trains.
//!
//! Each pulse starts in a product state and meets the system exactly once, so
//! Alice's register after `N'` cycles is a chain
//! `Σ ψ0[s0] Π_k A_k[s_k, r_k, s_{k+1}] |s_{N'}, r_0, ..., r_{N'-1}⟩`
//! with bond index equal to the system index. Reduced system states, Bob's
//! reconstruction and the undo overlap are all contracted along the chain in
//! `O(N'·N_Υ⁶·N_φ)` time, independent of the `N_Υ·N_φ^{N'}` register size.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{CycleOperators, HamiltonianSpec};
use crate::error::{Result, TrekError};
use crate::hilbert::{AntiUnitaryOp, DensityMatrix, Ket, OperatorMatrix, C64, DEFAULT_DIM_CAP};
use crate::protocol::PulseTrain;
use crate::trace::{Phase, ProtocolTrace};

const ZERO: C64 = C64::new(0.0, 0.0);

/// Alice's register in chain form.
#[derive(Debug, Clone)]
pub struct ChainRegister {
    system_dim: usize,
    pulse_dim: usize,
    psi0: DVector<C64>,
    /// Per pulse, `K_r[s', s] = ⟨s', r| U_joint |s, φ_k⟩`.
    interact: Vec<Vec<DMatrix<C64>>>,
    /// `U_sys(Δt)`.
    free_step: DMatrix<C64>,
    pulses: Vec<Ket>,
}

/// Bob's reduced system after a chain reconstruction.
#[derive(Debug, Clone)]
pub struct ChainBob {
    pub system: DensityMatrix,
    /// Probability of Alice's outcome `p`.
    pub probability: f64,
    pub trace: ProtocolTrace,
}

fn kraus_from(op: &DMatrix<C64>, pulse: &Ket, n: usize, m: usize) -> Vec<DMatrix<C64>> {
    (0..m)
        .map(|r| {
            DMatrix::from_fn(n, n, |s_out, s_in| {
                (0..m)
                    .map(|q| op[(s_out * m + r, s_in * m + q)] * pulse.as_slice()[q])
                    .sum()
            })
        })
        .collect()
}

fn channel(rho: &DMatrix<C64>, kraus: &[DMatrix<C64>]) -> DMatrix<C64> {
    kraus.iter().fold(DMatrix::zeros(rho.nrows(), rho.ncols()), |acc, k| {
        acc + k * rho * k.adjoint()
    })
}

fn unitary_conj(rho: &DMatrix<C64>, u: &DMatrix<C64>) -> DMatrix<C64> {
    u * rho * u.adjoint()
}

impl ChainRegister {
    /// Runs Alice's cycles on `Υ0 ⊗ train`.
    pub fn alice(upsilon0: &Ket, train: &PulseTrain, ops: &CycleOperators) -> Result<Self> {
        let n = ops.free.dim();
        let m = ops.joint.dim() / n;
        if upsilon0.dim() != n {
            return Err(TrekError::DimensionMismatch {
                expected: n,
                found: upsilon0.dim(),
            });
        }
        if train.pulse_dim() != m {
            return Err(TrekError::DimensionMismatch {
                expected: m,
                found: train.pulse_dim(),
            });
        }
        upsilon0.require_normalized()?;
        let interact = train
            .states()
            .iter()
            .map(|p| kraus_from(ops.joint.matrix(), p, n, m))
            .collect();
        Ok(ChainRegister {
            system_dim: n,
            pulse_dim: m,
            psi0: upsilon0.amplitudes().clone(),
            interact,
            free_step: ops.free_step.matrix().clone(),
            pulses: train.states().to_vec(),
        })
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn pulse_count(&self) -> usize {
        self.interact.len()
    }

    /// Full-cycle operators `K_r = U_sys(2Δt)·K^{joint}_r` for pulse `k`.
    fn cycle_kraus(&self, k: usize) -> Vec<DMatrix<C64>> {
        let f2 = &self.free_step * &self.free_step;
        self.interact[k].iter().map(|kr| &f2 * kr).collect()
    }

    /// Reduced system states before the first and after every cycle.
    pub fn system_states(&self) -> Vec<DMatrix<C64>> {
        let mut rho = &self.psi0 * self.psi0.adjoint();
        let mut out = vec![rho.clone()];
        for k in 0..self.pulse_count() {
            rho = channel(&rho, &self.cycle_kraus(k));
            out.push(rho.clone());
        }
        out
    }

    pub fn final_system_state(&self) -> DensityMatrix {
        DensityMatrix::from_matrix_unchecked(self.system_states().pop().expect("nonempty"))
    }

    /// Three records per cycle, as in the dense run.
    pub fn alice_trace(&self, dt: f64, h_sys: &OperatorMatrix) -> ProtocolTrace {
        let mut trace = ProtocolTrace::new(dt, self.system_dim);
        let mut rho = &self.psi0 * self.psi0.adjoint();
        for k in 0..self.pulse_count() {
            rho = channel(&rho, &self.interact[k]);
            trace.record_state(
                Phase::Interact,
                &DensityMatrix::from_matrix_unchecked(rho.clone()),
                h_sys,
            );
            rho = unitary_conj(&rho, &self.free_step);
            trace.record_state(Phase::Store, &DensityMatrix::from_matrix_unchecked(rho.clone()), h_sys);
            rho = unitary_conj(&rho, &self.free_step);
            trace.record_state(
                Phase::Teleport,
                &DensityMatrix::from_matrix_unchecked(rho.clone()),
                h_sys,
            );
        }
        trace
    }

    /// Expands the chain into a dense register `[system, slot_0, ...]`.
    pub fn to_dense(&self) -> Result<Ket> {
        let dim = crate::hilbert::joint_dimension(self.system_dim, self.pulse_dim, self.pulse_count());
        if dim > DEFAULT_DIM_CAP as u128 {
            return Err(TrekError::DimensionCap {
                dim,
                cap: DEFAULT_DIM_CAP,
            });
        }
        let (n, m) = (self.system_dim, self.pulse_dim);
        let mut state: Vec<C64> = self.psi0.iter().cloned().collect();
        let mut rest = 1;
        for k in 0..self.pulse_count() {
            let kraus = self.cycle_kraus(k);
            let mut next = vec![ZERO; n * rest * m];
            for (r, kr) in kraus.iter().enumerate() {
                for s_out in 0..n {
                    for s_in in 0..n {
                        let c = kr[(s_out, s_in)];
                        if c == ZERO {
                            continue;
                        }
                        for idx in 0..rest {
                            next[(s_out * rest + idx) * m + r] += c * state[s_in * rest + idx];
                        }
                    }
                }
            }
            state = next;
            rest *= m;
        }
        Ok(Ket::from_vec(state))
    }

    /// Bob's reduced system when he starts from `beta` with the pulse register
    /// conditioned on Alice's outcome `p` and applies his inverse cycles.
    pub fn bob_inverse(&self, p: usize, beta: &Ket, ops: &CycleOperators, h_sys: &OperatorMatrix) -> Result<ChainBob> {
        let kraus: Vec<_> = (0..self.pulse_count()).map(|k| self.cycle_kraus(k)).collect();
        let lefts = self.system_states();
        self.bob_sweep(
            p,
            beta,
            &self.psi0,
            &kraus,
            &lefts,
            ops.cycle_inv.matrix(),
            &ops.free_inv,
            h_sys,
            ops.dt,
        )
    }

    /// Bob's forward-time emulation: reverse his whole register with
    /// `t_sys ⊗ t_φ^{⊗N'}`, then apply `(U_joint·(U_sys(2Δt) ⊗ I)·R⁻¹)^{N'}`.
    pub fn bob_forward(
        &self,
        p: usize,
        beta: &Ket,
        h: &HamiltonianSpec,
        ops: &CycleOperators,
        t_sys: &AntiUnitaryOp,
        t_phi: &AntiUnitaryOp,
    ) -> Result<ChainBob> {
        h.require_time_reversal_invariant(t_sys, t_phi)?;
        let u_phi = t_phi.unitary_part().matrix();
        let m = self.pulse_dim;
        let conj_pulse = t_phi.conjugates();
        let reversed: Vec<Vec<DMatrix<C64>>> = (0..self.pulse_count())
            .map(|k| {
                let base: Vec<DMatrix<C64>> = self
                    .cycle_kraus(k)
                    .into_iter()
                    .map(|kr| if conj_pulse { kr.conjugate() } else { kr })
                    .collect();
                (0..m)
                    .map(|r| {
                        (0..m).fold(DMatrix::zeros(self.system_dim, self.system_dim), |acc, q| {
                            acc + &base[q] * u_phi[(r, q)]
                        })
                    })
                    .collect()
            })
            .collect();
        let psi0 = if conj_pulse {
            self.psi0.conjugate()
        } else {
            self.psi0.clone()
        };
        let lefts: Vec<_> = self
            .system_states()
            .into_iter()
            .map(|r| if conj_pulse { r.conjugate() } else { r })
            .collect();
        let beta_rev = t_sys.apply(beta)?;
        let forward_cycle = ops
            .joint
            .compose(&crate::hilbert::kron_op(&ops.free, &OperatorMatrix::identity(m))?)?;
        self.bob_sweep(
            p,
            &beta_rev,
            &psi0,
            &reversed,
            &lefts,
            forward_cycle.matrix(),
            &ops.free,
            &h.system_part,
            ops.dt,
        )
    }

    #[allow(clippy::too_many_arguments)]
    fn bob_sweep(
        &self,
        p: usize,
        beta: &Ket,
        psi0: &DVector<C64>,
        kraus: &[Vec<DMatrix<C64>>],
        lefts: &[DMatrix<C64>],
        v: &DMatrix<C64>,
        free: &OperatorMatrix,
        h_sys: &OperatorMatrix,
        dt: f64,
    ) -> Result<ChainBob> {
        let (n, m) = (self.system_dim, self.pulse_dim);
        if p >= n {
            return Err(TrekError::InvalidSlot(p));
        }
        if beta.dim() != n {
            return Err(TrekError::DimensionMismatch {
                expected: n,
                found: beta.dim(),
            });
        }
        let big = self.pulse_count();
        let probability = lefts[big][(p, p)].re;
        if probability <= 0.0 {
            return Err(TrekError::ZeroProbability { index: p });
        }
        // Z over (alice bond c, bob system b), index c·n + b.
        let mut start = DVector::<C64>::zeros(n * n);
        for b in 0..n {
            start[p * n + b] = beta.as_slice()[b];
        }
        let mut z = &start * start.adjoint() / C64::new(probability, 0.0);
        let mut trace = ProtocolTrace::new(dt, n);
        let bob_state = |z: &DMatrix<C64>, left: &DMatrix<C64>| -> DMatrix<C64> {
            DMatrix::from_fn(n, n, |b, bb| {
                let mut acc = ZERO;
                for a in 0..n {
                    for aa in 0..n {
                        acc += left[(a, aa)] * z[(a * n + b, aa * n + bb)];
                    }
                }
                acc
            })
        };
        for k in (0..big).rev() {
            let before = bob_state(&z, &lefts[k + 1]);
            trace.record_state(
                Phase::Recall,
                &DensityMatrix::from_matrix_unchecked(before.clone()),
                h_sys,
            );
            let evolved = unitary_conj(&before, free.matrix());
            trace.record_state(Phase::FreeEvolve, &DensityMatrix::from_matrix_unchecked(evolved), h_sys);
            let mut next = DMatrix::<C64>::zeros(n * n, n * n);
            for r_out in 0..m {
                // M[(a, b'), (c, b)] = Σ_r V[(b', r_out), (b, r)] · K_r[c, a]
                let mut mm = DMatrix::<C64>::zeros(n * n, n * n);
                for a in 0..n {
                    for b_out in 0..n {
                        for c in 0..n {
                            for b in 0..n {
                                let mut acc = ZERO;
                                for r in 0..m {
                                    acc += v[(b_out * m + r_out, b * m + r)] * kraus[k][r][(c, a)];
                                }
                                mm[(a * n + b_out, c * n + b)] = acc;
                            }
                        }
                    }
                }
                next += &mm * &z * mm.adjoint();
            }
            z = next;
            let after = bob_state(&z, &lefts[k]);
            trace.record_state(Phase::Reverse, &DensityMatrix::from_matrix_unchecked(after), h_sys);
        }
        let rho = DMatrix::from_fn(n, n, |b, bb| {
            let mut acc = ZERO;
            for a in 0..n {
                for aa in 0..n {
                    acc += psi0[a] * psi0[aa].conj() * z[(a * n + b, aa * n + bb)];
                }
            }
            acc
        });
        Ok(ChainBob {
            system: DensityMatrix::from_matrix_unchecked(rho),
            probability,
            trace,
        })
    }

    /// `⟨Υ0 ⊗ φs| O_A⁻¹ |final register⟩`, contracted along the chain.
    pub fn undo_overlap(&self, ops: &CycleOperators) -> C64 {
        let (n, m) = (self.system_dim, self.pulse_dim);
        let v = ops.cycle_inv.matrix();
        let mut w = DMatrix::<C64>::identity(n, n);
        for k in (0..self.pulse_count()).rev() {
            let kraus = self.cycle_kraus(k);
            let phi = self.pulses[k].as_slice();
            // W_k[a, b'] = Σ conj(φ[r']) V[(b', r'), (b, r)] K_r[c, a] W_{k+1}[c, b]
            let mut g = vec![DMatrix::<C64>::zeros(n, n); m];
            for (r, kr) in kraus.iter().enumerate() {
                g[r] = kr.transpose() * &w;
            }
            let mut next = DMatrix::<C64>::zeros(n, n);
            for b_out in 0..n {
                for r_out in 0..m {
                    let weight = phi[r_out].conj();
                    if weight == ZERO {
                        continue;
                    }
                    for b in 0..n {
                        for r in 0..m {
                            let c = weight * v[(b_out * m + r_out, b * m + r)];
                            if c == ZERO {
                                continue;
                            }
                            for a in 0..n {
                                next[(a, b_out)] += c * g[r][(a, b)];
                            }
                        }
                    }
                }
            }
            w = next;
        }
        let mut acc = ZERO;
        for a in 0..n {
            for b in 0..n {
                acc += self.psi0[a] * self.psi0[b].conj() * w[(a, b)];
            }
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{project_onto_basis, system_state};
    use crate::memory::{teleport_memory, RecallOrder};
    use crate::protocol::{alice_run_relaxed, bob_forward_register, bob_inverse_register, ForwardOrdering};
    use crate::random::{random_ket, seeded_rng};

    fn setup(seed: u64) -> (HamiltonianSpec, PulseTrain, Ket, CycleOperators) {
        let h = HamiltonianSpec::generic_coupled(3, 2, seed, 1.0).unwrap();
        let mut rng = seeded_rng(seed + 100);
        let train = PulseTrain::new((0..4).map(|_| random_ket(2, &mut rng)).collect(), 2).unwrap();
        let u0 = random_ket(3, &mut rng);
        let ops = CycleOperators::new(&h, 0.1).unwrap();
        (h, train, u0, ops)
    }

    fn bob_dense(
        h: &HamiltonianSpec,
        train: &PulseTrain,
        u0: &Ket,
        ops: &CycleOperators,
        forward: bool,
    ) -> (DMatrix<C64>, f64) {
        let run = alice_run_relaxed(u0, train, h, 0.1).unwrap();
        let dims = vec![3, 2, 2, 2, 2];
        let (collapsed, prob) = project_onto_basis(&run.register, &dims, 0, 1).unwrap();
        let mem = teleport_memory(run.memory).unwrap();
        let bob = if forward {
            let k3 = AntiUnitaryOp::conjugation(3);
            let k2 = AntiUnitaryOp::conjugation(2);
            bob_forward_register(collapsed, mem, h, ops, &k3, &k2, ForwardOrdering::Reordered).unwrap()
        } else {
            bob_inverse_register(collapsed, mem, ops, &h.system_part, RecallOrder::Filo).unwrap()
        };
        (system_state(&bob.register, 3).unwrap().matrix().clone(), prob)
    }

    #[test]
    fn dense_expansion_matches_alice_run() {
        let (h, train, u0, ops) = setup(1);
        let chain = ChainRegister::alice(&u0, &train, &ops).unwrap();
        let dense = alice_run_relaxed(&u0, &train, &h, 0.1).unwrap();
        assert!(chain.to_dense().unwrap().max_abs_diff(&dense.register) <= 1e-12);
        let rho = system_state(&dense.register, 3).unwrap();
        assert!(crate::hilbert::max_abs(&(chain.final_system_state().matrix() - rho.matrix())) <= 1e-12);
        let ct = chain.alice_trace(0.1, &h.system_part);
        for (a, b) in ct.records().iter().zip(dense.trace.records()) {
            assert_eq!(a.phase, b.phase);
            assert!((a.system_energy - b.system_energy).abs() <= 1e-12);
        }
    }

    #[test]
    fn bob_inverse_matches_dense() {
        let (h, train, u0, ops) = setup(2);
        let chain = ChainRegister::alice(&u0, &train, &ops).unwrap();
        let bob = chain.bob_inverse(1, &Ket::basis(3, 1), &ops, &h.system_part).unwrap();
        let (want, prob) = bob_dense(&h, &train, &u0, &ops, false);
        assert!((bob.probability - prob).abs() <= 1e-12);
        assert!(crate::hilbert::max_abs(&(bob.system.matrix() - want)) <= 1e-11);
        assert_eq!(bob.trace.records().len(), 12);
    }

    #[test]
    fn bob_forward_matches_dense() {
        let (h, train, u0, ops) = setup(3);
        let chain = ChainRegister::alice(&u0, &train, &ops).unwrap();
        let k3 = AntiUnitaryOp::conjugation(3);
        let k2 = AntiUnitaryOp::conjugation(2);
        let bob = chain.bob_forward(1, &Ket::basis(3, 1), &h, &ops, &k3, &k2).unwrap();
        let (want, _) = bob_dense(&h, &train, &u0, &ops, true);
        assert!(crate::hilbert::max_abs(&(bob.system.matrix() - want)) <= 1e-11);
    }

    #[test]
    fn undo_overlap_is_one() {
        let (_, train, u0, ops) = setup(4);
        let chain = ChainRegister::alice(&u0, &train, &ops).unwrap();
        assert!((chain.undo_overlap(&ops).norm() - 1.0).abs() <= 1e-12);
        let empty = ChainRegister::alice(&u0, &PulseTrain::cold(2, 0), &ops).unwrap();
        assert!((empty.undo_overlap(&ops).norm() - 1.0).abs() <= 1e-15);
    }
}
