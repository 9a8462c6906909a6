//! Dense finite-dimensional Hilbert-space primitives.
//!
//! Registers are laid out with the row-major Kronecker convention: the system
//! factor is the most significant index, followed by pulse slot 0, slot 1, ...
//! A register of factor dimensions `[d0, d1, ..., dk]` stores the amplitude of
//! `|i0 i1 ... ik⟩` at `((i0 * d1 + i1) * d2 + i2) ...`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TrekError};

pub type C64 = Complex64;

/// Default cap on the total joint dimension of a register.
pub const DEFAULT_DIM_CAP: usize = 1 << 20;

/// Largest dimension of a materialized dense operator.
pub const OPERATOR_DIM_CAP: usize = 1 << 13;

/// Tolerance for exact algebraic identities (normalization, hermiticity).
pub const ALGEBRAIC_TOL: f64 = 1e-12;

/// Tolerance for unitarity of products of many factors.
pub const UNITARY_TOL: f64 = 1e-10;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FactorLabel {
    System,
    Pulse(usize),
}

impl fmt::Display for FactorLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FactorLabel::System => write!(f, "system"),
            FactorLabel::Pulse(i) => write!(f, "pulse{i}"),
        }
    }
}

/// Dimensions of the joint system ⊗ pulse-slot register.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpaceSpec {
    system_dim: usize,
    pulse_dim: usize,
    pulse_count: usize,
    cap: usize,
}

impl SpaceSpec {
    pub fn new(system_dim: usize, pulse_dim: usize, pulse_count: usize) -> Result<Self> {
        Self::with_cap(system_dim, pulse_dim, pulse_count, DEFAULT_DIM_CAP)
    }

    pub fn with_cap(system_dim: usize, pulse_dim: usize, pulse_count: usize, cap: usize) -> Result<Self> {
        if system_dim == 0 || pulse_dim == 0 {
            return Err(TrekError::Precondition(
                "system_dim and pulse_dim must be positive".into(),
            ));
        }
        let dim = joint_dimension(system_dim, pulse_dim, pulse_count);
        if dim > cap as u128 {
            return Err(TrekError::DimensionCap { dim, cap });
        }
        Ok(SpaceSpec {
            system_dim,
            pulse_dim,
            pulse_count,
            cap,
        })
    }

    pub fn system_dim(&self) -> usize {
        self.system_dim
    }

    pub fn pulse_dim(&self) -> usize {
        self.pulse_dim
    }

    pub fn pulse_count(&self) -> usize {
        self.pulse_count
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn total_dim(&self) -> usize {
        self.system_dim * self.pulse_register_dim()
    }

    /// Dimension of all pulse slots together, `pulse_dim^pulse_count`.
    pub fn pulse_register_dim(&self) -> usize {
        self.pulse_dim.pow(self.pulse_count as u32)
    }

    pub fn labels(&self) -> Vec<FactorLabel> {
        std::iter::once(FactorLabel::System)
            .chain((0..self.pulse_count).map(FactorLabel::Pulse))
            .collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.system_dim)
            .chain(std::iter::repeat_n(self.pulse_dim, self.pulse_count))
            .collect()
    }

    pub fn factor_index(&self, label: FactorLabel) -> Result<usize> {
        match label {
            FactorLabel::System => Ok(0),
            FactorLabel::Pulse(i) if i < self.pulse_count => Ok(i + 1),
            other => Err(TrekError::UnknownFactor(other.to_string())),
        }
    }

    /// Joint space of the system and a single pulse.
    pub fn interaction_dim(&self) -> usize {
        self.system_dim * self.pulse_dim
    }
}

/// `system_dim * pulse_dim^pulse_count` without overflow.
pub fn joint_dimension(system_dim: usize, pulse_dim: usize, pulse_count: usize) -> u128 {
    let mut dim = system_dim as u128;
    for _ in 0..pulse_count {
        dim = dim.saturating_mul(pulse_dim as u128);
        if dim > u64::MAX as u128 {
            break;
        }
    }
    dim
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<[f64; 2]>", from = "Vec<[f64; 2]>")]
pub struct Ket {
    amps: DVector<C64>,
}

impl From<Ket> for Vec<[f64; 2]> {
    fn from(k: Ket) -> Self {
        k.amps.iter().map(|z| [z.re, z.im]).collect()
    }
}

impl From<Vec<[f64; 2]>> for Ket {
    fn from(v: Vec<[f64; 2]>) -> Self {
        Ket::from_vec(v.into_iter().map(|[re, im]| C64::new(re, im)).collect())
    }
}

impl Ket {
    pub fn from_vec(amps: Vec<C64>) -> Self {
        Ket {
            amps: DVector::from_vec(amps),
        }
    }

    pub fn from_dvector(amps: DVector<C64>) -> Self {
        Ket { amps }
    }

    pub fn from_real(values: &[f64]) -> Self {
        Ket::from_vec(values.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    /// Computational basis state `|e_index⟩`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amps = DVector::from_element(dim, ZERO);
        amps[index] = ONE;
        Ket { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    pub fn as_slice(&self) -> &[C64] {
        self.amps.as_slice()
    }

    pub fn into_dvector(self) -> DVector<C64> {
        self.amps
    }

    pub fn norm(&self) -> f64 {
        self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.amps.iter().map(|z| z.norm_sqr()).sum::<f64>() - 1.0).abs() <= tol
    }

    pub fn normalized(&self) -> Result<Ket> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(TrekError::NotNormalized { norm: n });
        }
        Ok(Ket {
            amps: self.amps.map(|z| z / n),
        })
    }

    pub fn require_normalized(&self) -> Result<()> {
        if self.is_normalized(ALGEBRAIC_TOL) {
            Ok(())
        } else {
            Err(TrekError::NotNormalized { norm: self.norm() })
        }
    }

    pub fn conj(&self) -> Ket {
        Ket {
            amps: self.amps.map(|z| z.conj()),
        }
    }

    pub fn scale(&self, factor: C64) -> Ket {
        Ket {
            amps: self.amps.map(|z| z * factor),
        }
    }

    pub fn tensor(&self, other: &Ket) -> Result<Ket> {
        tensor_ket(self, other)
    }

    /// Largest element-wise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Ket) -> f64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max)
    }

    /// Euclidean distance `‖self - other‖`.
    pub fn distance(&self, other: &Ket) -> f64 {
        self.amps
            .iter()
            .zip(other.amps.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    mat: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validates hermiticity, unit trace and positivity.
    pub fn new(mat: DMatrix<C64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(TrekError::InvalidDensity("matrix is not square".into()));
        }
        let herm = hermitian_deviation(&mat);
        if herm > ALGEBRAIC_TOL {
            return Err(TrekError::InvalidDensity(format!(
                "not Hermitian (deviation {herm:.3e})"
            )));
        }
        let tr = mat.trace();
        if (tr.re - 1.0).abs() > ALGEBRAIC_TOL || tr.im.abs() > ALGEBRAIC_TOL {
            return Err(TrekError::InvalidDensity(format!("trace {tr}")));
        }
        let min_eig = mat
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return Err(TrekError::InvalidDensity(format!("negative eigenvalue {min_eig:.3e}")));
        }
        Ok(DensityMatrix { mat })
    }

    pub(crate) fn from_matrix_unchecked(mat: DMatrix<C64>) -> Self {
        DensityMatrix { mat }
    }

    pub fn from_pure(state: &Ket) -> Self {
        let v = state.amplitudes();
        DensityMatrix { mat: v * v.adjoint() }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn trace(&self) -> C64 {
        self.mat.trace()
    }

    pub fn purity(&self) -> f64 {
        // Tr(ρ²) = Σ |ρ_ij|² for Hermitian ρ.
        self.mat.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `Tr(op · ρ)`.
    pub fn expectation(&self, op: &OperatorMatrix) -> C64 {
        let m = op.matrix();
        let n = self.dim();
        let mut acc = ZERO;
        for i in 0..n {
            for j in 0..n {
                acc += m[(i, j)] * self.mat[(j, i)];
            }
        }
        acc
    }

    /// `⟨v|ρ|v⟩`.
    pub fn population(&self, v: &Ket) -> f64 {
        let a = v.amplitudes();
        (a.adjoint() * &self.mat * a)[(0, 0)].re
    }

    pub fn hermitian_deviation(&self) -> f64 {
        hermitian_deviation(&self.mat)
    }
}

/// Dense square operator with hermiticity and unitarity flags.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    mat: DMatrix<C64>,
    hermitian: bool,
    unitary: bool,
}

impl OperatorMatrix {
    pub fn general(mat: DMatrix<C64>) -> Result<Self> {
        if !mat.is_square() {
            return Err(TrekError::DimensionMismatch {
                expected: mat.nrows(),
                found: mat.ncols(),
            });
        }
        Ok(OperatorMatrix {
            mat,
            hermitian: false,
            unitary: false,
        })
    }

    pub fn hermitian(mat: DMatrix<C64>) -> Result<Self> {
        let mut op = Self::general(mat)?;
        let dev = hermitian_deviation(&op.mat);
        if dev > ALGEBRAIC_TOL {
            return Err(TrekError::NotHermitian { residual: dev });
        }
        op.hermitian = true;
        Ok(op)
    }

    pub fn unitary(mat: DMatrix<C64>) -> Result<Self> {
        let mut op = Self::general(mat)?;
        let dev = unitary_deviation(&op.mat);
        if dev > UNITARY_TOL {
            return Err(TrekError::NotUnitary { residual: dev });
        }
        op.unitary = true;
        Ok(op)
    }

    pub fn from_real_symmetric(values: &DMatrix<f64>) -> Result<Self> {
        Self::hermitian(values.map(|x| C64::new(x, 0.0)))
    }

    pub(crate) fn with_flags(mat: DMatrix<C64>, hermitian: bool, unitary: bool) -> Self {
        OperatorMatrix {
            mat,
            hermitian,
            unitary,
        }
    }

    pub fn identity(dim: usize) -> Self {
        OperatorMatrix {
            mat: DMatrix::identity(dim, dim),
            hermitian: true,
            unitary: true,
        }
    }

    pub fn zeros(dim: usize) -> Self {
        OperatorMatrix {
            mat: DMatrix::zeros(dim, dim),
            hermitian: true,
            unitary: false,
        }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let d = DVector::from_iterator(values.len(), values.iter().map(|&x| C64::new(x, 0.0)));
        OperatorMatrix {
            mat: DMatrix::from_diagonal(&d),
            hermitian: true,
            unitary: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.mat
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn is_unitary(&self) -> bool {
        self.unitary
    }

    pub fn adjoint(&self) -> OperatorMatrix {
        OperatorMatrix {
            mat: self.mat.adjoint(),
            hermitian: self.hermitian,
            unitary: self.unitary,
        }
    }

    pub fn conj(&self) -> OperatorMatrix {
        OperatorMatrix {
            mat: self.mat.map(|z| z.conj()),
            hermitian: self.hermitian,
            unitary: self.unitary,
        }
    }

    pub fn kron(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        kron_op(self, other)
    }

    /// Matrix product; unitarity survives when both factors are unitary.
    pub fn compose(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        check_dim(self.dim(), other.dim())?;
        Ok(OperatorMatrix {
            mat: &self.mat * &other.mat,
            hermitian: false,
            unitary: self.unitary && other.unitary,
        })
    }

    pub fn add(&self, other: &OperatorMatrix) -> Result<OperatorMatrix> {
        check_dim(self.dim(), other.dim())?;
        Ok(OperatorMatrix {
            mat: &self.mat + &other.mat,
            hermitian: self.hermitian && other.hermitian,
            unitary: false,
        })
    }

    pub fn scaled(&self, factor: f64) -> OperatorMatrix {
        OperatorMatrix {
            mat: &self.mat * C64::new(factor, 0.0),
            hermitian: self.hermitian,
            unitary: self.unitary && (factor.abs() - 1.0).abs() < ALGEBRAIC_TOL,
        }
    }

    pub fn apply(&self, state: &Ket) -> Result<Ket> {
        check_dim(self.dim(), state.dim())?;
        Ok(Ket::from_dvector(&self.mat * state.amplitudes()))
    }

    /// `‖[self, other]‖_max`.
    pub fn commutator_norm(&self, other: &OperatorMatrix) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        let c = &self.mat * &other.mat - &other.mat * &self.mat;
        Ok(max_abs(&c))
    }

    pub fn max_abs_diff(&self, other: &OperatorMatrix) -> f64 {
        max_abs(&(&self.mat - &other.mat))
    }
}

/// Antiunitary (or unitary, when `conjugates` is false) map `U·K`.
#[derive(Debug, Clone, PartialEq)]
pub struct AntiUnitaryOp {
    unitary_part: OperatorMatrix,
    conjugates: bool,
}

impl AntiUnitaryOp {
    pub fn new(unitary_part: OperatorMatrix, conjugates: bool) -> Result<Self> {
        if !unitary_part.is_unitary() {
            let dev = unitary_deviation(unitary_part.matrix());
            if dev > UNITARY_TOL {
                return Err(TrekError::NotUnitary { residual: dev });
            }
        }
        Ok(AntiUnitaryOp {
            unitary_part: OperatorMatrix::with_flags(unitary_part.mat, false, true),
            conjugates,
        })
    }

    /// Plain complex conjugation `K` in the computational basis.
    pub fn conjugation(dim: usize) -> Self {
        AntiUnitaryOp {
            unitary_part: OperatorMatrix::identity(dim),
            conjugates: true,
        }
    }

    /// Spin-1/2 reversal `iσ_y K`.
    pub fn spin_flip() -> Self {
        let m = DMatrix::from_row_slice(2, 2, &[ZERO, ONE, -ONE, ZERO]);
        AntiUnitaryOp {
            unitary_part: OperatorMatrix::with_flags(m, false, true),
            conjugates: true,
        }
    }

    pub fn dim(&self) -> usize {
        self.unitary_part.dim()
    }

    pub fn unitary_part(&self) -> &OperatorMatrix {
        &self.unitary_part
    }

    pub fn conjugates(&self) -> bool {
        self.conjugates
    }

    /// Tensor product of two maps; both must agree on conjugation.
    pub fn kron(&self, other: &AntiUnitaryOp) -> Result<AntiUnitaryOp> {
        if self.conjugates != other.conjugates {
            return Err(TrekError::Precondition(
                "cannot tensor a unitary with an antiunitary map".into(),
            ));
        }
        Ok(AntiUnitaryOp {
            unitary_part: kron_op(&self.unitary_part, &other.unitary_part)?,
            conjugates: self.conjugates,
        })
    }

    /// `t O t⁻¹` for a linear operator `O`.
    pub fn conjugate_operator(&self, op: &OperatorMatrix) -> Result<OperatorMatrix> {
        check_dim(self.dim(), op.dim())?;
        let u = self.unitary_part.matrix();
        let inner = if self.conjugates {
            op.matrix().map(|z| z.conj())
        } else {
            op.matrix().clone()
        };
        Ok(OperatorMatrix::with_flags(
            u * inner * u.adjoint(),
            op.is_hermitian(),
            op.is_unitary(),
        ))
    }

    pub fn apply(&self, state: &Ket) -> Result<Ket> {
        apply_antiunitary(self, state)
    }
}

pub fn tensor_ket(a: &Ket, b: &Ket) -> Result<Ket> {
    tensor_ket_capped(a, b, DEFAULT_DIM_CAP)
}

pub fn tensor_ket_capped(a: &Ket, b: &Ket, cap: usize) -> Result<Ket> {
    let dim = a.dim() as u128 * b.dim() as u128;
    if dim > cap as u128 {
        return Err(TrekError::DimensionCap { dim, cap });
    }
    Ok(Ket::from_dvector(a.amplitudes().kronecker(b.amplitudes())))
}

pub fn kron_op(a: &OperatorMatrix, b: &OperatorMatrix) -> Result<OperatorMatrix> {
    let dim = a.dim() as u128 * b.dim() as u128;
    let cap = OPERATOR_DIM_CAP;
    if dim > cap as u128 {
        return Err(TrekError::DimensionCap { dim, cap });
    }
    Ok(OperatorMatrix {
        mat: a.mat.kronecker(&b.mat),
        hermitian: a.hermitian && b.hermitian,
        unitary: a.unitary && b.unitary,
    })
}

pub fn inner_product(a: &Ket, b: &Ket) -> Result<C64> {
    check_dim(a.dim(), b.dim())?;
    Ok(a.amplitudes()
        .iter()
        .zip(b.amplitudes().iter())
        .map(|(x, y)| x.conj() * y)
        .sum())
}

pub fn apply_antiunitary(t: &AntiUnitaryOp, state: &Ket) -> Result<Ket> {
    check_dim(t.dim(), state.dim())?;
    let v = if t.conjugates {
        state.amplitudes().map(|z| z.conj())
    } else {
        state.amplitudes().clone()
    };
    Ok(Ket::from_dvector(t.unitary_part.matrix() * v))
}

/// Splits a flat index into per-factor digits (row-major).
fn digits(mut index: usize, dims: &[usize], out: &mut [usize]) {
    for k in (0..dims.len()).rev() {
        out[k] = index % dims[k];
        index /= dims[k];
    }
}

fn compose_index(digits: &[usize], dims: &[usize], factors: &[usize]) -> usize {
    factors.iter().fold(0, |acc, &f| acc * dims[f] + digits[f])
}

fn validate_keep(dims: &[usize], keep: &[usize]) -> Result<Vec<usize>> {
    let mut sorted = keep.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != keep.len() {
        return Err(TrekError::InvalidPartition("repeated factor".into()));
    }
    if let Some(&bad) = sorted.iter().find(|&&f| f >= dims.len()) {
        return Err(TrekError::UnknownFactor(format!("factor #{bad}")));
    }
    Ok(sorted)
}

/// Partial trace of a density matrix over all factors not in `keep`
/// (factor positions into `dims`). Kept factors retain their relative order.
pub fn partial_trace_dims(rho: &DensityMatrix, dims: &[usize], keep: &[usize]) -> Result<DensityMatrix> {
    let total: usize = dims.iter().product();
    check_dim(total, rho.dim())?;
    let keep = validate_keep(dims, keep)?;
    let traced: Vec<usize> = (0..dims.len()).filter(|f| !keep.contains(f)).collect();
    let dk: usize = keep.iter().map(|&f| dims[f]).product();
    let dt: usize = traced.iter().map(|&f| dims[f]).product();

    // Map (kept index, traced index) -> full index.
    let mut full_of = vec![0usize; dk * dt];
    let mut dig = vec![0usize; dims.len()];
    for idx in 0..total {
        digits(idx, dims, &mut dig);
        let a = compose_index(&dig, dims, &keep);
        let t = compose_index(&dig, dims, &traced);
        full_of[a * dt + t] = idx;
    }

    let m = rho.matrix();
    let out = DMatrix::from_fn(dk, dk, |a, b| {
        (0..dt).map(|t| m[(full_of[a * dt + t], full_of[b * dt + t])]).sum()
    });
    Ok(DensityMatrix::from_matrix_unchecked(out))
}

/// Partial trace addressed by factor labels of a [`SpaceSpec`].
pub fn partial_trace(rho: &DensityMatrix, keep: &[FactorLabel], spec: &SpaceSpec) -> Result<DensityMatrix> {
    let keep: Vec<usize> = keep.iter().map(|&l| spec.factor_index(l)).collect::<Result<_>>()?;
    partial_trace_dims(rho, &spec.dims(), &keep)
}

/// Reduced density matrix of a pure register on the kept factors, computed
/// without materializing the full projector.
pub fn reduced_state(state: &Ket, dims: &[usize], keep: &[usize]) -> Result<DensityMatrix> {
    let total: usize = dims.iter().product();
    check_dim(total, state.dim())?;
    let keep = validate_keep(dims, keep)?;
    let traced: Vec<usize> = (0..dims.len()).filter(|f| !keep.contains(f)).collect();
    let dk: usize = keep.iter().map(|&f| dims[f]).product();
    let dt: usize = traced.iter().map(|&f| dims[f]).product();

    let mut m = DMatrix::from_element(dk, dt, ZERO);
    let mut dig = vec![0usize; dims.len()];
    for (idx, amp) in state.as_slice().iter().enumerate() {
        digits(idx, dims, &mut dig);
        m[(compose_index(&dig, dims, &keep), compose_index(&dig, dims, &traced))] = *amp;
    }
    Ok(DensityMatrix::from_matrix_unchecked(&m * m.adjoint()))
}

/// Reduced state of the leading (system) factor of a register.
pub fn system_state(state: &Ket, system_dim: usize) -> Result<DensityMatrix> {
    if system_dim == 0 || !state.dim().is_multiple_of(system_dim) {
        return Err(TrekError::DimensionMismatch {
            expected: system_dim,
            found: state.dim(),
        });
    }
    let rest = state.dim() / system_dim;
    let x = DMatrix::from_column_slice(rest, system_dim, state.as_slice());
    Ok(DensityMatrix::from_matrix_unchecked(
        x.transpose() * x.map(|z| z.conj()),
    ))
}

/// Collapses factor `factor` onto basis index `p`. Returns the renormalized
/// state and the outcome probability.
pub fn project_onto_basis(state: &Ket, dims: &[usize], factor: usize, p: usize) -> Result<(Ket, f64)> {
    let total: usize = dims.iter().product();
    check_dim(total, state.dim())?;
    if factor >= dims.len() {
        return Err(TrekError::UnknownFactor(format!("factor #{factor}")));
    }
    if p >= dims[factor] {
        return Err(TrekError::InvalidSlot(p));
    }
    let inner: usize = dims[factor + 1..].iter().product();
    let d = dims[factor];
    let mut out = state.amplitudes().clone();
    let mut prob = 0.0;
    for (idx, z) in out.iter_mut().enumerate() {
        if (idx / inner) % d == p {
            prob += z.norm_sqr();
        } else {
            *z = ZERO;
        }
    }
    if prob <= 0.0 {
        return Err(TrekError::ZeroProbability { index: p });
    }
    let scale = 1.0 / prob.sqrt();
    out.iter_mut().for_each(|z| *z *= scale);
    Ok((Ket::from_dvector(out), prob))
}

/// Applies `op` to the leading factors of a register whose combined
/// dimension is `op.dim()`; the trailing factors are untouched.
pub fn apply_leading(op: &OperatorMatrix, state: &Ket) -> Result<Ket> {
    let d = op.dim();
    if d == 0 || !state.dim().is_multiple_of(d) {
        return Err(TrekError::DimensionMismatch {
            expected: d,
            found: state.dim(),
        });
    }
    let rest = state.dim() / d;
    let x = DMatrix::from_column_slice(rest, d, state.as_slice());
    let y = x * op.matrix().transpose();
    Ok(Ket::from_vec(y.as_slice().to_vec()))
}

/// Reorders register factors: output factor `k` is input factor `order[k]`.
pub fn permute_factors(state: &Ket, dims: &[usize], order: &[usize]) -> Result<Ket> {
    let total: usize = dims.iter().product();
    check_dim(total, state.dim())?;
    let mut seen = order.to_vec();
    seen.sort_unstable();
    if seen != (0..dims.len()).collect::<Vec<_>>() {
        return Err(TrekError::InvalidPartition(format!(
            "{order:?} is not a permutation of {} factors",
            dims.len()
        )));
    }
    let mut out = vec![ZERO; total];
    let mut dig = vec![0usize; dims.len()];
    for (idx, amp) in state.as_slice().iter().enumerate() {
        digits(idx, dims, &mut dig);
        out[compose_index(&dig, dims, order)] = *amp;
    }
    Ok(Ket::from_vec(out))
}

/// Applies `op` to register factor `factor` only.
pub fn apply_on_factor(op: &OperatorMatrix, state: &Ket, dims: &[usize], factor: usize) -> Result<Ket> {
    let total: usize = dims.iter().product();
    check_dim(total, state.dim())?;
    let d = *dims
        .get(factor)
        .ok_or_else(|| TrekError::UnknownFactor(format!("factor #{factor}")))?;
    check_dim(d, op.dim())?;
    let right: usize = dims[factor + 1..].iter().product();
    let left = total / (d * right);
    let src = state.as_slice();
    let m = op.matrix();
    let mut out = vec![ZERO; total];
    for l in 0..left {
        let base = l * d * right;
        for i in 0..d {
            let dst = &mut out[base + i * right..base + (i + 1) * right];
            for k in 0..d {
                let c = m[(i, k)];
                if c == ZERO {
                    continue;
                }
                let row = &src[base + k * right..base + (k + 1) * right];
                for (o, a) in dst.iter_mut().zip(row) {
                    *o += c * a;
                }
            }
        }
    }
    Ok(Ket::from_vec(out))
}

pub fn hermitian_deviation(m: &DMatrix<C64>) -> f64 {
    max_abs(&(m - m.adjoint()))
}

pub fn unitary_deviation(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    max_abs(&(m.adjoint() * m - DMatrix::<C64>::identity(n, n)))
}

pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(TrekError::DimensionMismatch { expected, found })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::{random_ket, seeded_rng};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn tensor_of_basis_states() {
        let k = tensor_ket(&Ket::from_real(&[1.0, 0.0]), &Ket::from_real(&[0.0, 1.0])).unwrap();
        assert_eq!(k, Ket::from_real(&[0.0, 1.0, 0.0, 0.0]));
    }

    #[test]
    fn tensor_matches_double_loop() {
        let mut rng = seeded_rng(11);
        let a = random_ket(3, &mut rng);
        let b = random_ket(2, &mut rng);
        let k = tensor_ket(&a, &b).unwrap();
        for m in 0..3 {
            for n in 0..2 {
                let want = a.as_slice()[m] * b.as_slice()[n];
                assert!((k.as_slice()[2 * m + n] - want).norm() <= 1e-15);
            }
        }
        assert!(k.is_normalized(1e-12));
    }

    #[test]
    fn tensor_respects_cap() {
        let a = Ket::basis(1 << 11, 0);
        let err = tensor_ket(&a, &a).unwrap_err();
        assert!(matches!(err, TrekError::DimensionCap { .. }));
    }

    #[test]
    fn kron_identity_and_diagonal() {
        let i6 = kron_op(&OperatorMatrix::identity(2), &OperatorMatrix::identity(3)).unwrap();
        assert_eq!(i6.matrix(), &DMatrix::<C64>::identity(6, 6));
        assert!(i6.is_unitary() && i6.is_hermitian());
        let d = kron_op(
            &OperatorMatrix::diagonal(&[1.0, 2.0]),
            &OperatorMatrix::diagonal(&[3.0, 4.0]),
        )
        .unwrap();
        assert_eq!(d, OperatorMatrix::diagonal(&[3.0, 4.0, 6.0, 8.0]));
    }

    #[test]
    fn space_spec_cap_and_labels() {
        let spec = SpaceSpec::new(4, 2, 3).unwrap();
        assert_eq!(spec.total_dim(), 32);
        assert_eq!(spec.dims(), vec![4, 2, 2, 2]);
        assert_eq!(spec.factor_index(FactorLabel::Pulse(2)).unwrap(), 3);
        assert!(spec.factor_index(FactorLabel::Pulse(3)).is_err());
        assert!(matches!(SpaceSpec::new(16, 2, 17), Err(TrekError::DimensionCap { .. })));
        assert!(SpaceSpec::new(16, 2, 16).is_ok());
        assert!(SpaceSpec::new(8, 2, 60).is_err());
    }

    #[test]
    fn bell_state_reduces_to_maximally_mixed() {
        let s = 1.0 / 2f64.sqrt();
        let bell = Ket::from_real(&[s, 0.0, 0.0, s]);
        let rho = DensityMatrix::from_pure(&bell);
        let red = partial_trace_dims(&rho, &[2, 2], &[0]).unwrap();
        let half = DMatrix::<C64>::identity(2, 2) * c(0.5, 0.0);
        assert!(max_abs(&(red.matrix() - half)) <= 1e-15);
    }

    #[test]
    fn product_state_partial_trace() {
        let mut rng = seeded_rng(3);
        let a = random_ket(3, &mut rng);
        let b = random_ket(2, &mut rng);
        let rho = DensityMatrix::from_pure(&tensor_ket(&a, &b).unwrap());
        let ra = partial_trace_dims(&rho, &[3, 2], &[0]).unwrap();
        let rb = partial_trace_dims(&rho, &[3, 2], &[1]).unwrap();
        assert!(max_abs(&(ra.matrix() - DensityMatrix::from_pure(&a).matrix())) <= 1e-12);
        assert!(max_abs(&(rb.matrix() - DensityMatrix::from_pure(&b).matrix())) <= 1e-12);
    }

    #[test]
    fn partial_trace_rejects_unknown_factor() {
        let spec = SpaceSpec::new(2, 2, 1).unwrap();
        let rho = DensityMatrix::from_pure(&Ket::basis(4, 0));
        assert!(matches!(
            partial_trace(&rho, &[FactorLabel::Pulse(4)], &spec),
            Err(TrekError::UnknownFactor(_))
        ));
    }

    #[test]
    fn projection_examples() {
        let (k, p) = project_onto_basis(&Ket::basis(4, 2), &[4], 0, 2).unwrap();
        assert_eq!(k, Ket::basis(4, 2));
        assert_eq!(p, 1.0);
        let u = Ket::from_real(&[0.5; 4]);
        let (_, p) = project_onto_basis(&u, &[4], 0, 2).unwrap();
        assert!((p - 0.25).abs() < 1e-15);
        assert!(matches!(
            project_onto_basis(&Ket::basis(4, 0), &[4], 0, 1),
            Err(TrekError::ZeroProbability { index: 1 })
        ));
    }

    #[test]
    fn antiunitary_examples() {
        let k = AntiUnitaryOp::conjugation(2);
        let real = Ket::from_real(&[0.6, 0.8]);
        assert_eq!(k.apply(&real).unwrap(), real);
        let imag = Ket::from_vec(vec![c(0.0, 1.0), c(0.0, 0.0)]);
        assert_eq!(k.apply(&imag).unwrap(), Ket::from_vec(vec![c(0.0, -1.0), c(0.0, 0.0)]));
        assert!(matches!(
            k.apply(&Ket::basis(3, 0)),
            Err(TrekError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn spin_flip_squares_to_minus_identity() {
        let t = AntiUnitaryOp::spin_flip();
        let mut rng = seeded_rng(5);
        let psi = random_ket(2, &mut rng);
        let twice = t.apply(&t.apply(&psi).unwrap()).unwrap();
        assert!(twice.max_abs_diff(&psi.scale(c(-1.0, 0.0))) < 1e-15);
    }

    #[test]
    fn inner_product_examples() {
        let mut rng = seeded_rng(8);
        let psi = random_ket(5, &mut rng);
        assert!((inner_product(&psi, &psi).unwrap() - c(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(
            inner_product(&Ket::basis(2, 0), &Ket::basis(2, 1)).unwrap(),
            c(0.0, 0.0)
        );
    }

    #[test]
    fn density_matrix_validation() {
        assert!(DensityMatrix::new(DMatrix::identity(2, 2)).is_err());
        let half = DMatrix::<C64>::identity(2, 2) * c(0.5, 0.0);
        let rho = DensityMatrix::new(half).unwrap();
        assert!((rho.purity() - 0.5).abs() < 1e-15);
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.5, 0.0), c(-0.5, 0.0)]));
        assert!(DensityMatrix::new(neg).is_err());
    }

    #[test]
    fn permute_factors_swaps_product_state() {
        let a = Ket::from_real(&[0.6, 0.8]);
        let b = Ket::from_real(&[0.0, 1.0, 0.0]);
        let ab = tensor_ket(&a, &b).unwrap();
        let ba = tensor_ket(&b, &a).unwrap();
        assert_eq!(permute_factors(&ab, &[2, 3], &[1, 0]).unwrap(), ba);
    }

    #[test]
    fn apply_leading_matches_kron_embedding() {
        let mut rng = seeded_rng(21);
        let psi = random_ket(12, &mut rng);
        let u = crate::dynamics::expm_hermitian(&crate::dynamics::random_tri_hamiltonian(4, 2, 1.0), 0.4).unwrap();
        let full = kron_op(&u, &OperatorMatrix::identity(3)).unwrap();
        let want = full.apply(&psi).unwrap();
        assert!(apply_leading(&u, &psi).unwrap().max_abs_diff(&want) < 1e-14);
    }
}
