//! Finite-dimensional states for the operational encoding of causal order:
//! the switch protocol, the referee relabeling, post-selection on the
//! control and metric, tomography and Bloch-ball classification.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::causal_order::{order_product, BranchedScenario};
use crate::error::{Error, Result};

pub type CVector = DVector<Complex64>;
pub type CMatrix = DMatrix<Complex64>;

/// Norm and trace tolerance for states.
pub const STATE_TOL: f64 = 1e-12;
/// Minimum separation between labels of one register.
pub const LABEL_SEPARATION: f64 = 1e-9;
/// Tolerance for the timing idealization `{tau1, tau2}` equal across branches.
pub const TIMING_TOL: f64 = 1e-6;
/// Default classification tolerance.
pub const CLASSIFY_EPS: f64 = 1e-6;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Control,
    MetricLabel,
    Spin,
    Memory1,
    Memory2,
    Order,
}

/// A register whose orthonormal basis is indexed by distinct real labels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabeledRegister {
    pub role: Role,
    pub labels: Vec<f64>,
}

impl LabeledRegister {
    pub fn new(role: Role, labels: Vec<f64>) -> Result<Self> {
        if labels.is_empty() || labels.iter().any(|l| !l.is_finite()) {
            return Err(Error::InvalidState(format!(
                "register {role:?} needs finite labels"
            )));
        }
        for (i, a) in labels.iter().enumerate() {
            for b in &labels[i + 1..] {
                if (a - b).abs() <= LABEL_SEPARATION {
                    return Err(Error::InvalidState(format!(
                        "register {role:?} has coincident labels {a} and {b}"
                    )));
                }
            }
        }
        Ok(Self { role, labels })
    }

    /// Two-level register with labels 0 and 1.
    pub fn qubit(role: Role) -> Self {
        Self {
            role,
            labels: vec![0.0, 1.0],
        }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: f64) -> Option<usize> {
        self.labels
            .iter()
            .position(|l| (l - label).abs() <= LABEL_SEPARATION)
    }
}

/// Normalized pure state over an ordered list of registers; the first
/// register is the most significant index.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    registers: Vec<LabeledRegister>,
    amplitudes: CVector,
}

fn total_dim(registers: &[LabeledRegister]) -> usize {
    registers.iter().map(LabeledRegister::dim).product()
}

fn unflatten(registers: &[LabeledRegister], mut flat: usize) -> Vec<usize> {
    let mut idx = vec![0; registers.len()];
    for (k, r) in registers.iter().enumerate().rev() {
        idx[k] = flat % r.dim();
        flat /= r.dim();
    }
    idx
}

fn flatten(registers: &[LabeledRegister], idx: &[usize]) -> usize {
    registers
        .iter()
        .zip(idx)
        .fold(0, |acc, (r, &i)| acc * r.dim() + i)
}

impl QuantumState {
    pub fn new(registers: Vec<LabeledRegister>, amplitudes: CVector) -> Result<Self> {
        let dim = total_dim(&registers);
        if amplitudes.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: amplitudes.len(),
            });
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "state norm {norm} differs from 1"
            )));
        }
        Ok(Self {
            registers,
            amplitudes,
        })
    }

    /// Superposition of basis states given as per-register index tuples.
    pub fn from_terms(
        registers: Vec<LabeledRegister>,
        terms: &[(Complex64, Vec<usize>)],
    ) -> Result<Self> {
        let mut amplitudes = CVector::zeros(total_dim(&registers));
        for (amp, idx) in terms {
            if idx.len() != registers.len()
                || idx.iter().zip(&registers).any(|(&i, r)| i >= r.dim())
            {
                return Err(Error::InvalidState(format!(
                    "basis index {idx:?} out of range"
                )));
            }
            amplitudes[flatten(&registers, idx)] += amp;
        }
        Self::new(registers, amplitudes)
    }

    /// Tensor product `self (x) other`.
    pub fn tensor(&self, other: &QuantumState) -> Result<Self> {
        let amplitudes = self.amplitudes.kronecker(&other.amplitudes);
        let mut registers = self.registers.clone();
        registers.extend(other.registers.iter().cloned());
        Self::new(registers, amplitudes)
    }

    /// Single-register state from its component vector.
    pub fn single(register: LabeledRegister, components: CVector) -> Result<Self> {
        Self::new(vec![register], components)
    }

    pub fn registers(&self) -> &[LabeledRegister] {
        &self.registers
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn position(&self, role: Role) -> Result<usize> {
        self.registers
            .iter()
            .position(|r| r.role == role)
            .ok_or_else(|| Error::InvalidState(format!("state has no {role:?} register")))
    }

    pub fn register(&self, role: Role) -> Result<&LabeledRegister> {
        Ok(&self.registers[self.position(role)?])
    }

    /// Amplitude of the basis state with the given per-register indices.
    pub fn amplitude(&self, idx: &[usize]) -> Complex64 {
        self.amplitudes[flatten(&self.registers, idx)]
    }

    /// `<self|other>`; registers must match.
    pub fn inner(&self, other: &QuantumState) -> Result<Complex64> {
        if self.registers != other.registers {
            return Err(Error::InvalidState(
                "inner product of states on different registers".into(),
            ));
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    /// Largest entry-wise deviation from `other` on identical registers.
    pub fn max_deviation(&self, other: &QuantumState) -> Result<f64> {
        if self.registers.len() != other.registers.len()
            || self.registers.iter().zip(&other.registers).any(|(a, b)| {
                a.role != b.role
                    || a.dim() != b.dim()
                    || a.labels
                        .iter()
                        .zip(&b.labels)
                        .any(|(x, y)| (x - y).abs() > TIMING_TOL * x.abs().max(1.0))
            })
        {
            return Err(Error::InvalidState(
                "states live on different registers".into(),
            ));
        }
        Ok((&self.amplitudes - &other.amplitudes)
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max))
    }

    /// Applies a linear map given on basis states. `f` returns the image of a
    /// basis tuple as a list of weighted basis tuples over `registers`.
    pub fn map_basis<F>(&self, registers: Vec<LabeledRegister>, mut f: F) -> Result<Self>
    where
        F: FnMut(&[usize]) -> Result<Vec<(Vec<usize>, Complex64)>>,
    {
        let mut out = CVector::zeros(total_dim(&registers));
        for (flat, amp) in self.amplitudes.iter().enumerate() {
            if amp.norm() == 0.0 {
                continue;
            }
            for (idx, c) in f(&unflatten(&self.registers, flat))? {
                out[flatten(&registers, &idx)] += amp * c;
            }
        }
        let norm = out.norm();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::Protocol(format!(
                "operation changed the norm to {norm}"
            )));
        }
        Self::new(registers, out)
    }

    /// Applies a matrix to one register.
    pub fn apply_local(&self, role: Role, op: &CMatrix) -> Result<Self> {
        let k = self.position(role)?;
        let d = self.registers[k].dim();
        if op.nrows() != d || op.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: op.nrows(),
            });
        }
        self.map_basis(self.registers.clone(), |idx| {
            Ok((0..d)
                .filter(|&r| op[(r, idx[k])] != ZERO)
                .map(|r| {
                    let mut out = idx.to_vec();
                    out[k] = r;
                    (out, op[(r, idx[k])])
                })
                .collect())
        })
    }

    /// Projects registers `roles` onto the product vector `factors` and returns
    /// the remaining state together with the norm of the projection.
    pub fn contract(
        &self,
        roles: &[Role],
        factors: &[CVector],
    ) -> Result<(CVector, Vec<LabeledRegister>)> {
        let positions: Vec<usize> = roles
            .iter()
            .map(|&r| self.position(r))
            .collect::<Result<_>>()?;
        for (k, f) in positions.iter().zip(factors) {
            if f.len() != self.registers[*k].dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.registers[*k].dim(),
                    got: f.len(),
                });
            }
        }
        let kept: Vec<LabeledRegister> = self
            .registers
            .iter()
            .enumerate()
            .filter(|(k, _)| !positions.contains(k))
            .map(|(_, r)| r.clone())
            .collect();
        let mut out = CVector::zeros(total_dim(&kept));
        for (flat, amp) in self.amplitudes.iter().enumerate() {
            let idx = unflatten(&self.registers, flat);
            let weight = positions
                .iter()
                .zip(factors)
                .fold(ONE, |w, (&k, f)| w * f[idx[k]].conj());
            let rest: Vec<usize> = idx
                .iter()
                .enumerate()
                .filter(|(k, _)| !positions.contains(k))
                .map(|(_, &i)| i)
                .collect();
            out[flatten(&kept, &rest)] += amp * weight;
        }
        Ok((out, kept))
    }

    pub fn density(&self) -> DensityMatrix {
        DensityMatrix {
            matrix: &self.amplitudes * self.amplitudes.adjoint(),
        }
    }
}

impl fmt::Display for QuantumState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (flat, amp) in self.amplitudes.iter().enumerate() {
            if amp.norm() < 1e-14 {
                continue;
            }
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:.6}{:+.6}i)", amp.re, amp.im)?;
            for (r, i) in self.registers.iter().zip(unflatten(&self.registers, flat)) {
                write!(f, "|{}>", r.labels[i])?;
            }
        }
        Ok(())
    }
}

/// Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: CMatrix,
}

impl DensityMatrix {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidState("density matrix must be square".into()));
        }
        let herm = (&matrix - matrix.adjoint())
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        if herm > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix not Hermitian (deviation {herm:e})"
            )));
        }
        let trace = matrix.trace();
        if (trace - ONE).norm() > STATE_TOL {
            return Err(Error::InvalidState(format!(
                "density matrix trace {trace} differs from 1"
            )));
        }
        let min_eig = matrix.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-10 {
            return Err(Error::InvalidState(format!(
                "density matrix has eigenvalue {min_eig}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn pure(psi: &CVector) -> Result<Self> {
        Self::new(psi * psi.adjoint())
    }

    /// Convex combination `sum w_k rho_k`.
    pub fn mixture(parts: &[(f64, DensityMatrix)]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidState("empty mixture".into()))?;
        let n = first.1.dim();
        let mut m = CMatrix::zeros(n, n);
        for (w, rho) in parts {
            if *w < 0.0 || rho.dim() != n {
                return Err(Error::InvalidState(
                    "mixture needs non-negative weights on equal dimensions".into(),
                ));
            }
            m += &rho.matrix * Complex64::new(*w, 0.0);
        }
        Self::new(m)
    }

    pub fn maximally_mixed(n: usize) -> Self {
        Self {
            matrix: CMatrix::identity(n, n) / Complex64::new(n as f64, 0.0),
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }

    /// Traces out the leading factor of dimension `dim / keep`, keeping the
    /// trailing `keep`-dimensional factor.
    pub fn trace_out_leading(&self, keep: usize) -> Result<Self> {
        let n = self.dim();
        if keep == 0 || !n.is_multiple_of(keep) {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: keep,
            });
        }
        let outer = n / keep;
        let m = CMatrix::from_fn(keep, keep, |i, j| {
            (0..outer)
                .map(|a| self.matrix[(a * keep + i, a * keep + j)])
                .sum()
        });
        Self::new(m)
    }
}

/// Pauli matrices in the `|s=+1>, |s=-1>` basis.
pub fn pauli_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMatrix {
    let i = Complex64::i();
    CMatrix::from_row_slice(2, 2, &[ZERO, -i, i, ZERO])
}

pub fn pauli_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// Spin precession `exp(-i theta sigma_z / 2)`.
pub fn precession(theta: f64) -> CMatrix {
    let half = 0.5 * theta;
    CMatrix::from_row_slice(
        2,
        2,
        &[
            Complex64::from_polar(1.0, -half),
            ZERO,
            ZERO,
            Complex64::from_polar(1.0, half),
        ],
    )
}

/// `|+x>`, the spin state at the first crossing.
pub fn plus_x() -> CVector {
    CVector::from_element(2, Complex64::new(FRAC_1_SQRT_2, 0.0))
}

/// Evolves the spin register by proper time `delta_tau` at angular rate `omega`.
pub fn spin_evolve(state: &QuantumState, delta_tau: f64, omega: f64) -> Result<QuantumState> {
    if delta_tau == 0.0 {
        state.position(Role::Spin)?;
        return Ok(state.clone());
    }
    state.apply_local(Role::Spin, &precession(omega * delta_tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn distance(&self, other: &BlochVector) -> f64 {
        BlochVector::new(self.x - other.x, self.y - other.y, self.z - other.z).norm()
    }

    /// Bloch vector of `alpha |s=+1> + beta |s=-1>`.
    pub fn of_amplitudes(alpha: Complex64, beta: Complex64) -> Self {
        let c = alpha.conj() * beta;
        Self::new(2.0 * c.re, 2.0 * c.im, alpha.norm_sqr() - beta.norm_sqr())
    }

    /// `(I + x sigma_x + y sigma_y + z sigma_z) / 2`.
    pub fn to_density(&self) -> Result<DensityMatrix> {
        let half = Complex64::new(0.5, 0.0);
        let m = (CMatrix::identity(2, 2)
            + pauli_x() * Complex64::new(self.x, 0.0)
            + pauli_y() * Complex64::new(self.y, 0.0)
            + pauli_z() * Complex64::new(self.z, 0.0))
            * half;
        DensityMatrix::new(m)
    }
}

fn require_qubit(rho: &DensityMatrix) -> Result<()> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            got: rho.dim(),
        });
    }
    Ok(())
}

/// Exact Pauli expectation values.
pub fn tomography(rho: &DensityMatrix) -> Result<BlochVector> {
    require_qubit(rho)?;
    let e = |p: CMatrix| (rho.matrix() * p).trace().re;
    Ok(BlochVector::new(e(pauli_x()), e(pauli_y()), e(pauli_z())))
}

/// Finite-shot estimate: each Pauli is measured `shots` times and its
/// expectation estimated from the binomial count of `+1` outcomes.
pub fn tomography_shots<R: Rng>(
    rho: &DensityMatrix,
    shots: u64,
    rng: &mut R,
) -> Result<BlochVector> {
    if shots == 0 {
        return Err(Error::Config("tomography needs at least one shot".into()));
    }
    let exact = tomography(rho)?;
    let mut estimate = |mean: f64| -> Result<f64> {
        let p = (0.5 * (1.0 + mean)).clamp(0.0, 1.0);
        let dist = Binomial::new(shots, p).map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(2.0 * dist.sample(rng) as f64 / shots as f64 - 1.0)
    };
    Ok(BlochVector::new(
        estimate(exact.x)?,
        estimate(exact.y)?,
        estimate(exact.z)?,
    ))
}

/// The four regions of the Bloch ball for the order qubit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderClass {
    DefiniteOrder,
    ClassicalMixture,
    PureIndefinite,
    MixedIndefinite,
}

impl OrderClass {
    /// Panel letter (a)-(d) of the usual Bloch-ball picture.
    pub fn letter(self) -> char {
        match self {
            OrderClass::DefiniteOrder => 'a',
            OrderClass::ClassicalMixture => 'b',
            OrderClass::PureIndefinite => 'c',
            OrderClass::MixedIndefinite => 'd',
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OrderClass::DefiniteOrder => "DefiniteOrder",
            OrderClass::ClassicalMixture => "ClassicalMixture",
            OrderClass::PureIndefinite => "PureIndefinite",
            OrderClass::MixedIndefinite => "MixedIndefinite",
        }
    }
}

impl fmt::Display for OrderClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub fn classify_order(b: &BlochVector, eps: f64) -> Result<OrderClass> {
    let r = b.norm();
    if !r.is_finite() || r > 1.0 + eps {
        return Err(Error::InvalidState(format!(
            "Bloch vector length {r} exceeds 1"
        )));
    }
    let north = BlochVector::new(0.0, 0.0, 1.0);
    let south = BlochVector::new(0.0, 0.0, -1.0);
    Ok(if b.distance(&north) < eps || b.distance(&south) < eps {
        OrderClass::DefiniteOrder
    } else if b.x.abs() < eps && b.y.abs() < eps && b.z.abs() < 1.0 - eps {
        OrderClass::ClassicalMixture
    } else if (r - 1.0).abs() < eps {
        OrderClass::PureIndefinite
    } else {
        OrderClass::MixedIndefinite
    })
}

/// Proper times at which `gamma0` crosses the first and second laboratory,
/// common to both branches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolTiming {
    pub tau_star_1: f64,
    pub tau_star_2: f64,
    /// Agent (1 or 2) met first and second in each branch.
    pub agents_a: [u8; 2],
    pub agents_b: [u8; 2],
}

impl ProtocolTiming {
    pub fn gap(&self) -> f64 {
        self.tau_star_2 - self.tau_star_1
    }

    fn agents(&self, branch: usize) -> [u8; 2] {
        if branch == 0 {
            self.agents_a
        } else {
            self.agents_b
        }
    }
}

/// Checks `{tau1^A, tau2^A} = {tau1^B, tau2^B}` and extracts `tau*_1 < tau*_2`.
pub fn protocol_timing(scenario: &BranchedScenario) -> Result<ProtocolTiming> {
    let sorted = |b: &crate::causal_order::BranchConfig| {
        let [e1, e2] = &b.events;
        if e1.tau <= e2.tau {
            ((e1.tau, e2.tau), [e1.id, e2.id])
        } else {
            ((e2.tau, e1.tau), [e2.id, e1.id])
        }
    };
    let ((a1, a2), agents_a) = sorted(&scenario.branch_a);
    let ((b1, b2), agents_b) = sorted(&scenario.branch_b);
    for (x, y) in [(a1, b1), (a2, b2)] {
        if (x - y).abs() > TIMING_TOL * x.abs().max(y.abs()).max(1.0) {
            return Err(Error::ProtocolInapplicable(format!(
                "crossing times differ across branches: ({a1}, {a2}) vs ({b1}, {b2})"
            )));
        }
    }
    let (t1, t2) = (0.5 * (a1 + b1), 0.5 * (a2 + b2));
    if t1 <= LABEL_SEPARATION || t2 - t1 <= LABEL_SEPARATION {
        return Err(Error::ProtocolInapplicable(format!(
            "crossing times {t1}, {t2} must be positive and distinct to serve as memory labels"
        )));
    }
    Ok(ProtocolTiming {
        tau_star_1: t1,
        tau_star_2: t2,
        agents_a,
        agents_b,
    })
}

/// Precession rate that makes the spin orthogonal at the second crossing.
pub fn default_omega(timing: &ProtocolTiming) -> f64 {
    PI / timing.gap()
}

/// Memory register with labels `{0, tau*_1, tau*_2}`.
pub fn memory_register(role: Role, timing: &ProtocolTiming) -> Result<LabeledRegister> {
    LabeledRegister::new(role, vec![0.0, timing.tau_star_1, timing.tau_star_2])
}

fn protocol_registers(timing: &ProtocolTiming) -> Result<Vec<LabeledRegister>> {
    Ok(vec![
        LabeledRegister::qubit(Role::Control),
        LabeledRegister::qubit(Role::MetricLabel),
        memory_register(Role::Memory1, timing)?,
        memory_register(Role::Memory2, timing)?,
        LabeledRegister::qubit(Role::Spin),
    ])
}

/// Register positions in protocol states.
pub const CONTROL: usize = 0;
pub const METRIC: usize = 1;
pub const MEMORY1: usize = 2;
pub const MEMORY2: usize = 3;
pub const SPIN: usize = 4;

/// Spin states of the protocol, given in the `sigma_z` basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinBasis {
    pub b0: CVector,
    pub b1: CVector,
    /// Orthogonal partner of `b1`, the second measurement outcome.
    pub b1_perp: CVector,
    /// Spin at the second crossing.
    pub b2: CVector,
}

impl SpinBasis {
    pub fn new(timing: &ProtocolTiming, omega: f64) -> Self {
        let b1 = plus_x();
        Self {
            b0: precession(-omega * timing.tau_star_1) * &b1,
            b1_perp: precession(PI) * &b1,
            b2: precession(omega * timing.gap()) * &b1,
            b1,
        }
    }
}

/// `(alpha |0>|g_A> + beta |1>|g_B>) |0>_1 |0>_2 |b0>`.
pub fn initial_state(
    scenario: &BranchedScenario,
    timing: &ProtocolTiming,
    spin: &SpinBasis,
) -> Result<QuantumState> {
    let registers = protocol_registers(timing)?;
    let mut terms = Vec::new();
    for (branch, amp) in [(0usize, scenario.amp_a), (1, scenario.amp_b)] {
        for (s, c) in spin.b0.iter().enumerate() {
            terms.push((amp * c, vec![branch, branch, 0, 0, s]));
        }
    }
    QuantumState::from_terms(registers, &terms)
}

/// Agent measurement at the `step`-th crossing: the spin is resolved in
/// `{b1, b1_perp}` and the agent met in each branch swaps its memory from
/// `0` to `tau*_1` or `tau*_2` according to the outcome. The spin is left in
/// the outcome state, so the map is unitary.
fn record_crossing(
    state: &QuantumState,
    timing: &ProtocolTiming,
    spin: &SpinBasis,
    step: usize,
) -> Result<QuantumState> {
    let outcomes = [(&spin.b1, 1usize), (&spin.b1_perp, 2usize)];
    state.map_basis(state.registers().to_vec(), |idx| {
        let branch = idx[CONTROL];
        if idx[METRIC] != branch {
            return Err(Error::Protocol(
                "control and metric registers are not correlated".into(),
            ));
        }
        let memory = if timing.agents(branch)[step] == 1 {
            MEMORY1
        } else {
            MEMORY2
        };
        let mut out = Vec::with_capacity(4);
        for (basis, label_index) in outcomes {
            let overlap = basis[idx[SPIN]].conj();
            if overlap == ZERO {
                continue;
            }
            let mut written = idx.to_vec();
            written[memory] = match idx[memory] {
                0 => label_index,
                i if i == label_index => 0,
                i => i,
            };
            for (s, c) in basis.iter().enumerate() {
                let mut target = written.clone();
                target[SPIN] = s;
                out.push((target, overlap * c));
            }
        }
        Ok(out)
    })
}

/// Snapshots of the switch protocol.
#[derive(Debug, Clone)]
pub struct ProtocolRun {
    pub timing: ProtocolTiming,
    pub omega: f64,
    pub spin: SpinBasis,
    pub psi1: QuantumState,
    pub psi2: QuantumState,
    pub psi3: QuantumState,
}

/// Runs the protocol along the `gamma0` clock: precession to `tau*_1`, first
/// agent, precession to `tau*_2`, second agent.
pub fn run_protocol(scenario: &BranchedScenario, omega: f64) -> Result<ProtocolRun> {
    let product = order_product(scenario);
    if product != 1 && product != -1 {
        return Err(Error::ProtocolInapplicable(format!(
            "order product {product}"
        )));
    }
    if !omega.is_finite() {
        return Err(Error::Config("precession rate must be finite".into()));
    }
    let timing = protocol_timing(scenario)?;
    let spin = SpinBasis::new(&timing, omega);
    let psi1 = initial_state(scenario, &timing, &spin)?;
    let psi2 = record_crossing(
        &spin_evolve(&psi1, timing.tau_star_1, omega)?,
        &timing,
        &spin,
        0,
    )?;
    let psi3 = record_crossing(&spin_evolve(&psi2, timing.gap(), omega)?, &timing, &spin, 1)?;
    Ok(ProtocolRun {
        timing,
        omega,
        spin,
        psi1,
        psi2,
        psi3,
    })
}

/// Final protocol state `|psi3>`.
pub fn run_switch_protocol(scenario: &BranchedScenario, omega: f64) -> Result<QuantumState> {
    Ok(run_protocol(scenario, omega)?.psi3)
}

/// Memory-1 labels after the referee: `{tau*_1 - tau*_2, 0, tau*_2 - tau*_1}`.
/// Index 2 is `|s=+1>` and index 0 is `|s=-1>`.
pub fn referee_memory1(timing: &ProtocolTiming) -> Result<LabeledRegister> {
    LabeledRegister::new(Role::Memory1, vec![-timing.gap(), 0.0, timing.gap()])
}

pub fn referee_memory2(timing: &ProtocolTiming) -> Result<LabeledRegister> {
    let (t1, t2) = (timing.tau_star_1, timing.tau_star_2);
    LabeledRegister::new(Role::Memory2, vec![2.0 * t1, t1 + t2, 2.0 * t2])
}

/// Relabels `|a>_1 |b>_2 -> |b - a>_1 |a + b>_2` on the populated labels.
pub fn referee_transform(state: &QuantumState, timing: &ProtocolTiming) -> Result<QuantumState> {
    let (m1, m2) = (
        state.position(Role::Memory1)?,
        state.position(Role::Memory2)?,
    );
    let allowed = [timing.tau_star_1, timing.tau_star_2];
    let new1 = referee_memory1(timing)?;
    let new2 = referee_memory2(timing)?;
    let mut registers = state.registers().to_vec();
    let (old1, old2) = (registers[m1].clone(), registers[m2].clone());
    registers[m1] = new1.clone();
    registers[m2] = new2.clone();
    state.map_basis(registers, |idx| {
        let a = old1.labels[idx[m1]];
        let b = old2.labels[idx[m2]];
        let populated = |x: f64| allowed.iter().any(|t| (t - x).abs() <= LABEL_SEPARATION);
        if !populated(a) || !populated(b) {
            return Err(Error::Protocol(format!(
                "memory labels ({a}, {b}) outside {{tau*_1, tau*_2}}"
            )));
        }
        let i = new1
            .index_of(b - a)
            .ok_or_else(|| Error::Protocol(format!("label {} missing", b - a)))?;
        let j = new2
            .index_of(a + b)
            .ok_or_else(|| Error::Protocol(format!("label {} missing", a + b)))?;
        let mut out = idx.to_vec();
        out[m1] = i;
        out[m2] = j;
        Ok(vec![(out, ONE)])
    })
}

/// Reduced state on control, metric and order qubit, with the order basis
/// `|s=+1>, |s=-1>`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderEncoding {
    /// Amplitudes over `(control, metric, order)`, order least significant.
    pub state: QuantumState,
    /// Norm of the state after projecting memory 2 and spin onto their
    /// expected factors; 1 when they factor out.
    pub factor_overlap: f64,
}

fn order_registers() -> Vec<LabeledRegister> {
    vec![
        LabeledRegister::qubit(Role::Control),
        LabeledRegister::qubit(Role::MetricLabel),
        LabeledRegister {
            role: Role::Order,
            labels: vec![1.0, -1.0],
        },
    ]
}

/// Splits off memory 2 (`|tau*_1 + tau*_2>`) and the spin (`b_f`) and maps
/// memory 1 onto the order qubit.
pub fn factor_order_qubit(
    referee_state: &QuantumState,
    timing: &ProtocolTiming,
    b_f: &CVector,
) -> Result<OrderEncoding> {
    let mem2 = referee_state.register(Role::Memory2)?;
    let mid = mem2
        .index_of(timing.tau_star_1 + timing.tau_star_2)
        .ok_or_else(|| Error::Protocol("memory 2 lacks the label tau*_1 + tau*_2".into()))?;
    let mut e = CVector::zeros(mem2.dim());
    e[mid] = ONE;
    let (rest, kept) = referee_state.contract(&[Role::Memory2, Role::Spin], &[e, b_f.clone()])?;
    let overlap = rest.norm();
    if (overlap - 1.0).abs() > 1e-10 {
        return Err(Error::Protocol(format!(
            "memory 2 and spin do not factor out (overlap {overlap})"
        )));
    }
    let roles: Vec<Role> = kept.iter().map(|r| r.role).collect();
    if roles != [Role::Control, Role::MetricLabel, Role::Memory1] {
        return Err(Error::Protocol(format!(
            "unexpected register layout {roles:?}"
        )));
    }
    let mem1 = &kept[2];
    let plus = mem1
        .index_of(timing.gap())
        .ok_or_else(|| Error::Protocol("missing |s=+1> label".into()))?;
    let minus = mem1
        .index_of(-timing.gap())
        .ok_or_else(|| Error::Protocol("missing |s=-1> label".into()))?;
    let mut amps = CVector::zeros(8);
    for c in 0..2 {
        for m in 0..2 {
            for (o, label) in [(0usize, plus), (1, minus)] {
                amps[(c * 2 + m) * 2 + o] = rest[(c * 2 + m) * mem1.dim() + label];
            }
        }
    }
    let leaked = (rest.norm_squared() - amps.norm_squared()).max(0.0).sqrt();
    if leaked > 1e-10 {
        return Err(Error::Protocol(format!(
            "memory 1 carries weight {leaked} outside the order labels"
        )));
    }
    // the global phase of b_f is conventional; normalize the projection
    let amps = amps.unscale(overlap);
    Ok(OrderEncoding {
        state: QuantumState::new(order_registers(), amps)?,
        factor_overlap: overlap,
    })
}

/// `alpha |0>|g_A>|s=+1> + beta |1>|g_B>|s=-1>` built directly.
pub fn order_state(alpha: Complex64, beta: Complex64) -> Result<QuantumState> {
    QuantumState::from_terms(
        order_registers(),
        &[(alpha, vec![0, 0, 0]), (beta, vec![1, 1, 1])],
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct PostSelection {
    /// Order-qubit state conditioned on `|phi_+>`.
    pub rho: DensityMatrix,
    pub probability: f64,
    /// Probability of the discarded `|phi_->` outcome.
    pub failure_probability: f64,
}

/// `|phi_+-> = (|0>|g_A> +- |1>|g_B>) / sqrt 2` on control (x) metric.
pub fn phi(sign: f64) -> CVector {
    let h = Complex64::new(FRAC_1_SQRT_2, 0.0);
    CVector::from_vec(vec![h, ZERO, ZERO, h * sign])
}

/// Post-selects control (x) metric on `|phi_+>` for a density matrix on
/// `(control, metric, order)` and returns the order-qubit state.
pub fn postselect_density(rho: &DensityMatrix) -> Result<PostSelection> {
    if rho.dim() != 8 {
        return Err(Error::DimensionMismatch {
            expected: 8,
            got: rho.dim(),
        });
    }
    let project = |v: &CVector| {
        let p = v * v.adjoint();
        p.kronecker(&CMatrix::identity(2, 2))
    };
    let outcome = |sign: f64| {
        let p = project(&phi(sign));
        let post = &p * rho.matrix() * &p;
        (post.trace().re, post)
    };
    let (prob, post) = outcome(1.0);
    let (fail, _) = outcome(-1.0);
    if prob <= 1e-14 {
        return Err(Error::PostSelectionFailure(prob));
    }
    let conditioned = post / Complex64::new(prob, 0.0);
    // re-hermitize against rounding before validation
    let conditioned = (&conditioned + conditioned.adjoint()) * Complex64::new(0.5, 0.0);
    let rho = DensityMatrix::new(conditioned)?.trace_out_leading(2)?;
    Ok(PostSelection {
        rho,
        probability: prob,
        failure_probability: fail,
    })
}

/// Post-selection for a pure state on `(control, metric, order)`.
pub fn postselect_order_qubit(state: &QuantumState) -> Result<PostSelection> {
    let roles: Vec<Role> = state.registers().iter().map(|r| r.role).collect();
    if roles != [Role::Control, Role::MetricLabel, Role::Order] {
        return Err(Error::InvalidState(format!(
            "expected (control, metric, order) registers, got {roles:?}"
        )));
    }
    postselect_density(&state.density())
}

/// Full operational pipeline result.
#[derive(Debug, Clone)]
pub struct OrderQubitReport {
    pub run: ProtocolRun,
    pub referee: QuantumState,
    pub encoding: OrderEncoding,
    pub postselection: PostSelection,
    pub bloch: BlochVector,
    pub class: OrderClass,
}

/// Runs the protocol, lets the spin precess by `tau_post`, applies the
/// referee, factors out the order qubit, post-selects and classifies.
pub fn encode_order(
    scenario: &BranchedScenario,
    omega: f64,
    tau_post: f64,
    eps: f64,
) -> Result<OrderQubitReport> {
    let run = run_protocol(scenario, omega)?;
    let evolved = spin_evolve(&run.psi3, tau_post, omega)?;
    let referee = referee_transform(&evolved, &run.timing)?;
    let b_f = precession(omega * tau_post) * &run.spin.b2;
    let encoding = factor_order_qubit(&referee, &run.timing, &b_f)?;
    let postselection = postselect_order_qubit(&encoding.state)?;
    let bloch = tomography(&postselection.rho)?;
    let class = classify_order(&bloch, eps)?;
    Ok(OrderQubitReport {
        run,
        referee,
        encoding,
        postselection,
        bloch,
        class,
    })
}
