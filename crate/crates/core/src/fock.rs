//! Truncated Fock-space and two-level operators on tensor-product spaces.
//!
//! Every operator carries the ordered list of [`HilbertFactor`]s it acts on,
//! so composite operators can only be combined when their spaces agree.
//! Kronecker order follows the factor list: the first factor is the most
//! significant index.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type CMatrix = DMatrix<C64>;

/// Truncated tail weight tolerated by [`coherent_state`].
pub const TRUNCATION_TOLERANCE: f64 = 1e-8;

const HERMITIAN_TOL: f64 = 1e-10;
const TRACE_TOL: f64 = 1e-9;

/// Mode tags used across both hybrid platforms.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Optomechanical cavity photon.
    A,
    /// Mechanical phonon.
    B,
    /// Kittel magnon.
    M,
    /// TM whispering-gallery photon (input).
    Av,
    /// TE whispering-gallery photon (output).
    Ah,
    /// Two-level truncated transmon.
    Qubit,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::A => "a",
            Mode::B => "b",
            Mode::M => "m",
            Mode::Av => "a_v",
            Mode::Ah => "a_h",
            Mode::Qubit => "qubit",
        };
        f.write_str(s)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorKind {
    Bosonic { dim: usize },
    Qubit,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HilbertFactor {
    kind: FactorKind,
    label: Mode,
}

impl HilbertFactor {
    pub fn bosonic(label: Mode, dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidDimension { dim });
        }
        if label == Mode::Qubit {
            return Err(Error::Composition("the qubit label is reserved for two-level factors".into()));
        }
        Ok(Self { kind: FactorKind::Bosonic { dim }, label })
    }

    pub fn qubit() -> Self {
        Self { kind: FactorKind::Qubit, label: Mode::Qubit }
    }

    pub fn dim(&self) -> usize {
        match self.kind {
            FactorKind::Bosonic { dim } => dim,
            FactorKind::Qubit => 2,
        }
    }

    pub fn label(&self) -> Mode {
        self.label
    }

    pub fn kind(&self) -> FactorKind {
        self.kind
    }

    pub fn is_bosonic(&self) -> bool {
        matches!(self.kind, FactorKind::Bosonic { .. })
    }
}

/// Checks label uniqueness and returns the composite dimension.
pub fn space_dim(space: &[HilbertFactor]) -> Result<usize> {
    if space.is_empty() {
        return Err(Error::Composition("empty factor list".into()));
    }
    for (i, f) in space.iter().enumerate() {
        if space[..i].iter().any(|g| g.label == f.label) {
            return Err(Error::Composition(format!("duplicate mode label {}", f.label)));
        }
    }
    Ok(space.iter().map(HilbertFactor::dim).product())
}

fn position_of(space: &[HilbertFactor], label: Mode) -> Result<usize> {
    space.iter().position(|f| f.label == label).ok_or(Error::UnknownMode(label))
}

/// Dense operator on a composite space.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    matrix: CMatrix,
    factors: Vec<HilbertFactor>,
}

impl Operator {
    pub fn new(matrix: CMatrix, factors: Vec<HilbertFactor>) -> Result<Self> {
        let n = space_dim(&factors)?;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::Composition(format!(
                "matrix is {}x{} but the factors span dimension {n}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { matrix, factors })
    }

    pub fn identity(space: &[HilbertFactor]) -> Result<Self> {
        let n = space_dim(space)?;
        Ok(Self { matrix: CMatrix::identity(n, n), factors: space.to_vec() })
    }

    pub fn zeros(space: &[HilbertFactor]) -> Result<Self> {
        let n = space_dim(space)?;
        Ok(Self { matrix: CMatrix::zeros(n, n), factors: space.to_vec() })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn factors(&self) -> &[HilbertFactor] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn dagger(&self) -> Self {
        Self { matrix: self.matrix.adjoint(), factors: self.factors.clone() }
    }

    pub fn same_space(&self, other: &Operator) -> bool {
        self.factors == other.factors
    }

    fn check_same(&self, other: &Operator) -> Result<()> {
        if self.same_space(other) {
            Ok(())
        } else {
            Err(Error::Composition("operators act on different spaces".into()))
        }
    }

    /// Operator product `self * other`.
    pub fn compose(&self, other: &Operator) -> Result<Operator> {
        self.check_same(other)?;
        Ok(Self { matrix: &self.matrix * &other.matrix, factors: self.factors.clone() })
    }

    pub fn commutator(&self, other: &Operator) -> Result<Operator> {
        self.check_same(other)?;
        let m = &self.matrix * &other.matrix - &other.matrix * &self.matrix;
        Ok(Self { matrix: m, factors: self.factors.clone() })
    }

    /// Largest elementwise modulus.
    pub fn max_abs(&self) -> f64 {
        max_abs(&self.matrix)
    }

    /// `max |A - A†|` elementwise.
    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.matrix)
    }
}

impl Add for &Operator {
    type Output = Operator;

    fn add(self, rhs: &Operator) -> Operator {
        assert!(self.same_space(rhs), "operator sum over different spaces");
        Operator { matrix: &self.matrix + &rhs.matrix, factors: self.factors.clone() }
    }
}

impl Sub for &Operator {
    type Output = Operator;

    fn sub(self, rhs: &Operator) -> Operator {
        assert!(self.same_space(rhs), "operator difference over different spaces");
        Operator { matrix: &self.matrix - &rhs.matrix, factors: self.factors.clone() }
    }
}

impl Mul for &Operator {
    type Output = Operator;

    fn mul(self, rhs: &Operator) -> Operator {
        self.compose(rhs).expect("operator product over different spaces")
    }
}

impl Mul<f64> for &Operator {
    type Output = Operator;

    fn mul(self, rhs: f64) -> Operator {
        Operator { matrix: &self.matrix * C64::new(rhs, 0.0), factors: self.factors.clone() }
    }
}

impl Mul<C64> for &Operator {
    type Output = Operator;

    fn mul(self, rhs: C64) -> Operator {
        Operator { matrix: &self.matrix * rhs, factors: self.factors.clone() }
    }
}

impl Neg for &Operator {
    type Output = Operator;

    fn neg(self) -> Operator {
        Operator { matrix: -&self.matrix, factors: self.factors.clone() }
    }
}

pub(crate) fn max_abs(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub(crate) fn hermiticity_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for i in 0..=j {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Bosonic lowering operator with entries `sqrt(n)` at `(n-1, n)`.
pub fn destroy(label: Mode, dim: usize) -> Result<Operator> {
    let factor = HilbertFactor::bosonic(label, dim)?;
    let mut m = CMatrix::zeros(dim, dim);
    for n in 1..dim {
        m[(n - 1, n)] = C64::new((n as f64).sqrt(), 0.0);
    }
    Ok(Operator { matrix: m, factors: vec![factor] })
}

pub fn create(label: Mode, dim: usize) -> Result<Operator> {
    Ok(destroy(label, dim)?.dagger())
}

pub fn number(label: Mode, dim: usize) -> Result<Operator> {
    let factor = HilbertFactor::bosonic(label, dim)?;
    let m = CMatrix::from_diagonal(&DVector::from_fn(dim, |n, _| C64::new(n as f64, 0.0)));
    Ok(Operator { matrix: m, factors: vec![factor] })
}

/// Single-qubit operators in the basis `|g> = 0`, `|e> = 1`.
#[derive(Clone, Debug)]
pub struct QubitOps {
    pub sigma_z: Operator,
    pub sigma_minus: Operator,
    pub sigma_plus: Operator,
    pub excited_projector: Operator,
}

pub fn qubit_ops() -> QubitOps {
    let f = vec![HilbertFactor::qubit()];
    let c = |re: f64| C64::new(re, 0.0);
    let z = CMatrix::from_row_slice(2, 2, &[c(-1.0), c(0.0), c(0.0), c(1.0)]);
    let minus = CMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(0.0), c(0.0)]);
    let proj = CMatrix::from_row_slice(2, 2, &[c(0.0), c(0.0), c(0.0), c(1.0)]);
    QubitOps {
        sigma_z: Operator { matrix: z, factors: f.clone() },
        sigma_plus: Operator { matrix: minus.adjoint(), factors: f.clone() },
        sigma_minus: Operator { matrix: minus, factors: f.clone() },
        excited_projector: Operator { matrix: proj, factors: f },
    }
}

/// Kronecker product in list order.
pub fn tensor(ops: &[Operator]) -> Result<Operator> {
    let (first, rest) = ops
        .split_first()
        .ok_or_else(|| Error::Composition("tensor of an empty list".into()))?;
    let mut factors = first.factors.clone();
    let mut matrix = first.matrix.clone();
    for op in rest {
        factors.extend_from_slice(&op.factors);
        matrix = matrix.kronecker(&op.matrix);
    }
    space_dim(&factors)?;
    Ok(Operator { matrix, factors })
}

/// Embeds a single-factor operator into `space`, acting as identity elsewhere.
pub fn lift(op: &Operator, space: &[HilbertFactor]) -> Result<Operator> {
    space_dim(space)?;
    let [factor] = op.factors.as_slice() else {
        return Err(Error::Composition(format!(
            "lift expects a single-factor operator, got {} factors",
            op.factors.len()
        )));
    };
    let pos = position_of(space, factor.label)?;
    if space[pos] != *factor {
        return Err(Error::Composition(format!(
            "mode {} has dimension {} in the space but {} in the operator",
            factor.label,
            space[pos].dim(),
            factor.dim()
        )));
    }
    let mut matrix = CMatrix::identity(1, 1);
    for (i, f) in space.iter().enumerate() {
        let block = if i == pos { op.matrix.clone() } else { CMatrix::identity(f.dim(), f.dim()) };
        matrix = matrix.kronecker(&block);
    }
    Ok(Operator { matrix, factors: space.to_vec() })
}

/// `trace(op * rho)`.
pub fn expect(op: &Operator, state: &QuantumState) -> Result<C64> {
    if op.factors != state.factors {
        return Err(Error::Composition("operator and state act on different spaces".into()));
    }
    Ok(trace_product(&op.matrix, &state.rho))
}

pub(crate) fn trace_product(a: &CMatrix, b: &CMatrix) -> C64 {
    let n = a.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            // a[j, i] * b[i, j], iterated column-major over b
            acc += a[(j, i)] * b[(i, j)];
        }
    }
    acc
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QubitLevel {
    Ground,
    Excited,
}

impl QubitLevel {
    pub fn index(self) -> usize {
        match self {
            QubitLevel::Ground => 0,
            QubitLevel::Excited => 1,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            QubitLevel::Ground => QubitLevel::Excited,
            QubitLevel::Excited => QubitLevel::Ground,
        }
    }
}

impl fmt::Display for QubitLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QubitLevel::Ground => "ground",
            QubitLevel::Excited => "excited",
        })
    }
}

/// Density matrix with factor metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    rho: CMatrix,
    factors: Vec<HilbertFactor>,
}

impl QuantumState {
    /// Validates Hermiticity and unit trace. Positivity is checked lazily via
    /// [`QuantumState::min_eigenvalue`].
    pub fn from_density(rho: CMatrix, factors: Vec<HilbertFactor>) -> Result<Self> {
        let n = space_dim(&factors)?;
        if rho.nrows() != n || rho.ncols() != n {
            return Err(Error::Composition(format!(
                "density matrix is {}x{} but the factors span dimension {n}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let defect = hermiticity_defect(&rho);
        if defect > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("Hermiticity defect {defect:.3e}")));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        Ok(Self { rho, factors })
    }

    pub(crate) fn from_parts_unchecked(rho: CMatrix, factors: Vec<HilbertFactor>) -> Self {
        Self { rho, factors }
    }

    /// Pure state from a (not necessarily normalized) ket.
    pub fn from_ket(ket: &DVector<C64>, factors: Vec<HilbertFactor>) -> Result<Self> {
        let n = space_dim(&factors)?;
        if ket.len() != n {
            return Err(Error::Composition(format!("ket has length {} but space dim is {n}", ket.len())));
        }
        let norm = ket.norm();
        if norm == 0.0 {
            return Err(Error::InvalidState("zero ket".into()));
        }
        let psi = ket.unscale(norm);
        Ok(Self { rho: &psi * psi.adjoint(), factors })
    }

    pub fn fock(label: Mode, dim: usize, n: usize) -> Result<Self> {
        let factor = HilbertFactor::bosonic(label, dim)?;
        if n >= dim {
            return Err(Error::InvalidState(format!("Fock level {n} outside truncation {dim}")));
        }
        let mut ket = DVector::zeros(dim);
        ket[n] = C64::new(1.0, 0.0);
        Self::from_ket(&ket, vec![factor])
    }

    pub fn qubit(level: QubitLevel) -> Self {
        let mut rho = CMatrix::zeros(2, 2);
        let i = level.index();
        rho[(i, i)] = C64::new(1.0, 0.0);
        Self { rho, factors: vec![HilbertFactor::qubit()] }
    }

    pub fn product(states: &[QuantumState]) -> Result<Self> {
        let (first, rest) = states
            .split_first()
            .ok_or_else(|| Error::Composition("product of an empty list".into()))?;
        let mut factors = first.factors.clone();
        let mut rho = first.rho.clone();
        for s in rest {
            factors.extend_from_slice(&s.factors);
            rho = rho.kronecker(&s.rho);
        }
        space_dim(&factors)?;
        Ok(Self { rho, factors })
    }

    pub fn rho(&self) -> &CMatrix {
        &self.rho
    }

    pub fn into_rho(self) -> CMatrix {
        self.rho
    }

    pub fn factors(&self) -> &[HilbertFactor] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.rho.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.rho.trace()
    }

    /// `trace(rho^2)`, real for Hermitian rho.
    pub fn purity(&self) -> f64 {
        self.rho.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        hermiticity_defect(&self.rho)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let herm = (&self.rho + self.rho.adjoint()) * C64::new(0.5, 0.0);
        herm.symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Poisson weights `|c_n|^2` of a coherent state, computed in log space.
fn poisson_weight(lambda: f64, n: usize, ln_fact: f64) -> f64 {
    if lambda == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-lambda + n as f64 * lambda.ln() - ln_fact).exp()
}

/// Coherent-state weight lying at or beyond level `dim`.
pub fn coherent_tail_weight(dim: usize, alpha: C64) -> f64 {
    let lambda = alpha.norm_sqr();
    if lambda == 0.0 {
        return 0.0;
    }
    let mut ln_fact: f64 = (1..=dim).map(|k| (k as f64).ln()).sum();
    let mut tail = 0.0;
    let mut n = dim;
    loop {
        let w = poisson_weight(lambda, n, ln_fact);
        tail += w;
        n += 1;
        ln_fact += (n as f64).ln();
        if n as f64 > lambda && w < 1e-30 * tail.max(1e-300) {
            break;
        }
        if n > dim + 100_000 {
            break;
        }
    }
    tail
}

/// Smallest truncation keeping the tail weight of `|alpha>` below tolerance.
pub fn required_dim(alpha: C64) -> usize {
    let mut d = 2;
    while coherent_tail_weight(d, alpha) >= TRUNCATION_TOLERANCE {
        d += 1;
    }
    d
}

/// `ceil(|a|^2 + 6|a| + 10)`, rounded up to the next multiple of ten.
pub fn recommended_dim(amplitude: f64) -> usize {
    let a = amplitude.abs();
    let raw = (a * a + 6.0 * a + 10.0).ceil() as usize;
    raw.div_ceil(10) * 10
}

/// Truncated coherent state, renormalized after truncation.
pub fn coherent_state(label: Mode, dim: usize, alpha: C64) -> Result<QuantumState> {
    let factor = HilbertFactor::bosonic(label, dim)?;
    let tail = coherent_tail_weight(dim, alpha);
    if tail >= TRUNCATION_TOLERANCE {
        return Err(Error::TruncationInsufficient { dim, tail, required_dim: required_dim(alpha) });
    }
    let lambda = alpha.norm_sqr();
    let phase = alpha.arg();
    let mut ln_fact = 0.0;
    let ket = DVector::from_fn(dim, |n, _| {
        if n > 0 {
            ln_fact += (n as f64).ln();
        }
        let w = poisson_weight(lambda, n, ln_fact);
        C64::from_polar(w.sqrt(), n as f64 * phase)
    });
    QuantumState::from_ket(&ket, vec![factor])
}

/// Reduced density matrix of the factor labelled `keep`.
pub fn partial_trace(state: &QuantumState, keep: Mode) -> Result<QuantumState> {
    let pos = position_of(&state.factors, keep)?;
    let dims: Vec<usize> = state.factors.iter().map(HilbertFactor::dim).collect();
    let before: usize = dims[..pos].iter().product();
    let dk = dims[pos];
    let after: usize = dims[pos + 1..].iter().product();
    let rho = &state.rho;
    let mut out = CMatrix::zeros(dk, dk);
    for y in 0..dk {
        for x in 0..dk {
            let mut acc = C64::new(0.0, 0.0);
            for u in 0..before {
                for v in 0..after {
                    let i = (u * dk + x) * after + v;
                    let j = (u * dk + y) * after + v;
                    acc += rho[(i, j)];
                }
            }
            out[(x, y)] = acc;
        }
    }
    Ok(QuantumState { rho: out, factors: vec![state.factors[pos]] })
}
