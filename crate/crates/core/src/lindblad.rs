//! Lindblad master-equation propagation.
//!
//! The generator is
//!
//! ```text
//! dρ/dt = -i[H, ρ] + Σ_k r_k (2 o_k ρ o_k† - o_k†o_k ρ - ρ o_k†o_k) / 2
//! ```
//!
//! with `H` in units of ħ. Each step applies the order-`p` Taylor polynomial
//! of the propagator (classical RK4 for `p = 4`, the default) through a
//! sparse, column-fused evaluation of `Kρ + ρK† + Σ r_k o_k ρ o_k†` where
//! `K = -iH - ½ Σ r_k o_k†o_k`. States are re-Hermitized and renormalized at
//! record times only; the corrections are reported on each [`Record`].

use std::io::{self, Write};

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::fock::{CMatrix, Operator, QuantumState};

/// Rate x duration above which the problem is treated as stiff.
pub const STIFFNESS_LIMIT: f64 = 1e4;
/// Largest tolerated number of quanta injected by heating channels.
pub const THERMAL_INFLUX_LIMIT: f64 = 0.1;
/// Largest tolerated trace change in a single step.
pub const STEP_TRACE_DRIFT_LIMIT: f64 = 1e-6;
/// Slack on the `|ρ_ij| <= 1` bound before a step is rejected.
pub const ELEMENT_BOUND_SLACK: f64 = 1e-6;
/// States up to this dimension get a positivity check at every record.
pub const DENSE_EIGEN_LIMIT: usize = 256;

const AUTO_MIN_STEPS: f64 = 2000.0;
const AUTO_STEPS_PER_CYCLE: f64 = 50.0;
/// Step orders with a usable stability interval on the imaginary axis.
pub const SUPPORTED_ORDERS: [usize; 4] = [4, 8, 12, 16];
const AUTO_REFINEMENTS: usize = 4;

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ChannelRole {
    Decay,
    /// Injects quanta, e.g. the `L[b†]` half of a thermal bath.
    Heating,
    Dephasing,
    Other,
}

/// Collapse operator with a non-negative rate.
#[derive(Clone, Debug)]
pub struct Dissipator {
    op: Operator,
    rate: f64,
    role: ChannelRole,
}

impl Dissipator {
    pub fn new(op: Operator, rate: f64) -> Result<Self> {
        Self::with_role(op, rate, ChannelRole::Other)
    }

    pub fn with_role(op: Operator, rate: f64, role: ChannelRole) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return Err(Error::param("rate", format!("must be finite and non-negative, got {rate}")));
        }
        Ok(Self { op, rate, role })
    }

    pub fn op(&self) -> &Operator {
        &self.op
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn role(&self) -> ChannelRole {
        self.role
    }
}

/// Thermal bath channels: `γ(n_th + 1) L[o]` and `γ n_th L[o†]`.
pub fn thermal_dissipators(op: &Operator, gamma: f64, n_th: f64) -> Result<Vec<Dissipator>> {
    if gamma < 0.0 {
        return Err(Error::param("gamma", "must be non-negative"));
    }
    if n_th < 0.0 {
        return Err(Error::param("n_th", "must be non-negative"));
    }
    Ok(vec![
        Dissipator::with_role(op.clone(), gamma * (n_th + 1.0), ChannelRole::Decay)?,
        Dissipator::with_role(op.dagger(), gamma * n_th, ChannelRole::Heating)?,
    ])
}

#[derive(Copy, Clone, Debug, PartialEq)]
pub enum StepControl {
    /// `dt = min(1/(50 f_max), t_final/2000)`, capped for stability of the
    /// chosen order, with automatic halving when a step is rejected.
    Auto,
    Fixed { dt: f64 },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PositivityCheck {
    /// Every record for small spaces, final state only above [`DENSE_EIGEN_LIMIT`].
    Auto,
    EveryRecord,
    FinalOnly,
    Never,
}

#[derive(Clone, Debug)]
pub struct EvolutionSpec {
    pub hamiltonian: Operator,
    pub dissipators: Vec<Dissipator>,
    pub t_final: f64,
    pub step: StepControl,
    pub record_times: Vec<f64>,
    pub observables: Vec<Operator>,
    pub positivity: PositivityCheck,
    pub keep_states: bool,
    /// Taylor order of each step; 4 is classical RK4.
    pub order: usize,
}

impl EvolutionSpec {
    pub fn new(hamiltonian: Operator, t_final: f64) -> Self {
        Self {
            hamiltonian,
            dissipators: Vec::new(),
            t_final,
            step: StepControl::Auto,
            record_times: vec![t_final],
            observables: Vec::new(),
            positivity: PositivityCheck::Auto,
            keep_states: false,
            order: 4,
        }
    }

    pub fn dissipators(mut self, d: Vec<Dissipator>) -> Self {
        self.dissipators = d;
        self
    }

    pub fn record_times(mut self, times: Vec<f64>) -> Self {
        self.record_times = times;
        self
    }

    pub fn observables(mut self, obs: Vec<Operator>) -> Self {
        self.observables = obs;
        self
    }

    pub fn step(mut self, step: StepControl) -> Self {
        self.step = step;
        self
    }

    pub fn positivity(mut self, p: PositivityCheck) -> Self {
        self.positivity = p;
        self
    }

    pub fn keep_states(mut self, keep: bool) -> Self {
        self.keep_states = keep;
        self
    }

    pub fn order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    fn validate(&self) -> Result<()> {
        let space = self.hamiltonian.factors();
        for d in &self.dissipators {
            if d.op.factors() != space {
                return Err(Error::Composition("dissipator acts on a different space".into()));
            }
        }
        for o in &self.observables {
            if o.factors() != space {
                return Err(Error::Composition("observable acts on a different space".into()));
            }
        }
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return Err(Error::param("t_final", "must be finite and non-negative"));
        }
        if self.record_times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::param("record_times", "must be sorted"));
        }
        if self.record_times.iter().any(|&t| !(0.0..=self.t_final).contains(&t)) {
            return Err(Error::param("record_times", "must lie within [0, t_final]"));
        }
        if !SUPPORTED_ORDERS.contains(&self.order) {
            return Err(Error::param("order", format!("must be one of {SUPPORTED_ORDERS:?}, got {}", self.order)));
        }
        if let StepControl::Fixed { dt } = self.step {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::param("dt", "must be positive"));
            }
        }
        Ok(())
    }

    fn guard(&self) -> Result<()> {
        let worst = self.dissipators.iter().map(|d| d.rate * self.t_final).fold(0.0, f64::max);
        if worst > STIFFNESS_LIMIT {
            return Err(Error::Stiff { product: worst });
        }
        let quanta: f64 = self
            .dissipators
            .iter()
            .filter(|d| d.role == ChannelRole::Heating)
            .map(|d| d.rate * self.t_final)
            .sum();
        if quanta > THERMAL_INFLUX_LIMIT {
            return Err(Error::ThermalInflux { quanta });
        }
        Ok(())
    }

    /// Step size chosen by [`StepControl::Auto`].
    pub fn auto_dt(&self) -> f64 {
        Generator::new(&self.hamiltonian, &self.dissipators).auto_dt(self.t_final, self.order)
    }
}

/// Dense evaluation of the Lindblad right-hand side.
pub fn lindblad_rhs(rho: &QuantumState, spec: &EvolutionSpec) -> Result<CMatrix> {
    if rho.factors() != spec.hamiltonian.factors() {
        return Err(Error::Composition("state and Hamiltonian act on different spaces".into()));
    }
    let r = rho.rho();
    let h = spec.hamiltonian.matrix();
    let mi = C64::new(0.0, -1.0);
    let mut out = (h * r - r * h) * mi;
    for d in &spec.dissipators {
        let o = d.op.matrix();
        let od = o.adjoint();
        let odo = &od * o;
        let term = (o * r * &od) * C64::new(2.0, 0.0) - &odo * r - r * &odo;
        out += term * C64::new(0.5 * d.rate, 0.0);
    }
    Ok(out)
}

/// Compressed sparse columns.
#[derive(Clone, Debug)]
struct Csc {
    n: usize,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<C64>,
}

impl Csc {
    fn from_dense(m: &CMatrix) -> Self {
        let n = m.nrows();
        let mut ptr = Vec::with_capacity(n + 1);
        let mut idx = Vec::new();
        let mut val = Vec::new();
        ptr.push(0);
        for j in 0..n {
            for i in 0..n {
                let v = m[(i, j)];
                if v != C64::new(0.0, 0.0) {
                    idx.push(i);
                    val.push(v);
                }
            }
            ptr.push(idx.len());
        }
        Self { n, ptr, idx, val }
    }

    fn col(&self, j: usize) -> (&[usize], &[C64]) {
        let r = self.ptr[j]..self.ptr[j + 1];
        (&self.idx[r.clone()], &self.val[r])
    }

    /// Largest column sum of magnitudes.
    fn one_norm(&self) -> f64 {
        (0..self.n).map(|j| self.col(j).1.iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// `trace(A ρ)`.
    fn trace_with(&self, rho: &Planes) -> C64 {
        let n = self.n;
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..n {
            let (idx, val) = self.col(k);
            for (&i, &v) in idx.iter().zip(val) {
                // A[i, k] ρ[k, i]
                acc += v * C64::new(rho.re[i * n + k], rho.im[i * n + k]);
            }
        }
        acc
    }
}

/// Column-major complex matrix with separate real and imaginary planes, so
/// that the column kernels vectorize.
#[derive(Clone, Debug)]
struct Planes {
    n: usize,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Planes {
    fn zeros(n: usize, cols: usize) -> Self {
        Self { n, re: vec![0.0; n * cols], im: vec![0.0; n * cols] }
    }

    fn from_matrix(m: &CMatrix) -> Self {
        let n = m.nrows();
        let s = m.as_slice();
        Self { n, re: s.iter().map(|z| z.re).collect(), im: s.iter().map(|z| z.im).collect() }
    }

    fn to_matrix(&self) -> CMatrix {
        let n = self.n;
        CMatrix::from_iterator(n, n, self.re.iter().zip(&self.im).map(|(&r, &i)| C64::new(r, i)))
    }

    #[inline(always)]
    fn col(&self, slot: usize) -> (&[f64], &[f64]) {
        let r = slot * self.n..(slot + 1) * self.n;
        (&self.re[r.clone()], &self.im[r])
    }

    #[inline(always)]
    fn col_mut(&mut self, slot: usize) -> (&mut [f64], &mut [f64]) {
        let r = slot * self.n..(slot + 1) * self.n;
        (&mut self.re[r.clone()], &mut self.im[r])
    }

    fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.re[i * self.n + i]).sum()
    }

    fn frobenius_sq(&self) -> f64 {
        self.re.iter().chain(&self.im).map(|x| x * x).sum()
    }

    /// Replaces the matrix by `(M + M†) / (2 tr M)`; returns the prior
    /// `max |M - M†|` and trace.
    fn hermitize_normalize(&mut self) -> (f64, f64) {
        const TILE: usize = 32;
        let n = self.n;
        let mut defect: f64 = 0.0;
        for jb in (0..n).step_by(TILE) {
            for ib in (jb..n).step_by(TILE) {
                for j in jb..(jb + TILE).min(n) {
                    for i in ib.max(j)..(ib + TILE).min(n) {
                        let (u, l) = (i * n + j, j * n + i);
                        let dr = self.re[l] - self.re[u];
                        let di = self.im[l] + self.im[u];
                        defect = defect.max(dr.hypot(di));
                        let re = 0.5 * (self.re[l] + self.re[u]);
                        let im = 0.5 * (self.im[l] - self.im[u]);
                        self.re[l] = re;
                        self.im[l] = im;
                        self.re[u] = re;
                        self.im[u] = -im;
                    }
                }
            }
        }
        let tr = self.trace();
        let inv = 1.0 / tr;
        self.re.iter_mut().chain(self.im.iter_mut()).for_each(|x| *x *= inv);
        (defect, tr)
    }
}

/// `y += (a_i + i b_i) x_i` elementwise. Either factor may be absent when it
/// vanishes identically.
#[inline(always)]
fn cmul_acc<A: Fn(usize) -> f64, B: Fn(usize) -> f64>(
    yr: &mut [f64],
    yi: &mut [f64],
    xr: &[f64],
    xi: &[f64],
    a: Option<A>,
    b: Option<B>,
) {
    let len = yr.len();
    let (yi, xr, xi) = (&mut yi[..len], &xr[..len], &xi[..len]);
    match (a, b) {
        (Some(a), None) => {
            for k in 0..len {
                let a = a(k);
                yr[k] += a * xr[k];
                yi[k] += a * xi[k];
            }
        }
        (None, Some(b)) => {
            for k in 0..len {
                let b = b(k);
                yr[k] -= b * xi[k];
                yi[k] += b * xr[k];
            }
        }
        (Some(a), Some(b)) => {
            for k in 0..len {
                let (a, b) = (a(k), b(k));
                yr[k] += a * xr[k] - b * xi[k];
                yi[k] += a * xi[k] + b * xr[k];
            }
        }
        (None, None) => {}
    }
}

/// `y += s x`.
#[inline(always)]
fn axpy(yr: &mut [f64], yi: &mut [f64], s: C64, xr: &[f64], xi: &[f64]) {
    let (a, b) = (s.re, s.im);
    cmul_acc(yr, yi, xr, xi, (a != 0.0).then_some(move |_| a), (b != 0.0).then_some(move |_| b));
}

/// Values of one diagonal, split by which parts are nonzero.
#[derive(Clone, Debug)]
enum Coeffs {
    Real(Vec<f64>),
    Imag(Vec<f64>),
    Complex(Vec<f64>, Vec<f64>),
}

impl Coeffs {
    fn classify(c: &[C64]) -> Self {
        if c.iter().all(|z| z.im == 0.0) {
            Coeffs::Real(c.iter().map(|z| z.re).collect())
        } else if c.iter().all(|z| z.re == 0.0) {
            Coeffs::Imag(c.iter().map(|z| z.im).collect())
        } else {
            Coeffs::Complex(c.iter().map(|z| z.re).collect(), c.iter().map(|z| z.im).collect())
        }
    }
}

/// Nonzero diagonals; entry `i` of diagonal `offset` is `M[i, i + offset]`,
/// zero where out of range.
#[derive(Clone, Debug)]
struct Diagonals {
    n: usize,
    diags: Vec<(isize, Coeffs)>,
}

impl Diagonals {
    fn from_csc(m: &Csc) -> Self {
        let n = m.n;
        let mut map: std::collections::BTreeMap<isize, Vec<C64>> = std::collections::BTreeMap::new();
        for j in 0..n {
            let (idx, val) = m.col(j);
            for (&i, &v) in idx.iter().zip(val) {
                let off = j as isize - i as isize;
                map.entry(off).or_insert_with(|| vec![C64::new(0.0, 0.0); n])[i] = v;
            }
        }
        Self { n, diags: map.into_iter().map(|(off, c)| (off, Coeffs::classify(&c))).collect() }
    }

    /// `y += s M x`.
    #[inline(always)]
    fn matvec_acc(&self, xr: &[f64], xi: &[f64], s: C64, yr: &mut [f64], yi: &mut [f64]) {
        let n = self.n;
        let (sr, si) = (s.re, s.im);
        for (off, c) in &self.diags {
            // rows i with 0 <= i + off < n
            let (lo, hi) = if *off >= 0 { (0, n - *off as usize) } else { ((-*off) as usize, n) };
            let shift = (lo as isize + off) as usize;
            let len = hi - lo;
            let (xr, xi) = (&xr[shift..shift + len], &xi[shift..shift + len]);
            let (yr, yi) = (&mut yr[lo..hi], &mut yi[lo..hi]);
            match c {
                Coeffs::Real(c) => {
                    let c = &c[lo..hi];
                    let a = move |k: usize| sr * c[k];
                    let b = move |k: usize| si * c[k];
                    cmul_acc(yr, yi, xr, xi, (sr != 0.0).then_some(&a), (si != 0.0).then_some(&b));
                }
                Coeffs::Imag(c) => {
                    let c = &c[lo..hi];
                    let a = move |k: usize| -si * c[k];
                    let b = move |k: usize| sr * c[k];
                    cmul_acc(yr, yi, xr, xi, (si != 0.0).then_some(&a), (sr != 0.0).then_some(&b));
                }
                Coeffs::Complex(cr, ci) => {
                    let (cr, ci) = (&cr[lo..hi], &ci[lo..hi]);
                    let a = move |k: usize| sr * cr[k] - si * ci[k];
                    let b = move |k: usize| sr * ci[k] + si * cr[k];
                    cmul_acc(yr, yi, xr, xi, Some(&a), Some(&b));
                }
            }
        }
    }
}

struct Jump {
    rate: f64,
    op: Csc,
    op_diag: Diagonals,
    adj: Csc,
}

/// Column-local form of the generator.
struct Generator {
    n: usize,
    k: Csc,
    k_diag: Diagonals,
    k_adj: Csc,
    jumps: Vec<Jump>,
    h_scale: f64,
    d_scale: f64,
}

impl Generator {
    fn new(h: &Operator, dissipators: &[Dissipator]) -> Self {
        let n = h.dim();
        let mut k = h.matrix() * C64::new(0.0, -1.0);
        let mut jumps = Vec::new();
        let mut d_scale: f64 = 0.0;
        for d in dissipators.iter().filter(|d| d.rate > 0.0) {
            let op = Csc::from_dense(d.op.matrix());
            let adj = Csc::from_dense(&d.op.matrix().adjoint());
            // column j of o†o is Σ_k o[k, j] o†[:, k]
            let mut col = vec![C64::new(0.0, 0.0); n];
            for j in 0..n {
                col.fill(C64::new(0.0, 0.0));
                let (idx, val) = op.col(j);
                for (&kk, &v) in idx.iter().zip(val) {
                    let (ai, av) = adj.col(kk);
                    for (&i, &w) in ai.iter().zip(av) {
                        col[i] += w * v;
                    }
                }
                for (i, c) in col.iter().enumerate() {
                    d_scale = d_scale.max(d.rate * c.norm());
                    k[(i, j)] -= c * (0.5 * d.rate);
                }
            }
            jumps.push(Jump { rate: d.rate, op_diag: Diagonals::from_csc(&op), op, adj });
        }
        let k_csc = Csc::from_dense(&k);
        Self {
            n,
            k_adj: Csc::from_dense(&k.adjoint()),
            k_diag: Diagonals::from_csc(&k_csc),
            k: k_csc,
            jumps,
            h_scale: h.max_abs(),
            d_scale,
        }
    }

    /// Upper bound on the spectral radius of the superoperator.
    fn spectral_bound(&self) -> f64 {
        let jump: f64 = self.jumps.iter().map(|j| j.rate * j.op.one_norm() * j.adj.one_norm()).sum();
        2.0 * self.k.one_norm() + jump
    }

    fn auto_dt(&self, t_final: f64, order: usize) -> f64 {
        let omega_max = self.h_scale.max(self.d_scale);
        let mut dt = t_final / AUTO_MIN_STEPS;
        if omega_max > 0.0 {
            // 1 / (50 f_max) with f_max = ω_max / 2π
            dt = dt.min(2.0 * std::f64::consts::PI / (AUTO_STEPS_PER_CYCLE * omega_max));
        }
        let radius = self.spectral_bound();
        if radius > 0.0 {
            dt = dt.min(stability_limit(order) / radius);
        }
        dt
    }

    /// Largest `|k - j|` such that column `j` of the output reads column `k`
    /// of the input.
    fn reach(&self) -> usize {
        let mut d = 0;
        let mut scan = |m: &Csc| {
            for j in 0..m.n {
                for &k in m.col(j).0 {
                    d = d.max(k.abs_diff(j));
                }
            }
        };
        scan(&self.k_adj);
        for jump in &self.jumps {
            scan(&jump.adj);
        }
        d
    }

    /// Column `j` of `alpha (Kρ + ρK† + Σ r oρo†)`, with `col(k)` returning
    /// column `k` of ρ.
    #[inline(always)]
    fn column<'a>(&self, j: usize, col: impl Fn(usize) -> (&'a [f64], &'a [f64]), alpha: f64, out: (&mut [f64], &mut [f64])) {
        let (or, oi) = out;
        or.fill(0.0);
        oi.fill(0.0);
        let (xr, xi) = col(j);
        self.k_diag.matvec_acc(xr, xi, C64::new(alpha, 0.0), or, oi);
        let (idx, val) = self.k_adj.col(j);
        for (&k, &v) in idx.iter().zip(val) {
            let (xr, xi) = col(k);
            axpy(or, oi, v * alpha, xr, xi);
        }
        for jump in &self.jumps {
            let (idx, val) = jump.adj.col(j);
            for (&l, &w) in idx.iter().zip(val) {
                let (xr, xi) = col(l);
                jump.op_diag.matvec_acc(xr, xi, w * (jump.rate * alpha), or, oi);
            }
        }
    }
}

/// Imaginary-axis stability bound of the order-`p` Taylor step, with margin.
fn stability_limit(order: usize) -> f64 {
    match order {
        4 => 2.5,
        _ => 3.0,
    }
}

#[derive(Default)]
struct StepStats {
    trace: f64,
    purity: f64,
    largest_sq: f64,
}

/// Order-`p` Taylor polynomial of the propagator, `Σ_{s≤p} (hL)^s/s!`,
/// built from the terms `y_s = (h/s) L y_{s-1}`. For this linear generator
/// order 4 is exactly classical RK4.
///
/// Term `s` runs `(s - 1) * reach` columns behind term 1, so every input
/// column is complete by the time it is read. Intermediate terms live in ring
/// buffers of `2 reach + 2` columns and the state is updated in place.
struct Stepper {
    n: usize,
    order: usize,
    reach: usize,
    ring_y: usize,
    ring_acc: usize,
    y: Vec<Planes>,
    acc: Planes,
    last: Planes,
}

impl Stepper {
    fn new(gen: &Generator, order: usize) -> Self {
        let n = gen.n;
        let reach = gen.reach();
        let ring_y = (2 * reach + 2).min(n);
        let ring_acc = ((order - 1) * reach + 2).min(n);
        Self {
            n,
            order,
            reach,
            ring_y,
            ring_acc,
            y: (1..order).map(|_| Planes::zeros(n, ring_y)).collect(),
            acc: Planes::zeros(n, ring_acc),
            last: Planes::zeros(n, 1),
        }
    }

    /// Advances `rho` by one step of size `h`.
    fn step(&mut self, gen: &Generator, rho: &mut Planes, h: f64) -> StepStats {
        #[cfg(target_arch = "x86_64")]
        {
            if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
                // SAFETY: the required CPU features were detected above.
                return unsafe { self.step_avx2(gen, rho, h) };
            }
        }
        self.step_portable(gen, rho, h)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2,fma")]
    unsafe fn step_avx2(&mut self, gen: &Generator, rho: &mut Planes, h: f64) -> StepStats {
        self.step_portable(gen, rho, h)
    }

    #[inline(always)]
    fn step_portable(&mut self, gen: &Generator, rho: &mut Planes, h: f64) -> StepStats {
        let (n, order, reach, ring_y, ring_acc) = (self.n, self.order, self.reach, self.ring_y, self.ring_acc);
        let mut stats = StepStats::default();
        let mut purity = [0.0f64; 4];
        let mut largest = [0.0f64; 4];
        for i in 0..n + (order - 1) * reach {
            for s in 1..=order {
                let Some(c) = i.checked_sub((s - 1) * reach).filter(|&c| c < n) else {
                    continue;
                };
                let alpha = h / s as f64;
                let (done, rest) = self.y.split_at_mut(s - 1);
                let target = if s < order { rest[0].col_mut(c % ring_y) } else { self.last.col_mut(0) };
                if s == 1 {
                    let src: &Planes = rho;
                    gen.column(c, |k| src.col(k), alpha, target);
                } else {
                    let ring = &done[s - 2];
                    gen.column(c, |k| ring.col(k % ring_y), alpha, target);
                }
                let term = if s < order { self.y[s - 1].col(c % ring_y) } else { self.last.col(0) };
                let (ar, ai) = self.acc.col_mut(c % ring_acc);
                if s == 1 {
                    let (br, bi) = rho.col(c);
                    for k in 0..n {
                        ar[k] = br[k] + term.0[k];
                        ai[k] = bi[k] + term.1[k];
                    }
                } else if s < order {
                    for k in 0..n {
                        ar[k] += term.0[k];
                        ai[k] += term.1[k];
                    }
                } else {
                    let (tr, ti) = term;
                    let (or, oi) = rho.col_mut(c);
                    for k in 0..n {
                        or[k] = ar[k] + tr[k];
                        oi[k] = ai[k] + ti[k];
                    }
                    let (mut chunks_r, mut chunks_i) = (or.chunks_exact(4), oi.chunks_exact(4));
                    for (r4, i4) in (&mut chunks_r).zip(&mut chunks_i) {
                        for l in 0..4 {
                            let m = r4[l] * r4[l] + i4[l] * i4[l];
                            purity[l] += m;
                            largest[l] = if m > largest[l] { m } else { largest[l] };
                        }
                    }
                    for (r, i) in chunks_r.remainder().iter().zip(chunks_i.remainder()) {
                        let m = r * r + i * i;
                        purity[0] += m;
                        largest[0] = largest[0].max(m);
                    }
                    stats.trace += or[c];
                }
            }
        }
        stats.purity = purity.iter().sum();
        stats.largest_sq = largest.iter().copied().fold(0.0, f64::max);
        // NaN never compares greater, so look for it explicitly
        if !stats.purity.is_finite() {
            stats.largest_sq = f64::INFINITY;
        }
        stats
    }
}

/// Diagnostics taken at one record time, before the record-time correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub t: f64,
    /// Observable expectations after correction, in spec order.
    pub observables: Vec<C64>,
    /// `|trace - 1|` before renormalization.
    pub trace_drift: f64,
    /// `max |ρ - ρ†|` before re-Hermitization.
    pub hermiticity_defect: f64,
    /// Smallest eigenvalue of the corrected state, when checked.
    pub min_eigenvalue: Option<f64>,
    pub purity: f64,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub records: Vec<Record>,
    /// Corrected states at record times, when requested.
    pub states: Vec<QuantumState>,
    pub final_state: QuantumState,
    pub dt: f64,
    pub steps: usize,
    /// Largest purity seen after any step.
    pub max_purity: f64,
    pub final_min_eigenvalue: Option<f64>,
}

impl Trajectory {
    /// CSV with columns `t`, `<label>_re`, `<label>_im` per observable,
    /// `trace_drift`, `min_eigenvalue`.
    pub fn write_csv<W: Write>(&self, mut out: W, labels: &[&str]) -> io::Result<()> {
        let mut header = vec!["t".to_string()];
        for l in labels {
            header.push(format!("{l}_re"));
            header.push(format!("{l}_im"));
        }
        header.push("trace_drift".into());
        header.push("min_eigenvalue".into());
        writeln!(out, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![fmt_f64(r.t)];
            for v in &r.observables {
                row.push(fmt_f64(v.re));
                row.push(fmt_f64(v.im));
            }
            row.push(fmt_f64(r.trace_drift));
            row.push(r.min_eigenvalue.map(fmt_f64).unwrap_or_default());
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Propagates `rho0` under `spec`.
pub fn evolve(rho0: &QuantumState, spec: &EvolutionSpec) -> Result<Trajectory> {
    spec.validate()?;
    spec.guard()?;
    if rho0.factors() != spec.hamiltonian.factors() {
        return Err(Error::Composition("initial state and Hamiltonian act on different spaces".into()));
    }
    let gen = Generator::new(&spec.hamiltonian, &spec.dissipators);
    match spec.step {
        StepControl::Fixed { dt } => evolve_with_dt(rho0, spec, &gen, dt),
        StepControl::Auto => {
            let mut dt = gen.auto_dt(spec.t_final, spec.order);
            let mut attempt = 0;
            loop {
                match evolve_with_dt(rho0, spec, &gen, dt) {
                    Err(Error::IntegrationFailure { t, reason }) if attempt < AUTO_REFINEMENTS => {
                        log::warn!("step rejected at t = {t:.3e} ({reason}); halving dt");
                        dt /= 2.0;
                        attempt += 1;
                    }
                    other => return other,
                }
            }
        }
    }
}

fn evolve_with_dt(rho0: &QuantumState, spec: &EvolutionSpec, gen: &Generator, dt: f64) -> Result<Trajectory> {
    let n = rho0.dim();
    let factors = rho0.factors().to_vec();
    let observables: Vec<Csc> = spec.observables.iter().map(|o| Csc::from_dense(o.matrix())).collect();
    let positivity = match spec.positivity {
        PositivityCheck::Auto if n <= DENSE_EIGEN_LIMIT => PositivityCheck::EveryRecord,
        PositivityCheck::Auto => PositivityCheck::FinalOnly,
        p => p,
    };
    let mut stepper = Stepper::new(gen, spec.order);
    let mut rho = Planes::from_matrix(rho0.rho());
    let mut t = 0.0;
    let mut steps = 0;
    let mut trace = rho.trace();
    let mut max_purity = rho.frobenius_sq();
    let mut records = Vec::with_capacity(spec.record_times.len());
    let mut states = Vec::new();

    let mut targets: Vec<(f64, bool)> = spec.record_times.iter().map(|&t| (t, true)).collect();
    if targets.last().map_or(true, |&(t, _)| t < spec.t_final) {
        targets.push((spec.t_final, false));
    }

    for (target, is_record) in targets {
        let span = target - t;
        if span > 0.0 {
            let count = ((span / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
            let h = span / count as f64;
            for _ in 0..count {
                let stats = stepper.step(gen, &mut rho, h);
                t += h;
                steps += 1;
                let drift = (stats.trace - trace).abs();
                trace = stats.trace;
                if !(drift <= STEP_TRACE_DRIFT_LIMIT) {
                    return Err(Error::IntegrationFailure { t, reason: format!("trace drift {drift:.3e} in one step") });
                }
                // a density matrix has no element larger than 1 in magnitude
                if !(stats.largest_sq <= (1.0 + ELEMENT_BOUND_SLACK).powi(2)) {
                    let largest = stats.largest_sq.sqrt();
                    return Err(Error::IntegrationFailure { t, reason: format!("matrix element grew to {largest:.6}") });
                }
                max_purity = max_purity.max(stats.purity);
            }
        }
        t = target;
        if !is_record {
            continue;
        }
        let (herm_defect, tr) = rho.hermitize_normalize();
        let trace_drift = (tr - 1.0).abs();
        log::debug!("t = {t:.6e}: trace correction {trace_drift:.3e}, Hermiticity correction {herm_defect:.3e}");
        trace = 1.0;
        let state = (spec.keep_states || positivity == PositivityCheck::EveryRecord)
            .then(|| QuantumState::from_parts_unchecked(rho.to_matrix(), factors.clone()));
        let min_eigenvalue = match (&state, positivity) {
            (Some(state), PositivityCheck::EveryRecord) => Some(state.min_eigenvalue()),
            _ => None,
        };
        records.push(Record {
            t,
            observables: observables.iter().map(|o| o.trace_with(&rho)).collect(),
            trace_drift,
            hermiticity_defect: herm_defect,
            min_eigenvalue,
            purity: rho.frobenius_sq(),
        });
        if spec.keep_states {
            states.extend(state);
        }
    }

    let final_state = QuantumState::from_parts_unchecked(rho.to_matrix(), factors);
    let final_min_eigenvalue = match positivity {
        PositivityCheck::Never => None,
        PositivityCheck::EveryRecord if records.last().map_or(false, |r| r.t == spec.t_final) => {
            records.last().and_then(|r| r.min_eigenvalue)
        }
        _ => Some(final_state.min_eigenvalue()),
    };
    Ok(Trajectory { records, states, final_state, dt, steps, max_purity, final_min_eigenvalue })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, destroy, hermiticity_defect, lift, max_abs, number, qubit_ops, HilbertFactor, Mode, QubitLevel};
    use crate::hamiltonians::build_h_beam_splitter;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn random_hermitian(n: usize, seed: u64) -> CMatrix {
        // small LCG keeps the test free of extra dependencies
        let mut s = seed;
        let mut next = move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let m = CMatrix::from_fn(n, n, |_, _| C64::new(next(), next()));
        &m + m.adjoint()
    }

    fn random_state(n_q: bool, dim: usize, seed: u64) -> QuantumState {
        let mut factors = vec![];
        if n_q {
            factors.push(HilbertFactor::qubit());
        }
        factors.push(HilbertFactor::bosonic(Mode::B, dim).unwrap());
        let n: usize = factors.iter().map(|f| f.dim()).product();
        let a = random_hermitian(n, seed);
        let mut rho = &a * &a;
        let tr = rho.trace();
        rho /= tr;
        QuantumState::from_density(rho, factors).unwrap()
    }

    #[test]
    fn rhs_zero_without_dynamics() {
        let s = random_state(true, 4, 1);
        let spec = EvolutionSpec::new(Operator::zeros(s.factors()).unwrap(), 1.0);
        assert_eq!(max_abs(&lindblad_rhs(&s, &spec).unwrap()), 0.0);
    }

    #[test]
    fn rhs_single_decay_from_one_photon() {
        let kappa = 0.7;
        let a = destroy(Mode::A, 3).unwrap();
        let s = QuantumState::fock(Mode::A, 3, 1).unwrap();
        let spec = EvolutionSpec::new(Operator::zeros(s.factors()).unwrap(), 1.0)
            .dissipators(vec![Dissipator::new(a, kappa).unwrap()]);
        let d = lindblad_rhs(&s, &spec).unwrap();
        assert_abs_diff_eq!(d[(0, 0)].re, kappa, epsilon = 1e-15);
        assert_abs_diff_eq!(d[(1, 1)].re, -kappa, epsilon = 1e-15);
    }

    #[test]
    fn rhs_traceless_and_hermiticity_preserving_and_matches_fused_form() {
        for seed in 0..5 {
            let s = random_state(true, 5, seed);
            let space = s.factors().to_vec();
            let h = Operator::new(random_hermitian(10, seed + 100), space.clone()).unwrap();
            let b = lift(&destroy(Mode::B, 5).unwrap(), &space).unwrap();
            let mut diss = thermal_dissipators(&b, 0.3, 1.5).unwrap();
            diss.push(Dissipator::new(lift(&qubit_ops().sigma_z, &space).unwrap(), 0.8).unwrap());
            let spec = EvolutionSpec::new(h, 1.0).dissipators(diss);
            let d = lindblad_rhs(&s, &spec).unwrap();
            assert!(d.trace().norm() < 1e-12);
            assert!(hermiticity_defect(&d) < 1e-12);

            let gen = Generator::new(&spec.hamiltonian, &spec.dissipators);
            let src = Planes::from_matrix(s.rho());
            let mut out = Planes::zeros(10, 1);
            for j in 0..10 {
                gen.column(j, |k| src.col(k), 0.5, out.col_mut(0));
                for i in 0..10 {
                    assert!((C64::new(out.re[i], out.im[i]) * 2.0 - d[(i, j)]).norm() < 1e-12);
                }
            }
        }
    }

    fn pipeline_case() -> (EvolutionSpec, QuantumState) {
        // reach 6 on a 36-dim space, so the ring buffers wrap
        let space = vec![HilbertFactor::bosonic(Mode::A, 6).unwrap(), HilbertFactor::bosonic(Mode::B, 6).unwrap()];
        let h = build_h_beam_splitter(1.3, &space).unwrap();
        let a = lift(&destroy(Mode::A, 6).unwrap(), &space).unwrap();
        let b = lift(&destroy(Mode::B, 6).unwrap(), &space).unwrap();
        let mut diss = thermal_dissipators(&b, 0.2, 0.3).unwrap();
        diss.push(Dissipator::new(a.clone(), 0.7).unwrap());
        // a jump with complex weights in its adjoint
        diss.push(Dissipator::new(&(&a * C64::new(0.6, 0.8)) + &b, 0.1).unwrap());
        let spec = EvolutionSpec::new(h, 1.0).dissipators(diss);
        let s0 = QuantumState::product(&[
            coherent_state(Mode::A, 6, C64::new(0.3, -0.2)).unwrap(),
            QuantumState::fock(Mode::B, 6, 1).unwrap(),
        ])
        .unwrap();
        (spec, s0)
    }

    #[test]
    fn pipelined_step_matches_dense_rk4() {
        let (spec, s0) = pipeline_case();
        let dt = 0.05;
        let f = |m: &CMatrix| {
            let st = QuantumState::from_parts_unchecked(m.clone(), s0.factors().to_vec());
            lindblad_rhs(&st, &spec).unwrap()
        };
        let r = s0.rho().clone();
        let k1 = f(&r);
        let k2 = f(&(&r + &k1 * C64::new(dt / 2.0, 0.0)));
        let k3 = f(&(&r + &k2 * C64::new(dt / 2.0, 0.0)));
        let k4 = f(&(&r + &k3 * C64::new(dt, 0.0)));
        let expected = &r + (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(dt / 6.0, 0.0);

        let gen = Generator::new(&spec.hamiltonian, &spec.dissipators);
        let mut stepper = Stepper::new(&gen, 4);
        assert!(stepper.ring_y < 36 && stepper.ring_acc < 36);
        let mut rho = Planes::from_matrix(&r);
        let stats = stepper.step(&gen, &mut rho, dt);
        assert!(max_abs(&(rho.to_matrix() - &expected)) < 1e-14);
        assert_abs_diff_eq!(stats.trace, expected.trace().re, epsilon = 1e-14);
        assert_abs_diff_eq!(stats.purity, rho.frobenius_sq(), epsilon = 1e-14);
    }

    #[test]
    fn higher_orders_match_dense_taylor_sum() {
        let (spec, s0) = pipeline_case();
        let h = 0.08;
        let f = |m: &CMatrix| {
            let st = QuantumState::from_parts_unchecked(m.clone(), s0.factors().to_vec());
            lindblad_rhs(&st, &spec).unwrap()
        };
        let gen = Generator::new(&spec.hamiltonian, &spec.dissipators);
        for order in [8, 12] {
            let mut term = s0.rho().clone();
            let mut expected = term.clone();
            for s in 1..=order {
                term = f(&term) * C64::new(h / s as f64, 0.0);
                expected += &term;
            }
            let mut stepper = Stepper::new(&gen, order);
            assert!(stepper.ring_y < 36);
            let mut rho = Planes::from_matrix(s0.rho());
            stepper.step(&gen, &mut rho, h);
            assert!(max_abs(&(rho.to_matrix() - &expected)) < 1e-14, "order {order}");
        }
    }

    #[test]
    fn orders_converge_to_the_same_state() {
        let (spec, s0) = pipeline_case();
        let run = |order: usize, steps: usize| {
            let spec = spec.clone().order(order).step(StepControl::Fixed { dt: 1.0 / steps as f64 });
            evolve(&s0, &spec).unwrap().final_state.rho().clone()
        };
        let reference = run(16, 40);
        assert!(max_abs(&(run(12, 40) - &reference)) < 1e-13);
        assert!(max_abs(&(run(4, 40) - &reference)) > 1e-9);
        assert!(max_abs(&(run(4, 400) - &reference)) < 1e-9);
        let bad = spec.clone().order(5);
        assert!(matches!(evolve(&s0, &bad), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn record_correction_matches_dense_form() {
        // 70 is not a multiple of the tile size
        let n = 70;
        let a = random_hermitian(n, 11);
        let skew = random_hermitian(n, 12) * C64::new(0.0, 1e-3);
        let m = (&a * &a) * C64::new(1.0 / n as f64, 0.0) + skew;
        let mut planes = Planes::from_matrix(&m);
        let (defect, tr) = planes.hermitize_normalize();
        let sym = (&m + m.adjoint()) * C64::new(0.5, 0.0);
        let expected = &sym / sym.trace();
        assert_abs_diff_eq!(defect, hermiticity_defect(&m), epsilon = 1e-15);
        assert_abs_diff_eq!(tr, m.trace().re, epsilon = 1e-12);
        assert!(max_abs(&(planes.to_matrix() - expected)) < 1e-15);
    }

    #[test]
    fn thermal_channels() {
        let b = destroy(Mode::B, 4).unwrap();
        let d = thermal_dissipators(&b, 2.0, 0.0).unwrap();
        assert_eq!(d[0].rate(), 2.0);
        assert_eq!(d[1].rate(), 0.0);
        let g = crate::params::angular(1.0);
        let d = thermal_dissipators(&b, g, 400.0).unwrap();
        assert_abs_diff_eq!(d[1].rate(), crate::params::angular(400.0), epsilon = 1e-9);
        assert_abs_diff_eq!(d[1].rate() / d[0].rate(), 400.0 / 401.0, epsilon = 1e-15);
        assert_eq!(d[1].op(), &b.dagger());
        assert!(thermal_dissipators(&b, -1.0, 0.0).is_err());
    }

    #[test]
    fn trivial_evolution_is_identity() {
        let s = random_state(true, 4, 7);
        let spec = EvolutionSpec::new(Operator::zeros(s.factors()).unwrap(), 2.0);
        let traj = evolve(&s, &spec).unwrap();
        assert!(max_abs(&(traj.final_state.rho() - s.rho())) < 1e-12);
    }

    #[test]
    fn coherent_decay_matches_closed_form() {
        let kappa = 1.3;
        let dim = 30;
        let a = destroy(Mode::A, dim).unwrap();
        let s = coherent_state(Mode::A, dim, C64::new(2.0, 0.0)).unwrap();
        let times: Vec<f64> = (0..=10).map(|k| 0.2 * k as f64).collect();
        let spec = EvolutionSpec::new(Operator::zeros(s.factors()).unwrap(), 2.0)
            .dissipators(vec![Dissipator::new(a, kappa).unwrap()])
            .observables(vec![number(Mode::A, dim).unwrap()])
            .record_times(times.clone());
        let traj = evolve(&s, &spec).unwrap();
        for (r, t) in traj.records.iter().zip(times) {
            let exact = 4.0 * (-kappa * t).exp();
            assert!((r.observables[0].re - exact).abs() <= 1e-6 * exact, "t={t}");
        }
    }

    #[test]
    fn unitary_evolution_keeps_purity_and_invariants() {
        let space = vec![HilbertFactor::qubit(), HilbertFactor::bosonic(Mode::B, 6).unwrap()];
        let h = Operator::new(random_hermitian(12, 3), space.clone()).unwrap();
        let mut ket = DVector::zeros(12);
        ket[0] = C64::new(1.0, 0.0);
        ket[7] = C64::new(0.0, 1.0);
        let s = QuantumState::from_ket(&ket, space).unwrap();
        let spec = EvolutionSpec::new(h, 3.0).record_times((0..=6).map(|k| 0.5 * k as f64).collect());
        let traj = evolve(&s, &spec).unwrap();
        for r in &traj.records {
            assert!((r.purity - 1.0).abs() < 1e-9);
            assert!(r.trace_drift < 1e-9);
            assert!(r.hermiticity_defect < 1e-10);
            assert!(r.min_eigenvalue.unwrap() > -1e-8);
        }
        assert!(traj.max_purity <= 1.0 + 1e-9);
    }

    #[test]
    fn guards_reject_stiff_and_hot_runs() {
        let b = destroy(Mode::B, 4).unwrap();
        let zero = Operator::zeros(b.factors()).unwrap();
        let stiff = EvolutionSpec::new(zero.clone(), 1.0).dissipators(vec![Dissipator::new(b.clone(), 2e4).unwrap()]);
        let s = QuantumState::fock(Mode::B, 4, 0).unwrap();
        assert!(matches!(evolve(&s, &stiff), Err(Error::Stiff { .. })));
        let hot = EvolutionSpec::new(zero, 1.0).dissipators(thermal_dissipators(&b, 1.0, 0.5).unwrap());
        assert!(matches!(evolve(&s, &hot), Err(Error::ThermalInflux { .. })));
    }

    #[test]
    fn fixed_step_instability_is_reported() {
        let dim = 10;
        let a = destroy(Mode::A, dim).unwrap();
        let h = &(&a + &a.dagger()) * 50.0;
        let s = coherent_state(Mode::A, dim, C64::new(0.5, 0.0)).unwrap();
        let spec = EvolutionSpec::new(h, 1.0).step(StepControl::Fixed { dt: 0.5 });
        assert!(matches!(evolve(&s, &spec), Err(Error::IntegrationFailure { .. })));
    }

    #[test]
    fn invalid_specs() {
        let s = QuantumState::qubit(QubitLevel::Ground);
        let z = Operator::zeros(s.factors()).unwrap();
        let spec = EvolutionSpec::new(z.clone(), 1.0).record_times(vec![0.5, 0.2]);
        assert!(evolve(&s, &spec).is_err());
        let spec = EvolutionSpec::new(z, 1.0).record_times(vec![1.5]);
        assert!(evolve(&s, &spec).is_err());
    }

    #[test]
    fn csv_export_has_expected_columns() {
        let s = QuantumState::qubit(QubitLevel::Excited);
        let spec = EvolutionSpec::new(Operator::zeros(s.factors()).unwrap(), 1.0)
            .observables(vec![qubit_ops().excited_projector])
            .record_times(vec![0.0, 1.0]);
        let traj = evolve(&s, &spec).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, &["p_e"]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "t,p_e_re,p_e_im,trace_drift,min_eigenvalue");
        assert_eq!(lines.len(), 3);
        assert!(lines[2].starts_with("1.0000000000000000e0,1.0000000000000000e0,"));
    }
}
