//! Closed first-order equations for the beam-splitter stage.
//!
//! For `H = G (a†b + b†a)` with optical decay `κ` and a thermal boson bath
//! `(γ, n_th)`, the moments `n_a = ⟨a†a⟩`, `n_b = ⟨b†b⟩` and `c = ⟨b†a⟩`
//! obey
//!
//! ```text
//! dn_a/dt = iG(c - c*) - κ n_a
//! dn_b/dt = -iG(c - c*) - γ n_b + γ n_th
//! dc/dt   = -(κ + γ)/2 c + iG(n_a - n_b)
//! ```
//!
//! This is a linear-affine system in `(n_a, n_b, Re c, Im c)` and is solved
//! exactly with a matrix exponential.

use std::io::{self, Write};

use nalgebra::{Matrix4, Matrix5, Vector4, Vector5};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lindblad::fmt_f64;

#[derive(Copy, Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct MomentState {
    pub n_a: f64,
    pub n_b: f64,
    /// `⟨b†a⟩`.
    pub c: C64,
}

impl MomentState {
    pub fn new(n_a: f64, n_b: f64, c: C64) -> Self {
        Self { n_a, n_b, c }
    }

    /// `|c|² - n_a n_b`, non-positive for physical states.
    pub fn cauchy_schwarz_excess(&self) -> f64 {
        self.c.norm_sqr() - self.n_a * self.n_b
    }

    fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.n_a, self.n_b, self.c.re, self.c.im)
    }

    fn from_vector(v: &Vector4<f64>) -> Self {
        Self { n_a: v[0], n_b: v[1], c: C64::new(v[2], v[3]) }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentParams {
    /// Beam-splitter coupling.
    pub g: f64,
    /// Optical decay.
    pub kappa: f64,
    /// Boson decay.
    pub gamma: f64,
    pub n_th: f64,
}

impl MomentParams {
    pub fn new(g: f64, kappa: f64, gamma: f64, n_th: f64) -> Result<Self> {
        let p = Self { g, kappa, gamma, n_th };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("g", self.g), ("kappa", self.kappa), ("gamma", self.gamma), ("n_th", self.n_th)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::param(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        Ok(())
    }

    /// Linear part `A` and affine part `b` of `dx/dt = A x + b` on
    /// `x = (n_a, n_b, Re c, Im c)`.
    pub fn generator(&self) -> (Matrix4<f64>, Vector4<f64>) {
        let Self { g, kappa, gamma, n_th } = *self;
        let half = -(kappa + gamma) / 2.0;
        #[rustfmt::skip]
        let a = Matrix4::new(
            -kappa, 0.0,    0.0,  -2.0 * g,
            0.0,    -gamma, 0.0,  2.0 * g,
            0.0,    0.0,    half, 0.0,
            g,      -g,     0.0,  half,
        );
        (a, Vector4::new(0.0, gamma * n_th, 0.0, 0.0))
    }

    fn augmented(&self) -> Matrix5<f64> {
        let (a, b) = self.generator();
        let mut m = Matrix5::zeros();
        m.fixed_view_mut::<4, 4>(0, 0).copy_from(&a);
        m.fixed_view_mut::<4, 1>(0, 4).copy_from(&b);
        m
    }
}

pub fn moment_rhs(s: &MomentState, p: &MomentParams) -> MomentState {
    let i = C64::new(0.0, 1.0);
    let drive = (i * p.g * (s.c - s.c.conj())).re;
    MomentState {
        n_a: drive - p.kappa * s.n_a,
        n_b: -drive - p.gamma * s.n_b + p.gamma * p.n_th,
        c: -(p.kappa + p.gamma) / 2.0 * s.c + i * p.g * (s.n_a - s.n_b),
    }
}

fn check_grid(t_grid: &[f64]) -> Result<()> {
    if t_grid.iter().any(|t| !t.is_finite()) {
        return Err(Error::param("t_grid", "must be finite"));
    }
    if t_grid.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::param("t_grid", "must be sorted"));
    }
    Ok(())
}

/// Exact solution at each time of `t_grid`, measured from `t = 0`.
pub fn evolve_moments(s0: &MomentState, p: &MomentParams, t_grid: &[f64]) -> Result<Vec<MomentState>> {
    p.validate()?;
    check_grid(t_grid)?;
    let m = p.augmented();
    let x0 = s0.to_vector();
    let x0 = Vector5::new(x0[0], x0[1], x0[2], x0[3], 1.0);
    Ok(t_grid
        .iter()
        .map(|&t| {
            let x = (m * t).exp() * x0;
            MomentState::from_vector(&x.fixed_rows::<4>(0).into_owned())
        })
        .collect())
}

/// RK4 solution with at most `dt` per step, landing exactly on each grid time.
pub fn evolve_moments_rk4(s0: &MomentState, p: &MomentParams, t_grid: &[f64], dt: f64) -> Result<Vec<MomentState>> {
    p.validate()?;
    check_grid(t_grid)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", "must be positive"));
    }
    let (a, b) = p.generator();
    let f = |x: &Vector4<f64>| a * x + b;
    let mut x = s0.to_vector();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        let span = target - t;
        if span > 0.0 {
            let count = (span / dt).ceil().max(1.0) as usize;
            let h = span / count as f64;
            for _ in 0..count {
                let k1 = f(&x);
                let k2 = f(&(x + k1 * (h / 2.0)));
                let k3 = f(&(x + k2 * (h / 2.0)));
                let k4 = f(&(x + k3 * h));
                x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            }
            t = target;
        }
        out.push(MomentState::from_vector(&x));
    }
    Ok(out)
}

/// Dissipation-free photon number
/// `½{|α₀|² + |β₀|² + (|α₀|² - |β₀|²) cos 2Gt - i(α₀*β₀ - α₀β₀*) sin 2Gt}`.
pub fn analytic_photon(alpha0: C64, beta0: C64, g: f64, t: f64) -> f64 {
    let (na, nb) = (alpha0.norm_sqr(), beta0.norm_sqr());
    let cross = alpha0.conj() * beta0;
    // -i(z - z*) = 2 Im z
    let phase = 2.0 * g * t;
    0.5 * (na + nb + (na - nb) * phase.cos() + 2.0 * cross.im * phase.sin())
}

/// Moments of the product `|α₀⟩_a ⊗ |β₀⟩_b`.
pub fn initial_moments_from_protocol(beta0: C64, alpha0: C64) -> MomentState {
    MomentState { n_a: alpha0.norm_sqr(), n_b: beta0.norm_sqr(), c: beta0.conj() * alpha0 }
}

/// Decay time of the oscillation envelope: `-1 / Re λ` for the slowest
/// decaying oscillatory eigenvalue of the generator. Falls back to the
/// slowest decaying eigenvalue when nothing oscillates. `None` if some mode
/// does not decay.
pub fn envelope_decay_time(p: &MomentParams) -> Option<f64> {
    let (a, _) = p.generator();
    let eig = a.complex_eigenvalues();
    let scale = p.g.max(p.kappa).max(p.gamma).max(f64::MIN_POSITIVE);
    let oscillating: Vec<_> = eig.iter().filter(|l| l.im.abs() > 1e-9 * scale).collect();
    let pool: Vec<_> = if oscillating.is_empty() { eig.iter().collect() } else { oscillating };
    let slowest = pool.iter().map(|l| l.re).fold(f64::NEG_INFINITY, f64::max);
    (slowest < -1e-12 * scale).then(|| -1.0 / slowest)
}

/// Times in `[t0, t1]` where `f` crosses `level`, found by sampling on
/// `samples` intervals and refining each bracket by bisection.
pub fn level_crossings(f: impl Fn(f64) -> f64, level: f64, t0: f64, t1: f64, samples: usize) -> Vec<f64> {
    let h = (t1 - t0) / samples.max(1) as f64;
    let g = |t: f64| f(t) - level;
    let mut out = Vec::new();
    let mut prev = g(t0);
    for k in 1..=samples.max(1) {
        let (mut lo, mut hi) = (t0 + (k - 1) as f64 * h, t0 + k as f64 * h);
        let cur = g(hi);
        if prev == 0.0 {
            out.push(lo);
        } else if prev * cur < 0.0 {
            let mut flo = prev;
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let fm = g(mid);
                if fm == 0.0 {
                    lo = mid;
                    hi = mid;
                    break;
                }
                if (fm < 0.0) == (flo < 0.0) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            out.push(0.5 * (lo + hi));
        }
        prev = cur;
    }
    out
}

/// Local extrema of `f` in `[t0, t1]`: roots of a central-difference
/// derivative, refined by bisection.
pub fn extrema(f: impl Fn(f64) -> f64, t0: f64, t1: f64, samples: usize) -> Vec<f64> {
    let h = (t1 - t0) * 1e-7;
    let df = |t: f64| f(t + h) - f(t - h);
    level_crossings(df, 0.0, t0 + h, t1 - h, samples)
}

/// Period of `n_a(t)` estimated from successive upward crossings of its
/// mean level over `[0, t_max]`.
pub fn oscillation_period(s0: &MomentState, p: &MomentParams, t_max: f64) -> Result<Option<f64>> {
    let na = |t: f64| evolve_moments(s0, p, &[t]).map(|v| v[0].n_a).unwrap_or(f64::NAN);
    let samples = 2000;
    let values: Vec<f64> = (0..=samples).map(|k| na(t_max * k as f64 / samples as f64)).collect();
    let (lo, hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Ok(None);
    }
    let level = 0.5 * (lo + hi);
    let crossings = level_crossings(na, level, 0.0, t_max, samples);
    let upward: Vec<f64> = crossings.into_iter().filter(|&t| na(t + t_max * 1e-6) > level).collect();
    if upward.len() < 2 {
        return Ok(None);
    }
    Ok(Some((upward[upward.len() - 1] - upward[0]) / (upward.len() - 1) as f64))
}

/// Moment series for both qubit branches on a shared time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchSeries {
    pub t: Vec<f64>,
    pub ground: Vec<MomentState>,
    pub excited: Vec<MomentState>,
}

impl BranchSeries {
    /// Columns `t, n_a_ground, n_a_excited, n_b_ground, n_b_excited`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,n_a_ground,n_a_excited,n_b_ground,n_b_excited")?;
        for ((t, g), e) in self.t.iter().zip(&self.ground).zip(&self.excited) {
            writeln!(
                out,
                "{},{},{},{},{}",
                fmt_f64(*t),
                fmt_f64(g.n_a),
                fmt_f64(e.n_a),
                fmt_f64(g.n_b),
                fmt_f64(e.n_b)
            )?;
        }
        Ok(())
    }
}
