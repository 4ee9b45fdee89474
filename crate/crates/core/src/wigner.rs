//! Wigner functions of single-mode states.
//!
//! Convention: `x = (a + a†)/√2`, `p = (a - a†)/(i√2)`, `∫W dx dp = 1`, so the
//! vacuum peaks at `1/π` and `|β⟩` peaks at `(√2 Re β, √2 Im β)`.

use std::f64::consts::{PI, SQRT_2};
use std::io::{self, Write};

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::QuantumState;
use crate::lindblad::fmt_f64;
use crate::params::Warning;

/// Edge magnitude above which the window is considered too small.
pub const BOUNDARY_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub n_x: usize,
    pub n_p: usize,
}

impl PhaseSpaceGrid {
    pub fn new(x_min: f64, x_max: f64, p_min: f64, p_max: f64, n_x: usize, n_p: usize) -> Result<Self> {
        let g = Self { x_min, x_max, p_min, p_max, n_x, n_p };
        g.validate()?;
        Ok(g)
    }

    /// Square window `±(amplitude + 4)√2` with `n` points per axis.
    pub fn around(amplitude: f64, n: usize) -> Result<Self> {
        let half = (amplitude.abs() + 4.0) * SQRT_2;
        Self::new(-half, half, -half, half, n, n)
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [self.x_min, self.x_max, self.p_min, self.p_max];
        if bounds.iter().any(|b| !b.is_finite()) {
            return Err(Error::param("grid", "bounds must be finite"));
        }
        if !(self.x_min < self.x_max && self.p_min < self.p_max) {
            return Err(Error::param("grid", "bounds must satisfy min < max"));
        }
        if self.n_x < 2 || self.n_p < 2 || self.n_x * self.n_p < 4 {
            return Err(Error::param("grid", "need at least 2 points per axis"));
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / (self.n_x - 1) as f64
    }

    pub fn dp(&self) -> f64 {
        (self.p_max - self.p_min) / (self.n_p - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.dx()
    }

    pub fn p(&self, j: usize) -> f64 {
        self.p_min + j as f64 * self.dp()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x(i)).collect()
    }

    pub fn ps(&self) -> Vec<f64> {
        (0..self.n_p).map(|j| self.p(j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WignerMap {
    pub grid: PhaseSpaceGrid,
    /// Row-major over `(x, p)`: entry `i * n_p + j` is `W(x_i, p_j)`.
    pub values: Vec<f64>,
}

impl WignerMap {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.grid.n_p + j]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Grid coordinates of the largest value.
    pub fn argmax(&self) -> (f64, f64) {
        let (k, _) = self
            .values
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
        let n_p = self.grid.n_p;
        (self.grid.x(k / n_p), self.grid.p(k % n_p))
    }

    /// Largest `|W|` on the window boundary.
    pub fn max_edge(&self) -> f64 {
        let (nx, np) = (self.grid.n_x, self.grid.n_p);
        let mut m: f64 = 0.0;
        for i in 0..nx {
            m = m.max(self.at(i, 0).abs()).max(self.at(i, np - 1).abs());
        }
        for j in 0..np {
            m = m.max(self.at(0, j).abs()).max(self.at(nx - 1, j).abs());
        }
        m
    }

    /// `∫ W dp` at each grid `x`, by the trapezoid rule.
    pub fn marginal_x(&self) -> Vec<f64> {
        let (np, dp) = (self.grid.n_p, self.grid.dp());
        (0..self.grid.n_x).map(|i| trapezoid((0..np).map(|j| self.at(i, j)), np) * dp).collect()
    }

    /// Rows `x,p,W` with a header.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "x,p,W")?;
        for i in 0..self.grid.n_x {
            for j in 0..self.grid.n_p {
                writeln!(out, "{},{},{}", fmt_f64(self.grid.x(i)), fmt_f64(self.grid.p(j)), fmt_f64(self.at(i, j)))?;
            }
        }
        Ok(())
    }
}

fn trapezoid(values: impl Iterator<Item = f64>, n: usize) -> f64 {
    values.enumerate().map(|(k, v)| if k == 0 || k == n - 1 { 0.5 * v } else { v }).sum()
}

fn single_mode(state: &QuantumState) -> Result<()> {
    match state.factors() {
        [f] if f.is_bosonic() => Ok(()),
        [_] => Err(Error::InvalidState("Wigner map needs a bosonic mode, not a qubit".into())),
        fs => Err(Error::ReduceFirst(fs.len())),
    }
}

/// Wigner function on `grid`, evaluated point by point with the Laguerre
/// recurrence for displaced parity matrix elements.
pub fn wigner(state: &QuantumState, grid: &PhaseSpaceGrid) -> Result<WignerMap> {
    single_mode(state)?;
    grid.validate()?;
    let rho = state.rho();
    let dim = state.dim();
    let sqrt: Vec<f64> = (0..dim).map(|k| (k as f64).sqrt()).collect();
    let mut w = vec![C64::new(0.0, 0.0); dim];
    let mut values = Vec::with_capacity(grid.n_x * grid.n_p);
    for i in 0..grid.n_x {
        for j in 0..grid.n_p {
            let a = C64::new(grid.x(i), grid.p(j)) / SQRT_2;
            values.push(wigner_point(rho, a, &sqrt, &mut w));
        }
    }
    Ok(WignerMap { grid: grid.clone(), values })
}

fn wigner_point(rho: &nalgebra::DMatrix<C64>, a: C64, sqrt: &[f64], w: &mut [C64]) -> f64 {
    let dim = w.len();
    let a2 = a * 2.0;
    let a2c = a2.conj();
    w[0] = C64::new((-2.0 * a.norm_sqr()).exp() / PI, 0.0);
    let mut total = rho[(0, 0)].re * w[0].re;
    for n in 1..dim {
        w[n] = a2 * w[n - 1] / sqrt[n];
        total += 2.0 * (rho[(0, n)] * w[n]).re;
    }
    for m in 1..dim {
        let mut temp = w[m];
        w[m] = (a2c * temp - w[m - 1] * sqrt[m]) / sqrt[m];
        total += (rho[(m, m)] * w[m]).re;
        for n in m + 1..dim {
            let next = (a2 * w[n - 1] - temp * sqrt[m]) / sqrt[n];
            temp = w[n];
            w[n] = next;
            total += 2.0 * (rho[(m, n)] * w[n]).re;
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq)]
pub struct Normalization {
    pub integral: f64,
    pub max_edge: f64,
    pub warning: Option<Warning>,
}

/// `∫∫ W dx dp` by the 2-D trapezoid rule, with a warning when the window
/// edge carries more than [`BOUNDARY_TOLERANCE`].
pub fn wigner_normalization(map: &WignerMap) -> Normalization {
    let integral = trapezoid(map.marginal_x().into_iter(), map.grid.n_x) * map.grid.dx();
    let max_edge = map.max_edge();
    let warning = (max_edge > BOUNDARY_TOLERANCE).then_some(Warning::BoundaryMass { max_edge });
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    Normalization { integral, max_edge, warning }
}

/// `⟨x|ρ|x⟩` at each `x`, from the Hermite functions of the Fock basis.
pub fn position_distribution(state: &QuantumState, xs: &[f64]) -> Result<Vec<f64>> {
    single_mode(state)?;
    let rho = state.rho();
    let dim = state.dim();
    let mut psi = vec![0.0; dim];
    Ok(xs
        .iter()
        .map(|&x| {
            psi[0] = PI.powf(-0.25) * (-0.5 * x * x).exp();
            if dim > 1 {
                psi[1] = SQRT_2 * x * psi[0];
            }
            for n in 1..dim - 1 {
                let nf = n as f64;
                psi[n + 1] = (2.0 / (nf + 1.0)).sqrt() * x * psi[n] - (nf / (nf + 1.0)).sqrt() * psi[n - 1];
            }
            let mut total = 0.0;
            for m in 0..dim {
                for n in 0..dim {
                    total += (rho[(m, n)] * psi[m] * psi[n]).re;
                }
            }
            total
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{coherent_state, HilbertFactor, Mode, QubitLevel};
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn coherent(beta: C64) -> QuantumState {
        coherent_state(Mode::B, 40, beta).unwrap()
    }

    fn gaussian(x: f64, p: f64, x0: f64, p0: f64) -> f64 {
        (-(x - x0).powi(2) - (p - p0).powi(2)).exp() / PI
    }

    #[test]
    fn vacuum_closed_form() {
        let vac = QuantumState::fock(Mode::B, 10, 0).unwrap();
        let grid = PhaseSpaceGrid::around(0.0, 41).unwrap();
        let map = wigner(&vac, &grid).unwrap();
        let c = map.at(20, 20);
        assert_abs_diff_eq!(c, 1.0 / PI, epsilon = 1e-12);
        for i in 0..41 {
            for j in 0..41 {
                assert_abs_diff_eq!(map.at(i, j), gaussian(grid.x(i), grid.p(j), 0.0, 0.0), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn coherent_closed_form() {
        let beta = C64::new(1.2, -0.7);
        let map = wigner(&coherent(beta), &PhaseSpaceGrid::around(beta.norm(), 31).unwrap()).unwrap();
        let (x0, p0) = (SQRT_2 * beta.re, SQRT_2 * beta.im);
        for i in 0..31 {
            for j in 0..31 {
                let exact = gaussian(map.grid.x(i), map.grid.p(j), x0, p0);
                assert_abs_diff_eq!(map.at(i, j), exact, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn superposition_closed_form() {
        // (|0> + |1>)/√2: W = e^{-r²}(r² + √2 x)/π
        let mut ket = DVector::zeros(4);
        ket[0] = C64::new(1.0 / SQRT_2, 0.0);
        ket[1] = C64::new(1.0 / SQRT_2, 0.0);
        let s = QuantumState::from_ket(&ket, vec![HilbertFactor::bosonic(Mode::A, 4).unwrap()]).unwrap();
        let grid = PhaseSpaceGrid::new(-3.0, 3.0, -2.0, 2.5, 25, 19).unwrap();
        let map = wigner(&s, &grid).unwrap();
        for i in 0..25 {
            for j in 0..19 {
                let (x, p) = (grid.x(i), grid.p(j));
                let r2 = x * x + p * p;
                let exact = (-r2).exp() * (r2 + SQRT_2 * x) / PI;
                assert_abs_diff_eq!(map.at(i, j), exact, epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn fock_one_is_negative_at_origin() {
        let s = QuantumState::fock(Mode::A, 5, 1).unwrap();
        let map = wigner(&s, &PhaseSpaceGrid::new(-1.0, 1.0, -1.0, 1.0, 3, 3).unwrap()).unwrap();
        assert_abs_diff_eq!(map.at(1, 1), -1.0 / PI, epsilon = 1e-14);
    }

    #[test]
    fn peaks_follow_amplitude() {
        for beta in [C64::new(0.0, 3.0), C64::new(0.0, -3.0), C64::new(2.0, 1.0)] {
            let grid = PhaseSpaceGrid::around(3.0, 201).unwrap();
            let map = wigner(&coherent(beta), &grid).unwrap();
            let (x, p) = map.argmax();
            assert!((x - SQRT_2 * beta.re).abs() <= grid.dx());
            assert!((p - SQRT_2 * beta.im).abs() <= grid.dp());
        }
    }

    #[test]
    fn normalization_and_marginal() {
        let s = coherent(C64::new(0.0, 3.0));
        let grid = PhaseSpaceGrid::around(3.0, 121).unwrap();
        let map = wigner(&s, &grid).unwrap();
        let norm = wigner_normalization(&map);
        assert!((norm.integral - 1.0).abs() < 1e-4);
        assert!(norm.warning.is_none());
        let marg = map.marginal_x();
        let exact = position_distribution(&s, &grid.xs()).unwrap();
        for (m, e) in marg.iter().zip(&exact) {
            assert!((m - e).abs() < 1e-3);
        }
    }

    #[test]
    fn truncated_window_warns() {
        let s = coherent(C64::new(0.0, 3.0));
        let grid = PhaseSpaceGrid::new(-3.0, 3.0, -3.0, 3.0, 61, 61).unwrap();
        let norm = wigner_normalization(&wigner(&s, &grid).unwrap());
        assert!((norm.integral - 1.0).abs() > 1e-2);
        assert!(matches!(norm.warning, Some(Warning::BoundaryMass { .. })));
    }

    #[test]
    fn rejects_composite_and_qubit_states() {
        let grid = PhaseSpaceGrid::around(0.0, 5).unwrap();
        let q = QuantumState::qubit(QubitLevel::Ground);
        assert!(wigner(&q, &grid).is_err());
        let joint = QuantumState::product(&[q, QuantumState::fock(Mode::B, 3, 0).unwrap()]).unwrap();
        assert_eq!(wigner(&joint, &grid).unwrap_err(), Error::ReduceFirst(2));
    }

    #[test]
    fn grid_validation() {
        assert!(PhaseSpaceGrid::new(0.0, 0.0, -1.0, 1.0, 10, 10).is_err());
        assert!(PhaseSpaceGrid::new(-1.0, 1.0, -1.0, 1.0, 1, 10).is_err());
        assert!(PhaseSpaceGrid::new(-1.0, f64::NAN, -1.0, 1.0, 3, 3).is_err());
        let g = PhaseSpaceGrid::around(3.0, 201).unwrap();
        assert_abs_diff_eq!(g.x_max, 7.0 * SQRT_2, epsilon = 1e-15);
        assert_abs_diff_eq!(g.x(100), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn csv_rows() {
        let vac = QuantumState::fock(Mode::B, 3, 0).unwrap();
        let map = wigner(&vac, &PhaseSpaceGrid::new(-1.0, 1.0, -1.0, 1.0, 2, 3).unwrap()).unwrap();
        let mut buf = Vec::new();
        map.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 7);
    }
}
