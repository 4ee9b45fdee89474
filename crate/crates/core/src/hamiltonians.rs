//! Couplings and Hamiltonians for both transduction stages, in units of ħ.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{create, destroy, lift, number, qubit_ops, tensor, HilbertFactor, Mode, Operator};
use crate::params::{ElectromagnonParams, ElectromechParams, Platform, Warning, PHI_AC_MAX, PHI_AC_WARN};

/// Frequency ratio counted as "much greater than" for dropped counter-rotating terms.
pub const RWA_RATIO: f64 = 20.0;

const SINGULAR_BIAS_TOL: f64 = 1e-9;

/// Static transmon-phonon coupling `g₀ sin φ_b`.
pub fn coupling_static_mech(g0: f64, phi_b: f64) -> f64 {
    g0 * phi_b.sin()
}

/// Static transmon-magnon coupling `g'₀ sin φ_m / sqrt|cos φ_m|`.
pub fn coupling_static_magnon(g0p: f64, phi_m: f64) -> Result<f64> {
    let c = phi_m.cos();
    if c.abs() <= SINGULAR_BIAS_TOL {
        return Err(Error::SingularBias { phi: phi_m });
    }
    Ok(g0p * phi_m.sin() / c.abs().sqrt())
}

/// Flux-modulated coupling `g₀ φ_ac cos(ω_ac t)`.
pub fn modulated_coupling(g0: f64, phi_ac: f64, omega_ac: f64, t: f64) -> Result<f64> {
    if phi_ac >= PHI_AC_MAX {
        return Err(Error::param("phi_ac", format!("must be below {PHI_AC_MAX}, got {phi_ac}")));
    }
    if phi_ac > PHI_AC_WARN {
        log::warn!("{}", Warning::LargeModulation { field: "phi_ac".into(), value: phi_ac });
    }
    Ok(g0 * phi_ac * (omega_ac * t).cos())
}

#[derive(Clone, Debug)]
pub struct EncodingHamiltonian {
    pub operator: Operator,
    /// `ω_boson - ω_ac`; zero at resonance.
    pub detuning: f64,
    pub resonant: bool,
}

/// Rotating-frame encoding Hamiltonian `g σ_z (b + b†) + (ω_boson - ω_ac) b†b`
/// with `g = g₀ φ_ac`.
///
/// `space` must contain the qubit and the platform's boson (`b` or `m`).
/// At resonance the free boson term vanishes exactly.
pub fn build_h_encode(platform: &Platform, space: &[HilbertFactor]) -> Result<EncodingHamiltonian> {
    let view = platform.encoding();
    let mode = platform.boson_mode();
    let boson = space
        .iter()
        .find(|f| f.label() == mode)
        .ok_or(Error::UnknownMode(mode))?;
    if !space.iter().any(|f| f.label() == Mode::Qubit) {
        return Err(Error::UnknownMode(Mode::Qubit));
    }
    let dim = boson.dim();
    let b = lift(&destroy(mode, dim)?, space)?;
    let sz = lift(&qubit_ops().sigma_z, space)?;
    let quadrature = &b + &b.dagger();
    let mut h = &(&sz * &quadrature) * view.coupling();
    let resonant = view.is_resonant();
    let detuning = if resonant { 0.0 } else { view.detuning() };
    if !resonant {
        log::warn!("{}", Warning::OffResonance { detuning });
        h = &h + &(&lift(&number(mode, dim)?, space)? * detuning);
    }
    Ok(EncodingHamiltonian { operator: h, detuning, resonant })
}

/// Beam-splitter Hamiltonian `G (o† s + s† o)` on two bosonic factors, the
/// first being the optical mode `o` and the second the phonon or magnon `s`.
pub fn build_h_beam_splitter(coupling: f64, space: &[HilbertFactor]) -> Result<Operator> {
    let [optical, boson] = space else {
        return Err(Error::Composition(format!(
            "beam splitter needs exactly two factors, got {}",
            space.len()
        )));
    };
    if !optical.is_bosonic() || !boson.is_bosonic() {
        return Err(Error::Composition("beam splitter factors must both be bosonic".into()));
    }
    // Kronecker products keep this cheap at large truncations.
    let hop = tensor(&[create(optical.label(), optical.dim())?, destroy(boson.label(), boson.dim())?])?;
    Ok(&(&hop + &hop.dagger()) * coupling)
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearizedCoupling {
    /// Drive-enhanced coupling `g_single |α|`.
    pub coupling: f64,
    /// Effective optical detuning after linearization.
    pub delta_eff: f64,
    pub alpha_mag: f64,
}

/// Strong-drive linearization of the optomechanical interaction:
/// `Δ = Δ_c - (β + β*) g_om`, `G = g_om |α|`.
pub fn linearize_optomech(params: &ElectromechParams, alpha: C64, beta: C64) -> LinearizedCoupling {
    let alpha_mag = alpha.norm();
    LinearizedCoupling {
        coupling: params.g_om * alpha_mag,
        delta_eff: params.delta_c - 2.0 * beta.re * params.g_om,
        alpha_mag,
    }
}

/// Linearized optomagnonic coupling `G' = g'_om |α_v|` with `α_v` the steady
/// TM amplitude. Requires triple resonance.
pub fn linearize_optomagnon(params: &ElectromagnonParams) -> Result<LinearizedCoupling> {
    params.check_triple_resonance()?;
    let alpha_v = steady_drive_amplitude(params.e_v, params.kappa_v, params.delta_v())?;
    let alpha_mag = alpha_v.norm();
    Ok(LinearizedCoupling {
        coupling: params.g_om * alpha_mag,
        delta_eff: params.delta_h() - params.omega_m,
        alpha_mag,
    })
}

/// Steady state of `dα/dt = -(κ/2 + iδ) α + iE`, i.e. `iE / (κ/2 + iδ)`.
pub fn steady_drive_amplitude(e: f64, kappa: f64, delta: f64) -> Result<C64> {
    if kappa < 0.0 {
        return Err(Error::param("kappa", "must be non-negative"));
    }
    let denom = C64::new(kappa / 2.0, delta);
    if denom.norm() == 0.0 {
        return Err(Error::NoSteadyState);
    }
    Ok(C64::new(0.0, e) / denom)
}

/// Returns a warning when `fast / slow < RWA_RATIO`.
pub fn rwa_ratio(condition: &str, fast: f64, slow: f64) -> Option<Warning> {
    if slow == 0.0 {
        return None;
    }
    let ratio = fast / slow.abs();
    (ratio < RWA_RATIO).then(|| Warning::RwaViolated { condition: condition.to_string(), ratio })
}

/// Checks every dropped counter-rotating term: `2ω_ac ≫ g₀φ_ac` for encoding
/// and `2ω_boson ≫ G` for the beam splitter (when `stage2_coupling` is given).
pub fn rwa_check(platform: &Platform, stage2_coupling: Option<f64>) -> Vec<Warning> {
    let view = platform.encoding();
    let mut out = Vec::new();
    out.extend(rwa_ratio("2 omega_ac >> g0 phi_ac", 2.0 * view.omega_ac, view.coupling()));
    if let Some(g) = stage2_coupling {
        out.extend(rwa_ratio("2 omega_boson >> G", 2.0 * view.omega_boson, g));
    }
    for w in &out {
        log::warn!("{w}");
    }
    out
}
