//! Physical parameter records for the two hybrid platforms.
//!
//! All frequencies and rates are angular (rad/s). Use [`angular`] to convert
//! from the ordinary `value / 2π` figures that experiments quote.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::Mode;

/// Flux amplitude above which the small-modulation expansion is flagged.
pub const PHI_AC_WARN: f64 = 0.1;
/// Flux amplitude at or above which the small-modulation expansion is refused.
pub const PHI_AC_MAX: f64 = 0.3;
/// Relative tolerance for the modulation resonance `omega_m == omega_ac`.
pub const RESONANCE_TOL: f64 = 1e-9;
/// Relative tolerance for the triple-resonance conditions.
pub const TRIPLE_RESONANCE_TOL: f64 = 1e-6;

/// `2π f`.
pub fn angular(ordinary: f64) -> f64 {
    2.0 * PI * ordinary
}

/// `ω / 2π`.
pub fn ordinary(angular: f64) -> f64 {
    angular / (2.0 * PI)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Warning {
    /// A counter-rotating term was dropped while the frequency ratio is below 20.
    RwaViolated { condition: String, ratio: f64 },
    /// Flux modulation amplitude above 0.1.
    LargeModulation { field: String, value: f64 },
    /// Modulation is detuned from the boson frequency.
    OffResonance { detuning: f64 },
    /// Wigner map has non-negligible weight on the window boundary.
    BoundaryMass { max_edge: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::RwaViolated { condition, ratio } => {
                write!(f, "rotating-wave approximation questionable: {condition} (ratio {ratio:.3})")
            }
            Warning::LargeModulation { field, value } => {
                write!(f, "{field} = {value} exceeds {PHI_AC_WARN}; small-flux expansion degrades")
            }
            Warning::OffResonance { detuning } => {
                write!(f, "modulation detuned by {detuning:.3e} rad/s from the boson frequency")
            }
            Warning::BoundaryMass { max_edge } => {
                write!(f, "Wigner window edge carries |W| up to {max_edge:.3e}; widen the grid")
            }
        }
    }
}

/// Electro-optomechanical platform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectromechParams {
    /// Mechanical frequency.
    pub omega_m: f64,
    /// Flux modulation frequency.
    pub omega_ac: f64,
    /// Bare transmon-mechanical coupling.
    pub g0: f64,
    /// Dimensionless ac flux amplitude.
    pub phi_ac: f64,
    /// Qubit rate on the `L[σ_z]` channel.
    pub qubit_dephasing: f64,
    /// Qubit rate on the `L[σ⁻]` channel.
    pub qubit_relaxation: f64,
    pub gamma_b: f64,
    pub n_th: f64,
    /// Cavity detuning `ω_c - ω_d`.
    pub delta_c: f64,
    /// Single-photon optomechanical coupling.
    pub g_om: f64,
    /// Optical drive amplitude.
    pub e0: f64,
    pub kappa: f64,
    /// Transmon frequency; informational under two-level truncation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_t: Option<f64>,
    /// Transmon charging energy; informational under two-level truncation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_c: Option<f64>,
}

/// Electro-optomagnonic platform.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElectromagnonParams {
    pub omega_m: f64,
    pub omega_ac: f64,
    pub g0: f64,
    pub phi_ac: f64,
    pub qubit_dephasing: f64,
    pub qubit_relaxation: f64,
    pub gamma_m: f64,
    pub n_th: f64,
    /// TM input mode frequency.
    pub omega_v: f64,
    /// TE output mode frequency.
    pub omega_h: f64,
    /// Laser frequency.
    pub omega_l: f64,
    pub g_om: f64,
    /// TM drive amplitude.
    pub e_v: f64,
    pub kappa_v: f64,
    pub kappa_h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_t: Option<f64>,
}

impl ElectromagnonParams {
    /// `ω_v - ω_L`.
    pub fn delta_v(&self) -> f64 {
        self.omega_v - self.omega_l
    }

    /// `ω_h - ω_L`.
    pub fn delta_h(&self) -> f64 {
        self.omega_h - self.omega_l
    }

    /// Resonant TM drive and `δ_h = ω'_m`, both to 1e-6 relative to `ω'_m`.
    pub fn check_triple_resonance(&self) -> Result<()> {
        let scale = self.omega_m.abs().max(f64::MIN_POSITIVE);
        let dv = self.delta_v();
        if dv.abs() > TRIPLE_RESONANCE_TOL * scale {
            return Err(Error::TripleResonance(format!(
                "TM drive detuning delta_v = {dv:.6e} rad/s is not zero"
            )));
        }
        let dh = self.delta_h();
        if (dh - self.omega_m).abs() > TRIPLE_RESONANCE_TOL * scale {
            return Err(Error::TripleResonance(format!(
                "delta_h = {dh:.6e} rad/s differs from the magnon frequency {:.6e} rad/s",
                self.omega_m
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "branch", rename_all = "snake_case")]
pub enum Platform {
    Mechanical(ElectromechParams),
    Magnonic(ElectromagnonParams),
}

/// Fields common to the encoding stage of both platforms.
#[derive(Copy, Clone, Debug, PartialEq)]
pub struct EncodingView {
    pub omega_boson: f64,
    pub omega_ac: f64,
    pub g0: f64,
    pub phi_ac: f64,
    pub qubit_dephasing: f64,
    pub qubit_relaxation: f64,
    pub gamma: f64,
    pub n_th: f64,
}

impl EncodingView {
    /// `g₀ φ_ac`, the effective encoding rate.
    pub fn coupling(&self) -> f64 {
        self.g0 * self.phi_ac
    }

    pub fn detuning(&self) -> f64 {
        self.omega_boson - self.omega_ac
    }

    pub fn is_resonant(&self) -> bool {
        let scale = self.omega_boson.abs().max(self.omega_ac.abs());
        self.detuning().abs() <= RESONANCE_TOL * scale
    }
}

impl Platform {
    pub fn boson_mode(&self) -> Mode {
        match self {
            Platform::Mechanical(_) => Mode::B,
            Platform::Magnonic(_) => Mode::M,
        }
    }

    pub fn optical_mode(&self) -> Mode {
        match self {
            Platform::Mechanical(_) => Mode::A,
            Platform::Magnonic(_) => Mode::Ah,
        }
    }

    pub fn encoding(&self) -> EncodingView {
        match self {
            Platform::Mechanical(p) => EncodingView {
                omega_boson: p.omega_m,
                omega_ac: p.omega_ac,
                g0: p.g0,
                phi_ac: p.phi_ac,
                qubit_dephasing: p.qubit_dephasing,
                qubit_relaxation: p.qubit_relaxation,
                gamma: p.gamma_b,
                n_th: p.n_th,
            },
            Platform::Magnonic(p) => EncodingView {
                omega_boson: p.omega_m,
                omega_ac: p.omega_ac,
                g0: p.g0,
                phi_ac: p.phi_ac,
                qubit_dephasing: p.qubit_dephasing,
                qubit_relaxation: p.qubit_relaxation,
                gamma: p.gamma_m,
                n_th: p.n_th,
            },
        }
    }

    /// Optical decay rate of the readout mode.
    pub fn readout_kappa(&self) -> f64 {
        match self {
            Platform::Mechanical(p) => p.kappa,
            Platform::Magnonic(p) => p.kappa_h,
        }
    }

    /// Rejects negative or non-finite rates and out-of-range flux amplitudes.
    /// Returns warnings for tolerated but questionable values.
    pub fn validate(&self) -> Result<Vec<Warning>> {
        let fields: Vec<(&str, f64)> = match self {
            Platform::Mechanical(p) => vec![
                ("omega_m", p.omega_m),
                ("omega_ac", p.omega_ac),
                ("g0", p.g0),
                ("phi_ac", p.phi_ac),
                ("qubit_dephasing", p.qubit_dephasing),
                ("qubit_relaxation", p.qubit_relaxation),
                ("gamma_b", p.gamma_b),
                ("n_th", p.n_th),
                ("g_om", p.g_om),
                ("e0", p.e0),
                ("kappa", p.kappa),
            ],
            Platform::Magnonic(p) => vec![
                ("omega_m", p.omega_m),
                ("omega_ac", p.omega_ac),
                ("g0", p.g0),
                ("phi_ac", p.phi_ac),
                ("qubit_dephasing", p.qubit_dephasing),
                ("qubit_relaxation", p.qubit_relaxation),
                ("gamma_m", p.gamma_m),
                ("n_th", p.n_th),
                ("omega_v", p.omega_v),
                ("omega_h", p.omega_h),
                ("omega_l", p.omega_l),
                ("g_om", p.g_om),
                ("e_v", p.e_v),
                ("kappa_v", p.kappa_v),
                ("kappa_h", p.kappa_h),
            ],
        };
        for (name, v) in &fields {
            if !v.is_finite() {
                return Err(Error::param(*name, "must be finite"));
            }
            if *v < 0.0 {
                return Err(Error::param(*name, format!("must be non-negative, got {v}")));
            }
        }
        if let Platform::Mechanical(p) = self {
            if !p.delta_c.is_finite() {
                return Err(Error::param("delta_c", "must be finite"));
            }
        }
        let mut warnings = Vec::new();
        let phi = self.encoding().phi_ac;
        if phi >= PHI_AC_MAX {
            return Err(Error::param("phi_ac", format!("must be below {PHI_AC_MAX}, got {phi}")));
        }
        if phi > PHI_AC_WARN {
            warnings.push(Warning::LargeModulation { field: "phi_ac".into(), value: phi });
        }
        Ok(warnings)
    }
}
