#![allow(dead_code)]

use transduction::params::{angular, ElectromagnonParams, ElectromechParams, Platform};
use transduction::protocol::{Engine, ProtocolConfig};

/// Encoding rate `g₀φ_ac = 2π·1 MHz`.
pub fn encode_rate() -> f64 {
    angular(1e6)
}

/// Encoding time giving `|β| = 3`.
pub fn tau3() -> f64 {
    3.0 / encode_rate()
}

pub fn mech_ideal() -> ElectromechParams {
    ElectromechParams {
        omega_m: angular(1e9),
        omega_ac: angular(1e9),
        g0: angular(1e7),
        phi_ac: 0.1,
        qubit_dephasing: 0.0,
        qubit_relaxation: 0.0,
        gamma_b: 0.0,
        n_th: 0.0,
        delta_c: 0.0,
        g_om: 0.0,
        e0: 0.0,
        kappa: 0.0,
        omega_t: None,
        e_c: None,
    }
}

/// Dissipative encoding environment: `γ_b/2π = 1 Hz`, `n_th = 400`,
/// qubit dephasing `Γ/2π = 0.1 GHz`.
pub fn mech_noisy() -> ElectromechParams {
    ElectromechParams { gamma_b: angular(1.0), n_th: 400.0, qubit_dephasing: angular(1e8), ..mech_ideal() }
}

/// Stage-two readout with the given optical decay and beam-splitter rate.
pub fn readout(kappa: f64, g: f64, engine: Engine) -> ProtocolConfig {
    let p = ElectromechParams { kappa, gamma_b: angular(1.0), n_th: 400.0, ..mech_ideal() };
    let mut c = ProtocolConfig::new(Platform::Mechanical(p), tau3());
    c.g_stage2 = Some(g);
    c.engine = engine;
    c
}

/// Magnonic platform whose driven coupling is `0.5 κ_h` with
/// `κ_h/2π = 0.01 GHz`, `γ_m/2π = 0.1 MHz`, `n'_th = 0.5`.
pub fn magnon_fig3() -> ElectromagnonParams {
    let omega_m = angular(1e10);
    let omega_l = angular(2e14);
    let kappa_v = angular(1e7);
    let g_om = angular(10.0);
    // |α_v| = 2E/κ_v; choose it so that g_om |α_v| = 0.5 κ_h
    let kappa_h = angular(1e7);
    let alpha = 0.5 * kappa_h / g_om;
    ElectromagnonParams {
        omega_m,
        omega_ac: omega_m,
        g0: angular(1e7),
        phi_ac: 0.1,
        qubit_dephasing: 0.0,
        qubit_relaxation: 0.0,
        gamma_m: angular(1e5),
        n_th: 0.5,
        omega_v: omega_l,
        omega_h: omega_l + omega_m,
        omega_l,
        g_om,
        e_v: alpha * kappa_v / 2.0,
        kappa_v,
        kappa_h,
        omega_t: None,
    }
}
