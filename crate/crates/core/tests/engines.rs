//! The three transfer engines and the two encoding paths checked against each other.

mod common;

use std::f64::consts::{PI, SQRT_2};

use num_complex::Complex64 as C64;
use transduction::fock::QubitLevel;
use transduction::params::{angular, ElectromagnonParams, Platform};
use transduction::Error;
use transduction::protocol::{analytic_beta, encode_stage, run_protocol, Engine, LindbladOptions, ProtocolConfig};
use transduction::wigner::{wigner, PhaseSpaceGrid};

use common::*;

fn photon_numbers(r: &transduction::protocol::ProtocolResult) -> Vec<f64> {
    let mut v: Vec<f64> = r.ground.n_photon.iter().chain(&r.excited.n_photon).copied().collect();
    v.extend(r.series.ground.iter().chain(&r.series.excited).map(|s| s.n_a));
    v
}

/// Worst disagreement relative to the largest photon number in play.
fn relative_gap(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn density_matrix_and_moments_agree_under_loss() {
    let g = angular(5e6);
    // A smaller encoded amplitude keeps the joint space at 20 x 20.
    let mut moments = readout(2.0 * g, g, Engine::Moments);
    moments.tau_encode = 1.5 / encode_rate();
    moments.series_points = 41;
    moments.schedule_count = 3;
    let mut lindblad = moments.clone();
    lindblad.engine = Engine::Lindblad;
    lindblad.lindblad =
        LindbladOptions { boson_dim: Some(20), optical_dim: Some(20), dt: Some(2.0 * PI / g / 400.0), order: Some(12) };

    let m = run_protocol(&moments).unwrap();
    let l = run_protocol(&lindblad).unwrap();
    assert_eq!(m.schedule, l.schedule);
    let gap = relative_gap(&photon_numbers(&m), &photon_numbers(&l));
    assert!(gap < 1e-3, "relative gap {gap}");
    assert_eq!(m.usable, l.usable);
    for d in &l.diagnostics {
        assert!(d.max_trace_drift < 1e-9);
        assert!(d.final_hermiticity_defect < 1e-10);
        assert!(d.min_eigenvalue.unwrap() > -1e-8);
    }
}

#[test]
fn closed_form_engine_matches_moments_without_loss() {
    let g = angular(5e6);
    let mut a = readout(0.0, g, Engine::Analytic);
    a.platform = Platform::Mechanical(mech_ideal());
    a.schedule_count = 6;
    let mut m = a.clone();
    m.engine = Engine::Moments;
    let (a, m) = (run_protocol(&a).unwrap(), run_protocol(&m).unwrap());
    let gap = relative_gap(&photon_numbers(&a), &photon_numbers(&m));
    assert!(gap < 1e-9, "relative gap {gap}");
    for e in &a.efficiency {
        assert!((e - (1.0 - (-18.0f64).exp())).abs() < 1e-9);
    }
}

#[test]
fn magnonic_encoding_writes_opposite_amplitudes() {
    let quiet = ElectromagnonParams { gamma_m: 0.0, ..magnon_fig3() };
    let mut c = ProtocolConfig::new(Platform::Magnonic(quiet), tau3());
    c.engine = Engine::Lindblad;
    c.lindblad.boson_dim = Some(40);
    c.series_points = 11;
    for (level, sign) in [(QubitLevel::Ground, 1.0), (QubitLevel::Excited, -1.0)] {
        let run = encode_stage(&c, level).unwrap();
        assert!((run.beta - C64::new(0.0, 3.0 * sign)).norm() < 0.01, "{level}: {}", run.beta);
        for (t, b) in run.t.iter().zip(&run.b) {
            assert!((b.im - sign * encode_rate() * t).abs() < 0.01, "t={t}: {b}");
        }
        let boson = run.boson_state.unwrap();
        let grid = PhaseSpaceGrid::around(3.0, 81).unwrap();
        let (x, p) = wigner(&boson, &grid).unwrap().argmax();
        assert!(x.abs() <= grid.dx());
        assert!((p - sign * 3.0 * SQRT_2).abs() <= grid.dp());
    }
}

#[test]
fn magnon_readout_damping_is_too_hot_for_density_matrix_encoding() {
    // γ_m n'_th τ = 0.15 quanta exceeds the influx guard.
    let mut c = ProtocolConfig::new(Platform::Magnonic(magnon_fig3()), tau3());
    c.engine = Engine::Lindblad;
    c.lindblad.boson_dim = Some(40);
    assert!(matches!(encode_stage(&c, QubitLevel::Ground), Err(Error::ThermalInflux { .. })));
    c.engine = Engine::Moments;
    assert!((encode_stage(&c, QubitLevel::Ground).unwrap().beta - C64::new(0.0, 3.0)).norm() < 1e-12);
}

#[test]
fn detuned_encoding_follows_the_closed_form() {
    let mut p = mech_ideal();
    p.omega_m = p.omega_ac + angular(2e5);
    let mut c = ProtocolConfig::new(Platform::Mechanical(p), tau3());
    c.engine = Engine::Lindblad;
    c.lindblad.boson_dim = Some(30);
    c.series_points = 21;
    let detuning = angular(2e5);
    for level in [QubitLevel::Ground, QubitLevel::Excited] {
        let run = encode_stage(&c, level).unwrap();
        for (t, b) in run.t.iter().zip(&run.b) {
            let want = analytic_beta(encode_rate(), detuning, level, *t);
            assert!((b - want).norm() < 1e-3, "{level} t={t}: {b} vs {want}");
        }
    }
}
