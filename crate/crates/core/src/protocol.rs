//! The two-stage readout: conditional displacement of the boson, flux
//! switch-off, beam-splitter transfer to the optical mode and photon counting
//! at scheduled times.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{
    coherent_state, destroy, lift, number, partial_trace, qubit_ops, recommended_dim, HilbertFactor, QuantumState,
    QubitLevel,
};
use crate::hamiltonians::{
    build_h_beam_splitter, build_h_encode, linearize_optomagnon, linearize_optomech, rwa_check, steady_drive_amplitude,
};
use crate::lindblad::{
    evolve, thermal_dissipators, ChannelRole, Dissipator, EvolutionSpec, StepControl, Trajectory, SUPPORTED_ORDERS,
};
use crate::moments::{
    analytic_photon, envelope_decay_time, evolve_moments, extrema, initial_moments_from_protocol, BranchSeries,
    MomentParams, MomentState,
};
use crate::params::{Platform, Warning};

/// Windows with efficiency above this are counted as usable.
pub const USABLE_EFFICIENCY: f64 = 0.5;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Lindblad,
    Moments,
    Analytic,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lindblad" => Ok(Engine::Lindblad),
            "moments" => Ok(Engine::Moments),
            "analytic" => Ok(Engine::Analytic),
            other => Err(Error::param("engine", format!("unknown engine `{other}`"))),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Lindblad => "lindblad",
            Engine::Moments => "moments",
            Engine::Analytic => "analytic",
        })
    }
}

/// Truncations and step control for the density-matrix engine.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LindbladOptions {
    /// Boson truncation; sized from the encoded amplitude when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boson_dim: Option<usize>,
    /// Optical truncation; sized from the handed-over amplitude when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optical_dim: Option<usize>,
    /// Fixed step in seconds; automatic when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Taylor order of each step; RK4 (order 4) when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
}

impl LindbladOptions {
    fn step(&self) -> StepControl {
        match self.dt {
            Some(dt) => StepControl::Fixed { dt },
            None => StepControl::Auto,
        }
    }

    fn order(&self) -> usize {
        self.order.unwrap_or(4)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolConfig {
    pub platform: Platform,
    /// Encoding duration.
    pub tau_encode: f64,
    /// Beam-splitter coupling; derived from the drive when absent.
    pub g_stage2: Option<f64>,
    pub schedule_count: usize,
    pub engine: Engine,
    pub lindblad: LindbladOptions,
    /// Samples of the photon-number series, spanning up to the last scheduled time.
    pub series_points: usize,
    /// Repetitions for the majority-vote error estimate.
    pub shots: usize,
}

impl ProtocolConfig {
    pub fn new(platform: Platform, tau_encode: f64) -> Self {
        Self {
            platform,
            tau_encode,
            g_stage2: None,
            schedule_count: 2,
            engine: Engine::Moments,
            lindblad: LindbladOptions::default(),
            series_points: 201,
            shots: 1,
        }
    }

    pub fn validate(&self) -> Result<Vec<Warning>> {
        let mut warnings = self.platform.validate()?;
        if !(self.tau_encode >= 0.0 && self.tau_encode.is_finite()) {
            return Err(Error::param("tau_encode", "must be finite and non-negative"));
        }
        if self.schedule_count == 0 {
            return Err(Error::param("schedule_count", "must be at least 1"));
        }
        if self.shots == 0 {
            return Err(Error::param("shots", "must be at least 1"));
        }
        if let Some(g) = self.g_stage2 {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::param("g_stage2", "must be positive"));
            }
        }
        if let Some(order) = self.lindblad.order {
            if !SUPPORTED_ORDERS.contains(&order) {
                return Err(Error::param("lindblad.order", format!("must be one of {SUPPORTED_ORDERS:?}")));
            }
        }
        if let Some(dt) = self.lindblad.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::param("lindblad.dt", "must be positive"));
            }
        }
        warnings.extend(rwa_check(&self.platform, self.stage2_coupling().ok()));
        Ok(warnings)
    }

    /// Beam-splitter coupling of stage two.
    ///
    /// The magnonic branch always passes the triple-resonance check, even
    /// when `g_stage2` is given explicitly.
    pub fn stage2_coupling(&self) -> Result<f64> {
        match &self.platform {
            Platform::Mechanical(p) => match self.g_stage2 {
                Some(g) => Ok(g),
                None => {
                    let alpha = steady_drive_amplitude(p.e0, p.kappa, p.delta_c)?;
                    Ok(linearize_optomech(p, alpha, C64::new(0.0, 0.0)).coupling)
                }
            },
            Platform::Magnonic(p) => {
                let lin = linearize_optomagnon(p)?;
                Ok(self.g_stage2.unwrap_or(lin.coupling))
            }
        }
    }

    pub fn moment_params(&self) -> Result<MomentParams> {
        let view = self.platform.encoding();
        MomentParams::new(self.stage2_coupling()?, self.platform.readout_kappa(), view.gamma, view.n_th)
    }
}

/// Summary of one density-matrix run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub dim: usize,
    pub steps: usize,
    pub dt: f64,
    /// Largest pre-correction `|trace - 1|` at a record time.
    pub max_trace_drift: f64,
    /// Largest pre-correction Hermiticity defect at a record time.
    pub max_hermiticity_defect: f64,
    pub final_trace_error: f64,
    pub final_hermiticity_defect: f64,
    pub min_eigenvalue: Option<f64>,
    pub max_purity: f64,
}

impl RunDiagnostics {
    pub fn from_trajectory(tr: &Trajectory) -> Self {
        let records = &tr.records;
        let min_record = records.iter().filter_map(|r| r.min_eigenvalue).fold(f64::INFINITY, f64::min);
        let min_eigenvalue = match tr.final_min_eigenvalue {
            Some(v) => Some(v.min(min_record)),
            None if min_record.is_finite() => Some(min_record),
            None => None,
        };
        Self {
            dim: tr.final_state.dim(),
            steps: tr.steps,
            dt: tr.dt,
            max_trace_drift: records.iter().map(|r| r.trace_drift).fold(0.0, f64::max),
            max_hermiticity_defect: records.iter().map(|r| r.hermiticity_defect).fold(0.0, f64::max),
            final_trace_error: (tr.final_state.trace().re - 1.0).abs(),
            final_hermiticity_defect: tr.final_state.hermiticity_defect(),
            min_eigenvalue,
            max_purity: tr.max_purity,
        }
    }
}

/// Encoding stage for one qubit branch.
#[derive(Clone, Debug)]
pub struct EncodeRun {
    pub level: QubitLevel,
    /// Boson amplitude at `tau_encode`.
    pub beta: C64,
    pub t: Vec<f64>,
    pub b: Vec<C64>,
    pub p_excited: Vec<f64>,
    /// Reduced boson state at `tau_encode` (density-matrix engine only).
    pub boson_state: Option<QuantumState>,
    pub diagnostics: Option<RunDiagnostics>,
}

/// Closed-form boson amplitude of `g σ_z (b + b†) + Δ b†b` starting from
/// vacuum with the qubit in `level`.
pub fn analytic_beta(coupling: f64, detuning: f64, level: QubitLevel, t: f64) -> C64 {
    let s = match level {
        QubitLevel::Ground => -1.0,
        QubitLevel::Excited => 1.0,
    };
    if detuning == 0.0 {
        return C64::new(0.0, -s * coupling * t);
    }
    // b(t) = -s g (1 - e^{-iΔt}) / Δ
    -(C64::new(1.0, 0.0) - C64::from_polar(1.0, -detuning * t)) * (s * coupling / detuning)
}

fn time_grid(t_end: f64, points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![t_end],
        n => (0..n).map(|k| t_end * k as f64 / (n - 1) as f64).collect(),
    }
}

pub fn encode_stage(config: &ProtocolConfig, level: QubitLevel) -> Result<EncodeRun> {
    let view = config.platform.encoding();
    let tau = config.tau_encode;
    let t = time_grid(tau, config.series_points.max(2));
    if config.engine != Engine::Lindblad {
        let detuning = if view.is_resonant() { 0.0 } else { view.detuning() };
        let b: Vec<C64> = t.iter().map(|&s| analytic_beta(view.coupling(), detuning, level, s)).collect();
        let p = match level {
            QubitLevel::Ground => 0.0,
            QubitLevel::Excited => 1.0,
        };
        return Ok(EncodeRun {
            level,
            beta: analytic_beta(view.coupling(), detuning, level, tau),
            p_excited: vec![p; t.len()],
            t,
            b,
            boson_state: None,
            diagnostics: None,
        });
    }

    let mode = config.platform.boson_mode();
    let dim = config.lindblad.boson_dim.unwrap_or_else(|| recommended_dim(view.coupling() * tau));
    let space = vec![HilbertFactor::qubit(), HilbertFactor::bosonic(mode, dim)?];
    let h = build_h_encode(&config.platform, &space)?;
    let b_op = lift(&destroy(mode, dim)?, &space)?;
    let q = qubit_ops();
    let mut dissipators = vec![
        Dissipator::with_role(lift(&q.sigma_z, &space)?, view.qubit_dephasing, ChannelRole::Dephasing)?,
        Dissipator::with_role(lift(&q.sigma_minus, &space)?, view.qubit_relaxation, ChannelRole::Decay)?,
    ];
    dissipators.extend(thermal_dissipators(&b_op, view.gamma, view.n_th)?);
    let spec = EvolutionSpec::new(h.operator, tau)
        .dissipators(dissipators)
        .record_times(t.clone())
        .observables(vec![b_op, lift(&q.excited_projector, &space)?])
        .step(config.lindblad.step())
        .order(config.lindblad.order());
    let rho0 = QuantumState::product(&[QuantumState::qubit(level), QuantumState::fock(mode, dim, 0)?])?;
    let tr = evolve(&rho0, &spec)?;
    let b: Vec<C64> = tr.records.iter().map(|r| r.observables[0]).collect();
    let p_excited = tr.records.iter().map(|r| r.observables[1].re).collect();
    Ok(EncodeRun {
        level,
        beta: *b.last().unwrap_or(&C64::new(0.0, 0.0)),
        t,
        b,
        p_excited,
        boson_state: Some(partial_trace(&tr.final_state, mode)?),
        diagnostics: Some(RunDiagnostics::from_trajectory(&tr)),
    })
}

/// Real optical amplitude loaded for the transfer stage, `α₀ = -|β|`.
///
/// With this sign the ground branch follows `|β|²(1 - sin 2Gt)`.
pub fn handover_alpha(beta: C64) -> C64 {
    C64::new(-beta.norm(), 0.0)
}

pub fn switch_off_and_handover(beta: C64) -> MomentState {
    initial_moments_from_protocol(beta, handover_alpha(beta))
}

/// `t_n = (2n + 1)π / 4G` for `n < count`.
pub fn measurement_schedule(g: f64, count: usize) -> Result<Vec<f64>> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::param("G", "must be positive"));
    }
    Ok((0..count).map(|n| (2 * n + 1) as f64 * PI / (4.0 * g)).collect())
}

/// Vacuum probability `e^{-n}` of a coherent state with mean `n`.
pub fn poisson_p0(n_avg: f64) -> f64 {
    (-n_avg.max(0.0)).exp()
}

/// `P(k) = e^{-n} n^k / k!` for `k = 0..=k_max`.
pub fn poisson_distribution(n_avg: f64, k_max: usize) -> Vec<f64> {
    let n = n_avg.max(0.0);
    let mut p = poisson_p0(n);
    let mut out = Vec::with_capacity(k_max + 1);
    for k in 0..=k_max {
        if k > 0 {
            p *= n / k as f64;
        }
        out.push(p);
    }
    out
}

pub fn discrimination_efficiency(n_branch1: f64, n_branch2: f64) -> f64 {
    (poisson_p0(n_branch1) - poisson_p0(n_branch2)).abs()
}

/// Error of a majority vote over `shots` independent counts, each wrong with
/// probability `(1 - efficiency)/2`. Ties are broken by a fair coin.
pub fn majority_vote_error(efficiency: f64, shots: usize) -> f64 {
    let e = ((1.0 - efficiency) / 2.0).clamp(0.0, 1.0);
    let n = shots as i32;
    let mut total = 0.0;
    let mut binom = 1.0;
    for k in 0..=shots {
        if k > 0 {
            binom *= (shots - k + 1) as f64 / k as f64;
        }
        let p = binom * e.powi(k as i32) * (1.0 - e).powi(n - k as i32);
        if 2 * k > shots {
            total += p;
        } else if 2 * k == shots {
            total += 0.5 * p;
        }
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchResult {
    pub level: QubitLevel,
    pub beta: C64,
    pub alpha0: C64,
    pub handover: MomentState,
    /// Photon number at each scheduled time.
    pub n_photon: Vec<f64>,
    /// Vacuum probability at each scheduled time.
    pub p0: Vec<f64>,
    /// Times where `n_a` is extremal, from the moment equations.
    pub extrema: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolResult {
    pub engine: Engine,
    pub stage2: MomentParams,
    pub schedule: Vec<f64>,
    pub ground: BranchResult,
    pub excited: BranchResult,
    pub efficiency: Vec<f64>,
    pub usable: Vec<bool>,
    pub usable_count: usize,
    /// Time of the last usable window.
    pub usable_span: Option<f64>,
    pub peak_efficiency: f64,
    pub majority_vote_error: Vec<f64>,
    pub envelope_decay_time: Option<f64>,
    pub series: BranchSeries,
    pub diagnostics: Vec<RunDiagnostics>,
    pub warnings: Vec<Warning>,
}

struct Transfer {
    at_schedule: Vec<MomentState>,
    series: Vec<MomentState>,
    diagnostics: Option<RunDiagnostics>,
}

fn merged_times(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

fn lookup(times: &[f64], values: &[MomentState], wanted: &[f64]) -> Vec<MomentState> {
    wanted
        .iter()
        .map(|t| values[times.binary_search_by(|x| x.total_cmp(t)).expect("time was merged")])
        .collect()
}

fn transfer(
    config: &ProtocolConfig,
    p: &MomentParams,
    enc: &EncodeRun,
    schedule: &[f64],
    grid: &[f64],
) -> Result<Transfer> {
    let alpha0 = handover_alpha(enc.beta);
    let s0 = switch_off_and_handover(enc.beta);
    match config.engine {
        Engine::Moments => Ok(Transfer {
            at_schedule: evolve_moments(&s0, p, schedule)?,
            series: evolve_moments(&s0, p, grid)?,
            diagnostics: None,
        }),
        Engine::Analytic => {
            if p.kappa > 0.0 || p.gamma > 0.0 {
                return Err(Error::Unsupported(
                    "the analytic engine is dissipation-free; use the moments engine when kappa or gamma is nonzero"
                        .into(),
                ));
            }
            let state = |t: &f64| {
                let n_a = analytic_photon(alpha0, enc.beta, p.g, *t);
                let (c, s) = ((p.g * t).cos(), (p.g * t).sin());
                let i = C64::new(0.0, 1.0);
                let a = alpha0 * c - i * enc.beta * s;
                let b = enc.beta * c - i * alpha0 * s;
                MomentState::new(n_a, s0.n_a + s0.n_b - n_a, b.conj() * a)
            };
            Ok(Transfer {
                at_schedule: schedule.iter().map(state).collect(),
                series: grid.iter().map(state).collect(),
                diagnostics: None,
            })
        }
        Engine::Lindblad => {
            let boson_state = enc.boson_state.as_ref().ok_or_else(|| {
                Error::InvalidState("density-matrix transfer needs a density-matrix encoding".into())
            })?;
            let boson = boson_state.factors()[0];
            let optical_mode = config.platform.optical_mode();
            let optical_dim = config.lindblad.optical_dim.unwrap_or_else(|| recommended_dim(alpha0.norm()));
            let optical = coherent_state(optical_mode, optical_dim, alpha0)?;
            let rho0 = QuantumState::product(&[optical, boson_state.clone()])?;
            let space = rho0.factors().to_vec();
            let a = lift(&destroy(optical_mode, optical_dim)?, &space)?;
            let b = lift(&destroy(boson.label(), boson.dim())?, &space)?;
            let mut dissipators = vec![Dissipator::with_role(a.clone(), p.kappa, ChannelRole::Decay)?];
            dissipators.extend(thermal_dissipators(&b, p.gamma, p.n_th)?);
            let times = merged_times(schedule, grid);
            let t_final = *times.last().unwrap_or(&0.0);
            let spec = EvolutionSpec::new(build_h_beam_splitter(p.g, &space)?, t_final)
                .dissipators(dissipators)
                .record_times(times.clone())
                .observables(vec![
                    lift(&number(optical_mode, optical_dim)?, &space)?,
                    lift(&number(boson.label(), boson.dim())?, &space)?,
                    &b.dagger() * &a,
                ])
                .step(config.lindblad.step())
                .order(config.lindblad.order());
            let tr = evolve(&rho0, &spec)?;
            let values: Vec<MomentState> = tr
                .records
                .iter()
                .map(|r| MomentState::new(r.observables[0].re, r.observables[1].re, r.observables[2]))
                .collect();
            Ok(Transfer {
                at_schedule: lookup(&times, &values, schedule),
                series: lookup(&times, &values, grid),
                diagnostics: Some(RunDiagnostics::from_trajectory(&tr)),
            })
        }
    }
}

/// Runs both qubit branches end to end.
pub fn run_protocol(config: &ProtocolConfig) -> Result<ProtocolResult> {
    let warnings = config.validate()?;
    let p = config.moment_params()?;
    let schedule = measurement_schedule(p.g, config.schedule_count)?;
    let t_end = *schedule.last().expect("schedule_count >= 1");
    let grid = time_grid(t_end, config.series_points);

    let mut diagnostics = Vec::new();
    let mut branches = Vec::with_capacity(2);
    let mut series = Vec::with_capacity(2);
    for level in [QubitLevel::Ground, QubitLevel::Excited] {
        let enc = encode_stage(config, level)?;
        diagnostics.extend(enc.diagnostics.clone());
        let out = transfer(config, &p, &enc, &schedule, &grid)?;
        diagnostics.extend(out.diagnostics);
        let handover = switch_off_and_handover(enc.beta);
        let n_photon: Vec<f64> = out.at_schedule.iter().map(|m| m.n_a).collect();
        let na = |t: f64| evolve_moments(&handover, &p, &[t]).map(|v| v[0].n_a).unwrap_or(f64::NAN);
        branches.push(BranchResult {
            level,
            beta: enc.beta,
            alpha0: handover_alpha(enc.beta),
            handover,
            p0: n_photon.iter().map(|&n| poisson_p0(n)).collect(),
            n_photon,
            extrema: extrema(na, 0.0, t_end, 400 * config.schedule_count),
        });
        series.push(out.series);
    }
    let excited = branches.pop().expect("two branches");
    let ground = branches.pop().expect("two branches");
    let efficiency: Vec<f64> =
        ground.n_photon.iter().zip(&excited.n_photon).map(|(&g, &e)| discrimination_efficiency(g, e)).collect();
    let usable: Vec<bool> = efficiency.iter().map(|&e| e > USABLE_EFFICIENCY).collect();
    let usable_span = schedule.iter().zip(&usable).filter(|(_, &u)| u).map(|(&t, _)| t).last();
    let excited_series = series.pop().expect("two branches");
    let ground_series = series.pop().expect("two branches");
    Ok(ProtocolResult {
        engine: config.engine,
        stage2: p,
        usable_count: usable.iter().filter(|&&u| u).count(),
        usable_span,
        peak_efficiency: efficiency.iter().copied().fold(0.0, f64::max),
        majority_vote_error: efficiency.iter().map(|&e| majority_vote_error(e, config.shots)).collect(),
        envelope_decay_time: envelope_decay_time(&p),
        series: BranchSeries { t: grid, ground: ground_series, excited: excited_series },
        schedule,
        ground,
        excited,
        efficiency,
        usable,
        diagnostics,
        warnings,
    })
}
