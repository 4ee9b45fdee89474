//! One function per experiment kind. Each writes its data files through
//! [`Output`] and returns the warnings it collected.

use std::io::Write;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::Serialize;
use transduction::fock::{coherent_state, recommended_dim, QubitLevel};
use transduction::lindblad::fmt_f64;
use transduction::moments::MomentState;
use transduction::params::ordinary;
use transduction::protocol::{
    encode_stage, run_protocol, EncodeRun, Engine, ProtocolConfig, ProtocolResult, RunDiagnostics,
};
use transduction::wigner::{wigner, wigner_normalization, PhaseSpaceGrid};

use crate::config::{Experiment, ExperimentConfig, SweepParameter};
use crate::{CliError, Output};

const LEVELS: [QubitLevel; 2] = [QubitLevel::Ground, QubitLevel::Excited];

pub fn dispatch(config: &ExperimentConfig, out: &mut Output) -> Result<Vec<String>, CliError> {
    let pc = config.protocol_config()?;
    let mut warnings: Vec<String> = pc.validate()?.iter().map(ToString::to_string).collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    match config.experiment {
        Experiment::Encode => encode(config, &pc, out)?,
        Experiment::Wigner => wigner_maps(config, &pc, out)?,
        Experiment::Transfer => transfer(config, &pc, out, &mut warnings)?,
        Experiment::Protocol => protocol(config, &pc, out, &mut warnings)?,
        Experiment::Sweep => sweep(config, out)?,
    }
    Ok(warnings)
}

fn level_name(level: QubitLevel) -> &'static str {
    match level {
        QubitLevel::Ground => "ground",
        QubitLevel::Excited => "excited",
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

#[derive(Serialize)]
struct EncodeSummary<'a> {
    config: &'a ExperimentConfig,
    engine: Engine,
    tau_encode_s: f64,
    ground: EncodeBranch,
    excited: EncodeBranch,
}

#[derive(Serialize)]
struct EncodeBranch {
    beta: C64,
    final_p_excited: f64,
    diagnostics: Option<RunDiagnostics>,
}

impl EncodeBranch {
    fn from_run(r: &EncodeRun) -> Self {
        Self { beta: r.beta, final_p_excited: *r.p_excited.last().unwrap_or(&f64::NAN), diagnostics: r.diagnostics.clone() }
    }
}

fn encode(config: &ExperimentConfig, pc: &ProtocolConfig, out: &mut Output) -> Result<(), CliError> {
    let runs: Vec<EncodeRun> = LEVELS.iter().map(|&l| encode_stage(pc, l)).collect::<Result<_, _>>()?;
    out.write_with("encode.csv", |w| {
        writeln!(w, "level,t,re_b,im_b,p_excited")?;
        for r in &runs {
            for ((t, b), p) in r.t.iter().zip(&r.b).zip(&r.p_excited) {
                let name = level_name(r.level);
                writeln!(w, "{name},{},{},{},{}", fmt_f64(*t), fmt_f64(b.re), fmt_f64(b.im), fmt_f64(*p))?;
            }
        }
        Ok(())
    })?;
    out.write_json(
        "encode.json",
        &EncodeSummary {
            config,
            engine: pc.engine,
            tau_encode_s: pc.tau_encode,
            ground: EncodeBranch::from_run(&runs[0]),
            excited: EncodeBranch::from_run(&runs[1]),
        },
    )
}

#[derive(Serialize)]
struct WignerSummary<'a> {
    config: &'a ExperimentConfig,
    ground: WignerBranch,
    excited: WignerBranch,
}

#[derive(Serialize)]
struct WignerBranch {
    beta: C64,
    /// `(√2 Re β, √2 Im β)`.
    expected_peak: (f64, f64),
    peak: (f64, f64),
    w_max: f64,
    w_min: f64,
    normalization: f64,
    max_edge: f64,
    cell: (f64, f64),
}

fn wigner_maps(config: &ExperimentConfig, pc: &ProtocolConfig, out: &mut Output) -> Result<(), CliError> {
    let mode = pc.platform.boson_mode();
    let mut branches = Vec::new();
    for level in LEVELS {
        let run = encode_stage(pc, level)?;
        let state = match run.boson_state {
            Some(s) => s,
            None => {
                let dim = pc.lindblad.boson_dim.unwrap_or_else(|| recommended_dim(run.beta.norm()));
                coherent_state(mode, dim, run.beta)?
            }
        };
        let n = config.wigner.points;
        let grid = match config.wigner.half_width {
            Some(h) => PhaseSpaceGrid::new(-h, h, -h, h, n, n)?,
            None => PhaseSpaceGrid::around(run.beta.norm(), n)?,
        };
        let map = wigner(&state, &grid)?;
        let norm = wigner_normalization(&map);
        out.write_with(&format!("wigner_{}.csv", level_name(level)), |w| map.write_csv(w))?;
        let s2 = std::f64::consts::SQRT_2;
        branches.push(WignerBranch {
            beta: run.beta,
            expected_peak: (s2 * run.beta.re, s2 * run.beta.im),
            peak: map.argmax(),
            w_max: map.max(),
            w_min: map.min(),
            normalization: norm.integral,
            max_edge: norm.max_edge,
            cell: (grid.dx(), grid.dp()),
        });
    }
    let excited = branches.pop().expect("two branches");
    let ground = branches.pop().expect("two branches");
    out.write_json("wigner.json", &WignerSummary { config, ground, excited })
}

#[derive(Serialize)]
struct TransferSummary<'a> {
    config: &'a ExperimentConfig,
    engine: Engine,
    g_stage2_over_2pi: f64,
    kappa_over_2pi: f64,
    schedule: &'a [f64],
    ground: TransferBranch,
    excited: TransferBranch,
    envelope_decay_time: Option<f64>,
    diagnostics: &'a [RunDiagnostics],
}

#[derive(Serialize)]
struct TransferBranch {
    beta: C64,
    alpha0: C64,
    handover: MomentState,
    n_photon: Vec<f64>,
}

fn transfer_branch(b: &transduction::protocol::BranchResult) -> TransferBranch {
    TransferBranch { beta: b.beta, alpha0: b.alpha0, handover: b.handover, n_photon: b.n_photon.clone() }
}

fn run_logged(pc: &ProtocolConfig, warnings: &mut Vec<String>) -> Result<ProtocolResult, CliError> {
    let r = run_protocol(pc)?;
    for w in &r.warnings {
        let text = w.to_string();
        if !warnings.contains(&text) {
            log::warn!("{text}");
            warnings.push(text);
        }
    }
    Ok(r)
}

fn transfer(
    config: &ExperimentConfig,
    pc: &ProtocolConfig,
    out: &mut Output,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let r = run_logged(pc, warnings)?;
    out.write_with("series.csv", |w| r.series.write_csv(w))?;
    out.write_json(
        "transfer.json",
        &TransferSummary {
            config,
            engine: r.engine,
            g_stage2_over_2pi: ordinary(r.stage2.g),
            kappa_over_2pi: ordinary(r.stage2.kappa),
            schedule: &r.schedule,
            ground: transfer_branch(&r.ground),
            excited: transfer_branch(&r.excited),
            envelope_decay_time: r.envelope_decay_time,
            diagnostics: &r.diagnostics,
        },
    )
}

#[derive(Serialize)]
struct ProtocolDocument<'a> {
    config: &'a ExperimentConfig,
    result: &'a ProtocolResult,
}

fn protocol(
    config: &ExperimentConfig,
    pc: &ProtocolConfig,
    out: &mut Output,
    warnings: &mut Vec<String>,
) -> Result<(), CliError> {
    let r = run_logged(pc, warnings)?;
    log::info!(
        "{} usable window(s) of {}, peak efficiency {:.4}",
        r.usable_count,
        r.schedule.len(),
        r.peak_efficiency
    );
    out.write_with("windows.csv", |w| {
        writeln!(w, "n,t,n_ground,n_excited,p0_ground,p0_excited,efficiency,usable,majority_vote_error")?;
        for k in 0..r.schedule.len() {
            writeln!(
                w,
                "{k},{},{},{},{},{},{},{},{}",
                fmt_f64(r.schedule[k]),
                fmt_f64(r.ground.n_photon[k]),
                fmt_f64(r.excited.n_photon[k]),
                fmt_f64(r.ground.p0[k]),
                fmt_f64(r.excited.p0[k]),
                fmt_f64(r.efficiency[k]),
                r.usable[k],
                fmt_f64(r.majority_vote_error[k]),
            )?;
        }
        Ok(())
    })?;
    out.write_with("series.csv", |w| r.series.write_csv(w))?;
    out.write_json("result.json", &ProtocolDocument { config, result: &r })
}

/// Sets one swept value on a copy of the configuration.
fn apply(config: &mut ExperimentConfig, parameter: SweepParameter, value: f64) {
    let (mech, mag) = (&mut config.mechanical, &mut config.magnonic);
    match parameter {
        SweepParameter::KappaOver2pi => {
            if let Some(m) = mech {
                m.kappa_over_2pi = value;
            }
            if let Some(m) = mag {
                m.kappa_h_over_2pi = value;
            }
        }
        SweepParameter::GammaOver2pi => {
            if let Some(m) = mech {
                m.gamma_b_over_2pi = value;
            }
            if let Some(m) = mag {
                m.gamma_m_over_2pi = value;
            }
        }
        SweepParameter::NTh => {
            if let Some(m) = mech {
                m.n_th = value;
            }
            if let Some(m) = mag {
                m.n_th = value;
            }
        }
        SweepParameter::GStage2Over2pi => config.protocol.g_stage2_over_2pi = Some(value),
        SweepParameter::EncodeAmplitude => {
            config.protocol.encode_amplitude = Some(value);
            config.protocol.tau_encode_s = None;
        }
        SweepParameter::KappaOverG => {
            let kappa = match (&config.mechanical, &config.magnonic) {
                (Some(m), _) => m.kappa_over_2pi,
                (_, Some(m)) => m.kappa_h_over_2pi,
                _ => 0.0,
            };
            config.protocol.g_stage2_over_2pi = Some(kappa / value);
        }
    }
}

struct SweepRow {
    values: Vec<f64>,
    g_over_2pi: f64,
    kappa_over_2pi: f64,
    result: ProtocolResult,
}

fn sweep(config: &ExperimentConfig, out: &mut Output) -> Result<(), CliError> {
    let grid = config.grid.as_ref().ok_or_else(|| CliError::config("grid", "missing block for a sweep"))?;
    let axes = config.sweep_axes(grid)?;
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for (_, values) in &axes {
        points = points.iter().flat_map(|p| values.iter().map(move |v| [p.as_slice(), &[*v]].concat())).collect();
    }
    log::info!("sweeping {} point(s)", points.len());
    let rows: Vec<SweepRow> = points
        .par_iter()
        .enumerate()
        .map(|(k, values)| {
            let mut c = config.clone();
            // The coupling ratio is resolved after every other axis.
            let mut order: Vec<usize> = (0..axes.len()).collect();
            order.sort_by_key(|&i| axes[i].0 == SweepParameter::KappaOverG);
            for i in order {
                apply(&mut c, axes[i].0, values[i]);
            }
            let pc = c.protocol_config()?;
            pc.validate()?;
            let result = run_protocol(&pc).map_err(|e| {
                let err = CliError::from(e);
                match err {
                    CliError::Config(m) => CliError::Config(format!("sweep point {k}: {m}")),
                    CliError::Numerical(m) => CliError::Numerical(format!("sweep point {k}: {m}")),
                    other => other,
                }
            })?;
            Ok(SweepRow {
                values: values.clone(),
                g_over_2pi: ordinary(result.stage2.g),
                kappa_over_2pi: ordinary(result.stage2.kappa),
                result,
            })
        })
        .collect::<Result<_, CliError>>()?;
    out.write_with("sweep.csv", |w| {
        let names: Vec<&str> = axes.iter().map(|(p, _)| p.name()).collect();
        writeln!(
            w,
            "{},g_stage2_over_2pi,kappa_readout_over_2pi,usable_count,peak_efficiency,usable_span_s,envelope_decay_time_s",
            names.join(",")
        )?;
        for row in &rows {
            let vals: Vec<String> = row.values.iter().map(|v| fmt_f64(*v)).collect();
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                vals.join(","),
                fmt_f64(row.g_over_2pi),
                fmt_f64(row.kappa_over_2pi),
                row.result.usable_count,
                fmt_f64(row.result.peak_efficiency),
                opt(row.result.usable_span),
                opt(row.result.envelope_decay_time),
            )?;
        }
        Ok(())
    })
}
