//! Experiment configuration files.
//!
//! Frequencies and rates are written as ordinary frequencies (`*_over_2pi`,
//! in Hz) and multiplied by 2π once, here. Unknown keys are rejected.

use std::fmt;

use serde::{Deserialize, Serialize};
use transduction::params::{angular, ElectromagnonParams, ElectromechParams, Platform};
use transduction::protocol::{Engine, LindbladOptions, ProtocolConfig};

use crate::CliError;

/// Largest number of points a sweep may request.
pub const MAX_SWEEP_POINTS: usize = 10_000;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Encode,
    Transfer,
    Wigner,
    Protocol,
    Sweep,
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Experiment::Encode => "encode",
            Experiment::Transfer => "transfer",
            Experiment::Wigner => "wigner",
            Experiment::Protocol => "protocol",
            Experiment::Sweep => "sweep",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Mechanical,
    Magnonic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub branch: Branch,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    /// Reserved. Every computation is deterministic.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<Engine>,
    #[serde(default)]
    pub protocol: ProtocolBlock,
    #[serde(default)]
    pub lindblad: LindbladBlock,
    #[serde(default)]
    pub wigner: WignerBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mechanical: Option<MechanicalBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnonic: Option<MagnonicBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolBlock {
    /// Encoding time in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_encode_s: Option<f64>,
    /// Target `|β|`; sets the encoding time to `|β| / (g₀ φ_ac)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encode_amplitude: Option<f64>,
    /// Beam-splitter coupling; derived from the optical drive when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_stage2_over_2pi: Option<f64>,
    #[serde(default = "default_schedule_count")]
    pub schedule_count: usize,
    #[serde(default = "default_series_points")]
    pub series_points: usize,
    #[serde(default = "default_shots")]
    pub shots: usize,
}

fn default_schedule_count() -> usize {
    2
}

fn default_series_points() -> usize {
    201
}

fn default_shots() -> usize {
    1
}

impl Default for ProtocolBlock {
    fn default() -> Self {
        Self {
            tau_encode_s: None,
            encode_amplitude: None,
            g_stage2_over_2pi: None,
            schedule_count: default_schedule_count(),
            series_points: default_series_points(),
            shots: default_shots(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LindbladBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boson_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optical_dim: Option<usize>,
    /// Fixed step in seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_s: Option<f64>,
    /// Taylor order per step (4, 8, 12 or 16).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WignerBlock {
    /// Grid points per axis.
    #[serde(default = "default_wigner_points")]
    pub points: usize,
    /// Half-width of the square window; `(|β| + 4)√2` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_width: Option<f64>,
}

fn default_wigner_points() -> usize {
    201
}

impl Default for WignerBlock {
    fn default() -> Self {
        Self { points: default_wigner_points(), half_width: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MechanicalBlock {
    pub omega_m_over_2pi: f64,
    /// Flux modulation frequency; resonant with the phonon when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_ac_over_2pi: Option<f64>,
    pub g0_over_2pi: f64,
    pub phi_ac: f64,
    #[serde(default)]
    pub qubit_dephasing_over_2pi: f64,
    #[serde(default)]
    pub qubit_relaxation_over_2pi: f64,
    #[serde(default)]
    pub gamma_b_over_2pi: f64,
    #[serde(default)]
    pub n_th: f64,
    #[serde(default)]
    pub delta_c_over_2pi: f64,
    #[serde(default)]
    pub g_om_over_2pi: f64,
    #[serde(default)]
    pub e0_over_2pi: f64,
    #[serde(default)]
    pub kappa_over_2pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_t_over_2pi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e_c_over_2pi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnonicBlock {
    pub omega_m_over_2pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_ac_over_2pi: Option<f64>,
    pub g0_over_2pi: f64,
    pub phi_ac: f64,
    #[serde(default)]
    pub qubit_dephasing_over_2pi: f64,
    #[serde(default)]
    pub qubit_relaxation_over_2pi: f64,
    #[serde(default)]
    pub gamma_m_over_2pi: f64,
    #[serde(default)]
    pub n_th: f64,
    /// Laser frequency.
    pub omega_l_over_2pi: f64,
    /// TM mode; resonant with the laser when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_v_over_2pi: Option<f64>,
    /// TE mode; laser plus magnon frequency when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_h_over_2pi: Option<f64>,
    #[serde(default)]
    pub g_om_over_2pi: f64,
    #[serde(default)]
    pub e_v_over_2pi: f64,
    #[serde(default)]
    pub kappa_v_over_2pi: f64,
    #[serde(default)]
    pub kappa_h_over_2pi: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_t_over_2pi: Option<f64>,
}

/// Parameters a sweep axis may vary.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    /// Readout optical decay (`kappa` or `kappa_h`).
    #[serde(rename = "kappa_over_2pi")]
    KappaOver2pi,
    #[serde(rename = "g_stage2_over_2pi")]
    GStage2Over2pi,
    /// Sets the beam-splitter coupling to `κ / value`, after other axes apply.
    KappaOverG,
    /// Boson decay (`gamma_b` or `gamma_m`).
    #[serde(rename = "gamma_over_2pi")]
    GammaOver2pi,
    NTh,
    EncodeAmplitude,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            SweepParameter::KappaOver2pi => "kappa_over_2pi",
            SweepParameter::GStage2Over2pi => "g_stage2_over_2pi",
            SweepParameter::KappaOverG => "kappa_over_g",
            SweepParameter::GammaOver2pi => "gamma_over_2pi",
            SweepParameter::NTh => "n_th",
            SweepParameter::EncodeAmplitude => "encode_amplitude",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub parameter: SweepParameter,
    /// Explicit values; alternatively `start`, `stop` and `count`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    /// Geometric spacing between `start` and `stop`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub log: bool,
}

impl Axis {
    pub fn points(&self, path: &str) -> Result<Vec<f64>, CliError> {
        let range = (self.start, self.stop, self.count);
        let points = match (&self.values, range) {
            (Some(v), (None, None, None)) => v.clone(),
            (None, (Some(a), Some(b), Some(n))) => {
                if n == 0 {
                    return Err(CliError::config(format!("{path}.count"), "must be at least 1"));
                }
                if self.log && !(a > 0.0 && b > 0.0) {
                    return Err(CliError::config(path, "log spacing needs positive start and stop"));
                }
                (0..n)
                    .map(|k| {
                        let f = if n == 1 { 0.0 } else { k as f64 / (n - 1) as f64 };
                        if self.log {
                            a * (b / a).powf(f)
                        } else {
                            a + (b - a) * f
                        }
                    })
                    .collect()
            }
            _ => return Err(CliError::config(path, "give either `values` or all of `start`, `stop`, `count`")),
        };
        if points.is_empty() {
            return Err(CliError::config(format!("{path}.values"), "must not be empty"));
        }
        if let Some(x) = points.iter().find(|x| !x.is_finite()) {
            return Err(CliError::config(format!("{path}.values"), format!("non-finite value {x}")));
        }
        Ok(points)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    pub axes: Vec<Axis>,
}

impl ExperimentConfig {
    /// Fills values that default to other fields, so the echo is complete.
    fn fill_defaults(&mut self) {
        if self.engine.is_none() {
            self.engine = Some(Engine::Moments);
            log::info!("default engine = moments");
        }
        if let Some(m) = &mut self.mechanical {
            if m.omega_ac_over_2pi.is_none() {
                m.omega_ac_over_2pi = Some(m.omega_m_over_2pi);
                log::info!("default mechanical.omega_ac_over_2pi = omega_m_over_2pi");
            }
        }
        if let Some(m) = &mut self.magnonic {
            if m.omega_ac_over_2pi.is_none() {
                m.omega_ac_over_2pi = Some(m.omega_m_over_2pi);
                log::info!("default magnonic.omega_ac_over_2pi = omega_m_over_2pi");
            }
            if m.omega_v_over_2pi.is_none() {
                m.omega_v_over_2pi = Some(m.omega_l_over_2pi);
                log::info!("default magnonic.omega_v_over_2pi = omega_l_over_2pi");
            }
            if m.omega_h_over_2pi.is_none() {
                m.omega_h_over_2pi = Some(m.omega_l_over_2pi + m.omega_m_over_2pi);
                log::info!("default magnonic.omega_h_over_2pi = omega_l_over_2pi + omega_m_over_2pi");
            }
        }
    }

    /// Checks presence and sign of every field the experiment needs.
    pub fn validate(&self) -> Result<(), CliError> {
        match (self.branch, &self.mechanical, &self.magnonic) {
            (Branch::Mechanical, None, _) => return Err(CliError::config("mechanical", "missing parameter block")),
            (Branch::Magnonic, _, None) => return Err(CliError::config("magnonic", "missing parameter block")),
            (Branch::Mechanical, Some(_), Some(_)) => {
                return Err(CliError::config("magnonic", "block given for the mechanical branch"))
            }
            (Branch::Magnonic, Some(_), Some(_)) => {
                return Err(CliError::config("mechanical", "block given for the magnonic branch"))
            }
            _ => {}
        }
        for (path, value) in self.nonnegative_fields() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(CliError::config(path, format!("must be finite and non-negative, got {value}")));
            }
        }
        let p = &self.protocol;
        match (p.tau_encode_s, p.encode_amplitude) {
            (Some(_), Some(_)) => {
                return Err(CliError::config("protocol.encode_amplitude", "give either this or tau_encode_s"))
            }
            (None, None) => return Err(CliError::config("protocol.tau_encode_s", "missing field")),
            _ => {}
        }
        if p.schedule_count == 0 {
            return Err(CliError::config("protocol.schedule_count", "must be at least 1"));
        }
        if p.shots == 0 {
            return Err(CliError::config("protocol.shots", "must be at least 1"));
        }
        if p.encode_amplitude.is_some() && self.encoding_rate() == 0.0 {
            return Err(CliError::config("protocol.encode_amplitude", "needs a nonzero g0_over_2pi * phi_ac"));
        }
        if self.wigner.points < 2 {
            return Err(CliError::config("wigner.points", "must be at least 2"));
        }
        if let Some(dt) = self.lindblad.dt_s {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(CliError::config("lindblad.dt_s", "must be positive"));
            }
        }
        match (self.experiment, &self.grid) {
            (Experiment::Sweep, None) => return Err(CliError::config("grid", "missing block for a sweep")),
            (Experiment::Sweep, Some(g)) => {
                self.sweep_axes(g)?;
            }
            (_, Some(_)) => return Err(CliError::config("grid", "only valid for experiment = \"sweep\"")),
            _ => {}
        }
        Ok(())
    }

    fn nonnegative_fields(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        let mut push = |prefix: &str, name: &str, v: f64| out.push((format!("{prefix}.{name}"), v));
        if let Some(m) = &self.mechanical {
            let p = "mechanical";
            push(p, "omega_m_over_2pi", m.omega_m_over_2pi);
            push(p, "g0_over_2pi", m.g0_over_2pi);
            push(p, "phi_ac", m.phi_ac);
            push(p, "qubit_dephasing_over_2pi", m.qubit_dephasing_over_2pi);
            push(p, "qubit_relaxation_over_2pi", m.qubit_relaxation_over_2pi);
            push(p, "gamma_b_over_2pi", m.gamma_b_over_2pi);
            push(p, "n_th", m.n_th);
            push(p, "g_om_over_2pi", m.g_om_over_2pi);
            push(p, "e0_over_2pi", m.e0_over_2pi);
            push(p, "kappa_over_2pi", m.kappa_over_2pi);
            if let Some(w) = m.omega_ac_over_2pi {
                push(p, "omega_ac_over_2pi", w);
            }
        }
        if let Some(m) = &self.magnonic {
            let p = "magnonic";
            push(p, "omega_m_over_2pi", m.omega_m_over_2pi);
            push(p, "g0_over_2pi", m.g0_over_2pi);
            push(p, "phi_ac", m.phi_ac);
            push(p, "qubit_dephasing_over_2pi", m.qubit_dephasing_over_2pi);
            push(p, "qubit_relaxation_over_2pi", m.qubit_relaxation_over_2pi);
            push(p, "gamma_m_over_2pi", m.gamma_m_over_2pi);
            push(p, "n_th", m.n_th);
            push(p, "omega_l_over_2pi", m.omega_l_over_2pi);
            push(p, "g_om_over_2pi", m.g_om_over_2pi);
            push(p, "e_v_over_2pi", m.e_v_over_2pi);
            push(p, "kappa_v_over_2pi", m.kappa_v_over_2pi);
            push(p, "kappa_h_over_2pi", m.kappa_h_over_2pi);
        }
        let q = "protocol";
        if let Some(t) = self.protocol.tau_encode_s {
            push(q, "tau_encode_s", t);
        }
        if let Some(a) = self.protocol.encode_amplitude {
            push(q, "encode_amplitude", a);
        }
        if let Some(g) = self.protocol.g_stage2_over_2pi {
            push(q, "g_stage2_over_2pi", g);
        }
        if let Some(h) = self.wigner.half_width {
            push("wigner", "half_width", h);
        }
        out
    }

    /// `g₀ φ_ac` in rad/s.
    fn encoding_rate(&self) -> f64 {
        match (&self.mechanical, &self.magnonic) {
            (Some(m), _) => angular(m.g0_over_2pi) * m.phi_ac,
            (_, Some(m)) => angular(m.g0_over_2pi) * m.phi_ac,
            _ => 0.0,
        }
    }

    /// Axis names and points, checked against the size limit.
    pub fn sweep_axes(&self, grid: &GridBlock) -> Result<Vec<(SweepParameter, Vec<f64>)>, CliError> {
        if grid.axes.is_empty() || grid.axes.len() > 2 {
            return Err(CliError::config("grid.axes", format!("need 1 or 2 axes, got {}", grid.axes.len())));
        }
        let mut axes = Vec::new();
        let mut total = 1usize;
        for (k, axis) in grid.axes.iter().enumerate() {
            let path = format!("grid.axes[{k}]");
            if axes.iter().any(|(p, _)| *p == axis.parameter) {
                return Err(CliError::config(format!("{path}.parameter"), "repeated parameter"));
            }
            let points = axis.points(&path)?;
            if axis.parameter != SweepParameter::KappaOverG && points.iter().any(|x| *x < 0.0) {
                return Err(CliError::config(format!("{path}.values"), "must be non-negative"));
            }
            if axis.parameter == SweepParameter::KappaOverG && points.iter().any(|x| *x <= 0.0) {
                return Err(CliError::config(format!("{path}.values"), "must be positive"));
            }
            total = total.saturating_mul(points.len());
            axes.push((axis.parameter, points));
        }
        if total > MAX_SWEEP_POINTS {
            return Err(CliError::config(
                "grid.axes",
                format!("{total} points exceed the limit of {MAX_SWEEP_POINTS}; coarsen an axis or split the sweep"),
            ));
        }
        Ok(axes)
    }

    /// Library configuration, with every frequency converted to rad/s.
    pub fn protocol_config(&self) -> Result<ProtocolConfig, CliError> {
        let platform = match (&self.mechanical, &self.magnonic) {
            (Some(m), _) => Platform::Mechanical(ElectromechParams {
                omega_m: angular(m.omega_m_over_2pi),
                omega_ac: angular(m.omega_ac_over_2pi.unwrap_or(m.omega_m_over_2pi)),
                g0: angular(m.g0_over_2pi),
                phi_ac: m.phi_ac,
                qubit_dephasing: angular(m.qubit_dephasing_over_2pi),
                qubit_relaxation: angular(m.qubit_relaxation_over_2pi),
                gamma_b: angular(m.gamma_b_over_2pi),
                n_th: m.n_th,
                delta_c: angular(m.delta_c_over_2pi),
                g_om: angular(m.g_om_over_2pi),
                e0: angular(m.e0_over_2pi),
                kappa: angular(m.kappa_over_2pi),
                omega_t: m.omega_t_over_2pi.map(angular),
                e_c: m.e_c_over_2pi.map(angular),
            }),
            (_, Some(m)) => Platform::Magnonic(ElectromagnonParams {
                omega_m: angular(m.omega_m_over_2pi),
                omega_ac: angular(m.omega_ac_over_2pi.unwrap_or(m.omega_m_over_2pi)),
                g0: angular(m.g0_over_2pi),
                phi_ac: m.phi_ac,
                qubit_dephasing: angular(m.qubit_dephasing_over_2pi),
                qubit_relaxation: angular(m.qubit_relaxation_over_2pi),
                gamma_m: angular(m.gamma_m_over_2pi),
                n_th: m.n_th,
                omega_v: angular(m.omega_v_over_2pi.unwrap_or(m.omega_l_over_2pi)),
                omega_h: angular(m.omega_h_over_2pi.unwrap_or(m.omega_l_over_2pi + m.omega_m_over_2pi)),
                omega_l: angular(m.omega_l_over_2pi),
                g_om: angular(m.g_om_over_2pi),
                e_v: angular(m.e_v_over_2pi),
                kappa_v: angular(m.kappa_v_over_2pi),
                kappa_h: angular(m.kappa_h_over_2pi),
                omega_t: m.omega_t_over_2pi.map(angular),
            }),
            _ => return Err(CliError::config("branch", "no parameter block")),
        };
        let p = &self.protocol;
        let tau = match (p.tau_encode_s, p.encode_amplitude) {
            (Some(t), _) => t,
            (None, Some(a)) => a / self.encoding_rate(),
            (None, None) => return Err(CliError::config("protocol.tau_encode_s", "missing field")),
        };
        let mut c = ProtocolConfig::new(platform, tau);
        c.g_stage2 = p.g_stage2_over_2pi.map(angular);
        c.schedule_count = p.schedule_count;
        c.series_points = p.series_points;
        c.shots = p.shots;
        c.engine = self.engine.unwrap_or(Engine::Moments);
        c.lindblad = LindbladOptions {
            boson_dim: self.lindblad.boson_dim,
            optical_dim: self.lindblad.optical_dim,
            dt: self.lindblad.dt_s,
            order: self.lindblad.order,
        };
        Ok(c)
    }

    /// Canonical TOML text; parses back to an equal configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

/// Parses, fills defaults and validates a configuration document.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    let mut config: ExperimentConfig = serde_path_to_error::deserialize(toml::Value::Table(raw.clone()))
        .map_err(|e| CliError::config(e.path().to_string(), e.inner().message()))?;
    config.fill_defaults();
    log_defaults_and_units(&raw, &config);
    config.validate()?;
    Ok(config)
}

/// Logs every key the document left to its default and every unit conversion.
fn log_defaults_and_units(raw: &toml::Table, config: &ExperimentConfig) {
    let Ok(toml::Value::Table(full)) = toml::Value::try_from(config) else {
        return;
    };
    walk(raw, &full, "");
}

fn walk(raw: &toml::Table, full: &toml::Table, prefix: &str) {
    for (key, value) in full {
        let path = if prefix.is_empty() { key.clone() } else { format!("{prefix}.{key}") };
        match (raw.get(key), value) {
            (Some(toml::Value::Table(r)), toml::Value::Table(f)) => walk(r, f, &path),
            (None, toml::Value::Table(_)) => log::info!("default [{path}] block"),
            (None, v) => log::info!("default {path} = {v}"),
            (Some(_), toml::Value::Float(x)) if key.ends_with("_over_2pi") => {
                log::info!("{path} = {x:e} Hz -> {:e} rad/s", angular(*x));
            }
            _ => {}
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
experiment = "protocol"
branch = "mechanical"

[protocol]
encode_amplitude = 3.0
g_stage2_over_2pi = 5e6

[mechanical]
omega_m_over_2pi = 1e9
g0_over_2pi = 1e7
phi_ac = 0.1
kappa_over_2pi = 1e7
"#;

    #[test]
    fn minimal_protocol_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.engine, Some(Engine::Moments));
        assert_eq!(c.protocol.schedule_count, 2);
        assert_eq!(c.mechanical.as_ref().unwrap().omega_ac_over_2pi, Some(1e9));
        let p = c.protocol_config().unwrap();
        assert!((p.platform.readout_kappa() - 2.0 * std::f64::consts::PI * 1e7).abs() < 1e-6);
        assert!((p.g_stage2.unwrap() - 2.0 * std::f64::consts::PI * 5e6).abs() < 1e-6);
        assert!((p.tau_encode * p.platform.encoding().coupling() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn echo_round_trips() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(parse_config(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejections_name_the_field() {
        let cases = [
            (MINIMAL.replace("kappa_over_2pi = 1e7", "kappa_over_2pi = -1.0"), "mechanical.kappa_over_2pi"),
            (MINIMAL.replace("phi_ac = 0.1", "phi_ac = 0.1\nkapa_over_2pi = 1.0"), "kapa_over_2pi"),
            (MINIMAL.replace("g0_over_2pi = 1e7\n", ""), "g0_over_2pi"),
            (MINIMAL.replace("encode_amplitude = 3.0", ""), "protocol.tau_encode_s"),
            (MINIMAL.replace("[mechanical]", "[magnonic]"), "magnonic.kappa_over_2pi"),
            (MINIMAL.replace("\"mechanical\"", "\"magnonic\""), "`magnonic`: missing parameter block"),
            (MINIMAL.replace("schedule_count", "x").replace("g_stage2", "schedule_count = 0\ng_stage2"), "protocol.schedule_count"),
        ];
        for (text, field) in cases {
            let err = parse_config(&text).unwrap_err();
            assert!(matches!(err, CliError::Config(_)), "{err}");
            assert!(err.to_string().contains(field), "{err} lacks {field}");
        }
    }

    #[test]
    fn sweep_axes_are_bounded() {
        let mut text = MINIMAL.replace("\"protocol\"", "\"sweep\"");
        text.push_str(
            "\n[[grid.axes]]\nparameter = \"kappa_over_g\"\nstart = 0.5\nstop = 4.0\ncount = 101\n\
             \n[[grid.axes]]\nparameter = \"kappa_over_2pi\"\nstart = 1e5\nstop = 1e7\ncount = 100\nlog = true\n",
        );
        let err = parse_config(&text).unwrap_err();
        assert!(err.to_string().contains("10100 points"), "{err}");
        let ok = text.replace("count = 101", "count = 100");
        let c = parse_config(&ok).unwrap();
        let axes = c.sweep_axes(c.grid.as_ref().unwrap()).unwrap();
        assert_eq!(axes[1].1.len(), 100);
        assert!((axes[1].1[99] - 1e7).abs() < 1e-3);
    }
}
