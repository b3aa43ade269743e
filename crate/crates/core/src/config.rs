//! Sectioned TOML configuration. Every physical constant lives here; the
//! reference file ships embedded in the library.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ars::ArsConfig;
use crate::digester::{DigesterParams, DigesterState, DilutionInput, Equilibrium, DIM};
use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::microalgae::MonodParams;
use crate::ode::{IntegratorConfig, Method};

pub const REFERENCE_TOML: &str = include_str!("../config/reference.toml");

/// Translated initial conditions of the two digester scenarios.
pub const PRESETS: [(&str, [f64; DIM]); 2] = [
    ("1", [-1.0, 0.5, 1.0, 1.5, 0.8, -0.5]),
    ("2", [-1.5, 1.25, 0.4, 1.8, -1.8, -2.2]),
];

pub fn preset_x0(name: &str) -> Result<[f64; DIM]> {
    PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, x)| *x)
        .ok_or_else(|| Error::Configuration(format!("unknown preset {name:?}; known presets are 1 and 2")))
}

fn take<T: serde::de::DeserializeOwned>(table: &mut toml::Table, key: &str, section: &str) -> Result<T> {
    let v = table
        .remove(key)
        .ok_or_else(|| Error::Configuration(format!("[{section}] is missing {key}")))?;
    v.try_into()
        .map_err(|e| Error::Configuration(format!("[{section}] {key}: {e}")))
}

fn rest<T: serde::de::DeserializeOwned>(table: toml::Table, section: &str) -> Result<T> {
    toml::Value::Table(table)
        .try_into()
        .map_err(|e| Error::Configuration(format!("[{section}]: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct DigesterSection {
    pub provenance: String,
    #[serde(flatten)]
    pub params: DigesterParams,
    pub x_ss: [f64; DIM],
    pub u_ss: [f64; DIM],
}

impl TryFrom<toml::Table> for DigesterSection {
    type Error = Error;

    fn try_from(mut t: toml::Table) -> Result<Self> {
        let provenance = take(&mut t, "provenance", "digester")?;
        let x_ss = take(&mut t, "x_ss", "digester")?;
        let u_ss = take(&mut t, "u_ss", "digester")?;
        Ok(Self {
            provenance,
            params: rest(t, "digester")?,
            x_ss,
            u_ss,
        })
    }
}

impl DigesterSection {
    pub fn equilibrium(&self) -> Result<Equilibrium> {
        Ok(Equilibrium {
            state: DigesterState::from_array(self.x_ss),
            input: DilutionInput(self.u_ss),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "toml::Table")]
pub struct MicroalgaeSection {
    pub provenance: String,
    #[serde(flatten)]
    pub params: MonodParams,
    /// Constant light of the reference scenario.
    pub i_ref: f64,
    pub x_alg_0: f64,
    pub s_0: f64,
}

impl TryFrom<toml::Table> for MicroalgaeSection {
    type Error = Error;

    fn try_from(mut t: toml::Table) -> Result<Self> {
        Ok(Self {
            provenance: take(&mut t, "provenance", "microalgae")?,
            i_ref: take(&mut t, "i_ref", "microalgae")?,
            x_alg_0: take(&mut t, "x_alg_0", "microalgae")?,
            s_0: take(&mut t, "s_0", "microalgae")?,
            params: rest(t, "microalgae")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub t_max: f64,
    #[serde(deserialize_with = "preset_name")]
    pub preset: String,
    /// Abort when the commanded physical dilution goes negative.
    #[serde(default)]
    pub strict_feasibility: bool,
}

/// Accepts `preset = 1` as well as `preset = "1"`.
fn preset_name<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Name {
        Int(i64),
        Str(String),
    }
    Ok(match Name::deserialize(d)? {
        Name::Int(i) => i.to_string(),
        Name::Str(s) => s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    /// Digester volume, L.
    pub v_d: f64,
    /// Microalgae culture volume, L; the compensation volume when absent.
    #[serde(default)]
    pub v_m: Option<f64>,
    /// Circularity horizon, days.
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    crate::network::DEFAULT_HORIZON_DAYS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorSection {
    /// Euler step for the microalgae model, d.
    pub dt: f64,
    /// Euler step for the controlled digester, d.
    pub digester_dt: f64,
    /// Horizon of the coupled network run, d.
    pub t_end: f64,
    pub stride: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Max relative deviation from the oracle accepted by calibration.
    pub calibration_tolerance: f64,
    /// Max relative deviation from the closed-loop norm law.
    pub norm_law_tolerance: f64,
}

impl Default for IntegratorSection {
    fn default() -> Self {
        Self {
            dt: 0.00005,
            digester_dt: 0.00001,
            t_end: 20.0,
            stride: 200,
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            calibration_tolerance: 1e-3,
            norm_law_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub max_episode_steps: Option<usize>,
    pub action_low: Option<f64>,
    pub action_high: Option<f64>,
    pub init_x_alg: Option<(f64, f64)>,
    pub init_s: Option<(f64, f64)>,
    pub env_dt: Option<f64>,
    pub substep_dt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub digester: DigesterSection,
    pub controller: ControllerSection,
    pub microalgae: MicroalgaeSection,
    pub network: NetworkSection,
    #[serde(default)]
    pub integrator: IntegratorSection,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub ars: ArsConfig,
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {value}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_owned())),
        Err(_) => toml::Value::String(value.to_owned()),
    }
}

/// Applies one `section.key=value` override to a raw table.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (path, value) = spec
        .split_once('=')
        .ok_or_else(|| Error::Configuration(format!("override {spec:?} is not key=value")))?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Configuration(format!("override {spec:?} has an empty key")));
    }
    let (last, parents) = keys.split_last().expect("split yields one key");
    let mut cur = table;
    for k in parents {
        let entry = cur
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Configuration(format!("override {spec:?}: {k} is not a section")))?;
    }
    cur.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

impl Config {
    /// The embedded reference configuration.
    pub fn reference() -> Self {
        Self::from_toml_str::<&str>(REFERENCE_TOML, &[]).expect("embedded reference configuration is valid")
    }

    pub fn from_toml_str<S: AsRef<str>>(text: &str, overrides: &[S]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Parse(format!("configuration: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o.as_ref())?;
        }
        let cfg: Config = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Configuration(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load<S: AsRef<str>>(path: &Path, overrides: &[S]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.digester.params.validate()?;
        self.microalgae.params.validate()?;
        let eq = self.digester.equilibrium()?;
        let residual = eq.residual(&self.digester.params)?;
        if !(residual < crate::digester::EQUILIBRIUM_TOLERANCE) {
            return Err(Error::Configuration(format!(
                "digester x_ss/u_ss residual {residual:e} exceeds {:e}",
                crate::digester::EQUILIBRIUM_TOLERANCE
            )));
        }
        for (name, v) in [
            ("microalgae.i_ref", self.microalgae.i_ref),
            ("microalgae.x_alg_0", self.microalgae.x_alg_0),
            ("microalgae.s_0", self.microalgae.s_0),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Configuration(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.network.v_d > 0.0) {
            return Err(Error::Configuration(format!("network.v_d must be positive, got {}", self.network.v_d)));
        }
        if let Some(vm) = self.network.v_m {
            if !(vm >= 0.0) {
                return Err(Error::Configuration(format!("network.v_m must be non-negative, got {vm}")));
            }
        }
        if !(self.network.delta > 0.0) {
            return Err(Error::Configuration(format!(
                "network.delta must be positive, got {}",
                self.network.delta
            )));
        }
        self.monod_integrator().validate()?;
        if !(self.integrator.digester_dt > 0.0) {
            return Err(Error::Configuration("integrator.digester_dt must be positive".into()));
        }
        self.env_config().validate()?;
        self.ars.validate()?;
        Ok(())
    }

    pub fn monod_integrator(&self) -> IntegratorConfig {
        let i = &self.integrator;
        IntegratorConfig {
            dt: i.dt,
            t_end: i.t_end,
            method: Method::FixedFirstOrder,
            abs_tol: i.abs_tol,
            rel_tol: i.rel_tol,
            stride: i.stride,
            nonnegative: true,
        }
    }

    pub fn env_config(&self) -> EnvConfig {
        let m = &self.microalgae;
        let d = EnvConfig::for_params(&m.params, m.x_alg_0, m.s_0);
        let e = &self.env;
        EnvConfig {
            max_episode_steps: e.max_episode_steps.unwrap_or(d.max_episode_steps),
            action_low: e.action_low.unwrap_or(d.action_low),
            action_high: e.action_high.unwrap_or(d.action_high),
            init_x_alg: e.init_x_alg.unwrap_or(d.init_x_alg),
            init_s: e.init_s.unwrap_or(d.init_s),
            env_dt: e.env_dt.unwrap_or(d.env_dt),
            substep_dt: e.substep_dt.unwrap_or(d.substep_dt),
            seed: d.seed,
        }
    }

    /// Fully resolved configuration as TOML text.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Configuration(format!("serialize configuration: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_parses_and_validates() {
        let c = Config::reference();
        assert_eq!(c.controller.t_max, 3.5);
        assert_eq!(c.digester.params.f_r, 0.15);
        assert_eq!(c.microalgae.params.k_co2, 0.3);
        assert_eq!(c.network.delta, 1.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        for bad in ["digester.bogus=1.0", "microalgae.bogus=1.0", "network.bogus=1", "ars.bogus=2"] {
            assert!(
                Config::from_toml_str(REFERENCE_TOML, &[bad]).is_err(),
                "{bad} accepted"
            );
        }
    }

    #[test]
    fn negative_half_saturation_rejected() {
        let r = Config::from_toml_str(REFERENCE_TOML, &["digester.k_s1=-7.1"]);
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    #[test]
    fn overrides_apply() {
        let c = Config::from_toml_str(REFERENCE_TOML, &["controller.t_max=2", "controller.preset=2"]).unwrap();
        assert_eq!(c.controller.t_max, 2.0);
        assert_eq!(c.controller.preset, "2");
        assert!(Config::from_toml_str(REFERENCE_TOML, &["nokey"]).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = Config::reference();
        let text = c.to_toml_string().unwrap();
        let back = Config::from_toml_str::<&str>(&text, &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn inconsistent_equilibrium_rejected() {
        let r = Config::from_toml_str(REFERENCE_TOML, &["digester.f_r=0.2"]);
        assert!(matches!(r, Err(Error::Configuration(_))));
    }

    #[test]
    fn presets_lookup() {
        let x = preset_x0("1").unwrap();
        assert!((x.iter().map(|v| v * v).sum::<f64>() - 5.39).abs() < 1e-12);
        let x = preset_x0("2").unwrap();
        assert!((x.iter().map(|v| v * v).sum::<f64>() - 15.2925).abs() < 1e-12);
        assert!(preset_x0("3").is_err());
    }
}
