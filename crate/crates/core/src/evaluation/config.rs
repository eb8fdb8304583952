//! Scenario files: system, sensor array, training and evaluation grids.
//!
//! Every field except `name` and `[system]` has a default, so a scenario
//! file only needs to state what differs from the reference setup:
//!
//! ```toml
//! name = "h-lim"
//! [system]
//! molecules = 3
//! sensors = 2
//! x_max = 2e4
//! h = 0.02
//! alphabet_sizes = [6]
//! [train]
//! attenuation = { kind = "interval", lo = 0.01, hi = 0.03 }
//! [eval]
//! n_list = [6, 12]
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::{Attenuation, ChannelMatrixSet, NoiseSpec, SystemConfig};
use crate::error::{Error, Result};
use crate::sensor::{ArraySpec, SensorArray, DEFAULT_Z_SCALE};
use crate::training::{default_nu_levels, TrainConfig};

/// Names accepted by `--scenario`.
pub const SCENARIOS: [&str; 5] = ["full-csi", "h-specific", "h-lim", "h-full", "multi-user"];

/// Scenarios whose models the attenuation sweep compares.
pub const H_SCENARIOS: [&str; 3] = ["h-specific", "h-lim", "h-full"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevels {
    pub tx_variance: f64,
    pub channel_mean: f64,
    pub channel_variance: f64,
    pub rx_variance: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            tx_variance: 1e6,
            channel_mean: 10.0,
            channel_variance: 10.0,
            rx_variance: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub molecules: usize,
    pub sensors: usize,
    pub x_max: f64,
    /// Nominal attenuation of every user.
    pub h: f64,
    pub alphabet_sizes: Vec<usize>,
    #[serde(default)]
    pub noise: NoiseLevels,
}

impl SystemSpec {
    pub fn build(&self, alphabet_sizes: Vec<usize>) -> SystemConfig {
        let users = alphabet_sizes.len();
        let n = &self.noise;
        SystemConfig {
            molecules: self.molecules,
            sensors: self.sensors,
            alphabet_sizes,
            x_max: self.x_max,
            channel: ChannelMatrixSet::uniform(users, self.molecules, self.h),
            tx_noise: NoiseSpec::isotropic(self.molecules, 0.0, n.tx_variance),
            channel_noise: NoiseSpec::isotropic(self.molecules, n.channel_mean, n.channel_variance),
            rx_noise: NoiseSpec::isotropic(self.sensors, 0.0, n.rx_variance),
        }
    }
}

/// Either a generated array (`seed`, calibrated at `h_ref`) or explicit
/// `gains`/`exponents`, used as given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorSpec {
    pub seed: u64,
    pub z_scale: f64,
    /// Calibration attenuation; the nominal `h` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_ref: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub exponents: Option<Vec<Vec<f64>>>,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            z_scale: DEFAULT_Z_SCALE,
            h_ref: None,
            gains: None,
            exponents: None,
        }
    }
}

impl SensorSpec {
    pub fn build(&self, system: &SystemSpec) -> Result<SensorArray> {
        match (&self.gains, &self.exponents) {
            (Some(g), Some(e)) => SensorArray::new(g.clone(), e.clone(), self.z_scale),
            (None, None) => SensorArray::generate(&ArraySpec {
                molecules: system.molecules,
                sensors: system.sensors,
                seed: self.seed,
                z_scale: self.z_scale,
                h_ref: self.h_ref.unwrap_or(system.h),
                x_max: system.x_max,
            }),
            _ => Err(Error::Config(
                "sensors: `gains` and `exponents` must be given together".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Trials per record.
    pub trials: u64,
    /// Single-user alphabet sizes to train and sweep; empty means the
    /// system's own sizes.
    pub n_list: Vec<usize>,
    pub nu_grid: Vec<f64>,
    pub h_grid: Vec<f64>,
    /// λ₂/λ₁ values for the importance sweep.
    pub ratio_grid: Vec<f64>,
    /// Monte-Carlo draws per symbol tuple for the Gaussian detector.
    pub aml_samples: usize,
    /// Levels per axis of the MDA candidate grid.
    pub mda_levels: usize,
    pub scatter_samples: usize,
    pub scatter_conditions: Vec<Attenuation>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            trials: 100_000,
            n_list: Vec::new(),
            nu_grid: default_nu_levels(),
            h_grid: (1..=10).map(|i| f64::from(i) / 200.0).collect(),
            ratio_grid: vec![0.1, 1.0 / 3.0, 1.0, 3.0, 10.0],
            aml_samples: 10_000,
            mda_levels: 4,
            scatter_samples: 1000,
            scatter_conditions: vec![
                Attenuation::Fixed { h: 0.02 },
                Attenuation::Interval { lo: 0.01, hi: 0.03 },
                Attenuation::Interval { lo: 0.005, hi: 0.05 },
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub system: SystemSpec,
    #[serde(default)]
    pub sensors: SensorSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let single = |h: f64, n_list: Vec<usize>, attenuation: Attenuation| Self {
            name: name.to_string(),
            system: SystemSpec {
                molecules: 3,
                sensors: 2,
                x_max: 2e4,
                h,
                alphabet_sizes: vec![n_list[0]],
                noise: NoiseLevels::default(),
            },
            sensors: SensorSpec::default(),
            train: TrainConfig {
                attenuation,
                ..TrainConfig::default()
            },
            eval: EvalConfig {
                n_list,
                ..EvalConfig::default()
            },
        };
        Ok(match name {
            "full-csi" => single(0.01, vec![4, 8, 16], Attenuation::Nominal),
            "h-specific" => single(0.02, vec![6, 12], Attenuation::Nominal),
            "h-lim" => single(0.02, vec![6, 12], Attenuation::Interval { lo: 0.01, hi: 0.03 }),
            "h-full" => single(0.02, vec![6, 12], Attenuation::Interval { lo: 0.005, hi: 0.05 }),
            "multi-user" => Self {
                name: name.to_string(),
                system: SystemSpec {
                    molecules: 4,
                    sensors: 3,
                    x_max: 1.5e4,
                    h: 0.01,
                    alphabet_sizes: vec![4, 4],
                    noise: NoiseLevels::default(),
                },
                sensors: SensorSpec::default(),
                train: TrainConfig {
                    importance: vec![1.0, 1.0],
                    ..TrainConfig::default()
                },
                eval: EvalConfig::default(),
            },
            other => {
                return Err(Error::Usage(format!(
                    "unknown scenario `{other}`; expected one of {}",
                    SCENARIOS.join(", ")
                )))
            }
        })
    }

    /// Parses and validates a scenario file. Every failure is reported as
    /// [`Error::MalformedConfig`] naming the offending line or field.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingArtifact {
                path: path.to_path_buf(),
                what: "scenario config".into(),
            },
            _ => Error::Io(e),
        })?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let malformed = |message: String| Error::MalformedConfig {
            path: path.to_path_buf(),
            message,
        };
        let cfg: Self = toml::from_str(text).map_err(|e| malformed(e.to_string()))?;
        cfg.validate().map_err(|e| malformed(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("field `{name}`: {e}"));
        let s = &self.system;
        if s.alphabet_sizes.is_empty() || s.alphabet_sizes.iter().any(|&n| n < 2) {
            return Err(Error::Config(
                "field `system.alphabet_sizes`: need at least one user with N ≥ 2".into(),
            ));
        }
        if !(s.h.is_finite() && s.h > 0.0) {
            return Err(Error::Config("field `system.h`: must be positive".into()));
        }
        let system = s.build(s.alphabet_sizes.clone());
        system.validate().map_err(|e| field("system", e))?;
        let sensors = self.sensors.build(s).map_err(|e| field("sensors", e))?;
        system.check_sensors(&sensors).map_err(|e| field("sensors", e))?;
        self.train.validate(system.users()).map_err(|e| field("train", e))?;
        let e = &self.eval;
        if e.trials == 0 {
            return Err(Error::Config("field `eval.trials`: must be ≥ 1".into()));
        }
        if e.n_list.iter().any(|&n| n < 2) || (!e.n_list.is_empty() && system.users() != 1) {
            return Err(Error::Config(
                "field `eval.n_list`: sizes must be ≥ 2 and apply to single-user systems only".into(),
            ));
        }
        if e.nu_grid.is_empty() || e.nu_grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("field `eval.nu_grid`: values must be positive".into()));
        }
        if e.h_grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("field `eval.h_grid`: values must be positive".into()));
        }
        if e.ratio_grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("field `eval.ratio_grid`: values must be positive".into()));
        }
        if e.aml_samples < 2 || e.mda_levels < 2 || e.scatter_samples < 2 {
            return Err(Error::Config(
                "fields `eval.aml_samples`, `eval.mda_levels`, `eval.scatter_samples`: must be ≥ 2".into(),
            ));
        }
        for c in &e.scatter_conditions {
            c.validate().map_err(|err| field("eval.scatter_conditions", err))?;
        }
        Ok(())
    }

    /// Single-user alphabet sizes covered by this scenario.
    pub fn n_list(&self) -> Vec<usize> {
        if self.eval.n_list.is_empty() {
            vec![self.system.alphabet_sizes[0]]
        } else {
            self.eval.n_list.clone()
        }
    }

    pub fn is_multi_user(&self) -> bool {
        self.system.alphabet_sizes.len() > 1
    }

    /// The system with user 0's alphabet size replaced by `n` (single-user
    /// scenarios only).
    pub fn system_for(&self, n: Option<usize>) -> Result<SystemConfig> {
        match n {
            None => Ok(self.system.build(self.system.alphabet_sizes.clone())),
            Some(_) if self.is_multi_user() => Err(Error::Usage("--n applies to single-user scenarios only".into())),
            Some(n) if n < 2 => Err(Error::Usage(format!("alphabet size {n} < 2"))),
            Some(n) => Ok(self.system.build(vec![n])),
        }
    }

    pub fn sensor_array(&self) -> Result<SensorArray> {
        self.sensors.build(&self.system)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate_and_round_trip() {
        for name in SCENARIOS {
            let cfg = ScenarioConfig::preset(name).unwrap();
            cfg.validate().unwrap();
            let text = cfg.to_toml().unwrap();
            let back = ScenarioConfig::parse(&text, Path::new("x.toml")).unwrap();
            assert_eq!(back, cfg, "{name}");
        }
    }

    #[test]
    fn h_grid_contains_design_point() {
        let e = EvalConfig::default();
        assert_eq!(e.h_grid.len(), 10);
        assert!(e.h_grid.contains(&0.02));
        assert_eq!(e.h_grid[0], 0.005);
        assert_eq!(e.h_grid[9], 0.05);
    }

    #[test]
    fn minimal_file_fills_defaults() {
        let text = "name = \"t\"\n[system]\nmolecules = 3\nsensors = 2\nx_max = 2e4\nh = 0.01\nalphabet_sizes = [4]\n";
        let cfg = ScenarioConfig::parse(text, Path::new("t.toml")).unwrap();
        assert_eq!(cfg.train, TrainConfig::default());
        assert_eq!(cfg.eval.trials, 100_000);
        assert_eq!(cfg.n_list(), vec![4]);
    }

    #[test]
    fn malformed_files_name_line_or_field() {
        let bad_type = "name = \"t\"\n[system]\nmolecules = \"three\"\n";
        match ScenarioConfig::parse(bad_type, Path::new("t.toml")) {
            Err(Error::MalformedConfig { message, .. }) => {
                assert!(message.contains("line 3"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let bad_value =
            "name = \"t\"\n[system]\nmolecules = 3\nsensors = 2\nx_max = 2e4\nh = -1.0\nalphabet_sizes = [4]\n";
        match ScenarioConfig::parse(bad_value, Path::new("t.toml")) {
            Err(Error::MalformedConfig { message, .. }) => {
                assert!(message.contains("system.h"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        let unknown = "name = \"t\"\nbogus = 1\n";
        assert!(matches!(
            ScenarioConfig::parse(unknown, Path::new("t.toml")),
            Err(Error::MalformedConfig { .. })
        ));
    }

    #[test]
    fn unknown_preset_is_usage_error() {
        assert!(matches!(ScenarioConfig::preset("nope"), Err(Error::Usage(_))));
    }
}
