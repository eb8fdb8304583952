//! Run directories: `<runs>/<scenario>/<seed>/` with the config snapshot,
//! weights, training reports and result files.

use std::path::{Path, PathBuf};

use super::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::networks::Model;
use crate::sensor::SensorArray;
use crate::training::{train, TrainConfig, TrainReport};

#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub scenario: String,
    pub seed: u64,
}

/// File tag of a single-user model.
pub fn size_tag(n: usize) -> String {
    format!("n{n}")
}

/// File tag of a two-user model trained at importance ratio `λ₂/λ₁`.
pub fn ratio_tag(ratio: f64) -> String {
    format!("ratio{ratio}")
}

impl RunDir {
    pub fn new(runs_dir: &Path, scenario: &str, seed: u64) -> Self {
        Self {
            root: runs_dir.join(scenario).join(seed.to_string()),
            scenario: scenario.to_string(),
            seed,
        }
    }

    pub fn create(&self) -> Result<()> {
        std::fs::create_dir_all(&self.root)?;
        Ok(())
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn config_path(&self) -> PathBuf {
        self.file("config.toml")
    }

    pub fn weights_path(&self, tag: &str) -> PathBuf {
        self.file(&format!("weights-{tag}.json"))
    }

    pub fn report_path(&self, tag: &str) -> PathBuf {
        self.file(&format!("train-report-{tag}.json"))
    }

    /// Loads a trained model, naming the command that produces it when the
    /// weights are missing.
    pub fn load_model(&self, tag: &str) -> Result<Model> {
        let path = self.weights_path(tag);
        if !path.exists() {
            let flag = tag
                .strip_prefix("ratio")
                .map(|r| format!("--ratio {r}"))
                .or_else(|| tag.strip_prefix('n').map(|n| format!("--n {n}")))
                .unwrap_or_default();
            return Err(Error::MissingArtifact {
                path,
                what: format!(
                    "no trained model for scenario `{}`; run `molmix train --scenario {} {flag} --seed {}` first",
                    self.scenario, self.scenario, self.seed
                ),
            });
        }
        Model::load(&path)
    }
}

/// What one `train` invocation covers.
#[derive(Debug, Clone, Copy, Default)]
pub struct TrainSelection {
    pub n: Option<usize>,
    pub ratio: Option<f64>,
}

/// One training job: file tag, training config and system.
pub fn training_jobs(
    cfg: &ScenarioConfig,
    seed: u64,
    sel: TrainSelection,
) -> Result<Vec<(String, TrainConfig, crate::channel::SystemConfig)>> {
    let base = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    if cfg.is_multi_user() {
        if sel.n.is_some() {
            return Err(Error::Usage("--n applies to single-user scenarios only".into()));
        }
        let system = cfg.system_for(None)?;
        if system.users() != 2 {
            if sel.ratio.is_some() {
                return Err(Error::Usage("--ratio needs a two-user scenario".into()));
            }
            return Ok(vec![("model".into(), base, system)]);
        }
        let ratios = match sel.ratio {
            Some(r) if r.is_finite() && r > 0.0 => vec![r],
            Some(r) => return Err(Error::Usage(format!("ratio {r} must be positive"))),
            None => cfg.eval.ratio_grid.clone(),
        };
        Ok(ratios
            .into_iter()
            .map(|r| {
                let tc = TrainConfig {
                    importance: vec![1.0, r],
                    ..base.clone()
                };
                (ratio_tag(r), tc, system.clone())
            })
            .collect())
    } else {
        if sel.ratio.is_some() {
            return Err(Error::Usage("--ratio applies to two-user scenarios only".into()));
        }
        let ns = sel.n.map_or_else(|| cfg.n_list(), |n| vec![n]);
        ns.into_iter()
            .map(|n| Ok((size_tag(n), base.clone(), cfg.system_for(Some(n))?)))
            .collect()
    }
}

/// Trains every selected model and writes config, weights and reports.
pub fn train_scenario(
    cfg: &ScenarioConfig,
    sensors: &SensorArray,
    run: &RunDir,
    sel: TrainSelection,
) -> Result<Vec<(String, TrainReport)>> {
    let jobs = training_jobs(cfg, run.seed, sel)?;
    run.create()?;
    let mut snapshot = cfg.clone();
    snapshot.train.seed = run.seed;
    std::fs::write(run.config_path(), snapshot.to_toml()?)?;
    let mut out = Vec::new();
    for (tag, tc, system) in jobs {
        let (model, report) = train(&tc, &system, sensors)?;
        model.save(&run.weights_path(&tag))?;
        std::fs::write(run.report_path(&tag), serde_json::to_string_pretty(&report)?)?;
        out.push((tag, report));
    }
    Ok(out)
}
