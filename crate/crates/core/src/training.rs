//! Joint training of encoders and decoder through the channel.
//!
//! Each batch draws one noise level ν from the schedule, K symbols per user,
//! one attenuation per item, and one noise realization per item. The loss is
//!
//! ```text
//! L = Σ_i λ_i · mean_k CE(l̂_i[k], s_i[k])
//! ```
//!
//! i.e. the per-user cross-entropy averaged over the batch rather than
//! summed, which only rescales the effective learning rate by K.

use std::time::Instant;

use log::debug;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{gain_matrices, transmit_tape, Attenuation, BatchNoise, SystemConfig};
use crate::diffcore::{BatchStats, Matrix, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::networks::{Mode, Model};
use crate::rng::{self, SimRng};
use crate::sensor::SensorModel;

/// `{10^(l/5) : l = -5..=5}`.
pub fn default_nu_levels() -> Vec<f64> {
    (-5..=5).map(|l| 10f64.powf(f64::from(l) / 5.0)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Noise multipliers; one is drawn uniformly per batch.
    pub nu_levels: Vec<f64>,
    /// Importance factors λ_i, normalized to sum to U before training.
    pub importance: Vec<f64>,
    pub attenuation: Attenuation,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 250,
            batches_per_epoch: 5,
            batch_size: 256,
            learning_rate: 1e-3,
            nu_levels: default_nu_levels(),
            importance: vec![1.0],
            attenuation: Attenuation::Nominal,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn steps(&self) -> usize {
        self.epochs * self.batches_per_epoch
    }

    pub fn validate(&self, users: usize) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.batches_per_epoch == 0 {
            return Err(Error::Config(
                "epochs, batches_per_epoch and batch_size must be ≥ 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.nu_levels.is_empty() || self.nu_levels.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("nu_levels must be non-empty and ≥ 0".into()));
        }
        if self.importance.len() != users {
            return Err(Error::Config(format!(
                "{} importance factors for {users} users",
                self.importance.len()
            )));
        }
        if self.importance.iter().any(|l| !(l.is_finite() && *l >= 0.0)) || !self.importance.iter().any(|l| *l > 0.0) {
            return Err(Error::Config(
                "importance factors must be ≥ 0 with at least one > 0".into(),
            ));
        }
        self.attenuation.validate()
    }

    /// λ rescaled so that Σλ_i = U.
    pub fn normalized_importance(&self) -> Vec<f64> {
        let sum: f64 = self.importance.iter().sum();
        let u = self.importance.len() as f64;
        self.importance.iter().map(|l| l * u / sum).collect()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// `[epoch][user]` mean unweighted cross-entropy.
    pub epoch_user_loss: Vec<Vec<f64>>,
    /// `[epoch]` mean weighted loss.
    pub epoch_loss: Vec<f64>,
    /// How often each ν level was drawn.
    pub nu_level_counts: Vec<usize>,
    pub steps: usize,
    pub wall_clock_secs: f64,
    pub seed: u64,
    /// Batch reduction of the cross-entropy term.
    pub loss_reduction: String,
    pub normalized_importance: Vec<f64>,
    pub config: TrainConfig,
}

/// One training batch with all randomness realized.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[user][item]`.
    pub symbols: Vec<Vec<usize>>,
    /// Per user, K×S attenuation.
    pub gains: Vec<Matrix>,
    pub noise: BatchNoise,
}

impl Batch {
    /// Draw order: symbols of every user, then every item's attenuation,
    /// then every item's noise.
    pub fn draw<R: Rng + ?Sized>(system: &SystemConfig, attenuation: &Attenuation, k: usize, rng: &mut R) -> Self {
        let symbols = system
            .alphabet_sizes
            .iter()
            .map(|&n| (0..k).map(|_| rng.random_range(0..n)).collect())
            .collect();
        let draws: Vec<_> = (0..k).map(|_| attenuation.draw(system, rng)).collect();
        let gains = gain_matrices(&draws, system.users(), system.molecules);
        let noise = BatchNoise::draw(system, k, rng);
        Self { symbols, gains, noise }
    }
}

/// `Σ_i λ_i · mean_k CE(logits_i[k], targets_i[k])`; users with `λ_i = 0`
/// contribute no node. Returns the total and each user's unweighted term.
pub fn importance_loss(
    tape: &mut Tape,
    user_logits: &[Var],
    targets: &[Vec<usize>],
    importance: &[f64],
) -> Result<(Var, Vec<Option<Var>>)> {
    if user_logits.len() != targets.len() || user_logits.len() != importance.len() {
        return Err(Error::Shape(format!(
            "{} logit blocks, {} target lists, {} importance factors",
            user_logits.len(),
            targets.len(),
            importance.len()
        )));
    }
    let mut total: Option<Var> = None;
    let mut terms = Vec::with_capacity(user_logits.len());
    for ((&logits, t), &lambda) in user_logits.iter().zip(targets).zip(importance) {
        if lambda == 0.0 {
            terms.push(None);
            continue;
        }
        let ce = tape.softmax_cross_entropy(logits, t)?;
        terms.push(Some(ce));
        let weighted = tape.scale(ce, lambda);
        total = Some(match total {
            None => weighted,
            Some(acc) => tape.add(acc, weighted)?,
        });
    }
    let total = total.ok_or_else(|| Error::Config("all importance factors are zero".into()))?;
    Ok((total, terms))
}

/// Full encoder → channel → sensors → decoder → loss graph for one batch.
pub fn batch_loss(
    tape: &mut Tape,
    model: &Model,
    sensors: &dyn SensorModel,
    batch: &Batch,
    importance: &[f64],
    mode: Mode,
) -> Result<(Var, Vec<Option<Var>>, Option<BatchStats>)> {
    batch_loss_with(tape, model, &model.store, sensors, batch, importance, mode)
}

/// [`batch_loss`] with the parameters taken from `store` instead of the
/// model's own, as needed when perturbing parameters.
pub fn batch_loss_with(
    tape: &mut Tape,
    model: &Model,
    store: &ParamStore,
    sensors: &dyn SensorModel,
    batch: &Batch,
    importance: &[f64],
    mode: Mode,
) -> Result<(Var, Vec<Option<Var>>, Option<BatchStats>)> {
    let xbars = model
        .transmitters
        .iter()
        .zip(&batch.symbols)
        .map(|(t, s)| t.mixtures_tape(tape, store, s))
        .collect::<Result<Vec<_>>>()?;
    let z = transmit_tape(tape, &xbars, &batch.gains, sensors, &batch.noise)?;
    let (logits, stats) = model.decoder.logits_tape(tape, store, z, mode)?;
    let parts = model.decoder.split_tape(tape, logits)?;
    let (loss, terms) = importance_loss(tape, &parts, &batch.symbols, importance)?;
    Ok((loss, terms, stats))
}

/// Trains `model` in place under `config`.
pub fn train_model(
    model: &mut Model,
    config: &TrainConfig,
    system: &SystemConfig,
    sensors: &dyn SensorModel,
) -> Result<TrainReport> {
    system.validate()?;
    system.check_sensors(sensors)?;
    config.validate(system.users())?;
    if model.users() != system.users() {
        return Err(Error::Config(format!(
            "model has {} users, system has {}",
            model.users(),
            system.users()
        )));
    }
    let start = Instant::now();
    let importance = config.normalized_importance();
    let users = system.users();
    let mut rng: SimRng = rng::stream(config.seed, 1);
    let mut report = TrainReport {
        epoch_user_loss: Vec::with_capacity(config.epochs),
        epoch_loss: Vec::with_capacity(config.epochs),
        nu_level_counts: vec![0; config.nu_levels.len()],
        steps: 0,
        wall_clock_secs: 0.0,
        seed: config.seed,
        loss_reduction: "mean over batch".into(),
        normalized_importance: importance.clone(),
        config: config.clone(),
    };
    model.store.zero_grad();

    for epoch in 0..config.epochs {
        let mut user_acc = vec![0.0; users];
        let mut total_acc = 0.0;
        for batch_idx in 0..config.batches_per_epoch {
            let level = rng.random_range(0..config.nu_levels.len());
            report.nu_level_counts[level] += 1;
            let nu = config.nu_levels[level];
            let noisy = system.with_nu(nu);
            let batch = Batch::draw(&noisy, &config.attenuation, config.batch_size, &mut rng);

            let mut tape = Tape::new();
            let (loss, terms, stats) = batch_loss(&mut tape, model, sensors, &batch, &importance, Mode::Train)?;
            let value = tape.value(loss).get(0, 0);
            if !value.is_finite() {
                let hs: Vec<f64> = batch.gains.iter().map(|g| g.get(0, 0)).collect();
                return Err(Error::NonFinite(format!(
                    "loss {value} at epoch {epoch}, batch {batch_idx}, nu {nu}, first-item attenuation {hs:?}"
                )));
            }
            total_acc += value;
            for (acc, t) in user_acc.iter_mut().zip(&terms) {
                if let Some(t) = t {
                    *acc += tape.value(*t).get(0, 0);
                }
            }
            tape.backward(loss, &mut model.store)?;
            model.store.adam_step(config.learning_rate);
            if let Some(s) = stats {
                model.decoder.update_running_stats(&s);
            }
            report.steps += 1;
        }
        let nb = config.batches_per_epoch as f64;
        report.epoch_user_loss.push(user_acc.iter().map(|v| v / nb).collect());
        report.epoch_loss.push(total_acc / nb);
        debug!("epoch {epoch}: loss {:.5}", total_acc / nb);
    }
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Builds a fresh autoencoder from `config.seed` and trains it.
pub fn train(config: &TrainConfig, system: &SystemConfig, sensors: &dyn SensorModel) -> Result<(Model, TrainReport)> {
    let mut model = Model::autoencoder(system, sensors.output_scale(), config.seed);
    let report = train_model(&mut model, config, system, sensors)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits(tape: &mut Tape, rows: &[Vec<f64>]) -> Var {
        tape.constant(Matrix::from_rows(rows).unwrap())
    }

    #[test]
    fn confident_correct_predictions_cost_nothing() {
        let mut t = Tape::new();
        let l = logits(&mut t, &[vec![1e3, 0.0, 0.0, 0.0], vec![0.0, 0.0, 1e3, 0.0]]);
        let (loss, _) = importance_loss(&mut t, &[l], &[vec![0, 2]], &[1.0]).unwrap();
        assert_eq!(t.value(loss).get(0, 0), 0.0);
    }

    #[test]
    fn uniform_prediction_costs_ln_n() {
        let mut t = Tape::new();
        let l = logits(&mut t, &vec![vec![0.0; 4]; 3]);
        let (loss, _) = importance_loss(&mut t, &[l], &[vec![0, 1, 3]], &[1.0]).unwrap();
        assert!((t.value(loss).get(0, 0) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn importance_weights_add_up() {
        let mut t = Tape::new();
        let a = logits(&mut t, &vec![vec![0.0; 4]; 2]);
        let b = logits(&mut t, &vec![vec![0.0; 4]; 2]);
        let (loss, terms) = importance_loss(&mut t, &[a, b], &[vec![0, 1], vec![2, 3]], &[1.0, 2.0]).unwrap();
        assert!((t.value(loss).get(0, 0) - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert!(terms.iter().all(Option::is_some));
        let (_, terms) = importance_loss(&mut t, &[a, b], &[vec![0, 1], vec![2, 3]], &[1.0, 0.0]).unwrap();
        assert!(terms[1].is_none());
    }

    #[test]
    fn importance_is_normalized_to_user_count() {
        let cfg = TrainConfig {
            importance: vec![1.0, 10.0],
            ..TrainConfig::default()
        };
        let n = cfg.normalized_importance();
        assert!((n.iter().sum::<f64>() - 2.0).abs() < 1e-15);
        assert!((n[1] / n[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate(1).is_ok());
        cfg.importance = vec![0.0];
        assert!(cfg.validate(1).is_err());
        cfg.importance = vec![1.0, -1.0];
        assert!(cfg.validate(2).is_err());
        cfg.importance = vec![1.0];
        cfg.batch_size = 0;
        assert!(cfg.validate(1).is_err());
        cfg.batch_size = 8;
        cfg.attenuation = Attenuation::Interval { lo: 0.03, hi: 0.01 };
        assert!(cfg.validate(1).is_err());
    }

    #[test]
    fn nu_schedule_spans_two_decades() {
        let levels = default_nu_levels();
        assert_eq!(levels.len(), 11);
        assert!((levels[0] - 0.1).abs() < 1e-15);
        assert_eq!(levels[5], 1.0);
        assert!((levels[10] - 10.0).abs() < 1e-12);
    }
}
