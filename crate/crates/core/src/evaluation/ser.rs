//! Monte-Carlo symbol error rates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::GaussianSymbolModel;
use crate::channel::{transmit, Attenuation, MixtureVector, SystemConfig};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::networks::{AlphabetTable, Model};
use crate::rng;
use crate::sensor::SensorModel;

/// Items simulated per detector call.
const CHUNK: usize = 4096;

/// Maps a block of sensor readings (K×R) to per-item symbol estimates
/// `[item][user]`.
pub trait Detector: Sync {
    fn detect_batch(&self, z: &Matrix) -> Result<Vec<Vec<usize>>>;
}

/// Trained decoder in eval mode.
pub struct NetworkDetector<'a>(pub &'a Model);

impl Detector for NetworkDetector<'_> {
    fn detect_batch(&self, z: &Matrix) -> Result<Vec<Vec<usize>>> {
        self.0.decoder.detect_batch(&self.0.store, z)
    }
}

impl Detector for GaussianSymbolModel {
    fn detect_batch(&self, z: &Matrix) -> Result<Vec<Vec<usize>>> {
        Ok((0..z.rows()).map(|r| self.detect(z.row(r)).to_vec()).collect())
    }
}

/// Half-width of the 95% Wilson score interval for `errors` out of `trials`.
pub fn wilson_half_width(errors: u64, trials: u64) -> f64 {
    if trials == 0 {
        return 0.5;
    }
    let z = 1.959_963_984_540_054;
    let n = trials as f64;
    let p = errors as f64 / n;
    z / (1.0 + z * z / n) * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt()
}

/// Identifies what a record measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordLabel {
    pub scheme: String,
    pub scenario: String,
    pub lambda_ratio: f64,
    /// Seed of the trained model or baseline the record evaluates.
    pub seed: u64,
}

/// One evaluation point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerRecord {
    pub scheme: String,
    pub scenario: String,
    pub nu: f64,
    pub h_lo: f64,
    pub h_hi: f64,
    pub lambda_ratio: f64,
    /// Per user.
    pub ser: Vec<f64>,
    /// Mean of `ser`.
    pub sser: f64,
    pub trials: u64,
    /// Per-user Wilson half-widths.
    pub ci95: Vec<f64>,
    /// Wilson half-width of the pooled error rate.
    pub sser_ci95: f64,
    pub seed: u64,
}

impl SerRecord {
    /// Builds a record from per-user error counts over `trials` items.
    pub fn from_counts(label: &RecordLabel, nu: f64, h: (f64, f64), errors: &[u64], trials: u64) -> Self {
        let ser: Vec<f64> = errors.iter().map(|&e| e as f64 / trials as f64).collect();
        let total: u64 = errors.iter().sum();
        Self {
            scheme: label.scheme.clone(),
            scenario: label.scenario.clone(),
            nu,
            h_lo: h.0,
            h_hi: h.1,
            lambda_ratio: label.lambda_ratio,
            sser: total as f64 / (trials as f64 * errors.len() as f64),
            ci95: errors.iter().map(|&e| wilson_half_width(e, trials)).collect(),
            sser_ci95: wilson_half_width(total, trials * errors.len() as u64),
            ser,
            trials,
            seed: label.seed,
        }
    }

    pub fn inv_nu(&self) -> f64 {
        1.0 / self.nu
    }
}

/// Simulates `trials` symbol intervals with i.i.d. uniform symbols under
/// `system` (its current ν) and counts per-user detection errors.
///
/// All randomness comes from stream `stream` of `seed`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_ser(
    alphabets: &[AlphabetTable],
    detector: &dyn Detector,
    system: &SystemConfig,
    sensors: &dyn SensorModel,
    attenuation: &Attenuation,
    trials: u64,
    seed: u64,
    stream: u64,
    label: &RecordLabel,
) -> Result<SerRecord> {
    if alphabets.len() != system.users() {
        return Err(Error::Config(format!(
            "{} alphabets for {} users",
            alphabets.len(),
            system.users()
        )));
    }
    if trials == 0 {
        return Err(Error::Usage("at least one trial is required".into()));
    }
    let users = system.users();
    let mut rng = rng::stream(seed, stream);
    let mut errors = vec![0u64; users];
    let mut done = 0u64;
    while done < trials {
        let k = (trials - done).min(CHUNK as u64) as usize;
        let mut sent = Vec::with_capacity(k);
        let mut z = Matrix::zeros(k, system.sensors);
        for row in 0..k {
            let symbols: Vec<usize> = alphabets.iter().map(|a| rng.random_range(0..a.len())).collect();
            let xbars: Vec<MixtureVector> = symbols.iter().zip(alphabets).map(|(&s, a)| a.rows[s].clone()).collect();
            let gains = attenuation.draw(system, &mut rng);
            let noise = system.draw_noise(&mut rng);
            z.row_mut(row)
                .copy_from_slice(&transmit(&xbars, &gains, sensors, &noise)?);
            sent.push(symbols);
        }
        let detected = detector.detect_batch(&z)?;
        for (s, d) in sent.iter().zip(&detected) {
            for u in 0..users {
                if s[u] != d[u] {
                    errors[u] += 1;
                }
            }
        }
        done += k as u64;
    }
    Ok(SerRecord::from_counts(
        label,
        system.nu(),
        attenuation.range(system),
        &errors,
        trials,
    ))
}
