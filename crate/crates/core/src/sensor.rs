//! Non-linear, cross-reactive receiver sensor array.
//!
//! Each sensor responds to every molecule type through its own power law and
//! the contributions add up:
//!
//! ```text
//! f_r(y) = Σ_m a[r][m] · y_m ^ b[r][m]
//! ```
//!
//! The response model sits behind [`SensorModel`] so that a different
//! functional form (saturating, learned) can replace it without touching the
//! channel or the networks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::NoiseSpec;
use crate::diffcore::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::rng;

/// Memory-free map from concentrations (length S) to sensor outputs (length R).
pub trait SensorModel: Send + Sync {
    fn num_molecules(&self) -> usize;

    fn num_sensors(&self) -> usize;

    /// Noise-free response. `y` must be non-negative.
    fn respond(&self, y: &[f64]) -> Vec<f64>;

    /// Batched response recorded on a tape; `y` is K×S, the result K×R.
    fn respond_tape(&self, tape: &mut Tape, y: Var) -> Result<Var>;

    /// Output magnitude at the calibration point, used to put sensor
    /// readings on a unit scale before the decoder.
    fn output_scale(&self) -> f64;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorArray {
    /// R rows of S positive gains.
    pub gains: Vec<Vec<f64>>,
    /// R rows of S positive exponents.
    pub exponents: Vec<Vec<f64>>,
    pub z_scale: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Parameters for drawing an artificial array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub molecules: usize,
    pub sensors: usize,
    pub seed: u64,
    pub z_scale: f64,
    /// Attenuation at which the array is calibrated.
    pub h_ref: f64,
    pub x_max: f64,
}

pub const EXPONENT_RANGE: (f64, f64) = (0.4, 1.0);
/// Raw gains span two decades, `10^-2 ..= 10^0`, before calibration.
pub const GAIN_DECADES: f64 = 2.0;
pub const DEFAULT_Z_SCALE: f64 = 1e-5;

impl SensorArray {
    pub fn new(gains: Vec<Vec<f64>>, exponents: Vec<Vec<f64>>, z_scale: f64) -> Result<Self> {
        let array = Self {
            gains,
            exponents,
            z_scale,
            seed: None,
        };
        array.validate()?;
        Ok(array)
    }

    /// Unit-exponent array: the response is the matrix product `A·y`.
    pub fn linear(gains: Vec<Vec<f64>>) -> Result<Self> {
        let exponents = gains.iter().map(|row| vec![1.0; row.len()]).collect();
        Self::new(gains, exponents, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.gains.len();
        if r == 0 || self.exponents.len() != r {
            return Err(Error::Config(format!(
                "sensor array needs matching non-empty gain/exponent rows ({r} vs {})",
                self.exponents.len()
            )));
        }
        let s = self.gains[0].len();
        for (gr, er) in self.gains.iter().zip(&self.exponents) {
            if gr.len() != s || er.len() != s || s == 0 {
                return Err(Error::Config("ragged sensor array rows".into()));
            }
            if gr.iter().chain(er).any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Config(
                    "sensor gains and exponents must be positive and finite".into(),
                ));
            }
        }
        if !(self.z_scale.is_finite() && self.z_scale > 0.0) {
            return Err(Error::Config("z_scale must be positive".into()));
        }
        Ok(())
    }

    /// Draws an array with exponents uniform in [`EXPONENT_RANGE`] and
    /// log-uniform raw gains, then rescales every row so that its response
    /// at `h_ref · x_max · 1` equals `z_scale`.
    pub fn generate(spec: &ArraySpec) -> Result<Self> {
        if spec.molecules == 0 || spec.sensors == 0 {
            return Err(Error::Config("sensor array needs S ≥ 1 and R ≥ 1".into()));
        }
        if !(spec.h_ref > 0.0 && spec.x_max > 0.0 && spec.z_scale > 0.0) {
            return Err(Error::Config("h_ref, x_max and z_scale must be positive".into()));
        }
        let mut rng = rng::seeded(spec.seed);
        let (lo, hi) = EXPONENT_RANGE;
        let mut gains = Vec::with_capacity(spec.sensors);
        let mut exponents = Vec::with_capacity(spec.sensors);
        for _ in 0..spec.sensors {
            let b: Vec<f64> = (0..spec.molecules).map(|_| rng.random_range(lo..=hi)).collect();
            let a: Vec<f64> = (0..spec.molecules)
                .map(|_| 10f64.powf(-GAIN_DECADES * rng.random::<f64>()))
                .collect();
            gains.push(a);
            exponents.push(b);
        }
        let reference = spec.h_ref * spec.x_max;
        for (a, b) in gains.iter_mut().zip(&exponents) {
            let raw: f64 = a.iter().zip(b).map(|(a, b)| a * reference.powf(*b)).sum();
            let k = spec.z_scale / raw;
            a.iter_mut().for_each(|v| *v *= k);
        }
        let mut array = Self::new(gains, exponents, spec.z_scale)?;
        array.seed = Some(spec.seed);
        Ok(array)
    }

    /// `f(y) + n_RX`. Readings may be negative.
    pub fn sense<R: Rng + ?Sized>(&self, y: &[f64], rx_noise: &NoiseSpec, rng: &mut R) -> Vec<f64> {
        let mut z = self.respond(y);
        for (v, n) in z.iter_mut().zip(rx_noise.sample(rng)) {
            *v += n;
        }
        z
    }
}

impl SensorModel for SensorArray {
    fn num_molecules(&self) -> usize {
        self.gains[0].len()
    }

    fn num_sensors(&self) -> usize {
        self.gains.len()
    }

    fn respond(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.num_molecules());
        debug_assert!(y.iter().all(|v| *v >= 0.0), "negative concentration {y:?}");
        self.gains
            .iter()
            .zip(&self.exponents)
            .map(|(a, b)| a.iter().zip(b).zip(y).map(|((a, b), y)| a * y.powf(*b)).sum())
            .collect()
    }

    fn respond_tape(&self, tape: &mut Tape, y: Var) -> Result<Var> {
        let s = self.num_molecules();
        let mut columns = Vec::with_capacity(self.num_sensors());
        for (a, b) in self.gains.iter().zip(&self.exponents) {
            let powered = tape.power(y, b.clone())?;
            let weights = tape.constant(Matrix::from_vec(s, 1, a.clone())?);
            columns.push(tape.affine(powered, weights, None)?);
        }
        tape.concat(&columns)
    }

    fn output_scale(&self) -> f64 {
        self.z_scale
    }
}
