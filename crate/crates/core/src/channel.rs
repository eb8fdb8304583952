//! Memory-free multi-user channel.
//!
//! Per symbol interval:
//!
//! ```text
//! x_i = max(0, x̄_i + n_TX,i)     noisy release at user i
//! ȳ   = Σ_i H_i x_i              diagonal attenuation and superposition
//! y   = max(0, ȳ + n_C)          propagation noise
//! z   = f(y) + n_RX              sensor array
//! ```
//!
//! Two forms are provided: plain sampling on `f64` slices for evaluation and
//! a tape-recorded batch form for training. Both consume noise from a
//! [`NoiseDraw`], so for equal draws they produce equal outputs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::sensor::{SensorArray, SensorModel};

/// Gaussian noise with diagonal covariance `nu · diag(variance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    #[serde(default = "one")]
    pub nu: f64,
}

fn one() -> f64 {
    1.0
}

impl NoiseSpec {
    pub fn isotropic(dim: usize, mean: f64, variance: f64) -> Self {
        Self {
            mean: vec![mean; dim],
            variance: vec![variance; dim],
            nu: 1.0,
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self::isotropic(dim, 0.0, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    pub fn std_dev(&self) -> Vec<f64> {
        self.variance.iter().map(|v| (self.nu * v).sqrt()).collect()
    }

    pub fn validate(&self, expected_dim: usize, what: &str) -> Result<()> {
        if self.mean.len() != expected_dim || self.variance.len() != expected_dim {
            return Err(Error::Config(format!(
                "{what}: expected dimension {expected_dim}, got mean {} / variance {}",
                self.mean.len(),
                self.variance.len()
            )));
        }
        if self.variance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("{what}: variances must be ≥ 0")));
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return Err(Error::Config(format!("{what}: nu must be ≥ 0")));
        }
        Ok(())
    }

    /// One draw; consumes exactly `dim` standard normals.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(m, v)| {
                let n: f64 = StandardNormal.sample(rng);
                m + (self.nu * v).sqrt() * n
            })
            .collect()
    }
}

/// Diagonals of the per-user attenuation matrices `H_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMatrixSet {
    pub gains: Vec<Vec<f64>>,
}

impl ChannelMatrixSet {
    /// Every molecule type of every user attenuated by the same `h`.
    pub fn uniform(users: usize, molecules: usize, h: f64) -> Self {
        Self {
            gains: vec![vec![h; molecules]; users],
        }
    }

    pub fn users(&self) -> usize {
        self.gains.len()
    }

    pub fn validate(&self, users: usize, molecules: usize) -> Result<()> {
        if self.gains.len() != users || self.gains.iter().any(|g| g.len() != molecules) {
            return Err(Error::Config(format!(
                "channel needs {users} gain vectors of length {molecules}"
            )));
        }
        if self.gains.iter().flatten().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::Config("channel gains must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Concentrations of the S molecule types, in ppm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MixtureVector(pub Vec<f64>);

impl MixtureVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_feasible(&self, x_max: f64) -> bool {
        self.0.iter().all(|v| (0.0..=x_max).contains(v))
    }
}

/// Which attenuation applies to a symbol interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Attenuation {
    /// The configured per-user channel matrices.
    Nominal,
    /// One `h` for every user and molecule type.
    Fixed { h: f64 },
    /// `h` drawn uniformly per user per symbol, shared across molecule types.
    Interval { lo: f64, hi: f64 },
}

impl Attenuation {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Attenuation::Nominal => Ok(()),
            Attenuation::Fixed { h } if h.is_finite() && h >= 0.0 => Ok(()),
            Attenuation::Interval { lo, hi } if lo > 0.0 && lo <= hi && hi.is_finite() => Ok(()),
            other => Err(Error::Config(format!("invalid attenuation {other:?}"))),
        }
    }

    /// `(h_lo, h_hi)` for reporting; nominal reports the first user's first gain.
    pub fn range(&self, system: &SystemConfig) -> (f64, f64) {
        match *self {
            Attenuation::Nominal => {
                let h = system.channel.gains[0][0];
                (h, h)
            }
            Attenuation::Fixed { h } => (h, h),
            Attenuation::Interval { lo, hi } => (lo, hi),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, system: &SystemConfig, rng: &mut R) -> ChannelMatrixSet {
        match *self {
            Attenuation::Nominal => system.channel.clone(),
            Attenuation::Fixed { h } => ChannelMatrixSet::uniform(system.users(), system.molecules, h),
            Attenuation::Interval { lo, hi } => ChannelMatrixSet {
                gains: (0..system.users())
                    .map(|_| vec![rng.random_range(lo..=hi); system.molecules])
                    .collect(),
            },
        }
    }
}

/// Static parameters of the physical system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    /// Molecule types S.
    pub molecules: usize,
    /// Sensors R.
    pub sensors: usize,
    /// Alphabet size N_i of each user; U is its length.
    pub alphabet_sizes: Vec<usize>,
    pub x_max: f64,
    pub channel: ChannelMatrixSet,
    pub tx_noise: NoiseSpec,
    pub channel_noise: NoiseSpec,
    pub rx_noise: NoiseSpec,
}

impl SystemConfig {
    /// Single-user system with the reference noise levels:
    /// `n_TX ~ N(0, ν·10⁶·I)`, `n_C ~ N(10·1, ν·10·I)`, `n_RX ~ N(0, ν·10⁻¹³·I)`.
    pub fn reference(molecules: usize, sensors: usize, alphabet_sizes: Vec<usize>, x_max: f64, h: f64) -> Self {
        let users = alphabet_sizes.len();
        Self {
            molecules,
            sensors,
            alphabet_sizes,
            x_max,
            channel: ChannelMatrixSet::uniform(users, molecules, h),
            tx_noise: NoiseSpec::isotropic(molecules, 0.0, 1e6),
            channel_noise: NoiseSpec::isotropic(molecules, 10.0, 10.0),
            rx_noise: NoiseSpec::isotropic(sensors, 0.0, 1e-13),
        }
    }

    pub fn users(&self) -> usize {
        self.alphabet_sizes.len()
    }

    pub fn total_symbols(&self) -> usize {
        self.alphabet_sizes.iter().sum()
    }

    pub fn nu(&self) -> f64 {
        self.tx_noise.nu
    }

    /// Same system with every noise covariance scaled by `nu`.
    pub fn with_nu(&self, nu: f64) -> Self {
        let mut out = self.clone();
        out.tx_noise.nu = nu;
        out.channel_noise.nu = nu;
        out.rx_noise.nu = nu;
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.molecules == 0 || self.sensors == 0 || self.alphabet_sizes.is_empty() {
            return Err(Error::Config("need S ≥ 1, R ≥ 1 and U ≥ 1".into()));
        }
        if self.alphabet_sizes.contains(&0) {
            return Err(Error::Config("alphabet sizes must be ≥ 1".into()));
        }
        if !(self.x_max.is_finite() && self.x_max > 0.0) {
            return Err(Error::Config("x_max must be positive".into()));
        }
        self.channel.validate(self.users(), self.molecules)?;
        self.tx_noise.validate(self.molecules, "tx_noise")?;
        self.channel_noise.validate(self.molecules, "channel_noise")?;
        self.rx_noise.validate(self.sensors, "rx_noise")?;
        Ok(())
    }

    pub fn check_sensors(&self, sensors: &dyn SensorModel) -> Result<()> {
        if sensors.num_molecules() != self.molecules || sensors.num_sensors() != self.sensors {
            return Err(Error::Config(format!(
                "sensor array is {}x{} but system has R={} S={}",
                sensors.num_sensors(),
                sensors.num_molecules(),
                self.sensors,
                self.molecules
            )));
        }
        Ok(())
    }

    /// One independent draw of all noise sources, users first.
    pub fn draw_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> NoiseDraw {
        NoiseDraw {
            tx: (0..self.users()).map(|_| self.tx_noise.sample(rng)).collect(),
            channel: self.channel_noise.sample(rng),
            rx: self.rx_noise.sample(rng),
        }
    }
}

/// Realized noise of one symbol interval.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub tx: Vec<Vec<f64>>,
    pub channel: Vec<f64>,
    pub rx: Vec<f64>,
}

/// `x = max(0, x̄ + n_TX)` for a given noise realization.
pub fn release_with(xbar: &MixtureVector, n_tx: &[f64]) -> MixtureVector {
    MixtureVector(xbar.0.iter().zip(n_tx).map(|(x, n)| (x + n).max(0.0)).collect())
}

pub fn release<R: Rng + ?Sized>(xbar: &MixtureVector, tx_noise: &NoiseSpec, rng: &mut R) -> MixtureVector {
    release_with(xbar, &tx_noise.sample(rng))
}

/// `ȳ = Σ_i H_i x_i`.
pub fn propagate_accumulate(xs: &[MixtureVector], h: &ChannelMatrixSet) -> Result<MixtureVector> {
    let Some(first) = xs.first() else {
        return Err(Error::Config("at least one user is required".into()));
    };
    if xs.len() != h.users() {
        return Err(Error::Shape(format!(
            "{} mixtures for {} channel matrices",
            xs.len(),
            h.users()
        )));
    }
    let s = first.len();
    let mut ybar = vec![0.0; s];
    for (x, g) in xs.iter().zip(&h.gains) {
        if x.len() != s || g.len() != s {
            return Err(Error::Shape(format!(
                "mixture length {} / gain length {} vs {s}",
                x.len(),
                g.len()
            )));
        }
        for ((y, x), g) in ybar.iter_mut().zip(&x.0).zip(g) {
            *y += g * x;
        }
    }
    Ok(MixtureVector(ybar))
}

/// `y = max(0, ȳ + n_C)` for a given noise realization.
pub fn channel_noise_with(ybar: &MixtureVector, n_c: &[f64]) -> MixtureVector {
    release_with(ybar, n_c)
}

pub fn channel_noise<R: Rng + ?Sized>(ybar: &MixtureVector, spec: &NoiseSpec, rng: &mut R) -> MixtureVector {
    channel_noise_with(ybar, &spec.sample(rng))
}

/// Deterministic part of the channel for one realized noise draw.
pub fn transmit(
    xbars: &[MixtureVector],
    gains: &ChannelMatrixSet,
    sensors: &dyn SensorModel,
    noise: &NoiseDraw,
) -> Result<Vec<f64>> {
    let xs: Vec<_> = xbars.iter().zip(&noise.tx).map(|(x, n)| release_with(x, n)).collect();
    let ybar = propagate_accumulate(&xs, gains)?;
    let y = channel_noise_with(&ybar, &noise.channel);
    let mut z = sensors.respond(&y.0);
    for (v, n) in z.iter_mut().zip(&noise.rx) {
        *v += n;
    }
    Ok(z)
}

/// Sensor output of one symbol interval under the nominal channel.
pub fn end_to_end_sample<R: Rng + ?Sized>(
    xbars: &[MixtureVector],
    system: &SystemConfig,
    sensors: &SensorArray,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let noise = system.draw_noise(rng);
    transmit(xbars, &system.channel, sensors, &noise)
}

/// Noise for a batch of K intervals, drawn item by item in the same order as
/// K successive [`SystemConfig::draw_noise`] calls.
#[derive(Debug, Clone)]
pub struct BatchNoise {
    /// Per user, K×S.
    pub tx: Vec<Matrix>,
    /// K×S.
    pub channel: Matrix,
    /// K×R.
    pub rx: Matrix,
}

impl BatchNoise {
    pub fn draw<R: Rng + ?Sized>(system: &SystemConfig, k: usize, rng: &mut R) -> Self {
        let draws: Vec<NoiseDraw> = (0..k).map(|_| system.draw_noise(rng)).collect();
        Self::from_draws(&draws, system.users(), system.molecules, system.sensors)
    }

    pub fn from_draws(draws: &[NoiseDraw], users: usize, molecules: usize, sensors: usize) -> Self {
        let k = draws.len();
        let mut tx = vec![Matrix::zeros(k, molecules); users];
        let mut channel = Matrix::zeros(k, molecules);
        let mut rx = Matrix::zeros(k, sensors);
        for (row, d) in draws.iter().enumerate() {
            for (u, n) in d.tx.iter().enumerate() {
                tx[u].row_mut(row).copy_from_slice(n);
            }
            channel.row_mut(row).copy_from_slice(&d.channel);
            rx.row_mut(row).copy_from_slice(&d.rx);
        }
        Self { tx, channel, rx }
    }
}

/// Per-user K×S attenuation factors from one channel draw per item.
pub fn gain_matrices(draws: &[ChannelMatrixSet], users: usize, molecules: usize) -> Vec<Matrix> {
    let mut out = vec![Matrix::zeros(draws.len(), molecules); users];
    for (row, d) in draws.iter().enumerate() {
        for (u, g) in d.gains.iter().enumerate() {
            out[u].row_mut(row).copy_from_slice(g);
        }
    }
    out
}

/// Tape-recorded channel for a batch: `xbars[i]` is K×S for user `i`,
/// `gains[i]` the matching K×S attenuation. Returns K×R sensor outputs.
pub fn transmit_tape(
    tape: &mut Tape,
    xbars: &[Var],
    gains: &[Matrix],
    sensors: &dyn SensorModel,
    noise: &BatchNoise,
) -> Result<Var> {
    if xbars.len() != gains.len() || xbars.len() != noise.tx.len() || xbars.is_empty() {
        return Err(Error::Shape(format!(
            "{} users, {} gain matrices, {} noise blocks",
            xbars.len(),
            gains.len(),
            noise.tx.len()
        )));
    }
    let mut ybar: Option<Var> = None;
    for ((&xbar, g), n_tx) in xbars.iter().zip(gains).zip(&noise.tx) {
        let noisy = tape.add_const(xbar, n_tx)?;
        let released = tape.clip_at_zero(noisy);
        let attenuated = tape.mul_const(released, g.clone())?;
        ybar = Some(match ybar {
            None => attenuated,
            Some(acc) => tape.add(acc, attenuated)?,
        });
    }
    let ybar = ybar.expect("at least one user");
    let noisy = tape.add_const(ybar, &noise.channel)?;
    let y = tape.clip_at_zero(noisy);
    let response = sensors.respond_tape(tape, y)?;
    tape.add_const(response, &noise.rx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    #[test]
    fn noise_free_release_is_identity() {
        let x = MixtureVector(vec![2e4, 0.0, 0.0]);
        let mut r = rng::seeded(1);
        assert_eq!(release(&x, &NoiseSpec::zero(3), &mut r), x);
    }

    #[test]
    fn release_clips_at_zero() {
        let x = MixtureVector::zeros(3);
        assert_eq!(release_with(&x, &[-5.0; 3]).0, vec![0.0; 3]);
    }

    #[test]
    fn single_user_scaling() {
        let h = ChannelMatrixSet::uniform(1, 3, 0.01);
        let y = propagate_accumulate(&[MixtureVector(vec![2e4, 0.0, 0.0])], &h).unwrap();
        assert_eq!(y.0, vec![200.0, 0.0, 0.0]);
    }

    #[test]
    fn two_user_superposition() {
        let h = ChannelMatrixSet::uniform(2, 4, 1e-2);
        let x = MixtureVector(vec![1e4; 4]);
        let y = propagate_accumulate(&[x.clone(), x], &h).unwrap();
        assert_eq!(y.0, vec![200.0; 4]);
        let zero = propagate_accumulate(&[MixtureVector::zeros(4), MixtureVector::zeros(4)], &h).unwrap();
        assert_eq!(zero.0, vec![0.0; 4]);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let h = ChannelMatrixSet::uniform(2, 3, 0.01);
        assert!(propagate_accumulate(&[MixtureVector::zeros(3)], &h).is_err());
        assert!(propagate_accumulate(&[MixtureVector::zeros(2), MixtureVector::zeros(3)], &h).is_err());
    }

    #[test]
    fn deterministic_channel_mean_shift() {
        let spec = NoiseSpec::isotropic(3, 10.0, 0.0);
        let mut r = rng::seeded(2);
        let y = channel_noise(&MixtureVector(vec![200.0, 0.0, 0.0]), &spec, &mut r);
        assert_eq!(y.0, vec![210.0, 10.0, 10.0]);
        let zero = channel_noise(&MixtureVector::zeros(3), &NoiseSpec::zero(3), &mut r);
        assert_eq!(zero.0, vec![0.0; 3]);
    }

    #[test]
    fn reference_noise_std_devs() {
        let sys = SystemConfig::reference(3, 2, vec![4], 2e4, 0.01);
        assert_eq!(sys.tx_noise.std_dev(), vec![1e3; 3]);
        assert!((sys.channel_noise.std_dev()[0] - 3.16227766).abs() < 1e-8);
        assert!((sys.rx_noise.std_dev()[0] - 3.16227766e-7).abs() < 1e-15);
        assert_eq!(sys.channel_noise.mean, vec![10.0; 3]);
    }

    #[test]
    fn interval_attenuation_stays_in_range() {
        let sys = SystemConfig::reference(3, 2, vec![6], 2e4, 0.02);
        let mut r = rng::seeded(3);
        let a = Attenuation::Interval { lo: 0.005, hi: 0.05 };
        for _ in 0..1000 {
            let g = a.draw(&sys, &mut r);
            let h = g.gains[0][0];
            assert!((0.005..=0.05).contains(&h));
            assert!(g.gains[0].iter().all(|v| *v == h));
        }
        assert!(Attenuation::Interval { lo: 0.0, hi: 0.1 }.validate().is_err());
        assert!(Attenuation::Interval { lo: 0.2, hi: 0.1 }.validate().is_err());
    }
}
