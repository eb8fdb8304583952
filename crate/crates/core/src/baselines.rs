//! Non-learned transmitters and the Gaussian reference detector.
//!
//! - CSK: four concentration levels of one molecule type per user.
//! - GMoSK: on/off patterns over two molecule types per user.
//! - MDA: greedy max–min selection from a grid of candidate mixtures, using
//!   standardized noise-free sensor outputs.
//! - AML: per symbol-tuple Gaussian fit of the sensor output, estimated by
//!   Monte-Carlo, with a maximum-likelihood decision.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit, Attenuation, MixtureVector, NoiseDraw, SystemConfig};
use crate::error::{Error, Result};
use crate::networks::AlphabetTable;
use crate::sensor::SensorModel;

/// A baseline alphabet and the molecule types it is allowed to use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedAlphabet {
    pub table: AlphabetTable,
    pub molecules: Vec<usize>,
}

fn check_four(symbols: usize, scheme: &str) -> Result<()> {
    if symbols != 4 {
        return Err(Error::Usage(format!(
            "{scheme} is defined for 4 symbols only, got {symbols}"
        )));
    }
    Ok(())
}

fn one_molecule_rows(s: usize, molecule: usize, levels: &[f64]) -> Vec<MixtureVector> {
    levels
        .iter()
        .map(|&v| {
            let mut x = vec![0.0; s];
            x[molecule] = v;
            MixtureVector(x)
        })
        .collect()
}

/// Levels `{0, x_max/3, 2·x_max/3, x_max}` on `molecule`.
pub fn csk_alphabet(symbols: usize, x_max: f64, molecule: usize, s: usize) -> Result<FixedAlphabet> {
    check_four(symbols, "CSK")?;
    if molecule >= s {
        return Err(Error::Usage(format!("molecule {molecule} out of range for S={s}")));
    }
    let levels = [0.0, x_max / 3.0, 2.0 * x_max / 3.0, x_max];
    Ok(FixedAlphabet {
        table: AlphabetTable {
            rows: one_molecule_rows(s, molecule, &levels),
        },
        molecules: vec![molecule],
    })
}

/// Symbol k uses `(0,0) (0,x_max) (x_max,0) (x_max,x_max)[k]` on `(l1, l2)`.
pub fn gmosk_alphabet(symbols: usize, x_max: f64, pair: (usize, usize), s: usize) -> Result<FixedAlphabet> {
    check_four(symbols, "GMoSK")?;
    let (l1, l2) = pair;
    if l1 >= s || l2 >= s || l1 == l2 {
        return Err(Error::Usage(format!(
            "GMoSK needs two distinct molecules below S={s}, got {pair:?}"
        )));
    }
    let first = [0.0, 0.0, x_max, x_max];
    let second = [0.0, x_max, 0.0, x_max];
    let rows = first
        .iter()
        .zip(&second)
        .map(|(&a, &b)| {
            let mut x = vec![0.0; s];
            x[l1] = a;
            x[l2] = b;
            MixtureVector(x)
        })
        .collect();
    Ok(FixedAlphabet {
        table: AlphabetTable { rows },
        molecules: vec![l1, l2],
    })
}

/// All mixtures whose coordinates take `levels` equally spaced values in
/// `[0, x_max]`, the last molecule varying fastest.
pub fn candidate_grid(molecules: usize, levels: usize, x_max: f64) -> Result<Vec<MixtureVector>> {
    if levels < 2 || molecules == 0 {
        return Err(Error::Config("grid needs ≥ 2 levels and ≥ 1 molecule".into()));
    }
    let values: Vec<f64> = (0..levels).map(|i| x_max * i as f64 / (levels - 1) as f64).collect();
    let count = levels.pow(molecules as u32);
    Ok((0..count)
        .map(|mut idx| {
            let mut x = vec![0.0; molecules];
            for slot in x.iter_mut().rev() {
                *slot = values[idx % levels];
                idx /= levels;
            }
            MixtureVector(x)
        })
        .collect())
}

/// Noise realization equal to every noise mean.
pub fn mean_noise(system: &SystemConfig) -> NoiseDraw {
    NoiseDraw {
        tx: vec![system.tx_noise.mean.clone(); system.users()],
        channel: system.channel_noise.mean.clone(),
        rx: system.rx_noise.mean.clone(),
    }
}

/// Greedy farthest-point alphabet for user 0 of a single-user system.
///
/// Candidates are compared through their noise-free sensor outputs with
/// every axis divided by its standard deviation over the grid. The first
/// pick is the candidate of largest standardized norm; each further pick
/// maximizes the minimum distance to the picks so far. Ties go to the
/// smallest grid index.
pub fn mda_build(
    grid: &[MixtureVector],
    n: usize,
    system: &SystemConfig,
    sensors: &dyn SensorModel,
) -> Result<FixedAlphabet> {
    if system.users() != 1 {
        return Err(Error::Usage("MDA is defined for single-user systems".into()));
    }
    if n == 0 || n > grid.len() {
        return Err(Error::Usage(format!(
            "cannot pick {n} mixtures from a grid of {}",
            grid.len()
        )));
    }
    let noise = mean_noise(system);
    let outputs = grid
        .iter()
        .map(|x| transmit(std::slice::from_ref(x), &system.channel, sensors, &noise))
        .collect::<Result<Vec<_>>>()?;
    let standardized = standardize(&outputs);

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>();
    let mut first = 0;
    for (i, v) in standardized.iter().enumerate() {
        if norm(v) > norm(&standardized[first]) {
            first = i;
        }
    }
    let mut chosen = vec![first];
    let mut min_dist: Vec<f64> = standardized.iter().map(|v| sq_dist(v, &standardized[first])).collect();
    while chosen.len() < n {
        let mut best: Option<usize> = None;
        for (i, d) in min_dist.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            if best.is_none_or(|b| *d > min_dist[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("n ≤ grid size");
        chosen.push(b);
        for (i, d) in min_dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(&standardized[i], &standardized[b]));
        }
    }
    Ok(FixedAlphabet {
        table: AlphabetTable {
            rows: chosen.iter().map(|&i| grid[i].clone()).collect(),
        },
        molecules: (0..system.molecules).collect(),
    })
}

fn standardize(outputs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let r = outputs[0].len();
    let n = outputs.len() as f64;
    let scales: Vec<f64> = (0..r)
        .map(|j| {
            let mean = outputs.iter().map(|o| o[j]).sum::<f64>() / n;
            let var = outputs.iter().map(|o| (o[j] - mean).powi(2)).sum::<f64>() / n;
            if var > 0.0 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    outputs
        .iter()
        .map(|o| o.iter().zip(&scales).map(|(v, s)| v / s).collect())
        .collect()
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Smallest pairwise Euclidean distance between noise-free standardized
/// outputs of `subset` (indices into `grid`).
pub fn min_pairwise_distance(
    grid: &[MixtureVector],
    subset: &[usize],
    system: &SystemConfig,
    sensors: &dyn SensorModel,
) -> Result<f64> {
    let noise = mean_noise(system);
    let outputs = grid
        .iter()
        .map(|x| transmit(std::slice::from_ref(x), &system.channel, sensors, &noise))
        .collect::<Result<Vec<_>>>()?;
    let std = standardize(&outputs);
    let mut best = f64::INFINITY;
    for (a, &i) in subset.iter().enumerate() {
        for &j in &subset[a + 1..] {
            best = best.min(sq_dist(&std[i], &std[j]).sqrt());
        }
    }
    Ok(best)
}

/// Gaussian approximation of the sensor output of every symbol tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSymbolModel {
    /// Symbol of each user, per class; user 0 varies slowest.
    pub tuples: Vec<Vec<usize>>,
    pub means: Vec<Vec<f64>>,
    /// Row-major R×R sample covariances (unregularized).
    pub covariances: Vec<Vec<f64>>,
    pub samples: usize,
    factors: Vec<Factor>,
}

#[derive(Debug, Clone, PartialEq)]
struct Factor {
    /// Lower Cholesky factor of the regularized covariance.
    chol: DMatrix<f64>,
    log_det: f64,
}

/// Relative diagonal loading applied before inversion.
pub const COVARIANCE_LOADING: f64 = 1e-12;

fn factorize(cov: &[f64], r: usize) -> Factor {
    let trace: f64 = (0..r).map(|i| cov[i * r + i]).sum();
    let load = (COVARIANCE_LOADING * trace / r as f64).max(f64::MIN_POSITIVE.sqrt());
    let mut m = DMatrix::from_row_slice(r, r, cov);
    for i in 0..r {
        m[(i, i)] += load;
    }
    let mut extra = load;
    loop {
        if let Some(ch) = m.clone().cholesky() {
            let l = ch.l();
            let log_det = 2.0 * (0..r).map(|i| l[(i, i)].ln()).sum::<f64>();
            return Factor { chol: l, log_det };
        }
        warn!(
            "covariance not positive definite, increasing diagonal load to {}",
            extra * 10.0
        );
        for i in 0..r {
            m[(i, i)] += extra * 9.0;
        }
        extra *= 10.0;
    }
}

impl GaussianSymbolModel {
    /// Builds a model from known moments.
    pub fn from_moments(
        tuples: Vec<Vec<usize>>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<f64>>,
        samples: usize,
    ) -> Result<Self> {
        if tuples.len() != means.len() || means.len() != covariances.len() || means.is_empty() {
            return Err(Error::Shape("tuples, means and covariances must align".into()));
        }
        let r = means[0].len();
        if means.iter().any(|m| m.len() != r) || covariances.iter().any(|c| c.len() != r * r) {
            return Err(Error::Shape(format!("moments must be of dimension {r}")));
        }
        let mut model = Self {
            tuples,
            means,
            covariances,
            samples,
            factors: Vec::new(),
        };
        model.refactor();
        Ok(model)
    }

    fn refactor(&mut self) {
        let r = self.dim();
        self.factors = self.covariances.iter().map(|c| factorize(c, r)).collect();
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn classes(&self) -> usize {
        self.means.len()
    }

    /// `−½ (z−μ)ᵀ Σ⁻¹ (z−μ) − ½ ln det Σ` for class `c`.
    pub fn log_likelihood(&self, z: &[f64], c: usize) -> f64 {
        let f = &self.factors[c];
        let diff = DVector::from_iterator(z.len(), z.iter().zip(&self.means[c]).map(|(a, b)| a - b));
        let w = f
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (w.norm_squared() + f.log_det)
    }

    /// Most likely class; ties go to the smallest index.
    pub fn detect_class(&self, z: &[f64]) -> usize {
        let mut best = 0;
        let mut best_ll = self.log_likelihood(z, 0);
        for c in 1..self.classes() {
            let ll = self.log_likelihood(z, c);
            if ll > best_ll {
                best = c;
                best_ll = ll;
            }
        }
        best
    }

    /// Symbol estimate of every user.
    pub fn detect(&self, z: &[f64]) -> &[usize] {
        &self.tuples[self.detect_class(z)]
    }
}

/// All symbol tuples of the given alphabet sizes, user 0 slowest.
pub fn symbol_tuples(sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in sizes {
        out = out
            .into_iter()
            .flat_map(|t| {
                (0..n).map(move |s| {
                    let mut t = t.clone();
                    t.push(s);
                    t
                })
            })
            .collect();
    }
    out
}

/// Monte-Carlo moments of the sensor output for every symbol tuple, `samples`
/// independent draws each, under the system's current noise level.
pub fn aml_fit<R: Rng + ?Sized>(
    alphabets: &[AlphabetTable],
    system: &SystemConfig,
    sensors: &dyn SensorModel,
    attenuation: &Attenuation,
    samples: usize,
    rng: &mut R,
) -> Result<GaussianSymbolModel> {
    if alphabets.len() != system.users() {
        return Err(Error::Config(format!(
            "{} alphabets for {} users",
            alphabets.len(),
            system.users()
        )));
    }
    if samples < 2 {
        return Err(Error::Usage("AML fit needs at least 2 samples per tuple".into()));
    }
    let sizes: Vec<usize> = alphabets.iter().map(AlphabetTable::len).collect();
    let tuples = symbol_tuples(&sizes);
    let r = system.sensors;
    let mut means = Vec::with_capacity(tuples.len());
    let mut covariances = Vec::with_capacity(tuples.len());
    for t in &tuples {
        let xbars = t
            .iter()
            .zip(alphabets)
            .map(|(&s, a)| a.lookup(s).cloned())
            .collect::<Result<Vec<_>>>()?;
        let mut mean = vec![0.0; r];
        let mut m2 = vec![0.0; r * r];
        // Welford update for mean and co-moments.
        for k in 0..samples {
            let gains = attenuation.draw(system, rng);
            let noise = system.draw_noise(rng);
            let z = transmit(&xbars, &gains, sensors, &noise)?;
            let delta: Vec<f64> = z.iter().zip(&mean).map(|(a, b)| a - b).collect();
            let kf = (k + 1) as f64;
            for (m, d) in mean.iter_mut().zip(&delta) {
                *m += d / kf;
            }
            for i in 0..r {
                for j in 0..r {
                    m2[i * r + j] += delta[i] * (z[j] - mean[j]);
                }
            }
        }
        let cov: Vec<f64> = m2.iter().map(|v| v / (samples - 1) as f64).collect();
        let trace: f64 = (0..r).map(|i| cov[i * r + i]).sum();
        if trace == 0.0 {
            warn!("symbol tuple {t:?} has zero sample covariance; regularizing");
        }
        means.push(mean);
        covariances.push(cov);
    }
    GaussianSymbolModel::from_moments(tuples, means, covariances, samples)
}
