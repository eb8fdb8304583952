//! Monte-Carlo estimators, noise statistics, baselines and training checks
//! against independent oracles.

use std::sync::Mutex;

use molmix::baselines::{aml_fit, candidate_grid, mda_build, min_pairwise_distance};
use molmix::channel::{Attenuation, MixtureVector, NoiseDraw, SystemConfig};
use molmix::diffcore::Matrix;
use molmix::evaluation::{estimate_ser, wilson_half_width, Detector, NetworkDetector, RecordLabel, ScenarioConfig};
use molmix::networks::AlphabetTable;
use molmix::rng::{self, SimRng};
use molmix::sensor::{SensorArray, SensorModel};
use molmix::training::{train, TrainConfig};
use molmix::Result;
use rand::seq::index::sample;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn label() -> RecordLabel {
    RecordLabel {
        scheme: "test".into(),
        scenario: "test".into(),
        lambda_ratio: 1.0,
        seed: 0,
    }
}

fn linear_setup() -> (SystemConfig, SensorArray, AlphabetTable) {
    let system = SystemConfig::reference(2, 2, vec![4], 2e4, 0.01);
    let sensors = SensorArray::linear(vec![vec![1.0, 0.1], vec![0.1, 1.0]]).unwrap();
    let table = AlphabetTable {
        rows: vec![
            MixtureVector(vec![0.0, 0.0]),
            MixtureVector(vec![2e4, 0.0]),
            MixtureVector(vec![0.0, 2e4]),
            MixtureVector(vec![2e4, 2e4]),
        ],
    };
    (system, sensors, table)
}

/// Decodes the noise-free output exactly, then errs with probability `p`.
struct FlipDetector {
    means: Vec<Vec<f64>>,
    p: f64,
    rng: Mutex<SimRng>,
}

impl Detector for FlipDetector {
    fn detect_batch(&self, z: &Matrix) -> Result<Vec<Vec<usize>>> {
        let mut rng = self.rng.lock().unwrap();
        Ok((0..z.rows())
            .map(|r| {
                let dist = |m: &Vec<f64>| m.iter().zip(z.row(r)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                let s = (0..self.means.len())
                    .min_by(|&a, &b| dist(&self.means[a]).total_cmp(&dist(&self.means[b])))
                    .unwrap();
                let n = self.means.len();
                vec![if rng.random::<f64>() < self.p { (s + 1) % n } else { s }]
            })
            .collect())
    }
}

struct Constant;

impl Detector for Constant {
    fn detect_batch(&self, z: &Matrix) -> Result<Vec<Vec<usize>>> {
        Ok(vec![vec![2]; z.rows()])
    }
}

fn flip_detector(
    p: f64,
    seed: u64,
    system: &SystemConfig,
    sensors: &SensorArray,
    table: &AlphabetTable,
) -> FlipDetector {
    let noise = molmix::baselines::mean_noise(system);
    let means = table
        .rows
        .iter()
        .map(|x| molmix::channel::transmit(std::slice::from_ref(x), &system.channel, sensors, &noise).unwrap())
        .collect();
    FlipDetector {
        means,
        p,
        rng: Mutex::new(rng::seeded(seed)),
    }
}

#[test]
fn wilson_interval_matches_textbook_value() {
    // 10 successes in 100 trials: 95% Wilson interval [0.0552, 0.1744].
    assert!((wilson_half_width(10, 100) - (0.1744 - 0.0552) / 2.0).abs() < 1e-4);
    assert!(wilson_half_width(0, 1000) > 0.0);
}

#[test]
fn genie_and_constant_detectors() {
    let (system, sensors, table) = linear_setup();
    let quiet = system.with_nu(0.0);
    let tables = [table.clone()];
    let genie = flip_detector(0.0, 1, &quiet, &sensors, &table);
    let rec = estimate_ser(
        &tables,
        &genie,
        &quiet,
        &sensors,
        &Attenuation::Nominal,
        5000,
        1,
        0,
        &label(),
    )
    .unwrap();
    assert_eq!(rec.ser, vec![0.0]);

    let rec = estimate_ser(
        &tables,
        &Constant,
        &system,
        &sensors,
        &Attenuation::Nominal,
        20_000,
        2,
        0,
        &label(),
    )
    .unwrap();
    assert!((rec.ser[0] - 0.75).abs() <= 2.0 * rec.ci95[0], "{rec:?}");
    assert_eq!(rec.sser, rec.ser[0]);
}

#[test]
fn ser_estimator_is_unbiased() {
    let (system, sensors, table) = linear_setup();
    let quiet = system.with_nu(0.0);
    let tables = [table.clone()];
    let (p, trials) = (0.1, 2000u64);
    let tol = 4.0 * (p * (1.0 - p) / trials as f64).sqrt();
    let inside = (0..100)
        .filter(|&rep| {
            let det = flip_detector(p, 1000 + rep, &quiet, &sensors, &table);
            let rec = estimate_ser(
                &tables,
                &det,
                &quiet,
                &sensors,
                &Attenuation::Nominal,
                trials,
                7,
                rep,
                &label(),
            )
            .unwrap();
            (rec.ser[0] - p).abs() <= tol
        })
        .count();
    assert!(inside >= 99, "{inside}/100 inside");
}

#[test]
fn aml_on_noise_free_channel_is_error_free() {
    let (system, sensors, table) = linear_setup();
    let quiet = system.with_nu(0.0);
    let tables = [table];
    let aml = aml_fit(
        &tables,
        &quiet,
        &sensors,
        &Attenuation::Nominal,
        10,
        &mut rng::seeded(3),
    )
    .unwrap();
    let rec = estimate_ser(
        &tables,
        &aml,
        &quiet,
        &sensors,
        &Attenuation::Nominal,
        2000,
        3,
        0,
        &label(),
    )
    .unwrap();
    assert_eq!(rec.ser, vec![0.0]);
}

type Pick = fn(&NoiseDraw) -> f64;

#[test]
fn noise_variance_scales_with_nu() {
    let system = SystemConfig::reference(3, 2, vec![4], 2e4, 0.01);
    let samples = 4000;
    for (i, nu) in [0.1, 1.0, 10.0].into_iter().enumerate() {
        let noisy = system.with_nu(nu);
        let mut rng = rng::stream(11, i as u64);
        let draws: Vec<_> = (0..samples).map(|_| noisy.draw_noise(&mut rng)).collect();
        let checks: [(&str, Pick, f64, f64); 3] = [
            ("tx", |d| d.tx[0][1], 0.0, 1e6),
            ("channel", |d| d.channel[2], 10.0, 10.0),
            ("rx", |d| d.rx[0], 0.0, 1e-13),
        ];
        for (name, pick, mu, var) in checks {
            let values: Vec<f64> = draws.iter().map(pick).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let s2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let stat = (n - 1.0) * s2 / (nu * var);
            let q = ChiSquared::new(n - 1.0).unwrap().cdf(stat);
            assert!(
                (0.0005..0.9995).contains(&q),
                "{name} at nu={nu}: chi-square quantile {q}"
            );
            assert!((mean - mu).abs() < 5.0 * (nu * var / n).sqrt(), "{name} mean {mean}");
        }
    }
}

#[test]
fn aml_means_agree_across_independent_fits() {
    let cfg = ScenarioConfig::preset("full-csi").unwrap();
    let system = cfg.system_for(Some(4)).unwrap();
    let sensors = cfg.sensor_array().unwrap();
    let table = AlphabetTable {
        rows: vec![
            MixtureVector(vec![5e3, 0.0, 1e4]),
            MixtureVector(vec![2e4, 2e4, 2e4]),
            MixtureVector(vec![0.0, 0.0, 0.0]),
            MixtureVector(vec![1e4, 3e3, 0.0]),
        ],
    };
    let tables = [table];
    let m = 5000;
    let a = aml_fit(
        &tables,
        &system,
        &sensors,
        &Attenuation::Nominal,
        m,
        &mut rng::seeded(1),
    )
    .unwrap();
    let b = aml_fit(
        &tables,
        &system,
        &sensors,
        &Attenuation::Nominal,
        m,
        &mut rng::seeded(2),
    )
    .unwrap();
    let r = system.sensors;
    for c in 0..4 {
        for j in 0..r {
            // Two independent means: the difference has variance 2σ²/M.
            let se = (2.0 * a.covariances[c][j * r + j] / m as f64).sqrt();
            assert!((a.means[c][j] - b.means[c][j]).abs() < 4.0 * se, "class {c} axis {j}");
        }
    }
}

#[test]
fn mda_picks_endpoints_on_a_monotone_line() {
    let mut system = SystemConfig::reference(1, 1, vec![2], 2e4, 0.01);
    system.channel_noise.mean = vec![0.0];
    let sensors = SensorArray::new(vec![vec![1e-6]], vec![vec![0.7]], 1e-5).unwrap();
    let grid = candidate_grid(1, 7, 2e4).unwrap();
    let alpha = mda_build(&grid, 2, &system, &sensors).unwrap();
    let mut picked: Vec<f64> = alpha.table.rows.iter().map(|r| r.0[0]).collect();
    picked.sort_by(f64::total_cmp);
    assert_eq!(picked, vec![0.0, 2e4]);
    // Brute force over every pair agrees.
    let mut best = (0.0, vec![]);
    for i in 0..grid.len() {
        for j in i + 1..grid.len() {
            let d = min_pairwise_distance(&grid, &[i, j], &system, &sensors).unwrap();
            if d > best.0 {
                best = (d, vec![grid[i].0[0], grid[j].0[0]]);
            }
        }
    }
    assert_eq!(best.1, vec![0.0, 2e4]);
}

#[test]
fn mda_follows_farthest_point_rule() {
    let cfg = ScenarioConfig::preset("full-csi").unwrap();
    let sensors = cfg.sensor_array().unwrap();
    let grid = candidate_grid(3, 4, 2e4).unwrap();
    let g = grid.len();
    let system = cfg.system_for(Some(4)).unwrap();
    let dist: Vec<Vec<f64>> = (0..g)
        .map(|i| {
            (0..g)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        min_pairwise_distance(&grid, &[i, j], &system, &sensors).unwrap()
                    }
                })
                .collect()
        })
        .collect();
    let mut rng = rng::seeded(9);
    for n in [4, 8, 16] {
        let system = cfg.system_for(Some(n)).unwrap();
        let alpha = mda_build(&grid, n, &system, &sensors).unwrap();
        let idx: Vec<usize> = alpha
            .table
            .rows
            .iter()
            .map(|r| grid.iter().position(|c| c == r).unwrap())
            .collect();
        // Every pick after the first is a farthest remaining candidate.
        for k in 1..n {
            let gap = |c: usize| idx[..k].iter().map(|&p| dist[c][p]).fold(f64::INFINITY, f64::min);
            let best = (0..g).filter(|c| !idx[..k].contains(c)).map(gap).fold(0.0, f64::max);
            assert_eq!(gap(idx[k]), best, "N={n}, pick {k}");
        }
        // Farthest-point selection is within a factor two of the optimum.
        let chosen = min_pairwise_distance(&grid, &idx, &system, &sensors).unwrap();
        for _ in 0..1000 {
            let subset = sample(&mut rng, g, n).into_vec();
            let d = min_pairwise_distance(&grid, &subset, &system, &sensors).unwrap();
            assert!(2.0 * chosen >= d, "N={n}: greedy {chosen} vs random {d}");
        }
    }
}

#[test]
fn training_reduces_loss_for_several_seeds() {
    let cfg = ScenarioConfig::preset("full-csi").unwrap();
    let system = cfg.system_for(Some(4)).unwrap();
    let sensors = cfg.sensor_array().unwrap();
    for seed in 0..5 {
        let tc = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let (_, report) = train(&tc, &system, &sensors).unwrap();
        let first = report.epoch_loss[0];
        let last: f64 = report.epoch_loss[240..].iter().sum::<f64>() / 10.0;
        assert!(last < 0.5 * first, "seed {seed}: {first} -> {last}");
        assert_eq!(report.steps, 1250);
        assert!(
            report.nu_level_counts.iter().all(|&c| c > 0),
            "{:?}",
            report.nu_level_counts
        );
        assert_eq!(report.nu_level_counts.iter().sum::<usize>(), 1250);
    }
}

#[test]
fn zero_importance_leaves_user_at_chance() {
    let cfg = ScenarioConfig::preset("multi-user").unwrap();
    let system = cfg.system_for(None).unwrap();
    let sensors = cfg.sensor_array().unwrap();
    let tc = TrainConfig {
        importance: vec![1.0, 0.0],
        seed: 4,
        ..TrainConfig::default()
    };
    let (model, report) = train(&tc, &system, &sensors).unwrap();
    assert!(report.epoch_user_loss.iter().all(|l| l[1] == 0.0));
    let rec = estimate_ser(
        &model.alphabets().unwrap(),
        &NetworkDetector(&model),
        &system,
        &sensors,
        &Attenuation::Nominal,
        20_000,
        4,
        0,
        &label(),
    )
    .unwrap();
    assert!(rec.ser[0] < 0.05, "{rec:?}");
    assert!((rec.ser[1] - 0.75).abs() < 0.1, "{rec:?}");
}

#[test]
fn same_seed_same_model_and_records() {
    let cfg = ScenarioConfig::preset("full-csi").unwrap();
    let system = cfg.system_for(Some(4)).unwrap();
    let sensors = cfg.sensor_array().unwrap();
    let tc = TrainConfig {
        epochs: 10,
        seed: 21,
        ..TrainConfig::default()
    };
    let (a, _) = train(&tc, &system, &sensors).unwrap();
    let (b, _) = train(&tc, &system, &sensors).unwrap();
    assert_eq!(a.store.flatten(), b.store.flatten());
    let ser = |m| {
        estimate_ser(
            &a.alphabets().unwrap(),
            &NetworkDetector(m),
            &system,
            &sensors,
            &Attenuation::Nominal,
            3000,
            5,
            2,
            &label(),
        )
        .unwrap()
    };
    assert_eq!(ser(&a), ser(&b));
    assert_eq!(sensors.num_molecules(), 3);
}
