//! The three experiment sweeps, scatter export and the full-graph gradient
//! check.
//!
//! Each sweep expands into independent tasks. Task `i` draws from stream `i`
//! of a root seed derived from the sweep seed and the sweep name, and tasks
//! run in parallel; records come back in task order, which is
//! `(N or model, scheme, grid point)` with grid points in config order.

use log::info;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::config::ScenarioConfig;
use super::ser::{estimate_ser, NetworkDetector, RecordLabel, SerRecord};
use crate::baselines::{aml_fit, candidate_grid, csk_alphabet, gmosk_alphabet, mda_build};
use crate::channel::{transmit, Attenuation, SystemConfig};
use crate::diffcore::{check_gradients, GradCheckReport};
use crate::error::{Error, Result};
use crate::networks::{AlphabetTable, Mode, Model};
use crate::rng;
use crate::sensor::{SensorArray, SensorModel};
use crate::training::{batch_loss_with, train_model, Batch, TrainConfig};

type Job<'a> = Box<dyn Fn(u64) -> Result<SerRecord> + Send + Sync + 'a>;

/// Runs `jobs` in parallel, passing each its task index as stream number.
fn run_jobs(jobs: Vec<Job<'_>>) -> Result<Vec<SerRecord>> {
    jobs.par_iter().enumerate().map(|(i, job)| job(i as u64)).collect()
}

fn label(scheme: &str, scenario: &str, lambda_ratio: f64, seed: u64) -> RecordLabel {
    RecordLabel {
        scheme: scheme.into(),
        scenario: scenario.into(),
        lambda_ratio,
        seed,
    }
}

/// SER of a trained model at every ν of `nu_grid` under `attenuation`.
pub fn evaluate_model(
    cfg: &ScenarioConfig,
    model: &Model,
    system: &SystemConfig,
    sensors: &SensorArray,
    scenario: &str,
    lambda_ratio: f64,
    seed: u64,
) -> Result<Vec<SerRecord>> {
    let root = rng::derive_seed(seed, "evaluate");
    let alphabets = model.alphabets()?;
    let attenuation = cfg.train.attenuation;
    let jobs: Vec<Job> = cfg
        .eval
        .nu_grid
        .iter()
        .map(|&nu| {
            let alphabets = &alphabets;
            let lab = label("ae", scenario, lambda_ratio, model.seed);
            Box::new(move |i| {
                estimate_ser(
                    alphabets,
                    &NetworkDetector(model),
                    &system.with_nu(nu),
                    sensors,
                    &attenuation,
                    cfg.eval.trials,
                    root,
                    i,
                    &lab,
                )
            }) as Job
        })
        .collect();
    run_jobs(jobs)
}

/// MDA alphabet of size `n` on the configured candidate grid.
pub fn mda_table(cfg: &ScenarioConfig, system: &SystemConfig, sensors: &SensorArray) -> Result<AlphabetTable> {
    let grid = candidate_grid(system.molecules, cfg.eval.mda_levels, system.x_max)?;
    Ok(mda_build(&grid, system.alphabet_sizes[0], system, sensors)?.table)
}

/// AE versus MDA+AML over the ν grid, one trained single-user model per
/// alphabet size. The AML detector is refitted at every ν.
pub fn sweep_snr(cfg: &ScenarioConfig, models: &[Model], sensors: &SensorArray, seed: u64) -> Result<Vec<SerRecord>> {
    let root = rng::derive_seed(seed, "sweep-snr");
    let fit_root = rng::derive_seed(seed, "sweep-snr/aml");
    let mut setups = Vec::new();
    for model in models {
        let n = single_user_size(model)?;
        let system = cfg.system_for(Some(n))?;
        let mda = mda_table(cfg, &system, sensors)?;
        setups.push((model, system, model.alphabets()?, mda, format!("{}-n{n}", cfg.name)));
    }
    let mut jobs: Vec<Job> = Vec::new();
    for (model, system, ae_alphabet, mda, scenario) in &setups {
        for &nu in &cfg.eval.nu_grid {
            let lab = label("ae", scenario, 1.0, model.seed);
            jobs.push(Box::new(move |i| {
                estimate_ser(
                    ae_alphabet,
                    &NetworkDetector(model),
                    &system.with_nu(nu),
                    sensors,
                    &Attenuation::Nominal,
                    cfg.eval.trials,
                    root,
                    i,
                    &lab,
                )
            }));
        }
        for &nu in &cfg.eval.nu_grid {
            let lab = label("mda-aml", scenario, 1.0, seed);
            jobs.push(Box::new(move |i| {
                let noisy = system.with_nu(nu);
                let tables = std::slice::from_ref(mda);
                let aml = aml_fit(
                    tables,
                    &noisy,
                    sensors,
                    &Attenuation::Nominal,
                    cfg.eval.aml_samples,
                    &mut rng::stream(fit_root, i),
                )?;
                estimate_ser(
                    tables,
                    &aml,
                    &noisy,
                    sensors,
                    &Attenuation::Nominal,
                    cfg.eval.trials,
                    root,
                    i,
                    &lab,
                )
            }));
        }
    }
    run_jobs(jobs)
}

fn single_user_size(model: &Model) -> Result<usize> {
    match model.decoder.alphabet_sizes() {
        [n] => Ok(*n),
        other => Err(Error::Usage(format!(
            "expected a single-user model, got alphabet sizes {other:?}"
        ))),
    }
}

/// Models compared by the attenuation sweep, all of one alphabet size.
pub struct HModels<'a> {
    pub specific: &'a Model,
    pub lim: &'a Model,
    pub full: &'a Model,
}

/// SER at ν = 1 versus a fixed attenuation `h` for each point of the h grid:
/// MDA+AML designed and fitted at the nominal `h`, and the three AEs.
pub fn sweep_h(cfg: &ScenarioConfig, models: &HModels<'_>, sensors: &SensorArray, seed: u64) -> Result<Vec<SerRecord>> {
    let n = single_user_size(models.specific)?;
    for m in [models.lim, models.full] {
        if single_user_size(m)? != n {
            return Err(Error::Usage("attenuation sweep models differ in alphabet size".into()));
        }
    }
    let system = cfg.system_for(Some(n))?;
    let root = rng::derive_seed(seed, &format!("sweep-h/n{n}"));
    let mda = mda_table(cfg, &system, sensors)?;
    let tables = vec![mda];
    let aml = aml_fit(
        &tables,
        &system,
        sensors,
        &Attenuation::Nominal,
        cfg.eval.aml_samples,
        &mut rng::stream(rng::derive_seed(seed, "sweep-h/aml"), n as u64),
    )?;
    let named = [
        ("h-specific", models.specific),
        ("h-lim", models.lim),
        ("h-full", models.full),
    ];
    let ae_alphabets = named.iter().map(|(_, m)| m.alphabets()).collect::<Result<Vec<_>>>()?;
    let mut jobs: Vec<Job> = Vec::new();
    let baseline_scenario = format!("h-specific-n{n}");
    for &h in &cfg.eval.h_grid {
        let lab = label("mda-aml", &baseline_scenario, 1.0, seed);
        let (tables, aml, system) = (&tables, &aml, &system);
        jobs.push(Box::new(move |i| {
            estimate_ser(
                tables,
                aml,
                system,
                sensors,
                &Attenuation::Fixed { h },
                cfg.eval.trials,
                root,
                i,
                &lab,
            )
        }));
    }
    for ((name, model), alphabets) in named.iter().zip(&ae_alphabets) {
        for &h in &cfg.eval.h_grid {
            let lab = label("ae", &format!("{name}-n{n}"), 1.0, model.seed);
            let system = &system;
            jobs.push(Box::new(move |i| {
                estimate_ser(
                    alphabets,
                    &NetworkDetector(model),
                    system,
                    sensors,
                    &Attenuation::Fixed { h },
                    cfg.eval.trials,
                    root,
                    i,
                    &lab,
                )
            }));
        }
    }
    run_jobs(jobs)
}

/// Molecules `(l₁, l₂)` of each user for the two-user baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub user1: (usize, usize),
    pub user2: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineScheme {
    Csk,
    Gmosk,
}

impl BaselineScheme {
    pub fn name(self) -> &'static str {
        match self {
            BaselineScheme::Csk => "csk",
            BaselineScheme::Gmosk => "gmosk",
        }
    }

    pub fn tables(self, a: &Assignment, system: &SystemConfig) -> Result<Vec<AlphabetTable>> {
        let (s, xm) = (system.molecules, system.x_max);
        let sizes = &system.alphabet_sizes;
        Ok(match self {
            BaselineScheme::Csk => vec![
                csk_alphabet(sizes[0], xm, a.user1.0, s)?.table,
                csk_alphabet(sizes[1], xm, a.user2.0, s)?.table,
            ],
            BaselineScheme::Gmosk => vec![
                gmosk_alphabet(sizes[0], xm, a.user1, s)?.table,
                gmosk_alphabet(sizes[1], xm, a.user2, s)?.table,
            ],
        })
    }
}

/// Disjoint 2+2 molecule assignments that give distinct alphabets under
/// `scheme`, up to symbol relabeling, in lexicographic order.
pub fn distinct_assignments(scheme: BaselineScheme, system: &SystemConfig) -> Result<Vec<Assignment>> {
    let s = system.molecules;
    let mut seen: Vec<Vec<Vec<Vec<u64>>>> = Vec::new();
    let mut out = Vec::new();
    for a in 0..s {
        for b in 0..s {
            for c in 0..s {
                for d in 0..s {
                    let ids = [a, b, c, d];
                    if (0..4).any(|i| (i + 1..4).any(|j| ids[i] == ids[j])) {
                        continue;
                    }
                    let asg = Assignment {
                        user1: (a, b),
                        user2: (c, d),
                    };
                    let key: Vec<Vec<Vec<u64>>> = scheme
                        .tables(&asg, system)?
                        .iter()
                        .map(|t| {
                            let mut rows: Vec<Vec<u64>> = t
                                .rows
                                .iter()
                                .map(|r| r.0.iter().map(|v| v.to_bits()).collect())
                                .collect();
                            rows.sort();
                            rows
                        })
                        .collect();
                    if !seen.contains(&key) {
                        seen.push(key);
                        out.push(asg);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Baseline transmitters with a decoder trained under importance `(1, ratio)`.
pub fn train_baseline(
    cfg: &ScenarioConfig,
    scheme: BaselineScheme,
    assignment: &Assignment,
    ratio: f64,
    system: &SystemConfig,
    sensors: &SensorArray,
    seed: u64,
) -> Result<Model> {
    let tables = scheme.tables(assignment, system)?;
    let mut model = Model::with_tables(system, tables, sensors.output_scale(), seed)?;
    let train = TrainConfig {
        importance: vec![1.0, ratio],
        seed,
        ..cfg.train.clone()
    };
    train_model(&mut model, &train, system, sensors)?;
    Ok(model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImportanceSweep {
    pub records: Vec<SerRecord>,
    /// Chosen assignment per baseline scheme.
    pub csk: Assignment,
    pub gmosk: Assignment,
    /// SSER at ratio 1 of every assignment tried.
    pub search: Vec<(String, Assignment, f64)>,
}

/// AE, CSK and GMoSK at ν = 1 across the λ₂/λ₁ grid. `ae_models` holds one
/// trained AE per ratio. Each baseline uses the molecule assignment with the
/// lowest SSER at ratio 1, and its decoder is retrained for every ratio.
pub fn sweep_importance(
    cfg: &ScenarioConfig,
    ae_models: &[(f64, Model)],
    sensors: &SensorArray,
    seed: u64,
) -> Result<ImportanceSweep> {
    let system = cfg.system_for(None)?;
    if system.users() != 2 {
        return Err(Error::Usage("the importance sweep needs a two-user system".into()));
    }
    let root = rng::derive_seed(seed, "sweep-importance");
    let search_root = rng::derive_seed(seed, "sweep-importance/search");

    let mut candidates = Vec::new();
    for scheme in [BaselineScheme::Csk, BaselineScheme::Gmosk] {
        for a in distinct_assignments(scheme, &system)? {
            candidates.push((scheme, a));
        }
    }
    let search: Vec<(String, Assignment, f64)> = candidates
        .par_iter()
        .enumerate()
        .map(|(i, (scheme, a))| {
            let model = train_baseline(cfg, *scheme, a, 1.0, &system, sensors, seed)?;
            let lab = label(scheme.name(), &cfg.name, 1.0, seed);
            let rec = estimate_ser(
                &model.alphabets()?,
                &NetworkDetector(&model),
                &system,
                sensors,
                &Attenuation::Nominal,
                cfg.eval.trials,
                search_root,
                i as u64,
                &lab,
            )?;
            Ok((scheme.name().to_string(), *a, rec.sser))
        })
        .collect::<Result<_>>()?;
    let best = |scheme: BaselineScheme| {
        search
            .iter()
            .filter(|(s, _, _)| s == scheme.name())
            .fold(None::<(Assignment, f64)>, |acc, (_, a, v)| match acc {
                Some((_, b)) if b <= *v => acc,
                _ => Some((*a, *v)),
            })
            .map(|(a, _)| a)
            .ok_or_else(|| Error::Usage("no molecule assignment available".into()))
    };
    let csk = best(BaselineScheme::Csk)?;
    let gmosk = best(BaselineScheme::Gmosk)?;
    info!("baseline assignments: CSK {csk:?}, GMoSK {gmosk:?}");

    let ratios = &cfg.eval.ratio_grid;
    let baselines: Vec<(BaselineScheme, f64, Model)> = [(BaselineScheme::Csk, csk), (BaselineScheme::Gmosk, gmosk)]
        .iter()
        .flat_map(|&(s, a)| ratios.iter().map(move |&r| (s, a, r)))
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&(s, a, r)| Ok((s, r, train_baseline(cfg, s, &a, r, &system, sensors, seed)?)))
        .collect::<Result<_>>()?;

    let mut jobs: Vec<Job> = Vec::new();
    let system = &system;
    for &r in ratios {
        let model = ae_models
            .iter()
            .find(|(mr, _)| mr.to_bits() == r.to_bits())
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Usage(format!("no AE trained for ratio {r} in scenario {}", cfg.name)))?;
        let lab = label("ae", &cfg.name, r, model.seed);
        jobs.push(Box::new(move |i| {
            estimate_ser(
                &model.alphabets()?,
                &NetworkDetector(model),
                system,
                sensors,
                &Attenuation::Nominal,
                cfg.eval.trials,
                root,
                i,
                &lab,
            )
        }));
    }
    for (scheme, r, model) in &baselines {
        let lab = label(scheme.name(), &cfg.name, *r, seed);
        jobs.push(Box::new(move |i| {
            estimate_ser(
                &model.alphabets()?,
                &NetworkDetector(model),
                system,
                sensors,
                &Attenuation::Nominal,
                cfg.eval.trials,
                root,
                i,
                &lab,
            )
        }));
    }
    Ok(ImportanceSweep {
        records: run_jobs(jobs)?,
        csk,
        gmosk,
        search,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterDraw {
    /// Attenuation of this draw.
    pub h: f64,
    pub z: Vec<f64>,
}

/// Sensor outputs of one symbol under one attenuation condition, with the
/// Gaussian fit whose `coverage` ellipse is `{z : (z−μ)ᵀΣ⁻¹(z−μ) ≤ threshold}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterRecord {
    /// Numbered from 1.
    pub symbol: usize,
    pub condition: Attenuation,
    pub mean: Vec<f64>,
    /// Row-major R×R.
    pub covariance: Vec<f64>,
    pub coverage: f64,
    /// Chi-square quantile at `coverage` with R degrees of freedom.
    pub threshold: f64,
    /// Fraction of `draws` inside the ellipse; absent when Σ is singular.
    pub inside_fraction: Option<f64>,
    pub draws: Vec<ScatterDraw>,
}

pub const SCATTER_COVERAGE: f64 = 0.95;

/// Mean, row-major covariance, chi-square threshold and inside fraction.
pub type EllipseFit = (Vec<f64>, Vec<f64>, f64, Option<f64>);

/// Mean, covariance (n−1 denominator), chi-square threshold and inside
/// fraction of a point cloud.
pub fn fit_ellipse(points: &[Vec<f64>], coverage: f64) -> Result<EllipseFit> {
    if !(coverage > 0.0 && coverage < 1.0) {
        return Err(Error::Usage(format!("coverage {coverage} outside (0, 1)")));
    }
    let n = points.len();
    if n < 2 {
        return Err(Error::Usage("an ellipse needs at least 2 points".into()));
    }
    let r = points[0].len();
    let mut mean = vec![0.0; r];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![0.0; r * r];
    for p in points {
        for i in 0..r {
            for j in 0..r {
                cov[i * r + j] += (p[i] - mean[i]) * (p[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    let threshold = ChiSquared::new(r as f64)
        .map_err(|e| Error::Usage(e.to_string()))?
        .inverse_cdf(coverage);
    let inside = DMatrix::from_row_slice(r, r, &cov).cholesky().map(|chol| {
        let hits = points
            .iter()
            .filter(|p| {
                let d = DVector::from_iterator(r, p.iter().zip(&mean).map(|(a, b)| a - b));
                let w = chol.l().solve_lower_triangular(&d).unwrap_or(d);
                w.norm_squared() <= threshold
            })
            .count();
        hits as f64 / n as f64
    });
    Ok((mean, cov, threshold, inside))
}

/// `samples` sensor outputs per (condition, symbol) of a single-user model at
/// the system's ν, with 95% ellipse fits.
pub fn export_scatter(
    model: &Model,
    system: &SystemConfig,
    sensors: &dyn SensorModel,
    conditions: &[Attenuation],
    samples: usize,
    seed: u64,
) -> Result<Vec<ScatterRecord>> {
    let n = single_user_size(model)?;
    let table = model.export_alphabet(0)?;
    let root = rng::derive_seed(seed, "export-scatter");
    let mut out = Vec::with_capacity(conditions.len() * n);
    for (ci, cond) in conditions.iter().enumerate() {
        cond.validate()?;
        for (s, xbar) in table.rows.iter().enumerate() {
            let mut rng = rng::stream(root, (ci * n + s) as u64);
            let mut draws = Vec::with_capacity(samples);
            for _ in 0..samples {
                let gains = cond.draw(system, &mut rng);
                let noise = system.draw_noise(&mut rng);
                let z = transmit(std::slice::from_ref(xbar), &gains, sensors, &noise)?;
                draws.push(ScatterDraw {
                    h: gains.gains[0][0],
                    z,
                });
            }
            let points: Vec<Vec<f64>> = draws.iter().map(|d| d.z.clone()).collect();
            let (mean, covariance, threshold, inside_fraction) = fit_ellipse(&points, SCATTER_COVERAGE)?;
            out.push(ScatterRecord {
                symbol: s + 1,
                condition: *cond,
                mean,
                covariance,
                coverage: SCATTER_COVERAGE,
                threshold,
                inside_fraction,
                draws,
            });
        }
    }
    Ok(out)
}

/// Batch size of the full-graph gradient check.
pub const GRADCHECK_BATCH: usize = 16;
pub const GRADCHECK_STEP: f64 = 1e-6;

/// Finite-difference check of every parameter gradient of the full
/// encoder → channel → sensors → decoder → loss graph, for a freshly
/// initialized full-CSI model with `N = 4` and one frozen batch at ν = 1.
pub fn gradcheck_full_graph(seed: u64) -> Result<GradCheckReport> {
    let cfg = ScenarioConfig::preset("full-csi")?;
    let system = cfg.system_for(Some(4))?;
    let sensors = cfg.sensor_array()?;
    let model = Model::autoencoder(&system, sensors.output_scale(), seed);
    let batch = Batch::draw(
        &system,
        &Attenuation::Nominal,
        GRADCHECK_BATCH,
        &mut rng::stream(seed, 2),
    );
    let mut store = model.store.clone();
    check_gradients(&mut store, GRADCHECK_STEP, |tape, store| {
        Ok(batch_loss_with(tape, &model, store, &sensors, &batch, &[1.0], Mode::Train)?.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::MixtureVector;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn ellipse_covers_95_percent_of_gaussian_draws() {
        let mut rng = rng::seeded(5);
        let points: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![3.0 + 2.0 * a, -1.0 + 0.5 * a + 0.3 * b]
            })
            .collect();
        let (_, _, t, inside) = fit_ellipse(&points, 0.95).unwrap();
        assert!((t - 5.991_464_547_107_979).abs() < 1e-9);
        let f = inside.unwrap();
        assert!((0.93..=0.97).contains(&f), "{f}");
    }

    #[test]
    fn noise_free_scatter_degenerates() {
        let cfg = ScenarioConfig::preset("h-specific").unwrap();
        let system = cfg.system_for(Some(6)).unwrap().with_nu(0.0);
        let sensors = cfg.sensor_array().unwrap();
        let model = Model::autoencoder(&system, sensors.output_scale(), 3);
        let recs = export_scatter(&model, &system, &sensors, &[Attenuation::Fixed { h: 0.02 }], 20, 1).unwrap();
        assert_eq!(recs.len(), 6);
        for r in &recs {
            assert!(r.draws.iter().all(|d| d.z == r.draws[0].z));
            assert!(r.covariance.iter().all(|v| v.abs() < 1e-30));
            assert_eq!(r.inside_fraction, None);
        }
    }

    #[test]
    fn assignment_search_space() {
        let cfg = ScenarioConfig::preset("multi-user").unwrap();
        let system = cfg.system_for(None).unwrap();
        let csk = distinct_assignments(BaselineScheme::Csk, &system).unwrap();
        let gmosk = distinct_assignments(BaselineScheme::Gmosk, &system).unwrap();
        // CSK depends on the ordered pair (l₁₁, l₂₁); GMoSK on the split.
        assert_eq!(csk.len(), 12);
        assert_eq!(gmosk.len(), 6);
        for a in csk.iter().chain(&gmosk) {
            for t in BaselineScheme::Gmosk.tables(a, &system).unwrap() {
                assert!(t.rows.iter().all(|r: &MixtureVector| r.is_feasible(system.x_max)));
            }
        }
    }
}
