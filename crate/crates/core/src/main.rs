use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use molmix::evaluation::{
    evaluate_model, export_scatter, gradcheck_full_graph, ratio_tag, size_tag, sweep_h, sweep_importance, sweep_snr,
    train_scenario, write_records, HModels, RunDir, ScenarioConfig, SerRecord, TrainSelection, H_SCENARIOS,
};
use molmix::{Error, Result};

#[derive(Parser)]
#[command(
    name = "molmix",
    version,
    about = "Multi-user molecule-mixture communication: training, baselines and SER sweeps"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Scenario file (TOML). Overrides --scenario.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in scenario: full-csi, h-specific, h-lim, h-full or multi-user.
    #[arg(long)]
    scenario: Option<String>,
    /// Master seed; defaults to the scenario's training seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train autoencoders and store weights and reports in the run directory.
    Train {
        #[command(flatten)]
        common: Common,
        /// Single alphabet size; all of the scenario's sizes by default.
        #[arg(long)]
        n: Option<usize>,
        /// Single importance ratio λ₂/λ₁ for two-user scenarios.
        #[arg(long)]
        ratio: Option<f64>,
    },
    /// SER of one trained model over the ν grid.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        ratio: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AE versus MDA+AML over the ν grid for every alphabet size.
    SweepSnr {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Four schemes versus fixed attenuation h.
    SweepH {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// AE, CSK and GMoSK across importance ratios.
    SweepImportance {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sensor-output clouds and 95% ellipses per symbol and condition (JSON).
    ExportScatter {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mixture alphabet of every user as CSV.
    ExportAlphabet {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        ratio: Option<f64>,
        /// Output directory; the run directory by default.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of the full training graph.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds to check.
        #[arg(long, default_value_t = 1)]
        count: u64,
    },
}

struct Ctx {
    cfg: ScenarioConfig,
    seed: u64,
    runs_dir: PathBuf,
}

impl Ctx {
    fn new(common: &Common, default_scenario: &str) -> Result<Self> {
        let cfg = match (&common.config, &common.scenario) {
            (Some(path), _) => ScenarioConfig::load(path)?,
            (None, Some(name)) => ScenarioConfig::preset(name)?,
            (None, None) => ScenarioConfig::preset(default_scenario)?,
        };
        Ok(Self {
            seed: common.seed.unwrap_or(cfg.train.seed),
            runs_dir: common.runs_dir.clone(),
            cfg,
        })
    }

    fn run(&self) -> RunDir {
        self.run_for(&self.cfg.name)
    }

    fn run_for(&self, scenario: &str) -> RunDir {
        RunDir::new(&self.runs_dir, scenario, self.seed)
    }

    fn tag(&self, n: Option<usize>, ratio: Option<f64>) -> Result<String> {
        if self.cfg.is_multi_user() {
            if n.is_some() {
                return Err(Error::Usage("--n applies to single-user scenarios only".into()));
            }
            let r = ratio.ok_or_else(|| Error::Usage("two-user scenarios need --ratio".into()))?;
            Ok(ratio_tag(r))
        } else {
            if ratio.is_some() {
                return Err(Error::Usage("--ratio applies to two-user scenarios only".into()));
            }
            Ok(size_tag(n.unwrap_or(self.cfg.n_list()[0])))
        }
    }
}

fn write_csv(path: &Path, records: &[SerRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_records(std::fs::File::create(path)?, records)?;
    println!("wrote {} records to {}", records.len(), path.display());
    Ok(())
}

fn summarize(records: &[SerRecord]) {
    for r in records {
        println!(
            "{:<8} {:<16} nu={:<8.4} h=[{:.4},{:.4}] ratio={:<7.4} sser={:.5} ±{:.5}",
            r.scheme, r.scenario, r.nu, r.h_lo, r.h_hi, r.lambda_ratio, r.sser, r.sser_ci95
        );
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, n, ratio } => {
            let ctx = Ctx::new(&common, "full-csi")?;
            let sensors = ctx.cfg.sensor_array()?;
            let run = ctx.run();
            for (tag, report) in train_scenario(&ctx.cfg, &sensors, &run, TrainSelection { n, ratio })? {
                println!(
                    "{}/{tag}: {} steps in {:.1}s, final loss {:.4}",
                    run.scenario,
                    report.steps,
                    report.wall_clock_secs,
                    report.epoch_loss.last().copied().unwrap_or(f64::NAN)
                );
            }
            println!("run directory {}", run.root.display());
        }
        Command::Evaluate { common, n, ratio, out } => {
            let ctx = Ctx::new(&common, "full-csi")?;
            let tag = ctx.tag(n, ratio)?;
            let run = ctx.run();
            let model = run.load_model(&tag)?;
            let system = ctx
                .cfg
                .system_for(n.or_else(|| (!ctx.cfg.is_multi_user()).then(|| ctx.cfg.n_list()[0])))?;
            let sensors = ctx.cfg.sensor_array()?;
            let scenario = format!("{}-{tag}", ctx.cfg.name);
            let records = evaluate_model(
                &ctx.cfg,
                &model,
                &system,
                &sensors,
                &scenario,
                ratio.unwrap_or(1.0),
                ctx.seed,
            )?;
            summarize(&records);
            write_csv(
                &out.unwrap_or_else(|| run.file(&format!("evaluate-{tag}.csv"))),
                &records,
            )?;
        }
        Command::SweepSnr { common, out } => {
            let ctx = Ctx::new(&common, "full-csi")?;
            let run = ctx.run();
            let models = ctx
                .cfg
                .n_list()
                .into_iter()
                .map(|n| run.load_model(&size_tag(n)))
                .collect::<Result<Vec<_>>>()?;
            let sensors = ctx.cfg.sensor_array()?;
            let records = sweep_snr(&ctx.cfg, &models, &sensors, ctx.seed)?;
            summarize(&records);
            write_csv(&out.unwrap_or_else(|| run.file("sweep-snr.csv")), &records)?;
        }
        Command::SweepH { common, n, out } => {
            let ctx = Ctx::new(&common, "h-specific")?;
            let sensors = ctx.cfg.sensor_array()?;
            let ns = n.map_or_else(|| ctx.cfg.n_list(), |n| vec![n]);
            let mut records = Vec::new();
            for n in ns {
                let tag = size_tag(n);
                let [specific, lim, full] = H_SCENARIOS.map(|s| ctx.run_for(s).load_model(&tag));
                let (specific, lim, full) = (specific?, lim?, full?);
                let models = HModels {
                    specific: &specific,
                    lim: &lim,
                    full: &full,
                };
                records.extend(sweep_h(&ctx.cfg, &models, &sensors, ctx.seed)?);
            }
            summarize(&records);
            write_csv(
                &out.unwrap_or_else(|| ctx.run_for("sweep-h").file("sweep-h.csv")),
                &records,
            )?;
        }
        Command::SweepImportance { common, out } => {
            let ctx = Ctx::new(&common, "multi-user")?;
            let run = ctx.run();
            let models = ctx
                .cfg
                .eval
                .ratio_grid
                .iter()
                .map(|&r| Ok((r, run.load_model(&ratio_tag(r))?)))
                .collect::<Result<Vec<_>>>()?;
            let sensors = ctx.cfg.sensor_array()?;
            let sweep = sweep_importance(&ctx.cfg, &models, &sensors, ctx.seed)?;
            println!("CSK assignment {:?}, GMoSK assignment {:?}", sweep.csk, sweep.gmosk);
            summarize(&sweep.records);
            let out = out.unwrap_or_else(|| run.file("sweep-importance.csv"));
            write_csv(&out, &sweep.records)?;
            let meta = out.with_extension("assignments.json");
            std::fs::write(&meta, serde_json::to_string_pretty(&sweep)?)?;
        }
        Command::ExportScatter { common, n, out } => {
            let ctx = Ctx::new(&common, "h-full")?;
            let tag = ctx.tag(n, None)?;
            let run = ctx.run();
            let model = run.load_model(&tag)?;
            let system = ctx.cfg.system_for(Some(n.unwrap_or(ctx.cfg.n_list()[0])))?;
            let sensors = ctx.cfg.sensor_array()?;
            let records = export_scatter(
                &model,
                &system,
                &sensors,
                &ctx.cfg.eval.scatter_conditions,
                ctx.cfg.eval.scatter_samples,
                ctx.seed,
            )?;
            let path = out.unwrap_or_else(|| run.file(&format!("scatter-{tag}.json")));
            std::fs::write(&path, serde_json::to_string(&records)?)?;
            for r in &records {
                println!(
                    "symbol {} {:?}: inside 95% ellipse {}",
                    r.symbol,
                    r.condition,
                    r.inside_fraction.map_or("n/a (singular)".into(), |f| format!("{f:.4}"))
                );
            }
            println!("wrote {} scatter records to {}", records.len(), path.display());
        }
        Command::ExportAlphabet { common, n, ratio, out } => {
            let ctx = Ctx::new(&common, "full-csi")?;
            let tag = ctx.tag(n, ratio)?;
            let run = ctx.run();
            let model = run.load_model(&tag)?;
            let dir = out.unwrap_or_else(|| run.root.clone());
            std::fs::create_dir_all(&dir)?;
            for u in 0..model.users() {
                let path = dir.join(format!("alphabet-{tag}-user{}.csv", u + 1));
                model.export_alphabet(u)?.write_csv(&path)?;
                println!("wrote {}", path.display());
            }
        }
        Command::Gradcheck { seed, count } => {
            let mut worst = 0.0f64;
            let mut ok = true;
            for s in seed..seed + count {
                let r = gradcheck_full_graph(s)?;
                println!(
                    "seed {s}: {} coordinates, max relative error {:.3e}, {:.2}% below 1e-4",
                    r.coordinates,
                    r.max_rel_error,
                    100.0 * r.fraction_tight
                );
                worst = worst.max(r.max_rel_error);
                ok &= r.passes();
            }
            println!("max relative error {worst:.3e}");
            if !ok {
                return Err(Error::Evaluation(format!(
                    "gradient check failed: max relative error {worst:.3e}"
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::MalformedConfig { .. } => 2,
                Error::MissingArtifact { .. } => 3,
                _ => 1,
            })
        }
    }
}
