//! SER estimation, experiment sweeps, scatter export and result files.

mod config;
mod csv_io;
mod experiments;
mod runs;
mod ser;

pub use config::{EvalConfig, NoiseLevels, ScenarioConfig, SensorSpec, SystemSpec, H_SCENARIOS, SCENARIOS};
pub use csv_io::{read_records, write_records, CSV_HEADER};
pub use experiments::{
    distinct_assignments, evaluate_model, export_scatter, fit_ellipse, gradcheck_full_graph, mda_table, sweep_h,
    sweep_importance, sweep_snr, train_baseline, Assignment, BaselineScheme, EllipseFit, HModels, ImportanceSweep,
    ScatterDraw, ScatterRecord, GRADCHECK_BATCH, GRADCHECK_STEP, SCATTER_COVERAGE,
};
pub use runs::{ratio_tag, size_tag, train_scenario, training_jobs, RunDir, TrainSelection};
pub use ser::{estimate_ser, wilson_half_width, Detector, NetworkDetector, RecordLabel, SerRecord};
