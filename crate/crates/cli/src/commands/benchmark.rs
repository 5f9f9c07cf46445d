use std::io::Write;

use clap::{Args, ValueEnum};
use d2co::experiments::{self, Setup};
use serde_json::{Map, Value};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{create, write_csv, write_json};

pub const BENCH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Experiment {
    Basin,
    Detection,
    Multiview,
    Score,
    Timing,
    Nbv,
    All,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Experiments to run (repeatable)
    #[arg(long = "experiment", value_enum, default_values_t = [Experiment::All])]
    pub experiments: Vec<Experiment>,
}

fn v(x: impl ToString) -> String {
    x.to_string()
}

/// Runs the selected experiments in a fixed order. Each one writes
/// `<name>.csv` as soon as it finishes, and `summary.json` is rewritten
/// after every experiment.
pub fn run(args: &BenchArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    let setup = cfg.setup()?;
    let mut todo = args.experiments.clone();
    if todo.contains(&Experiment::All) {
        todo = vec![Experiment::Basin, Experiment::Detection, Experiment::Multiview, Experiment::Score, Experiment::Timing, Experiment::Nbv];
    }
    todo.sort();
    todo.dedup();
    let dir = &cfg.output_dir;
    let mut summary = Map::new();
    summary.insert("schema_version".into(), BENCH_SCHEMA_VERSION.into());
    for e in todo {
        log::info!("running {e:?}");
        let (name, value) = run_one(e, &setup, cfg)?;
        summary.insert(name.into(), value);
        write_json(&dir.join("summary.json"), &summary)?;
    }
    Ok(())
}

fn to_value(x: &impl serde::Serialize) -> CliResult<Value> {
    serde_json::to_value(x).map_err(|e| CliError::Internal(e.to_string()))
}

fn run_one(e: Experiment, setup: &Setup, cfg: &ExperimentConfig) -> CliResult<(&'static str, Value)> {
    let b = &cfg.benchmark;
    let dir = &cfg.output_dir;
    let sv = || v(BENCH_SCHEMA_VERSION);
    let seed = cfg.seed;
    match e {
        Experiment::Basin => {
            let rows = experiments::basin_sweep(setup, &b.basin.magnitudes_mm, b.basin.rad_per_mm, b.basin.trials, seed)?;
            write_csv(
                &dir.join("basin.csv"),
                &["schema_version", "translation_mm", "rotation_rad", "trials", "successes", "rate", "mean_ms", "monotonicity_violations"],
                rows.iter().map(|r| {
                    vec![sv(), v(r.translation_mm), v(r.rotation_rad), v(r.trials), v(r.successes), v(r.rate), v(r.mean_ms), v(r.monotonicity_violations)]
                }),
            )?;
            Ok(("basin", to_value(&rows)?))
        }
        Experiment::Detection => {
            let r = experiments::detection_trials(setup, b.detection.scenes, b.detection.max_k, seed)?;
            write_csv(
                &dir.join("detection.csv"),
                &["schema_version", "k", "true_positives", "false_positives"],
                r.curve.iter().map(|c| vec![sv(), v(c.k), v(c.true_positives), v(c.false_positives)]),
            )?;
            Ok(("detection", to_value(&r)?))
        }
        Experiment::Multiview => {
            let m = &b.multiview;
            let r = experiments::multiview_trials(setup, m.scenes, m.extra_views, m.translation, m.rotation, m.min_occlusion, m.max_occlusion, seed)?;
            let row = |views: usize, correct: usize, rate: f64| vec![sv(), v(views), v(r.scenes), v(correct), v(rate), v(r.mean_occlusion)];
            write_csv(
                &dir.join("multiview.csv"),
                &["schema_version", "views", "scenes", "correct", "rate", "mean_occlusion"],
                [row(1, r.single_correct, r.single_rate), row(1 + r.extra_views, r.multi_correct, r.multi_rate)],
            )?;
            Ok(("multiview", to_value(&r)?))
        }
        Experiment::Score => {
            let s = &b.score;
            let r = experiments::score_trials(setup, s.trials, s.displacement_px, s.threshold, seed)?;
            write_csv(
                &dir.join("score.csv"),
                &["schema_version", "trials", "truth_min", "truth_mean", "displaced_max", "displaced_mean", "threshold", "accuracy"],
                [vec![sv(), v(r.trials), v(r.truth_min), v(r.truth_mean), v(r.displaced_max), v(r.displaced_mean), v(r.threshold), v(r.accuracy)]],
            )?;
            Ok(("score", to_value(&r)?))
        }
        Experiment::Timing => {
            let reports = (0..b.timing.repeats)
                .map(|k| experiments::timing_trial(setup, b.timing.points, seed.wrapping_add(k as u64)))
                .collect::<Result<Vec<_>, _>>()?;
            write_csv(
                &dir.join("timing.csv"),
                &["schema_version", "width", "height", "q", "template_points", "iterations", "tensor_build_ms", "registration_ms"],
                reports.iter().map(|r| {
                    vec![sv(), v(r.width), v(r.height), v(r.q), v(r.template_points), v(r.iterations), v(r.tensor_build_ms), v(r.registration_ms)]
                }),
            )?;
            Ok(("timing", to_value(&reports)?))
        }
        Experiment::Nbv => {
            let exp = cfg.nbv_experiment();
            let (rows, scenes) = experiments::nbv_trials(setup, &exp)?;
            write_csv(
                &dir.join("nbv.csv"),
                &["schema_version", "strategy", "views", "mean_correct_rate", "mean_false_positives"],
                rows.iter().map(|r| vec![sv(), v(r.strategy), v(r.views), v(r.mean_correct_rate), v(r.mean_false_positives)]),
            )?;
            // One line per scene with the full telemetry of every strategy.
            let p = dir.join("nbv_scenes.jsonl");
            let mut w = create(&p)?;
            for s in &scenes {
                serde_json::to_writer(&mut w, s).map_err(|e| CliError::output(&p, e))?;
                w.write_all(b"\n").map_err(|e| CliError::output(&p, e))?;
            }
            w.flush().map_err(|e| CliError::output(&p, e))?;
            Ok(("nbv", to_value(&rows)?))
        }
        Experiment::All => Err(CliError::Internal("`all` should have been expanded".into())),
    }
}
