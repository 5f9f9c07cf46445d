use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use d2co::experiments::{nbv_banks, nbv_rows, nbv_scene};
use d2co::nbv::{Detection, Strategy};
use d2co::sim;

use super::benchmark::BENCH_SCHEMA_VERSION;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{create, load_scene, write_csv, write_json};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    MiMax,
    Dis,
    Random,
    All,
}

impl StrategyArg {
    fn strategies(self) -> Vec<Strategy> {
        match self {
            Self::MiMax => vec![Strategy::MiMax],
            Self::Dis => vec![Strategy::Dis],
            Self::Random => vec![Strategy::Random],
            Self::All => vec![Strategy::MiMax, Strategy::Dis, Strategy::Random],
        }
    }
}

#[derive(Debug, Args)]
pub struct NbvArgs {
    /// Scene JSON (default: a generated scene with `scene_objects` objects)
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Searched model id (default: the type of the first placement)
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, value_enum, default_value_t = StrategyArg::MiMax)]
    pub strategy: StrategyArg,
    /// Views acquired after the initial image (default: `nbv.planner.max_views`)
    #[arg(long)]
    pub max_views: Option<usize>,
}

pub const NBV_CSV_HEADER: [&str; 7] = ["schema_version", "strategy", "views", "correct_rate", "false_positives", "detections", "action"];

/// Plans views on one scene. Writes `scene.json`, `telemetry-<strategy>.jsonl`
/// (one line per step, the first for the initial image), `nbv.csv` and
/// `detections.json`.
pub fn run(args: &NbvArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    let setup = cfg.setup()?;
    let mut exp = cfg.nbv_experiment();
    exp.strategies = args.strategy.strategies();
    if let Some(v) = args.max_views {
        exp.planner.max_views = v;
    }
    let scene = match &args.scene {
        Some(p) => load_scene(p)?,
        None => sim::generate_scene(&setup.models, cfg.scene_objects, &setup.workspace, cfg.seed)?,
    };
    let target = match &args.target {
        Some(t) => t.clone(),
        None => scene
            .placements
            .first()
            .map(|p| p.object_id.clone())
            .ok_or_else(|| CliError::Data("scene is empty".into()))?,
    };
    if !setup.models.iter().any(|m| m.id == target) {
        return Err(CliError::Config(format!("unknown target {target:?}")));
    }
    let banks = nbv_banks(&setup, &exp)?;
    let result = nbv_scene(&setup, &exp, &banks, &scene, &target, 0)?;

    let dir = &cfg.output_dir;
    let p = dir.join("scene.json");
    std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    scene.save(&p).map_err(|e| CliError::output(&p, e))?;
    let mut detections: BTreeMap<String, &[Detection]> = BTreeMap::new();
    for o in &result.outcomes {
        let p = dir.join(format!("telemetry-{}.jsonl", o.strategy));
        let mut w = create(&p)?;
        o.write_jsonl(&mut w).map_err(|e| CliError::output(&p, e))?;
        w.flush().map_err(|e| CliError::output(&p, e))?;
        detections.insert(o.strategy.to_string(), &o.detections);
        log::info!("{}: visited {:?}, {} detections", o.strategy, o.visited, o.detections.len());
    }
    let rows = nbv_rows(&exp, std::slice::from_ref(&scene), std::slice::from_ref(&result));
    let csv_rows = rows.iter().map(|r| {
        let o = result.outcomes.iter().find(|o| o.strategy == r.strategy).expect("row of a run strategy");
        let action = o.steps.get(r.views).and_then(|s| s.action).map_or(String::new(), |a| a.to_string());
        vec![
            BENCH_SCHEMA_VERSION.to_string(),
            r.strategy.to_string(),
            r.views.to_string(),
            r.mean_correct_rate.to_string(),
            r.mean_false_positives.to_string(),
            o.detections_after(r.views).len().to_string(),
            action,
        ]
    });
    write_csv(&dir.join("nbv.csv"), &NBV_CSV_HEADER, csv_rows)?;
    write_json(&dir.join("detections.json"), &detections)
}
