use std::path::PathBuf;

use clap::Args;
use d2co::sim::{self, render_intensity};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{create, load_scene, observe, reference_view};

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Number of objects (default: `scene_objects` from the config)
    #[arg(long, conflicts_with = "scene")]
    pub objects: Option<usize>,
    /// Render this scene instead of generating one
    #[arg(long)]
    pub scene: Option<PathBuf>,
}

/// Writes `scene.json`, the reference-view `edgels.csv` and a shaded `image.png`.
pub fn run(args: &RenderArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    let models = cfg.build_models()?;
    let scene = match &args.scene {
        Some(p) => load_scene(p)?,
        None => sim::generate_scene(&models, args.objects.unwrap_or(cfg.scene_objects), &cfg.workspace, cfg.seed)?,
    };
    let dir = &cfg.output_dir;
    let p = dir.join("scene.json");
    std::fs::create_dir_all(dir).map_err(|e| CliError::output(dir, e))?;
    scene.save(&p).map_err(|e| CliError::output(&p, e))?;

    let view = reference_view(cfg);
    let (edgels, _) = observe(cfg, &scene, &view, &models)?;
    let p = dir.join("edgels.csv");
    edgels.write_csv(create(&p)?).map_err(|e| CliError::output(&p, e))?;

    let p: PathBuf = dir.join("image.png");
    render_intensity(&scene, &view, &models)?.save_png(&p).map_err(|e| CliError::output(&p, e))?;
    log::info!("{} objects, {} edgels written to {}", scene.placements.len(), edgels.len(), dir.display());
    Ok(())
}
