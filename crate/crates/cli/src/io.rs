//! Observation inputs and output files.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use d2co::edges::{detect_edgelets, gradient_direction_image, EdgelSet, GradientDirectionImage};
use d2co::image::GrayImage;
use d2co::sim::{self, render_observation, SyntheticScene, ViewAction};
use d2co::template::ObjectModel;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

/// Exactly one observation source.
#[derive(Debug, Clone, Args)]
#[group(required = true, multiple = false)]
pub struct InputArgs {
    /// Scene JSON, rendered from the reference camera with the configured noise
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Grayscale image (PNG or PGM) taken by the reference camera
    #[arg(long)]
    pub image: Option<PathBuf>,
    /// Edgel CSV with `x,y,theta` rows in reference-image pixels
    #[arg(long)]
    pub edgels: Option<PathBuf>,
}

pub struct Input {
    pub edgels: EdgelSet,
    pub gradient: GradientDirectionImage,
    /// Present when the input was a scene.
    pub scene: Option<SyntheticScene>,
    pub label: String,
}

pub fn reference_view(cfg: &ExperimentConfig) -> ViewAction {
    ViewAction {
        id: 0,
        camera_pose: cfg.camera.pose(),
        intrinsics: cfg.intrinsics,
    }
}

pub fn load_scene(path: &Path) -> CliResult<SyntheticScene> {
    if !path.is_file() {
        return Err(CliError::Data(format!("scene {} does not exist", path.display())));
    }
    SyntheticScene::load(path).map_err(|e| CliError::io(path, e))
}

/// Rendered observation of `scene` from `view`, seeded per view.
pub fn observe(cfg: &ExperimentConfig, scene: &SyntheticScene, view: &ViewAction, models: &[ObjectModel]) -> CliResult<(EdgelSet, GradientDirectionImage)> {
    let seed = cfg.seed.wrapping_mul(1000).wrapping_add(view.id as u64);
    let obs = render_observation(scene, view, models, &cfg.noise, seed)?;
    Ok((obs.edgels, obs.gradient))
}

pub fn read_input(args: &InputArgs, cfg: &ExperimentConfig, models: &[ObjectModel]) -> CliResult<Input> {
    let intr = cfg.intrinsics;
    if let Some(p) = &args.scene {
        let scene = load_scene(p)?;
        let (edgels, gradient) = observe(cfg, &scene, &reference_view(cfg), models)?;
        return Ok(Input {
            edgels,
            gradient,
            scene: Some(scene),
            label: p.display().to_string(),
        });
    }
    if let Some(p) = &args.image {
        let img = GrayImage::load(p).map_err(|e| CliError::io(p, e))?;
        if (img.width, img.height) != (intr.width, intr.height) {
            return Err(CliError::Data(format!(
                "{} is {}x{}, the camera is {}x{}",
                p.display(),
                img.width,
                img.height,
                intr.width,
                intr.height
            )));
        }
        return Ok(Input {
            edgels: detect_edgelets(&img, &cfg.edges),
            gradient: gradient_direction_image(&img),
            scene: None,
            label: p.display().to_string(),
        });
    }
    let p = args.edgels.as_ref().ok_or_else(|| CliError::Internal("no input source".into()))?;
    let f = File::open(p).map_err(|e| CliError::io(p, e))?;
    let edgels = EdgelSet::read_csv(BufReader::new(f), intr.width, intr.height).map_err(|e| CliError::io(p, e))?;
    Ok(Input {
        gradient: sim::gradient_from_edgels(&edgels, cfg.seed),
        edgels,
        scene: None,
        label: p.display().to_string(),
    })
}

pub fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| CliError::output(path, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::output(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::output(path, e))?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| CliError::output(path, e))
}

/// CSV file with a fixed header, written and flushed in one go. An empty
/// table still gets its header.
pub fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header).map_err(|e| CliError::output(path, e))?;
    for r in rows {
        debug_assert_eq!(r.len(), header.len());
        w.write_record(&r).map_err(|e| CliError::output(path, e))?;
    }
    w.flush().map_err(|e| CliError::output(path, e))
}
