use std::path::PathBuf;

use clap::Args;
use d2co::dcd::build_dcd;
use d2co::detection::{scan_banks, ObjectCandidate, ScanOptions};
use d2co::experiments::table_bank;
use d2co::geometry::{CameraIntrinsics, Pose};
use d2co::template::TemplateBank;
use serde::{Deserialize, Serialize};

use super::out_path;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{read_input, write_json, InputArgs};

pub const CANDIDATES_SCHEMA_VERSION: u32 = 1;

/// Output of `detect`, input of `register`. Poses are object-to-camera for
/// the reference camera.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateFile {
    pub schema_version: u32,
    pub source: String,
    /// World-to-camera pose of the reference camera.
    pub camera: Pose,
    pub intrinsics: CameraIntrinsics,
    pub candidates: Vec<ObjectCandidate>,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Candidates kept after ranking (default: `scan.top_k` from the config)
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Restrict the search to these model ids (repeatable)
    #[arg(long = "object")]
    pub objects: Vec<String>,
    /// Output file (default: <out>/candidates.json)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

pub fn run(args: &DetectArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    let mut models = cfg.build_models()?;
    let input = read_input(&args.input, cfg, &models)?;
    if !args.objects.is_empty() {
        if let Some(bad) = args.objects.iter().find(|o| !models.iter().any(|m| &m.id == *o)) {
            return Err(CliError::Config(format!("unknown object {bad:?}")));
        }
        models.retain(|m| args.objects.contains(&m.id));
    }
    let top_k = args.top_k.unwrap_or(cfg.scan.top_k);
    if top_k == 0 {
        return Err(CliError::Config("--top-k must be positive".into()));
    }
    let camera = cfg.camera.pose();
    let banks: Vec<TemplateBank> = models
        .iter()
        .map(|m| table_bank(m, &cfg.bank, &camera, &cfg.intrinsics))
        .collect::<Result<_, _>>()?;
    let tensor = build_dcd(&input.edgels, &cfg.dcd)?;
    let refs: Vec<&TemplateBank> = banks.iter().collect();
    let candidates = scan_banks(&tensor, &refs, &cfg.intrinsics, &ScanOptions { top_k, ..cfg.scan });
    log::info!("{} edgels, {} bank entries, {} candidates", input.edgels.len(), banks.iter().map(|b| b.len()).sum::<usize>(), candidates.len());
    let out = out_path(&args.output, &cfg.output_dir, "candidates.json");
    write_json(
        &out,
        &CandidateFile {
            schema_version: CANDIDATES_SCHEMA_VERSION,
            source: input.label,
            camera,
            intrinsics: cfg.intrinsics,
            candidates,
        },
    )
}
