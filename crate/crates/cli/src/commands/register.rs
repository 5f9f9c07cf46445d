use std::f64::consts::FRAC_PI_2;
use std::path::PathBuf;

use clap::Args;
use d2co::dcd::{build_dcd, DcdTensor};
use d2co::detection::ObjectCandidate;
use d2co::edges::GradientDirectionImage;
use d2co::experiments::{CORRECT_ROTATION, CORRECT_TRANSLATION};
use d2co::geometry::Pose;
use d2co::registration::{d2co_register, score_views, RegistrationProblem, RegistrationResult, RegistrationView};
use d2co::sim::{evaluate, Estimate, EvalMetrics, ViewAction};
use d2co::template::{ObjectModel, RasterTemplate};
use serde::{Deserialize, Serialize};

use super::detect::CandidateFile;
use super::out_path;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};
use crate::io::{observe, read_input, reference_view, write_json, InputArgs};

pub const REGISTERED_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredCandidate {
    pub object_id: String,
    pub template_ref: usize,
    pub avg_dcd: f64,
    /// Object-to-reference-camera poses.
    pub initial_pose: Pose,
    pub pose: Pose,
    /// Object-to-world pose.
    pub world_pose: Pose,
    pub score: Option<f64>,
    /// `score` reached `--min-score`.
    pub accepted: bool,
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Set when the candidate could not be registered; the pose is then the initial one.
    pub error: Option<String>,
    /// Against the scene ground truth, when the input was a scene.
    pub correct: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegisteredFile {
    pub schema_version: u32,
    pub source: String,
    pub views: usize,
    pub candidates: Vec<RegisteredCandidate>,
    /// Accepted candidates matched one-to-one against the scene.
    pub evaluation: Option<EvalMetrics>,
}

#[derive(Debug, Args)]
pub struct RegisterArgs {
    /// Candidate file written by `detect`
    #[arg(long)]
    pub candidates: PathBuf,
    #[command(flatten)]
    pub input: InputArgs,
    /// Views used by the optimizer; more than one needs --scene, which is
    /// then rendered from extra cameras around the reference orbit
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=8))]
    pub views: u64,
    /// Score needed to accept a registered candidate
    #[arg(long, default_value_t = 0.8)]
    pub min_score: f64,
    /// Output file (default: <out>/registered.json)
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Extra camera `j`: a quarter turn to alternating sides, widening every
/// second view, and a little higher.
fn extra_view(cfg: &ExperimentConfig, j: usize) -> ViewAction {
    let side = if j.is_multiple_of(2) { 1.0 } else { -1.0 };
    ViewAction {
        id: j + 1,
        camera_pose: cfg.camera.orbit(FRAC_PI_2 * side * (1.0 + (j / 2) as f64 * 0.5), 0.2),
        intrinsics: cfg.intrinsics,
    }
}

struct View {
    action: ViewAction,
    tensor: DcdTensor,
    gradient: GradientDirectionImage,
}

fn register_one(c: &ObjectCandidate, model: &ObjectModel, views: &[View], cfg: &ExperimentConfig) -> d2co::Result<(RegistrationResult, f64)> {
    let reference = views[0].action.camera_pose;
    let world = reference.inverse().compose(&c.pose);
    let templates: Vec<Option<RasterTemplate>> = views.iter().map(|v| model.template(&v.action.camera_pose.compose(&world), &cfg.intrinsics).ok()).collect();
    let base = match &templates[0] {
        Some(t) => t.clone(),
        None => model.template(&c.pose, &cfg.intrinsics)?,
    };
    let rviews: Vec<RegistrationView<'_>> = views
        .iter()
        .zip(&templates)
        .filter_map(|(v, t)| {
            Some(RegistrationView {
                tensor: &v.tensor,
                view_from_reference: v.action.camera_pose.compose(&reference.inverse()),
                intrinsics: cfg.intrinsics,
                template: Some(t.as_ref()?),
            })
        })
        .collect();
    let r = d2co_register(&RegistrationProblem {
        views: rviews,
        template: &base,
        initial: c.pose,
        options: cfg.registration,
    })?;
    let scored: Vec<_> = views
        .iter()
        .zip(&templates)
        .filter_map(|(v, t)| Some((t.as_ref()?, &v.gradient, v.action.camera_pose.compose(&reference.inverse()), cfg.intrinsics)))
        .collect();
    let s = score_views(&r.pose, &scored)?;
    Ok((r, s))
}

pub fn run(args: &RegisterArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    let p = &args.candidates;
    let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
    let file: CandidateFile = serde_json::from_str(&text).map_err(|e| CliError::io(p, e))?;
    let camera = cfg.camera.pose();
    let (dt, dr) = file.camera.distance(&camera);
    if dt > 1e-9 || dr > 1e-9 || file.intrinsics != cfg.intrinsics {
        return Err(CliError::Data(format!("{} was produced with a different camera than the configured one", p.display())));
    }
    let n_views = args.views as usize;
    if n_views > 1 && args.input.scene.is_none() {
        return Err(CliError::Config("--views above 1 needs --scene".into()));
    }
    let models = cfg.build_models()?;
    let input = read_input(&args.input, cfg, &models)?;
    let mut views = vec![View {
        action: reference_view(cfg),
        tensor: build_dcd(&input.edgels, &cfg.dcd)?,
        gradient: input.gradient,
    }];
    if let Some(scene) = &input.scene {
        for j in 0..n_views - 1 {
            let action = extra_view(cfg, j);
            let (edgels, gradient) = observe(cfg, scene, &action, &models)?;
            views.push(View {
                tensor: build_dcd(&edgels, &cfg.dcd)?,
                action,
                gradient,
            });
        }
    }

    let mut out = Vec::new();
    for c in &file.candidates {
        let res = models
            .iter()
            .find(|m| m.id == c.object_id)
            .ok_or_else(|| format!("unknown model {:?}", c.object_id))
            .and_then(|m| register_one(c, m, &views, cfg).map_err(|e| e.to_string()));
        let mut rc = RegisteredCandidate {
            object_id: c.object_id.clone(),
            template_ref: c.template_ref,
            avg_dcd: c.avg_dcd,
            initial_pose: c.pose,
            pose: c.pose,
            world_pose: camera.inverse().compose(&c.pose),
            score: None,
            accepted: false,
            initial_cost: None,
            final_cost: None,
            iterations: 0,
            converged: false,
            error: None,
            correct: None,
        };
        match res {
            Ok((r, s)) => {
                rc.pose = r.pose;
                rc.world_pose = camera.inverse().compose(&r.pose);
                rc.score = Some(s);
                rc.accepted = s >= args.min_score;
                rc.initial_cost = Some(r.initial_cost);
                rc.final_cost = Some(r.final_cost);
                rc.iterations = r.iterations;
                rc.converged = r.converged;
            }
            Err(e) => {
                log::warn!("candidate {} ({}): {e}", out.len(), c.object_id);
                rc.error = Some(e);
            }
        }
        if let Some(scene) = &input.scene {
            rc.correct = Some(scene.placements.iter().any(|g| {
                let (dt, dr) = g.pose.distance(&rc.world_pose);
                g.object_id == rc.object_id && dt < CORRECT_TRANSLATION && dr < CORRECT_ROTATION
            }));
        }
        out.push(rc);
    }
    let evaluation = input.scene.as_ref().map(|scene| {
        let est: Vec<Estimate> = out
            .iter()
            .filter(|c| c.accepted)
            .map(|c| Estimate {
                object_id: c.object_id.clone(),
                pose: c.world_pose,
            })
            .collect();
        evaluate(&est, scene, CORRECT_TRANSLATION, CORRECT_ROTATION)
    });
    log::info!("{} candidates registered over {} views", out.len(), views.len());
    write_json(
        &out_path(&args.output, &cfg.output_dir, "registered.json"),
        &RegisteredFile {
            schema_version: REGISTERED_SCHEMA_VERSION,
            source: input.label,
            views: views.len(),
            candidates: out,
            evaluation,
        },
    )
}
