//! The active detection loop: detect, sample realizations, seed particles,
//! then alternate view selection, acquisition and particle updates.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcd::{build_dcd, DcdOptions, DcdTensor};
use crate::detection::{average_dcd, project_template, scan_banks, NmsOptions, ScanOptions};
use crate::edges::{EdgelSet, GradientDirectionImage};
use crate::error::{invalid, Error, Result};
use crate::geometry::Pose;
use crate::registration::{d2co_register, score, score_views, RegistrationOptions, RegistrationProblem, RegistrationView};
use crate::sim::{render_observation, NoiseParams, SyntheticScene, ViewAction};
use crate::template::{ObjectModel, RasterTemplate, TemplateBank};

use super::baselines::{dis_baseline, random_baseline};
use super::mi::{action_log_likelihoods, mutual_information, ParticleView};
use super::particles::{bits_new, bits_set, extract_modes, resample, seed_particles, update_weights, Particle, ParticleSet};
use super::render_cache::{render_realization_maps, RenderCache, DEFAULT_TRUNCATION};
use super::sampling::{sample_combinations, PlacedCandidate, SceneRealization};

pub const TELEMETRY_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    MiMax,
    Dis,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mi-max" => Ok(Self::MiMax),
            "dis" => Ok(Self::Dis),
            "random" => Ok(Self::Random),
            _ => Err(invalid(format!("unknown strategy {s:?}"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::MiMax => "mi-max",
            Self::Dis => "dis",
            Self::Random => "random",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbvConfig {
    pub n_candidates: usize,
    pub n_particles: usize,
    pub n_combinations: usize,
    /// Views acquired beyond the initial image.
    pub max_views: usize,
    /// Stop when the best action's mutual information drops below this (nats).
    pub mi_epsilon: f64,
    pub occlusion_eps: f64,
    pub jitter_translation: f64,
    pub jitter_rotation: f64,
    pub cluster_translation: f64,
    pub cluster_rotation: f64,
    /// Minimum share of the particle weight for a cluster to be reported.
    pub cluster_min_weight: f64,
    /// Minimum score of a reported detection.
    pub score_threshold: f64,
    /// Distance map truncation (pixels).
    pub truncation: f64,
    pub dcd: DcdOptions,
    pub registration: RegistrationOptions,
    /// Iteration cap when refining particles.
    pub particle_iterations: usize,
    pub nms: Option<NmsOptions>,
    pub seed: u64,
}

impl Default for NbvConfig {
    fn default() -> Self {
        Self {
            n_candidates: 40,
            n_particles: 200,
            n_combinations: 1000,
            max_views: 5,
            mi_epsilon: 1e-3,
            occlusion_eps: 0.005,
            jitter_translation: 0.002,
            jitter_rotation: 0.02,
            cluster_translation: 0.005,
            cluster_rotation: 0.1,
            cluster_min_weight: 0.1,
            score_threshold: 0.8,
            truncation: DEFAULT_TRUNCATION,
            dcd: DcdOptions::default(),
            registration: RegistrationOptions::default(),
            particle_iterations: 10,
            nms: Some(NmsOptions::default()),
            seed: 0,
        }
    }
}

impl NbvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_candidates == 0 || self.n_particles == 0 || self.n_combinations == 0 {
            return Err(invalid("candidate, particle and combination counts must be positive"));
        }
        if self.truncation <= 0.0 || self.occlusion_eps < 0.0 {
            return Err(invalid("truncation must be positive and occlusion epsilon non-negative"));
        }
        Ok(())
    }
}

/// Action with the largest mutual information; ties go to the lowest id.
pub fn select_action(mi: &[(usize, f64)]) -> Option<(usize, f64)> {
    mi.iter()
        .copied()
        .fold(None, |b: Option<(usize, f64)>, (a, v)| match b {
            Some((ba, bv)) if bv > v || (bv == v && ba < a) => b,
            _ => Some((a, v)),
        })
}

/// One acquired image, as edgels plus gradient directions.
#[derive(Debug, Clone)]
pub struct AcquiredView {
    pub action: ViewAction,
    pub edgels: EdgelSet,
    pub gradient: GradientDirectionImage,
}

/// Supplies an image for any requested camera placement.
pub trait ViewSource {
    fn acquire(&mut self, action: &ViewAction) -> Result<AcquiredView>;
}

/// Renders views of a synthetic scene. Each action id gets its own noise
/// seed, so the same view is reproduced whenever it is requested.
pub struct SimViewSource<'a> {
    pub scene: &'a SyntheticScene,
    pub models: &'a [ObjectModel],
    pub noise: NoiseParams,
    pub seed: u64,
}

impl ViewSource for SimViewSource<'_> {
    fn acquire(&mut self, action: &ViewAction) -> Result<AcquiredView> {
        let seed = self.seed ^ (action.id as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let obs = render_observation(self.scene, action, self.models, &self.noise, seed)?;
        Ok(AcquiredView {
            action: *action,
            edgels: obs.edgels,
            gradient: obs.gradient,
        })
    }
}

struct RealView {
    action: ViewAction,
    tensor: DcdTensor,
    gradient: GradientDirectionImage,
}

fn real_view(v: AcquiredView, dcd: &DcdOptions) -> Result<RealView> {
    Ok(RealView {
        action: v.action,
        tensor: build_dcd(&v.edgels, dcd)?,
        gradient: v.gradient,
    })
}

/// A reported object instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub object_id: String,
    /// Object-to-world pose.
    pub pose: Pose,
    pub weight: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSummary {
    pub effective_size: f64,
    pub max_weight: f64,
    /// RMS distance of the particle translations from their weighted mean.
    pub translation_spread: f64,
    pub weights_reset: bool,
}

/// One line of telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTelemetry {
    pub schema_version: u32,
    pub strategy: Strategy,
    /// Number of views acquired beyond the initial image.
    pub step: usize,
    pub action: Option<usize>,
    /// `(action, mutual information)` for every evaluated action.
    pub mi: Vec<(usize, f64)>,
    pub particles: ParticleSummary,
    pub detections: Vec<Detection>,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbvOutcome {
    pub strategy: Strategy,
    pub visited: Vec<usize>,
    pub steps: Vec<StepTelemetry>,
    pub detections: Vec<Detection>,
}

impl NbvOutcome {
    /// Detections after `k` acquired views; the last estimate persists after
    /// an early stop.
    pub fn detections_after(&self, k: usize) -> &[Detection] {
        let i = k.min(self.steps.len() - 1);
        &self.steps[i].detections
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Everything computed before the view selection loop. Strategies share it.
pub struct NbvSession<'a> {
    pub models: &'a [ObjectModel],
    /// Index of the searched model.
    pub target: usize,
    pub actions: Vec<ViewAction>,
    pub candidates: Vec<PlacedCandidate>,
    pub realizations: Vec<SceneRealization>,
    pub cache: RenderCache,
    pub config: NbvConfig,
    initial: RealView,
}

/// Refines a world pose against a set of real views with the first view as
/// reference. Returns the refined pose, or the input when nothing projects.
fn refine(pose_world: &Pose, model: &ObjectModel, views: &[RealView], opts: &RegistrationOptions) -> Pose {
    let reference = views[0].action.camera_pose;
    let pose_ref = reference.compose(pose_world);
    let templates: Vec<Option<RasterTemplate>> = views
        .iter()
        .map(|v| model.template(&v.action.camera_pose.compose(pose_world), &v.action.intrinsics).ok())
        .collect();
    let reg_views: Vec<RegistrationView<'_>> = views
        .iter()
        .zip(&templates)
        .filter_map(|(v, t)| {
            t.as_ref().map(|t| RegistrationView {
                tensor: &v.tensor,
                view_from_reference: v.action.camera_pose.compose(&reference.inverse()),
                intrinsics: v.action.intrinsics,
                template: Some(t),
            })
        })
        .collect();
    let Some(first) = reg_views.first().and_then(|v| v.template) else {
        return *pose_world;
    };
    let problem = RegistrationProblem {
        views: reg_views.clone(),
        template: first,
        initial: pose_ref,
        options: *opts,
    };
    match d2co_register(&problem) {
        Ok(r) => reference.inverse().compose(&r.pose),
        Err(_) => *pose_world,
    }
}

impl<'a> NbvSession<'a> {
    /// Acquires the initial image from `initial`, detects and refines up to
    /// `n_candidates` candidates over all banks, samples realizations and
    /// renders the cache over `actions`.
    pub fn prepare(
        source: &mut dyn ViewSource,
        models: &'a [ObjectModel],
        banks: &[&TemplateBank],
        target_id: &str,
        initial: &ViewAction,
        actions: Vec<ViewAction>,
        config: NbvConfig,
    ) -> Result<Self> {
        config.validate()?;
        if actions.is_empty() {
            return Err(invalid("empty action set"));
        }
        let target = models
            .iter()
            .position(|m| m.id == target_id)
            .ok_or_else(|| invalid(format!("unknown target {target_id:?}")))?;
        let first = real_view(source.acquire(initial)?, &config.dcd)?;
        let intr = initial.intrinsics;
        let scan = ScanOptions {
            top_k: config.n_candidates,
            nms: config.nms,
            ..Default::default()
        };
        let found = scan_banks(&first.tensor, banks, &intr, &scan);
        let world_from_ref = initial.camera_pose.inverse();
        let mut reg_opts = config.registration;
        reg_opts.max_iterations = reg_opts.max_iterations.max(1);
        let candidates: Vec<PlacedCandidate> = found
            .par_iter()
            .filter_map(|c| {
                let mi = models.iter().position(|m| m.id == c.object_id)?;
                let model = &models[mi];
                let t = model.template(&c.pose, &intr).ok()?;
                let prob = RegistrationProblem {
                    options: reg_opts,
                    ..RegistrationProblem::single(&first.tensor, intr, &t, c.pose)
                };
                let refined = d2co_register(&prob).map(|r| r.pose).unwrap_or(c.pose);
                let t2 = model.template(&refined, &intr).ok()?;
                let s = score(&refined, &t2, &first.gradient, &intr).ok()?;
                Some(PlacedCandidate::new(models, mi, world_from_ref.compose(&refined), s))
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let realizations = sample_combinations(&candidates, config.n_combinations, &mut rng);
        let cache = render_realization_maps(&candidates, &actions, models, config.truncation);
        Ok(Self {
            models,
            target,
            actions,
            candidates,
            realizations,
            cache,
            config,
            initial: first,
        })
    }

    /// Runs the view selection loop with the given strategy.
    pub fn run(&self, source: &mut dyn ViewSource, strategy: Strategy) -> Result<NbvOutcome> {
        let cfg = &self.config;
        let model = &self.models[self.target];
        let total = model.raster.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
        let targets: Vec<&PlacedCandidate> = self.candidates.iter().filter(|c| c.model_index == self.target).collect();
        let mut set = ParticleSet {
            object_id: model.id.clone(),
            model_index: self.target,
            particles: seed_particles(&targets, cfg.n_particles, total, cfg.jitter_translation, cfg.jitter_rotation, &mut rng),
        };
        let mut views = vec![RealView {
            action: self.initial.action,
            tensor: self.initial.tensor.clone(),
            gradient: self.initial.gradient.clone(),
        }];
        let mut visited = vec![false; self.actions.len()];
        let mut order = Vec::new();
        let mut steps = Vec::new();
        // Points of every candidate seen in real views, for the DIS baseline.
        let mut cand_seen: Vec<Vec<u64>> = self
            .candidates
            .iter()
            .map(|c| {
                let m = &self.models[c.model_index];
                let mut b = bits_new(m.raster.len());
                for i in m.visible_ids(&views[0].action.camera_pose.compose(&c.pose), &views[0].action.intrinsics) {
                    bits_set(&mut b, i as usize);
                }
                b
            })
            .collect();
        let scores: Vec<f64> = self.candidates.iter().map(|c| c.score).collect();

        let (summary, dets) = self.update(&mut set, &views, &mut rng);
        steps.push(StepTelemetry {
            schema_version: TELEMETRY_SCHEMA_VERSION,
            strategy,
            step: 0,
            action: None,
            mi: Vec::new(),
            particles: summary,
            detections: dets,
            terminated: false,
        });

        for step in 1..=cfg.max_views {
            if visited.iter().all(|v| *v) {
                break;
            }
            let mut mi_values = Vec::new();
            let choice = match strategy {
                Strategy::Random => random_baseline(&visited, &mut rng),
                Strategy::Dis => dis_baseline(&scores, &cand_seen, &visited, &self.cache),
                Strategy::MiMax => {
                    mi_values = self.mutual_information_per_action(&set, &visited);
                    match select_action(&mi_values) {
                        Some((_, v)) if v < cfg.mi_epsilon => None,
                        b => b.map(|(a, _)| a),
                    }
                }
            };
            let Some(a) = choice else {
                if let Some(last) = steps.last_mut() {
                    last.terminated = true;
                }
                break;
            };
            visited[a] = true;
            order.push(a);
            let action = self.actions[a];
            views.push(real_view(source.acquire(&action)?, &cfg.dcd)?);
            for (c, b) in self.candidates.iter().zip(cand_seen.iter_mut()) {
                let m = &self.models[c.model_index];
                for i in m.visible_ids(&action.camera_pose.compose(&c.pose), &action.intrinsics) {
                    bits_set(b, i as usize);
                }
            }
            let (summary, dets) = self.update(&mut set, &views, &mut rng);
            steps.push(StepTelemetry {
                schema_version: TELEMETRY_SCHEMA_VERSION,
                strategy,
                step,
                action: Some(a),
                mi: mi_values,
                particles: summary,
                detections: dets,
                terminated: false,
            });
        }
        let detections = steps.last().map(|s| s.detections.clone()).unwrap_or_default();
        Ok(NbvOutcome {
            strategy,
            visited: order,
            steps,
            detections,
        })
    }

    /// Mutual information of every unvisited action.
    pub fn mutual_information_per_action(&self, set: &ParticleSet, visited: &[bool]) -> Vec<(usize, f64)> {
        let model = &self.models[set.model_index];
        let weights = set.weights();
        (0..self.actions.len())
            .into_par_iter()
            .filter(|&a| !visited[a])
            .map(|a| {
                let views: Vec<ParticleView> = set.particles.iter().map(|p| ParticleView::new(model, &p.pose, &self.actions[a])).collect();
                let table = action_log_likelihoods(
                    &set.particles,
                    &views,
                    &self.realizations,
                    a,
                    &self.cache,
                    model.raster.len(),
                    self.config.occlusion_eps,
                );
                (a, mutual_information(&table, self.realizations.len(), &weights))
            })
            .collect()
    }

    /// Refines, reweights and resamples the particles against the real views;
    /// returns the particle summary and the detections before resampling.
    fn update(&self, set: &mut ParticleSet, views: &[RealView], rng: &mut ChaCha8Rng) -> (ParticleSummary, Vec<Detection>) {
        let cfg = &self.config;
        let model = &self.models[set.model_index];
        let total = model.raster.len();
        let mut opts = cfg.registration;
        opts.max_iterations = cfg.particle_iterations;
        set.particles.par_iter_mut().for_each(|p| {
            p.pose = refine(&p.pose, model, views, &opts);
            let (ups, seen) = history(model, &p.pose, views);
            p.upsilon = ups;
            p.seen = seen;
        });
        let reset = update_weights(&mut set.particles, total);
        let summary = summarize(&set.particles, reset);
        let clusters = extract_modes(&set.particles, cfg.cluster_translation, cfg.cluster_rotation, cfg.cluster_min_weight);
        let dets = clusters
            .into_iter()
            .filter_map(|c| {
                let s = detection_score(model, &c.pose, views)?;
                (s >= cfg.score_threshold).then(|| Detection {
                    object_id: model.id.clone(),
                    pose: c.pose,
                    weight: c.weight,
                    score: s,
                })
            })
            .collect();
        set.particles = resample(&set.particles, cfg.n_particles, cfg.jitter_translation, cfg.jitter_rotation, rng);
        (summary, dets)
    }
}

/// `Υ = Σ_τ μ_τ²` over the real views, and the raster points seen in them.
fn history(model: &ObjectModel, pose_world: &Pose, views: &[RealView]) -> (f64, Vec<u64>) {
    let mut ups = 0.0;
    let mut seen = bits_new(model.raster.len());
    for v in views {
        let pose = v.action.camera_pose.compose(pose_world);
        let Ok(t) = model.template(&pose, &v.action.intrinsics) else { continue };
        for &i in &t.ids {
            bits_set(&mut seen, i as usize);
        }
        if let Ok(proj) = project_template(&t, &pose, &v.action.intrinsics) {
            if let Ok(mu) = average_dcd(&v.tensor, &proj) {
                ups += mu * mu;
            }
        }
    }
    (ups, seen)
}

fn detection_score(model: &ObjectModel, pose_world: &Pose, views: &[RealView]) -> Option<f64> {
    let reference = views[0].action.camera_pose;
    let templates: Vec<_> = views
        .iter()
        .filter_map(|v| {
            let t = model.template(&v.action.camera_pose.compose(pose_world), &v.action.intrinsics).ok()?;
            Some((t, v))
        })
        .collect();
    let args: Vec<_> = templates
        .iter()
        .map(|(t, v)| (t, &v.gradient, v.action.camera_pose.compose(&reference.inverse()), v.action.intrinsics))
        .collect();
    score_views(&reference.compose(pose_world), &args).ok()
}

fn summarize(ps: &[Particle], reset: bool) -> ParticleSummary {
    let sw2: f64 = ps.iter().map(|p| p.weight * p.weight).sum();
    let mean = ps.iter().fold(nalgebra::Vector3::zeros(), |m, p| m + p.pose.translation * p.weight);
    let spread = ps.iter().map(|p| p.weight * (p.pose.translation - mean).norm_squared()).sum::<f64>().sqrt();
    ParticleSummary {
        effective_size: if sw2 > 0.0 { 1.0 / sw2 } else { 0.0 },
        max_weight: ps.iter().map(|p| p.weight).fold(0.0, f64::max),
        translation_spread: spread,
        weights_reset: reset,
    }
}
