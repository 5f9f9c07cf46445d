//! Reproducible synthetic experiments: registration basin, detection ranking,
//! single- vs multi-view registration under occlusion, next-best-view
//! comparisons, scoring calibration and timing. The command line and the
//! acceptance suite both run these.

use std::f64::consts::PI;
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcd::{build_dcd, DcdOptions};
use crate::detection::{scan_candidates, ScanOptions};
use crate::edges::EdgelSet;
use crate::error::{invalid, Result};
use crate::geometry::{Aabb, CameraIntrinsics, Pose};
use crate::mesh::shapes::cuboid;
use crate::nbv::{NbvConfig, NbvOutcome, NbvSession, SimViewSource, Strategy};
use crate::registration::{d2co_register, score, RegistrationOptions, RegistrationProblem, RegistrationView};
use crate::sim::{
    self, default_intrinsics, evaluate, hemisphere_views_above, orbit_camera, perturb_pose_by, random_unit, render_observation, resting_pose, Estimate,
    NoiseParams, Placement, SyntheticScene, ViewAction, SCENE_SCHEMA_VERSION,
};
use crate::template::{ObjectModel, Range1, TemplateBank, TemplateOptions};

/// Correct-localization thresholds: 5 mm and 0.1 rad.
pub const CORRECT_TRANSLATION: f64 = 0.005;
pub const CORRECT_ROTATION: f64 = 0.1;

fn trial_rng(seed: u64, k: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (k as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn correct(a: &Pose, b: &Pose) -> bool {
    let (dt, dr) = a.distance(b);
    dt < CORRECT_TRANSLATION && dr < CORRECT_ROTATION
}

/// Models, camera and workspace shared by the experiments.
#[derive(Debug, Clone)]
pub struct Setup {
    pub models: Vec<ObjectModel>,
    pub intrinsics: CameraIntrinsics,
    /// World-to-camera pose of the first (reference) view.
    pub reference: Pose,
    pub workspace: Aabb,
    pub dcd: DcdOptions,
    pub registration: RegistrationOptions,
}

impl Default for Setup {
    fn default() -> Self {
        Self {
            models: sim::standard_models(),
            intrinsics: default_intrinsics(),
            reference: orbit_camera(&Vector3::zeros(), 0.4, 1.0, -PI / 2.0),
            workspace: Aabb {
                min: Vector3::new(-0.1, -0.1, 0.0),
                max: Vector3::new(0.1, 0.1, 0.1),
            },
            dcd: DcdOptions::default(),
            registration: RegistrationOptions::default(),
        }
    }
}

/// Resting poses on the table: a grid over position and yaw, optionally
/// with both faces up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableGrid {
    pub x: Range1,
    pub y: Range1,
    pub yaw: Range1,
    pub flips: bool,
}

impl TableGrid {
    pub fn poses(&self, model: &ObjectModel) -> Vec<Pose> {
        let flips: &[bool] = if self.flips { &[false, true] } else { &[false] };
        let mut out = Vec::new();
        for &f in flips {
            for x in self.x.values() {
                for y in self.y.values() {
                    for yaw in self.yaw.values() {
                        out.push(resting_pose(model, x, y, yaw, f));
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.x.count * self.y.count * self.yaw.count * if self.flips { 2 } else { 1 }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bank of `grid` poses seen from `camera` (world to camera).
pub fn table_bank(model: &ObjectModel, grid: &TableGrid, camera: &Pose, intr: &CameraIntrinsics) -> Result<TemplateBank> {
    let poses: Vec<Pose> = grid.poses(model).iter().map(|p| camera.compose(p)).collect();
    TemplateBank::from_poses(model, &poses, intr)
}

fn single_scene(object_id: &str, pose: Pose, workspace: &Aabb) -> SyntheticScene {
    SyntheticScene {
        schema_version: SCENE_SCHEMA_VERSION,
        placements: vec![Placement {
            object_id: object_id.into(),
            pose,
        }],
        workspace: *workspace,
        seed: 0,
    }
}

fn view(camera: Pose, intr: CameraIntrinsics) -> ViewAction {
    ViewAction {
        id: 0,
        camera_pose: camera,
        intrinsics: intr,
    }
}

// ---------------------------------------------------------------------------
// Registration fixed point and basin.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    pub translation_change: f64,
    pub rotation_change: f64,
}

/// Registration started at the true pose of a face-on box whose front edges
/// project onto pixel centres (σ = 0 tensor, so the true cost is zero).
pub fn fixed_point_trial() -> Result<FixedPointReport> {
    let intr = CameraIntrinsics::new(600.0, 600.0, 160.0, 120.0, 320, 240)?;
    let px = 0.4 / 600.0;
    let opts = TemplateOptions {
        step: 2.0 * px,
        ..Default::default()
    };
    let model = ObjectModel::new("box", cuboid(60.0 * px, 40.0 * px, 0.01), 0.52, opts)?;
    let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 0.405));
    // Front-face edges only; the receding ones project between channels.
    let ids = model
        .visible_ids(&pose, &intr)
        .into_iter()
        .filter(|&i| model.raster.tangents[i as usize].z.abs() < 1e-9)
        .collect();
    let t = model.template_from_ids(ids)?;
    let mut e = EdgelSet::new(intr.width, intr.height);
    for p in crate::detection::project_template(&t, &pose, &intr)? {
        e.push(p.pos, p.xi);
    }
    let dt = build_dcd(&e, &DcdOptions { sigma: 0.0, ..Default::default() })?;
    let prob = RegistrationProblem::single(&dt, intr, &t, pose);
    let r = d2co_register(&prob)?;
    let (a, b) = r.pose.distance(&pose);
    Ok(FixedPointReport {
        initial_cost: r.initial_cost,
        iterations: r.iterations,
        converged: r.converged,
        translation_change: a,
        rotation_change: b,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinRow {
    pub translation_mm: f64,
    pub rotation_rad: f64,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub mean_ms: f64,
    /// Trials whose accepted costs were not non-increasing (should be 0).
    pub monotonicity_violations: usize,
}

/// Single-object clean scenes seen from random oblique cameras. Each trial
/// draws one translation and one rotation direction and applies them at every
/// magnitude `m` (millimetres), with rotation `m · rad_per_mm`.
pub fn basin_sweep(setup: &Setup, magnitudes_mm: &[f64], rad_per_mm: f64, trials: usize, seed: u64) -> Result<Vec<BasinRow>> {
    let mut rows: Vec<BasinRow> = magnitudes_mm
        .iter()
        .map(|&m| BasinRow {
            translation_mm: m,
            rotation_rad: m * rad_per_mm,
            trials: 0,
            successes: 0,
            rate: 0.0,
            mean_ms: 0.0,
            monotonicity_violations: 0,
        })
        .collect();
    if magnitudes_mm.is_empty() {
        return Ok(rows);
    }
    let intr = setup.intrinsics;
    for k in 0..trials {
        let mut rng = trial_rng(seed, k);
        let mi = k % setup.models.len();
        let model = &setup.models[mi];
        let world = resting_pose(model, rng.random_range(-0.02..0.02), rng.random_range(-0.02..0.02), rng.random_range(-PI..PI), rng.random_bool(0.5));
        let cam = orbit_camera(&Vector3::new(0.0, 0.0, 0.008), 0.35, rng.random_range(0.7..1.2), rng.random_range(-PI..PI));
        let scene = single_scene(&model.id, world, &setup.workspace);
        let obs = render_observation(&scene, &view(cam, intr), &setup.models, &NoiseParams::default(), k as u64)?;
        let tensor = build_dcd(&obs.edgels, &setup.dcd)?;
        let truth = cam.compose(&world);
        let ut = random_unit(&mut rng);
        let ur = random_unit(&mut rng);
        for row in rows.iter_mut() {
            let init = perturb_pose_by(&truth, &(ut * row.translation_mm * 1e-3), &(ur * row.rotation_rad));
            row.trials += 1;
            let Ok(t) = model.template(&init, &intr) else { continue };
            let prob = RegistrationProblem {
                options: setup.registration,
                ..RegistrationProblem::single(&tensor, intr, &t, init)
            };
            let start = Instant::now();
            let res = d2co_register(&prob);
            row.mean_ms += start.elapsed().as_secs_f64() * 1e3;
            if let Ok(r) = res {
                if r.cost_history.windows(2).any(|w| w[1] > w[0]) {
                    row.monotonicity_violations += 1;
                }
                if correct(&r.pose, &truth) {
                    row.successes += 1;
                }
            }
        }
    }
    for row in rows.iter_mut() {
        if row.trials > 0 {
            row.rate = row.successes as f64 / row.trials as f64;
            row.mean_ms /= row.trials as f64;
        }
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Detection ranking.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpFpRow {
    pub k: usize,
    pub true_positives: usize,
    pub false_positives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub scenes: usize,
    pub bank_size: usize,
    pub rank1: usize,
    pub rank1_rate: f64,
    /// Scenes where the registered rank-1 candidate is a correct localization.
    pub loop_correct: usize,
    pub curve: Vec<TpFpRow>,
}

/// The 200-pose grid of the detection experiment: 5 × 5 positions 10 mm apart
/// and 8 yaw angles.
pub fn detection_grid() -> TableGrid {
    TableGrid {
        x: Range1::new(-0.02, 0.02, 5),
        y: Range1::new(-0.02, 0.02, 5),
        yaw: Range1::periodic(0.0, 2.0 * PI, 8),
        flips: false,
    }
}

/// Scenes with the searched object at a random grid pose plus two distractor
/// objects of other types, rendered without noise from the reference camera.
/// Candidates are ranked over the whole bank; the TP/FP curve accumulates,
/// over the top `k` entries, scenes whose true entry is retrieved and
/// retrieved entries that are not it.
pub fn detection_trials(setup: &Setup, n_scenes: usize, max_k: usize, seed: u64) -> Result<DetectionReport> {
    let grid = detection_grid();
    let intr = setup.intrinsics;
    let banks: Vec<TemplateBank> = setup
        .models
        .iter()
        .map(|m| table_bank(m, &grid, &setup.reference, &intr))
        .collect::<Result<_>>()?;
    let mut ranks = Vec::new();
    let mut loop_correct = 0;
    for k in 0..n_scenes {
        let mut rng = trial_rng(seed, k);
        let mi = k % setup.models.len();
        let model = &setup.models[mi];
        let bank = &banks[mi];
        let entry = rng.random_range(0..bank.len());
        let world = setup.reference.inverse().compose(&bank.entries[entry].pose);
        let mut placements = vec![Placement {
            object_id: model.id.clone(),
            pose: world,
        }];
        let mut boxes = vec![sim::placed_aabb(model, &world)];
        let mut tries = 0;
        while placements.len() < 3 && tries < 10_000 {
            tries += 1;
            let other = &setup.models[(mi + placements.len()) % setup.models.len()];
            let p = resting_pose(
                other,
                rng.random_range(setup.workspace.min.x..setup.workspace.max.x),
                rng.random_range(setup.workspace.min.y..setup.workspace.max.y),
                rng.random_range(-PI..PI),
                rng.random_bool(0.5),
            );
            let b = sim::placed_aabb(other, &p);
            // Keep distractors clear of the searched object.
            if boxes.iter().any(|o| o.intersects(&b, 0.01)) {
                continue;
            }
            boxes.push(b);
            placements.push(Placement {
                object_id: other.id.clone(),
                pose: p,
            });
        }
        let scene = SyntheticScene {
            schema_version: SCENE_SCHEMA_VERSION,
            placements,
            workspace: setup.workspace,
            seed: k as u64,
        };
        let obs = render_observation(&scene, &view(setup.reference, intr), &setup.models, &NoiseParams::default(), k as u64)?;
        let tensor = build_dcd(&obs.edgels, &setup.dcd)?;
        let scan = ScanOptions {
            top_k: bank.len(),
            ..Default::default()
        };
        let cands = scan_candidates(&tensor, bank, &intr, &scan);
        let rank = cands.iter().position(|c| c.template_ref == entry);
        ranks.push(rank);
        if let Some(top) = cands.first() {
            if let Ok(t) = model.template(&top.pose, &intr) {
                let prob = RegistrationProblem {
                    options: setup.registration,
                    ..RegistrationProblem::single(&tensor, intr, &t, top.pose)
                };
                if let Ok(r) = d2co_register(&prob) {
                    let est = Estimate {
                        object_id: model.id.clone(),
                        pose: setup.reference.inverse().compose(&r.pose),
                    };
                    let solo = single_scene(&model.id, world, &setup.workspace);
                    if evaluate(&[est], &solo, CORRECT_TRANSLATION, CORRECT_ROTATION).correct == 1 {
                        loop_correct += 1;
                    }
                }
            }
        }
    }
    let rank1 = ranks.iter().filter(|r| **r == Some(0)).count();
    let curve = (1..=max_k)
        .map(|kk| {
            let tp = ranks.iter().filter(|r| r.is_some_and(|v| v < kk)).count();
            TpFpRow {
                k: kk,
                true_positives: tp,
                false_positives: n_scenes * kk - tp,
            }
        })
        .collect();
    Ok(DetectionReport {
        scenes: n_scenes,
        bank_size: grid.len(),
        rank1,
        rank1_rate: if n_scenes == 0 { 0.0 } else { rank1 as f64 / n_scenes as f64 },
        loop_correct,
        curve,
    })
}

// ---------------------------------------------------------------------------
// Single- vs multi-view registration under occlusion.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewReport {
    pub scenes: usize,
    pub extra_views: usize,
    /// Mean fraction of the self-visible template hidden by the occluder in
    /// the reference view.
    pub mean_occlusion: f64,
    pub min_occlusion: f64,
    pub single_correct: usize,
    pub multi_correct: usize,
    pub single_rate: f64,
    pub multi_rate: f64,
}

/// Id of the wall used as occluder in the multi-view experiment.
pub const WALL_ID: &str = "wall";

pub fn wall_model() -> ObjectModel {
    ObjectModel::with_defaults(WALL_ID, cuboid(0.012, 0.07, 0.09)).expect("valid wall")
}

/// Fraction of the self-visible points of placement `index` hidden by the
/// rest of the scene.
pub fn occlusion_fraction(scene: &SyntheticScene, index: usize, v: &ViewAction, models: &[ObjectModel]) -> Result<f64> {
    let p = &scene.placements[index];
    let m = sim::model_by_id(models, &p.object_id)?;
    let alone = m.visible_ids(&v.camera_pose.compose(&p.pose), &v.intrinsics).len();
    let with = sim::visible_sets(scene, v, models)?[index].len();
    Ok(if alone == 0 { 1.0 } else { 1.0 - with as f64 / alone as f64 })
}

/// Scenes with a wall standing between the reference camera and the object,
/// hiding between `min_occlusion` and `max_occlusion` of its template. Registration
/// starts from the truth perturbed by `(trans_mag, rot_mag)` in a random
/// direction; the multi-view variant adds `extra_views` cameras spread
/// around the object.
pub fn multiview_trials(setup: &Setup, n_scenes: usize, extra_views: usize, trans_mag: f64, rot_mag: f64, min_occlusion: f64, max_occlusion: f64, seed: u64) -> Result<MultiViewReport> {
    let mut models = setup.models.clone();
    models.push(wall_model());
    let intr = setup.intrinsics;
    let mut occl = Vec::new();
    let (mut single_ok, mut multi_ok) = (0, 0);
    for k in 0..n_scenes {
        let mut rng = trial_rng(seed, k);
        let model = &setup.models[k % setup.models.len()];
        let az: f64 = rng.random_range(-PI..PI);
        let elev = rng.random_range(0.6..0.8);
        let cam = orbit_camera(&Vector3::new(0.0, 0.0, 0.008), 0.35, elev, az);
        let toward = Vector3::new(az.cos(), az.sin(), 0.0);
        let world = resting_pose(model, 0.0, 0.0, rng.random_range(-PI..PI), rng.random_bool(0.5));
        let mut found = None;
        for _ in 0..1000 {
            let d = rng.random_range(0.035..0.09);
            let side = rng.random_range(-0.07..0.07);
            let c = toward * d + Vector3::new(-toward.y, toward.x, 0.0) * side;
            let wall = resting_pose(&models[models.len() - 1], c.x, c.y, az, false);
            let scene = SyntheticScene {
                schema_version: SCENE_SCHEMA_VERSION,
                placements: vec![
                    Placement {
                        object_id: model.id.clone(),
                        pose: world,
                    },
                    Placement {
                        object_id: WALL_ID.into(),
                        pose: wall,
                    },
                ],
                workspace: setup.workspace,
                seed: k as u64,
            };
            let wall_box = sim::placed_aabb(&models[models.len() - 1], &wall);
            if wall_box.intersects(&sim::placed_aabb(model, &world), 0.002) {
                continue;
            }
            let f = occlusion_fraction(&scene, 0, &view(cam, intr), &models)?;
            if f >= min_occlusion && f <= max_occlusion {
                found = Some((scene, f));
                break;
            }
        }
        let Some((scene, f)) = found else {
            return Err(invalid(format!("no occluded configuration for scene {k}")));
        };
        occl.push(f);
        let mut cams = vec![cam];
        for j in 0..extra_views {
            let a = az + PI * 0.5 * if j % 2 == 0 { 1.0 } else { -1.0 } * (1.0 + (j / 2) as f64 * 0.5);
            cams.push(orbit_camera(&Vector3::new(0.0, 0.0, 0.008), 0.35, elev + 0.2, a));
        }
        let mut tensors = Vec::new();
        for (j, c) in cams.iter().enumerate() {
            let mut v = view(*c, intr);
            v.id = j;
            let obs = render_observation(&scene, &v, &models, &NoiseParams::default(), (k * 16 + j) as u64)?;
            tensors.push(build_dcd(&obs.edgels, &setup.dcd)?);
        }
        let truth = cam.compose(&world);
        let init = sim::perturb_pose_rng(&truth, trans_mag, rot_mag, &mut rng);
        let init_world = cam.inverse().compose(&init);
        let templates: Vec<_> = cams.iter().map(|c| model.template(&c.compose(&init_world), &intr).ok()).collect();
        let Some(t0) = templates[0].as_ref() else { continue };
        let single = RegistrationProblem {
            options: setup.registration,
            ..RegistrationProblem::single(&tensors[0], intr, t0, init)
        };
        if d2co_register(&single).is_ok_and(|r| correct(&r.pose, &truth)) {
            single_ok += 1;
        }
        let views: Vec<RegistrationView<'_>> = cams
            .iter()
            .zip(&tensors)
            .zip(&templates)
            .filter_map(|((c, tensor), t)| {
                Some(RegistrationView {
                    tensor,
                    view_from_reference: c.compose(&cam.inverse()),
                    intrinsics: intr,
                    template: Some(t.as_ref()?),
                })
            })
            .collect();
        let multi = RegistrationProblem {
            views,
            template: t0,
            initial: init,
            options: setup.registration,
        };
        if d2co_register(&multi).is_ok_and(|r| correct(&r.pose, &truth)) {
            multi_ok += 1;
        }
    }
    let n = n_scenes.max(1) as f64;
    Ok(MultiViewReport {
        scenes: n_scenes,
        extra_views,
        mean_occlusion: occl.iter().sum::<f64>() / n,
        min_occlusion: occl.iter().copied().fold(f64::INFINITY, f64::min),
        single_correct: single_ok,
        multi_correct: multi_ok,
        single_rate: single_ok as f64 / n,
        multi_rate: multi_ok as f64 / n,
    })
}

// ---------------------------------------------------------------------------
// Scoring calibration.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub trials: usize,
    pub truth_min: f64,
    pub truth_mean: f64,
    pub displaced_max: f64,
    pub displaced_mean: f64,
    /// Fraction of truth and displaced poses classified correctly by `threshold`.
    pub accuracy: f64,
    pub threshold: f64,
}

/// Scores of true poses of isolated objects against poses shifted parallel to the image plane so
/// that the object origin moves by `displacement_px`.
pub fn score_trials(setup: &Setup, n: usize, displacement_px: f64, threshold: f64, seed: u64) -> Result<ScoreReport> {
    let intr = setup.intrinsics;
    let mut truth_scores = Vec::new();
    let mut shifted_scores = Vec::new();
    for k in 0..n {
        let mut rng = trial_rng(seed, k);
        let model = &setup.models[k % setup.models.len()];
        let world = resting_pose(model, rng.random_range(-0.03..0.03), rng.random_range(-0.03..0.03), rng.random_range(-PI..PI), rng.random_bool(0.5));
        let scene = single_scene(&model.id, world, &setup.workspace);
        let cam = orbit_camera(&Vector3::zeros(), 0.4, rng.random_range(0.7..1.3), rng.random_range(-PI..PI));
        let v = view(cam, intr);
        let obs = render_observation(&scene, &v, &setup.models, &NoiseParams::default(), k as u64)?;
        let truth = cam.compose(&world);
        let t = model.template(&truth, &intr)?;
        truth_scores.push(score(&truth, &t, &obs.gradient, &intr)?);
        let ang: f64 = rng.random_range(0.0..2.0 * PI);
        let shift = Vector3::new(ang.cos() * truth.translation.z / intr.fx, ang.sin() * truth.translation.z / intr.fy, 0.0) * displacement_px;
        let moved = Pose::new(truth.translation + shift, truth.rotation);
        shifted_scores.push(score(&moved, &t, &obs.gradient, &intr)?);
    }
    let ok = truth_scores.iter().filter(|s| **s >= threshold).count() + shifted_scores.iter().filter(|s| **s < threshold).count();
    let m = n.max(1) as f64;
    Ok(ScoreReport {
        trials: n,
        truth_min: truth_scores.iter().copied().fold(f64::INFINITY, f64::min),
        truth_mean: truth_scores.iter().sum::<f64>() / m,
        displaced_max: shifted_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        displaced_mean: shifted_scores.iter().sum::<f64>() / m,
        accuracy: ok as f64 / (2.0 * m),
        threshold,
    })
}

// ---------------------------------------------------------------------------
// Timing.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub width: usize,
    pub height: usize,
    pub q: usize,
    pub tensor_build_ms: f64,
    pub registration_ms: f64,
    pub template_points: usize,
    pub iterations: usize,
}

/// Builds a 1024×768 tensor and runs one registration with up to 50
/// iterations over about `points` template points. The stopping tolerances
/// are disabled so the iteration cap, or an exhausted damping search, ends
/// the run.
pub fn timing_trial(setup: &Setup, points: usize, seed: u64) -> Result<TimingReport> {
    let intr = CameraIntrinsics::new(960.0, 960.0, 511.5, 383.5, 1024, 768)?;
    let mut rng = trial_rng(seed, 0);
    let model = &setup.models[0];
    let world = resting_pose(model, 0.0, 0.0, 0.4, false);
    let cam = orbit_camera(&Vector3::new(0.0, 0.0, 0.008), 0.22, 0.9, 0.3);
    let scene = single_scene(&model.id, world, &setup.workspace);
    let obs = render_observation(
        &scene,
        &view(cam, intr),
        &setup.models,
        &NoiseParams {
            clutter_count: 50,
            ..Default::default()
        },
        seed,
    )?;
    let dcd = DcdOptions { q: 60, ..setup.dcd };
    let start = Instant::now();
    let tensor = build_dcd(&obs.edgels, &dcd)?;
    let tensor_build_ms = start.elapsed().as_secs_f64() * 1e3;
    let truth = cam.compose(&world);
    let init = sim::perturb_pose_rng(&truth, 0.01, 0.1, &mut rng);
    let ids = model.visible_ids(&init, &intr);
    let n = points.clamp(1, ids.len().max(1));
    let ids: Vec<u32> = (0..n).filter_map(|i| ids.get(i * ids.len() / n).copied()).collect();
    let t = model.template_from_ids(ids)?;
    let prob = RegistrationProblem {
        options: RegistrationOptions {
            max_iterations: 50,
            min_step: 0.0,
            min_relative_decrease: 0.0,
            ..setup.registration
        },
        ..RegistrationProblem::single(&tensor, intr, &t, init)
    };
    let start = Instant::now();
    let r = d2co_register(&prob)?;
    let registration_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(TimingReport {
        width: intr.width,
        height: intr.height,
        q: dcd.q,
        tensor_build_ms,
        registration_ms,
        template_points: t.len(),
        iterations: r.iterations,
    })
}

// ---------------------------------------------------------------------------
// Next-best-view comparison.

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NbvExperiment {
    pub scenes: usize,
    pub objects_per_scene: usize,
    pub actions: usize,
    /// Camera distance from the workspace centre (m).
    pub view_radius: f64,
    pub min_elevation: f64,
    pub strategies: Vec<Strategy>,
    pub noise: NoiseParams,
    pub grid: TableGrid,
    pub planner: NbvConfig,
    pub seed: u64,
}

impl Default for NbvExperiment {
    fn default() -> Self {
        Self {
            scenes: 20,
            objects_per_scene: 7,
            actions: 32,
            view_radius: 0.4,
            min_elevation: 0.5,
            strategies: vec![Strategy::MiMax, Strategy::Random],
            noise: NoiseParams::default(),
            grid: TableGrid {
                x: Range1::new(-0.08, 0.08, 11),
                y: Range1::new(-0.08, 0.08, 11),
                yaw: Range1::periodic(0.0, 2.0 * PI, 16),
                flips: true,
            },
            planner: NbvConfig::default(),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbvRow {
    pub strategy: Strategy,
    /// Views acquired beyond the initial image.
    pub views: usize,
    pub mean_correct_rate: f64,
    pub mean_false_positives: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbvSceneResult {
    pub scene: usize,
    pub target: String,
    pub instances: usize,
    pub candidates: usize,
    pub outcomes: Vec<NbvOutcome>,
}

/// Banks of every model over the experiment grid, seen from the reference camera.
pub fn nbv_banks(setup: &Setup, exp: &NbvExperiment) -> Result<Vec<TemplateBank>> {
    setup
        .models
        .par_iter()
        .map(|m| table_bank(m, &exp.grid, &setup.reference, &setup.intrinsics))
        .collect()
}

/// Runs every strategy of `exp` on one scene, searching for `target`.
/// `index` selects the planner and noise seeds.
pub fn nbv_scene(setup: &Setup, exp: &NbvExperiment, banks: &[TemplateBank], scene: &SyntheticScene, target: &str, index: usize) -> Result<NbvSceneResult> {
    let intr = setup.intrinsics;
    sim::model_by_id(&setup.models, target)?;
    let bank_refs: Vec<&TemplateBank> = banks.iter().collect();
    let center = setup.workspace.center().component_mul(&Vector3::new(1.0, 1.0, 0.0));
    let actions = hemisphere_views_above(&center, exp.view_radius, exp.actions, exp.seed, exp.min_elevation, &intr);
    let initial = ViewAction {
        id: usize::MAX,
        camera_pose: setup.reference,
        intrinsics: intr,
    };
    let mut cfg = exp.planner.clone();
    cfg.seed = exp.seed.wrapping_mul(31).wrapping_add(index as u64);
    cfg.dcd = setup.dcd;
    let mut source = SimViewSource {
        scene,
        models: &setup.models,
        noise: exp.noise,
        seed: cfg.seed,
    };
    let session = NbvSession::prepare(&mut source, &setup.models, &bank_refs, target, &initial, actions, cfg)?;
    let outcomes = exp.strategies.iter().map(|&s| session.run(&mut source, s)).collect::<Result<Vec<_>>>()?;
    Ok(NbvSceneResult {
        scene: index,
        instances: scene.placements.iter().filter(|p| p.object_id == target).count(),
        target: target.to_string(),
        candidates: session.candidates.len(),
        outcomes,
    })
}

/// Mean correct rate and false positives after each number of views, per strategy.
pub fn nbv_rows(exp: &NbvExperiment, scenes: &[SyntheticScene], results: &[NbvSceneResult]) -> Vec<NbvRow> {
    let mut rows = Vec::new();
    for (si, &s) in exp.strategies.iter().enumerate() {
        for views in 0..=exp.planner.max_views {
            let (mut cr, mut fp) = (0.0, 0.0);
            for (scene, r) in scenes.iter().zip(results) {
                let (c, f) = score_detections(scene, &r.target, r.outcomes[si].detections_after(views));
                cr += c;
                fp += f;
            }
            let n = results.len().max(1) as f64;
            rows.push(NbvRow {
                strategy: s,
                views,
                mean_correct_rate: cr / n,
                mean_false_positives: fp / n,
            });
        }
    }
    rows
}

/// Runs every strategy on the same generated scenes, sharing detections,
/// realizations and render caches. The searched type is the type of the
/// first placement; after each view the current detections are matched
/// against the instances of that type.
pub fn nbv_trials(setup: &Setup, exp: &NbvExperiment) -> Result<(Vec<NbvRow>, Vec<NbvSceneResult>)> {
    let banks = nbv_banks(setup, exp)?;
    let mut scenes = Vec::new();
    let mut results = Vec::new();
    for k in 0..exp.scenes {
        let scene = sim::generate_scene(&setup.models, exp.objects_per_scene, &setup.workspace, exp.seed.wrapping_add(k as u64))?;
        let target = scene.placements[0].object_id.clone();
        results.push(nbv_scene(setup, exp, &banks, &scene, &target, k)?);
        log::info!("nbv scene {k} done");
        scenes.push(scene);
    }
    Ok((nbv_rows(exp, &scenes, &results), results))
}

/// Correct rate over the instances of `target`, and false positives.
pub fn score_detections(scene: &SyntheticScene, target: &str, dets: &[crate::nbv::Detection]) -> (f64, f64) {
    let only = SyntheticScene {
        placements: scene.placements.iter().filter(|p| p.object_id == target).cloned().collect(),
        ..scene.clone()
    };
    let est: Vec<Estimate> = dets
        .iter()
        .map(|d| Estimate {
            object_id: d.object_id.clone(),
            pose: d.pose,
        })
        .collect();
    let m = evaluate(&est, &only, CORRECT_TRANSLATION, CORRECT_ROTATION);
    (m.correct_rate, m.false_positives as f64)
}
