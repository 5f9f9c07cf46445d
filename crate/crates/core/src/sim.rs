//! Synthetic scenes: object placements on a table, hemisphere camera sets,
//! rendered edge observations and ground-truth evaluation.
//!
//! Observations are edge maps rather than photometric images. Each visible
//! raster sample of each object becomes an edgel carrying its projected edge
//! orientation; objects occlude each other through a shared depth buffer.
//! The gradient-direction image stores `ξ − π/2` at edgel pixels and random
//! directions elsewhere.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::detection::projected_orientation;
use crate::edges::{wrap_pi, EdgelSet, GradientDirectionImage};
use crate::error::{invalid, Error, Result};
use crate::geometry::{look_at, Aabb, CameraIntrinsics, ImagePoint, Pose};
use crate::image::GrayImage;
use crate::mesh::shapes::extrude;
use crate::raster::{DepthBuffer, Window};
use crate::template::{visible_ids_in, EdgeRaster, ObjectModel, DEFAULT_DEPTH_EPS};

pub const SCENE_SCHEMA_VERSION: u32 = 1;
pub const MAX_PLACEMENT_ATTEMPTS: usize = 10_000;
/// Consecutive rejections after which scene generation starts over.
const RESTART_AFTER: usize = 500;
/// Plausibility margin between object bounding boxes (meters).
pub const PLAUSIBILITY_MARGIN: f64 = 0.002;

fn centered(poly: &[[f64; 2]]) -> Vec<Vector2<f64>> {
    let pts: Vec<Vector2<f64>> = poly.iter().map(|p| Vector2::new(p[0], p[1])).collect();
    // Area centroid.
    let (mut a, mut c) = (0.0, Vector2::zeros());
    for i in 0..pts.len() {
        let (p, q) = (pts[i], pts[(i + 1) % pts.len()]);
        let cr = p.x * q.y - q.x * p.y;
        a += cr;
        c += (p + q) * cr;
    }
    let c = c / (3.0 * a);
    pts.iter().map(|p| p - c).collect()
}

/// Three asymmetric prisms of desk-top size: an L profile, an irregular
/// quadrilateral and an irregular pentagon.
pub fn standard_models() -> Vec<ObjectModel> {
    let specs: [(&str, &[[f64; 2]], f64); 3] = [
        (
            "ell",
            &[[0.0, 0.0], [0.06, 0.0], [0.06, 0.016], [0.022, 0.016], [0.022, 0.042], [0.0, 0.042]],
            0.015,
        ),
        ("quad", &[[0.0, 0.0], [0.052, 0.0], [0.036, 0.032], [0.006, 0.026]], 0.02),
        (
            "pent",
            &[[0.0, 0.0], [0.046, 0.006], [0.05, 0.03], [0.02, 0.046], [-0.006, 0.024]],
            0.012,
        ),
    ];
    specs
        .iter()
        .map(|(id, poly, h)| {
            let mesh = extrude(&centered(poly), *h).expect("built-in polygon");
            ObjectModel::with_defaults(*id, mesh).expect("built-in model")
        })
        .collect()
}

pub fn model_by_id<'a>(models: &'a [ObjectModel], id: &str) -> Result<&'a ObjectModel> {
    models
        .iter()
        .find(|m| m.id == id)
        .ok_or_else(|| invalid(format!("unknown object id {id:?}")))
}

/// 640×480 pinhole camera with a 600 px focal length.
pub fn default_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics::new(600.0, 600.0, 319.5, 239.5, 640, 480).expect("valid intrinsics")
}

/// World-to-camera pose of a camera at `distance` from `target`, at the given
/// elevation above the table plane and azimuth around the vertical.
pub fn orbit_camera(target: &Vector3<f64>, distance: f64, elevation: f64, azimuth: f64) -> Pose {
    let dir = Vector3::new(elevation.cos() * azimuth.cos(), elevation.cos() * azimuth.sin(), elevation.sin());
    look_at(&(target + dir * distance), target, &Vector3::z())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub object_id: String,
    /// Object-to-world pose.
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub schema_version: u32,
    pub placements: Vec<Placement>,
    /// Table region objects are placed in; the table is the `z = 0` plane.
    pub workspace: Aabb,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

/// World-frame bounding box of a placed model.
pub fn placed_aabb(model: &ObjectModel, pose: &Pose) -> Aabb {
    Aabb::of_transformed(&model.mesh.vertices, pose).expect("meshes are non-empty")
}

/// Object-to-world pose resting on the table at `(x, y)` with the given yaw;
/// `flip` turns the part upside down.
pub fn resting_pose(model: &ObjectModel, x: f64, y: f64, yaw: f64, flip: bool) -> Pose {
    let r = crate::geometry::rotation_from_axis_angle(&Vector3::new(0.0, 0.0, yaw))
        * crate::geometry::rotation_from_axis_angle(&Vector3::new(if flip { PI } else { 0.0 }, 0.0, 0.0));
    let min_z = model.mesh.vertices.iter().map(|v| (r * v).z).fold(f64::INFINITY, f64::min);
    Pose::from_rt(&r, Vector3::new(x, y, -min_z))
}

/// Rejection-samples `count` placements with pairwise disjoint bounding boxes
/// (grown by [`PLAUSIBILITY_MARGIN`]) inside `workspace`.
pub fn generate_scene(models: &[ObjectModel], count: usize, workspace: &Aabb, seed: u64) -> Result<SyntheticScene> {
    if count == 0 || models.is_empty() {
        return Err(invalid("scene needs at least one object and one model"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placements: Vec<Placement> = Vec::new();
    let mut boxes: Vec<Aabb> = Vec::new();
    let mut attempts = 0;
    let mut misses = 0;
    while placements.len() < count {
        attempts += 1;
        if attempts > MAX_PLACEMENT_ATTEMPTS {
            return Err(Error::PlacementFailed(MAX_PLACEMENT_ATTEMPTS));
        }
        // A crowded layout can leave no room; start over.
        if misses >= RESTART_AFTER {
            placements.clear();
            boxes.clear();
            misses = 0;
        }
        let model = &models[rng.random_range(0..models.len())];
        let pose = resting_pose(
            model,
            rng.random_range(workspace.min.x..=workspace.max.x),
            rng.random_range(workspace.min.y..=workspace.max.y),
            rng.random_range(-PI..PI),
            rng.random_bool(0.5),
        );
        let b = placed_aabb(model, &pose);
        let inside = b.min.x >= workspace.min.x && b.max.x <= workspace.max.x && b.min.y >= workspace.min.y && b.max.y <= workspace.max.y;
        if !inside || boxes.iter().any(|o| o.intersects(&b, PLAUSIBILITY_MARGIN / 2.0)) {
            misses += 1;
            continue;
        }
        misses = 0;
        boxes.push(b);
        placements.push(Placement {
            object_id: model.id.clone(),
            pose,
        });
    }
    Ok(SyntheticScene {
        schema_version: SCENE_SCHEMA_VERSION,
        placements,
        workspace: *workspace,
        seed,
    })
}

/// A candidate camera placement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewAction {
    pub id: usize,
    /// World-to-camera transform.
    pub camera_pose: Pose,
    pub intrinsics: CameraIntrinsics,
}

/// `n` cameras on a Fibonacci lattice over the upper hemisphere around
/// `center`, all looking at it; the first one sits at the zenith. The seed only
/// rotates the lattice about the vertical.
pub fn hemisphere_views(center: &Vector3<f64>, radius: f64, n: usize, seed: u64, intr: &CameraIntrinsics) -> Vec<ViewAction> {
    hemisphere_views_above(center, radius, n, seed, 0.0, intr)
}

/// Like [`hemisphere_views`], restricted to elevations of at least `min_elevation`.
pub fn hemisphere_views_above(
    center: &Vector3<f64>,
    radius: f64,
    n: usize,
    seed: u64,
    min_elevation: f64,
    intr: &CameraIntrinsics,
) -> Vec<ViewAction> {
    let golden = PI * (3.0 - 5f64.sqrt());
    let offset = ChaCha8Rng::seed_from_u64(seed).random_range(0.0..2.0 * PI);
    let z_min = min_elevation.sin().max(0.0);
    (0..n)
        .map(|k| {
            let z = 1.0 - k as f64 * (1.0 - z_min) / n as f64;
            let rxy = (1.0 - z * z).max(0.0).sqrt();
            let phi = offset + k as f64 * golden;
            let eye = center + Vector3::new(rxy * phi.cos(), rxy * phi.sin(), z) * radius;
            ViewAction {
                id: k,
                camera_pose: look_at(&eye, center, &Vector3::z()),
                intrinsics: *intr,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseParams {
    /// Fraction of edgels removed.
    pub dropout_rate: f64,
    /// Position noise (pixels).
    pub jitter_sigma: f64,
    /// Number of spurious straight segments.
    pub clutter_count: usize,
    /// Orientation noise (radians).
    pub orientation_noise_sigma: f64,
}

impl NoiseParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) || self.jitter_sigma < 0.0 || self.orientation_noise_sigma < 0.0 {
            return Err(invalid("noise parameters out of range"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Observation {
    pub edgels: EdgelSet,
    pub gradient: GradientDirectionImage,
    /// Visible raster ids of every placement.
    pub visible: Vec<Vec<u32>>,
}

/// Renders the scene from `view`.
pub fn render_observation(
    scene: &SyntheticScene,
    view: &ViewAction,
    models: &[ObjectModel],
    noise: &NoiseParams,
    seed: u64,
) -> Result<Observation> {
    noise.validate()?;
    let intr = &view.intrinsics;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut buf = DepthBuffer::with_window(intr, Window::full(intr));
    let mut placed = Vec::new();
    for (k, p) in scene.placements.iter().enumerate() {
        let model = model_by_id(models, &p.object_id)?;
        let pose = view.camera_pose.compose(&p.pose);
        buf.draw_mesh(&model.mesh, &pose, k as u32);
        placed.push((model, pose));
    }

    let mut edgels = EdgelSet::new(intr.width, intr.height);
    let mut visible = Vec::new();
    let jitter = Normal::new(0.0, noise.jitter_sigma.max(1e-300)).expect("finite sigma");
    let onoise = Normal::new(0.0, noise.orientation_noise_sigma.max(1e-300)).expect("finite sigma");
    for (model, pose) in &placed {
        let ids = visible_ids_in(&model.raster, pose, &buf, DEFAULT_DEPTH_EPS);
        let r = pose.rotation_matrix();
        for &i in &ids {
            let o = model.raster.points[i as usize];
            let o2 = o + model.raster.tangents[i as usize] * model.opts.dr;
            let a = intr.project_unchecked(&(r * o + pose.translation));
            let b = intr.project_unchecked(&(r * o2 + pose.translation));
            let mut xi = projected_orientation(&a, &b);
            if noise.dropout_rate > 0.0 && rng.random_bool(noise.dropout_rate) {
                continue;
            }
            let mut pos = a;
            if noise.jitter_sigma > 0.0 {
                pos.x += jitter.sample(&mut rng);
                pos.y += jitter.sample(&mut rng);
            }
            if noise.orientation_noise_sigma > 0.0 {
                xi += onoise.sample(&mut rng);
            }
            edgels.push(pos, xi);
        }
        visible.push(ids);
    }
    for _ in 0..noise.clutter_count {
        let c = ImagePoint::new(rng.random_range(0.0..intr.width as f64), rng.random_range(0.0..intr.height as f64));
        let ang = rng.random_range(0.0..PI);
        let len: f64 = rng.random_range(10.0..40.0);
        let n = len.floor() as usize;
        for k in 0..=n {
            let t = k as f64 - len / 2.0;
            edgels.push(ImagePoint::new(c.x + t * ang.cos(), c.y + t * ang.sin()), ang);
        }
    }

    let gradient = gradient_image(&edgels, &mut rng);
    Ok(Observation { edgels, gradient, visible })
}

fn gradient_image(edgels: &EdgelSet, rng: &mut impl Rng) -> GradientDirectionImage {
    let (w, h) = (edgels.width, edgels.height);
    let mut theta: Vec<f32> = (0..w * h).map(|_| rng.random_range(0.0..PI) as f32).collect();
    let mut magnitude = vec![0.0f32; w * h];
    for e in &edgels.edgels {
        let (x, y) = (e.pos.x.round() as usize, e.pos.y.round() as usize);
        if x < w && y < h {
            theta[y * w + x] = wrap_pi(e.orientation - PI / 2.0) as f32;
            magnitude[y * w + x] = 1.0;
        }
    }
    GradientDirectionImage {
        width: w,
        height: h,
        theta,
        magnitude,
    }
}

/// Gradient-direction image implied by an edgel set, as built for rendered
/// observations: `ξ − π/2` at edgel pixels, seeded random directions elsewhere.
pub fn gradient_from_edgels(edgels: &EdgelSet, seed: u64) -> GradientDirectionImage {
    gradient_image(edgels, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Visible raster ids of every placement from `view`, without rendering edgels.
pub fn visible_sets(scene: &SyntheticScene, view: &ViewAction, models: &[ObjectModel]) -> Result<Vec<Vec<u32>>> {
    let intr = &view.intrinsics;
    let mut buf = DepthBuffer::new(intr);
    let mut placed = Vec::new();
    for (k, p) in scene.placements.iter().enumerate() {
        let model = model_by_id(models, &p.object_id)?;
        let pose = view.camera_pose.compose(&p.pose);
        buf.draw_mesh(&model.mesh, &pose, k as u32);
        placed.push((model, pose));
    }
    Ok(placed
        .iter()
        .map(|(m, pose)| visible_ids_in(&m.raster, pose, &buf, DEFAULT_DEPTH_EPS))
        .collect())
}

/// Flat-shaded intensity image of the scene from `view`, for feeding the
/// edge detector. Faces are lit from a fixed camera-frame direction so that
/// adjacent faces get different grey levels; the background is black.
pub fn render_intensity(scene: &SyntheticScene, view: &ViewAction, models: &[ObjectModel]) -> Result<GrayImage> {
    let intr = &view.intrinsics;
    let mut buf = DepthBuffer::new(intr);
    let mut shades = Vec::new();
    let light = Vector3::new(0.3, -0.5, -0.8).normalize();
    for p in &scene.placements {
        let model = model_by_id(models, &p.object_id)?;
        let pose = view.camera_pose.compose(&p.pose);
        let r = pose.rotation_matrix();
        for f in 0..model.mesh.triangles.len() {
            let tri = model.mesh.triangle(f).map(|v| r * v + pose.translation);
            let n = r * model.mesh.face_normal(f);
            buf.draw_triangle(tri, shades.len() as u32);
            shades.push((60.0 + 75.0 * (1.0 + n.dot(&light))) as f32);
        }
    }
    Ok(GrayImage::from_fn(intr.width, intr.height, |x, y| {
        buf.tag_at(x as i64, y as i64).map_or(0.0, |t| shades[t as usize])
    }))
}

/// Edge raster of a model at a custom sampling step.
pub fn raster_with_step(model: &ObjectModel, step: f64) -> EdgeRaster {
    EdgeRaster::new(&model.edges, step)
}

/// A pose estimate for evaluation, in the world frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub object_id: String,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub correct: usize,
    pub false_positives: usize,
    pub correct_rate: f64,
    /// For every ground-truth object, the translation and rotation error of
    /// its matched estimate.
    pub errors: Vec<Option<(f64, f64)>>,
}

/// Greedy one-to-one matching of estimates to ground truth, by ascending
/// normalized pose distance. Matches must share the object id and lie within
/// both thresholds; unmatched estimates are false positives.
pub fn evaluate(estimates: &[Estimate], scene: &SyntheticScene, trans_thresh: f64, rot_thresh: f64) -> EvalMetrics {
    let mut pairs = Vec::new();
    for (i, e) in estimates.iter().enumerate() {
        for (j, g) in scene.placements.iter().enumerate() {
            if e.object_id != g.object_id {
                continue;
            }
            let (dt, dr) = e.pose.distance(&g.pose);
            if dt < trans_thresh && dr < rot_thresh {
                pairs.push((dt / trans_thresh + dr / rot_thresh, i, j, dt, dr));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut est_used = vec![false; estimates.len()];
    let mut errors = vec![None; scene.placements.len()];
    let mut correct = 0;
    for (_, i, j, dt, dr) in pairs {
        if est_used[i] || errors[j].is_some() {
            continue;
        }
        est_used[i] = true;
        errors[j] = Some((dt, dr));
        correct += 1;
    }
    let n = scene.placements.len();
    EvalMetrics {
        correct,
        false_positives: estimates.len() - correct,
        correct_rate: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
        errors,
    }
}

/// Uniformly distributed unit vector.
pub fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n: f64 = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Offsets the translation by exactly `trans_mag` and rotates by exactly
/// `rot_mag` about the object origin, both in uniformly random directions.
pub fn perturb_pose_rng(pose: &Pose, trans_mag: f64, rot_mag: f64, rng: &mut impl Rng) -> Pose {
    let dt = random_unit(rng) * trans_mag;
    let dw = random_unit(rng) * rot_mag;
    perturb_pose_by(pose, &dt, &dw)
}

/// Adds `dt` to the translation and left-multiplies the rotation by `R(dw)`.
pub fn perturb_pose_by(pose: &Pose, dt: &Vector3<f64>, dw: &Vector3<f64>) -> Pose {
    let r = crate::geometry::rotation_from_axis_angle(dw) * pose.rotation_matrix();
    Pose::from_rt(&r, pose.translation + dt)
}

pub fn perturb_pose(pose: &Pose, trans_mag: f64, rot_mag: f64, seed: u64) -> Pose {
    perturb_pose_rng(pose, trans_mag, rot_mag, &mut ChaCha8Rng::seed_from_u64(seed))
}
