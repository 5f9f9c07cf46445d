//! Per (candidate, action) renderings used to score scene realizations:
//! a truncated Euclidean distance map of the candidate's visible edge points
//! and the depth of its surface, both over a window around its projection.

use rayon::prelude::*;

use crate::edt::edt_squared;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::raster::{DepthBuffer, Window};
use crate::sim::ViewAction;
use crate::template::{visible_ids_in, ObjectModel, DEFAULT_DEPTH_EPS};

use super::sampling::PlacedCandidate;

/// Default distance truncation (pixels); also the realization sentinel.
pub const DEFAULT_TRUNCATION: f64 = 20.0;

#[derive(Debug, Clone)]
pub struct CandidateView {
    pub window: Window,
    /// Squared distances; integers, so exact in `f32`.
    dist_sq: Vec<f32>,
    depth: Vec<f32>,
    /// Raster ids of the candidate visible from the action.
    pub visible: Vec<u32>,
}

impl CandidateView {
    /// Distance to the nearest edge pixel, capped at `cap`.
    #[inline]
    pub fn distance(&self, x: f64, y: f64, cap: f64) -> f64 {
        match self.window.index(x.round() as i64, y.round() as i64) {
            Some(i) => (self.dist_sq[i] as f64).sqrt().min(cap),
            None => cap,
        }
    }

    /// Surface depth at the pixel nearest to `(x, y)`; infinite off-object.
    #[inline]
    pub fn surface_depth(&self, x: f64, y: f64) -> f64 {
        self.window
            .index(x.round() as i64, y.round() as i64)
            .map_or(f64::INFINITY, |i| self.depth[i] as f64)
    }

    /// Whether this candidate's surface lies more than `eps` in front of a
    /// point at `depth` projecting to `(x, y)`.
    #[inline]
    pub fn occludes(&self, x: f64, y: f64, depth: f64, eps: f64) -> bool {
        self.surface_depth(x, y) < depth - eps
    }

    pub fn overlaps(&self, lo: (f64, f64), hi: (f64, f64)) -> bool {
        let w = &self.window;
        hi.0 >= w.x0 as f64 - 0.5
            && lo.0 <= (w.x0 + w.width) as f64 - 0.5
            && hi.1 >= w.y0 as f64 - 0.5
            && lo.1 <= (w.y0 + w.height) as f64 - 0.5
    }
}

fn union(a: Window, b: Window) -> Window {
    let x0 = a.x0.min(b.x0);
    let y0 = a.y0.min(b.y0);
    let x1 = (a.x0 + a.width).max(b.x0 + b.width);
    let y1 = (a.y0 + a.height).max(b.y0 + b.height);
    Window {
        x0,
        y0,
        width: x1 - x0,
        height: y1 - y0,
    }
}

/// Renders one candidate from one camera. `None` when none of its edge
/// points is visible.
pub fn render_candidate_view(model: &ObjectModel, object_to_world: &Pose, camera: &Pose, intr: &CameraIntrinsics, truncation: f64) -> Option<CandidateView> {
    let pose = camera.compose(object_to_world);
    let mesh_win = DepthBuffer::window_for(intr, &model.mesh, &pose)?;
    let mut buf = DepthBuffer::with_window(intr, mesh_win);
    buf.draw_mesh(&model.mesh, &pose, 0);
    let visible = visible_ids_in(&model.raster, &pose, &buf, DEFAULT_DEPTH_EPS);
    if visible.is_empty() {
        return None;
    }
    let r = pose.rotation_matrix();
    let pts: Vec<_> = visible
        .iter()
        .map(|&i| intr.project_unchecked(&(r * model.raster.points[i as usize] + pose.translation)))
        .collect();
    let win = union(mesh_win, Window::around(pts.iter().copied(), truncation, intr)?);
    let mut sites = vec![false; win.len()];
    for p in &pts {
        if let Some(i) = win.index(p.x.round() as i64, p.y.round() as i64) {
            sites[i] = true;
        }
    }
    let cap = (truncation * truncation).ceil().min(f32::MAX as f64);
    let dist_sq = edt_squared(win.width, win.height, &sites).into_iter().map(|d| d.min(cap) as f32).collect();
    let mut depth = vec![f32::INFINITY; win.len()];
    for y in 0..win.height {
        for x in 0..win.width {
            let (gx, gy) = ((win.x0 + x) as i64, (win.y0 + y) as i64);
            depth[y * win.width + x] = buf.depth_at(gx, gy) as f32;
        }
    }
    Some(CandidateView {
        window: win,
        dist_sq,
        depth,
        visible,
    })
}

/// Cache over every (candidate, action) pair.
#[derive(Debug, Clone)]
pub struct RenderCache {
    pub n_candidates: usize,
    pub n_actions: usize,
    pub truncation: f64,
    entries: Vec<Option<CandidateView>>,
}

impl RenderCache {
    #[inline]
    pub fn get(&self, candidate: usize, action: usize) -> Option<&CandidateView> {
        self.entries[candidate * self.n_actions + action].as_ref()
    }
}

/// Builds the cache in parallel over all pairs. Actions are indexed by their
/// position in `actions`.
pub fn render_realization_maps(candidates: &[PlacedCandidate], actions: &[ViewAction], models: &[ObjectModel], truncation: f64) -> RenderCache {
    let n_actions = actions.len();
    let entries = (0..candidates.len() * n_actions)
        .into_par_iter()
        .map(|k| {
            let c = &candidates[k / n_actions];
            let a = &actions[k % n_actions];
            render_candidate_view(&models[c.model_index], &c.pose, &a.camera_pose, &a.intrinsics, truncation)
        })
        .collect();
    RenderCache {
        n_candidates: candidates.len(),
        n_actions,
        truncation,
        entries,
    }
}
