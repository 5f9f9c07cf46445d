//! Direct directional chamfer optimization.
//!
//! The object pose `[T, Ω]` (in the reference camera frame) is refined with
//! Levenberg-Marquardt. Every visible template point contributes the residual
//! `r_i = DT(x_i, ξ_i)` read straight from the distance tensor of each view,
//! robustified with a Huber loss. Jacobian rows follow the chain rule
//!
//! ```text
//! ∂r/∂p = ∂DT/∂x · ∂x/∂p + ∂DT/∂ξ · ∂ξ/∂d · (∂x'/∂p − ∂x/∂p),   d = x' − x
//! ```
//!
//! with `∂ξ/∂d = (−d_y, d_x) / ‖d‖²` and the tensor derivatives taken
//! numerically. Points are frozen to the visibility computed for the initial
//! guess; points leaving the tensor domain drop out of both the cost and the
//! Jacobian for that evaluation.

use nalgebra::{Matrix6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::dcd::DcdTensor;
use crate::detection::project_template_lenient;
use crate::edges::GradientDirectionImage;
use crate::error::{Error, Result};
use crate::geometry::{rotation_derivatives, CameraIntrinsics, Pose, MIN_DEPTH};
use crate::template::RasterTemplate;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationOptions {
    pub max_iterations: usize,
    /// Initial Levenberg-Marquardt damping, relative to the Hessian diagonal.
    pub initial_damping: f64,
    /// Huber threshold on the residual.
    pub huber_delta: f64,
    /// Stop when the parameter update norm falls below this.
    pub min_step: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub min_relative_decrease: f64,
}

impl Default for RegistrationOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            initial_damping: 1e-3,
            huber_delta: 10.0,
            min_step: 1e-6,
            min_relative_decrease: 1e-8,
        }
    }
}

/// One image of the object: its tensor and the rigid transform taking
/// reference-camera coordinates into this camera.
#[derive(Debug, Clone, Copy)]
pub struct RegistrationView<'a> {
    pub tensor: &'a DcdTensor,
    pub view_from_reference: Pose,
    pub intrinsics: CameraIntrinsics,
    /// Points to use in this view instead of the problem template (e.g. the
    /// subset visible from this camera).
    pub template: Option<&'a RasterTemplate>,
}

impl<'a> RegistrationView<'a> {
    pub fn reference(tensor: &'a DcdTensor, intrinsics: CameraIntrinsics) -> Self {
        Self {
            tensor,
            view_from_reference: Pose::identity(),
            intrinsics,
            template: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RegistrationProblem<'a> {
    pub views: Vec<RegistrationView<'a>>,
    pub template: &'a RasterTemplate,
    pub initial: Pose,
    pub options: RegistrationOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    pub pose: Pose,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
}

/// Huber loss on the squared residual.
#[inline]
pub fn huber(s: f64, delta: f64) -> f64 {
    if s <= delta * delta {
        s
    } else {
        2.0 * delta * s.sqrt() - delta * delta
    }
}

/// IRLS weight `ρ'(r²)`.
#[inline]
fn huber_weight(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta { 1.0 } else { delta / a }
}

struct Linearization {
    cost: f64,
    active: usize,
    h: Matrix6<f64>,
    g: Vector6<f64>,
}

impl<'a> RegistrationProblem<'a> {
    pub fn single(tensor: &'a DcdTensor, intrinsics: CameraIntrinsics, template: &'a RasterTemplate, initial: Pose) -> Self {
        Self {
            views: vec![RegistrationView::reference(tensor, intrinsics)],
            template,
            initial,
            options: RegistrationOptions::default(),
        }
    }

    fn view_template(&self, v: &RegistrationView<'a>) -> &'a RasterTemplate {
        v.template.unwrap_or(self.template)
    }

    /// Residuals of every view, concatenated; points outside the tensor domain
    /// give `None`.
    pub fn residuals(&self, pose: &Pose) -> Vec<Option<f64>> {
        let mut out = Vec::new();
        for v in &self.views {
            let g = v.view_from_reference.compose(pose);
            let r = g.rotation_matrix();
            let t = self.view_template(v);
            for (o, o2) in t.points.iter().zip(&t.offset_points) {
                out.push(point_residual(v, &(r * o + g.translation), &(r * o2 + g.translation)));
            }
        }
        out
    }

    /// Robust cost `½ Σ ρ(r²)` and the residuals it was computed from.
    pub fn evaluate_cost(&self, pose: &Pose) -> Result<(f64, Vec<f64>)> {
        let res = self.residuals(pose);
        let active: Vec<f64> = res.into_iter().flatten().collect();
        if active.is_empty() {
            return Err(Error::NoVisiblePoints);
        }
        let delta = self.options.huber_delta;
        let cost = 0.5 * active.iter().map(|r| huber(r * r, delta)).sum::<f64>();
        Ok((cost, active))
    }

    fn cost_only(&self, pose: &Pose) -> Option<f64> {
        let delta = self.options.huber_delta;
        let mut cost = 0.0;
        let mut n = 0;
        for v in &self.views {
            let g = v.view_from_reference.compose(pose);
            let r = g.rotation_matrix();
            let t = self.view_template(v);
            for (o, o2) in t.points.iter().zip(&t.offset_points) {
                if let Some(res) = point_residual(v, &(r * o + g.translation), &(r * o2 + g.translation)) {
                    cost += huber(res * res, delta);
                    n += 1;
                }
            }
        }
        (n > 0).then_some(0.5 * cost)
    }

    /// Jacobian rows `∂r_i/∂[T, Ω]` of the active residuals, in the order of
    /// [`Self::evaluate_cost`].
    pub fn jacobian(&self, pose: &Pose) -> Vec<Vector6<f64>> {
        let mut rows = Vec::new();
        self.accumulate(pose, |_, j, _| rows.push(j));
        rows
    }

    /// Visits every active point with `(residual, jacobian row, huber weight)`.
    fn accumulate(&self, pose: &Pose, mut f: impl FnMut(f64, Vector6<f64>, f64)) {
        let delta = self.options.huber_delta;
        let dr = rotation_derivatives(&pose.rotation);
        for v in &self.views {
            let rg = v.view_from_reference.rotation_matrix();
            let g = v.view_from_reference.compose(pose);
            let r = g.rotation_matrix();
            // Rotation derivatives expressed in this camera.
            let drv = [rg * dr[0], rg * dr[1], rg * dr[2]];
            let t = self.view_template(v);
            let intr = &v.intrinsics;
            for (o, o2) in t.points.iter().zip(&t.offset_points) {
                let pa = r * o + g.translation;
                let pb = r * o2 + g.translation;
                if pa.z <= MIN_DEPTH || pb.z <= MIN_DEPTH {
                    continue;
                }
                let a = intr.project_unchecked(&pa);
                let b = intr.project_unchecked(&pb);
                if !v.tensor.in_gradient_domain(a.x, a.y) {
                    continue;
                }
                let d = Vector2::new(b.x - a.x, b.y - a.y);
                let d2 = d.norm_squared();
                if d2.sqrt() < 1e-9 {
                    continue;
                }
                let xi = d.y.atan2(d.x);
                let res = v.tensor.lookup_unchecked(a.x, a.y, xi);
                let grad = v.tensor.gradient_unchecked(a.x, a.y, xi);
                let ja = point_pose_jacobian(intr, &pa, &rg, &drv, o);
                let jb = point_pose_jacobian(intr, &pb, &rg, &drv, o2);
                let dxi = Vector2::new(-d.y, d.x) / d2;
                let mut row = Vector6::zeros();
                for k in 0..6 {
                    let dxa = ja[(0, k)];
                    let dya = ja[(1, k)];
                    let ddx = jb[(0, k)] - dxa;
                    let ddy = jb[(1, k)] - dya;
                    row[k] = grad.x * dxa + grad.y * dya + grad.z * (dxi.x * ddx + dxi.y * ddy);
                }
                f(res, row, huber_weight(res, delta));
            }
        }
    }

    fn linearize(&self, pose: &Pose) -> Linearization {
        let delta = self.options.huber_delta;
        let mut lin = Linearization {
            cost: 0.0,
            active: 0,
            h: Matrix6::zeros(),
            g: Vector6::zeros(),
        };
        self.accumulate(pose, |r, j, w| {
            lin.cost += huber(r * r, delta);
            lin.active += 1;
            lin.h += j * j.transpose() * w;
            lin.g += j * (w * r);
        });
        lin.cost *= 0.5;
        lin
    }
}

#[inline]
fn point_residual(v: &RegistrationView<'_>, pa: &Vector3<f64>, pb: &Vector3<f64>) -> Option<f64> {
    if pa.z <= MIN_DEPTH || pb.z <= MIN_DEPTH {
        return None;
    }
    let a = v.intrinsics.project_unchecked(pa);
    let b = v.intrinsics.project_unchecked(pb);
    if !v.tensor.in_gradient_domain(a.x, a.y) {
        return None;
    }
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    if dx.hypot(dy) < 1e-9 {
        return None;
    }
    Some(v.tensor.lookup_unchecked(a.x, a.y, dy.atan2(dx)))
}

/// `∂x/∂[T, Ω]` for a point seen in a view: `p_view = R_g (R(Ω) o + T) + t_g`.
#[inline]
fn point_pose_jacobian(
    intr: &CameraIntrinsics,
    p_view: &Vector3<f64>,
    rg: &nalgebra::Matrix3<f64>,
    drv: &[nalgebra::Matrix3<f64>; 3],
    o: &Vector3<f64>,
) -> nalgebra::Matrix2x6<f64> {
    let jp = intr.point_jacobian(p_view);
    let mut out = nalgebra::Matrix2x6::zeros();
    out.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * rg));
    for i in 0..3 {
        out.set_column(3 + i, &(jp * (drv[i] * o)));
    }
    out
}

fn add_params(pose: &Pose, delta: &Vector6<f64>) -> Pose {
    Pose::new(
        pose.translation + delta.fixed_rows::<3>(0),
        pose.rotation + delta.fixed_rows::<3>(3),
    )
}

/// Levenberg-Marquardt refinement of `problem.initial`.
pub fn d2co_register(problem: &RegistrationProblem<'_>) -> Result<RegistrationResult> {
    let opts = &problem.options;
    let mut pose = problem.initial;
    let mut lin = problem.linearize(&pose);
    if lin.active == 0 {
        return Err(Error::NoVisiblePoints);
    }
    let initial_cost = lin.cost;
    let mut history = vec![lin.cost];
    let mut mu = opts.initial_damping;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < opts.max_iterations {
        iterations += 1;
        if lin.cost == 0.0 || lin.g.norm() == 0.0 {
            converged = true;
            break;
        }
        let mut accepted = false;
        // Inner loop: raise the damping until a step lowers the cost.
        loop {
            let mut a = lin.h;
            let scale = lin.h.diagonal().max().max(1e-12);
            for k in 0..6 {
                a[(k, k)] += mu * lin.h[(k, k)].max(1e-12 * scale);
            }
            let Some(step) = a.cholesky().map(|c| c.solve(&(-lin.g))) else {
                mu *= 10.0;
                if mu > 1e12 {
                    break;
                }
                continue;
            };
            let candidate = add_params(&pose, &step);
            let new_cost = problem.cost_only(&candidate);
            match new_cost {
                Some(c) if c < lin.cost => {
                    let rel = (lin.cost - c) / lin.cost;
                    pose = candidate;
                    mu = (mu / 10.0).max(1e-12);
                    accepted = true;
                    history.push(c);
                    if step.norm() < opts.min_step || rel < opts.min_relative_decrease {
                        converged = true;
                    }
                    break;
                }
                _ => {
                    if step.norm() < opts.min_step {
                        // No descent is possible at this resolution.
                        converged = true;
                        break;
                    }
                    mu *= 10.0;
                    if mu > 1e12 {
                        break;
                    }
                }
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // Damping exhausted without progress: a local minimum.
            converged = true;
            break;
        }
        lin = problem.linearize(&pose);
        if lin.active == 0 {
            break;
        }
    }
    let final_cost = *history.last().unwrap();
    Ok(RegistrationResult {
        pose,
        initial_cost,
        final_cost,
        iterations,
        converged,
        cost_history: history,
    })
}

/// Mean `|cos(I_θ(x_i) + π/2 − ξ_i)|` over the projected template points,
/// with `I_θ` sampled at the nearest pixel. The π/2 turns the gradient
/// direction into an edge direction.
pub fn score(pose: &Pose, template: &RasterTemplate, grad: &GradientDirectionImage, intr: &CameraIntrinsics) -> Result<f64> {
    let proj = project_template_lenient(template, pose, intr);
    let mut s = 0.0;
    let mut n = 0usize;
    for p in &proj {
        if let Some(theta) = grad.theta_nearest(&p.pos) {
            s += (theta + std::f64::consts::FRAC_PI_2 - p.xi).cos().abs();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyProjection);
    }
    Ok(s / n as f64)
}

/// Score averaged over several views, weighting every projected point equally.
pub fn score_views(pose: &Pose, views: &[(&RasterTemplate, &GradientDirectionImage, Pose, CameraIntrinsics)]) -> Result<f64> {
    let mut s = 0.0;
    let mut n = 0usize;
    for (t, grad, g, intr) in views {
        let p = g.compose(pose);
        for q in project_template_lenient(t, &p, intr) {
            if let Some(theta) = grad.theta_nearest(&q.pos) {
                s += (theta + std::f64::consts::FRAC_PI_2 - q.xi).cos().abs();
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::EmptyProjection);
    }
    Ok(s / n as f64)
}
