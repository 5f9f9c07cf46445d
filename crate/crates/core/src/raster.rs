//! Software depth buffer.
//!
//! Triangles are rasterized at pixel centers (integer coordinates) with
//! perspective-correct depth. Besides the nearest depth, every pixel remembers
//! which triangle produced it, so visibility queries for points lying exactly
//! on mesh edges can be answered with an exact ray/triangle test instead of a
//! depth comparison against a pixel-center sample.

use nalgebra::Vector3;

use crate::geometry::{CameraIntrinsics, ImagePoint, Pose};
use crate::mesh::TriMesh;

const NO_OWNER: u32 = u32::MAX;
const NEAR: f64 = 1e-3;

/// Pixel window `[x0, x0+width) × [y0, y0+height)` inside an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Window {
    pub fn full(intr: &CameraIntrinsics) -> Self {
        Self {
            x0: 0,
            y0: 0,
            width: intr.width,
            height: intr.height,
        }
    }

    /// Bounding window of the given points, grown by `margin` and clipped to
    /// the image. `None` when nothing overlaps the image.
    pub fn around(points: impl Iterator<Item = ImagePoint>, margin: f64, intr: &CameraIntrinsics) -> Option<Self> {
        let (mut lx, mut ly, mut hx, mut hy) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in points {
            lx = lx.min(p.x);
            ly = ly.min(p.y);
            hx = hx.max(p.x);
            hy = hy.max(p.y);
        }
        if !lx.is_finite() {
            return None;
        }
        let x0 = (lx - margin).floor().max(0.0);
        let y0 = (ly - margin).floor().max(0.0);
        let x1 = (hx + margin).ceil().min(intr.width as f64 - 1.0);
        let y1 = (hy + margin).ceil().min(intr.height as f64 - 1.0);
        if x1 < x0 || y1 < y0 {
            return None;
        }
        Some(Self {
            x0: x0 as usize,
            y0: y0 as usize,
            width: (x1 - x0) as usize + 1,
            height: (y1 - y0) as usize + 1,
        })
    }

    #[inline]
    pub fn index(&self, x: i64, y: i64) -> Option<usize> {
        let lx = x - self.x0 as i64;
        let ly = y - self.y0 as i64;
        if lx < 0 || ly < 0 || lx >= self.width as i64 || ly >= self.height as i64 {
            None
        } else {
            Some(ly as usize * self.width + lx as usize)
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Nearest-surface depth over a pixel window, with triangle ownership.
#[derive(Debug, Clone)]
pub struct DepthBuffer {
    intr: CameraIntrinsics,
    window: Window,
    depth: Vec<f64>,
    owner: Vec<u32>,
    /// Camera-frame triangles, indexed by the owner ids.
    tris: Vec<[Vector3<f64>; 3]>,
    /// Caller-supplied tag (e.g. object index) for every triangle.
    tags: Vec<u32>,
}

impl DepthBuffer {
    pub fn new(intr: &CameraIntrinsics) -> Self {
        Self::with_window(intr, Window::full(intr))
    }

    pub fn with_window(intr: &CameraIntrinsics, window: Window) -> Self {
        Self {
            intr: *intr,
            window,
            depth: vec![f64::INFINITY; window.len()],
            owner: vec![NO_OWNER; window.len()],
            tris: Vec::new(),
            tags: Vec::new(),
        }
    }

    /// Window covering the projection of `mesh` under `pose`, grown by a few
    /// pixels. `None` when the mesh is behind the camera or off-image.
    pub fn window_for(intr: &CameraIntrinsics, mesh: &TriMesh, pose: &Pose) -> Option<Window> {
        let r = pose.rotation_matrix();
        let pts: Vec<_> = mesh
            .vertices
            .iter()
            .map(|v| r * v + pose.translation)
            .collect();
        if pts.iter().any(|p| p.z <= NEAR) {
            return Some(Window::full(intr));
        }
        Window::around(pts.iter().map(|p| intr.project_unchecked(p)), 2.0, intr)
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intr
    }

    /// Rasterizes every triangle of `mesh` placed by `pose` (object to camera).
    pub fn draw_mesh(&mut self, mesh: &TriMesh, pose: &Pose, tag: u32) {
        let r = pose.rotation_matrix();
        let cam: Vec<Vector3<f64>> = mesh
            .vertices
            .iter()
            .map(|v| r * v + pose.translation)
            .collect();
        for t in &mesh.triangles {
            let tri = [cam[t[0] as usize], cam[t[1] as usize], cam[t[2] as usize]];
            self.draw_triangle(tri, tag);
        }
    }

    pub fn draw_triangle(&mut self, tri: [Vector3<f64>; 3], tag: u32) {
        // Triangles crossing the near plane are skipped; scenes keep objects
        // well in front of the camera.
        if tri.iter().any(|p| p.z <= NEAR) {
            return;
        }
        let id = self.tris.len() as u32;
        self.tris.push(tri);
        self.tags.push(tag);
        let p: Vec<ImagePoint> = tri.iter().map(|v| self.intr.project_unchecked(v)).collect();
        let area = edge_fn(&p[0], &p[1], &p[2]);
        if area.abs() < 1e-12 {
            return;
        }
        let w = &self.window;
        let lx = p.iter().map(|q| q.x).fold(f64::INFINITY, f64::min).ceil().max(w.x0 as f64);
        let hx = p.iter().map(|q| q.x).fold(f64::NEG_INFINITY, f64::max).floor().min((w.x0 + w.width) as f64 - 1.0);
        let ly = p.iter().map(|q| q.y).fold(f64::INFINITY, f64::min).ceil().max(w.y0 as f64);
        let hy = p.iter().map(|q| q.y).fold(f64::NEG_INFINITY, f64::max).floor().min((w.y0 + w.height) as f64 - 1.0);
        if lx > hx || ly > hy {
            return;
        }
        let inv_z = [1.0 / tri[0].z, 1.0 / tri[1].z, 1.0 / tri[2].z];
        let inv_area = 1.0 / area;
        for y in ly as i64..=hy as i64 {
            for x in lx as i64..=hx as i64 {
                let q = ImagePoint::new(x as f64, y as f64);
                let b0 = edge_fn(&p[1], &p[2], &q) * inv_area;
                let b1 = edge_fn(&p[2], &p[0], &q) * inv_area;
                let b2 = 1.0 - b0 - b1;
                if b0 < -1e-9 || b1 < -1e-9 || b2 < -1e-9 {
                    continue;
                }
                let z = 1.0 / (b0 * inv_z[0] + b1 * inv_z[1] + b2 * inv_z[2]);
                let idx = w.index(x, y).expect("inside window");
                if z < self.depth[idx] {
                    self.depth[idx] = z;
                    self.owner[idx] = id;
                }
            }
        }
    }

    /// Nearest surface depth at pixel `(x, y)`; infinity where nothing was drawn.
    pub fn depth_at(&self, x: i64, y: i64) -> f64 {
        self.window.index(x, y).map_or(f64::INFINITY, |i| self.depth[i])
    }

    /// Tag of the triangle owning pixel `(x, y)`.
    pub fn tag_at(&self, x: i64, y: i64) -> Option<u32> {
        let i = self.window.index(x, y)?;
        let o = self.owner[i];
        (o != NO_OWNER).then(|| self.tags[o as usize])
    }

    /// Whether a camera-frame point is unoccluded: no rasterized surface
    /// crosses its viewing ray more than `eps` in front of it. Points that
    /// project outside the image or lie behind the camera are not visible.
    pub fn is_visible(&self, p: &Vector3<f64>, eps: f64) -> bool {
        if p.z <= NEAR {
            return false;
        }
        let q = self.intr.project_unchecked(p);
        if !self.intr.contains(&q, 0.0) {
            return false;
        }
        let (cx, cy) = (q.x.round() as i64, q.y.round() as i64);
        let mut seen = [NO_OWNER; 9];
        let mut n = 0;
        for dy in -1..=1 {
            for dx in -1..=1 {
                let Some(i) = self.window.index(cx + dx, cy + dy) else { continue };
                let o = self.owner[i];
                if o == NO_OWNER || seen[..n].contains(&o) {
                    continue;
                }
                seen[n] = o;
                n += 1;
                if let Some(z) = ray_hit_depth(&self.tris[o as usize], p) {
                    if z < p.z - eps {
                        return false;
                    }
                }
            }
        }
        true
    }
}

#[inline]
fn edge_fn(a: &ImagePoint, b: &ImagePoint, c: &ImagePoint) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

/// Depth at which the ray from the camera center through `p` meets the
/// triangle, if it does (with a small inclusive tolerance on the boundary).
pub(crate) fn ray_hit_depth(tri: &[Vector3<f64>; 3], p: &Vector3<f64>) -> Option<f64> {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let h = p.cross(&e2);
    let a = e1.dot(&h);
    if a.abs() < 1e-18 {
        return None;
    }
    let f = 1.0 / a;
    let s = -tri[0];
    let u = f * s.dot(&h);
    let qv = s.cross(&e1);
    let v = f * p.dot(&qv);
    let tol = 1e-9;
    if u < -tol || v < -tol || u + v > 1.0 + tol {
        return None;
    }
    let t = f * e2.dot(&qv);
    (t > 0.0).then_some(t * p.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::shapes::cuboid;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    #[test]
    fn cube_front_face_depth() {
        let mut buf = DepthBuffer::new(&intr());
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        buf.draw_mesh(&cuboid(0.2, 0.2, 0.2), &pose, 7);
        assert!((buf.depth_at(320, 240) - 0.9).abs() < 1e-9);
        assert_eq!(buf.tag_at(320, 240), Some(7));
        assert!(buf.depth_at(0, 0).is_infinite());
        // Front corner visible, rear corner hidden.
        assert!(buf.is_visible(&Vector3::new(0.1, 0.1, 0.9), 1e-4));
        assert!(!buf.is_visible(&Vector3::new(0.1, 0.1, 1.1), 1e-4));
    }

    #[test]
    fn windowed_buffer_matches_full() {
        let c = intr();
        let mesh = cuboid(0.05, 0.03, 0.02);
        let pose = Pose::new(Vector3::new(0.05, -0.02, 0.6), Vector3::new(0.4, 0.3, 0.1));
        let mut full = DepthBuffer::new(&c);
        full.draw_mesh(&mesh, &pose, 0);
        let win = DepthBuffer::window_for(&c, &mesh, &pose).unwrap();
        assert!(win.len() < c.width * c.height / 4);
        let mut part = DepthBuffer::with_window(&c, win);
        part.draw_mesh(&mesh, &pose, 0);
        for y in 0..c.height as i64 {
            for x in 0..c.width as i64 {
                let (a, b) = (full.depth_at(x, y), part.depth_at(x, y));
                assert!(a == b || (a - b).abs() < 1e-12, "{x},{y}: {a} {b}");
            }
        }
    }
}
