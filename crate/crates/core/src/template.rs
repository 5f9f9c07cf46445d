//! Raster templates: 3D sample points along the visible wire edges of a model.
//!
//! Every wire edge is sampled at a fixed spacing. For each sample `o_i` the
//! template also stores `o'_i = o_i + dr * t_i`, with `t_i` the unit edge
//! direction, so that the projected edge orientation can be recovered from the
//! two projections. Visibility is decided per viewpoint with the software depth
//! buffer in [`crate::raster`].

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{rotation_from_axis_angle, axis_angle_from_rotation, CameraIntrinsics, Pose};
use crate::mesh::{extract_wire_edges, TriMesh, WireEdge, DEFAULT_DIHEDRAL_THRESHOLD};
use crate::raster::DepthBuffer;

pub const DEFAULT_STEP: f64 = 0.0015;
pub const DEFAULT_DR: f64 = 0.001;
pub const DEFAULT_DEPTH_EPS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplateOptions {
    /// Sampling spacing along edges (meters).
    pub step: f64,
    /// Tangent offset used for the partner points (meters).
    pub dr: f64,
    /// Depth tolerance of the visibility test (meters).
    pub depth_eps: f64,
}

impl Default for TemplateOptions {
    fn default() -> Self {
        Self {
            step: DEFAULT_STEP,
            dr: DEFAULT_DR,
            depth_eps: DEFAULT_DEPTH_EPS,
        }
    }
}

impl TemplateOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.dr > 0.0) || !(self.depth_eps >= 0.0) {
            return Err(invalid("template step and dr must be positive"));
        }
        Ok(())
    }
}

/// All samples of all wire edges of a model, independent of viewpoint.
#[derive(Debug, Clone, Default)]
pub struct EdgeRaster {
    pub points: Vec<Vector3<f64>>,
    pub tangents: Vec<Vector3<f64>>,
    /// Index of the wire edge each sample came from.
    pub edge: Vec<u32>,
    pub step: f64,
}

impl EdgeRaster {
    pub fn new(edges: &[WireEdge], step: f64) -> Self {
        let mut r = Self {
            step,
            ..Self::default()
        };
        for (k, e) in edges.iter().enumerate() {
            let [a, b] = e.endpoints;
            let d = b - a;
            let len = d.norm();
            if len == 0.0 {
                continue;
            }
            let t = d / len;
            let n = ((len / step) - 1e-9).ceil().max(1.0) as usize;
            for i in 0..=n {
                r.points.push(a + d * (i as f64 / n as f64));
                r.tangents.push(t);
                r.edge.push(k as u32);
            }
        }
        r
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Visible edge samples for one viewpoint, in the object frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterTemplate {
    pub points: Vec<Vector3<f64>>,
    pub offset_points: Vec<Vector3<f64>>,
    pub step: f64,
    pub dr: f64,
    /// Indices of the samples in the model's [`EdgeRaster`].
    #[serde(default)]
    pub ids: Vec<u32>,
}

impl RasterTemplate {
    pub fn from_ids(raster: &EdgeRaster, ids: Vec<u32>, dr: f64) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyTemplate);
        }
        let points: Vec<_> = ids.iter().map(|&i| raster.points[i as usize]).collect();
        let offset_points = ids
            .iter()
            .map(|&i| raster.points[i as usize] + raster.tangents[i as usize] * dr)
            .collect();
        Ok(Self {
            points,
            offset_points,
            step: raster.step,
            dr,
            ids,
        })
    }

    /// Every sample of the raster, ignoring visibility.
    pub fn full(raster: &EdgeRaster, dr: f64) -> Result<Self> {
        Self::from_ids(raster, (0..raster.len() as u32).collect(), dr)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Raster sample ids of `raster` (placed by `pose`) that are unoccluded in
/// `buffer` and project inside the image.
pub fn visible_ids_in(
    raster: &EdgeRaster,
    pose: &Pose,
    buffer: &DepthBuffer,
    depth_eps: f64,
) -> Vec<u32> {
    let r = pose.rotation_matrix();
    raster
        .points
        .iter()
        .enumerate()
        .filter(|(_, p)| buffer.is_visible(&(r * *p + pose.translation), depth_eps))
        .map(|(i, _)| i as u32)
        .collect()
}

/// Visible raster ids for a model rendered alone.
pub fn visible_ids(
    mesh: &TriMesh,
    raster: &EdgeRaster,
    pose: &Pose,
    intr: &CameraIntrinsics,
    depth_eps: f64,
) -> Vec<u32> {
    let Some(window) = DepthBuffer::window_for(intr, mesh, pose) else {
        return Vec::new();
    };
    let mut buf = DepthBuffer::with_window(intr, window);
    buf.draw_mesh(mesh, pose, 0);
    visible_ids_in(raster, pose, &buf, depth_eps)
}

/// Samples the wire edges and keeps the points visible from `pose`.
pub fn visible_template(
    mesh: &TriMesh,
    edges: &[WireEdge],
    pose: &Pose,
    intr: &CameraIntrinsics,
    opts: &TemplateOptions,
) -> Result<RasterTemplate> {
    opts.validate()?;
    let raster = EdgeRaster::new(edges, opts.step);
    let ids = visible_ids(mesh, &raster, pose, intr, opts.depth_eps);
    RasterTemplate::from_ids(&raster, ids, opts.dr)
}

/// A mesh with its wire edges and edge raster, ready for template queries.
#[derive(Debug, Clone)]
pub struct ObjectModel {
    pub id: String,
    pub mesh: TriMesh,
    pub edges: Vec<WireEdge>,
    pub raster: EdgeRaster,
    pub opts: TemplateOptions,
}

impl ObjectModel {
    pub fn new(id: impl Into<String>, mesh: TriMesh, dihedral_threshold: f64, opts: TemplateOptions) -> Result<Self> {
        opts.validate()?;
        let edges = extract_wire_edges(&mesh, dihedral_threshold);
        let raster = EdgeRaster::new(&edges, opts.step);
        if raster.is_empty() {
            return Err(Error::EmptyTemplate);
        }
        Ok(Self {
            id: id.into(),
            mesh,
            edges,
            raster,
            opts,
        })
    }

    pub fn with_defaults(id: impl Into<String>, mesh: TriMesh) -> Result<Self> {
        Self::new(id, mesh, DEFAULT_DIHEDRAL_THRESHOLD, TemplateOptions::default())
    }

    pub fn visible_ids(&self, pose: &Pose, intr: &CameraIntrinsics) -> Vec<u32> {
        visible_ids(&self.mesh, &self.raster, pose, intr, self.opts.depth_eps)
    }

    pub fn template(&self, pose: &Pose, intr: &CameraIntrinsics) -> Result<RasterTemplate> {
        RasterTemplate::from_ids(&self.raster, self.visible_ids(pose, intr), self.opts.dr)
    }

    pub fn template_from_ids(&self, ids: Vec<u32>) -> Result<RasterTemplate> {
        RasterTemplate::from_ids(&self.raster, ids, self.opts.dr)
    }

    /// Axis-aligned bounds of the mesh in its own frame.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        self.mesh.bounds()
    }
}

/// Evenly spaced values `min..=max` (`count` ≥ 1; a single value sits at `min`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range1 {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Range1 {
    pub fn fixed(v: f64) -> Self {
        Self { min: v, max: v, count: 1 }
    }

    pub fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    /// `count` values over `[min, max)`; suits periodic angles.
    pub fn periodic(min: f64, period: f64, count: usize) -> Self {
        Self {
            min,
            max: min + period * (count.saturating_sub(1)) as f64 / count.max(1) as f64,
            count,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        match self.count {
            0 => Vec::new(),
            1 => vec![self.min],
            n => (0..n)
                .map(|i| self.min + (self.max - self.min) * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }

    pub fn spacing(&self) -> f64 {
        if self.count > 1 {
            (self.max - self.min) / (self.count - 1) as f64
        } else {
            0.0
        }
    }
}

/// Regular viewpoint lattice.
///
/// Pose of grid node `(x, y, z, yaw, pitch, roll)`:
/// `frame ∘ [Rz(yaw) Ry(pitch) Rx(roll) | (x, y, z)] ∘ rest`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViewpointGrid {
    pub frame: Pose,
    pub rest: Pose,
    pub x: Range1,
    pub y: Range1,
    pub z: Range1,
    pub yaw: Range1,
    pub pitch: Range1,
    pub roll: Range1,
}

impl ViewpointGrid {
    pub fn single(pose: Pose) -> Self {
        Self {
            frame: pose,
            rest: Pose::identity(),
            x: Range1::fixed(0.0),
            y: Range1::fixed(0.0),
            z: Range1::fixed(0.0),
            yaw: Range1::fixed(0.0),
            pitch: Range1::fixed(0.0),
            roll: Range1::fixed(0.0),
        }
    }

    pub fn len(&self) -> usize {
        [self.x, self.y, self.z, self.yaw, self.pitch, self.roll]
            .iter()
            .map(|r| r.count)
            .product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn node_pose(&self, x: f64, y: f64, z: f64, yaw: f64, pitch: f64, roll: f64) -> Pose {
        let r = rotation_from_axis_angle(&Vector3::new(0.0, 0.0, yaw))
            * rotation_from_axis_angle(&Vector3::new(0.0, pitch, 0.0))
            * rotation_from_axis_angle(&Vector3::new(roll, 0.0, 0.0));
        let local = Pose::new(Vector3::new(x, y, z), axis_angle_from_rotation(&r));
        self.frame.compose(&local).compose(&self.rest)
    }

    /// All grid poses, in lexicographic (x, y, z, yaw, pitch, roll) order.
    pub fn poses(&self) -> Vec<Pose> {
        let mut out = Vec::with_capacity(self.len());
        for &x in &self.x.values() {
            for &y in &self.y.values() {
                for &z in &self.z.values() {
                    for &yaw in &self.yaw.values() {
                        for &pitch in &self.pitch.values() {
                            for &roll in &self.roll.values() {
                                out.push(self.node_pose(x, y, z, yaw, pitch, roll));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub pose: Pose,
    pub template: RasterTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateBank {
    pub object_id: String,
    pub entries: Vec<BankEntry>,
    pub grid: Option<ViewpointGrid>,
    /// Grid indices whose template came out empty.
    pub skipped: Vec<usize>,
}

const BANK_MAGIC: &[u8; 8] = b"D2COBANK";
const BANK_VERSION: u32 = 1;
pub const BANK_SCHEMA_VERSION: u32 = 1;

impl TemplateBank {
    /// One template per pose; empty templates are skipped and recorded.
    pub fn from_poses(model: &ObjectModel, poses: &[Pose], intr: &CameraIntrinsics) -> Result<Self> {
        if poses.is_empty() {
            return Err(invalid("viewpoint grid is empty"));
        }
        let built: Vec<Option<RasterTemplate>> = poses
            .par_iter()
            .map(|p| model.template(p, intr).ok())
            .collect();
        let mut entries = Vec::new();
        let mut skipped = Vec::new();
        for (i, (t, p)) in built.into_iter().zip(poses).enumerate() {
            match t {
                Some(template) => entries.push(BankEntry { pose: *p, template }),
                None => skipped.push(i),
            }
        }
        if entries.is_empty() {
            return Err(Error::EmptyBank);
        }
        Ok(Self {
            object_id: model.id.clone(),
            entries,
            grid: None,
            skipped,
        })
    }

    pub fn build(model: &ObjectModel, grid: &ViewpointGrid, intr: &CameraIntrinsics) -> Result<Self> {
        let mut bank = Self::from_poses(model, &grid.poses(), intr)?;
        bank.grid = Some(grid.clone());
        Ok(bank)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BANK_MAGIC);
        out.extend_from_slice(&BANK_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let f = |out: &mut Vec<u8>, v: f64| out.extend_from_slice(&v.to_le_bytes());
        for e in &self.entries {
            for v in e.pose.params() {
                f(&mut out, v);
            }
            f(&mut out, e.template.step);
            f(&mut out, e.template.dr);
            out.extend_from_slice(&(e.template.len() as u32).to_le_bytes());
            for (p, q) in e.template.points.iter().zip(&e.template.offset_points) {
                for v in p.iter().chain(q.iter()) {
                    f(&mut out, *v);
                }
            }
            let has_ids = e.template.ids.len() == e.template.len();
            out.push(has_ids as u8);
            if has_ids {
                for id in &e.template.ids {
                    out.extend_from_slice(&id.to_le_bytes());
                }
            }
        }
        out
    }

    /// Decodes entries written by [`Self::to_bytes`]; the grid comes from the sidecar.
    pub fn entries_from_bytes(bytes: &[u8]) -> Result<Vec<BankEntry>> {
        let mut rd = ByteReader { bytes, pos: 0 };
        if rd.take(8)? != BANK_MAGIC {
            return Err(Error::Format("not a template bank file".into()));
        }
        let version = rd.u32()?;
        if version != BANK_VERSION {
            return Err(Error::Format(format!("unsupported bank version {version}")));
        }
        let n = rd.u32()? as usize;
        let mut entries = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let mut params = [0.0; 6];
            for v in &mut params {
                *v = rd.f64()?;
            }
            let step = rd.f64()?;
            let dr = rd.f64()?;
            let m = rd.u32()? as usize;
            let mut points = Vec::with_capacity(m.min(1 << 20));
            let mut offset_points = Vec::with_capacity(m.min(1 << 20));
            for _ in 0..m {
                points.push(Vector3::new(rd.f64()?, rd.f64()?, rd.f64()?));
                offset_points.push(Vector3::new(rd.f64()?, rd.f64()?, rd.f64()?));
            }
            let ids = if rd.take(1)?[0] != 0 {
                (0..m).map(|_| rd.u32()).collect::<Result<Vec<_>>>()?
            } else {
                Vec::new()
            };
            entries.push(BankEntry {
                pose: Pose::from_params(&params),
                template: RasterTemplate {
                    points,
                    offset_points,
                    step,
                    dr,
                    ids,
                },
            });
        }
        if rd.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after template bank".into()));
        }
        Ok(entries)
    }

    /// Writes the binary bank to `path` and a JSON sidecar next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)?.write_all(&self.to_bytes())?;
        let sidecar = BankSidecar {
            schema_version: BANK_SCHEMA_VERSION,
            object_id: self.object_id.clone(),
            entries: self.entries.len(),
            grid: self.grid.clone(),
            skipped: self.skipped.clone(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let entries = Self::entries_from_bytes(&bytes)?;
        let sidecar: BankSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
        if sidecar.entries != entries.len() {
            return Err(Error::Format("bank sidecar entry count mismatch".into()));
        }
        Ok(Self {
            object_id: sidecar.object_id,
            entries,
            grid: sidecar.grid,
            skipped: sidecar.skipped,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct BankSidecar {
    schema_version: u32,
    object_id: String,
    entries: usize,
    grid: Option<ViewpointGrid>,
    skipped: Vec<usize>,
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Format(format!("template bank truncated at byte {}", self.pos)));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
