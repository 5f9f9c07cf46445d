//! Triangle meshes: STL parsing and writing, edge adjacency, and extraction
//! of the sharp and boundary wire edges used to build edge templates.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default minimum angle between adjacent face normals for an edge to count
/// as sharp (about 30°).
pub const DEFAULT_DIHEDRAL_THRESHOLD: f64 = 0.52;

/// An undirected mesh edge and the triangles sharing it.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshEdge {
    pub vertices: [u32; 2],
    pub faces: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[u32; 3]>,
    pub edges: Vec<MeshEdge>,
}

impl TriMesh {
    /// Builds a mesh from raw triangle soup. Vertices with bit-identical
    /// coordinates are merged and zero-area triangles are dropped.
    pub fn from_triangles(soup: &[[Vector3<f64>; 3]]) -> Result<Self> {
        let mut index: HashMap<[u64; 3], u32> = HashMap::new();
        let mut vertices = Vec::new();
        let mut triangles = Vec::with_capacity(soup.len());
        let key = |v: &Vector3<f64>| {
            // +0.0 folds -0.0 onto 0.0 so both hash alike.
            [(v.x + 0.0).to_bits(), (v.y + 0.0).to_bits(), (v.z + 0.0).to_bits()]
        };
        for tri in soup {
            let mut ids = [0u32; 3];
            for (k, v) in tri.iter().enumerate() {
                ids[k] = *index.entry(key(v)).or_insert_with(|| {
                    vertices.push(*v);
                    (vertices.len() - 1) as u32
                });
            }
            if ids[0] == ids[1] || ids[1] == ids[2] || ids[0] == ids[2] {
                continue;
            }
            let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
            if n.norm() <= 1e-18 {
                continue;
            }
            triangles.push(ids);
        }
        Self::from_indexed(vertices, triangles)
    }

    pub fn from_indexed(vertices: Vec<Vector3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::EmptyMesh);
        }
        let n = vertices.len() as u32;
        if triangles.iter().flatten().any(|&i| i >= n) {
            return Err(Error::InvalidArgument("triangle index out of range".into()));
        }
        let mut map: HashMap<(u32, u32), usize> = HashMap::new();
        let mut edges: Vec<MeshEdge> = Vec::new();
        for (f, t) in triangles.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let e = (a.min(b), a.max(b));
                let slot = *map.entry(e).or_insert_with(|| {
                    edges.push(MeshEdge {
                        vertices: [e.0, e.1],
                        faces: Vec::with_capacity(2),
                    });
                    edges.len() - 1
                });
                edges[slot].faces.push(f as u32);
            }
        }
        Ok(Self {
            vertices,
            triangles,
            edges,
        })
    }

    /// Unit normal of triangle `f`, following its winding.
    pub fn face_normal(&self, f: usize) -> Vector3<f64> {
        let [a, b, c] = self.triangle(f);
        (b - a).cross(&(c - a)).normalize()
    }

    pub fn triangle(&self, f: usize) -> [Vector3<f64>; 3] {
        let t = self.triangles[f];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    /// Axis-aligned bounds `(min, max)` in the mesh frame.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            vertices: self.vertices.iter().map(|v| v * s).collect(),
            triangles: self.triangles.clone(),
            edges: self.edges.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeKind {
    Sharp,
    Boundary,
}

/// A model edge kept for template rasterization.
#[derive(Debug, Clone, PartialEq)]
pub struct WireEdge {
    pub endpoints: [Vector3<f64>; 2],
    pub kind: EdgeKind,
    /// Angle between adjacent face normals (radians); zero for boundary edges.
    pub dihedral: f64,
}

impl WireEdge {
    pub fn length(&self) -> f64 {
        (self.endpoints[1] - self.endpoints[0]).norm()
    }
}

/// Keeps boundary edges and edges whose adjacent face normals differ by at
/// least `dihedral_threshold`.
pub fn extract_wire_edges(mesh: &TriMesh, dihedral_threshold: f64) -> Vec<WireEdge> {
    let mut out = Vec::new();
    for e in &mesh.edges {
        let endpoints = [
            mesh.vertices[e.vertices[0] as usize],
            mesh.vertices[e.vertices[1] as usize],
        ];
        if e.faces.len() == 1 {
            out.push(WireEdge {
                endpoints,
                kind: EdgeKind::Boundary,
                dihedral: 0.0,
            });
            continue;
        }
        // Non-manifold edges keep their largest normal deviation.
        let mut dihedral: f64 = 0.0;
        for i in 0..e.faces.len() {
            for j in i + 1..e.faces.len() {
                let a = mesh.face_normal(e.faces[i] as usize);
                let b = mesh.face_normal(e.faces[j] as usize);
                dihedral = dihedral.max(a.dot(&b).clamp(-1.0, 1.0).acos());
            }
        }
        if dihedral >= dihedral_threshold {
            out.push(WireEdge {
                endpoints,
                kind: EdgeKind::Sharp,
                dihedral,
            });
        }
    }
    out
}

/// Parses a binary or ASCII STL stream.
pub fn load_mesh(bytes: &[u8]) -> Result<TriMesh> {
    let soup = if looks_binary(bytes) {
        parse_binary(bytes)?
    } else {
        parse_ascii(bytes)?
    };
    TriMesh::from_triangles(&soup)
}

pub fn load_mesh_file(path: &std::path::Path) -> Result<TriMesh> {
    load_mesh(&std::fs::read(path)?)
}

fn looks_binary(bytes: &[u8]) -> bool {
    if bytes.len() >= 84 {
        let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
        if n.checked_mul(50).and_then(|v| v.checked_add(84)) == Some(bytes.len()) {
            return true;
        }
    }
    let head = &bytes[..bytes.len().min(5)];
    !head.eq_ignore_ascii_case(b"solid")
}

fn parse_binary(bytes: &[u8]) -> Result<Vec<[Vector3<f64>; 3]>> {
    if bytes.len() < 84 {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: "binary STL header truncated".into(),
        });
    }
    let n = u32::from_le_bytes([bytes[80], bytes[81], bytes[82], bytes[83]]) as usize;
    let mut soup = Vec::with_capacity(n);
    for i in 0..n {
        let base = 84 + i * 50;
        if base + 50 > bytes.len() {
            return Err(Error::Parse {
                offset: bytes.len(),
                message: format!("binary STL truncated in triangle {i} of {n}"),
            });
        }
        let f = |k: usize| {
            let o = base + 12 + 4 * k;
            f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as f64
        };
        soup.push([
            Vector3::new(f(0), f(1), f(2)),
            Vector3::new(f(3), f(4), f(5)),
            Vector3::new(f(6), f(7), f(8)),
        ]);
    }
    Ok(soup)
}

fn parse_ascii(bytes: &[u8]) -> Result<Vec<[Vector3<f64>; 3]>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse {
        offset: e.valid_up_to(),
        message: "ASCII STL is not valid UTF-8".into(),
    })?;
    let mut soup = Vec::new();
    let mut pending: Vec<Vector3<f64>> = Vec::with_capacity(3);
    let mut in_facet = false;
    let mut finished = false;
    let mut offset = 0usize;
    for line in text.split_inclusive('\n') {
        let at = offset;
        offset += line.len();
        let mut tok = line.split_whitespace();
        let Some(head) = tok.next() else { continue };
        let err = |message: String| Error::Parse {
            offset: at,
            message,
        };
        match head {
            "solid" | "outer" | "endloop" => {}
            "facet" => {
                if in_facet {
                    return Err(err("nested facet".into()));
                }
                in_facet = true;
                pending.clear();
            }
            "vertex" => {
                if !in_facet {
                    return Err(err("vertex outside facet".into()));
                }
                let mut c = [0.0f64; 3];
                for v in &mut c {
                    let s = tok.next().ok_or_else(|| err("vertex needs 3 coordinates".into()))?;
                    *v = s
                        .parse::<f32>()
                        .map_err(|e| err(format!("bad coordinate {s:?}: {e}")))?
                        as f64;
                }
                pending.push(Vector3::new(c[0], c[1], c[2]));
            }
            "endfacet" => {
                if pending.len() != 3 {
                    return Err(err(format!("facet has {} vertices", pending.len())));
                }
                soup.push([pending[0], pending[1], pending[2]]);
                in_facet = false;
            }
            "endsolid" => {
                finished = true;
                break;
            }
            other => return Err(err(format!("unexpected token {other:?}"))),
        }
    }
    if !finished {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: "ASCII STL ended before endsolid".into(),
        });
    }
    Ok(soup)
}

pub fn write_stl_binary(mesh: &TriMesh) -> Vec<u8> {
    let mut out = vec![0u8; 80];
    out.extend_from_slice(&(mesh.triangles.len() as u32).to_le_bytes());
    for f in 0..mesh.triangles.len() {
        let n = mesh.face_normal(f);
        for v in [n].iter().chain(mesh.triangle(f).iter()) {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&[0, 0]);
    }
    out
}

pub fn write_stl_ascii(mesh: &TriMesh, name: &str) -> String {
    let mut s = format!("solid {name}\n");
    for f in 0..mesh.triangles.len() {
        let n = mesh.face_normal(f);
        let _ = writeln!(
            s,
            "  facet normal {:e} {:e} {:e}",
            n.x as f32, n.y as f32, n.z as f32
        );
        s.push_str("    outer loop\n");
        for v in mesh.triangle(f) {
            let _ = writeln!(
                s,
                "      vertex {:e} {:e} {:e}",
                v.x as f32, v.y as f32, v.z as f32
            );
        }
        s.push_str("    endloop\n  endfacet\n");
    }
    let _ = writeln!(s, "endsolid {name}");
    s
}

/// Procedural meshes for tests and synthetic scenes. All are centered on the
/// origin with outward-facing windings.
pub mod shapes {
    use super::*;

    pub fn cuboid(sx: f64, sy: f64, sz: f64) -> TriMesh {
        let (hx, hy) = (sx / 2.0, sy / 2.0);
        let poly = [
            Vector2::new(-hx, -hy),
            Vector2::new(hx, -hy),
            Vector2::new(hx, hy),
            Vector2::new(-hx, hy),
        ];
        extrude(&poly, sz).expect("rectangle is a valid polygon")
    }

    /// Prism over a regular `facets`-gon inscribed in a circle of `radius`.
    pub fn cylinder(radius: f64, height: f64, facets: usize) -> TriMesh {
        let poly: Vec<_> = (0..facets)
            .map(|i| {
                let a = 2.0 * std::f64::consts::PI * i as f64 / facets as f64;
                Vector2::new(radius * a.cos(), radius * a.sin())
            })
            .collect();
        extrude(&poly, height).expect("regular polygon is valid")
    }

    /// Extrudes a simple counter-clockwise polygon along `z` by `height`.
    pub fn extrude(poly: &[Vector2<f64>], height: f64) -> Result<TriMesh> {
        let n = poly.len();
        if n < 3 {
            return Err(Error::InvalidArgument("polygon needs 3 vertices".into()));
        }
        let h = height / 2.0;
        let mut vertices: Vec<Vector3<f64>> = poly.iter().map(|p| Vector3::new(p.x, p.y, -h)).collect();
        vertices.extend(poly.iter().map(|p| Vector3::new(p.x, p.y, h)));
        let cap = ear_clip(poly)?;
        let mut tris = Vec::new();
        for [a, b, c] in &cap {
            tris.push([*a as u32, *c as u32, *b as u32]);
            tris.push([(a + n) as u32, (b + n) as u32, (c + n) as u32]);
        }
        for i in 0..n {
            let j = (i + 1) % n;
            tris.push([i as u32, j as u32, (j + n) as u32]);
            tris.push([i as u32, (j + n) as u32, (i + n) as u32]);
        }
        TriMesh::from_indexed(vertices, tris)
    }

    fn ear_clip(poly: &[Vector2<f64>]) -> Result<Vec<[usize; 3]>> {
        let cross = |o: Vector2<f64>, a: Vector2<f64>, b: Vector2<f64>| {
            (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
        };
        let area: f64 = (0..poly.len())
            .map(|i| {
                let j = (i + 1) % poly.len();
                poly[i].x * poly[j].y - poly[j].x * poly[i].y
            })
            .sum();
        if area <= 0.0 {
            return Err(Error::InvalidArgument("polygon must be counter-clockwise".into()));
        }
        let mut idx: Vec<usize> = (0..poly.len()).collect();
        let mut out = Vec::new();
        while idx.len() > 3 {
            let m = idx.len();
            let mut clipped = false;
            for k in 0..m {
                let (ia, ib, ic) = (idx[(k + m - 1) % m], idx[k], idx[(k + 1) % m]);
                let (a, b, c) = (poly[ia], poly[ib], poly[ic]);
                if cross(a, b, c) <= 0.0 {
                    continue;
                }
                let inside = idx.iter().any(|&q| {
                    if q == ia || q == ib || q == ic {
                        return false;
                    }
                    let p = poly[q];
                    cross(a, b, p) >= 0.0 && cross(b, c, p) >= 0.0 && cross(c, a, p) >= 0.0
                });
                if !inside {
                    out.push([ia, ib, ic]);
                    idx.remove(k);
                    clipped = true;
                    break;
                }
            }
            if !clipped {
                return Err(Error::InvalidArgument("polygon is not simple".into()));
            }
        }
        out.push([idx[0], idx[1], idx[2]]);
        Ok(out)
    }
}
