//! Candidate extraction: rank the templates of a bank by their average
//! directional chamfer distance in the image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dcd::DcdTensor;
use crate::edges::wrap_pi;
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, ImagePoint, Pose, MIN_DEPTH};
use crate::template::{RasterTemplate, TemplateBank};

/// A template point projected into an image, with its edge orientation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedPoint {
    pub pos: ImagePoint,
    /// Projected edge direction in `[0, π)`.
    pub xi: f64,
    /// Index of the point in its template.
    pub index: usize,
}

/// Projects the points and their tangent partners; pairs where either end
/// falls behind the camera or outside the image are dropped.
pub fn project_template(t: &RasterTemplate, pose: &Pose, intr: &CameraIntrinsics) -> Result<Vec<ProjectedPoint>> {
    let out = project_template_lenient(t, pose, intr);
    if out.is_empty() {
        return Err(Error::EmptyProjection);
    }
    Ok(out)
}

pub(crate) fn project_template_lenient(t: &RasterTemplate, pose: &Pose, intr: &CameraIntrinsics) -> Vec<ProjectedPoint> {
    let r = pose.rotation_matrix();
    let mut out = Vec::with_capacity(t.len());
    for (i, (o, o2)) in t.points.iter().zip(&t.offset_points).enumerate() {
        let p = r * o + pose.translation;
        let p2 = r * o2 + pose.translation;
        if p.z <= MIN_DEPTH || p2.z <= MIN_DEPTH {
            continue;
        }
        let a = intr.project_unchecked(&p);
        let b = intr.project_unchecked(&p2);
        if !intr.contains(&a, 0.0) || !intr.contains(&b, 0.0) {
            continue;
        }
        out.push(ProjectedPoint {
            pos: a,
            xi: projected_orientation(&a, &b),
            index: i,
        });
    }
    out
}

/// Orientation of the segment `a → b`, in `[0, π)`.
#[inline]
pub fn projected_orientation(a: &ImagePoint, b: &ImagePoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    if dx == 0.0 {
        return std::f64::consts::FRAC_PI_2;
    }
    wrap_pi(dy.atan2(dx))
}

/// Mean tensor value over projected points.
pub fn average_dcd(t: &DcdTensor, projected: &[ProjectedPoint]) -> Result<f64> {
    if projected.is_empty() {
        return Err(Error::EmptyProjection);
    }
    let mut s = 0.0;
    for p in projected {
        s += t.lookup(&p.pos, p.xi)?;
    }
    Ok(s / projected.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectCandidate {
    pub object_id: String,
    /// Object pose in the reference camera frame.
    pub pose: Pose,
    pub avg_dcd: f64,
    /// Filled in by registration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    /// Index of the originating bank entry.
    pub template_ref: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NmsOptions {
    pub translation: f64,
    pub rotation: f64,
}

impl Default for NmsOptions {
    fn default() -> Self {
        Self {
            translation: 0.010,
            rotation: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanOptions {
    pub top_k: usize,
    /// Entries keeping a smaller fraction of their points inside the image are skipped.
    pub min_visible_fraction: f64,
    pub nms: Option<NmsOptions>,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self {
            top_k: 10,
            min_visible_fraction: 0.3,
            nms: None,
        }
    }
}

/// Average distance of one bank entry, or `None` if too few points project.
pub fn entry_distance(t: &DcdTensor, template: &RasterTemplate, pose: &Pose, intr: &CameraIntrinsics, min_fraction: f64) -> Option<f64> {
    let proj = project_template_lenient(template, pose, intr);
    if proj.is_empty() || (proj.len() as f64) < min_fraction * template.len() as f64 {
        return None;
    }
    let s: f64 = proj.iter().map(|p| t.lookup_unchecked(p.pos.x, p.pos.y, p.xi)).sum();
    Some(s / proj.len() as f64)
}

/// Ranks every entry of the banks; ties are broken by bank order then entry index.
pub fn scan_banks(t: &DcdTensor, banks: &[&TemplateBank], intr: &CameraIntrinsics, opts: &ScanOptions) -> Vec<ObjectCandidate> {
    let jobs: Vec<(usize, usize)> = banks
        .iter()
        .enumerate()
        .flat_map(|(b, bank)| (0..bank.len()).map(move |e| (b, e)))
        .collect();
    let mut scored: Vec<(f64, usize, usize)> = jobs
        .par_iter()
        .filter_map(|&(b, e)| {
            let entry = &banks[b].entries[e];
            entry_distance(t, &entry.template, &entry.pose, intr, opts.min_visible_fraction).map(|d| (d, b, e))
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut out: Vec<ObjectCandidate> = Vec::new();
    for (d, b, e) in scored {
        if out.len() >= opts.top_k {
            break;
        }
        let bank = banks[b];
        let pose = bank.entries[e].pose;
        if let Some(nms) = &opts.nms {
            let suppressed = out.iter().any(|c| {
                let (dt, dr) = c.pose.distance(&pose);
                c.object_id == bank.object_id && dt < nms.translation && dr < nms.rotation
            });
            if suppressed {
                continue;
            }
        }
        out.push(ObjectCandidate {
            object_id: bank.object_id.clone(),
            pose,
            avg_dcd: d,
            score: None,
            template_ref: e,
        });
    }
    out
}

pub fn scan_candidates(t: &DcdTensor, bank: &TemplateBank, intr: &CameraIntrinsics, opts: &ScanOptions) -> Vec<ObjectCandidate> {
    scan_banks(t, &[bank], intr, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dcd::DcdOptions;
    use crate::edges::EdgelSet;
    use crate::template::BankEntry;
    use nalgebra::Vector3;
    use std::f64::consts::PI;

    fn intr() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 160.0, 120.0, 320, 240).unwrap()
    }

    /// Straight edge along object x, sampled every millimeter.
    fn bar(n: usize) -> RasterTemplate {
        let points: Vec<_> = (0..n).map(|i| Vector3::new(i as f64 * 0.001 - 0.02, 0.0, 0.0)).collect();
        let offset_points = points.iter().map(|p| p + Vector3::new(0.001, 0.0, 0.0)).collect();
        RasterTemplate {
            points,
            offset_points,
            step: 0.001,
            dr: 0.001,
            ids: Vec::new(),
        }
    }

    #[test]
    fn horizontal_and_rolled_edges() {
        let t = bar(41);
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 0.5));
        let p = project_template(&t, &pose, &intr()).unwrap();
        assert_eq!(p.len(), 41);
        assert!(p.iter().all(|q| q.xi.abs() < 1e-6 || (q.xi - PI).abs() < 1e-6));
        for theta in [0.3, 1.2, 2.0, 2.9] {
            let rolled = Pose::new(Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.0, 0.0, theta));
            for q in project_template(&t, &rolled, &intr()).unwrap() {
                let d = (q.xi - theta.rem_euclid(PI)).rem_euclid(PI);
                assert!(d.min(PI - d) < 1e-6);
            }
        }
        let vertical = Pose::new(Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.0, 0.0, PI / 2.0));
        let a = ImagePoint::new(10.0, 10.0);
        assert_eq!(projected_orientation(&a, &ImagePoint::new(10.0, 12.0)), PI / 2.0);
        assert!(project_template(&t, &vertical, &intr()).is_ok());
        let behind = Pose::from_translation(Vector3::new(0.0, 0.0, -0.5));
        assert!(matches!(project_template(&t, &behind, &intr()), Err(Error::EmptyProjection)));
    }

    fn tensor_from(proj: &[ProjectedPoint], sigma: f64) -> DcdTensor {
        let mut set = EdgelSet::new(320, 240);
        for p in proj {
            set.push(p.pos, p.xi);
        }
        DcdTensor::build(&set, &DcdOptions { sigma, ..Default::default() }).unwrap()
    }

    #[test]
    fn self_distance_is_zero_and_shift_is_measured() {
        // Put the projected points exactly on pixels and on a channel.
        let t = bar(41);
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 0.5));
        let proj = project_template(&t, &pose, &intr()).unwrap();
        let dt = tensor_from(&proj, 0.0);
        assert!(average_dcd(&dt, &proj).unwrap() < 1e-6);
        // A long horizontal line, template shifted 5 px down.
        let mut set = EdgelSet::new(320, 240);
        for x in 0..320 {
            set.push(ImagePoint::new(x as f64, 120.0), 0.0);
        }
        let line = DcdTensor::build(&set, &DcdOptions { sigma: 0.0, ..Default::default() }).unwrap();
        let shifted = Pose::from_translation(Vector3::new(0.0, 0.005, 0.5));
        let proj = project_template(&t, &shifted, &intr()).unwrap();
        assert!((average_dcd(&line, &proj).unwrap() - 5.0).abs() < 0.1);
        assert!((average_dcd(&line, &proj[3..4]).unwrap() - line.lookup(&proj[3].pos, proj[3].xi).unwrap()).abs() < 1e-12);
        assert!(average_dcd(&line, &[]).is_err());
    }

    #[test]
    fn permutation_invariance() {
        let t = bar(41);
        let pose = Pose::new(Vector3::new(0.003, 0.002, 0.5), Vector3::new(0.1, 0.2, 0.3));
        let mut proj = project_template(&t, &pose, &intr()).unwrap();
        let dt = tensor_from(&proj, 1.0);
        let shifted = Pose::new(Vector3::new(0.004, 0.0, 0.5), Vector3::new(0.1, 0.2, 0.5));
        let mut p2 = project_template(&t, &shifted, &intr()).unwrap();
        let a = average_dcd(&dt, &p2).unwrap();
        p2.reverse();
        proj.rotate_left(7);
        assert!((a - average_dcd(&dt, &p2).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn scan_ranks_truth_first() {
        let t = bar(41);
        let truth = Pose::new(Vector3::new(0.0, 0.0, 0.5), Vector3::new(0.0, 0.0, 0.4));
        let dt = tensor_from(&project_template(&t, &truth, &intr()).unwrap(), 1.0);
        let mut entries: Vec<BankEntry> = (0..100)
            .map(|i| BankEntry {
                pose: Pose::new(
                    Vector3::new(0.004 * ((i % 10) as f64 - 4.5), 0.004 * ((i / 10) as f64 - 4.5), 0.5),
                    Vector3::new(0.0, 0.0, 0.4 + 0.05 * (i % 3) as f64),
                ),
                template: t.clone(),
            })
            .collect();
        entries.insert(37, BankEntry { pose: truth, template: t.clone() });
        let bank = TemplateBank {
            object_id: "bar".into(),
            entries,
            grid: None,
            skipped: vec![],
        };
        let c = scan_candidates(&dt, &bank, &intr(), &ScanOptions { top_k: 5, ..Default::default() });
        assert_eq!(c.len(), 5);
        assert_eq!(c[0].template_ref, 37);
        assert!(c.windows(2).all(|w| w[0].avg_dcd <= w[1].avg_dcd));
        let all = scan_candidates(&dt, &bank, &intr(), &ScanOptions { top_k: 1000, ..Default::default() });
        assert_eq!(all.len(), 101);
        assert!(all.windows(2).all(|w| w[0].avg_dcd <= w[1].avg_dcd));
    }

    #[test]
    fn identical_entries_keep_bank_order() {
        let t = bar(21);
        let pose = Pose::from_translation(Vector3::new(0.0, 0.0, 0.5));
        let dt = tensor_from(&project_template(&t, &pose, &intr()).unwrap(), 1.0);
        let e = BankEntry { pose, template: t };
        let bank = TemplateBank {
            object_id: "bar".into(),
            entries: vec![e.clone(), e],
            grid: None,
            skipped: vec![],
        };
        let c = scan_candidates(&dt, &bank, &intr(), &ScanOptions::default());
        assert_eq!(c.iter().map(|c| c.template_ref).collect::<Vec<_>>(), vec![0, 1]);
        let nms = scan_candidates(&dt, &bank, &intr(), &ScanOptions { nms: Some(NmsOptions::default()), ..Default::default() });
        assert_eq!(nms.len(), 1);
    }

    #[test]
    fn candidate_json_round_trip() {
        let c = ObjectCandidate {
            object_id: "a".into(),
            pose: Pose::new(Vector3::new(0.1, 0.2, 0.3), Vector3::new(0.0, 0.1, 0.0)),
            avg_dcd: 1.5,
            score: Some(0.9),
            template_ref: 4,
        };
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"t\":[0.1,0.2,0.3]"));
        assert_eq!(serde_json::from_str::<ObjectCandidate>(&s).unwrap(), c);
    }
}
