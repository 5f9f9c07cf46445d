//! Directional chamfer distance tensor.
//!
//! For every pixel `x` and orientation channel `j` (angle `φ_j = jπ/q`) the
//! tensor holds
//!
//! ```text
//! DT(x, j) = min_e ‖x − e‖ + λ·‖φ_j − Φ(o(e))‖_π
//! ```
//!
//! over all edgels `e`, where `Φ` snaps an orientation to its nearest channel
//! and edgel positions are rounded to pixels. It is built with one exact
//! Euclidean distance transform per channel followed by circular forward and
//! backward recursions across channels, then optionally smoothed with a
//! Gaussian along the orientation axis.
//!
//! Storage is pixel-major (`[y][x][j]`), so that the recursion, the smoothing
//! and trilinear lookups all touch contiguous memory.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edges::{wrap_pi, EdgelSet};
use crate::edt::edt;
use crate::error::{invalid, Error, Result};
use crate::geometry::ImagePoint;

/// `min_k |a − b + kπ|`, in `[0, π/2]`.
#[inline]
pub fn angular_distance_pi(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(PI);
    d.min(PI - d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcdOptions {
    /// Number of orientation channels.
    pub q: usize,
    /// Orientation weight (pixels per radian).
    pub lambda: f64,
    /// Standard deviation of the orientation smoothing, in channels; 0 disables it.
    pub sigma: f64,
}

impl Default for DcdOptions {
    fn default() -> Self {
        Self {
            q: 60,
            lambda: 100.0,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DcdTensor {
    pub width: usize,
    pub height: usize,
    pub q: usize,
    pub lambda: f64,
    pub sigma: f64,
    data: Vec<f64>,
    /// Set when the tensor was built from an empty edgel set.
    pub empty: bool,
}

pub fn build_dcd(edgels: &EdgelSet, opts: &DcdOptions) -> Result<DcdTensor> {
    DcdTensor::build(edgels, opts)
}

impl DcdTensor {
    pub fn build(edgels: &EdgelSet, opts: &DcdOptions) -> Result<Self> {
        let (w, h, q) = (edgels.width, edgels.height, opts.q);
        if q < 2 || !(opts.lambda >= 0.0) || !(opts.sigma >= 0.0) || w == 0 || h == 0 {
            return Err(invalid("tensor needs q >= 2, lambda >= 0, sigma >= 0 and a non-empty image"));
        }
        let large = (w + h) as f64 + opts.lambda * PI;
        let mut t = Self {
            width: w,
            height: h,
            q,
            lambda: opts.lambda,
            sigma: opts.sigma,
            data: vec![large; w * h * q],
            empty: edgels.is_empty(),
        };
        if t.empty {
            return Ok(t);
        }

        // Edgel pixels per channel.
        let mut sites: Vec<Vec<usize>> = vec![Vec::new(); q];
        for e in &edgels.edgels {
            let x = (e.pos.x.round() as usize).min(w - 1);
            let y = (e.pos.y.round() as usize).min(h - 1);
            sites[t.channel_of(e.orientation)].push(y * w + x);
        }

        // One distance transform per non-empty channel, a few channels at a time
        // to bound the transient memory.
        let batch = rayon::current_num_threads().max(1) * 2;
        let channels: Vec<usize> = (0..q).filter(|&j| !sites[j].is_empty()).collect();
        for chunk in channels.chunks(batch) {
            let planes: Vec<(usize, Vec<f64>)> = chunk
                .par_iter()
                .map(|&j| {
                    let mut mask = vec![false; w * h];
                    for &i in &sites[j] {
                        mask[i] = true;
                    }
                    (j, edt(w, h, &mask))
                })
                .collect();
            for (j, plane) in planes {
                for (i, v) in plane.into_iter().enumerate() {
                    t.data[i * q + j] = v;
                }
            }
        }

        let step = opts.lambda * PI / q as f64;
        let kernel = gaussian_kernel(opts.sigma);
        t.data.par_chunks_mut(q * w).for_each(|row| {
            let mut tmp = vec![0.0; q + kernel.as_ref().map_or(0, |k| k.len())];
            for px in row.chunks_mut(q) {
                propagate(px, step);
                if let Some(k) = &kernel {
                    smooth(px, k, &mut tmp);
                }
            }
        });
        Ok(t)
    }

    /// Value used for channels, and whole tensors, without any edgel.
    pub fn large(&self) -> f64 {
        (self.width + self.height) as f64 + self.lambda * PI
    }

    pub fn channel_angle(&self, j: usize) -> f64 {
        j as f64 * PI / self.q as f64
    }

    pub fn channel_angles(&self) -> Vec<f64> {
        (0..self.q).map(|j| self.channel_angle(j)).collect()
    }

    /// Nearest channel of an orientation.
    #[inline]
    pub fn channel_of(&self, angle: f64) -> usize {
        ((wrap_pi(angle) * self.q as f64 / PI).round() as usize) % self.q
    }

    /// Stored value at an integer pixel and channel.
    #[inline]
    pub fn value(&self, x: usize, y: usize, j: usize) -> f64 {
        self.data[(y * self.width + x) * self.q + j]
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn in_domain(&self, x: f64, y: f64) -> bool {
        x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64
    }

    #[inline]
    pub fn in_gradient_domain(&self, x: f64, y: f64) -> bool {
        x >= 1.0 && y >= 1.0 && x <= (self.width as f64 - 2.0) && y <= (self.height as f64 - 2.0)
    }

    /// Trilinear interpolation: bilinear in position, linear in orientation
    /// with circular wrap. The caller guarantees `in_domain(x, y)`.
    #[inline]
    pub fn lookup_unchecked(&self, x: f64, y: f64, xi: f64) -> f64 {
        let q = self.q;
        let u = wrap_pi(xi) * q as f64 / PI;
        let uf = u.floor();
        let tu = u - uf;
        let j0 = (uf as usize) % q;
        let j1 = (j0 + 1) % q;
        let x0 = (x.floor() as usize).min(self.width.saturating_sub(2));
        let y0 = (y.floor() as usize).min(self.height.saturating_sub(2));
        let tx = x - x0 as f64;
        let ty = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let w = self.width;
        let at = |xx: usize, yy: usize| {
            let base = (yy * w + xx) * q;
            let d = &self.data[base..base + q];
            d[j0] + (d[j1] - d[j0]) * tu
        };
        let a = at(x0, y0) + (at(x1, y0) - at(x0, y0)) * tx;
        let b = at(x0, y1) + (at(x1, y1) - at(x0, y1)) * tx;
        a + (b - a) * ty
    }

    pub fn lookup(&self, p: &ImagePoint, xi: f64) -> Result<f64> {
        if !self.in_domain(p.x, p.y) || !xi.is_finite() {
            return Err(Error::OutOfBounds { x: p.x, y: p.y });
        }
        Ok(self.lookup_unchecked(p.x, p.y, xi))
    }

    /// `(∂/∂x, ∂/∂y, ∂/∂ξ)`: central differences of the interpolated field
    /// at ±1 px and ±1 channel; the orientation component is per radian.
    /// The caller guarantees `in_gradient_domain(x, y)`.
    #[inline]
    pub fn gradient_unchecked(&self, x: f64, y: f64, xi: f64) -> Vector3<f64> {
        let delta = PI / self.q as f64;
        Vector3::new(
            0.5 * (self.lookup_unchecked(x + 1.0, y, xi) - self.lookup_unchecked(x - 1.0, y, xi)),
            0.5 * (self.lookup_unchecked(x, y + 1.0, xi) - self.lookup_unchecked(x, y - 1.0, xi)),
            (self.lookup_unchecked(x, y, xi + delta) - self.lookup_unchecked(x, y, xi - delta)) / (2.0 * delta),
        )
    }

    pub fn gradient(&self, p: &ImagePoint, xi: f64) -> Result<Vector3<f64>> {
        if !self.in_gradient_domain(p.x, p.y) || !xi.is_finite() {
            return Err(Error::OutOfBounds { x: p.x, y: p.y });
        }
        Ok(self.gradient_unchecked(p.x, p.y, xi))
    }

    /// Writes the values as little-endian `f32` in `[y][x][j]` order, plus a
    /// JSON header at `<path>.json`.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for v in &self.data {
            f.write_all(&(*v as f32).to_le_bytes())?;
        }
        f.flush()?;
        let header = serde_json::json!({
            "schema_version": 1,
            "width": self.width,
            "height": self.height,
            "q": self.q,
            "lambda": self.lambda,
            "sigma": self.sigma,
            "empty": self.empty,
            "layout": "y-x-channel",
            "dtype": "f32le",
        });
        let mut hp = path.as_os_str().to_owned();
        hp.push(".json");
        std::fs::write(std::path::PathBuf::from(hp), serde_json::to_vec_pretty(&header)?)?;
        Ok(())
    }
}

/// Circular forward and backward min-plus sweeps over the channels of one
/// pixel, repeated until nothing changes.
#[inline]
fn propagate(v: &mut [f64], step: f64) {
    let q = v.len();
    for _ in 0..q {
        let mut changed = false;
        let mut prev = v[q - 1];
        for x in v.iter_mut() {
            let c = prev + step;
            if c < *x {
                *x = c;
                changed = true;
            }
            prev = *x;
        }
        let mut next = v[0];
        for x in v.iter_mut().rev() {
            let c = next + step;
            if c < *x {
                *x = c;
                changed = true;
            }
            next = *x;
        }
        if !changed {
            break;
        }
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
fn gaussian_kernel(sigma: f64) -> Option<Vec<f64>> {
    if sigma <= 0.0 {
        return None;
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    Some(k)
}

/// Circular convolution; `tmp` holds at least `q + kernel.len() - 1` values.
#[inline]
fn smooth(v: &mut [f64], kernel: &[f64], tmp: &mut [f64]) {
    let q = v.len() as i64;
    let r = (kernel.len() / 2) as i64;
    let ext = &mut tmp[..(q + 2 * r) as usize];
    for (i, e) in ext.iter_mut().enumerate() {
        *e = v[(i as i64 - r).rem_euclid(q) as usize];
    }
    for (j, out) in v.iter_mut().enumerate() {
        *out = kernel.iter().zip(&ext[j..]).map(|(w, x)| w * x).sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn single(x: f64, y: f64, o: f64, q: usize, sigma: f64) -> DcdTensor {
        let mut set = EdgelSet::new(64, 64);
        set.push(ImagePoint::new(x, y), o);
        DcdTensor::build(&set, &DcdOptions { q, lambda: 100.0, sigma }).unwrap()
    }

    /// Direct minimum over edgels, positions rounded to pixels.
    pub(crate) fn brute_force(set: &EdgelSet, q: usize, lambda: f64, x: usize, y: usize, j: usize) -> f64 {
        let phi = |a: f64| ((wrap_pi(a) * q as f64 / PI).round() as usize % q) as f64 * PI / q as f64;
        set.edgels
            .iter()
            .map(|e| {
                let (ex, ey) = (e.pos.x.round(), e.pos.y.round());
                (x as f64 - ex).hypot(y as f64 - ey)
                    + lambda * angular_distance_pi(j as f64 * PI / q as f64, phi(e.orientation))
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn angular_distance_examples() {
        assert_eq!(angular_distance_pi(0.0, 0.0), 0.0);
        assert!(angular_distance_pi(0.0, PI) < 1e-15);
        let brute = (-2..=2).map(|k| (0.1 - 3.0 + k as f64 * PI).abs()).fold(f64::INFINITY, f64::min);
        assert!((angular_distance_pi(0.1, 3.0) - brute).abs() < 1e-12);
        assert!((angular_distance_pi(0.1, 3.0) - 0.2416).abs() < 1e-4);
    }

    #[test]
    fn single_edgel_values() {
        let t = single(10.0, 10.0, 0.0, 8, 0.0);
        assert_eq!(t.value(10, 10, 0), 0.0);
        assert!((t.value(13, 14, 0) - 5.0).abs() < 1e-12);
        assert!((t.value(10, 10, 2) - 100.0 * 2.0 * PI / 8.0).abs() < 1e-9);
        assert!((t.value(10, 10, 6) - 100.0 * 2.0 * PI / 8.0).abs() < 1e-9);
    }

    #[test]
    fn empty_set_is_large() {
        let t = DcdTensor::build(&EdgelSet::new(16, 8), &DcdOptions::default()).unwrap();
        assert!(t.empty);
        assert!(t.raw().iter().all(|&v| v == 16.0 + 8.0 + 100.0 * PI));
    }

    #[test]
    fn matches_brute_force_on_random_sets() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let mut set = EdgelSet::new(64, 64);
            for _ in 0..rng.random_range(1..=20) {
                set.push(
                    ImagePoint::new(rng.random_range(0.0..63.0), rng.random_range(0.0..63.0)),
                    rng.random_range(0.0..PI),
                );
            }
            let t = DcdTensor::build(&set, &DcdOptions { q: 8, lambda: 100.0, sigma: 0.0 }).unwrap();
            for y in 0..64 {
                for x in 0..64 {
                    for j in 0..8 {
                        assert!((t.value(x, y, j) - brute_force(&set, 8, 100.0, x, y, j)).abs() < 1e-6);
                    }
                }
            }
        }
    }

    #[test]
    fn channel_steps_are_bounded_before_smoothing() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut set = EdgelSet::new(40, 30);
        for _ in 0..15 {
            set.push(ImagePoint::new(rng.random_range(0.0..39.0), rng.random_range(0.0..29.0)), rng.random_range(0.0..PI));
        }
        let q = 12;
        let t = DcdTensor::build(&set, &DcdOptions { q, lambda: 100.0, sigma: 0.0 }).unwrap();
        let bound = 100.0 * PI / q as f64 + 1e-9;
        for y in 0..30 {
            for x in 0..40 {
                for j in 0..q {
                    assert!((t.value(x, y, j) - t.value(x, y, (j + 1) % q)).abs() <= bound);
                }
            }
        }
        // Smoothing keeps values non-negative and inside the neighborhood range.
        let s = DcdTensor::build(&set, &DcdOptions { q, lambda: 100.0, sigma: 1.0 }).unwrap();
        let r = 3;
        for y in 0..30 {
            for x in 0..40 {
                for j in 0..q {
                    let nb: Vec<f64> = (-r..=r).map(|k| t.value(x, y, (j as i64 + k).rem_euclid(q as i64) as usize)).collect();
                    let lo = nb.iter().cloned().fold(f64::INFINITY, f64::min);
                    let hi = nb.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let v = s.value(x, y, j);
                    assert!(v >= 0.0 && v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            }
        }
    }

    #[test]
    fn lookup_interpolation() {
        let t = single(20.0, 20.0, 0.3, 16, 0.0);
        let a = t.channel_angle(1);
        assert!((t.lookup(&ImagePoint::new(25.0, 22.0), a).unwrap() - t.value(25, 22, 1)).abs() < 1e-12);
        assert!((t.lookup(&ImagePoint::new(25.0, 22.0), a + PI).unwrap() - t.value(25, 22, 1)).abs() < 1e-9);
        let mid = t.lookup(&ImagePoint::new(25.0, 22.0), 0.5 * PI / 16.0).unwrap();
        assert!((mid - 0.5 * (t.value(25, 22, 0) + t.value(25, 22, 1))).abs() < 1e-9);
        // Wrap between the last and the first channel.
        let wrap = t.lookup(&ImagePoint::new(25.0, 22.0), PI - 0.5 * PI / 16.0).unwrap();
        assert!((wrap - 0.5 * (t.value(25, 22, 15) + t.value(25, 22, 0))).abs() < 1e-9);
        assert!(matches!(t.lookup(&ImagePoint::new(-0.1, 3.0), 0.0), Err(Error::OutOfBounds { .. })));
        assert!(t.lookup(&ImagePoint::new(63.0, 63.0), 0.0).is_ok());
    }

    #[test]
    fn gradient_examples() {
        let t = single(10.0, 10.0, 0.0, 60, 1.0);
        let g = t.gradient(&ImagePoint::new(15.0, 10.0), 0.0).unwrap();
        assert!((g.x - 1.0).abs() < 0.05);
        assert!(g.y.abs() < 1e-9);
        assert!(t.gradient(&ImagePoint::new(0.5, 10.0), 0.0).is_err());

        // Locally constant tensor.
        let mut set = EdgelSet::new(32, 32);
        for y in 0..32 {
            for x in 0..32 {
                for j in 0..8 {
                    set.push(ImagePoint::new(x as f64, y as f64), j as f64 * PI / 8.0);
                }
            }
        }
        let c = DcdTensor::build(&set, &DcdOptions { q: 8, lambda: 100.0, sigma: 1.0 }).unwrap();
        assert_eq!(c.gradient(&ImagePoint::new(10.3, 12.7), 0.4).unwrap(), Vector3::zeros());
    }

    #[test]
    fn dump_writes_raw_and_header() {
        let t = single(3.0, 3.0, 0.0, 4, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.raw");
        t.dump(&p).unwrap();
        assert_eq!(std::fs::metadata(&p).unwrap().len(), 64 * 64 * 4 * 4);
        let h: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("t.raw.json")).unwrap()).unwrap();
        assert_eq!(h["q"], 4);
    }
}
