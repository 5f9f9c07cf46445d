//! Oriented edgels from intensity images.
//!
//! A light-weight stand-in for a line segment detector: on every level of a
//! Gaussian pyramid, pixels with a strong Sobel gradient are grouped into
//! regions of coherent gradient direction, each region is fitted with a line
//! (total least squares), short segments are dropped and the rest are emitted
//! as edgels sampled every pixel along the segment. All edgels of a segment
//! share its orientation. Coarse-level segments are mapped back to level-0
//! coordinates.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ImagePoint;
use crate::image::GrayImage;

/// Reduces an angle to `[0, π)`.
#[inline]
pub fn wrap_pi(a: f64) -> f64 {
    let r = a.rem_euclid(PI);
    if r >= PI { 0.0 } else { r }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edgel {
    pub pos: ImagePoint,
    /// Edge direction in `[0, π)`.
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EdgelSet {
    pub width: usize,
    pub height: usize,
    pub edgels: Vec<Edgel>,
}

impl EdgelSet {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            edgels: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.edgels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edgels.is_empty()
    }

    /// Appends an edgel if it lies inside the image; returns whether it did.
    pub fn push(&mut self, pos: ImagePoint, orientation: f64) -> bool {
        let inside = pos.x >= 0.0
            && pos.y >= 0.0
            && pos.x <= (self.width - 1) as f64
            && pos.y <= (self.height - 1) as f64;
        if inside {
            self.edgels.push(Edgel {
                pos,
                orientation: wrap_pi(orientation),
            });
        }
        inside
    }

    /// `x,y,theta` rows with a header line.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "x,y,theta")?;
        for e in &self.edgels {
            writeln!(w, "{},{},{}", e.pos.x, e.pos.y, e.orientation)?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead, width: usize, height: usize) -> Result<Self> {
        let mut set = Self::new(width, height);
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || (n == 0 && line.starts_with('x')) {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Format(format!("edgel CSV line {}: {e}", n + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Format(format!("edgel CSV line {} needs 3 fields", n + 1)));
            }
            if !set.push(ImagePoint::new(vals[0], vals[1]), vals[2]) {
                return Err(Error::Format(format!("edgel CSV line {} lies outside the image", n + 1)));
            }
        }
        Ok(set)
    }
}

/// Per-pixel gradient direction in `[0, π)` and magnitude.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientDirectionImage {
    pub width: usize,
    pub height: usize,
    pub theta: Vec<f32>,
    pub magnitude: Vec<f32>,
}

impl GradientDirectionImage {
    /// Direction at the pixel nearest to `p`, or `None` outside the image.
    #[inline]
    pub fn theta_nearest(&self, p: &ImagePoint) -> Option<f64> {
        let (x, y) = (p.x.round(), p.y.round());
        if x < 0.0 || y < 0.0 || x >= self.width as f64 || y >= self.height as f64 {
            return None;
        }
        Some(self.theta[y as usize * self.width + x as usize] as f64)
    }
}

/// Sobel gradients scaled by 1/8, with replicated borders.
fn sobel(img: &GrayImage) -> (Vec<f32>, Vec<f32>) {
    let (w, h) = (img.width, img.height);
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let p = |dx: isize, dy: isize| img.get_clamped(x + dx, y + dy);
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let i = y as usize * w + x as usize;
            gx[i] = sx / 8.0;
            gy[i] = sy / 8.0;
        }
    }
    (gx, gy)
}

pub fn gradient_direction_image(img: &GrayImage) -> GradientDirectionImage {
    let (gx, gy) = sobel(img);
    let theta = gx
        .iter()
        .zip(&gy)
        .map(|(&x, &y)| wrap_pi((y as f64).atan2(x as f64)) as f32)
        .collect();
    let magnitude = gx.iter().zip(&gy).map(|(&x, &y)| x.hypot(y)).collect();
    GradientDirectionImage {
        width: img.width,
        height: img.height,
        theta,
        magnitude,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EdgeDetectorOptions {
    pub levels: usize,
    /// Minimum Sobel magnitude (intensity units per pixel).
    pub mag_threshold: f64,
    /// Maximum gradient-direction deviation inside a region (radians).
    pub angle_tolerance: f64,
    /// Minimum segment length in level-0 pixels.
    pub min_length: f64,
}

impl Default for EdgeDetectorOptions {
    fn default() -> Self {
        Self {
            levels: 2,
            mag_threshold: 5.0,
            angle_tolerance: PI / 8.0,
            min_length: 5.0,
        }
    }
}

/// A fitted straight segment in level-0 pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edgelet {
    pub a: ImagePoint,
    pub b: ImagePoint,
    pub orientation: f64,
    pub level: usize,
}

impl Edgelet {
    pub fn length(&self) -> f64 {
        (self.b.x - self.a.x).hypot(self.b.y - self.a.y)
    }
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn segments_at_level(img: &GrayImage, level: usize, opts: &EdgeDetectorOptions) -> Vec<Edgelet> {
    let (w, h) = (img.width, img.height);
    let (gx, gy) = sobel(img);
    let mag: Vec<f64> = gx.iter().zip(&gy).map(|(&x, &y)| x.hypot(y) as f64).collect();
    let ang: Vec<f64> = gx.iter().zip(&gy).map(|(&x, &y)| (y as f64).atan2(x as f64)).collect();
    let mut seeds: Vec<usize> = (0..w * h).filter(|&i| mag[i] > opts.mag_threshold).collect();
    seeds.sort_by(|&a, &b| mag[b].total_cmp(&mag[a]).then(a.cmp(&b)));

    let scale = (1usize << level) as f64;
    let to_level0 = |x: f64, y: f64| ImagePoint::new((x + 0.5) * scale - 0.5, (y + 0.5) * scale - 0.5);
    let mut used = vec![false; w * h];
    let mut out = Vec::new();
    let mut region = Vec::new();
    for &seed in &seeds {
        if used[seed] {
            continue;
        }
        used[seed] = true;
        region.clear();
        region.push(seed);
        let (mut sc, mut ss) = (ang[seed].cos(), ang[seed].sin());
        let mut region_angle = ang[seed];
        let mut k = 0;
        while k < region.len() {
            let (px, py) = ((region[k] % w) as isize, (region[k] / w) as isize);
            k += 1;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (px + dx, py + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if used[n] || mag[n] <= opts.mag_threshold {
                        continue;
                    }
                    if angle_diff(ang[n], region_angle) <= opts.angle_tolerance {
                        used[n] = true;
                        region.push(n);
                        sc += ang[n].cos();
                        ss += ang[n].sin();
                        region_angle = ss.atan2(sc);
                    }
                }
            }
        }
        if region.len() < 2 {
            continue;
        }
        // Magnitude-weighted total least squares line.
        let wsum: f64 = region.iter().map(|&i| mag[i]).sum();
        let (mut cx, mut cy) = (0.0, 0.0);
        for &i in &region {
            cx += mag[i] * (i % w) as f64;
            cy += mag[i] * (i / w) as f64;
        }
        cx /= wsum;
        cy /= wsum;
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for &i in &region {
            let (x, y) = ((i % w) as f64 - cx, (i / w) as f64 - cy);
            sxx += mag[i] * x * x;
            sxy += mag[i] * x * y;
            syy += mag[i] * y * y;
        }
        let theta = 0.5 * (2.0 * sxy).atan2(sxx - syy);
        // The fitted line must run across the region's gradient; corner blobs
        // elongated along their own gradient are rejected.
        let misalign = (theta - region_angle - PI / 2.0).rem_euclid(PI);
        if misalign.min(PI - misalign) > opts.angle_tolerance {
            continue;
        }
        let (dx, dy) = (theta.cos(), theta.sin());
        let (mut tmin, mut tmax) = (f64::INFINITY, f64::NEG_INFINITY);
        for &i in &region {
            let t = ((i % w) as f64 - cx) * dx + ((i / w) as f64 - cy) * dy;
            tmin = tmin.min(t);
            tmax = tmax.max(t);
        }
        if (tmax - tmin) * scale < opts.min_length {
            continue;
        }
        out.push(Edgelet {
            a: to_level0(cx + dx * tmin, cy + dy * tmin),
            b: to_level0(cx + dx * tmax, cy + dy * tmax),
            orientation: wrap_pi(theta),
            level,
        });
    }
    out
}

/// Fitted segments over all pyramid levels, in level-0 coordinates.
pub fn detect_segments(img: &GrayImage, opts: &EdgeDetectorOptions) -> Vec<Edgelet> {
    img.pyramid(opts.levels.max(1))
        .iter()
        .enumerate()
        .flat_map(|(l, im)| segments_at_level(im, l, opts))
        .collect()
}

pub fn detect_edgelets(img: &GrayImage, opts: &EdgeDetectorOptions) -> EdgelSet {
    let mut set = EdgelSet::new(img.width, img.height);
    for s in detect_segments(img, opts) {
        let n = s.length().floor().max(1.0) as usize;
        for k in 0..=n {
            let t = k as f64 / n as f64;
            let p = ImagePoint::new(s.a.x + (s.b.x - s.a.x) * t, s.a.y + (s.b.y - s.a.y) * t);
            set.push(p, s.orientation);
        }
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn step_image() -> GrayImage {
        GrayImage::from_fn(100, 80, |x, _| if x >= 50 { 200.0 } else { 20.0 })
    }

    #[test]
    fn constant_image_has_no_edgels() {
        let img = GrayImage::filled(64, 48, 90.0);
        assert!(detect_edgelets(&img, &EdgeDetectorOptions::default()).is_empty());
        let g = gradient_direction_image(&img);
        assert!(g.magnitude.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn vertical_step_edge() {
        let set = detect_edgelets(&step_image(), &EdgeDetectorOptions::default());
        assert!(set.len() > 50);
        for e in &set.edgels {
            assert!((e.orientation - PI / 2.0).abs() < 0.05, "{e:?}");
            assert!((e.pos.x - 49.5).abs() < 1.5, "{e:?}");
        }
        let g = gradient_direction_image(&step_image());
        assert!(g.theta[40 * 100 + 50].abs() < 1e-6);
        assert!(g.magnitude[40 * 100 + 50] > 0.0);
    }

    #[test]
    fn bright_square_gives_two_orientation_clusters() {
        let img = GrayImage::from_fn(120, 120, |x, y| {
            if (30..90).contains(&x) && (30..90).contains(&y) { 220.0 } else { 30.0 }
        });
        let set = detect_edgelets(&img, &EdgeDetectorOptions::default());
        let (mut h, mut v) = (0, 0);
        for e in &set.edgels {
            let o = e.orientation;
            if o < 0.05 || o > PI - 0.05 {
                h += 1;
            } else if (o - PI / 2.0).abs() < 0.05 {
                v += 1;
            } else {
                panic!("unexpected orientation {o}");
            }
        }
        assert!(h > 100 && v > 100, "{h} {v}");
    }

    #[test]
    fn edgels_stay_near_their_segment() {
        let img = GrayImage::from_fn(90, 70, |x, y| {
            let v = (x as f64 - 45.0) * 0.8 + (y as f64 - 35.0) * 0.5;
            if v > 0.0 { 180.0 } else { 40.0 }
        });
        let opts = EdgeDetectorOptions::default();
        let segs = detect_segments(&img, &opts);
        assert!(!segs.is_empty());
        let set = detect_edgelets(&img, &opts);
        for e in &set.edgels {
            let ok = segs.iter().any(|s| {
                let (lx, hx) = (s.a.x.min(s.b.x) - 1.0, s.a.x.max(s.b.x) + 1.0);
                let (ly, hy) = (s.a.y.min(s.b.y) - 1.0, s.a.y.max(s.b.y) + 1.0);
                (lx..=hx).contains(&e.pos.x) && (ly..=hy).contains(&e.pos.y) && (s.orientation - e.orientation).abs() < 1e-12
            });
            assert!(ok);
        }
        assert_eq!(set, detect_edgelets(&img, &opts));
    }

    #[test]
    fn gradient_direction_rotates_with_image() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (w, h) = (40, 30);
        let img = GrayImage::from_fn(w, h, |_, _| rng.random_range(0.0..255.0f32));
        // Rotate 90° counter-clockwise on screen: (x, y) -> (y, w-1-x).
        let rot = GrayImage::from_fn(h, w, |x, y| img.get(w - 1 - y, x));
        let a = gradient_direction_image(&img);
        let b = gradient_direction_image(&rot);
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let i = y * w + x;
                if a.magnitude[i] < 1e-3 {
                    continue;
                }
                let j = (w - 1 - x) * h + y;
                let expected = wrap_pi(a.theta[i] as f64 - PI / 2.0);
                let d = (b.theta[j] as f64 - expected).rem_euclid(PI);
                assert!(d.min(PI - d) < 1e-4, "{x},{y}");
                assert!((a.magnitude[i] - b.magnitude[j]).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn csv_round_trip() {
        let mut set = EdgelSet::new(10, 10);
        set.push(ImagePoint::new(1.5, 2.25), 0.5);
        set.push(ImagePoint::new(9.0, 0.0), 3.0);
        assert!(!set.push(ImagePoint::new(10.5, 0.0), 3.0));
        let mut buf = Vec::new();
        set.write_csv(&mut buf).unwrap();
        assert_eq!(EdgelSet::read_csv(&buf[..], 10, 10).unwrap(), set);
    }
}
