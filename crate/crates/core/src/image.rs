//! Grayscale images and Gaussian pyramids.

use std::path::Path;

use crate::error::{invalid, Result};

/// Row-major single-channel image with float intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(invalid(format!(
                "image data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, v: f32) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(width, height, bytes.iter().map(|&b| b as f32).collect())
    }

    /// Loads an 8-bit grayscale image (PGM or PNG; color inputs are converted).
    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path)?.into_luma8();
        let (w, h) = img.dimensions();
        Self::from_u8(w as usize, h as usize, img.as_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.data.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .expect("buffer size matches")
            .save(path)?;
        Ok(())
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Pixel access with replicated borders.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// 5-tap binomial blur followed by 2x decimation.
    pub fn pyr_down(&self) -> Self {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for (k, c) in K.iter().enumerate() {
                    s += c * self.get_clamped(x as isize + k as isize - 2, y as isize);
                }
                tmp[y * w + x] = s;
            }
        }
        let tmp = GrayImage { width: w, height: h, data: tmp };
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        GrayImage::from_fn(nw, nh, |x, y| {
            K.iter()
                .enumerate()
                .map(|(k, c)| c * tmp.get_clamped(2 * x as isize, 2 * y as isize + k as isize - 2))
                .sum()
        })
    }

    /// Levels `0..levels`, level 0 being the image itself.
    pub fn pyramid(&self, levels: usize) -> Vec<Self> {
        let mut out = vec![self.clone()];
        while out.len() < levels {
            let next = out.last().unwrap().pyr_down();
            if next.width < 4 || next.height < 4 {
                break;
            }
            out.push(next);
        }
        out
    }
}
