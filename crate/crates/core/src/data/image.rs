use std::collections::BTreeSet;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use crate::error::{invalid, Error, Result};

/// Label reserved for unlabeled pixels.
pub const VOID: u8 = 255;

/// Row-major integer label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticImage {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl SemanticImage {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 || labels.len() != width * height {
            return Err(invalid(format!(
                "{} labels for a {width}×{height} image",
                labels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: u8) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u8] {
        &mut self.labels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn non_void_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != VOID).count()
    }

    /// Distinct labels, void included if present.
    pub fn alphabet(&self) -> BTreeSet<u8> {
        self.labels.iter().copied().collect()
    }

    /// Per-class pixel counts (void excluded), indexed by class.
    pub fn census(&self, num_classes: usize) -> Vec<usize> {
        let mut counts = vec![0; num_classes];
        for &l in &self.labels {
            if (l as usize) < num_classes {
                counts[l as usize] += 1;
            }
        }
        counts
    }

    /// Every label is a class below `num_classes` or void.
    pub fn check_alphabet(&self, num_classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .find(|&&l| l != VOID && l as usize >= num_classes)
        {
            Some(l) => Err(invalid(format!(
                "label {l} outside 0..{num_classes} and not void"
            ))),
            None => Ok(()),
        }
    }

    /// Integer nearest-neighbour resampling. Never blends labels.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let sy = ((2 * y + 1) * self.height) / (2 * height);
            for x in 0..width {
                let sx = ((2 * x + 1) * self.width) / (2 * width);
                out.push(self.get(sx, sy));
            }
        }
        Self {
            width,
            height,
            labels: out,
        }
    }

    /// Reads an 8-bit grayscale PNG; pixel value is the label.
    pub fn load_png(path: &Path) -> Result<Self> {
        let load_err = |detail: String| Error::Load {
            path: path.to_path_buf(),
            detail,
        };
        let reader = image::ImageReader::open(path)
            .map_err(|e| load_err(e.to_string()))?
            .with_guessed_format()
            .map_err(|e| load_err(e.to_string()))?;
        match reader.decode().map_err(|e| load_err(e.to_string()))? {
            DynamicImage::ImageLuma8(img) => {
                let (w, h) = img.dimensions();
                Ok(Self {
                    width: w as usize,
                    height: h as usize,
                    labels: img.into_raw(),
                })
            }
            other => Err(load_err(format!(
                "label maps must be 8-bit grayscale, found {:?}",
                other.color()
            ))),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = GrayImage::from_raw(self.width as u32, self.height as u32, self.labels.clone())
            .expect("buffer matches dimensions");
        img.save_with_format(path, ImageFormat::Png)?;
        Ok(())
    }

    /// RGB preview; void and classes without a palette entry render black.
    pub fn colorize(&self, palette: &[[u8; 3]]) -> RgbImage {
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (px, &l) in img.pixels_mut().zip(&self.labels) {
            let c = palette.get(l as usize).copied().filter(|_| l != VOID);
            px.0 = c.unwrap_or([0, 0, 0]);
        }
        img
    }
}

/// Deterministic distinct colors for classes without a declared palette.
pub fn default_palette(num_classes: usize) -> Vec<[u8; 3]> {
    (0..num_classes)
        .map(|i| {
            let h = (i as f64 * 0.618_033_988_75).fract();
            hsv_to_rgb(h, 0.65, if i % 2 == 0 { 0.95 } else { 0.7 })
        })
        .collect()
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    let (r, g, b) = match i as i64 % 6 {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]
}
