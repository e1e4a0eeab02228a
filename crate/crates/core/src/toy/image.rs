//! Small RGB images, label masks, the synthetic tissue fixture and PNM I/O.

use std::io::Cursor;

use image::{GrayImage, ImageFormat, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ToyError;

/// Interleaved 8-bit image with one or three channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageGrid {
    pub fn from_raw(
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<u8>,
    ) -> Result<Self, ToyError> {
        if channels != 1 && channels != 3 {
            return Err(ToyError::Image(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(ToyError::Image(format!(
                "{} samples for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(ImageGrid {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        ImageGrid {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// RGB of pixel `i` in row-major order; gray images repeat the sample.
    pub fn rgb(&self, i: usize) -> [u8; 3] {
        if self.channels == 3 {
            [self.data[3 * i], self.data[3 * i + 1], self.data[3 * i + 2]]
        } else {
            [self.data[i]; 3]
        }
    }

    pub fn set_rgb(&mut self, i: usize, rgb: [u8; 3]) {
        if self.channels == 3 {
            self.data[3 * i..3 * i + 3].copy_from_slice(&rgb);
        } else {
            self.data[i] = luma(rgb);
        }
    }

    pub fn gray(&self, i: usize) -> u8 {
        luma(self.rgb(i))
    }

    /// Converts to three channels.
    pub fn to_rgb(&self) -> ImageGrid {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageGrid {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Binary PPM (or PGM for one channel).
    pub fn to_pnm(&self) -> Result<Vec<u8>, ToyError> {
        let mut out = Cursor::new(Vec::new());
        let (w, h) = (self.width as u32, self.height as u32);
        if self.channels == 3 {
            RgbImage::from_raw(w, h, self.data.clone())
                .expect("length checked at construction")
                .write_to(&mut out, ImageFormat::Pnm)?;
        } else {
            GrayImage::from_raw(w, h, self.data.clone())
                .expect("length checked at construction")
                .write_to(&mut out, ImageFormat::Pnm)?;
        }
        Ok(out.into_inner())
    }

    /// Reads any PNM variant (P1-P6) and keeps one or three channels.
    pub fn from_pnm(bytes: &[u8]) -> Result<Self, ToyError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Pnm)?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        if img.color().channel_count() == 1 {
            ImageGrid::from_raw(w, h, 1, img.into_luma8().into_raw())
        } else {
            ImageGrid::from_raw(w, h, 3, img.into_rgb8().into_raw())
        }
    }
}

/// Integer luma, ITU-R 601 weights.
pub fn luma([r, g, b]: [u8; 3]) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Per-pixel object labels, 0 for background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    labels: Vec<u32>,
}

impl LabelMask {
    pub fn empty(width: usize, height: usize) -> Self {
        LabelMask {
            width,
            height,
            labels: vec![0; width * height],
        }
    }

    pub fn from_labels(width: usize, height: usize, labels: Vec<u32>) -> Result<Self, ToyError> {
        if labels.len() != width * height {
            return Err(ToyError::Image(format!(
                "{} labels for a {width}x{height} mask",
                labels.len()
            )));
        }
        Ok(LabelMask {
            width,
            height,
            labels,
        })
    }

    /// Foreground pixels become label 1.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize) -> bool) -> Self {
        LabelMask {
            width,
            height,
            labels: (0..width * height).map(|i| f(i) as u32).collect(),
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u32] {
        &mut self.labels
    }

    pub fn is_fg(&self, i: usize) -> bool {
        self.labels[i] != 0
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }

    /// Number of distinct nonzero labels.
    pub fn object_count(&self) -> usize {
        let mut seen: Vec<u32> = self.labels.iter().copied().filter(|&l| l != 0).collect();
        seen.sort_unstable();
        seen.dedup();
        seen.len()
    }

    pub fn same_shape(&self, other: &LabelMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Binarized foreground as a PGM (255 = object).
    pub fn to_pgm(&self) -> Result<Vec<u8>, ToyError> {
        let data = self
            .labels
            .iter()
            .map(|&l| if l != 0 { 255 } else { 0 })
            .collect();
        ImageGrid::from_raw(self.width, self.height, 1, data)?.to_pnm()
    }
}

const NUCLEUS: [f64; 3] = [90.0, 40.0, 130.0];
const RED_CELL: [f64; 3] = [220.0, 20.0, 25.0];

/// Deterministic tissue-like fixture: a light horizontal gradient with noise
/// and `blobs` elliptical objects. About a quarter are red blood cells; the
/// rest are purple nuclei, a third of them with a lighter (vesicular) core.
/// Objects fade into the background over the outer third of their radius.
pub fn synth_image(
    seed: u64,
    width: usize,
    height: usize,
    blobs: usize,
) -> Result<ImageGrid, ToyError> {
    if width < 16 || height < 16 {
        return Err(ToyError::Image(format!(
            "fixture must be at least 16x16, got {width}x{height}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = ImageGrid::filled(width, height, [0, 0, 0]);
    for y in 0..height {
        for x in 0..width {
            let base = 230.0 + 18.0 * x as f64 / (width - 1) as f64;
            let noise: i32 = rng.gen_range(-2..=2);
            let v = (base.round() as i32 + noise).clamp(0, 255) as u8;
            img.set_rgb(y * width + x, [v, v.saturating_sub(2), v]);
        }
    }
    for _ in 0..blobs {
        let cx = rng.gen_range(0.0..width as f64);
        let cy = rng.gen_range(0.0..height as f64);
        let rx: f64 = rng.gen_range(4.0..=9.0);
        let ry: f64 = rng.gen_range(4.0..=9.0);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let red = rng.gen_bool(0.25);
        let vesicular = !red && rng.gen_bool(1.0 / 3.0);
        let (color, strength) = if red {
            (RED_CELL, rng.gen_range(0.9..=1.0))
        } else {
            (NUCLEUS, rng.gen_range(0.3..=0.9))
        };
        let (sin, cos) = angle.sin_cos();
        let reach = rx.max(ry).ceil() as i64 + 1;
        for y in (cy as i64 - reach).max(0)..(cy as i64 + reach + 1).min(height as i64) {
            for x in (cx as i64 - reach).max(0)..(cx as i64 + reach + 1).min(width as i64) {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let u = (dx * cos + dy * sin) / rx;
                let v = (-dx * sin + dy * cos) / ry;
                let d = (u * u + v * v).sqrt();
                if d > 1.0 {
                    continue;
                }
                let edge = ((1.0 - d) * 3.0).min(1.0);
                let s = edge
                    * if vesicular && d < 0.5 {
                        strength * 0.6
                    } else {
                        strength
                    };
                let i = y as usize * width + x as usize;
                let old = img.rgb(i);
                let mut px = [0u8; 3];
                for c in 0..3 {
                    px[c] = (old[c] as f64 * (1.0 - s) + color[c] * s)
                        .round()
                        .clamp(0.0, 255.0) as u8;
                }
                img.set_rgb(i, px);
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_is_deterministic() {
        let a = synth_image(7, 64, 48, 5).unwrap();
        let b = synth_image(7, 64, 48, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_image(8, 64, 48, 5).unwrap());
        assert!(synth_image(7, 15, 64, 1).is_err());
    }

    #[test]
    fn no_blobs_is_plain_background() {
        let img = synth_image(3, 32, 32, 0).unwrap();
        for i in 0..32 * 32 {
            let [r, g, b] = img.rgb(i);
            assert!((228..=250).contains(&r) && (226..=248).contains(&g) && r == b);
        }
    }

    #[test]
    fn pnm_round_trip() {
        let img = synth_image(1, 20, 17, 2).unwrap();
        assert_eq!(ImageGrid::from_pnm(&img.to_pnm().unwrap()).unwrap(), img);
        let mask = LabelMask::from_fn(20, 17, |i| i % 3 == 0);
        let back = ImageGrid::from_pnm(&mask.to_pgm().unwrap()).unwrap();
        assert_eq!(back.channels(), 1);
        assert_eq!(
            back.data().iter().filter(|&&v| v == 255).count(),
            mask.foreground_count()
        );
    }

    #[test]
    fn ascii_pnm_is_accepted() {
        let text = b"P3\n2 1\n255\n1 2 3 250 251 252\n";
        let img = ImageGrid::from_pnm(text).unwrap();
        assert_eq!(img.rgb(1), [250, 251, 252]);
    }
}
