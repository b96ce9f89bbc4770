//! Deterministic image preprocessing: optional centered zero padding or
//! bilinear resize, optional grayscale conversion, scaling to [0, 1], and
//! per-dataset standardization.

use serde::{Deserialize, Serialize};

use crate::data::ImageSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Geometry {
    #[default]
    Keep,
    /// Centered zero padding to `(height, width)`.
    Pad(usize, usize),
    /// Bilinear resize to `(height, width)` (half-pixel centers).
    Resize(usize, usize),
}

/// Scalar standardization constants of one dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: f32,
    pub std: f32,
}

impl NormStats {
    pub const IDENTITY: NormStats = NormStats { mean: 0.0, std: 1.0 };

    /// Population mean and standard deviation of all values.
    pub fn fit(values: &[f32]) -> NormStats {
        if values.is_empty() {
            return NormStats::IDENTITY;
        }
        let n = values.len() as f64;
        let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        NormStats {
            mean: mean as f32,
            std: std as f32,
        }
    }

    #[inline]
    pub fn apply(&self, v: f32) -> f32 {
        (v - self.mean) / self.std
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct PreprocessPolicy {
    pub geometry: Geometry,
    /// Luminosity grayscale (0.299, 0.587, 0.114) for 3-channel inputs.
    pub grayscale: bool,
    /// Standardization constants; fitted on the set itself when absent.
    pub stats: Option<NormStats>,
}

impl PreprocessPolicy {
    /// 28x28 digits padded to 32x32.
    pub fn pad32() -> Self {
        PreprocessPolicy {
            geometry: Geometry::Pad(32, 32),
            grayscale: false,
            stats: None,
        }
    }

    /// Grayscale 28x28 for mixing datasets of different formats.
    pub fn gray28() -> Self {
        PreprocessPolicy {
            geometry: Geometry::Resize(28, 28),
            grayscale: true,
            stats: None,
        }
    }

    pub fn with_stats(mut self, stats: NormStats) -> Self {
        self.stats = Some(stats);
        self
    }
}

/// Model-ready images. Pixels are kept in their pre-standardization [0, 1]
/// form; standardization is applied when rows are read out.
#[derive(Debug, Clone)]
pub struct Processed {
    pub name: String,
    pub dim: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<f32>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub stats: NormStats,
}

impl Processed {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Pre-standardization pixels of sample `i`.
    pub fn raw(&self, i: usize) -> &[f32] {
        &self.pixels[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes the standardized sample `i` into `out`, gathering through
    /// `perm` (`out[j] = x[perm[j]]`) when given.
    pub fn write_row(&self, i: usize, perm: Option<&[usize]>, out: &mut [f32]) {
        write_standardized(self.raw(i), self.stats, perm, out);
    }

    /// All samples standardized, `(len, dim)` row-major.
    pub fn standardized(&self) -> Vec<f32> {
        self.pixels.iter().map(|&v| self.stats.apply(v)).collect()
    }
}

pub fn write_standardized(raw: &[f32], stats: NormStats, perm: Option<&[usize]>, out: &mut [f32]) {
    match perm {
        Some(p) => {
            for (o, &src) in out.iter_mut().zip(p) {
                *o = stats.apply(raw[src]);
            }
        }
        None => {
            for (o, &v) in out.iter_mut().zip(raw) {
                *o = stats.apply(v);
            }
        }
    }
}

fn to_gray(set: &ImageSet, i: usize) -> Vec<f32> {
    let img = set.image(i);
    if set.channels() == 1 {
        return img.iter().map(|&v| v as f32).collect();
    }
    img.chunks_exact(set.channels())
        .map(|px| 0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32)
        .collect()
}

fn pad(src: &[f32], h: usize, w: usize, c: usize, th: usize, tw: usize) -> Vec<f32> {
    let (top, left) = ((th - h) / 2, (tw - w) / 2);
    let mut out = vec![0.0; th * tw * c];
    for y in 0..h {
        let dst = ((y + top) * tw + left) * c;
        out[dst..dst + w * c].copy_from_slice(&src[y * w * c..(y + 1) * w * c]);
    }
    out
}

fn resize_bilinear(src: &[f32], h: usize, w: usize, c: usize, th: usize, tw: usize) -> Vec<f32> {
    if h == th && w == tw {
        return src.to_vec();
    }
    let (sy, sx) = (h as f32 / th as f32, w as f32 / tw as f32);
    let mut out = vec![0.0; th * tw * c];
    for y in 0..th {
        let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for x in 0..tw {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let at = |yy: usize, xx: usize| src[(yy * w + xx) * c + ch];
                let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
                let bot = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
                out[(y * tw + x) * c + ch] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    out
}

/// Applies `policy` to every image. Output rows are flattened
/// channel-major, which for single-channel images is plain row-major.
pub fn preprocess(set: &ImageSet, policy: &PreprocessPolicy) -> Result<Processed> {
    let (h, w) = (set.height(), set.width());
    let channels = if policy.grayscale { 1 } else { set.channels() };
    if policy.grayscale && !(set.channels() == 1 || set.channels() == 3) {
        return Err(Error::Config(format!("cannot grayscale {} channels", set.channels())));
    }
    let (th, tw) = match policy.geometry {
        Geometry::Keep => (h, w),
        Geometry::Pad(th, tw) => {
            if th < h || tw < w {
                return Err(Error::shape("pad target", &[h, w], &[th, tw]));
            }
            (th, tw)
        }
        Geometry::Resize(th, tw) => {
            if th == 0 || tw == 0 {
                return Err(Error::shape("resize target", &[1, 1], &[th, tw]));
            }
            (th, tw)
        }
    };
    let dim = th * tw * channels;
    let mut pixels = Vec::with_capacity(set.len() * dim);
    for i in 0..set.len() {
        let src: Vec<f32> = if policy.grayscale {
            to_gray(set, i)
        } else {
            set.image(i).iter().map(|&v| v as f32).collect()
        };
        let geo = match policy.geometry {
            Geometry::Keep => src,
            Geometry::Pad(..) => pad(&src, h, w, channels, th, tw),
            Geometry::Resize(..) => resize_bilinear(&src, h, w, channels, th, tw),
        };
        // HWC -> CHW
        if channels == 1 {
            pixels.extend(geo.iter().map(|&v| v / 255.0));
        } else {
            for ch in 0..channels {
                pixels.extend((0..th * tw).map(|p| geo[p * channels + ch] / 255.0));
            }
        }
    }
    let stats = policy.stats.unwrap_or_else(|| NormStats::fit(&pixels));
    Ok(Processed {
        name: set.name().to_string(),
        dim,
        height: th,
        width: tw,
        channels,
        pixels,
        labels: set.labels().to_vec(),
        class_count: set.class_count(),
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn digit() -> ImageSet {
        let pixels: Vec<u8> = (0..28 * 28).map(|i| (i % 251) as u8 + 1).collect();
        ImageSet::new("d".into(), pixels, 28, 28, 1, vec![3], 10).unwrap()
    }

    #[test]
    fn pad_adds_two_pixel_border() {
        let p = preprocess(&digit(), &PreprocessPolicy::pad32().with_stats(NormStats::IDENTITY)).unwrap();
        assert_eq!(p.dim, 1024);
        let img = p.raw(0);
        for y in 0..32 {
            for x in 0..32 {
                let inside = (2..30).contains(&y) && (2..30).contains(&x);
                assert_eq!(img[y * 32 + x] != 0.0, inside, "({y},{x})");
            }
        }
        assert_eq!(img[2 * 32 + 2], 1.0 / 255.0);
    }

    #[test]
    fn zero_image_standardizes_to_constant() {
        let set = ImageSet::new("z".into(), vec![0; 28 * 28], 28, 28, 1, vec![0], 1).unwrap();
        let stats = NormStats { mean: 0.13, std: 0.31 };
        let p = preprocess(&set, &PreprocessPolicy::pad32().with_stats(stats)).unwrap();
        let mut row = vec![0.0; 1024];
        p.write_row(0, None, &mut row);
        assert!(row.iter().all(|&v| v == -0.13f32 / 0.31));
    }

    #[test]
    fn fitted_stats_standardize_the_set() {
        let pixels: Vec<u8> = (0..5 * 16).map(|i| ((i * 37) % 256) as u8).collect();
        let set = ImageSet::new("s".into(), pixels, 4, 4, 1, vec![0; 5], 1).unwrap();
        let p = preprocess(&set, &PreprocessPolicy::default()).unwrap();
        let z = p.standardized();
        let mean = z.iter().map(|&v| v as f64).sum::<f64>() / z.len() as f64;
        let var = z.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / z.len() as f64;
        assert!(mean.abs() < 1e-5 && (var.sqrt() - 1.0).abs() < 1e-5);
    }

    #[test]
    fn resize_and_grayscale_color_image() {
        let pixels: Vec<u8> = (0..32 * 32).flat_map(|_| [255u8, 0, 0]).collect();
        let set = ImageSet::new("c".into(), pixels, 32, 32, 3, vec![7], 100).unwrap();
        let p = preprocess(&set, &PreprocessPolicy::gray28().with_stats(NormStats::IDENTITY)).unwrap();
        assert_eq!((p.dim, p.channels), (784, 1));
        assert!(p.raw(0).iter().all(|&v| (v - 0.299).abs() < 1e-5));
    }

    #[test]
    fn resize_same_size_is_identity() {
        let src: Vec<f32> = (0..12).map(|v| v as f32).collect();
        assert_eq!(resize_bilinear(&src, 3, 4, 1, 3, 4), src);
        let up = resize_bilinear(&[0.0, 1.0], 1, 2, 1, 1, 4);
        assert_eq!(up, vec![0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn repeated_preprocessing_is_bitwise_identical() {
        let a = preprocess(&digit(), &PreprocessPolicy::pad32()).unwrap();
        let b = preprocess(&digit(), &PreprocessPolicy::pad32()).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.stats, b.stats);
    }
}
