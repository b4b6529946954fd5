use std::path::Path;

use image::imageops::FilterType;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cancel::{CancelToken, Cancelled};
use crate::doc::FrameRef;

/// Edge length of the thumbnails images are compared at.
pub const THUMBNAIL_SIZE: u32 = 32;

/// Default upper bound on the number of representatives returned.
pub const DEFAULT_THUMBNAIL_CAP: usize = 300;

const C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
const C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SsimError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("k must be at least 1")]
    ZeroK,
    #[error(transparent)]
    Cancelled(#[from] Cancelled),
}

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{}: {source}", path.display())]
    Decode {
        path: std::path::PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("pixel buffer of {len} values does not match {width}x{height}")]
    Shape { width: u32, height: u32, len: usize },
}

/// Row-major luminance image with values in `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: u32,
    height: u32,
    pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: u32, height: u32, pixels: Vec<f32>) -> Result<Self, ImageError> {
        if pixels.len() != width as usize * height as usize {
            return Err(ImageError::Shape {
                width,
                height,
                len: pixels.len(),
            });
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f32) -> Self {
        let pixels = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y).clamp(0.0, 255.0))
            .collect();
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    fn to_luma8(&self) -> image::GrayImage {
        let raw = self.pixels.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
        image::GrayImage::from_raw(self.width, self.height, raw).expect("shape checked")
    }

    fn from_luma8(img: &image::GrayImage) -> Self {
        GrayImage {
            width: img.width(),
            height: img.height(),
            pixels: img.as_raw().iter().map(|&v| f32::from(v)).collect(),
        }
    }

    /// Resized copy at `THUMBNAIL_SIZE` square; a no-op when already that
    /// size.
    pub fn thumbnail(&self) -> GrayImage {
        if self.width == THUMBNAIL_SIZE && self.height == THUMBNAIL_SIZE {
            return self.clone();
        }
        let small = image::imageops::resize(
            &self.to_luma8(),
            THUMBNAIL_SIZE,
            THUMBNAIL_SIZE,
            FilterType::Triangle,
        );
        Self::from_luma8(&small)
    }

    /// Decodes any image file and converts it to 8-bit luminance.
    pub fn open(path: &Path) -> Result<Self, ImageError> {
        let img = image::open(path).map_err(|source| ImageError::Decode {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_luma8(&img.to_luma8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<(), ImageError> {
        self.to_luma8()
            .save_with_format(path, image::ImageFormat::Png)
            .map_err(|source| ImageError::Decode {
                path: path.to_path_buf(),
                source,
            })
    }
}

/// Mean and centered pixels, reused across comparisons.
struct Moments {
    mean: f64,
    var: f64,
    centered: Vec<f64>,
}

impl Moments {
    fn of(img: &GrayImage) -> Self {
        let n = img.pixels.len().max(1) as f64;
        let mean = img.pixels.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        let centered: Vec<f64> = img.pixels.iter().map(|&v| f64::from(v) - mean).collect();
        let var = centered.iter().map(|d| d * d).sum::<f64>() / n;
        Moments {
            mean,
            var,
            centered,
        }
    }

    fn ssim(&self, other: &Moments) -> f64 {
        let n = self.centered.len().max(1) as f64;
        let cov = self
            .centered
            .iter()
            .zip(&other.centered)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n;
        let (ma, mb) = (self.mean, other.mean);
        ((2.0 * ma * mb + C1) * (2.0 * cov + C2))
            / ((ma * ma + mb * mb + C1) * (self.var + other.var + C2))
    }
}

/// Single-window SSIM over the whole image with population statistics.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, SsimError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(SsimError::DimensionMismatch(a.width, a.height, b.width, b.height));
    }
    Ok(Moments::of(a).ssim(&Moments::of(b)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representatives {
    pub selected: Vec<FrameRef>,
    /// Candidates dropped because they had no image.
    pub skipped_without_image: usize,
}

/// Greedy farthest-point selection under the distance `1 - ssim` on
/// thumbnails. Starts from the earliest frame, then repeatedly adds the
/// candidate whose minimum distance to the selection is largest, ties going
/// to the earlier frame. Returns at most `min(k, cap)` frames.
pub fn select_representatives(
    candidates: Vec<(FrameRef, Option<GrayImage>)>,
    k: usize,
    cap: usize,
    cancel: &CancelToken,
) -> Result<Representatives, SsimError> {
    if k == 0 {
        return Err(SsimError::ZeroK);
    }
    let mut with_images: Vec<(FrameRef, GrayImage)> = Vec::with_capacity(candidates.len());
    let mut skipped = 0;
    for (frame, img) in candidates {
        match img {
            Some(img) => with_images.push((frame, img)),
            None => skipped += 1,
        }
    }
    with_images.sort_by(|a, b| a.0.cmp(&b.0));
    with_images.dedup_by(|a, b| a.0 == b.0);

    let target = k.min(cap).min(with_images.len());
    let moments: Vec<Moments> = with_images
        .par_iter()
        .map(|(_, img)| Moments::of(&img.thumbnail()))
        .collect();

    let mut selected = Vec::with_capacity(target);
    let mut taken = vec![false; moments.len()];
    let mut min_dist = vec![f64::INFINITY; moments.len()];
    let mut next = 0usize;
    while selected.len() < target {
        cancel.check()?;
        taken[next] = true;
        selected.push(next);
        let pick = &moments[next];
        min_dist
            .par_iter_mut()
            .zip(&moments)
            .for_each(|(d, m)| *d = d.min(1.0 - pick.ssim(m)));
        // First index with the largest distance among untaken candidates.
        let mut best: Option<usize> = None;
        for i in 0..moments.len() {
            if !taken[i] && best.is_none_or(|b| min_dist[i] > min_dist[b]) {
                best = Some(i);
            }
        }
        match best {
            Some(b) => next = b,
            None => break,
        }
    }
    Ok(Representatives {
        selected: selected
            .into_iter()
            .map(|i| with_images[i].0.clone())
            .collect(),
        skipped_without_image: skipped,
    })
}
