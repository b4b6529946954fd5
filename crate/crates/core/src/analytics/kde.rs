use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cancel::{CancelToken, Cancelled};
use crate::geo::{local_project, project_unchecked, BBox, LatLon, EARTH_RADIUS_M, PROJECTION_WINDOW_DEG};

/// Kernel contributions beyond this many bandwidths are dropped; the lost
/// mass is below 2e-8 of each point.
const KERNEL_CUTOFF: f64 = 6.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KdeError {
    #[error("bandwidth must be positive, got {0}")]
    Bandwidth(f64),
    #[error("bounding box is degenerate or spans more than the projection window")]
    BBox,
    #[error("raster dimensions must be positive")]
    Dimensions,
    #[error(transparent)]
    Cancelled(#[from] Cancelled),
}

/// Gaussian density grid in points per square meter. Row 0 is the
/// northernmost row; columns run west to east.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRaster {
    pub bbox: BBox,
    pub width: usize,
    pub height: usize,
    pub bandwidth_m: f64,
    pub values: Vec<f64>,
}

impl DensityRaster {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    /// Center of the cell at `(row, col)`.
    pub fn cell_center(&self, row: usize, col: usize) -> LatLon {
        let dlat = (self.bbox.max_lat - self.bbox.min_lat) / self.height as f64;
        let dlon = (self.bbox.max_lon - self.bbox.min_lon) / self.width as f64;
        LatLon::new(
            self.bbox.max_lat - (row as f64 + 0.5) * dlat,
            self.bbox.min_lon + (col as f64 + 0.5) * dlon,
        )
    }

    /// Area of one cell in the local projection centered on the bbox.
    pub fn cell_area_m2(&self) -> f64 {
        let (w, h) = cell_size_m(&self.bbox, self.width, self.height);
        w * h
    }
}

fn cell_size_m(bbox: &BBox, width: usize, height: usize) -> (f64, f64) {
    let origin = bbox.center();
    let dlat = (bbox.max_lat - bbox.min_lat) / height as f64;
    let dlon = (bbox.max_lon - bbox.min_lon) / width as f64;
    let w = EARTH_RADIUS_M * dlon.to_radians() * origin.lat.to_radians().cos();
    let h = EARTH_RADIUS_M * dlat.to_radians();
    (w, h)
}

/// Sums a Gaussian kernel of bandwidth `bandwidth_m` over `points`,
/// evaluated at every cell center. Distances are planar in a local
/// projection centered on the bbox; points outside that projection's
/// window are ignored.
pub fn kde_raster(
    points: &[LatLon],
    bbox: BBox,
    width: usize,
    height: usize,
    bandwidth_m: f64,
    cancel: &CancelToken,
) -> Result<DensityRaster, KdeError> {
    if !(bandwidth_m.is_finite() && bandwidth_m > 0.0) {
        return Err(KdeError::Bandwidth(bandwidth_m));
    }
    if width == 0 || height == 0 {
        return Err(KdeError::Dimensions);
    }
    let half = PROJECTION_WINDOW_DEG;
    if !bbox.is_valid()
        || bbox.max_lat - bbox.min_lat >= 2.0 * half
        || bbox.max_lon - bbox.min_lon >= 2.0 * half
    {
        return Err(KdeError::BBox);
    }
    let origin = bbox.center();
    let (x_min, y_max) = project_unchecked(origin, LatLon::new(bbox.max_lat, bbox.min_lon));
    let (cell_w, cell_h) = cell_size_m(&bbox, width, height);
    let h2 = bandwidth_m * bandwidth_m;
    let norm = 1.0 / (2.0 * PI * h2);
    let reach = KERNEL_CUTOFF * bandwidth_m;

    let mut values = vec![0.0; width * height];
    for (i, p) in points.iter().enumerate() {
        if i % 1024 == 0 {
            cancel.check()?;
        }
        let Ok((px, py)) = local_project(origin, *p) else { continue };
        // Cell centers: x = x_min + (c + 0.5) w, y = y_max - (r + 0.5) h.
        let col_lo = ((px - reach - x_min) / cell_w - 0.5).floor().max(0.0) as usize;
        let col_hi = ((px + reach - x_min) / cell_w - 0.5).ceil().min(width as f64 - 1.0);
        let row_lo = ((y_max - py - reach) / cell_h - 0.5).floor().max(0.0) as usize;
        let row_hi = ((y_max - py + reach) / cell_h - 0.5).ceil().min(height as f64 - 1.0);
        if col_hi < 0.0 || row_hi < 0.0 {
            continue;
        }
        for row in row_lo..=row_hi as usize {
            let dy = y_max - (row as f64 + 0.5) * cell_h - py;
            for col in col_lo..=col_hi as usize {
                let dx = x_min + (col as f64 + 0.5) * cell_w - px;
                let d2 = dx * dx + dy * dy;
                values[row * width + col] += norm * (-d2 / (2.0 * h2)).exp();
            }
        }
    }
    Ok(DensityRaster {
        bbox,
        width,
        height,
        bandwidth_m,
        values,
    })
}
