//! Per-keypoint probability maps.
//!
//! A [`KeypointMapStack`] holds one single-channel grid per keypoint type.
//! Continuous map coordinates put the center of cell `(i, j)` at
//! `(i + 0.5, j + 0.5)`, matching [`crate::geometry::Camera::project`].

mod kpm;
mod occlusion;

use std::collections::VecDeque;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kpm::{read_kpm, read_kpm_header, write_kpm, KpmHeader, KPM_MAGIC};
pub use occlusion::{occlude, occlude_objects, per_type_locations, ObjectKeypoints};

/// Lobes are truncated beyond this many standard deviations.
pub const LOBE_TRUNCATION: f64 = 4.0;

/// Default lobe width for a map of the given width.
pub fn default_sigma(map_width: u32) -> f64 {
    map_width as f64 / 64.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct KeypointMapStack {
    width: usize,
    height: usize,
    sigma: f32,
    /// Channel-major, row-major values.
    data: Vec<f32>,
}

impl KeypointMapStack {
    pub fn zeros(channels: usize, width: usize, height: usize, sigma: f64) -> Self {
        Self {
            width,
            height,
            sigma: sigma as f32,
            data: vec![0.0; channels * width * height],
        }
    }

    pub fn from_raw(
        channels: usize,
        width: usize,
        height: usize,
        sigma: f32,
        data: Vec<f32>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || channels == 0 {
            return Err(Error::InvalidInput(
                "map dimensions must be positive".into(),
            ));
        }
        if data.len() != channels * width * height {
            return Err(Error::InvalidInput(format!(
                "expected {} map values, got {}",
                channels * width * height,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidInput(format!(
                "map value {bad} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            sigma,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.data.len() / (self.width * self.height)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn sigma(&self) -> f64 {
        self.sigma as f64
    }

    pub fn sigma_f32(&self) -> f32 {
        self.sigma
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.width * self.height;
        &self.data[c * n..(c + 1) * n]
    }

    fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.width * self.height;
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    fn get_padded(&self, c: usize, x: i64, y: i64) -> f64 {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            0.0
        } else {
            self.get(c, x as usize, y as usize) as f64
        }
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// Bilinear sample of channel `c` at a continuous position. Cells beyond
    /// the grid read as zero, so positions off the grid sample to 0.
    pub fn sample(&self, c: usize, pos: &Vector2<f64>) -> f64 {
        self.sample_with_gradient(c, pos).0
    }

    /// Bilinear sample and its gradient with respect to position.
    pub fn sample_with_gradient(&self, c: usize, pos: &Vector2<f64>) -> (f64, Vector2<f64>) {
        let fx = pos.x - 0.5;
        let fy = pos.y - 0.5;
        if !(fx > -1.0 && fy > -1.0 && fx < self.width as f64 && fy < self.height as f64) {
            return (0.0, Vector2::zeros());
        }
        let x0 = fx.floor();
        let y0 = fy.floor();
        let (tx, ty) = (fx - x0, fy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let v00 = self.get_padded(c, x0, y0);
        let v10 = self.get_padded(c, x0 + 1, y0);
        let v01 = self.get_padded(c, x0, y0 + 1);
        let v11 = self.get_padded(c, x0 + 1, y0 + 1);
        let top = v00 + (v10 - v00) * tx;
        let bottom = v01 + (v11 - v01) * tx;
        let value = top + (bottom - top) * ty;
        let gx = (1.0 - ty) * (v10 - v00) + ty * (v11 - v01);
        let gy = bottom - top;
        (value, Vector2::new(gx, gy))
    }
}

/// One detected keypoint: cell-center position and map value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub position: Vector2<f64>,
    pub value: f64,
}

/// Detected keypoints per type.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KeypointLocations {
    pub per_type: Vec<Vec<Peak>>,
}

impl KeypointLocations {
    pub fn total(&self) -> usize {
        self.per_type.iter().map(Vec::len).sum()
    }
}

/// Renders one channel per type as the per-cell maximum of Gaussian lobes
/// centered at the given locations.
pub fn render_maps(
    locations: &[Vec<Vector2<f64>>],
    sigma: f64,
    width: usize,
    height: usize,
) -> KeypointMapStack {
    assert!(sigma > 0.0, "lobe sigma must be positive");
    let mut stack = KeypointMapStack::zeros(locations.len(), width, height, sigma);
    for (c, locs) in locations.iter().enumerate() {
        let channel = stack.channel_mut(c);
        for p in locs {
            splat_lobe(channel, width, height, p, sigma);
        }
    }
    stack
}

/// Cell range covered by a truncated lobe, clipped to the grid.
pub(crate) fn lobe_window(
    center: &Vector2<f64>,
    sigma: f64,
    width: usize,
    height: usize,
) -> Option<(usize, usize, usize, usize)> {
    let r = LOBE_TRUNCATION * sigma;
    let x_lo = ((center.x - r - 0.5).ceil().max(0.0)) as i64;
    let y_lo = ((center.y - r - 0.5).ceil().max(0.0)) as i64;
    let x_hi = ((center.x + r - 0.5).floor()).min(width as f64 - 1.0) as i64;
    let y_hi = ((center.y + r - 0.5).floor()).min(height as f64 - 1.0) as i64;
    if !center.x.is_finite() || !center.y.is_finite() || x_lo > x_hi || y_lo > y_hi {
        return None;
    }
    Some((x_lo as usize, x_hi as usize, y_lo as usize, y_hi as usize))
}

/// Lobe value at a cell, zero beyond the truncation radius.
#[inline]
pub(crate) fn lobe_value(center: &Vector2<f64>, sigma: f64, x: usize, y: usize) -> f64 {
    let dx = x as f64 + 0.5 - center.x;
    let dy = y as f64 + 0.5 - center.y;
    let d2 = dx * dx + dy * dy;
    let r = LOBE_TRUNCATION * sigma;
    if d2 > r * r {
        0.0
    } else {
        (-d2 / (2.0 * sigma * sigma)).exp()
    }
}

fn splat_lobe(channel: &mut [f32], width: usize, height: usize, p: &Vector2<f64>, sigma: f64) {
    let Some((x_lo, x_hi, y_lo, y_hi)) = lobe_window(p, sigma, width, height) else {
        return;
    };
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let v = lobe_value(p, sigma, x, y) as f32;
            let cell = &mut channel[y * width + x];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

/// Thresholded 8-neighbourhood local maxima per channel.
///
/// A cell is a peak when its value exceeds `tau_m` and is at least every
/// neighbour's. Plateaus of equal-valued maxima emit only their first cell
/// in row-major order. Results are cell centers sorted in row-major order.
pub fn extract_locations(maps: &KeypointMapStack, tau_m: f64) -> KeypointLocations {
    let (w, h) = (maps.width, maps.height);
    let mut per_type = Vec::with_capacity(maps.channels());
    let mut visited = vec![false; w * h];
    for c in 0..maps.channels() {
        let ch = maps.channel(c);
        visited.iter_mut().for_each(|v| *v = false);
        let mut peaks = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let v = ch[y * w + x];
                if !(v as f64 > tau_m) || visited[y * w + x] {
                    continue;
                }
                let mut has_equal = false;
                let mut is_max = true;
                for (nx, ny) in neighbours(x, y, w, h) {
                    let nv = ch[ny * w + nx];
                    if nv > v {
                        is_max = false;
                        break;
                    }
                    has_equal |= nv == v;
                }
                if !is_max {
                    continue;
                }
                if has_equal && !plateau_is_maximal(ch, w, h, x, y, &mut visited) {
                    continue;
                }
                peaks.push(Peak {
                    position: Vector2::new(x as f64 + 0.5, y as f64 + 0.5),
                    value: v as f64,
                });
            }
        }
        per_type.push(peaks);
    }
    KeypointLocations { per_type }
}

fn neighbours(x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = (usize, usize)> {
    (-1i64..=1)
        .flat_map(move |dy| (-1i64..=1).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| dx != 0 || dy != 0)
        .filter_map(move |(dx, dy)| {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            (nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64)
                .then_some((nx as usize, ny as usize))
        })
}

/// Floods the plateau containing `(x, y)` and marks it visited. Returns true
/// when no neighbour of the plateau is larger. The caller reaches the
/// plateau through its first cell in row-major order.
fn plateau_is_maximal(
    ch: &[f32],
    w: usize,
    h: usize,
    x: usize,
    y: usize,
    visited: &mut [bool],
) -> bool {
    let v = ch[y * w + x];
    let mut queue = VecDeque::from([(x, y)]);
    visited[y * w + x] = true;
    let mut maximal = true;
    while let Some((cx, cy)) = queue.pop_front() {
        for (nx, ny) in neighbours(cx, cy, w, h) {
            let nv = ch[ny * w + nx];
            if nv > v {
                maximal = false;
            } else if nv == v && !visited[ny * w + nx] {
                visited[ny * w + nx] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    maximal
}
