//! Canny edge detection used to snap polygon vertices to image contours.

use std::collections::VecDeque;
use std::io::Cursor;

use image::{DynamicImage, GrayImage, ImageFormat, Luma};
use serde::{Deserialize, Serialize};

use super::MaskingError;
use crate::ingest::ImageId;

/// Grayscale raster with intensities in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f64>,
}

impl Raster {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Self {
        assert_eq!(pixels.len(), width * height, "raster size mismatch");
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn from_image(img: &DynamicImage) -> Self {
        let gray = img.to_luma8();
        let (w, h) = gray.dimensions();
        Self::new(
            w as usize,
            h as usize,
            gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect(),
        )
    }

    fn at_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeParams {
    /// Gaussian blur standard deviation in pixels; zero disables blurring.
    pub sigma: f64,
    /// Hysteresis thresholds relative to the strongest gradient.
    pub low: f64,
    pub high: f64,
}

impl Default for EdgeParams {
    fn default() -> Self {
        Self {
            sigma: 1.4,
            low: 0.1,
            high: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub image: Option<ImageId>,
    pub width: usize,
    pub height: usize,
    pub edges: Vec<bool>,
    pub params: EdgeParams,
}

impl EdgeMap {
    pub fn is_edge(&self, x: usize, y: usize) -> bool {
        self.edges[y * self.width + x]
    }

    pub fn edge_count(&self) -> usize {
        self.edges.iter().filter(|e| **e).count()
    }

    /// Encodes edges as an 8-bit PNG with values 0 and 255.
    pub fn to_png(&self) -> Vec<u8> {
        let img = GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            Luma([if self.is_edge(x as usize, y as usize) { 255 } else { 0 }])
        });
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .expect("png encoding to memory");
        out.into_inner()
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let x = i as f64 - radius as f64;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn blur(img: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let (w, h) = (img.width, img.height);
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * img.at_clamped(x as isize + i as isize - r, y as isize))
                .sum();
        }
    }
    let tmp = Raster::new(w, h, tmp);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp.at_clamped(x as isize, y as isize + i as isize - r))
                .sum();
        }
    }
    Raster::new(w, h, out)
}

/// Canny detector: Gaussian blur, Sobel gradients, non-maximum
/// suppression along the quantized gradient direction, then hysteresis
/// with thresholds taken relative to the maximum gradient magnitude.
pub fn compute_edge_map(img: &Raster, params: EdgeParams) -> Result<EdgeMap, MaskingError> {
    if img.width == 0 || img.height == 0 {
        return Err(MaskingError::EmptyImage);
    }
    if !(params.sigma >= 0.0) || !(0.0..=1.0).contains(&params.low) || !(0.0..=1.0).contains(&params.high) || !(params.low < params.high) {
        return Err(MaskingError::InvalidParameter(format!(
            "edge parameters need sigma >= 0 and 0 <= low < high <= 1, got {params:?}"
        )));
    }
    let (w, h) = (img.width, img.height);
    let smooth = blur(img, params.sigma);
    let mut mag = vec![0.0; w * h];
    let mut dir = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| smooth.at_clamped(x as isize + dx, y as isize + dy);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            let m = gx.hypot(gy);
            mag[y * w + x] = m;
            let mut angle = gy.atan2(gx).to_degrees();
            if angle < 0.0 {
                angle += 180.0;
            }
            dir[y * w + x] = if !(22.5..157.5).contains(&angle) {
                0
            } else if angle < 67.5 {
                1
            } else if angle < 112.5 {
                2
            } else {
                3
            };
        }
    }

    let max_mag = mag.iter().cloned().fold(0.0, f64::max);
    let mut edges = vec![false; w * h];
    if max_mag <= 1e-12 {
        return Ok(EdgeMap {
            image: None,
            width: w,
            height: h,
            edges,
            params,
        });
    }

    // non-maximum suppression; a plateau keeps the pixel on its negative side
    let mut thin = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let m = mag[y * w + x];
            if m <= 0.0 {
                continue;
            }
            let (dx, dy): (isize, isize) = match dir[y * w + x] {
                0 => (1, 0),
                1 => (1, 1),
                2 => (0, 1),
                _ => (-1, 1),
            };
            let sample = |sx: isize, sy: isize| {
                let nx = x as isize + sx;
                let ny = y as isize + sy;
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    0.0
                } else {
                    mag[ny as usize * w + nx as usize]
                }
            };
            let before = sample(-dx, -dy);
            let after = sample(dx, dy);
            if m > before && m >= after {
                thin[y * w + x] = m;
            }
        }
    }

    let high = params.high * max_mag;
    let low = params.low * max_mag;
    let mut queue = VecDeque::new();
    for i in 0..w * h {
        if thin[i] > 0.0 && thin[i] >= high {
            edges[i] = true;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edges[j] && thin[j] > 0.0 && thin[j] >= low {
                    edges[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(EdgeMap {
        image: None,
        width: w,
        height: h,
        edges,
        params,
    })
}

/// Nearest edge pixel within `radius` of `(u, v)`; ties resolve to the
/// first pixel in scanline order. Returns the input when nothing is close.
pub fn snap_vertex(map: &EdgeMap, u: f64, v: f64, radius: f64) -> (f64, f64) {
    if !(radius >= 0.0) {
        return (u, v);
    }
    let x0 = ((u - radius).floor().max(0.0)) as usize;
    let y0 = ((v - radius).floor().max(0.0)) as usize;
    let x1 = ((u + radius).ceil().min(map.width as f64 - 1.0)).max(0.0) as usize;
    let y1 = ((v + radius).ceil().min(map.height as f64 - 1.0)).max(0.0) as usize;
    let mut best: Option<(f64, usize, usize)> = None;
    for y in y0..=y1.min(map.height.saturating_sub(1)) {
        for x in x0..=x1.min(map.width.saturating_sub(1)) {
            if !map.is_edge(x, y) {
                continue;
            }
            let d = ((x as f64 - u).powi(2) + (y as f64 - v).powi(2)).sqrt();
            if d <= radius && best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, x, y));
            }
        }
    }
    match best {
        Some((_, x, y)) => (x as f64, y as f64),
        None => (u, v),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_image() -> Raster {
        let mut px = vec![0.0; 64];
        for y in 0..8 {
            for x in 4..8 {
                px[y * 8 + x] = 1.0;
            }
        }
        Raster::new(8, 8, px)
    }

    #[test]
    fn constant_image_has_no_edges() {
        let img = Raster::new(16, 16, vec![0.4; 256]);
        let map = compute_edge_map(&img, EdgeParams::default()).unwrap();
        assert_eq!(map.edge_count(), 0);
    }

    #[test]
    fn vertical_step_yields_one_column() {
        for sigma in [0.0, 1.0] {
            let params = EdgeParams {
                sigma,
                low: 0.1,
                high: 0.3,
            };
            let map = compute_edge_map(&step_image(), params).unwrap();
            let cols: std::collections::BTreeSet<usize> = (0..64)
                .filter(|i| map.edges[*i])
                .map(|i| i % 8)
                .collect();
            assert_eq!(cols.len(), 1, "sigma {sigma}: {cols:?}");
            let col = *cols.iter().next().unwrap();
            assert!((0..8).all(|y| map.is_edge(col, y)));
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            compute_edge_map(&Raster::new(0, 0, vec![]), EdgeParams::default()),
            Err(MaskingError::EmptyImage)
        ));
        let bad = EdgeParams {
            sigma: 1.0,
            low: 0.5,
            high: 0.2,
        };
        assert!(compute_edge_map(&step_image(), bad).is_err());
    }

    #[test]
    fn png_export_is_binary() {
        let map = compute_edge_map(&step_image(), EdgeParams { sigma: 0.0, low: 0.1, high: 0.3 }).unwrap();
        let decoded = image::load_from_memory(&map.to_png()).unwrap().to_luma8();
        assert_eq!(decoded.dimensions(), (8, 8));
        assert!(decoded.pixels().all(|p| p.0[0] == 0 || p.0[0] == 255));
        assert_eq!(decoded.pixels().filter(|p| p.0[0] == 255).count(), map.edge_count());
    }

    #[test]
    fn snap_examples() {
        let map = compute_edge_map(&step_image(), EdgeParams { sigma: 0.0, low: 0.1, high: 0.3 }).unwrap();
        let col = (0..8).find(|x| map.is_edge(*x, 0)).unwrap() as f64;
        // already on the edge
        assert_eq!(snap_vertex(&map, col, 4.0, 3.0), (col, 4.0));
        // nothing in reach
        assert_eq!(snap_vertex(&map, 7.0, 4.0, 0.5), (7.0, 4.0));
        // brute-force nearest with scanline tie-break
        for &(u, v, r) in &[(6.2, 3.4, 4.0), (0.0, 0.0, 5.0), (5.5, 7.9, 3.0)] {
            let mut best: Option<(f64, f64, f64)> = None;
            for y in 0..8 {
                for x in 0..8 {
                    if map.is_edge(x, y) {
                        let d = ((x as f64 - u).powi(2) + (y as f64 - v).powi(2)).sqrt();
                        if d <= r && best.is_none_or(|b| d < b.0) {
                            best = Some((d, x as f64, y as f64));
                        }
                    }
                }
            }
            let want = best.map(|b| (b.1, b.2)).unwrap_or((u, v));
            assert_eq!(snap_vertex(&map, u, v, r), want);
        }
    }
}
