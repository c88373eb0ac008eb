//! Canny edge detector with integer arithmetic up to the thresholds, so
//! suppression and ties are exact.

use image::GrayImage;
use serde::{Deserialize, Serialize};

/// Fixed-point scale of the Gaussian kernel weights.
const KERNEL_SCALE: f64 = 4096.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CannyParams {
    /// Hysteresis thresholds on the Sobel magnitude, in intensity units.
    pub low: f64,
    pub high: f64,
    pub sigma: f64,
}

impl Default for CannyParams {
    fn default() -> Self {
        CannyParams { low: 50.0, high: 150.0, sigma: 1.4 }
    }
}

impl CannyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.low >= 0.0 && self.high >= self.low && self.high.is_finite()) {
            return Err(format!("need 0 <= low <= high, got low = {}, high = {}", self.low, self.high));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(format!("blur sigma must be >= 0, got {}", self.sigma));
        }
        Ok(())
    }
}

/// Row-major intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f64>,
}

impl EdgeMap {
    pub fn zeros(width: u32, height: u32) -> EdgeMap {
        EdgeMap { width, height, data: vec![0.0; (width * height) as usize] }
    }

    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.data[(y * self.width + x) as usize]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|v| **v > 0.0).count()
    }

    /// 8-bit rendering, `round(255 v)`.
    pub fn to_image(&self) -> GrayImage {
        let px = self.data.iter().map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8).collect();
        GrayImage::from_raw(self.width, self.height, px).expect("matching buffer size")
    }
}

/// Integer Gaussian weights for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<i64> {
    if sigma <= 0.0 {
        return vec![1];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r).map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|g| ((g / total) * KERNEL_SCALE).round().max(1.0) as i64).collect()
}

/// Separable blur with replicated borders; the result carries the factor
/// `sum(kernel)^2`.
fn blur(img: &GrayImage, kernel: &[i64]) -> Vec<i64> {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = (kernel.len() / 2) as i64;
    let src = img.as_raw();
    let mut tmp = vec![0i64; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            tmp[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, q)| q * src[(y * w + (x + k as i64 - r).clamp(0, w - 1)) as usize] as i64)
                .sum();
        }
    }
    let mut out = vec![0i64; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            out[(y * w + x) as usize] = kernel
                .iter()
                .enumerate()
                .map(|(k, q)| q * tmp[((y + k as i64 - r).clamp(0, h - 1) * w + x) as usize])
                .sum();
        }
    }
    out
}

/// Binary edges of `img` (1 on edge pixels).
pub fn canny(img: &GrayImage, params: &CannyParams) -> EdgeMap {
    let (w, h) = (img.width() as i64, img.height() as i64);
    if w == 0 || h == 0 {
        return EdgeMap::zeros(img.width(), img.height());
    }
    let kernel = gaussian_kernel(params.sigma);
    let scale = kernel.iter().sum::<i64>() as f64;
    let scale2 = scale * scale;
    let b = blur(img, &kernel);
    let at = |x: i64, y: i64| b[(y.clamp(0, h - 1) * w + x.clamp(0, w - 1)) as usize];

    let n = (w * h) as usize;
    let mut gx = vec![0i64; n];
    let mut gy = vec![0i64; n];
    let mut mag2 = vec![0i128; n];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            gx[i] = (at(x + 1, y - 1) + 2 * at(x + 1, y) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x - 1, y) + at(x - 1, y + 1));
            gy[i] = (at(x - 1, y + 1) + 2 * at(x, y + 1) + at(x + 1, y + 1))
                - (at(x - 1, y - 1) + 2 * at(x, y - 1) + at(x + 1, y - 1));
            mag2[i] = gx[i] as i128 * gx[i] as i128 + gy[i] as i128 * gy[i] as i128;
        }
    }
    let m = |x: i64, y: i64| -> i128 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0
        } else {
            mag2[(y * w + x) as usize]
        }
    };

    // Non-maximum suppression along the gradient, quantized to 4 directions
    // with tan(22.5 deg) ~ 0.41421.
    let mut strength = vec![0u8; n]; // 0 none, 1 weak, 2 strong
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let here = mag2[i];
            if here == 0 {
                continue;
            }
            let (ax, ay) = (gx[i].unsigned_abs() as i128, gy[i].unsigned_abs() as i128);
            let (prev, next) = if ay * 100_000 <= ax * 41_421 {
                (m(x - 1, y), m(x + 1, y))
            } else if ax * 100_000 <= ay * 41_421 {
                (m(x, y - 1), m(x, y + 1))
            } else if (gx[i] > 0) == (gy[i] > 0) {
                (m(x - 1, y - 1), m(x + 1, y + 1))
            } else {
                (m(x + 1, y - 1), m(x - 1, y + 1))
            };
            if here > prev && here >= next {
                let mag = (here as f64).sqrt() / scale2;
                strength[i] = if mag >= params.high {
                    2
                } else if mag >= params.low {
                    1
                } else {
                    0
                };
            }
        }
    }

    // Hysteresis: weak pixels survive when 8-connected to a strong one.
    let mut out = EdgeMap::zeros(img.width(), img.height());
    let mut stack: Vec<(i64, i64)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            if strength[i] == 2 && out.data[i] == 0.0 {
                out.data[i] = 1.0;
                stack.push((x, y));
                while let Some((cx, cy)) = stack.pop() {
                    for dy in -1..=1 {
                        for dx in -1..=1 {
                            let (nx, ny) = (cx + dx, cy + dy);
                            if nx < 0 || ny < 0 || nx >= w || ny >= h {
                                continue;
                            }
                            let j = (ny * w + nx) as usize;
                            if strength[j] > 0 && out.data[j] == 0.0 {
                                out.data[j] = 1.0;
                                stack.push((nx, ny));
                            }
                        }
                    }
                }
            }
        }
    }
    out
}
