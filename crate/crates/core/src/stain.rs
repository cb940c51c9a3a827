//! Hematoxylin projection by optical-density colour deconvolution, contrast
//! stretch of the H channel, and CIELAB lightness.

use crate::error::{Error, Result};
use crate::raster::{GrayImage, RgbImage};

/// Three unit stain vectors in optical-density space: H, E, residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StainMatrix {
    columns: [[f64; 3]; 3],
    inverse: [[f64; 3]; 3],
}

fn normalize(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    (n > 1e-12 && n.is_finite()).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Inverse of the matrix whose columns are `cols`; `None` when the
/// reciprocal condition estimate is below 1e-9.
fn invert_columns(cols: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    // m[r][c] = cols[c][r]
    let m = |r: usize, c: usize| cols[c][r];
    let cof = |r: usize, c: usize| {
        let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
        let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
        m(r1, c1) * m(r2, c2) - m(r1, c2) * m(r2, c1)
    };
    let det = m(0, 0) * cof(0, 0) + m(0, 1) * cof(0, 1) + m(0, 2) * cof(0, 2);
    if !det.is_finite() || det.abs() < 1e-9 {
        return None;
    }
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = cof(c, r) / det;
        }
    }
    Some(inv)
}

impl StainMatrix {
    /// Build from H and E vectors; the residual is their normalized cross
    /// product.
    pub fn from_he(h: [f64; 3], e: [f64; 3]) -> Result<Self> {
        let h = normalize(h).ok_or_else(|| Error::config("stain_matrix", "zero H vector"))?;
        let e = normalize(e).ok_or_else(|| Error::config("stain_matrix", "zero E vector"))?;
        let r = normalize(cross(h, e))
            .ok_or_else(|| Error::config("stain_matrix", "H and E vectors are parallel"))?;
        Self::from_columns([h, e, r])
    }

    /// Build from three columns (H, E, residual); each is normalized.
    pub fn from_columns(columns: [[f64; 3]; 3]) -> Result<Self> {
        let mut cols = [[0.0; 3]; 3];
        for (dst, src) in cols.iter_mut().zip(columns) {
            *dst = normalize(src)
                .ok_or_else(|| Error::config("stain_matrix", "zero-length stain vector"))?;
        }
        let inverse = invert_columns(&cols)
            .ok_or_else(|| Error::config("stain_matrix", "stain matrix is singular"))?;
        Ok(Self {
            columns: cols,
            inverse,
        })
    }

    /// Build from nine numbers, column-major (H, E, residual).
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != 9 {
            return Err(Error::config(
                "stain_matrix",
                format!("expected 9 numbers, got {}", values.len()),
            ));
        }
        let col = |i: usize| [values[3 * i], values[3 * i + 1], values[3 * i + 2]];
        Self::from_columns([col(0), col(1), col(2)])
    }

    pub fn columns(&self) -> &[[f64; 3]; 3] {
        &self.columns
    }

    pub fn h_vector(&self) -> [f64; 3] {
        self.columns[0]
    }

    pub fn swapped_he(&self) -> Self {
        Self::from_columns([self.columns[1], self.columns[0], self.columns[2]])
            .expect("permuting columns keeps the matrix invertible")
    }

    /// Per-stain concentrations of one RGB pixel.
    pub fn concentrations(&self, rgb: [u8; 3]) -> [f64; 3] {
        let od = rgb.map(optical_density);
        let mut c = [0.0; 3];
        for (r, ci) in c.iter_mut().enumerate() {
            *ci = (0..3).map(|k| self.inverse[r][k] * od[k]).sum();
        }
        c
    }
}

impl Default for StainMatrix {
    fn default() -> Self {
        Self::from_he([0.650, 0.704, 0.286], [0.072, 0.990, 0.105])
            .expect("default H&E vectors are independent")
    }
}

/// `-ln((I + 1) / 256)`.
pub fn optical_density(channel: u8) -> f64 {
    -((channel as f64 + 1.0) / 256.0).ln()
}

/// 8-bit pixel whose optical density is `od` (inverse of [`optical_density`]).
pub fn from_optical_density(od: f64) -> u8 {
    (256.0 * (-od).exp() - 1.0).round().clamp(0.0, 255.0) as u8
}

/// Hematoxylin channel rescaled to 8 bits. `scale` is the concentration
/// that maps to 255, used to rebuild the H-only colour image.
#[derive(Debug, Clone, PartialEq)]
pub struct HImage {
    width: usize,
    height: usize,
    values: Vec<u8>,
    scale: f64,
    h_vector: [f64; 3],
}

impl HImage {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn as_gray(&self) -> GrayImage {
        GrayImage::new(self.width, self.height, self.values.clone()).expect("same dimensions")
    }

    /// H-only colour raster: each pixel re-synthesized from its H
    /// concentration along the H stain vector.
    pub fn recolored(&self) -> RgbImage {
        let mut lut = [[0u8; 3]; 256];
        for (v, entry) in lut.iter_mut().enumerate() {
            let c = v as f64 / 255.0 * self.scale;
            *entry = self.h_vector.map(|hv| from_optical_density(c * hv));
        }
        let data = self.values.iter().flat_map(|&v| lut[v as usize]).collect();
        RgbImage::new(self.width, self.height, data).expect("same dimensions")
    }
}

/// Project onto the H stain: optical density, inverse stain matrix, clamp
/// at zero, rescale by the image-wide maximum.
pub fn deconvolve_h(img: &RgbImage, stains: &StainMatrix) -> HImage {
    let conc: Vec<f64> = img
        .pixels()
        .map(|p| stains.concentrations(p)[0].max(0.0))
        .collect();
    let scale = conc.iter().copied().fold(0.0, f64::max);
    let values = if scale > 0.0 {
        conc.iter()
            .map(|&c| (c / scale * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    } else {
        vec![0; conc.len()]
    };
    HImage {
        width: img.width(),
        height: img.height(),
        values,
        scale,
        h_vector: stains.h_vector(),
    }
}

/// Nearest-rank percentile of an 8-bit histogram.
fn percentile(hist: &[usize; 256], total: usize, pct: f64) -> u8 {
    let rank = ((pct / 100.0) * total as f64).ceil().max(1.0) as usize;
    let mut seen = 0;
    for (v, &n) in hist.iter().enumerate() {
        seen += n;
        if seen >= rank {
            return v as u8;
        }
    }
    255
}

/// Linear stretch taking the `lo_pct` percentile to 0 and `hi_pct` to 255.
pub fn enhance_contrast(h: &HImage, lo_pct: f64, hi_pct: f64) -> Result<HImage> {
    if !(0.0..100.0).contains(&lo_pct) || !(lo_pct < hi_pct && hi_pct <= 100.0) {
        return Err(Error::config(
            "contrast_lo/contrast_hi",
            format!("need 0 <= lo < hi <= 100, got {lo_pct}, {hi_pct}"),
        ));
    }
    let mut hist = [0usize; 256];
    for &v in &h.values {
        hist[v as usize] += 1;
    }
    let lo = percentile(&hist, h.values.len(), lo_pct) as f64;
    let hi = percentile(&hist, h.values.len(), hi_pct) as f64;
    if hi <= lo {
        return Ok(h.clone());
    }
    let mut lut = [0u8; 256];
    for (v, out) in lut.iter_mut().enumerate() {
        *out = ((v as f64 - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8;
    }
    Ok(HImage {
        values: h.values.iter().map(|&v| lut[v as usize]).collect(),
        ..h.clone()
    })
}

fn srgb_to_linear(c: u8) -> f64 {
    let c = c as f64 / 255.0;
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

/// CIELAB L* (D65) on the 0..=100 scale.
pub fn lightness_star(rgb: [u8; 3]) -> f64 {
    let y = 0.2126 * srgb_to_linear(rgb[0])
        + 0.7152 * srgb_to_linear(rgb[1])
        + 0.0722 * srgb_to_linear(rgb[2]);
    const EPS: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    if y > EPS {
        116.0 * y.cbrt() - 16.0
    } else {
        KAPPA * y
    }
}

/// Per-pixel L* scaled from 0..=100 to 0..=255.
pub fn lab_lightness(img: &RgbImage) -> GrayImage {
    let mut lut = std::collections::HashMap::new();
    let data = img
        .pixels()
        .map(|p| {
            *lut.entry(p)
                .or_insert_with(|| (lightness_star(p) * 2.55).round().clamp(0.0, 255.0) as u8)
        })
        .collect();
    GrayImage::new(img.width(), img.height(), data).expect("same dimensions")
}
