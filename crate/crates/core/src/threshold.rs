//! Per-block bimodal histogram analysis and geometric threshold correction.
//!
//! Both histogram axes live in `[0, 1]`: intensity on the horizontal axis and
//! occurrence normalized by the largest smoothed bin on the vertical one. The
//! corrected threshold is built from the two main peaks `(t1, h1)` and
//! `(t2, h2)`: the perpendicular bisector of the segment joining them meets
//! zero occurrence at `T_c`, and the midpoint `T_o` is pushed away from
//! `T_c` by a fraction `lambda` of their distance.

use crate::blockgrid::IntensityBlock;

#[derive(Debug, Clone, PartialEq)]
pub struct BlockHistogram {
    /// Smoothed counts, one entry per bin.
    pub smoothed: Vec<f64>,
    /// `smoothed / max(smoothed)`; all zero for an empty histogram.
    pub occurrence: Vec<f64>,
    pub flat: bool,
}

impl BlockHistogram {
    pub fn bins(&self) -> usize {
        self.occurrence.len()
    }

    /// Intensity at the centre of bin `i`.
    pub fn bin_center(&self, i: f64) -> f64 {
        (i + 0.5) / self.bins() as f64
    }
}

/// Bin with index `floor(v * bins)`, the top edge folding into the last
/// bin.
pub fn bin_index(v: f64, bins: usize) -> usize {
    ((v * bins as f64).floor() as usize).min(bins - 1)
}

/// Histogram of block intensities, box-smoothed with zero padding.
pub fn build_histogram(block: &IntensityBlock, bins: usize, smooth_radius: usize) -> BlockHistogram {
    assert!(bins >= 16, "at least 16 bins");
    let mut counts = vec![0.0; bins];
    for &v in &block.intensity {
        counts[bin_index(v, bins)] += 1.0;
    }
    let width = (2 * smooth_radius + 1) as f64;
    let smoothed: Vec<f64> = (0..bins)
        .map(|i| {
            let lo = i.saturating_sub(smooth_radius);
            let hi = (i + smooth_radius).min(bins - 1);
            counts[lo..=hi].iter().sum::<f64>() / width
        })
        .collect();
    let max = smoothed.iter().copied().fold(0.0, f64::max);
    let occurrence = if max > 0.0 {
        smoothed.iter().map(|&s| s / max).collect()
    } else {
        vec![0.0; bins]
    };
    BlockHistogram {
        smoothed,
        occurrence,
        flat: block.flat,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Bimodal,
    UnimodalDark,
    UnimodalLight,
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    /// Intensity at the peak (centre of a plateau).
    pub t: f64,
    /// Normalized occurrence.
    pub h: f64,
    pub prominence: f64,
    /// Bin index (plateau centre, may be fractional).
    pub bin: f64,
}

/// Peaks and thresholds of one block; `t_o`, `t_c` and `t_prime` are
/// populated by [`correct_threshold`].
#[derive(Debug, Clone, PartialEq)]
pub struct BimodalFit {
    pub mode: Mode,
    pub peak1: Option<Peak>,
    pub peak2: Option<Peak>,
    /// Every qualifying peak, most prominent first (diagnostics).
    pub candidates: Vec<Peak>,
    pub t_o: f64,
    pub t_c: f64,
    pub t_prime: f64,
}

impl BimodalFit {
    pub fn from_peaks(mode: Mode, peak1: Option<Peak>, peak2: Option<Peak>) -> Self {
        Self {
            mode,
            peak1,
            peak2,
            candidates: peak1.into_iter().chain(peak2).collect(),
            t_o: f64::NAN,
            t_c: f64::NAN,
            t_prime: f64::NAN,
        }
    }

    /// A two-peak fit from explicit `(t, h)` coordinates.
    pub fn bimodal(p1: (f64, f64), p2: (f64, f64)) -> Self {
        let peak = |(t, h): (f64, f64)| Peak {
            t,
            h,
            prominence: h,
            bin: f64::NAN,
        };
        Self::from_peaks(Mode::Bimodal, Some(peak(p1)), Some(peak(p2)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakParams {
    pub prominence: f64,
    pub min_separation: usize,
}

impl Default for PeakParams {
    fn default() -> Self {
        Self {
            prominence: 0.1,
            min_separation: 8,
        }
    }
}

/// Local maxima (plateaus collapse to their centre) with their prominence:
/// height above the higher of the two flanking minima, where each flank
/// runs to the nearest strictly higher bin or past the histogram edge
/// (which counts as zero occurrence).
pub fn local_maxima(values: &[f64]) -> Vec<Peak> {
    let n = values.len();
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[j + 1] == values[i] {
            j += 1;
        }
        let h = values[i];
        let left_lower = i == 0 || values[i - 1] < h;
        let right_lower = j + 1 == n || values[j + 1] < h;
        if h > 0.0 && left_lower && right_lower {
            let mut left_min = h;
            let mut k = i;
            loop {
                if k == 0 {
                    left_min = 0.0;
                    break;
                }
                k -= 1;
                if values[k] > h {
                    break;
                }
                left_min = left_min.min(values[k]);
            }
            let mut right_min = h;
            let mut k = j;
            loop {
                if k + 1 == n {
                    right_min = 0.0;
                    break;
                }
                k += 1;
                if values[k] > h {
                    break;
                }
                right_min = right_min.min(values[k]);
            }
            let bin = (i + j) as f64 / 2.0;
            peaks.push(Peak {
                t: (bin + 0.5) / n as f64,
                h,
                prominence: h - left_min.max(right_min),
                bin,
            });
        }
        i = j + 1;
    }
    peaks
}

/// Select the two most prominent peaks that are at least
/// `min_separation` bins apart and classify the block.
pub fn find_peaks(hist: &BlockHistogram, params: &PeakParams) -> BimodalFit {
    if hist.flat || hist.occurrence.iter().all(|&v| v == 0.0) {
        return BimodalFit::from_peaks(Mode::Flat, None, None);
    }
    let mut peaks: Vec<Peak> = local_maxima(&hist.occurrence)
        .into_iter()
        .filter(|p| p.prominence >= params.prominence)
        .collect();
    peaks.sort_by(|a, b| {
        b.prominence
            .total_cmp(&a.prominence)
            .then(a.bin.total_cmp(&b.bin))
    });
    let mut kept: Vec<Peak> = Vec::new();
    for p in &peaks {
        if kept
            .iter()
            .all(|k| (k.bin - p.bin).abs() >= params.min_separation as f64)
        {
            kept.push(*p);
        }
    }
    let mut fit = match kept.len() {
        0 => BimodalFit::from_peaks(Mode::Flat, None, None),
        1 => {
            let mode = if kept[0].t < 0.5 {
                Mode::UnimodalDark
            } else {
                Mode::UnimodalLight
            };
            BimodalFit::from_peaks(mode, Some(kept[0]), None)
        }
        _ => {
            let (a, b) = (kept[0], kept[1]);
            let (p1, p2) = if a.t < b.t { (a, b) } else { (b, a) };
            BimodalFit::from_peaks(Mode::Bimodal, Some(p1), Some(p2))
        }
    };
    fit.candidates = kept;
    fit
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotBimodal(pub Mode);

impl std::fmt::Display for NotBimodal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "threshold correction needs a bimodal fit, got {:?}", self.0)
    }
}

impl std::error::Error for NotBimodal {}

/// Adjusted threshold `T' = T_o + lambda (T_o - T_c)`, clamped to the inner
/// 90% of the inter-peak interval.
pub fn correct_threshold(fit: &BimodalFit, lambda: f64) -> Result<BimodalFit, NotBimodal> {
    let (Mode::Bimodal, Some(p1), Some(p2)) = (fit.mode, fit.peak1, fit.peak2) else {
        return Err(NotBimodal(fit.mode));
    };
    let (t1, h1, t2, h2) = (p1.t, p1.h, p2.t, p2.h);
    let t_o = (t1 + t2) / 2.0;
    let slope = (h2 - h1) / (t2 - t1);
    let t_c = t_o + slope * (h1 + h2) / 2.0;
    let raw = t_o + lambda * (t_o - t_c);
    let margin = 0.05 * (t2 - t1);
    let t_prime = raw.clamp(t1 + margin, t2 - margin);
    Ok(BimodalFit {
        t_o,
        t_c,
        t_prime,
        ..fit.clone()
    })
}

/// Foreground where intensity falls below the threshold; non-bimodal
/// blocks are all background, except unimodal-dark which is all
/// foreground.
pub fn binarize_block(block: &IntensityBlock, fit: &BimodalFit) -> Vec<bool> {
    match fit.mode {
        Mode::Bimodal => {
            assert!(
                fit.t_prime.is_finite(),
                "bimodal fit must be corrected before binarization"
            );
            block.intensity.iter().map(|&v| v < fit.t_prime).collect()
        }
        Mode::UnimodalDark => vec![true; block.intensity.len()],
        Mode::UnimodalLight | Mode::Flat => vec![false; block.intensity.len()],
    }
}
