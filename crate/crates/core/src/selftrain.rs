//! Second-stage self-supervision: a two-class Gaussian pixel classifier is
//! fitted per tile on the first-stage pseudo-labels and overrides them
//! wherever it confidently disagrees.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;

use crate::fp_filter::TileGrid;
use crate::morph::{label_components, split_disconnected};
use crate::raster::{LabelMap, Mask, RgbImage};

const RIDGE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SelfTrainParams {
    pub tau_flip: f64,
    pub min_class_pixels: usize,
}

impl Default for SelfTrainParams {
    fn default() -> Self {
        Self {
            tau_flip: 0.9,
            min_class_pixels: 50,
        }
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive definite 3x3.
fn cholesky(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if d <= 0.0 || !d.is_finite() {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Some(l)
}

/// One class-conditional Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianClass {
    pub mean: [f64; 3],
    /// Maximum-likelihood covariance plus the ridge term.
    pub cov: [[f64; 3]; 3],
    pub prior: f64,
    chol: [[f64; 3]; 3],
    log_det: f64,
}

impl GaussianClass {
    pub fn fit(samples: &[[f64; 3]], prior: f64) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let n = samples.len() as f64;
        let mut mean = [0.0; 3];
        for s in samples {
            for c in 0..3 {
                mean[c] += s[c];
            }
        }
        mean = mean.map(|m| m / n);
        let mut cov = [[0.0; 3]; 3];
        for s in samples {
            let d = [s[0] - mean[0], s[1] - mean[1], s[2] - mean[2]];
            for r in 0..3 {
                for c in 0..3 {
                    cov[r][c] += d[r] * d[c];
                }
            }
        }
        for (r, row) in cov.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v /= n;
            }
            row[r] += RIDGE;
        }
        let chol = cholesky(&cov)?;
        let log_det = 2.0 * (0..3).map(|i| chol[i][i].ln()).sum::<f64>();
        Some(Self {
            mean,
            cov,
            prior,
            chol,
            log_det,
        })
    }

    /// `log(prior) + log N(x; mean, cov)` up to the shared constant.
    pub fn log_joint(&self, x: [f64; 3]) -> f64 {
        let d = [x[0] - self.mean[0], x[1] - self.mean[1], x[2] - self.mean[2]];
        // forward substitution: L z = d, Mahalanobis = |z|^2
        let l = &self.chol;
        let z0 = d[0] / l[0][0];
        let z1 = (d[1] - l[1][0] * z0) / l[1][1];
        let z2 = (d[2] - l[2][0] * z0 - l[2][1] * z1) / l[2][2];
        self.prior.ln() - 0.5 * self.log_det - 0.5 * (z0 * z0 + z1 * z1 + z2 * z2)
    }
}

/// Quadratic discriminant over pixel colours in `[0, 1]^3`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelClassifier {
    pub nuclei: GaussianClass,
    pub background: GaussianClass,
}

impl PixelClassifier {
    /// `p(nuclei | x)` by Bayes' rule.
    pub fn posterior_nuclei(&self, x: [f64; 3]) -> f64 {
        let a = self.nuclei.log_joint(x);
        let b = self.background.log_joint(x);
        1.0 / (1.0 + (b - a).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SkipReason {
    /// Fewer than the minimum number of pseudo-labelled nuclei pixels.
    TooFewNuclei(usize),
    /// Fewer than the minimum number of background pixels.
    TooFewBackground(usize),
    /// A class covariance was not positive definite.
    Degenerate,
}

impl std::fmt::Display for SkipReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SkipReason::TooFewNuclei(n) => write!(f, "too few nuclei pixels ({n})"),
            SkipReason::TooFewBackground(n) => write!(f, "too few background pixels ({n})"),
            SkipReason::Degenerate => write!(f, "degenerate covariance"),
        }
    }
}

pub fn normalize_color(rgb: [u8; 3]) -> [f64; 3] {
    rgb.map(|c| c as f64 / 255.0)
}

pub fn fit_tile(
    colors: &[[f64; 3]],
    pseudo: &[bool],
    min_class_pixels: usize,
) -> Result<PixelClassifier, SkipReason> {
    assert_eq!(colors.len(), pseudo.len(), "one label per pixel");
    let fg: Vec<[f64; 3]> = colors
        .iter()
        .zip(pseudo)
        .filter(|(_, &p)| p)
        .map(|(c, _)| *c)
        .collect();
    let bg: Vec<[f64; 3]> = colors
        .iter()
        .zip(pseudo)
        .filter(|(_, &p)| !p)
        .map(|(c, _)| *c)
        .collect();
    if fg.len() < min_class_pixels.max(1) {
        return Err(SkipReason::TooFewNuclei(fg.len()));
    }
    if bg.len() < min_class_pixels.max(1) {
        return Err(SkipReason::TooFewBackground(bg.len()));
    }
    let n = colors.len() as f64;
    let nuclei = GaussianClass::fit(&fg, fg.len() as f64 / n).ok_or(SkipReason::Degenerate)?;
    let background = GaussianClass::fit(&bg, bg.len() as f64 / n).ok_or(SkipReason::Degenerate)?;
    Ok(PixelClassifier { nuclei, background })
}

/// Flip a pseudo-label only where the classifier prefers the other class
/// with posterior at least `tau_flip`. A `tau_flip` of 1 or more never
/// flips, even where the posterior rounds to exactly 1.
pub fn relabel_uncertain(
    clf: &PixelClassifier,
    colors: &[[f64; 3]],
    pseudo: &[bool],
    tau_flip: f64,
) -> Vec<bool> {
    if tau_flip >= 1.0 {
        return pseudo.to_vec();
    }
    colors
        .iter()
        .zip(pseudo)
        .map(|(&c, &label)| {
            let p_fg = clf.posterior_nuclei(c);
            if label && 1.0 - p_fg >= tau_flip && p_fg < 0.5 {
                false
            } else if !label && p_fg >= tau_flip && p_fg > 0.5 {
                true
            } else {
                label
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileRelabel {
    pub tile: usize,
    pub fg_to_bg: usize,
    pub bg_to_fg: usize,
    pub skipped: Option<SkipReason>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelabelReport {
    pub tiles: Vec<TileRelabel>,
}

impl RelabelReport {
    pub fn total_flips(&self) -> usize {
        self.tiles.iter().map(|t| t.fg_to_bg + t.bg_to_fg).sum()
    }

    /// CSV with header `tile,fg_to_bg,bg_to_fg,skip_reason`.
    pub fn write_csv<W: Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["tile", "fg_to_bg", "bg_to_fg", "skip_reason"])?;
        for t in &self.tiles {
            w.write_record([
                t.tile.to_string(),
                t.fg_to_bg.to_string(),
                t.bg_to_fg.to_string(),
                t.skipped.map(|s| s.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Relabel the foreground of `map` tile by tile.
///
/// Pixels that stay foreground keep their instance id; pixels turned
/// foreground join the nearest adjacent instance through a breadth-first
/// growth, or form new instances when isolated. Instances cut apart by
/// removed pixels are split, and ids are compacted.
pub fn stage2_pass(
    map: &LabelMap,
    colors: &RgbImage,
    tiles: &TileGrid,
    params: &SelfTrainParams,
) -> crate::Result<(LabelMap, RelabelReport)> {
    if colors.width() != map.width() || colors.height() != map.height() {
        return Err(crate::Error::DimensionMismatch {
            left_w: map.width(),
            left_h: map.height(),
            right_w: colors.width(),
            right_h: colors.height(),
        });
    }
    let w = map.width();
    let labels = map.labels();
    let results: Vec<(TileRelabel, Vec<(usize, bool)>)> = (0..tiles.len())
        .into_par_iter()
        .map(|tile| {
            let rect = tiles.grid().block(tile);
            let idx: Vec<usize> = rect.indices(w).collect();
            let c: Vec<[f64; 3]> = idx.iter().map(|&i| normalize_color(colors.pixel(i))).collect();
            let pseudo: Vec<bool> = idx.iter().map(|&i| labels[i] != 0).collect();
            match fit_tile(&c, &pseudo, params.min_class_pixels) {
                Err(reason) => (
                    TileRelabel {
                        tile,
                        fg_to_bg: 0,
                        bg_to_fg: 0,
                        skipped: Some(reason),
                    },
                    Vec::new(),
                ),
                Ok(clf) => {
                    let relabeled = relabel_uncertain(&clf, &c, &pseudo, params.tau_flip);
                    let mut report = TileRelabel {
                        tile,
                        fg_to_bg: 0,
                        bg_to_fg: 0,
                        skipped: None,
                    };
                    let mut changes = Vec::new();
                    for ((&i, &before), &after) in idx.iter().zip(&pseudo).zip(&relabeled) {
                        if before && !after {
                            report.fg_to_bg += 1;
                            changes.push((i, false));
                        } else if !before && after {
                            report.bg_to_fg += 1;
                            changes.push((i, true));
                        }
                    }
                    (report, changes)
                }
            }
        })
        .collect();

    let mut report = RelabelReport::default();
    let mut out = map.clone();
    let mut grown = vec![false; labels.len()];
    for (tile_report, changes) in results {
        report.tiles.push(tile_report);
        for (i, fg) in changes {
            if fg {
                grown[i] = true;
            } else {
                out.labels_mut()[i] = 0;
            }
        }
    }
    if report.total_flips() == 0 {
        return Ok((map.clone(), report));
    }
    assign_grown(&mut out, &grown);
    Ok((split_disconnected(&out), report))
}

/// Give newly foreground pixels the id of the instance that reaches them
/// first in a breadth-first growth; unreached pixels become new instances.
fn assign_grown(out: &mut LabelMap, grown: &[bool]) {
    let (w, h) = (out.width() as i64, out.height() as i64);
    let mut queue: VecDeque<usize> = (0..grown.len())
        .filter(|&i| out.labels()[i] != 0)
        .collect();
    while let Some(p) = queue.pop_front() {
        let id = out.labels()[p];
        let (px, py) = ((p as i64) % w, (p as i64) / w);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (px + dx, py + dy);
                if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let q = (ny * w + nx) as usize;
                if grown[q] && out.labels()[q] == 0 {
                    out.labels_mut()[q] = id;
                    queue.push_back(q);
                }
            }
        }
    }
    let leftover: Vec<bool> = (0..grown.len())
        .map(|i| grown[i] && out.labels()[i] == 0)
        .collect();
    if leftover.iter().any(|&v| v) {
        let fresh = label_components(
            &Mask::from_vec(out.width(), out.height(), leftover).expect("same dimensions"),
        );
        let base = out.max_label();
        for (l, &f) in out.labels_mut().iter_mut().zip(fresh.labels()) {
            if f != 0 {
                *l = base + f;
            }
        }
    }
}
