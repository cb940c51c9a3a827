//! Seeded synthetic H&E-like images with planted nuclei and known truth.
//!
//! Images are composed in optical-density space from the default stain
//! vectors, so the stain module sees realistic colours. Touching pairs
//! exercise the convexity split and brown artifact blobs exercise the
//! false-positive filter; artifacts never appear in the truth map.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::{LabelMap, Mask, RgbImage};
use crate::stain::StainMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    /// Inclusive range of planted nuclei.
    pub nuclei: (usize, usize),
    /// Range of the major semi-axis in pixels.
    pub radius: (f64, f64),
    /// Largest major/minor axis ratio.
    pub max_axis_ratio: f64,
    /// Fraction of nuclei planted as overlapping pairs.
    pub touching_fraction: f64,
    /// Centre distance of a touching pair as a fraction of the radius sum.
    pub touching_overlap: f64,
    pub artifacts: (usize, usize),
    pub artifact_radius: (f64, f64),
    /// Hematoxylin density inside nuclei.
    pub h_nuclei: f64,
    pub h_background: f64,
    pub e_nuclei: f64,
    pub e_background: f64,
    /// Relative left-to-right drift of stain density.
    pub stain_gradient: f64,
    /// Per-pixel optical-density noise.
    pub noise: f64,
    /// Width of the soft nucleus edge in pixels.
    pub edge: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 250,
            height: 250,
            nuclei: (30, 80),
            radius: (7.0, 11.0),
            max_axis_ratio: 1.6,
            touching_fraction: 0.2,
            touching_overlap: 0.85,
            artifacts: (4, 8),
            artifact_radius: (4.5, 6.0),
            h_nuclei: 0.9,
            h_background: 0.05,
            e_nuclei: 0.1,
            e_background: 0.25,
            stain_gradient: 0.25,
            noise: 0.03,
            edge: 1.0,
        }
    }
}

/// One planted ellipse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipse {
    pub cx: f64,
    pub cy: f64,
    pub a: f64,
    pub b: f64,
    pub angle: f64,
}

impl Ellipse {
    pub fn disk(cx: f64, cy: f64, r: f64) -> Self {
        Self {
            cx,
            cy,
            a: r,
            b: r,
            angle: 0.0,
        }
    }

    /// Normalized radial coordinate: below 1 inside.
    pub fn rho(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (s, c) = self.angle.sin_cos();
        let u = dx * c + dy * s;
        let v = -dx * s + dy * c;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }

    fn extent(&self) -> f64 {
        self.a.max(self.b) + 2.0
    }

    fn mean_radius(&self) -> f64 {
        (self.a * self.b).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub rgb: RgbImage,
    pub truth: LabelMap,
    pub nuclei: Vec<Ellipse>,
    pub artifacts: Vec<Ellipse>,
    /// Pixels covered by artifact blobs.
    pub artifact_mask: Mask,
}

fn separated(e: &Ellipse, placed: &[Ellipse], gap: f64) -> bool {
    placed.iter().all(|p| {
        let d = ((e.cx - p.cx).powi(2) + (e.cy - p.cy).powi(2)).sqrt();
        d > e.a.max(e.b) + p.a.max(p.b) + gap
    })
}

fn random_ellipse(rng: &mut ChaCha8Rng, cfg: &SynthConfig, cx: f64, cy: f64) -> Ellipse {
    let a = rng.gen_range(cfg.radius.0..=cfg.radius.1);
    let ratio = rng.gen_range(1.0..=cfg.max_axis_ratio.max(1.0));
    Ellipse {
        cx,
        cy,
        a,
        b: a / ratio,
        angle: rng.gen_range(0.0..std::f64::consts::PI),
    }
}

/// Plant nuclei and artifacts and render the image.
pub fn generate(cfg: &SynthConfig, seed: u64) -> SynthImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.gen_range(cfg.nuclei.0..=cfg.nuclei.1);
    let margin = cfg.radius.1 + 2.0;
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let mut nuclei: Vec<Ellipse> = Vec::with_capacity(target);
    let mut attempts = 0;
    while nuclei.len() < target && attempts < 20_000 {
        attempts += 1;
        let cx = rng.gen_range(margin..w - margin);
        let cy = rng.gen_range(margin..h - margin);
        let first = random_ellipse(&mut rng, cfg, cx, cy);
        let pair = nuclei.len() + 1 < target && rng.gen_bool(cfg.touching_fraction.clamp(0.0, 1.0));
        if pair {
            // second disk-like nucleus overlapping the first
            let r2 = rng.gen_range(cfg.radius.0..=cfg.radius.1);
            let r1 = first.mean_radius();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let d = cfg.touching_overlap * (r1 + r2);
            let first = Ellipse::disk(cx, cy, r1);
            let second = Ellipse::disk(cx + d * theta.cos(), cy + d * theta.sin(), r2);
            let inside = |e: &Ellipse| {
                e.cx > margin && e.cy > margin && e.cx < w - margin && e.cy < h - margin
            };
            if inside(&second) && separated(&first, &nuclei, 3.0) && separated(&second, &nuclei, 3.0) {
                nuclei.push(first);
                nuclei.push(second);
            }
        } else if separated(&first, &nuclei, 3.0) {
            nuclei.push(first);
        }
    }

    let n_art = rng.gen_range(cfg.artifacts.0..=cfg.artifacts.1);
    let mut artifacts: Vec<Ellipse> = Vec::with_capacity(n_art);
    attempts = 0;
    while artifacts.len() < n_art && attempts < 5_000 {
        attempts += 1;
        let r = rng.gen_range(cfg.artifact_radius.0..=cfg.artifact_radius.1);
        let e = Ellipse::disk(rng.gen_range(margin..w - margin), rng.gen_range(margin..h - margin), r);
        if separated(&e, &nuclei, 4.0) && separated(&e, &artifacts, 4.0) {
            artifacts.push(e);
        }
    }

    let stains = StainMatrix::default();
    let [hv, ev, rv] = *stains.columns();
    let gain: Vec<f64> = nuclei.iter().map(|_| rng.gen_range(0.85..1.1)).collect();
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite noise");
    let mut truth = LabelMap::new(cfg.width, cfg.height);
    let mut artifact_mask = Mask::new(cfg.width, cfg.height);
    let mut h_map = vec![0.0f64; cfg.width * cfg.height];
    let mut r_map = vec![0.0f64; cfg.width * cfg.height];
    let mut best_rho = vec![f64::INFINITY; cfg.width * cfg.height];

    let mut stamp = |e: &Ellipse, id: Option<u32>, density: f64, residual: f64| {
        let ext = e.extent();
        let x0 = (e.cx - ext).floor().max(0.0) as usize;
        let y0 = (e.cy - ext).floor().max(0.0) as usize;
        let x1 = ((e.cx + ext).ceil() as usize).min(cfg.width - 1);
        let y1 = ((e.cy + ext).ceil() as usize).min(cfg.height - 1);
        let r = e.mean_radius();
        for y in y0..=y1 {
            for x in x0..=x1 {
                let rho = e.rho(x as f64, y as f64);
                let cover = ((1.0 - rho) * r / cfg.edge.max(1e-6) + 0.5).clamp(0.0, 1.0);
                let i = y * cfg.width + x;
                h_map[i] = h_map[i].max(cover * density);
                r_map[i] = r_map[i].max(cover * residual);
                if rho < 1.0 {
                    match id {
                        Some(id) if rho < best_rho[i] => {
                            best_rho[i] = rho;
                            truth.set(x, y, id);
                        }
                        Some(_) => {}
                        None => artifact_mask.set(x, y, true),
                    }
                }
            }
        }
    };
    for (k, e) in nuclei.iter().enumerate() {
        stamp(e, Some(k as u32 + 1), (cfg.h_nuclei - cfg.h_background) * gain[k], 0.0);
    }
    for e in &artifacts {
        stamp(e, None, cfg.h_nuclei - cfg.h_background, 0.9);
    }

    let mut data = Vec::with_capacity(cfg.width * cfg.height * 3);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let i = y * cfg.width + x;
            let drift = 1.0 + cfg.stain_gradient * (x as f64 / w - 0.5);
            let hd = (cfg.h_background + h_map[i]) * drift;
            let frac = (h_map[i] / (cfg.h_nuclei - cfg.h_background).max(1e-9)).clamp(0.0, 1.0);
            let ed = (cfg.e_background + (cfg.e_nuclei - cfg.e_background) * frac) * drift;
            let rd = r_map[i];
            for c in 0..3 {
                let od = (hd * hv[c] + ed * ev[c] + rd * rv[c] + noise.sample(&mut rng)).max(0.0);
                data.push((256.0 * (-od).exp() - 1.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    truth.compact();
    SynthImage {
        rgb: RgbImage::new(cfg.width, cfg.height, data).expect("sized buffer"),
        truth,
        nuclei,
        artifacts,
        artifact_mask,
    }
}

/// `count` images with consecutive seeds starting at `seed`.
pub fn planted_suite(cfg: &SynthConfig, count: usize, seed: u64) -> Vec<SynthImage> {
    (0..count as u64).map(|k| generate(cfg, seed + k)).collect()
}

/// Pixels whose centres lie within `r` of the disk centre.
pub fn disk_pixels(cx: f64, cy: f64, r: f64, width: usize, height: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2) <= r * r {
                out.push((x, y));
            }
        }
    }
    out
}

/// Union of two radius-`r` disks whose centres are `distance` apart on a
/// horizontal line, plus the area of a single disk.
pub fn dumbbell(r: f64, distance: f64) -> (Mask, usize) {
    let w = (2.0 * r + distance + 12.0).ceil() as usize;
    let h = (2.0 * r + 12.0).ceil() as usize;
    let cy = h as f64 / 2.0;
    let c1 = (w as f64 - distance) / 2.0;
    let mut mask = Mask::new(w, h);
    for &(x, y) in disk_pixels(c1, cy, r, w, h)
        .iter()
        .chain(&disk_pixels(c1 + distance, cy, r, w, h))
    {
        mask.set(x, y, true);
    }
    (mask, disk_pixels(c1, cy, r, w, h).len())
}

/// Grow every instance by `steps` rounds of 8-neighbour dilation into the
/// background; contested pixels go to the lowest neighbouring id.
pub fn dilate_labels(map: &LabelMap, steps: usize) -> LabelMap {
    let (w, h) = (map.width() as i64, map.height() as i64);
    let mut cur = map.clone();
    for _ in 0..steps {
        let prev = cur.clone();
        for y in 0..h {
            for x in 0..w {
                if prev.get(x as usize, y as usize) != 0 {
                    continue;
                }
                let mut best = 0u32;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (nx, ny) = (x + dx, y + dy);
                        if (dx, dy) == (0, 0) || nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let l = prev.get(nx as usize, ny as usize);
                        if l != 0 && (best == 0 || l < best) {
                            best = l;
                        }
                    }
                }
                if best != 0 {
                    cur.set(x as usize, y as usize, best);
                }
            }
        }
    }
    cur
}

/// Truth plus artifacts as a single label map: nuclei keep their truth ids
/// and artifacts follow. Returns the map and the first artifact id.
pub fn with_artifact_labels(img: &SynthImage) -> (LabelMap, u32) {
    let mut map = img.truth.clone();
    let first = map.max_label() + 1;
    for (k, e) in img.artifacts.iter().enumerate() {
        for (x, y) in disk_pixels(e.cx, e.cy, e.a, map.width(), map.height()) {
            if map.get(x, y) == 0 {
                map.set(x, y, first + k as u32);
            }
        }
    }
    (map, first)
}

/// Fraction of pixels where the foreground of `pred` agrees with `truth`.
pub fn pixel_accuracy(truth: &LabelMap, pred: &LabelMap) -> f64 {
    let agree = truth
        .labels()
        .iter()
        .zip(pred.labels())
        .filter(|(a, b)| (**a != 0) == (**b != 0))
        .count();
    agree as f64 / truth.labels().len().max(1) as f64
}
