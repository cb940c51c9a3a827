//! Tile-wise false-positive removal.
//!
//! Inside each tile, instances larger than the image-wide median area form
//! the reference set R and the rest the query set Q. Each query is scored
//! against the mean R feature vector with a Gaussian kernel and dropped when
//! the score falls below `t_s`.

use std::io::Write;

use crate::blockgrid::BlockGrid;
use crate::error::{Error, Result};
use crate::morph::{self, median, Instance};
use crate::raster::{LabelMap, RgbImage};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpParams {
    pub tile_size: usize,
    pub gamma: f64,
    pub t_s: f64,
    pub min_reference_count: usize,
    /// Multiplier applied to the `[0, 1]` features before the kernel.
    pub feature_scale: f64,
}

impl Default for FpParams {
    fn default() -> Self {
        Self {
            tile_size: 200,
            gamma: 0.1,
            t_s: 0.6,
            min_reference_count: 2,
            feature_scale: 10.0,
        }
    }
}

/// Mean hue, saturation and value over the instance plus the spread of
/// value over the instance and its 2-px outer ring; all in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceFeatures {
    pub mean_h: f64,
    pub mean_s: f64,
    pub mean_v: f64,
    pub contrast: f64,
}

impl InstanceFeatures {
    pub fn new(mean_h: f64, mean_s: f64, mean_v: f64, contrast: f64) -> Self {
        Self {
            mean_h,
            mean_s,
            mean_v,
            contrast,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.mean_h, self.mean_s, self.mean_v, self.contrast]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    fn scaled(self, k: f64) -> Self {
        Self::from_array(self.to_array().map(|v| v * k))
    }
}

/// HSV with every channel in `[0, 1]`; hue is degrees / 360.
pub fn rgb_to_hsv(rgb: [u8; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let sat = if max == 0.0 { 0.0 } else { delta / max };
    [hue / 360.0, sat, max]
}

const RING_RADIUS: i64 = 2;

pub fn instance_features(inst: &Instance, rgb: &RgbImage) -> InstanceFeatures {
    let (w, h) = (rgb.width() as i64, rgb.height() as i64);
    let mut sums = [0.0; 3];
    let mut v_values = Vec::with_capacity(inst.area * 2);
    for &(x, y) in &inst.pixels {
        let hsv = rgb_to_hsv(rgb.get(x as usize, y as usize));
        for c in 0..3 {
            sums[c] += hsv[c];
        }
        v_values.push(hsv[2]);
    }
    let n = inst.area as f64;

    let x0 = inst.pixels.iter().map(|p| p.0).min().unwrap_or(0) - RING_RADIUS;
    let y0 = inst.pixels.iter().map(|p| p.1).min().unwrap_or(0) - RING_RADIUS;
    let x1 = inst.pixels.iter().map(|p| p.0).max().unwrap_or(0) + RING_RADIUS;
    let y1 = inst.pixels.iter().map(|p| p.1).max().unwrap_or(0) + RING_RADIUS;
    let bw = x1 - x0 + 1;
    let bh = y1 - y0 + 1;
    let mut inside = vec![false; (bw * bh) as usize];
    for &(x, y) in &inst.pixels {
        inside[((y - y0) * bw + (x - x0)) as usize] = true;
    }
    // Chebyshev dilation by the ring radius
    let mut ring = vec![false; inside.len()];
    for &(x, y) in &inst.pixels {
        for dy in -RING_RADIUS..=RING_RADIUS {
            for dx in -RING_RADIUS..=RING_RADIUS {
                let idx = ((y + dy - y0) * bw + (x + dx - x0)) as usize;
                ring[idx] = !inside[idx];
            }
        }
    }
    for ly in 0..bh {
        for lx in 0..bw {
            let (x, y) = (lx + x0, ly + y0);
            if ring[(ly * bw + lx) as usize] && x >= 0 && y >= 0 && x < w && y < h {
                v_values.push(rgb_to_hsv(rgb.get(x as usize, y as usize))[2]);
            }
        }
    }
    let mv = v_values.iter().sum::<f64>() / v_values.len() as f64;
    let var = v_values.iter().map(|v| (v - mv).powi(2)).sum::<f64>() / v_values.len() as f64;
    InstanceFeatures {
        mean_h: sums[0] / n,
        mean_s: sums[1] / n,
        mean_v: sums[2] / n,
        contrast: (var.sqrt() / 0.5).clamp(0.0, 1.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Membership {
    Reference,
    Query,
}

impl Membership {
    pub fn as_str(self) -> &'static str {
        match self {
            Membership::Reference => "R",
            Membership::Query => "Q",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FpDecision {
    pub tile: usize,
    pub id: u32,
    pub set: Membership,
    /// Kernel score; only present for queries of scored tiles.
    pub similarity: Option<f64>,
    pub removed: bool,
}

/// Tiles of `tile_size` pixels; instances belong to the tile holding their
/// centroid.
#[derive(Debug, Clone)]
pub struct TileGrid {
    grid: BlockGrid,
}

impl TileGrid {
    pub fn new(width: usize, height: usize, tile_size: usize) -> Result<Self> {
        BlockGrid::new(width, height, tile_size)
            .map(|grid| Self { grid })
            .map_err(|_| Error::config("tile_size", format!("must be at least 8, got {tile_size}")))
    }

    pub fn grid(&self) -> &BlockGrid {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn tile_of(&self, centroid: (f64, f64)) -> usize {
        self.grid
            .index_of(centroid.0.floor() as usize, centroid.1.floor() as usize)
    }
}

/// Split `(id, area)` pairs into references (area above the threshold) and
/// queries.
pub fn assign_sets(instances: &[(u32, usize)], size_threshold: f64) -> (Vec<u32>, Vec<u32>) {
    let mut r = Vec::new();
    let mut q = Vec::new();
    for &(id, area) in instances {
        if area as f64 > size_threshold {
            r.push(id);
        } else {
            q.push(id);
        }
    }
    (r, q)
}

/// Component-wise mean; `None` for an empty reference set.
pub fn aggregate_reference(features: &[InstanceFeatures]) -> Option<InstanceFeatures> {
    if features.is_empty() {
        return None;
    }
    let mut acc = [0.0; 4];
    for f in features {
        for (a, v) in acc.iter_mut().zip(f.to_array()) {
            *a += v;
        }
    }
    Some(InstanceFeatures::from_array(
        acc.map(|a| a / features.len() as f64),
    ))
}

/// `exp(-gamma * ||x_j - x_r||^2)`.
pub fn similarity(x_r: &InstanceFeatures, x_j: &InstanceFeatures, gamma: f64) -> f64 {
    let d2: f64 = x_r
        .to_array()
        .iter()
        .zip(x_j.to_array())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    (-gamma * d2).exp()
}

/// Remove low-similarity query instances tile by tile. Removed ids are
/// erased without renumbering the survivors.
pub fn score_and_filter(
    map: &LabelMap,
    rgb: &RgbImage,
    params: &FpParams,
) -> Result<(LabelMap, Vec<FpDecision>)> {
    if !(params.t_s >= 0.0 && params.t_s <= 1.0) {
        return Err(Error::config("t_s", "must lie in [0, 1]"));
    }
    let tiles = TileGrid::new(map.width(), map.height(), params.tile_size)?;
    let insts = morph::instances(map);
    let mut areas: Vec<usize> = insts.iter().map(|i| i.area).collect();
    areas.sort_unstable();
    let size_threshold = median(&areas);

    let mut per_tile: Vec<Vec<&Instance>> = vec![Vec::new(); tiles.len()];
    for inst in &insts {
        per_tile[tiles.tile_of(inst.centroid)].push(inst);
    }

    let mut decisions = Vec::new();
    let mut out = map.clone();
    let mut removed_ids = Vec::new();
    for (tile, members) in per_tile.iter().enumerate() {
        let pairs: Vec<(u32, usize)> = members.iter().map(|i| (i.id, i.area)).collect();
        let (r_ids, q_ids) = assign_sets(&pairs, size_threshold);
        let feature_of = |id: u32| {
            let inst = members.iter().find(|i| i.id == id).expect("member of tile");
            instance_features(inst, rgb).scaled(params.feature_scale)
        };
        let reference = if r_ids.len() >= params.min_reference_count.max(1) {
            let feats: Vec<InstanceFeatures> = r_ids.iter().map(|&id| feature_of(id)).collect();
            aggregate_reference(&feats)
        } else {
            None
        };
        for &id in &r_ids {
            decisions.push(FpDecision {
                tile,
                id,
                set: Membership::Reference,
                similarity: None,
                removed: false,
            });
        }
        for &id in &q_ids {
            let (score, removed) = match &reference {
                Some(x_r) => {
                    let s = similarity(x_r, &feature_of(id), params.gamma);
                    (Some(s), s < params.t_s)
                }
                None => (None, false),
            };
            if removed {
                removed_ids.push(id);
            }
            decisions.push(FpDecision {
                tile,
                id,
                set: Membership::Query,
                similarity: score,
                removed,
            });
        }
    }
    if !removed_ids.is_empty() {
        let mut drop = vec![false; map.max_label() as usize + 1];
        for id in removed_ids {
            drop[id as usize] = true;
        }
        for l in out.labels_mut() {
            if drop[*l as usize] {
                *l = 0;
            }
        }
    }
    Ok((out, decisions))
}

/// CSV report with header `tile,id,set,similarity,removed`.
pub fn write_decisions_csv<W: Write>(writer: W, decisions: &[FpDecision]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["tile", "id", "set", "similarity", "removed"])?;
    for d in decisions {
        w.write_record([
            d.tile.to_string(),
            d.id.to_string(),
            d.set.as_str().to_string(),
            d.similarity.map(|s| format!("{s:.6}")).unwrap_or_default(),
            d.removed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
