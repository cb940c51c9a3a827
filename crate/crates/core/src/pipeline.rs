//! End-to-end two-stage segmentation with the three intermediate label maps
//! used by the ablation report.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::blockgrid::{block_pca_intensity, BlockGrid};
use crate::error::{Error, Result};
use crate::fp_filter::{self, FpDecision, FpParams, TileGrid};
use crate::morph::{self, MorphParams, SizePrior};
use crate::raster::{LabelMap, Mask, RgbImage};
use crate::selftrain::{self, RelabelReport, SelfTrainParams};
use crate::stain::{self, StainMatrix};
use crate::threshold::{self, BimodalFit, Mode, PeakParams};

/// Prefix for environment-variable overrides, e.g. `HUNIS_LAMBDA=0.25`.
pub const ENV_PREFIX: &str = "HUNIS_";

/// Every tunable of the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub block_size: usize,
    pub tile_size: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub t_s: f64,
    pub bins: usize,
    pub smooth_radius: usize,
    pub prominence: f64,
    pub min_separation: usize,
    pub contrast_lo: f64,
    pub contrast_hi: f64,
    pub stain_matrix: StainMatrix,
    pub min_area_floor: usize,
    pub min_area_fraction: f64,
    pub solidity_split: f64,
    pub defect_depth_fraction: f64,
    pub solidity_hull_replace: f64,
    pub split_max_depth: usize,
    pub tau_flip: f64,
    pub min_class_pixels: usize,
    pub min_reference_count: usize,
    pub feature_scale: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let morph = MorphParams::default();
        let fp = FpParams::default();
        let st = SelfTrainParams::default();
        let peaks = PeakParams::default();
        Self {
            block_size: 50,
            tile_size: fp.tile_size,
            lambda: 0.3,
            gamma: fp.gamma,
            t_s: fp.t_s,
            bins: 64,
            smooth_radius: 2,
            prominence: peaks.prominence,
            min_separation: peaks.min_separation,
            contrast_lo: 1.0,
            contrast_hi: 99.0,
            stain_matrix: StainMatrix::default(),
            min_area_floor: morph.min_area_floor,
            min_area_fraction: morph.min_area_fraction,
            solidity_split: morph.solidity_split,
            defect_depth_fraction: morph.defect_depth_fraction,
            solidity_hull_replace: morph.solidity_hull_replace,
            split_max_depth: morph.split_max_depth,
            tau_flip: st.tau_flip,
            min_class_pixels: st.min_class_pixels,
            min_reference_count: fp.min_reference_count,
            feature_scale: fp.feature_scale,
        }
    }
}

/// Documented configuration keys, in file order.
pub const CONFIG_KEYS: &[&str] = &[
    "block_size",
    "tile_size",
    "lambda",
    "gamma",
    "t_s",
    "bins",
    "smooth_radius",
    "prominence",
    "min_separation",
    "contrast_lo",
    "contrast_hi",
    "stain_matrix",
    "min_area_floor",
    "min_area_fraction",
    "solidity_split",
    "defect_depth_fraction",
    "solidity_hull_replace",
    "split_max_depth",
    "tau_flip",
    "min_class_pixels",
    "min_reference_count",
    "feature_scale",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

impl PipelineConfig {
    /// Set one key from its textual value. Range checks happen in
    /// [`PipelineConfig::validate`].
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "block_size" => self.block_size = parse_num(key, value)?,
            "tile_size" => self.tile_size = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "gamma" => self.gamma = parse_num(key, value)?,
            "t_s" => self.t_s = parse_num(key, value)?,
            "bins" => self.bins = parse_num(key, value)?,
            "smooth_radius" => self.smooth_radius = parse_num(key, value)?,
            "prominence" => self.prominence = parse_num(key, value)?,
            "min_separation" => self.min_separation = parse_num(key, value)?,
            "contrast_lo" => self.contrast_lo = parse_num(key, value)?,
            "contrast_hi" => self.contrast_hi = parse_num(key, value)?,
            "stain_matrix" => {
                let nums: Vec<f64> = value
                    .split(|c: char| c == ',' || c.is_whitespace())
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_num(key, s))
                    .collect::<Result<_>>()?;
                self.stain_matrix = StainMatrix::from_slice(&nums)?;
            }
            "min_area_floor" => self.min_area_floor = parse_num(key, value)?,
            "min_area_fraction" => self.min_area_fraction = parse_num(key, value)?,
            "solidity_split" => self.solidity_split = parse_num(key, value)?,
            "defect_depth_fraction" => self.defect_depth_fraction = parse_num(key, value)?,
            "solidity_hull_replace" => self.solidity_hull_replace = parse_num(key, value)?,
            "split_max_depth" => self.split_max_depth = parse_num(key, value)?,
            "tau_flip" => self.tau_flip = parse_num(key, value)?,
            "min_class_pixels" => self.min_class_pixels = parse_num(key, value)?,
            "min_reference_count" => self.min_reference_count = parse_num(key, value)?,
            "feature_scale" => self.feature_scale = parse_num(key, value)?,
            other => return Err(Error::config(other, "unknown configuration key")),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected `key = value`", n + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Apply `HUNIS_<KEY>` overrides from `vars`; other variables are
    /// ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            if let Some(key) = k.as_ref().strip_prefix(ENV_PREFIX) {
                self.set(&key.to_ascii_lowercase(), v.as_ref())?;
            }
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        fn check(ok: bool, key: &str, rule: &str) -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, format!("must satisfy {rule}")))
            }
        }
        check(self.block_size >= 8, "block_size", ">= 8")?;
        check(self.tile_size >= 8, "tile_size", ">= 8")?;
        check(self.lambda > 0.0 && self.lambda < 1.0, "lambda", "0 < lambda < 1")?;
        check(self.gamma > 0.0 && self.gamma.is_finite(), "gamma", "gamma > 0")?;
        check(self.t_s > 0.0 && self.t_s < 1.0, "t_s", "0 < t_s < 1")?;
        check(self.bins >= 16, "bins", ">= 16")?;
        check(self.smooth_radius <= self.bins / 4, "smooth_radius", "<= bins / 4")?;
        check(
            self.prominence > 0.0 && self.prominence <= 1.0,
            "prominence",
            "0 < prominence <= 1",
        )?;
        check(
            self.min_separation >= 1 && self.min_separation < self.bins,
            "min_separation",
            "1 <= min_separation < bins",
        )?;
        check(
            self.contrast_lo >= 0.0 && self.contrast_lo < self.contrast_hi,
            "contrast_lo",
            "0 <= contrast_lo < contrast_hi",
        )?;
        check(self.contrast_hi <= 100.0, "contrast_hi", "<= 100")?;
        check(
            (0.0..=1.0).contains(&self.min_area_fraction),
            "min_area_fraction",
            "0 <= fraction <= 1",
        )?;
        check(
            self.solidity_split > 0.0 && self.solidity_split <= 1.0,
            "solidity_split",
            "0 < solidity_split <= 1",
        )?;
        check(
            self.defect_depth_fraction > 0.0 && self.defect_depth_fraction < 1.0,
            "defect_depth_fraction",
            "0 < fraction < 1",
        )?;
        check(
            self.solidity_hull_replace > 0.0 && self.solidity_hull_replace <= 1.0,
            "solidity_hull_replace",
            "0 < solidity_hull_replace <= 1",
        )?;
        check(self.split_max_depth <= 16, "split_max_depth", "<= 16")?;
        check(
            self.tau_flip > 0.5 && self.tau_flip <= 1.0,
            "tau_flip",
            "0.5 < tau_flip <= 1",
        )?;
        check(self.min_class_pixels >= 4, "min_class_pixels", ">= 4")?;
        check(self.min_reference_count >= 1, "min_reference_count", ">= 1")?;
        check(
            self.feature_scale > 0.0 && self.feature_scale.is_finite(),
            "feature_scale",
            "> 0",
        )?;
        Ok(())
    }

    /// Render every key in the config file format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let c = self.stain_matrix.columns();
        let stains: Vec<String> = c.iter().flatten().map(|v| format!("{v}")).collect();
        let _ = writeln!(s, "block_size = {}", self.block_size);
        let _ = writeln!(s, "tile_size = {}", self.tile_size);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "t_s = {}", self.t_s);
        let _ = writeln!(s, "bins = {}", self.bins);
        let _ = writeln!(s, "smooth_radius = {}", self.smooth_radius);
        let _ = writeln!(s, "prominence = {}", self.prominence);
        let _ = writeln!(s, "min_separation = {}", self.min_separation);
        let _ = writeln!(s, "contrast_lo = {}", self.contrast_lo);
        let _ = writeln!(s, "contrast_hi = {}", self.contrast_hi);
        let _ = writeln!(s, "stain_matrix = {}", stains.join(" "));
        let _ = writeln!(s, "min_area_floor = {}", self.min_area_floor);
        let _ = writeln!(s, "min_area_fraction = {}", self.min_area_fraction);
        let _ = writeln!(s, "solidity_split = {}", self.solidity_split);
        let _ = writeln!(s, "defect_depth_fraction = {}", self.defect_depth_fraction);
        let _ = writeln!(s, "solidity_hull_replace = {}", self.solidity_hull_replace);
        let _ = writeln!(s, "split_max_depth = {}", self.split_max_depth);
        let _ = writeln!(s, "tau_flip = {}", self.tau_flip);
        let _ = writeln!(s, "min_class_pixels = {}", self.min_class_pixels);
        let _ = writeln!(s, "min_reference_count = {}", self.min_reference_count);
        let _ = writeln!(s, "feature_scale = {}", self.feature_scale);
        s
    }

    pub fn morph_params(&self) -> MorphParams {
        MorphParams {
            min_area_floor: self.min_area_floor,
            min_area_fraction: self.min_area_fraction,
            solidity_split: self.solidity_split,
            defect_depth_fraction: self.defect_depth_fraction,
            solidity_hull_replace: self.solidity_hull_replace,
            split_max_depth: self.split_max_depth,
        }
    }

    pub fn fp_params(&self) -> FpParams {
        FpParams {
            tile_size: self.tile_size,
            gamma: self.gamma,
            t_s: self.t_s,
            min_reference_count: self.min_reference_count,
            feature_scale: self.feature_scale,
        }
    }

    pub fn selftrain_params(&self) -> SelfTrainParams {
        SelfTrainParams {
            tau_flip: self.tau_flip,
            min_class_pixels: self.min_class_pixels,
        }
    }

    pub fn peak_params(&self) -> PeakParams {
        PeakParams {
            prominence: self.prominence,
            min_separation: self.min_separation,
        }
    }
}

/// Label maps captured after each ablation stage, plus per-stage reports.
#[derive(Debug, Clone)]
pub struct StageOutputs {
    /// Thresholding and size/shape priors.
    pub stage1_m12: LabelMap,
    /// Additionally false-positive removal.
    pub stage1_m123: LabelMap,
    /// Both stages.
    pub final_map: LabelMap,
    pub block_fits: Vec<BimodalFit>,
    pub fp_decisions: Vec<FpDecision>,
    pub relabel: RelabelReport,
}

impl StageOutputs {
    pub fn mode_counts(&self) -> [(Mode, usize); 4] {
        let count = |m: Mode| self.block_fits.iter().filter(|f| f.mode == m).count();
        [
            (Mode::Bimodal, count(Mode::Bimodal)),
            (Mode::UnimodalDark, count(Mode::UnimodalDark)),
            (Mode::UnimodalLight, count(Mode::UnimodalLight)),
            (Mode::Flat, count(Mode::Flat)),
        ]
    }
}

/// Block-wise adaptive thresholding of the H-recoloured image; returns the
/// foreground mask and one fit per block in row-major order.
pub fn threshold_blocks(
    recolored: &RgbImage,
    lightness: &[f64],
    cfg: &PipelineConfig,
) -> Result<(Mask, Vec<BimodalFit>)> {
    let (w, h) = (recolored.width(), recolored.height());
    let grid = BlockGrid::new(w, h, cfg.block_size)?;
    let peaks = cfg.peak_params();
    let per_block: Vec<(Vec<usize>, Vec<bool>, BimodalFit)> = (0..grid.len())
        .into_par_iter()
        .map(|b| {
            let rect = grid.block(b);
            let idx: Vec<usize> = rect.indices(w).collect();
            let pixels: Vec<[f64; 3]> = idx
                .iter()
                .map(|&i| recolored.pixel(i).map(f64::from))
                .collect();
            let l_ref: Vec<f64> = idx.iter().map(|&i| lightness[i]).collect();
            let block = block_pca_intensity(&pixels, &l_ref);
            let hist = threshold::build_histogram(&block, cfg.bins, cfg.smooth_radius);
            let mut fit = threshold::find_peaks(&hist, &peaks);
            if fit.mode == Mode::Bimodal {
                fit = threshold::correct_threshold(&fit, cfg.lambda)
                    .expect("bimodal fit is correctable");
            }
            let fg = threshold::binarize_block(&block, &fit);
            (idx, fg, fit)
        })
        .collect();
    let mut mask = Mask::new(w, h);
    let mut fits = Vec::with_capacity(per_block.len());
    for (idx, fg, fit) in per_block {
        for (i, f) in idx.into_iter().zip(fg) {
            if f {
                mask.set(i % w, i / w, true);
            }
        }
        fits.push(fit);
    }
    Ok((mask, fits))
}

/// First-stage priors: small-instance removal, convexity split, then hole
/// filling.
pub fn apply_priors(mask: &Mask, params: &MorphParams) -> LabelMap {
    let labeled = morph::label_components(mask);
    let prior = SizePrior::from_map(&labeled, params);
    let cleaned = morph::remove_small(&labeled, &prior);
    let split = morph::split_convexity(&cleaned, params);
    let mut out = morph::fill_holes(&split);
    out.compact();
    out
}

/// Run both stages on one image.
pub fn run(img: &RgbImage, cfg: &PipelineConfig) -> Result<StageOutputs> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    if img.width() < cfg.block_size || img.height() < cfg.block_size {
        return Err(Error::InvalidRaster(format!(
            "{}x{} image is smaller than one {}-px block",
            img.width(),
            img.height(),
            cfg.block_size
        )));
    }
    let himg = stain::deconvolve_h(img, &cfg.stain_matrix);
    let enhanced = stain::enhance_contrast(&himg, cfg.contrast_lo, cfg.contrast_hi)
        .map_err(|e| e.in_stage("stain"))?;
    let recolored = enhanced.recolored();
    let lightness: Vec<f64> = stain::lab_lightness(img)
        .data()
        .iter()
        .map(|&v| v as f64)
        .collect();

    let (mask, block_fits) =
        threshold_blocks(&recolored, &lightness, cfg).map_err(|e| e.in_stage("threshold"))?;
    let morph_params = cfg.morph_params();
    let stage1_m12 = apply_priors(&mask, &morph_params);

    let (filtered, fp_decisions) = fp_filter::score_and_filter(&stage1_m12, img, &cfg.fp_params())
        .map_err(|e| e.in_stage("fp_filter"))?;
    let mut stage1_m123 = filtered;
    stage1_m123.compact();

    let tiles = TileGrid::new(img.width(), img.height(), cfg.tile_size)
        .map_err(|e| e.in_stage("selftrain"))?;
    let (relabeled, relabel) =
        selftrain::stage2_pass(&stage1_m123, &recolored, &tiles, &cfg.selftrain_params())
            .map_err(|e| e.in_stage("selftrain"))?;
    let final_map = morph::refine_shapes(&relabeled, &morph_params);

    Ok(StageOutputs {
        stage1_m12,
        stage1_m123,
        final_map,
        block_fits,
        fp_decisions,
        relabel,
    })
}

/// [`run`] on a dedicated pool of `workers` threads. Results do not depend
/// on the worker count.
pub fn run_with_workers(img: &RgbImage, cfg: &PipelineConfig, workers: usize) -> Result<StageOutputs> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))?;
    pool.install(|| run(img, cfg))
}
