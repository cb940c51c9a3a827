//! Command-line front end: `segment`, `eval` and `ablate`.
//!
//! Exit codes are 0 on success, 1 when some images failed but the rest were
//! processed, and 2 for usage and contract errors.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fp_filter::write_decisions_csv;
use crate::imageio;
use crate::metrics;
use crate::pipeline::{self, PipelineConfig, StageOutputs};
use crate::raster::LabelMap;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Header row of the ablation table.
pub const ABLATION_HEADER: [&str; 4] = [
    "Stages",
    "Stage-1 (Modules 1&2)",
    "Stage-1 (Modules 1&2&3)",
    "Stages 1&2",
];

/// Unsupervised nuclei instance segmentation for H&E images.
#[derive(Debug, Parser)]
#[command(name = "hunis", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Segment one image or every row of a manifest.
    Segment(SegmentArgs),
    /// Score predicted label maps against ground truth.
    Eval(EvalArgs),
    /// Mean AJI after each pipeline stage.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// An RGB image, or a CSV manifest with an `image` column.
    pub input: PathBuf,
    /// `key = value` configuration file; `HUNIS_<KEY>` variables override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "hunis-out")]
    pub out: PathBuf,
    /// Also write the intermediate label maps and stage reports.
    #[arg(long)]
    pub stages: bool,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Write a boundary overlay next to each label map.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    pub overlay: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Manifest whose `annotation` column holds predicted label maps.
    pub pred_manifest: PathBuf,
    /// Manifest whose `annotation` column holds ground truth (label PNG or XML).
    pub gt_manifest: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Manifest of input images.
    pub manifest: PathBuf,
    /// Ground-truth manifest, row-aligned with `manifest`.
    pub gt_manifest: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub workers: Option<usize>,
}

/// One manifest row. Relative paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub image: PathBuf,
    pub annotation: Option<PathBuf>,
}

/// CSV with header `image,annotation`; the annotation column may be absent
/// or empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub path: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |message: String| Error::Manifest {
            path: path.to_path_buf(),
            message,
        };
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| bad(e.to_string()))?;
        let headers = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let image_col = col("image").ok_or_else(|| bad("missing `image` column".into()))?;
        let ann_col = col("annotation");
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |s: &str| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mut rows = Vec::new();
        for (n, record) in reader.records().enumerate() {
            let record = record.map_err(|e| bad(e.to_string()))?;
            let image = record.get(image_col).unwrap_or("");
            if image.is_empty() {
                return Err(bad(format!("row {}: empty image path", n + 1)));
            }
            let annotation = ann_col
                .and_then(|c| record.get(c))
                .filter(|s| !s.is_empty())
                .map(resolve);
            rows.push(ManifestRow {
                image: resolve(image),
                annotation,
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            rows,
        })
    }

    pub fn write(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
        let path = path.as_ref();
        let bad = |e: csv::Error| Error::Manifest {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(bad)?;
        w.write_record(["image", "annotation"]).map_err(bad)?;
        for r in rows {
            let ann = r
                .annotation
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default();
            w.write_record([r.image.display().to_string(), ann]).map_err(bad)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Load the config file (or the defaults), then apply `HUNIS_*`
/// environment overrides.
pub fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    Ok(cfg)
}

fn is_xml(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("xml"))
}

fn is_manifest(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Load a label map from a PNG or rasterize an annotation XML at
/// `dims`.
pub fn load_annotation(path: &Path, dims: Option<(usize, usize)>) -> Result<LabelMap> {
    if is_xml(path) {
        let (w, h) = dims.ok_or_else(|| Error::Unsupported {
            path: path.to_path_buf(),
            reason: "XML annotation needs the image dimensions".into(),
        })?;
        let (polys, _) = imageio::parse_annotation_xml(path)?;
        Ok(imageio::rasterize(&polys, w, h))
    } else {
        imageio::load_labelmap(path)
    }
}

fn image_dimensions(path: &Path) -> Result<(usize, usize)> {
    image::image_dimensions(path)
        .map(|(w, h)| (w as usize, h as usize))
        .map_err(|e| Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn pool(workers: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = workers
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Error::config("workers", e.to_string()))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_outputs(
    img_path: &Path,
    outdir: &Path,
    outputs: &StageOutputs,
    img: &crate::RgbImage,
    args: &SegmentArgs,
) -> Result<PathBuf> {
    let name = stem(img_path);
    let final_path = outdir.join(format!("{name}_final.png"));
    imageio::write_labelmap(&outputs.final_map, &final_path)?;
    if args.overlay {
        imageio::write_overlay(img, &outputs.final_map, outdir.join(format!("{name}_overlay.png")))?;
    }
    if args.stages {
        imageio::write_labelmap(&outputs.stage1_m12, outdir.join(format!("{name}_s1m12.png")))?;
        imageio::write_labelmap(&outputs.stage1_m123, outdir.join(format!("{name}_s1m123.png")))?;
        let fp = outdir.join(format!("{name}_fp.csv"));
        let file = std::fs::File::create(&fp).map_err(io_err(&fp))?;
        write_decisions_csv(file, &outputs.fp_decisions).map_err(|e| Error::Manifest {
            path: fp.clone(),
            message: e.to_string(),
        })?;
        let rl = outdir.join(format!("{name}_relabel.csv"));
        let file = std::fs::File::create(&rl).map_err(io_err(&rl))?;
        outputs.relabel.write_csv(file).map_err(|e| Error::Manifest {
            path: rl.clone(),
            message: e.to_string(),
        })?;
    }
    Ok(final_path)
}

/// Segment every input image. Also writes `predictions.csv` into the output
/// directory, pairing each image with its final label map, ready for
/// `eval`.
pub fn cmd_segment(args: &SegmentArgs) -> i32 {
    let cfg = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let images: Vec<PathBuf> = if is_manifest(&args.input) {
        match Manifest::load(&args.input) {
            Ok(m) => m.rows.into_iter().map(|r| r.image).collect(),
            Err(e) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        }
    } else {
        vec![args.input.clone()]
    };
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        eprintln!("error: {}: {e}", args.out.display());
        return EXIT_USAGE;
    }
    let pool = match pool(args.workers) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let results: Vec<Result<PathBuf>> = pool.install(|| {
        images
            .par_iter()
            .map(|path| {
                let img = imageio::load_rgb(path)?;
                let outputs = pipeline::run(&img, &cfg)?;
                write_outputs(path, &args.out, &outputs, &img, args)
            })
            .collect()
    });
    let mut predictions = Vec::new();
    let mut failed = 0;
    for (path, res) in images.iter().zip(results) {
        match res {
            Ok(labels) => predictions.push(ManifestRow {
                image: std::path::absolute(path).unwrap_or_else(|_| path.clone()),
                annotation: Some(std::path::absolute(&labels).unwrap_or(labels)),
            }),
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", path.display());
            }
        }
    }
    if let Err(e) = Manifest::write(args.out.join("predictions.csv"), &predictions) {
        eprintln!("error: {e}");
        return EXIT_PARTIAL;
    }
    if failed > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

fn aligned_manifests(a: &Path, b: &Path) -> std::result::Result<(Manifest, Manifest), String> {
    let ma = Manifest::load(a).map_err(|e| e.to_string())?;
    let mb = Manifest::load(b).map_err(|e| e.to_string())?;
    if ma.rows.is_empty() || mb.rows.is_empty() {
        return Err("empty manifest".into());
    }
    if ma.rows.len() != mb.rows.len() {
        return Err(format!(
            "row count mismatch: {} has {}, {} has {}",
            a.display(),
            ma.rows.len(),
            b.display(),
            mb.rows.len()
        ));
    }
    Ok((ma, mb))
}

fn annotation_of<'a>(row: &'a ManifestRow, manifest: &Manifest) -> std::result::Result<&'a Path, String> {
    row.annotation.as_deref().ok_or_else(|| {
        format!(
            "{}: no annotation for {}",
            manifest.path.display(),
            row.image.display()
        )
    })
}

fn eval_row(gt: &ManifestRow, pred_ann: &Path, gt_ann: &Path) -> Result<(f64, f64)> {
    let dims_from = |ann: &Path, row: &ManifestRow| -> Result<(usize, usize)> {
        if is_xml(ann) {
            image_dimensions(&row.image)
        } else {
            let m = imageio::load_labelmap(ann)?;
            Ok((m.width(), m.height()))
        }
    };
    let pred_map = if is_xml(pred_ann) {
        load_annotation(pred_ann, Some(dims_from(gt_ann, gt)?))?
    } else {
        imageio::load_labelmap(pred_ann)?
    };
    let gt_map = load_annotation(gt_ann, Some((pred_map.width(), pred_map.height())))?;
    let a = metrics::aji(&gt_map, &pred_map)?;
    let d = metrics::dice(&gt_map, &pred_map)?;
    Ok((a.aji, d))
}

/// Per-image AJI and Dice with a final `mean` row, CSV header
/// `image,aji,dice`.
pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> i32 {
    let (pm, gm) = match aligned_manifests(&args.pred_manifest, &args.gt_manifest) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let mut anns = Vec::with_capacity(pm.rows.len());
    for (p, g) in pm.rows.iter().zip(&gm.rows) {
        match (annotation_of(p, &pm), annotation_of(g, &gm)) {
            (Ok(a), Ok(b)) => anns.push((a, b)),
            (Err(e), _) | (_, Err(e)) => {
                eprintln!("error: {e}");
                return EXIT_USAGE;
            }
        }
    }
    let mut w = csv::Writer::from_writer(out);
    if w.write_record(["image", "aji", "dice"]).is_err() {
        return EXIT_USAGE;
    }
    let mut rows = Vec::new();
    let mut failed = 0;
    for (g, (pa, ga)) in gm.rows.iter().zip(anns) {
        let name = stem(&g.image);
        match eval_row(g, pa, ga) {
            Ok((aji, dice)) => {
                rows.push((aji, dice));
                let _ = w.write_record([name, format!("{aji:.6}"), format!("{dice:.6}")]);
            }
            Err(e) => {
                failed += 1;
                eprintln!("{name}: {e}");
            }
        }
    }
    let n = rows.len().max(1) as f64;
    let mean_aji = rows.iter().map(|r| r.0).sum::<f64>() / n;
    let mean_dice = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let written = w
        .write_record(["mean".to_string(), format!("{mean_aji:.6}"), format!("{mean_dice:.6}")])
        .and_then(|_| w.flush().map_err(csv::Error::from));
    if written.is_err() {
        return EXIT_USAGE;
    }
    if rows.is_empty() {
        EXIT_USAGE
    } else if failed > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

/// Mean AJI of the three stage outputs over the manifest, as the two-row
/// table `Stages,...` / `AJI,...`.
pub fn cmd_ablate(args: &AblateArgs, out: &mut dyn Write) -> i32 {
    let cfg = match load_config(args.config.as_deref()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let (im, gm) = match aligned_manifests(&args.manifest, &args.gt_manifest) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    for g in &gm.rows {
        if let Err(e) = annotation_of(g, &gm) {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    }
    let pool = match pool(args.workers) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_USAGE;
        }
    };
    let results: Vec<Result<[f64; 3]>> = pool.install(|| {
        im.rows
            .par_iter()
            .zip(gm.rows.par_iter())
            .map(|(i, g)| {
                let img = imageio::load_rgb(&i.image)?;
                let gt_path = g.annotation.as_deref().expect("checked above");
                let gt = load_annotation(gt_path, Some((img.width(), img.height())))?;
                let outputs = pipeline::run(&img, &cfg)?;
                let mut scores = [0.0; 3];
                for (s, map) in scores.iter_mut().zip([
                    &outputs.stage1_m12,
                    &outputs.stage1_m123,
                    &outputs.final_map,
                ]) {
                    *s = metrics::aji(&gt, map)?.aji;
                }
                Ok(scores)
            })
            .collect()
    });
    let mut sums = [0.0; 3];
    let mut ok = 0usize;
    let mut failed = 0usize;
    for (row, res) in im.rows.iter().zip(results) {
        match res {
            Ok(s) => {
                ok += 1;
                for k in 0..3 {
                    sums[k] += s[k];
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", row.image.display());
            }
        }
    }
    if ok == 0 {
        return EXIT_USAGE;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut row = vec!["AJI".to_string()];
    row.extend(sums.iter().map(|s| format!("{:.6}", s / ok as f64)));
    let written = w
        .write_record(ABLATION_HEADER)
        .and_then(|_| w.write_record(&row))
        .and_then(|_| w.flush().map_err(csv::Error::from));
    if written.is_err() {
        return EXIT_USAGE;
    }
    if failed > 0 {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    }
}

/// Parse `args` (program name first) and dispatch.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let stdout = std::io::stdout();
    match &cli.command {
        Command::Segment(a) => cmd_segment(a),
        Command::Eval(a) => cmd_eval(a, &mut stdout.lock()),
        Command::Ablate(a) => cmd_ablate(a, &mut stdout.lock()),
    }
}
