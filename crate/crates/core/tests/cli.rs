use std::path::{Path, PathBuf};
use std::process::Command;

use hunis::cli::{self, AblateArgs, EvalArgs, Manifest, ManifestRow, SegmentArgs, EXIT_OK, EXIT_PARTIAL, EXIT_USAGE};
use hunis::imageio;
use hunis::metrics;
use hunis::synth::{self, SynthConfig};

struct Dataset {
    _dir: tempfile::TempDir,
    root: PathBuf,
    images: PathBuf,
    gt: PathBuf,
}

/// `n` small synthetic images with label-PNG truth and both manifests.
fn dataset(n: usize) -> Dataset {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let cfg = SynthConfig {
        width: 160,
        height: 160,
        nuclei: (15, 25),
        ..SynthConfig::default()
    };
    let mut img_rows = Vec::new();
    let mut gt_rows = Vec::new();
    for (k, img) in synth::planted_suite(&cfg, n, 40).into_iter().enumerate() {
        let ip = root.join(format!("img{k}.png"));
        let gp = root.join(format!("img{k}_gt.png"));
        imageio::save_rgb(&img.rgb, &ip).unwrap();
        imageio::write_labelmap(&img.truth, &gp).unwrap();
        img_rows.push(ManifestRow { image: ip.clone(), annotation: None });
        gt_rows.push(ManifestRow { image: ip, annotation: Some(gp) });
    }
    let images = root.join("images.csv");
    let gt = root.join("gt.csv");
    Manifest::write(&images, &img_rows).unwrap();
    Manifest::write(&gt, &gt_rows).unwrap();
    Dataset { _dir: dir, root, images, gt }
}

fn segment_args(input: &Path, out: &Path) -> SegmentArgs {
    SegmentArgs {
        input: input.to_path_buf(),
        config: None,
        out: out.to_path_buf(),
        stages: false,
        workers: Some(2),
        overlay: true,
    }
}

fn eval_to_string(pred: &Path, gt: &Path) -> (i32, String) {
    let mut buf = Vec::new();
    let code = cli::cmd_eval(
        &EvalArgs {
            pred_manifest: pred.to_path_buf(),
            gt_manifest: gt.to_path_buf(),
        },
        &mut buf,
    );
    (code, String::from_utf8(buf).unwrap())
}

#[test]
fn segment_one_png() {
    let ds = dataset(1);
    let out = ds.root.join("out");
    assert_eq!(cli::cmd_segment(&segment_args(&ds.root.join("img0.png"), &out)), EXIT_OK);
    let map = imageio::load_labelmap(out.join("img0_final.png")).unwrap();
    assert_eq!((map.width(), map.height()), (160, 160));
    assert!(map.instance_count() > 0);
    assert!(out.join("img0_overlay.png").exists());
    assert!(!out.join("img0_s1m12.png").exists());
    let preds = Manifest::load(out.join("predictions.csv")).unwrap();
    assert_eq!(preds.rows.len(), 1);
    assert_eq!(preds.rows[0].annotation.as_deref(), Some(std::path::absolute(out.join("img0_final.png")).unwrap().as_path()));
}

#[test]
fn stages_flag_writes_every_capture() {
    let ds = dataset(1);
    let out = ds.root.join("out");
    let args = SegmentArgs {
        stages: true,
        overlay: false,
        ..segment_args(&ds.images, &out)
    };
    assert_eq!(cli::cmd_segment(&args), EXIT_OK);
    for suffix in ["_s1m12.png", "_s1m123.png", "_final.png", "_fp.csv", "_relabel.csv"] {
        assert!(out.join(format!("img0{suffix}")).exists(), "{suffix}");
    }
    assert!(!out.join("img0_overlay.png").exists());
    let fp = std::fs::read_to_string(out.join("img0_fp.csv")).unwrap();
    assert!(fp.starts_with("tile,id,set,similarity,removed"));
}

#[test]
fn bad_manifest_row_is_partial_failure() {
    let ds = dataset(2);
    let mut rows = Manifest::load(&ds.images).unwrap().rows;
    rows.insert(1, ManifestRow { image: ds.root.join("missing.png"), annotation: None });
    let m = ds.root.join("mixed.csv");
    Manifest::write(&m, &rows).unwrap();
    let out = ds.root.join("out");
    assert_eq!(cli::cmd_segment(&segment_args(&m, &out)), EXIT_PARTIAL);
    assert!(out.join("img0_final.png").exists());
    assert!(out.join("img1_final.png").exists());
    assert_eq!(Manifest::load(out.join("predictions.csv")).unwrap().rows.len(), 2);
}

#[test]
fn eval_of_truth_against_itself_is_perfect() {
    let ds = dataset(2);
    let (code, text) = eval_to_string(&ds.gt, &ds.gt);
    assert_eq!(code, EXIT_OK);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0], "image,aji,dice");
    assert_eq!(lines[3], "mean,1.000000,1.000000");
}

#[test]
fn eval_rows_match_direct_metric_calls() {
    let ds = dataset(2);
    let out = ds.root.join("out");
    assert_eq!(cli::cmd_segment(&segment_args(&ds.images, &out)), EXIT_OK);
    let (code, text) = eval_to_string(&out.join("predictions.csv"), &ds.gt);
    assert_eq!(code, EXIT_OK);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    assert_eq!(reader.headers().unwrap(), vec!["image", "aji", "dice"]);
    let records: Vec<csv::StringRecord> = reader.records().map(|r| r.unwrap()).collect();
    assert_eq!(records.len(), 3);
    let (mut sum_a, mut sum_d) = (0.0, 0.0);
    for (k, record) in records.iter().take(2).enumerate() {
        let gt = imageio::load_labelmap(ds.root.join(format!("img{k}_gt.png"))).unwrap();
        let pred = imageio::load_labelmap(out.join(format!("img{k}_final.png"))).unwrap();
        let a = metrics::aji(&gt, &pred).unwrap().aji;
        let d = metrics::dice(&gt, &pred).unwrap();
        sum_a += a;
        sum_d += d;
        assert_eq!(&record[0], format!("img{k}"));
        assert_eq!(&record[1], format!("{a:.6}"));
        assert_eq!(&record[2], format!("{d:.6}"));
    }
    assert_eq!(&records[2][1], format!("{:.6}", sum_a / 2.0));
    assert_eq!(&records[2][2], format!("{:.6}", sum_d / 2.0));
}

#[test]
fn eval_rasterizes_xml_truth() {
    let ds = dataset(1);
    let xml = ds.root.join("img0.xml");
    std::fs::write(
        &xml,
        "<Annotations><Annotation><Regions>\
         <Region Id=\"1\"><Vertices><Vertex X=\"10\" Y=\"10\"/><Vertex X=\"30\" Y=\"10\"/><Vertex X=\"30\" Y=\"30\"/><Vertex X=\"10\" Y=\"30\"/></Vertices></Region>\
         </Regions></Annotation></Annotations>",
    )
    .unwrap();
    let (polys, _) = imageio::parse_annotation_xml(&xml).unwrap();
    let raster = imageio::rasterize(&polys, 160, 160);
    let pred_png = ds.root.join("pred.png");
    imageio::write_labelmap(&raster, &pred_png).unwrap();
    let image = ds.root.join("img0.png");
    Manifest::write(ds.root.join("p.csv"), &[ManifestRow { image: image.clone(), annotation: Some(pred_png) }]).unwrap();
    Manifest::write(ds.root.join("g.csv"), &[ManifestRow { image, annotation: Some(xml) }]).unwrap();
    let (code, text) = eval_to_string(&ds.root.join("p.csv"), &ds.root.join("g.csv"));
    assert_eq!(code, EXIT_OK);
    assert!(text.ends_with("mean,1.000000,1.000000\n"), "{text}");
}

#[test]
fn eval_contract_errors_exit_two() {
    let ds = dataset(2);
    let empty = ds.root.join("empty.csv");
    Manifest::write(&empty, &[]).unwrap();
    assert_eq!(eval_to_string(&empty, &empty).0, EXIT_USAGE);

    let one = ds.root.join("one.csv");
    let rows = Manifest::load(&ds.gt).unwrap().rows;
    Manifest::write(&one, &rows[..1]).unwrap();
    assert_eq!(eval_to_string(&one, &ds.gt).0, EXIT_USAGE);

    // the image manifest carries no annotations
    assert_eq!(eval_to_string(&ds.images, &ds.gt).0, EXIT_USAGE);
    assert_eq!(eval_to_string(&ds.root.join("nope.csv"), &ds.gt).0, EXIT_USAGE);
}

#[test]
fn ablate_single_image() {
    let ds = dataset(1);
    let mut buf = Vec::new();
    let args = AblateArgs {
        manifest: ds.images.clone(),
        gt_manifest: ds.gt.clone(),
        config: None,
        workers: Some(1),
    };
    assert_eq!(cli::cmd_ablate(&args, &mut buf), EXIT_OK);
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "Stages,Stage-1 (Modules 1&2),Stage-1 (Modules 1&2&3),Stages 1&2");
    let values: Vec<f64> = lines[1].split(',').skip(1).map(|v| v.parse().unwrap()).collect();
    assert_eq!(values.len(), 3);
    assert!(lines[1].starts_with("AJI,"));
    assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn ablate_without_truth_exits_two() {
    let ds = dataset(1);
    let run = |gt: PathBuf| {
        cli::cmd_ablate(
            &AblateArgs { manifest: ds.images.clone(), gt_manifest: gt, config: None, workers: Some(1) },
            &mut Vec::new(),
        )
    };
    assert_eq!(run(ds.root.join("absent.csv")), EXIT_USAGE);
    assert_eq!(run(ds.images.clone()), EXIT_USAGE);
    let broken = ds.root.join("broken.csv");
    Manifest::write(&broken, &[ManifestRow { image: ds.root.join("img0.png"), annotation: Some(ds.root.join("gone.png")) }]).unwrap();
    assert_eq!(run(broken), EXIT_USAGE);
}

#[test]
fn manifest_paths_resolve_against_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    std::fs::write(&m, "image, annotation\na.png, a.xml\n/abs/b.png,\n").unwrap();
    let loaded = Manifest::load(&m).unwrap();
    assert_eq!(loaded.rows[0].image, dir.path().join("a.png"));
    assert_eq!(loaded.rows[0].annotation, Some(dir.path().join("a.xml")));
    assert_eq!(loaded.rows[1].image, PathBuf::from("/abs/b.png"));
    assert_eq!(loaded.rows[1].annotation, None);
    std::fs::write(&m, "annotation\nx.xml\n").unwrap();
    assert!(Manifest::load(&m).is_err());
    std::fs::write(&m, "image\n\"\"\n").unwrap();
    assert!(Manifest::load(&m).is_err());
}

#[test]
fn argument_errors_and_help() {
    assert_eq!(cli::run(["hunis", "--help"]), EXIT_OK);
    assert_eq!(cli::run(["hunis", "frobnicate"]), EXIT_USAGE);
    assert_eq!(cli::run(["hunis", "eval", "only-one.csv"]), EXIT_USAGE);
    assert_eq!(cli::run(["hunis", "segment", "x.png", "--workers", "many"]), EXIT_USAGE);
}

#[test]
fn binary_segments_and_reports_failures() {
    let ds = dataset(1);
    let out = ds.root.join("bin-out");
    let status = Command::new(env!("CARGO_BIN_EXE_hunis"))
        .args(["segment", ds.root.join("img0.png").to_str().unwrap(), "--out", out.to_str().unwrap(), "--overlay", "false"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_OK));
    assert!(out.join("img0_final.png").exists());
    assert!(!out.join("img0_overlay.png").exists());

    let output = Command::new(env!("CARGO_BIN_EXE_hunis"))
        .args(["segment", ds.root.join("missing.png").to_str().unwrap(), "--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_PARTIAL));
    assert!(String::from_utf8_lossy(&output.stderr).contains("missing.png"));

    let output = Command::new(env!("CARGO_BIN_EXE_hunis"))
        .args(["segment", ds.root.join("img0.png").to_str().unwrap(), "--out", out.to_str().unwrap()])
        .env("HUNIS_LAMBDA", "2")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&output.stderr).contains("lambda"));
}
