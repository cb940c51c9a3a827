//! Stage ablation on a synthetic planted-nuclei suite.
//!
//! `cargo run --release --example ablation_suite -- [images] [out_dir]`
//!
//! Writes the suite as PNGs with image and ground-truth manifests, then
//! runs the same ablation as `hunis ablate` and prints its table. The
//! written manifests can be fed to the CLI directly.

use std::path::PathBuf;

use hunis::cli::{self, AblateArgs, Manifest, ManifestRow};
use hunis::imageio;
use hunis::synth::{self, SynthConfig};

fn main() -> hunis::Result<()> {
    let mut args = std::env::args().skip(1);
    let count: usize = args.next().and_then(|n| n.parse().ok()).unwrap_or(20);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic-suite".into()));
    std::fs::create_dir_all(&out).map_err(|source| hunis::Error::Io { path: out.clone(), source })?;

    let mut images = Vec::new();
    let mut truth = Vec::new();
    for (k, img) in synth::planted_suite(&SynthConfig::default(), count, 2024).into_iter().enumerate() {
        let ip = out.join(format!("synth{k:02}.png"));
        let gp = out.join(format!("synth{k:02}_gt.png"));
        imageio::save_rgb(&img.rgb, &ip)?;
        imageio::write_labelmap(&img.truth, &gp)?;
        images.push(ManifestRow { image: ip.clone(), annotation: None });
        truth.push(ManifestRow { image: ip, annotation: Some(gp) });
    }
    let manifest = out.join("images.csv");
    let gt_manifest = out.join("gt.csv");
    Manifest::write(&manifest, &images)?;
    Manifest::write(&gt_manifest, &truth)?;
    println!("{count} images in {}", out.display());

    let code = cli::cmd_ablate(
        &AblateArgs { manifest, gt_manifest, config: None, workers: None },
        &mut std::io::stdout(),
    );
    std::process::exit(code);
}
