//! Segment one H&E image end to end.
//!
//! `cargo run --release --example segment_image -- [input.png] [out_dir]`
//!
//! Without an input a synthetic tile is generated. Writes the final label
//! map, the two stage-1 captures and a boundary overlay.

use std::path::PathBuf;

use hunis::pipeline::{self, PipelineConfig};
use hunis::synth::{self, SynthConfig};
use hunis::{imageio, metrics};

fn main() -> hunis::Result<()> {
    let mut args = std::env::args().skip(1);
    let input = args.next().filter(|s| !s.is_empty()).map(PathBuf::from);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "segment-out".into()));
    std::fs::create_dir_all(&out).map_err(|source| hunis::Error::Io { path: out.clone(), source })?;

    let (img, truth) = match &input {
        Some(p) => (imageio::load_rgb(p)?, None),
        None => {
            let s = synth::generate(&SynthConfig::default(), 1);
            (s.rgb, Some(s.truth))
        }
    };

    let cfg = PipelineConfig::default();
    let stages = pipeline::run(&img, &cfg)?;
    let modes: Vec<String> = stages.mode_counts().iter().map(|(m, n)| format!("{m:?} {n}")).collect();
    println!("blocks: {}", modes.join(", "));
    for (name, map) in [
        ("s1m12", &stages.stage1_m12),
        ("s1m123", &stages.stage1_m123),
        ("final", &stages.final_map),
    ] {
        imageio::write_labelmap(map, out.join(format!("{name}.png")))?;
        match &truth {
            Some(t) => println!("{name:>7}: {:3} instances, AJI {:.4}", map.instance_count(), metrics::aji(t, map)?.aji),
            None => println!("{name:>7}: {:3} instances", map.instance_count()),
        }
    }
    let removed = stages.fp_decisions.iter().filter(|d| d.removed).count();
    println!("false positives removed: {removed}; stage-2 pixel flips: {}", stages.relabel.total_flips());
    imageio::write_overlay(&img, &stages.final_map, out.join("overlay.png"))?;
    println!("wrote {}", out.display());
    Ok(())
}
