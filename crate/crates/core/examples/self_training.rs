//! Stage-2 self-training from noisy pseudo-labels.
//!
//! Dilates the true nuclei by two pixels to imitate a loose stage-1
//! result, then lets the per-tile colour classifier relabel the pixels it
//! disagrees with confidently.

use hunis::fp_filter::TileGrid;
use hunis::selftrain::{stage2_pass, SelfTrainParams};
use hunis::stain::{self, StainMatrix};
use hunis::synth::{self, SynthConfig};

fn main() -> hunis::Result<()> {
    let cfg = SynthConfig { width: 400, height: 400, nuclei: (80, 80), artifacts: (0, 0), ..SynthConfig::default() };
    let img = synth::generate(&cfg, 3);
    let h = stain::deconvolve_h(&img.rgb, &StainMatrix::default());
    let colors = stain::enhance_contrast(&h, 1.0, 99.0)?.recolored();
    let pseudo = synth::dilate_labels(&img.truth, 2);
    let tiles = TileGrid::new(colors.width(), colors.height(), 200)?;

    println!("pseudo-labels: pixel accuracy {:.4}", synth::pixel_accuracy(&img.truth, &pseudo));
    for tau_flip in [0.6, 0.9, 0.99, 1.0] {
        let params = SelfTrainParams { tau_flip, ..SelfTrainParams::default() };
        let (out, report) = stage2_pass(&pseudo, &colors, &tiles, &params)?;
        println!(
            "tau_flip {tau_flip:.2}: {:5} flips, pixel accuracy {:.4}",
            report.total_flips(),
            synth::pixel_accuracy(&img.truth, &out)
        );
    }
    let (_, report) = stage2_pass(&pseudo, &colors, &tiles, &SelfTrainParams::default())?;
    report.write_csv(std::io::stdout()).expect("stdout");
    Ok(())
}
