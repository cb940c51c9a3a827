//! Adaptive threshold correction on a bimodal block.
//!
//! Builds a block with a small dark cluster and a large light cluster,
//! detects the two peaks and shows how the corrected threshold moves away
//! from the midpoint as `lambda` grows.

use hunis::blockgrid::IntensityBlock;
use hunis::threshold::{binarize_block, build_histogram, correct_threshold, find_peaks, BimodalFit, PeakParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.04).unwrap();
    let intensity: Vec<f64> = (0..2500)
        .map(|i| {
            let centre: f64 = if i < 500 { 0.25 } else { 0.72 };
            (centre + noise.sample(&mut rng)).clamp(0.0, 1.0)
        })
        .collect();
    let block = IntensityBlock { intensity, eigenvector: [1.0, 0.0, 0.0], flipped: false, flat: false };

    let hist = build_histogram(&block, 64, 2);
    let fit = find_peaks(&hist, &PeakParams::default());
    let (p1, p2) = (fit.peak1.expect("dark peak"), fit.peak2.expect("light peak"));
    println!("peaks: t1 {:.3} (h {:.3}), t2 {:.3} (h {:.3})", p1.t, p1.h, p2.t, p2.h);

    for lambda in [0.1, 0.3, 0.5, 0.9] {
        let f = correct_threshold(&fit, lambda).unwrap();
        let fg = binarize_block(&block, &f).iter().filter(|&&b| b).count();
        println!("lambda {lambda:.1}: T_o {:.4}  T_c {:.4}  T' {:.4}  foreground {fg}", f.t_o, f.t_c, f.t_prime);
    }

    let fixed = correct_threshold(&BimodalFit::bimodal((0.235, 0.9), (0.706, 0.5)), 0.3).unwrap();
    println!("peaks (0.235, 0.9) / (0.706, 0.5), lambda 0.3: T' = {:.6}", fixed.t_prime);
}
