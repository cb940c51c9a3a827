use hunis::blockgrid::IntensityBlock;
use hunis::threshold::{
    bin_index, binarize_block, build_histogram, correct_threshold, find_peaks, BimodalFit, Mode,
    PeakParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn block(intensity: Vec<f64>) -> IntensityBlock {
    IntensityBlock {
        intensity,
        eigenvector: [1.0, 0.0, 0.0],
        flipped: false,
        flat: false,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn correction_direction_follows_slope(
        t1 in 0.0f64..0.45,
        gap in 0.1f64..0.55,
        h1 in 0.05f64..1.0,
        h2 in 0.05f64..1.0,
        lambda in 0.01f64..0.99,
    ) {
        let t2 = t1 + gap;
        let fit = correct_threshold(&BimodalFit::bimodal((t1, h1), (t2, h2)), lambda).unwrap();
        prop_assert_eq!(fit.t_o, (t1 + t2) / 2.0);
        prop_assert!(fit.t_prime > t1 && fit.t_prime < t2);
        if h2 > h1 {
            prop_assert!(fit.t_c > fit.t_o);
            prop_assert!(fit.t_prime < fit.t_o);
        } else if h1 > h2 {
            prop_assert!(fit.t_c < fit.t_o);
            prop_assert!(fit.t_prime > fit.t_o);
        } else {
            prop_assert_eq!(fit.t_prime, fit.t_o);
        }
    }

    #[test]
    fn equal_heights_leave_midpoint(t1 in 0.0f64..0.4, gap in 0.1f64..0.6, h in 0.01f64..1.0, lambda in 0.01f64..0.99) {
        let fit = correct_threshold(&BimodalFit::bimodal((t1, h), (t1 + gap, h)), lambda).unwrap();
        prop_assert_eq!(fit.t_prime, fit.t_o);
    }

    #[test]
    fn correction_grows_with_lambda(
        t1 in 0.0f64..0.45,
        gap in 0.1f64..0.55,
        h1 in 0.05f64..1.0,
        h2 in 0.05f64..1.0,
        l1 in 0.01f64..0.99,
        l2 in 0.01f64..0.99,
    ) {
        let (lo, hi) = if l1 <= l2 { (l1, l2) } else { (l2, l1) };
        let base = BimodalFit::bimodal((t1, h1), (t1 + gap, h2));
        let a = correct_threshold(&base, lo).unwrap();
        let b = correct_threshold(&base, hi).unwrap();
        let raw = |f: &BimodalFit, l: f64| (l * (f.t_o - f.t_c)).abs();
        prop_assert!(raw(&a, lo) <= raw(&b, hi));
        prop_assert!((a.t_prime - a.t_o).abs() <= (b.t_prime - b.t_o).abs());
    }

    #[test]
    fn occurrence_is_normalized(values in prop::collection::vec(0.0f64..=1.0, 1..400), radius in 0usize..4) {
        let h = build_histogram(&block(values), 64, radius);
        prop_assert_eq!(h.bins(), 64);
        prop_assert!(h.occurrence.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!(h.occurrence.contains(&1.0));
    }
}

#[test]
fn non_bimodal_fits_are_rejected() {
    let fit = BimodalFit::from_peaks(Mode::UnimodalLight, None, None);
    assert!(correct_threshold(&fit, 0.3).is_err());
}

#[test]
fn constant_block_gives_plateau() {
    let h = build_histogram(&block(vec![0.5; 100]), 64, 2);
    let nonzero = h.occurrence.iter().filter(|&&v| v > 0.0).count();
    assert!(nonzero <= 5);
    assert!(h.occurrence[bin_index(0.5, 64)] == 1.0);
}

#[test]
fn uniform_block_is_nearly_flat() {
    let values: Vec<f64> = (0..6400).map(|i| (i as f64 + 0.5) / 6400.0).collect();
    let h = build_histogram(&block(values), 64, 2);
    // edge bins lose mass to zero padding, the interior stays at 1
    assert!(h.occurrence[2..62].iter().all(|&v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn equal_mixture_has_two_equal_peaks() {
    let mut values = vec![0.2; 500];
    values.extend(std::iter::repeat_n(0.8, 500));
    let h = build_histogram(&block(values), 64, 2);
    let fit = find_peaks(&h, &PeakParams::default());
    assert_eq!(fit.mode, Mode::Bimodal);
    let (p1, p2) = (fit.peak1.unwrap(), fit.peak2.unwrap());
    assert_eq!(p1.bin as usize, bin_index(0.2, 64));
    assert_eq!(p2.bin as usize, bin_index(0.8, 64));
    assert_eq!(p1.h, p2.h);
}

#[test]
fn single_light_peak_is_unimodal_light() {
    let h = build_histogram(&block(vec![0.9; 300]), 64, 2);
    let fit = find_peaks(&h, &PeakParams::default());
    assert_eq!(fit.mode, Mode::UnimodalLight);
    assert!(binarize_block(&block(vec![0.9; 300]), &fit).iter().all(|&f| !f));
    let h = build_histogram(&block(vec![0.1; 300]), 64, 2);
    assert_eq!(find_peaks(&h, &PeakParams::default()).mode, Mode::UnimodalDark);
}

#[test]
fn binarize_threshold_is_strict() {
    let mut fit = BimodalFit::bimodal((0.2, 1.0), (0.8, 1.0));
    fit = correct_threshold(&fit, 0.3).unwrap();
    assert_eq!(fit.t_prime, 0.5);
    let b = block(vec![0.3, 0.7, 0.5]);
    assert_eq!(binarize_block(&b, &fit), vec![true, false, false]);
}

/// Mixture of a dark and a light Gaussian cluster; returns intensities and
/// planted labels.
fn mixture(rng: &mut ChaCha8Rng, n: usize, frac: f64, lo: f64, hi: f64, sigma: f64) -> (Vec<f64>, Vec<bool>) {
    let d = Normal::new(0.0, sigma).unwrap();
    let mut v = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for i in 0..n {
        let fg = (i as f64) < frac * n as f64;
        let c = if fg { lo } else { hi };
        v.push((c + d.sample(rng)).clamp(0.0, 1.0));
        truth.push(fg);
    }
    (v, truth)
}

fn binarize(values: &[f64], lambda: Option<f64>) -> Option<Vec<bool>> {
    let b = block(values.to_vec());
    let fit = find_peaks(&build_histogram(&b, 64, 2), &PeakParams::default());
    if fit.mode != Mode::Bimodal {
        return None;
    }
    let mut fit = correct_threshold(&fit, lambda.unwrap_or(0.3)).unwrap();
    if lambda.is_none() {
        fit.t_prime = fit.t_o;
    }
    Some(binarize_block(&b, &fit))
}

#[test]
fn planted_fraction_is_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (values, truth) = mixture(&mut rng, 2500, 0.2, 0.2, 0.8, 0.03);
    let fg = binarize(&values, Some(0.3)).expect("bimodal");
    let planted = truth.iter().filter(|&&t| t).count() as f64;
    let found = fg.iter().filter(|&&t| t).count() as f64;
    assert!((found - planted).abs() <= 0.03 * planted, "{found} vs {planted}");
}

fn worst_misclassification(seed: u64, balanced: bool, lambda: Option<f64>) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let sep = rng.gen_range(0.4..0.7);
        let lo = rng.gen_range(0.1..0.9 - sep);
        let sigma = rng.gen_range(0.01..=0.05);
        let frac = if balanced { 0.5 } else { rng.gen_range(0.2..0.8) };
        let (values, truth) = mixture(&mut rng, 2500, frac, lo, lo + sep, sigma);
        let fg = binarize(&values, lambda).expect("well separated clusters are bimodal");
        let wrong = fg.iter().zip(&truth).filter(|(a, b)| a != b).count() as f64 / 2500.0;
        worst = worst.max(wrong);
    }
    worst
}

#[test]
fn midpoint_misclassification_below_three_percent() {
    let worst = worst_misclassification(5, false, None);
    assert!(worst < 0.03, "worst misclassification {worst}");
}

#[test]
fn corrected_misclassification_below_three_percent_when_balanced() {
    let worst = worst_misclassification(6, true, Some(0.3));
    assert!(worst < 0.03, "worst misclassification {worst}");
}

#[test]
fn correction_favours_the_taller_cluster() {
    // a minority dark cluster pulls the threshold toward it
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (values, _) = mixture(&mut rng, 2500, 0.25, 0.3, 0.75, 0.03);
    let b = block(values);
    let fit = find_peaks(&build_histogram(&b, 64, 2), &PeakParams::default());
    let fit = correct_threshold(&fit, 0.3).unwrap();
    assert!(fit.t_prime < fit.t_o);
}
