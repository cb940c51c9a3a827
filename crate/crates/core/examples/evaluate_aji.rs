//! AJI and Dice between label maps.
//!
//! `cargo run --example evaluate_aji -- gt.png pred.png` scores two label
//! PNGs; without arguments a few small hand-made cases are scored.

use hunis::metrics::{aji, dice};
use hunis::{imageio, LabelMap};

fn report(name: &str, gt: &LabelMap, pred: &LabelMap) -> hunis::Result<()> {
    let b = aji(gt, pred)?;
    println!(
        "{name}: AJI {:.4} ({} / ({} + {} unmatched)), Dice {:.4}",
        b.aji,
        b.intersection,
        b.union,
        b.unmatched_prediction_pixels,
        dice(gt, pred)?
    );
    for (g, p, j) in &b.matches {
        println!("    gt {g} -> pred {p}: jaccard {j:.4}");
    }
    Ok(())
}

fn square(map: &mut LabelMap, x0: usize, y0: usize, n: usize, id: u32) {
    for y in y0..y0 + n {
        for x in x0..x0 + n {
            map.set(x, y, id);
        }
    }
}

fn main() -> hunis::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [gt, pred] = args.as_slice() {
        return report("input", &imageio::load_labelmap(gt)?, &imageio::load_labelmap(pred)?);
    }

    let mut gt = LabelMap::new(8, 8);
    square(&mut gt, 0, 0, 2, 1);
    let mut shifted = LabelMap::new(8, 8);
    square(&mut shifted, 1, 1, 2, 1);
    report("shifted square", &gt, &shifted)?;

    let mut spurious = gt.clone();
    for (x, y) in [(6, 6), (7, 6), (6, 7)] {
        spurious.set(x, y, 2);
    }
    report("spurious prediction", &gt, &spurious)?;

    let mut merged_gt = LabelMap::new(8, 8);
    square(&mut merged_gt, 0, 0, 3, 1);
    square(&mut merged_gt, 4, 0, 3, 2);
    // one prediction spanning both nuclei
    let mut merged = LabelMap::new(8, 8);
    for y in 0..3 {
        for x in 0..7 {
            merged.set(x, y, 1);
        }
    }
    report("merged prediction", &merged_gt, &merged)?;
    Ok(())
}
