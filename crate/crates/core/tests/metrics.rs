mod common;

use hunis::metrics::{aji, dice};
use hunis::LabelMap;
use proptest::prelude::*;

/// Up to six axis-aligned rectangles painted in order, later ones on top.
fn rect_map(w: usize, h: usize) -> impl Strategy<Value = LabelMap> {
    prop::collection::vec((0..w, 0..h, 1..=w, 1..=h), 0..=6).prop_map(move |rects| {
        let mut m = LabelMap::new(w, h);
        for (k, (x, y, rw, rh)) in rects.into_iter().enumerate() {
            for yy in y..(y + rh).min(h) {
                for xx in x..(x + rw).min(w) {
                    m.set(xx, yy, k as u32 + 1);
                }
            }
        }
        m
    })
}

/// Per-pixel ids in 0..=6, so instances may be scattered.
fn noise_map(w: usize, h: usize) -> impl Strategy<Value = LabelMap> {
    prop::collection::vec(prop_oneof![3 => Just(0u32), 2 => 1u32..=6], w * h)
        .prop_map(move |v| LabelMap::from_vec(w, h, v).unwrap())
}

fn pair() -> impl Strategy<Value = (LabelMap, LabelMap)> {
    (1usize..=32, 1usize..=32).prop_flat_map(|(w, h)| {
        prop_oneof![
            (rect_map(w, h), rect_map(w, h)),
            (noise_map(w, h), noise_map(w, h)),
            (rect_map(w, h), noise_map(w, h)),
        ]
    })
}

/// Six 10x10 cells; cell k may hold ground-truth instance k and a predicted
/// sub-rectangle, so no prediction overlaps two ground-truth instances and
/// no ground truth has two candidates.
fn contention_free() -> impl Strategy<Value = (LabelMap, LabelMap)> {
    prop::collection::vec((any::<bool>(), any::<bool>(), 0..5usize, 0..5usize, 1..=5usize, 1..=5usize), 6)
        .prop_map(|cells| {
            let mut gt = LabelMap::new(30, 20);
            let mut pred = LabelMap::new(30, 20);
            for (k, (has_gt, has_pred, x, y, w, h)) in cells.into_iter().enumerate() {
                let (cx, cy) = (k % 3 * 10, k / 3 * 10);
                if has_gt {
                    common::square(&mut gt, cx + 2, cy + 2, 6, 6, k as u32 + 1);
                }
                if has_pred {
                    common::square(&mut pred, cx + x, cy + y, w, h, k as u32 + 1);
                }
            }
            (gt, pred)
        })
}

fn permute(map: &LabelMap, perm: &[u32]) -> LabelMap {
    let labels = map.labels().iter().map(|&l| if l == 0 { 0 } else { perm[l as usize - 1] }).collect();
    LabelMap::from_vec(map.width(), map.height(), labels).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn aji_matches_brute_force((gt, pred) in pair()) {
        let b = aji(&gt, &pred).unwrap();
        let (c, u) = common::brute_aji(&gt, &pred);
        prop_assert_eq!(b.intersection, c);
        prop_assert_eq!(b.union + b.unmatched_prediction_pixels, u);
        if !b.empty {
            let expect = if u == 0 { 0.0 } else { c as f64 / u as f64 };
            prop_assert_eq!(b.aji, expect);
        }
        prop_assert!((0.0..=1.0).contains(&b.aji));
        let d = dice(&gt, &pred).unwrap();
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn aji_of_identity_is_one(map in (1usize..=32, 1usize..=32).prop_flat_map(|(w, h)| noise_map(w, h))) {
        prop_assert_eq!(aji(&map, &map).unwrap().aji, 1.0);
        prop_assert_eq!(dice(&map, &map).unwrap(), 1.0);
    }

    #[test]
    fn aji_ignores_id_permutation(
        (gt, pred) in contention_free(),
        perm in Just((1..=6u32).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let base = aji(&gt, &pred).unwrap().aji;
        let relabeled_pred = aji(&gt, &permute(&pred, &perm)).unwrap().aji;
        prop_assert_eq!(base, relabeled_pred);
        let relabeled_gt = aji(&permute(&gt, &perm), &pred).unwrap().aji;
        prop_assert_eq!(base, relabeled_gt);
    }
}

#[test]
fn fixed_cases() {
    let mut gt = LabelMap::new(4, 4);
    common::square(&mut gt, 0, 0, 2, 2, 1);
    assert!((aji(&gt, &gt).unwrap().aji - 1.0).abs() < 1e-12);

    let mut pred = LabelMap::new(4, 4);
    common::square(&mut pred, 1, 1, 2, 2, 1);
    let b = aji(&gt, &pred).unwrap();
    assert_eq!((b.intersection, b.union + b.unmatched_prediction_pixels), (1, 7));
    assert!((b.aji - 1.0 / 7.0).abs() < 1e-12);

    let mut gt = LabelMap::new(6, 6);
    common::square(&mut gt, 0, 0, 2, 2, 1);
    let mut pred = gt.clone();
    for (x, y) in [(4, 4), (5, 4), (4, 5)] {
        pred.set(x, y, 2);
    }
    let b = aji(&gt, &pred).unwrap();
    assert_eq!(b.unmatched_prediction_pixels, 3);
    assert!((b.aji - 4.0 / 7.0).abs() < 1e-12);
}

#[test]
fn first_claim_wins_in_gt_order() {
    // one prediction covers two ground-truth squares; gt 1 claims it and
    // gt 2 is left with only its own area in the denominator
    let mut gt = LabelMap::new(8, 2);
    common::square(&mut gt, 0, 0, 2, 2, 1);
    common::square(&mut gt, 4, 0, 2, 2, 2);
    let mut pred = LabelMap::new(8, 2);
    common::square(&mut pred, 0, 0, 6, 2, 1);
    let b = aji(&gt, &pred).unwrap();
    assert_eq!(b.matches, vec![(1, 1, 4.0 / 12.0)]);
    assert_eq!((b.intersection, b.union), (4, 16));
    assert_eq!(common::brute_aji(&gt, &pred), (4, 16));
}

#[test]
fn greedy_matching_depends_on_gt_order() {
    // gt 1 and gt 2 both overlap prediction 1; whichever is visited first
    // claims it
    let mut gt = LabelMap::new(10, 2);
    common::square(&mut gt, 0, 0, 4, 2, 1);
    common::square(&mut gt, 4, 0, 1, 2, 2);
    let mut pred = LabelMap::new(10, 2);
    common::square(&mut pred, 2, 0, 3, 2, 1);
    let forward = aji(&gt, &pred).unwrap().aji;
    let swapped = aji(&permute(&gt, &[2, 1, 3, 4, 5, 6]), &pred).unwrap().aji;
    assert!((forward - 4.0 / 12.0).abs() < 1e-12);
    assert!((swapped - 2.0 / 14.0).abs() < 1e-12);
}

#[test]
fn empty_and_mismatched_maps() {
    let e = LabelMap::new(5, 5);
    let b = aji(&e, &e).unwrap();
    assert!(b.empty);
    assert_eq!(b.aji, 1.0);
    assert_eq!(dice(&e, &e).unwrap(), 1.0);

    let mut gt = LabelMap::new(5, 5);
    gt.set(2, 2, 1);
    let b = aji(&gt, &e).unwrap();
    assert!(!b.empty);
    assert_eq!(b.aji, 0.0);
    assert_eq!(dice(&gt, &e).unwrap(), 0.0);

    assert!(aji(&gt, &LabelMap::new(5, 4)).is_err());
    assert!(dice(&gt, &LabelMap::new(4, 5)).is_err());
}

#[test]
fn dice_ignores_ids() {
    let mut gt = LabelMap::new(4, 1);
    gt.set(0, 0, 1);
    gt.set(1, 0, 1);
    let mut pred = LabelMap::new(4, 1);
    pred.set(1, 0, 7);
    pred.set(2, 0, 3);
    assert!((dice(&gt, &pred).unwrap() - 0.5).abs() < 1e-12);
}
