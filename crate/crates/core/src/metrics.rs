//! Aggregated Jaccard Index and pixel Dice.

use std::collections::HashMap;

use crate::error::Result;
use crate::raster::LabelMap;

#[derive(Debug, Clone, PartialEq)]
pub struct AjiBreakdown {
    /// Sum of matched intersections.
    pub intersection: u64,
    /// Sum of matched unions plus the area of unmatched ground truth.
    pub union: u64,
    /// Pixels of predictions never matched to a ground-truth instance.
    pub unmatched_prediction_pixels: u64,
    /// `(gt id, pred id, jaccard)` per matched ground-truth instance.
    pub matches: Vec<(u32, u32, f64)>,
    pub aji: f64,
    /// Both maps had no instances; `aji` is defined as 1.
    pub empty: bool,
}

/// Aggregated Jaccard Index.
///
/// Ground-truth instances are visited in ascending id order. Each one takes
/// the not-yet-claimed overlapping prediction with the highest Jaccard
/// index (lower prediction id on ties). Predictions that are never claimed
/// add their full area to the denominator.
pub fn aji(gt: &LabelMap, pred: &LabelMap) -> Result<AjiBreakdown> {
    gt.same_shape(pred)?;
    let gt_areas = gt.areas();
    let pred_areas = pred.areas();
    let mut overlap: HashMap<(u32, u32), u64> = HashMap::new();
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        if g != 0 && p != 0 {
            *overlap.entry((g, p)).or_default() += 1;
        }
    }
    let mut candidates: Vec<Vec<(u32, u64)>> = vec![Vec::new(); gt_areas.len()];
    for (&(g, p), &n) in &overlap {
        candidates[g as usize].push((p, n));
    }
    for c in &mut candidates {
        c.sort_unstable();
    }

    let mut claimed = vec![false; pred_areas.len()];
    let mut intersection = 0u64;
    let mut union = 0u64;
    let mut matches = Vec::new();
    let mut any_gt = false;
    for (g, &g_area) in gt_areas.iter().enumerate().skip(1) {
        if g_area == 0 {
            continue;
        }
        any_gt = true;
        let g_area = g_area as u64;
        let mut best: Option<(u32, u64, u64)> = None;
        for &(p, inter) in &candidates[g] {
            if claimed[p as usize] {
                continue;
            }
            let uni = g_area + pred_areas[p as usize] as u64 - inter;
            // inter/uni > best_inter/best_uni, compared exactly
            let better = match best {
                None => true,
                Some((_, bi, bu)) => inter as u128 * bu as u128 > bi as u128 * uni as u128,
            };
            if better {
                best = Some((p, inter, uni));
            }
        }
        match best {
            Some((p, inter, uni)) => {
                claimed[p as usize] = true;
                intersection += inter;
                union += uni;
                matches.push((g as u32, p, inter as f64 / uni as f64));
            }
            None => union += g_area,
        }
    }
    let unmatched: u64 = pred_areas
        .iter()
        .enumerate()
        .skip(1)
        .filter(|&(p, _)| !claimed[p])
        .map(|(_, &a)| a as u64)
        .sum();
    let any_pred = pred_areas.iter().skip(1).any(|&a| a > 0);
    let empty = !any_gt && !any_pred;
    let denom = union + unmatched;
    let aji = if empty {
        1.0
    } else if denom == 0 {
        0.0
    } else {
        intersection as f64 / denom as f64
    };
    Ok(AjiBreakdown {
        intersection,
        union,
        unmatched_prediction_pixels: unmatched,
        matches,
        aji,
        empty,
    })
}

/// Foreground Dice, ignoring instance ids; 1 when both are empty.
pub fn dice(gt: &LabelMap, pred: &LabelMap) -> Result<f64> {
    gt.same_shape(pred)?;
    let (mut both, mut a, mut b) = (0u64, 0u64, 0u64);
    for (&g, &p) in gt.labels().iter().zip(pred.labels()) {
        let (g, p) = (g != 0, p != 0);
        a += g as u64;
        b += p as u64;
        both += (g && p) as u64;
    }
    Ok(if a + b == 0 {
        1.0
    } else {
        2.0 * both as f64 / (a + b) as f64
    })
}
