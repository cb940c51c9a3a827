//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use hunis::{LabelMap, Mask};

/// AJI by exhaustive pixel scans: for each ground-truth id in ascending
/// order, score every unused prediction pixel by pixel and keep the best
/// (lowest id on ties). Returns `(intersection, denominator)`.
pub fn brute_aji(gt: &LabelMap, pred: &LabelMap) -> (u64, u64) {
    let g = gt.labels();
    let p = pred.labels();
    let gmax = g.iter().copied().max().unwrap_or(0);
    let pmax = p.iter().copied().max().unwrap_or(0);
    let mut used = vec![false; pmax as usize + 1];
    let (mut c, mut u) = (0u64, 0u64);
    for gi in 1..=gmax {
        let g_area = g.iter().filter(|&&v| v == gi).count() as u64;
        if g_area == 0 {
            continue;
        }
        let mut best: Option<(u32, u64, u64)> = None;
        for pj in 1..=pmax {
            if used[pj as usize] {
                continue;
            }
            let mut inter = 0u64;
            let mut uni = 0u64;
            for k in 0..g.len() {
                let a = g[k] == gi;
                let b = p[k] == pj;
                inter += (a && b) as u64;
                uni += (a || b) as u64;
            }
            if inter == 0 {
                continue;
            }
            let better = match best {
                None => true,
                // strictly greater ratio; equal keeps the lower id
                Some((_, bi, bu)) => (inter as u128) * (bu as u128) > (bi as u128) * (uni as u128),
            };
            if better {
                best = Some((pj, inter, uni));
            }
        }
        match best {
            Some((pj, inter, uni)) => {
                used[pj as usize] = true;
                c += inter;
                u += uni;
            }
            None => u += g_area,
        }
    }
    for pj in 1..=pmax {
        if !used[pj as usize] {
            u += p.iter().filter(|&&v| v == pj).count() as u64;
        }
    }
    (c, u)
}

/// Recursive-free flood fill with an explicit stack. `eight` selects
/// 8-connectivity. Ids follow the raster order of each component's first
/// pixel.
pub fn flood_label(mask: &Mask, eight: bool) -> LabelMap {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut out = LabelMap::new(mask.width(), mask.height());
    let mut next = 0u32;
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x as usize, y as usize) || out.get(x as usize, y as usize) != 0 {
                continue;
            }
            next += 1;
            let mut stack = vec![(x, y)];
            out.set(x as usize, y as usize, next);
            while let Some((cx, cy)) = stack.pop() {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx, dy) == (0, 0) || (!eight && dx != 0 && dy != 0) {
                            continue;
                        }
                        let (nx, ny) = (cx + dx, cy + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h {
                            continue;
                        }
                        let (ux, uy) = (nx as usize, ny as usize);
                        if mask.get(ux, uy) && out.get(ux, uy) == 0 {
                            out.set(ux, uy, next);
                            stack.push((nx, ny));
                        }
                    }
                }
            }
        }
    }
    out
}

/// Same partition up to renaming of ids.
pub fn same_partition(a: &LabelMap, b: &LabelMap) -> bool {
    use std::collections::HashMap;
    if a.width() != b.width() || a.height() != b.height() {
        return false;
    }
    let mut fwd: HashMap<u32, u32> = HashMap::new();
    let mut back: HashMap<u32, u32> = HashMap::new();
    for (&x, &y) in a.labels().iter().zip(b.labels()) {
        if (x == 0) != (y == 0) {
            return false;
        }
        if x == 0 {
            continue;
        }
        if *fwd.entry(x).or_insert(y) != y || *back.entry(y).or_insert(x) != x {
            return false;
        }
    }
    true
}

/// Even-odd point-in-polygon by ray casting to +x, evaluated on `f64`.
pub fn point_in_polygon(px: f64, py: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let n = poly.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn square(map: &mut LabelMap, x0: usize, y0: usize, w: usize, h: usize, id: u32) {
    for y in y0..y0 + h {
        for x in x0..x0 + w {
            map.set(x, y, id);
        }
    }
}
