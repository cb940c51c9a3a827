//! Instance-level morphology driven by nuclei size and shape priors.
//!
//! Instances are 8-connected; background is treated as 4-connected.

use std::collections::VecDeque;

use crate::raster::{LabelMap, Mask};

const N4: [(i64, i64); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const N8: [(i64, i64); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorphParams {
    pub min_area_floor: usize,
    pub min_area_fraction: f64,
    pub solidity_split: f64,
    pub defect_depth_fraction: f64,
    pub solidity_hull_replace: f64,
    pub split_max_depth: usize,
}

impl Default for MorphParams {
    fn default() -> Self {
        Self {
            min_area_floor: 30,
            min_area_fraction: 0.2,
            solidity_split: 0.95,
            defect_depth_fraction: 0.09,
            solidity_hull_replace: 0.7,
            split_max_depth: 3,
        }
    }
}

struct UnionFind {
    parent: Vec<u32>,
}

impl UnionFind {
    fn new() -> Self {
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// 8-connected components, ids assigned in raster order of each
/// component's first pixel.
pub fn label_components(mask: &Mask) -> LabelMap {
    let (w, h) = (mask.width(), mask.height());
    let mut provisional = vec![0u32; w * h];
    let mut uf = UnionFind::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut current = 0u32;
            // previously visited neighbours: W, NW, N, NE
            let visit = |nx: i64, ny: i64, uf: &mut UnionFind, current: &mut u32| {
                if nx < 0 || ny < 0 || nx >= w as i64 {
                    return;
                }
                let l = provisional[ny as usize * w + nx as usize];
                if l != 0 {
                    if *current == 0 {
                        *current = l;
                    } else {
                        uf.union(*current, l);
                    }
                }
            };
            let (xi, yi) = (x as i64, y as i64);
            visit(xi - 1, yi, &mut uf, &mut current);
            visit(xi - 1, yi - 1, &mut uf, &mut current);
            visit(xi, yi - 1, &mut uf, &mut current);
            visit(xi + 1, yi - 1, &mut uf, &mut current);
            if current == 0 {
                current = uf.make();
            }
            provisional[y * w + x] = current;
        }
    }
    let mut remap = vec![0u32; uf.parent.len()];
    let mut next = 0;
    let labels = provisional
        .iter()
        .map(|&l| {
            if l == 0 {
                return 0;
            }
            let root = uf.find(l) as usize;
            if remap[root] == 0 {
                next += 1;
                remap[root] = next;
            }
            remap[root]
        })
        .collect();
    LabelMap::from_vec(w, h, labels).expect("same dimensions")
}

/// Give every 8-connected piece of every id its own id, then compact.
pub fn split_disconnected(map: &LabelMap) -> LabelMap {
    let (w, h) = (map.width(), map.height());
    let mut out = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        let id = map.labels()[start];
        if id == 0 || out[start] != 0 {
            continue;
        }
        next += 1;
        out[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            let (px, py) = ((p % w) as i64, (p / w) as i64);
            for (dx, dy) in N8 {
                let (nx, ny) = (px + dx, py + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                if map.labels()[q] == id && out[q] == 0 {
                    out[q] = next;
                    queue.push_back(q);
                }
            }
        }
    }
    LabelMap::from_vec(w, h, out).expect("same dimensions")
}

/// Distribution of instance areas in one label map.
#[derive(Debug, Clone, PartialEq)]
pub struct SizePrior {
    /// Instance areas, ascending.
    pub areas: Vec<usize>,
    pub median_area: f64,
    pub min_area: f64,
}

impl SizePrior {
    pub fn from_map(map: &LabelMap, params: &MorphParams) -> Self {
        let mut areas: Vec<usize> = map.areas().into_iter().skip(1).filter(|&a| a > 0).collect();
        areas.sort_unstable();
        let median_area = median(&areas);
        let min_area = (params.min_area_floor as f64).max(params.min_area_fraction * median_area);
        Self {
            areas,
            median_area,
            min_area,
        }
    }
}

/// Median of sorted values; the mean of the middle pair for even counts.
pub fn median(sorted: &[usize]) -> f64 {
    match sorted.len() {
        0 => 0.0,
        n if n % 2 == 1 => sorted[n / 2] as f64,
        n => (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0,
    }
}

/// Erase instances smaller than the prior's `min_area`; ids are compacted.
pub fn remove_small(map: &LabelMap, prior: &SizePrior) -> LabelMap {
    let areas = map.areas();
    let mut out = map.clone();
    for l in out.labels_mut() {
        if *l != 0 && (areas[*l as usize] as f64) < prior.min_area {
            *l = 0;
        }
    }
    out.compact();
    out
}

/// Absorb background regions that are enclosed (not 4-connected to the
/// border) and bordered by exactly one instance id.
pub fn fill_holes(map: &LabelMap) -> LabelMap {
    let (w, h) = (map.width(), map.height());
    let labels = map.labels();
    let mut seen = vec![false; w * h];
    let mut out = map.clone();
    let mut region = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] != 0 || seen[start] {
            continue;
        }
        region.clear();
        let mut touches_border = false;
        let mut owner: Option<u32> = None;
        let mut ambiguous = false;
        seen[start] = true;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            region.push(p);
            let (px, py) = ((p % w) as i64, (p / w) as i64);
            if px == 0 || py == 0 || px == w as i64 - 1 || py == h as i64 - 1 {
                touches_border = true;
            }
            for (dx, dy) in N4 {
                let (nx, ny) = (px + dx, py + dy);
                if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                    continue;
                }
                let q = ny as usize * w + nx as usize;
                match labels[q] {
                    0 => {
                        if !seen[q] {
                            seen[q] = true;
                            queue.push_back(q);
                        }
                    }
                    id => match owner {
                        None => owner = Some(id),
                        Some(o) if o != id => ambiguous = true,
                        _ => {}
                    },
                }
            }
        }
        if let (false, false, Some(id)) = (touches_border, ambiguous, owner) {
            for &p in &region {
                out.labels_mut()[p] = id;
            }
        }
    }
    out
}

pub type Point = (i64, i64);

fn cross(o: Point, a: Point, b: Point) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Convex hull by monotone chain, counter-clockwise (in a y-up frame),
/// collinear points dropped.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[Point]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0i64;
    for i in 0..poly.len() {
        let (a, b) = (poly[i], poly[(i + 1) % poly.len()]);
        twice += a.0 * b.1 - b.0 * a.1;
    }
    twice.abs() as f64 / 2.0
}

/// One instance with its shape descriptors.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u32,
    /// `(x, y)` pixel coordinates in raster order.
    pub pixels: Vec<Point>,
    pub area: usize,
    pub centroid: (f64, f64),
    /// Pixels with at least one 4-neighbour outside the instance.
    pub boundary: Vec<Point>,
    /// Hull of the boundary pixel centres.
    pub hull: Vec<Point>,
    /// Area over the area of the hull of all pixel corners, in `(0, 1]`.
    pub solidity: f64,
}

/// Local bitmap of one pixel set.
struct Blob {
    x0: i64,
    y0: i64,
    w: i64,
    h: i64,
    bits: Vec<bool>,
}

impl Blob {
    fn new(pixels: &[Point]) -> Self {
        let x0 = pixels.iter().map(|p| p.0).min().unwrap_or(0);
        let y0 = pixels.iter().map(|p| p.1).min().unwrap_or(0);
        let x1 = pixels.iter().map(|p| p.0).max().unwrap_or(-1);
        let y1 = pixels.iter().map(|p| p.1).max().unwrap_or(-1);
        let (w, h) = (x1 - x0 + 1, y1 - y0 + 1);
        let mut bits = vec![false; (w.max(0) * h.max(0)) as usize];
        for &(x, y) in pixels {
            bits[((y - y0) * w + (x - x0)) as usize] = true;
        }
        Self { x0, y0, w, h, bits }
    }

    fn has(&self, x: i64, y: i64) -> bool {
        let (lx, ly) = (x - self.x0, y - self.y0);
        lx >= 0 && ly >= 0 && lx < self.w && ly < self.h && self.bits[(ly * self.w + lx) as usize]
    }

    fn clear(&mut self, x: i64, y: i64) {
        let (lx, ly) = (x - self.x0, y - self.y0);
        if lx >= 0 && ly >= 0 && lx < self.w && ly < self.h {
            self.bits[(ly * self.w + lx) as usize] = false;
        }
    }

    /// 8-connected pieces, each in raster order; largest first, ties by
    /// raster position of the first pixel.
    fn components(&self) -> Vec<Vec<Point>> {
        let mut seen = vec![false; self.bits.len()];
        let mut pieces = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.bits.len() {
            if !self.bits[start] || seen[start] {
                continue;
            }
            let mut piece = Vec::new();
            seen[start] = true;
            queue.push_back(start as i64);
            while let Some(p) = queue.pop_front() {
                let (lx, ly) = (p % self.w, p / self.w);
                piece.push((lx + self.x0, ly + self.y0));
                for (dx, dy) in N8 {
                    let (nx, ny) = (lx + dx, ly + dy);
                    if nx < 0 || ny < 0 || nx >= self.w || ny >= self.h {
                        continue;
                    }
                    let q = (ny * self.w + nx) as usize;
                    if self.bits[q] && !seen[q] {
                        seen[q] = true;
                        queue.push_back(q as i64);
                    }
                }
            }
            piece.sort_unstable_by_key(|&(x, y)| (y, x));
            pieces.push(piece);
        }
        pieces.sort_by_key(|p| std::cmp::Reverse(p.len()));
        pieces
    }
}

fn boundary_of(blob: &Blob, pixels: &[Point]) -> Vec<Point> {
    pixels
        .iter()
        .copied()
        .filter(|&(x, y)| N4.iter().any(|&(dx, dy)| !blob.has(x + dx, y + dy)))
        .collect()
}

/// Area of the hull of every pixel's four corners.
fn corner_hull_area(pixels: &[Point]) -> f64 {
    let mut extremes: std::collections::BTreeMap<i64, (i64, i64)> = Default::default();
    for &(x, y) in pixels {
        let e = extremes.entry(y).or_insert((x, x));
        e.0 = e.0.min(x);
        e.1 = e.1.max(x);
    }
    let mut corners = Vec::with_capacity(extremes.len() * 4);
    for (&y, &(lo, hi)) in &extremes {
        corners.extend([(lo, y), (lo, y + 1), (hi + 1, y), (hi + 1, y + 1)]);
    }
    polygon_area(&convex_hull(&corners))
}

fn describe(id: u32, pixels: Vec<Point>) -> Instance {
    let blob = Blob::new(&pixels);
    let area = pixels.len();
    let (sx, sy) = pixels
        .iter()
        .fold((0.0, 0.0), |(a, b), p| (a + p.0 as f64, b + p.1 as f64));
    let boundary = boundary_of(&blob, &pixels);
    let hull = convex_hull(&boundary);
    let hull_area = corner_hull_area(&pixels);
    Instance {
        id,
        centroid: (sx / area as f64, sy / area as f64),
        solidity: if hull_area > 0.0 { area as f64 / hull_area } else { 1.0 },
        area,
        boundary,
        hull,
        pixels,
    }
}

/// Every instance of the map in ascending id order.
pub fn instances(map: &LabelMap) -> Vec<Instance> {
    let w = map.width();
    map.pixel_lists()
        .into_iter()
        .enumerate()
        .skip(1)
        .filter(|(_, px)| !px.is_empty())
        .map(|(id, px)| {
            let pts = px
                .into_iter()
                .map(|i| ((i % w) as i64, (i / w) as i64))
                .collect();
            describe(id as u32, pts)
        })
        .collect()
}

/// Deepest boundary point below a hull edge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defect {
    pub point: Point,
    pub depth: f64,
    pub edge: usize,
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (px, py) = (p.0 as f64, p.1 as f64);
    let (ax, ay) = (a.0 as f64, a.1 as f64);
    let (dx, dy) = (b.0 as f64 - ax, b.1 as f64 - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((px - ax - t * dx).powi(2) + (py - ay - t * dy).powi(2)).sqrt()
}

fn line_distance(p: Point, a: Point, b: Point) -> f64 {
    let len = (((b.0 - a.0).pow(2) + (b.1 - a.1).pow(2)) as f64).sqrt();
    if len == 0.0 {
        return 0.0;
    }
    cross(a, b, p).abs() as f64 / len
}

/// Convexity defects: every boundary point is attributed to its nearest
/// hull edge, and each edge reports its deepest attributed point.
/// Sorted deepest first; degenerate hulls yield none.
pub fn convexity_defects(boundary: &[Point], hull: &[Point]) -> Vec<Defect> {
    if hull.len() < 3 {
        return Vec::new();
    }
    let n = hull.len();
    let mut best: Vec<Option<Defect>> = vec![None; n];
    for &p in boundary {
        let (edge, _) = (0..n)
            .map(|e| (e, segment_distance(p, hull[e], hull[(e + 1) % n])))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .expect("non-empty hull");
        let depth = line_distance(p, hull[edge], hull[(edge + 1) % n]);
        let slot = &mut best[edge];
        if slot.is_none_or(|d| depth > d.depth) {
            *slot = Some(Defect {
                point: p,
                depth,
                edge,
            });
        }
    }
    let mut defects: Vec<Defect> = best.into_iter().flatten().filter(|d| d.depth > 0.0).collect();
    defects.sort_by(|a, b| {
        b.depth
            .total_cmp(&a.depth)
            .then(a.point.1.cmp(&b.point.1))
            .then(a.point.0.cmp(&b.point.0))
    });
    defects
}

/// 4-connected digital segment from `a` to `b`.
pub fn line4(a: Point, b: Point) -> Vec<Point> {
    let (dx, dy) = ((b.0 - a.0).abs(), -(b.1 - a.1).abs());
    let (sx, sy) = ((b.0 - a.0).signum(), (b.1 - a.1).signum());
    let mut err = dx + dy;
    let (mut x, mut y) = a;
    let mut out = vec![a];
    while (x, y) != b {
        let e2 = 2 * err;
        // one axis per step keeps the line 4-connected
        if e2 - dy > dx - e2 {
            err += dy;
            x += sx;
        } else {
            err += dx;
            y += sy;
        }
        out.push((x, y));
    }
    out
}

/// Smallest piece, relative to the whole, that still counts as a split.
const MIN_PIECE_FRACTION: f64 = 0.1;

fn split_pieces(pixels: Vec<Point>, params: &MorphParams, depth: usize) -> Vec<Vec<Point>> {
    if depth >= params.split_max_depth || pixels.len() < 3 {
        return vec![pixels];
    }
    let inst = describe(0, pixels);
    if inst.solidity >= params.solidity_split {
        return vec![inst.pixels];
    }
    let defects = convexity_defects(&inst.boundary, &inst.hull);
    if defects.len() < 2 {
        return vec![inst.pixels];
    }
    let eq_diameter = (4.0 * inst.area as f64 / std::f64::consts::PI).sqrt();
    let min_depth = params.defect_depth_fraction * eq_diameter;
    let (d1, d2) = (defects[0], defects[1]);
    if d1.depth < min_depth || d2.depth < min_depth {
        return vec![inst.pixels];
    }
    let mut blob = Blob::new(&inst.pixels);
    for (x, y) in line4(d1.point, d2.point) {
        blob.clear(x, y);
    }
    let pieces = blob.components();
    let substantial = pieces.len() >= 2
        && pieces[1].len() as f64 >= MIN_PIECE_FRACTION * inst.area as f64;
    if !substantial {
        return vec![inst.pixels];
    }
    pieces
        .into_iter()
        .flat_map(|p| split_pieces(p, params, depth + 1))
        .collect()
}

/// Split instances whose boundary shows two deep concavities along the
/// straight cut joining them. The largest piece keeps the id; cut pixels
/// become background.
pub fn split_convexity(map: &LabelMap, params: &MorphParams) -> LabelMap {
    let w = map.width();
    let mut out = map.clone();
    let mut next = map.max_label();
    for inst in instances(map) {
        if inst.solidity >= params.solidity_split {
            continue;
        }
        let id = inst.id;
        let original = inst.pixels.clone();
        let pieces = split_pieces(inst.pixels, params, 0);
        if pieces.len() < 2 {
            continue;
        }
        for &(x, y) in &original {
            out.labels_mut()[y as usize * w + x as usize] = 0;
        }
        let mut order: Vec<usize> = (0..pieces.len()).collect();
        order.sort_by(|&a, &b| pieces[b].len().cmp(&pieces[a].len()).then(a.cmp(&b)));
        for (rank, &k) in order.iter().enumerate() {
            let label = if rank == 0 {
                id
            } else {
                next += 1;
                next
            };
            for &(x, y) in &pieces[k] {
                out.labels_mut()[y as usize * w + x as usize] = label;
            }
        }
    }
    out
}

/// Opening with the radius-1 disk (the 4-neighbourhood cross), applied to
/// each instance separately.
pub fn open_instances(map: &LabelMap) -> LabelMap {
    let (w, h) = (map.width() as i64, map.height() as i64);
    let labels = map.labels();
    let at = |x: i64, y: i64| -> u32 {
        if x < 0 || y < 0 || x >= w || y >= h {
            0
        } else {
            labels[(y * w + x) as usize]
        }
    };
    let eroded: Vec<bool> = (0..w * h)
        .map(|i| {
            let (x, y) = (i % w, i / w);
            let id = at(x, y);
            id != 0 && N4.iter().all(|&(dx, dy)| at(x + dx, y + dy) == id)
        })
        .collect();
    let kept = |x: i64, y: i64| x >= 0 && y >= 0 && x < w && y < h && eroded[(y * w + x) as usize];
    let mut out = map.clone();
    for i in 0..w * h {
        let (x, y) = (i % w, i / w);
        let id = at(x, y);
        if id == 0 {
            continue;
        }
        let survives = kept(x, y)
            || N4
                .iter()
                .any(|&(dx, dy)| kept(x + dx, y + dy) && at(x + dx, y + dy) == id);
        if !survives {
            out.labels_mut()[i as usize] = 0;
        }
    }
    out
}

/// Fill the convex hull of each low-solidity instance into background
/// pixels; pixels owned by other instances are left alone.
pub fn hull_replace(map: &LabelMap, threshold: f64) -> LabelMap {
    let w = map.width();
    let mut out = map.clone();
    for inst in instances(map) {
        if inst.solidity >= threshold || inst.hull.len() < 3 {
            continue;
        }
        let hull = &inst.hull;
        let (x0, x1) = (
            hull.iter().map(|p| p.0).min().unwrap(),
            hull.iter().map(|p| p.0).max().unwrap(),
        );
        let (y0, y1) = (
            hull.iter().map(|p| p.1).min().unwrap(),
            hull.iter().map(|p| p.1).max().unwrap(),
        );
        for y in y0..=y1 {
            for x in x0..=x1 {
                let inside = (0..hull.len())
                    .all(|e| cross(hull[e], hull[(e + 1) % hull.len()], (x, y)) >= 0);
                let idx = y as usize * w + x as usize;
                if inside && out.labels()[idx] == 0 {
                    out.labels_mut()[idx] = inst.id;
                }
            }
        }
    }
    out
}

/// Second-stage shape clean-up: opening, hole filling, convexity split,
/// small-instance removal and hull replacement of remaining irregular
/// shapes.
pub fn refine_shapes(map: &LabelMap, params: &MorphParams) -> LabelMap {
    let opened = split_disconnected(&open_instances(map));
    let filled = fill_holes(&opened);
    let split = split_convexity(&filled, params);
    let prior = SizePrior::from_map(&split, params);
    let cleaned = remove_small(&split, &prior);
    let mut out = hull_replace(&cleaned, params.solidity_hull_replace);
    out.compact();
    out
}
