//! Non-overlapping block tiling and per-block colour-to-intensity reduction
//! by principal component analysis.

use crate::error::{Error, Result};

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.width && y >= self.y && y < self.y + self.height
    }

    /// Row-major linear indices of the rectangle inside an image of
    /// `image_width` columns.
    pub fn indices(&self, image_width: usize) -> impl Iterator<Item = usize> + '_ {
        (self.y..self.y + self.height)
            .flat_map(move |y| (self.x..self.x + self.width).map(move |x| y * image_width + x))
    }
}

/// Origin-aligned tiling into `size`-pixel squares; edge cells are
/// truncated. Used both for 50 px threshold blocks and 200 px tiles.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockGrid {
    width: usize,
    height: usize,
    block_size: usize,
    cols: usize,
    rows: usize,
}

impl BlockGrid {
    pub fn new(width: usize, height: usize, block_size: usize) -> Result<Self> {
        if block_size < 8 {
            return Err(Error::config(
                "block_size",
                format!("must be at least 8, got {block_size}"),
            ));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster("empty image".into()));
        }
        Ok(Self {
            width,
            height,
            block_size,
            cols: width.div_ceil(block_size),
            rows: height.div_ceil(block_size),
        })
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn block(&self, index: usize) -> Rect {
        let (row, col) = (index / self.cols, index % self.cols);
        let x = col * self.block_size;
        let y = row * self.block_size;
        Rect {
            x,
            y,
            width: self.block_size.min(self.width - x),
            height: self.block_size.min(self.height - y),
        }
    }

    /// Blocks in row-major order.
    pub fn blocks(&self) -> impl Iterator<Item = Rect> + '_ {
        (0..self.len()).map(|i| self.block(i))
    }

    /// Index of the block containing pixel `(x, y)`.
    pub fn index_of(&self, x: usize, y: usize) -> usize {
        (y / self.block_size) * self.cols + x / self.block_size
    }
}

pub fn decompose(himg: &crate::stain::HImage, block_size: usize) -> Result<BlockGrid> {
    BlockGrid::new(himg.width(), himg.height(), block_size)
}

/// Eigen-decomposition of a symmetric 3x3 matrix by cyclic Jacobi
/// rotations. Returns `(eigenvalues, eigenvectors)` with eigenvector `k`
/// stored in `vectors[k]`.
#[allow(clippy::needless_range_loop)]
pub fn symmetric_eigen3(mut a: [[f64; 3]; 3]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let scale: f64 = a.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return ([0.0; 3], v);
    }
    for _sweep in 0..64 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        if off <= 1e-15 * scale {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q].abs() <= f64::MIN_POSITIVE {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for k in 0..3 {
                let (akp, akq) = (a[k][p], a[k][q]);
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let (apk, aqk) = (a[p][k], a[q][k]);
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
            for row in v.iter_mut() {
                let (vp, vq) = (row[p], row[q]);
                row[p] = c * vp - s * vq;
                row[q] = s * vp + c * vq;
            }
        }
    }
    let values = [a[0][0], a[1][1], a[2][2]];
    let vectors = [
        [v[0][0], v[1][0], v[2][0]],
        [v[0][1], v[1][1], v[2][1]],
        [v[0][2], v[1][2], v[2][2]],
    ];
    (values, vectors)
}

/// Scalar intensity of one block's pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityBlock {
    /// Per-pixel intensity in `[0, 1]`, same order as the input pixels.
    pub intensity: Vec<f64>,
    pub eigenvector: [f64; 3],
    /// True when the correlation with lightness forced a sign flip.
    pub flipped: bool,
    /// Zero-variance block: intensity is a constant 0.5.
    pub flat: bool,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Leading principal component of a block's colours, signed so that
/// intensity increases with lightness.
///
/// Pixels are 8-bit channel values. The projection `v · x` is mapped
/// affinely to `[0, 1]` using its range over the whole RGB cube, so the
/// same colour gets the same intensity in every block that shares an
/// eigenvector and a light block stays light after normalization.
#[allow(clippy::needless_range_loop)]
pub fn block_pca_intensity(pixels: &[[f64; 3]], l_ref: &[f64]) -> IntensityBlock {
    assert_eq!(pixels.len(), l_ref.len(), "one lightness value per pixel");
    let n = pixels.len();
    let flat_block = || IntensityBlock {
        intensity: vec![0.5; n],
        eigenvector: [1.0, 0.0, 0.0],
        flipped: false,
        flat: true,
    };
    if n < 2 {
        return flat_block();
    }
    let mut mean = [0.0; 3];
    for p in pixels {
        for c in 0..3 {
            mean[c] += p[c];
        }
    }
    mean = mean.map(|m| m / n as f64);
    let mut cov = [[0.0; 3]; 3];
    for p in pixels {
        let d = [p[0] - mean[0], p[1] - mean[1], p[2] - mean[2]];
        for r in 0..3 {
            for c in r..3 {
                cov[r][c] += d[r] * d[c];
            }
        }
    }
    for r in 0..3 {
        for c in r..3 {
            cov[r][c] /= (n - 1) as f64;
            cov[c][r] = cov[r][c];
        }
    }
    let (values, vectors) = symmetric_eigen3(cov);
    let lead = (0..3)
        .max_by(|&i, &j| values[i].total_cmp(&values[j]).then(j.cmp(&i)))
        .expect("three eigenvalues");
    if values[lead] <= 1e-12 {
        return flat_block();
    }
    let mut v = vectors[lead];
    // Canonical orientation: largest-magnitude component positive.
    let big = (0..3)
        .max_by(|&i, &j| v[i].abs().total_cmp(&v[j].abs()).then(j.cmp(&i)))
        .expect("three components");
    if v[big] < 0.0 {
        v = v.map(|x| -x);
    }
    let proj: Vec<f64> = pixels
        .iter()
        .map(|p| v[0] * p[0] + v[1] * p[1] + v[2] * p[2])
        .collect();
    let flipped = pearson(&proj, l_ref) < 0.0;
    if flipped {
        v = v.map(|x| -x);
    }
    let lo: f64 = v.iter().map(|&x| 255.0 * x.min(0.0)).sum();
    let hi: f64 = v.iter().map(|&x| 255.0 * x.max(0.0)).sum();
    let intensity = proj
        .iter()
        .map(|&p| {
            let p = if flipped { -p } else { p };
            ((p - lo) / (hi - lo)).clamp(0.0, 1.0)
        })
        .collect();
    IntensityBlock {
        intensity,
        eigenvector: v,
        flipped,
        flat: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiling_counts() {
        let g = BlockGrid::new(1000, 1000, 50).unwrap();
        assert_eq!(g.len(), 400);
        assert!(g.blocks().all(|b| b.area() == 2500));

        let g = BlockGrid::new(55, 50, 50).unwrap();
        let blocks: Vec<_> = g.blocks().collect();
        assert_eq!(blocks.len(), 2);
        assert_eq!((blocks[1].width, blocks[1].height), (5, 50));

        let g = BlockGrid::new(10, 10, 50).unwrap();
        assert_eq!(g.len(), 1);
        assert_eq!(g.block(0).area(), 100);

        assert!(BlockGrid::new(10, 10, 4).is_err());
    }

    #[test]
    fn achromatic_block_is_monotone_in_gray() {
        let grays: Vec<f64> = (0..40).map(|i| (i * 6) as f64).collect();
        let pixels: Vec<[f64; 3]> = grays.iter().map(|&g| [g, g, g]).collect();
        let b = block_pca_intensity(&pixels, &grays);
        assert!(!b.flat);
        assert!(b.intensity.windows(2).all(|w| w[1] > w[0]));
        assert!((b.intensity[0] - 0.0).abs() < 1e-9);
        assert!((b.intensity[39] - 234.0 / 255.0).abs() < 1e-9);
    }

    #[test]
    fn dark_purple_below_light_pink() {
        let purple = [70.0, 40.0, 120.0];
        let pink = [235.0, 180.0, 215.0];
        let mut pixels = vec![purple; 10];
        pixels.extend(std::iter::repeat_n(pink, 90));
        let l: Vec<f64> = pixels
            .iter()
            .map(|p| crate::stain::lightness_star(p.map(|c| c as u8)))
            .collect();
        let b = block_pca_intensity(&pixels, &l);
        assert!(b.intensity[..10].iter().all(|&d| b.intensity[10..].iter().all(|&w| d < w)));
    }

    #[test]
    fn flat_block_flagged() {
        let pixels = vec![[10.0, 20.0, 30.0]; 25];
        let b = block_pca_intensity(&pixels, &[5.0; 25]);
        assert!(b.flat);
        assert!(b.intensity.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn jacobi_diagonalizes() {
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]];
        let (vals, vecs) = symmetric_eigen3(a);
        for k in 0..3 {
            let v = vecs[k];
            for r in 0..3 {
                let av: f64 = (0..3).map(|c| a[r][c] * v[c]).sum();
                assert!((av - vals[k] * v[r]).abs() < 1e-12);
            }
        }
    }
}
