//! Raster and annotation I/O: RGB images in, 16-bit label maps out, and
//! Aperio ImageScope XML ground truth rasterized to label maps.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma, Rgb};
use log::warn;

use crate::error::{Error, Result};
use crate::raster::{LabelMap, RgbImage};

/// Colour used for instance boundaries in overlays.
pub const OVERLAY_COLOR: [u8; 3] = [0, 255, 0];

fn decode(path: &Path) -> Result<DynamicImage> {
    let reader = ImageReader::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = reader.with_guessed_format().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    reader.decode().map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Load an 8-bit RGB (or RGBA, alpha dropped) PNG or TIFF.
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = decode(path)?;
    let color = img.color();
    let channels = color.channel_count() as u16;
    let depth = color.bits_per_pixel() / channels;
    if depth != 8 {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            reason: format!("unsupported bit depth {depth} (expected 8 bits per channel)"),
        });
    }
    if channels != 3 && channels != 4 {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            reason: format!("unsupported channel count {channels} (expected RGB or RGBA)"),
        });
    }
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    RgbImage::new(w as usize, h as usize, rgb.into_raw())
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec())
            .expect("buffer sized by RgbImage invariant");
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Write a label map as a 16-bit grayscale PNG with ids stored verbatim.
pub fn write_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let max = map.max_label();
    if max > u16::MAX as u32 {
        return Err(Error::TooManyLabels { count: max });
    }
    let raw: Vec<u16> = map.labels().iter().map(|&l| l as u16).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(map.width() as u32, map.height() as u32, raw)
            .expect("buffer sized by LabelMap invariant");
    buf.save(path).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Load a single-channel 8- or 16-bit label map.
pub fn load_labelmap(path: impl AsRef<Path>) -> Result<LabelMap> {
    let path = path.as_ref();
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u32> = match img {
        DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Unsupported {
                path: path.to_path_buf(),
                reason: format!(
                    "label map must be single-channel 8/16-bit, found {:?}",
                    other.color()
                ),
            })
        }
    };
    LabelMap::from_vec(w, h, labels)
}

/// Original image with 1-px instance boundaries painted in [`OVERLAY_COLOR`].
pub fn render_overlay(img: &RgbImage, map: &LabelMap) -> Result<RgbImage> {
    if img.width() != map.width() || img.height() != map.height() {
        return Err(Error::DimensionMismatch {
            left_w: img.width(),
            left_h: img.height(),
            right_w: map.width(),
            right_h: map.height(),
        });
    }
    let mut out = img.clone();
    let (w, h) = (map.width(), map.height());
    for y in 0..h {
        for x in 0..w {
            let id = map.get(x, y);
            if id == 0 {
                continue;
            }
            let edge = (x == 0 || map.get(x - 1, y) != id)
                || (x + 1 == w || map.get(x + 1, y) != id)
                || (y == 0 || map.get(x, y - 1) != id)
                || (y + 1 == h || map.get(x, y + 1) != id);
            if edge {
                out.set(x, y, OVERLAY_COLOR);
            }
        }
    }
    Ok(out)
}

pub fn write_overlay(img: &RgbImage, map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    save_rgb(&render_overlay(img, map)?, path)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationPolygons {
    pub polygons: Vec<Vec<Vertex>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParseReport {
    pub regions_seen: usize,
    /// `(region index, vertex count)` for each region dropped for having
    /// fewer than three vertices.
    pub skipped: Vec<(usize, usize)>,
}

/// Parse an Aperio ImageScope annotation file. One polygon per `Region`,
/// vertex order preserved.
pub fn parse_annotation_xml(
    path: impl AsRef<Path>,
) -> Result<(AnnotationPolygons, ParseReport)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotation_str(&text).map_err(|message| Error::Xml {
        path: path.to_path_buf(),
        message,
    })
}

pub fn parse_annotation_str(
    text: &str,
) -> std::result::Result<(AnnotationPolygons, ParseReport), String> {
    let doc = roxmltree::Document::parse(text).map_err(|e| e.to_string())?;
    let mut polys = AnnotationPolygons::default();
    let mut report = ParseReport::default();
    for region in doc
        .descendants()
        .filter(|n| n.is_element() && n.has_tag_name("Region"))
    {
        let index = report.regions_seen;
        report.regions_seen += 1;
        let mut vertices = Vec::new();
        for v in region
            .descendants()
            .filter(|n| n.is_element() && n.has_tag_name("Vertex"))
        {
            let coord = |name: &str| -> std::result::Result<f64, String> {
                let raw = v
                    .attribute(name)
                    .ok_or_else(|| format!("region {index}: Vertex without {name} attribute"))?;
                raw.trim()
                    .parse::<f64>()
                    .map_err(|_| format!("region {index}: bad {name} coordinate `{raw}`"))
            };
            vertices.push(Vertex {
                x: coord("X")?,
                y: coord("Y")?,
            });
        }
        if vertices.len() < 3 {
            warn!(
                "skipping region {index}: {} vertices (need at least 3)",
                vertices.len()
            );
            report.skipped.push((index, vertices.len()));
            continue;
        }
        polys.polygons.push(vertices);
    }
    Ok((polys, report))
}

/// Paint polygon `k` (1-based) with id `k` using an even-odd scanline fill
/// sampled at pixel centres. Later polygons overwrite earlier ones.
pub fn rasterize(polys: &AnnotationPolygons, width: usize, height: usize) -> LabelMap {
    let mut map = LabelMap::new(width, height);
    let mut crossings: Vec<f64> = Vec::new();
    for (k, poly) in polys.polygons.iter().enumerate() {
        let id = k as u32 + 1;
        let n = poly.len();
        if n < 3 {
            continue;
        }
        let ymin = poly.iter().map(|v| v.y).fold(f64::INFINITY, f64::min);
        let ymax = poly.iter().map(|v| v.y).fold(f64::NEG_INFINITY, f64::max);
        if !ymin.is_finite() || !ymax.is_finite() {
            continue;
        }
        let row_lo = ymin.floor().max(0.0) as usize;
        let row_hi = (ymax.ceil() + 1.0).clamp(0.0, height as f64) as usize;
        for row in row_lo..row_hi {
            let yc = row as f64 + 0.5;
            crossings.clear();
            let mut j = n - 1;
            for i in 0..n {
                let (a, b) = (poly[i], poly[j]);
                if (a.y > yc) != (b.y > yc) {
                    crossings.push((b.x - a.x) * (yc - a.y) / (b.y - a.y) + a.x);
                }
                j = i;
            }
            crossings.sort_by(f64::total_cmp);
            // Centre xc is inside iff an odd number of crossings lie at or
            // left of it, i.e. x_{2k} <= xc < x_{2k+1}.
            for pair in crossings.chunks_exact(2) {
                let first = (pair[0] - 0.5).ceil().max(0.0);
                let end = (pair[1] - 0.5).ceil().min(width as f64);
                if end <= first {
                    continue;
                }
                for col in first as usize..end as usize {
                    map.set(col, row, id);
                }
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(x0: f64, y0: f64, x1: f64, y1: f64) -> Vec<Vertex> {
        vec![
            Vertex { x: x0, y: y0 },
            Vertex { x: x1, y: y0 },
            Vertex { x: x1, y: y1 },
            Vertex { x: x0, y: y1 },
        ]
    }

    #[test]
    fn square_fill_counts_sixteen() {
        let polys = AnnotationPolygons {
            polygons: vec![square(0.0, 0.0, 4.0, 4.0)],
        };
        let map = rasterize(&polys, 8, 8);
        assert_eq!(map.areas()[1], 16);
        assert_eq!(map.get(3, 3), 1);
        assert_eq!(map.get(4, 4), 0);
    }

    #[test]
    fn empty_polygons_give_blank_map() {
        let map = rasterize(&AnnotationPolygons::default(), 5, 3);
        assert_eq!(map.max_label(), 0);
    }

    #[test]
    fn later_polygon_wins_overlap() {
        let polys = AnnotationPolygons {
            polygons: vec![square(0.0, 0.0, 4.0, 4.0), square(2.0, 2.0, 6.0, 6.0)],
        };
        let map = rasterize(&polys, 8, 8);
        assert_eq!(map.get(2, 2), 2);
        assert_eq!(map.get(1, 1), 1);
    }

    #[test]
    fn out_of_bounds_vertices_are_clipped() {
        let polys = AnnotationPolygons {
            polygons: vec![square(-5.0, -5.0, 20.0, 2.0)],
        };
        let map = rasterize(&polys, 4, 4);
        assert_eq!(map.areas()[1], 8);
    }

    #[test]
    fn xml_triangle_and_empty() {
        let xml = r#"<Annotations><Annotation><Regions>
            <Region Id="1"><Vertices>
              <Vertex X="1.5" Y="2" Z="0"/><Vertex X="5" Y="2"/><Vertex X="3" Y="7.25"/>
            </Vertices></Region>
          </Regions></Annotation></Annotations>"#;
        let (polys, report) = parse_annotation_str(xml).unwrap();
        assert_eq!(polys.polygons.len(), 1);
        assert_eq!(polys.polygons[0][2], Vertex { x: 3.0, y: 7.25 });
        assert_eq!(report.regions_seen, 1);

        let (polys, report) =
            parse_annotation_str("<Annotations><Annotation><Regions/></Annotation></Annotations>")
                .unwrap();
        assert!(polys.polygons.is_empty());
        assert!(report.skipped.is_empty());
    }

    #[test]
    fn xml_degenerate_region_is_reported() {
        let xml = r#"<Annotations><Annotation><Regions>
            <Region><Vertices><Vertex X="1" Y="1"/><Vertex X="2" Y="2"/></Vertices></Region>
          </Regions></Annotation></Annotations>"#;
        let (polys, report) = parse_annotation_str(xml).unwrap();
        assert!(polys.polygons.is_empty());
        assert_eq!(report.skipped, vec![(0, 2)]);
    }

    #[test]
    fn malformed_xml_is_an_error() {
        assert!(parse_annotation_str("<Annotations><Region>").is_err());
        let bad = r#"<Region><Vertex X="a" Y="1"/></Region>"#;
        assert!(parse_annotation_str(bad).is_err());
    }
}
