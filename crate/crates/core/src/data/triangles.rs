//! Triangles: isosceles triangles drawn from four factors (rotation, width,
//! height, gray level) on a white background.
//!
//! Factors are in standard-deviation units; each maps affinely so that
//! `[-2, 2]` covers rotation 15..345 degrees, width and height 4..28 px and
//! gray 0.2..0.9.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_SIZE: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriangleGeometry {
    pub rotation_deg: f64,
    pub width: f64,
    pub height: f64,
    pub gray: f64,
}

impl TriangleGeometry {
    pub fn from_factors(f: [f64; 4]) -> Self {
        Self {
            rotation_deg: 180.0 + 82.5 * f[0],
            width: (16.0 + 6.0 * f[1]).max(1.0),
            height: (16.0 + 6.0 * f[2]).max(1.0),
            gray: (0.55 + 0.175 * f[3]).clamp(0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub size: usize,
    /// Row-major 8-bit intensities; 255 is white.
    pub pixels: Vec<u8>,
}

impl GrayImage {
    /// Binary PGM (P5).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.size, self.size).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Invalid(format!("malformed PGM: {m}"));
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?.to_string());
        }
        if fields[0] != "P5" || fields[3] != "255" {
            return Err(bad("expected P5 with maxval 255"));
        }
        let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
        if w != h {
            return Err(bad("image is not square"));
        }
        let pixels = bytes.get(pos + 1..).ok_or_else(|| bad("missing data"))?.to_vec();
        if pixels.len() != w * h {
            return Err(bad("pixel count"));
        }
        Ok(Self { size: w, pixels })
    }

    pub fn foreground(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 255).count()
    }
}

/// Renders one triangle: apex up before rotation, centered in the image;
/// a pixel is filled when its center lies inside.
pub fn render_triangle(g: &TriangleGeometry, size: usize) -> GrayImage {
    let c = size as f64 / 2.0;
    let (sin, cos) = g.rotation_deg.to_radians().sin_cos();
    let rot = |x: f64, y: f64| (c + cos * x - sin * y, c + sin * x + cos * y);
    let v = [
        rot(0.0, -g.height / 2.0),
        rot(-g.width / 2.0, g.height / 2.0),
        rot(g.width / 2.0, g.height / 2.0),
    ];
    let edge = |a: (f64, f64), b: (f64, f64), p: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let ink = (255.0 * g.gray).round() as u8;
    let mut pixels = vec![255u8; size * size];
    for y in 0..size {
        for x in 0..size {
            let p = (x as f64 + 0.5, y as f64 + 0.5);
            let d = [edge(v[0], v[1], p), edge(v[1], v[2], p), edge(v[2], v[0], p)];
            let inside = d.iter().all(|&e| e >= 0.0) || d.iter().all(|&e| e <= 0.0);
            if inside {
                pixels[y * size + x] = ink;
            }
        }
    }
    GrayImage { size, pixels }
}

/// One image per row of a `k x 4` factor matrix.
pub fn render_triangles(factors: &DMatrix<f64>, size: usize) -> Result<Vec<GrayImage>> {
    if factors.ncols() != 4 {
        return Err(Error::DimensionMismatch {
            expected: 4,
            actual: factors.ncols(),
        });
    }
    if size == 0 {
        return Err(Error::Invalid("image size must be positive".into()));
    }
    Ok(factors
        .row_iter()
        .map(|r| render_triangle(&TriangleGeometry::from_factors([r[0], r[1], r[2], r[3]]), size))
        .collect())
}

/// `factors.csv` with header `rotation,width,height,gray`.
pub fn write_factors_csv(path: &Path, factors: &DMatrix<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["rotation", "width", "height", "gray"])?;
    for row in factors.row_iter() {
        w.write_record(row.iter().map(|v| format!("{v:.16e}")))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Writes `triangle-<i>.pgm` per image into `dir`.
pub fn write_images(dir: &Path, images: &[GrayImage]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let width = images.len().max(1).to_string().len();
    for (i, img) in images.iter().enumerate() {
        let path = dir.join(format!("triangle-{i:0width$}.pgm"));
        fs::write(&path, img.to_pgm()).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_factors_match_the_fixture() {
        let img = render_triangles(&DMatrix::zeros(1, 4), DEFAULT_SIZE).unwrap().remove(0);
        let fixture = include_bytes!("../../tests/fixtures/triangle-zero.pgm");
        assert_eq!(img, GrayImage::from_pgm(fixture).unwrap());
    }

    #[test]
    fn thin_width_gives_a_sliver() {
        let f = DMatrix::from_row_slice(1, 4, &[0.0, -3.0, 0.0, 0.0]);
        let img = &render_triangles(&f, DEFAULT_SIZE).unwrap()[0];
        assert!(img.foreground() <= 40, "{}", img.foreground());
        let full = &render_triangles(&DMatrix::zeros(1, 4), DEFAULT_SIZE).unwrap()[0];
        assert!(full.foreground() > 100);
    }

    #[test]
    fn identical_rows_render_identically() {
        let f = DMatrix::from_row_slice(2, 4, &[0.3, -0.2, 1.1, 0.5, 0.3, -0.2, 1.1, 0.5]);
        let imgs = render_triangles(&f, DEFAULT_SIZE).unwrap();
        assert_eq!(imgs[0], imgs[1]);
    }

    #[test]
    fn geometry_endpoints() {
        let lo = TriangleGeometry::from_factors([-2.0; 4]);
        let hi = TriangleGeometry::from_factors([2.0; 4]);
        assert!((lo.rotation_deg - 15.0).abs() < 1e-12 && (hi.rotation_deg - 345.0).abs() < 1e-12);
        assert!((lo.width - 4.0).abs() < 1e-12 && (hi.height - 28.0).abs() < 1e-12);
        assert!((lo.gray - 0.2).abs() < 1e-12 && (hi.gray - 0.9).abs() < 1e-12);
    }

    #[test]
    fn gray_level_sets_ink() {
        let f = DMatrix::from_row_slice(1, 4, &[0.0, 0.0, 0.0, 2.0]);
        let img = &render_triangles(&f, DEFAULT_SIZE).unwrap()[0];
        assert!(img.pixels.contains(&230));
    }
}
