//! Binary PGM (P5) and PPM (P6) images and score heatmaps.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::tensor::ScoreGrid;

pub fn encode_pgm(image: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.width, image.height).into_bytes();
    out.extend_from_slice(&image.data);
    out
}

pub fn write_pgm(path: &Path, image: &GrayImage) -> Result<()> {
    std::fs::write(path, encode_pgm(image)).map_err(|e| Error::io(path, e))
}

/// Header tokens are whitespace-separated; `#` starts a comment to end of line.
fn header_token<'a>(bytes: &'a [u8], at: &mut usize) -> Option<&'a [u8]> {
    loop {
        while *at < bytes.len() && bytes[*at].is_ascii_whitespace() {
            *at += 1;
        }
        if *at < bytes.len() && bytes[*at] == b'#' {
            while *at < bytes.len() && bytes[*at] != b'\n' {
                *at += 1;
            }
            continue;
        }
        break;
    }
    let start = *at;
    while *at < bytes.len() && !bytes[*at].is_ascii_whitespace() {
        *at += 1;
    }
    (start < *at).then(|| &bytes[start..*at])
}

/// Decode P5 or P6 with 8-bit samples. Color is reduced to luma
/// (0.299 R + 0.587 G + 0.114 B, rounded).
pub fn decode_pnm(bytes: &[u8], origin: &Path) -> Result<GrayImage> {
    let mut at = 0;
    let mut field =
        |name: &str| header_token(bytes, &mut at).ok_or_else(|| Error::parse(origin, format!("missing {name}")));
    let channels = match field("magic")? {
        b"P5" => 1,
        b"P6" => 3,
        m => return Err(Error::parse(origin, format!("unsupported netpbm magic {:?}", String::from_utf8_lossy(m)))),
    };
    let mut number = |name: &str| -> Result<usize> {
        let tok = field(name)?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(origin, format!("bad {name}")))
    };
    let (width, height, maxval) = (number("width")?, number("height")?, number("maxval")?);
    if maxval != 255 {
        return Err(Error::parse(origin, format!("only 8-bit images are supported, maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = &bytes[(at + 1).min(bytes.len())..];
    let need = width * height * channels;
    if raster.len() != need {
        return Err(Error::parse(origin, format!("raster has {} bytes, expected {need}", raster.len())));
    }
    let data = if channels == 1 {
        raster.to_vec()
    } else {
        raster
            .chunks_exact(3)
            .map(|p| ((299 * u32::from(p[0]) + 587 * u32::from(p[1]) + 114 * u32::from(p[2]) + 500) / 1000) as u8)
            .collect()
    };
    GrayImage::new(width, height, data)
}

pub fn read_pnm(path: &Path) -> Result<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

/// Map `[min, max]` linearly onto `[0, 255]`, clamping. Invalid cells are 0.
/// A degenerate range yields an all-zero image and a warning.
pub fn heatmap_image(grid: &ScoreGrid, min: f64, max: f64) -> GrayImage {
    let degenerate = !(max > min);
    if degenerate {
        tracing::warn!(min, max, "heatmap range is empty, writing a blank image");
    }
    let data = grid
        .values
        .iter()
        .zip(&grid.valid)
        .map(|(&v, &ok)| {
            if degenerate || !ok || v.is_nan() {
                0
            } else {
                (255.0 * ((v - min) / (max - min)).clamp(0.0, 1.0)).round() as u8
            }
        })
        .collect();
    GrayImage { width: grid.width, height: grid.height, data }
}

pub fn export_heatmap(grid: &ScoreGrid, path: &Path, min: f64, max: f64) -> Result<()> {
    write_pgm(path, &heatmap_image(grid, min, max))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let img = GrayImage::new(3, 2, vec![0, 10, 20, 30, 40, 255]).unwrap();
        let bytes = encode_pgm(&img);
        assert_eq!(&bytes[..11], b"P5\n3 2\n255\n");
        assert_eq!(decode_pnm(&bytes, Path::new("m")).unwrap(), img);
    }

    #[test]
    fn ppm_with_comment_becomes_luma() {
        let mut bytes = b"P6\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 0, 10, 10, 10]);
        let img = decode_pnm(&bytes, Path::new("m")).unwrap();
        assert_eq!(img.data, vec![76, 10]);
        assert!(decode_pnm(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
        assert!(decode_pnm(b"P2\n1 1\n255\n0", Path::new("m")).is_err());
    }

    #[test]
    fn heatmap_ramp_bytes() {
        let grid = ScoreGrid::new(1, 5, vec![-1.0, 0.0, 0.5, 1.0, 2.0]).unwrap();
        // (v - 0) / 1 * 255, clamped and rounded
        assert_eq!(heatmap_image(&grid, 0.0, 1.0).data, vec![0, 0, 128, 255, 255]);
        let flat = ScoreGrid::filled(2, 2, 3.0);
        let img = heatmap_image(&flat, 0.0, 6.0);
        assert!(img.data.iter().all(|&v| v == 128));
        assert!(heatmap_image(&flat, 1.0, 1.0).data.iter().all(|&v| v == 0));
    }
}
