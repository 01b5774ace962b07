//! CFMP feature files.
//!
//! Layout, all little-endian:
//!
//! | bytes   | field                                   |
//! |---------|-----------------------------------------|
//! | 0..4    | magic `CFMP`                            |
//! | 4..6    | version (u16, currently 1)              |
//! | 6..8    | flags (u16, bit 0: rows unit-normalized)|
//! | 8..12   | H (u32)                                 |
//! | 12..16  | W (u32)                                 |
//! | 16..20  | D (u32)                                 |
//! | 20..    | H·W·D f32, row-major `(y, x, d)`        |

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

pub const MAGIC: &[u8; 4] = b"CFMP";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
const FLAG_NORMALIZED: u16 = 1;

pub fn encode_feature_map(map: &FeatureMap) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * map.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let flags = if map.is_normalized() { FLAG_NORMALIZED } else { 0 };
    out.extend_from_slice(&flags.to_le_bytes());
    for dim in [map.height(), map.width(), map.depth()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in map.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse CFMP bytes; `origin` only labels errors.
pub fn decode_feature_map(bytes: &[u8], origin: &Path) -> Result<FeatureMap> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(origin, format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::parse(origin, "bad magic, not a CFMP file"));
    }
    let u16_at = |i: usize| u16::from_le_bytes([bytes[i], bytes[i + 1]]);
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let version = u16_at(4);
    if version != VERSION {
        return Err(Error::parse(origin, format!("unsupported CFMP version {version}")));
    }
    let flags = u16_at(6);
    if flags & !FLAG_NORMALIZED != 0 {
        return Err(Error::parse(origin, format!("unknown flags {flags:#06x}")));
    }
    let (h, w, d) = (u32_at(8), u32_at(12), u32_at(16));
    let n = h
        .checked_mul(w)
        .and_then(|hw| hw.checked_mul(d))
        .ok_or_else(|| Error::parse(origin, "header dimensions overflow"))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != 4 * n {
        return Err(Error::parse(
            origin,
            format!("{h}x{w}x{d} needs {} payload bytes, found {}", 4 * n, payload.len()),
        ));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let map = FeatureMap::new(h, w, d, data).map_err(|e| Error::parse(origin, e.to_string()))?;
    Ok(if flags & FLAG_NORMALIZED != 0 { map.assume_normalized() } else { map })
}

pub fn write_feature_file(path: &Path, map: &FeatureMap) -> Result<()> {
    std::fs::write(path, encode_feature_map(map)).map_err(|e| Error::io(path, e))
}

pub fn read_feature_file(path: &Path) -> Result<FeatureMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_feature_map(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::random_map;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.cfmp");
        for map in [random_map(3, 5, 7, 1), random_map(2, 2, 4, 2).normalize_rows(1e-6)] {
            write_feature_file(&path, &map).unwrap();
            let back = read_feature_file(&path).unwrap();
            assert_eq!(back, map);
            assert_eq!(encode_feature_map(&back), std::fs::read(&path).unwrap());
        }
    }

    #[test]
    fn header_is_little_endian() {
        let map = FeatureMap::zeros(258, 1, 1);
        let bytes = encode_feature_map(&map);
        assert_eq!(&bytes[8..12], &[2, 1, 0, 0]);
        assert_eq!(&bytes[4..6], &[1, 0]);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_feature_map(&random_map(2, 3, 4, 3));
        let p = Path::new("mem");
        assert!(matches!(decode_feature_map(&bytes[..bytes.len() - 1], p), Err(Error::Parse { .. })));
        assert!(decode_feature_map(&bytes[..10], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_feature_map(&bad, p).is_err());
        let mut nan = bytes;
        nan[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode_feature_map(&nan, p).is_err());
    }
}
