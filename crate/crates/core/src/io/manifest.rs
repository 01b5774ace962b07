//! Tab-separated dataset manifests, one scene per line after a header.
//! Paths are relative to the manifest's directory.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::synth::{Level, OccluderType};

pub const HEADER: &str = "image\tfeatures\tobject_mask\toccluder_mask\tclass\tpose\tlevel\ttype\tx0\ty0\tx1\ty1";

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub image: String,
    pub features: String,
    pub object_mask: String,
    pub occluder_mask: String,
    pub class: usize,
    pub pose: usize,
    pub level: Level,
    pub kind: OccluderType,
    /// Object box in pixels.
    pub bbox: BBox,
}

pub fn encode_manifest(rows: &[ManifestRow]) -> String {
    let mut out = format!("{HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            r.image,
            r.features,
            r.object_mask,
            r.occluder_mask,
            r.class,
            r.pose,
            r.level.tag(),
            r.kind.tag(),
            r.bbox.x0,
            r.bbox.y0,
            r.bbox.x1,
            r.bbox.y1
        ));
    }
    out
}

pub fn decode_manifest(text: &str, origin: &Path) -> Result<Vec<ManifestRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim_end) != Some(HEADER) {
        return Err(Error::parse(origin, "missing manifest header"));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |what: &str| Error::parse(origin, format!("row {}: bad {what}", i + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 12 {
            return Err(bad("field count"));
        }
        let num = |j: usize, what: &str| f[j].parse::<f64>().map_err(|_| bad(what));
        rows.push(ManifestRow {
            image: f[0].into(),
            features: f[1].into(),
            object_mask: f[2].into(),
            occluder_mask: f[3].into(),
            class: f[4].parse().map_err(|_| bad("class"))?,
            pose: f[5].parse().map_err(|_| bad("pose"))?,
            level: Level::from_tag(f[6]).ok_or_else(|| bad("level"))?,
            kind: OccluderType::from_tag(f[7]).ok_or_else(|| bad("occluder type"))?,
            bbox: BBox::new(num(8, "x0")?, num(9, "y0")?, num(10, "x1")?, num(11, "y1")?),
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    std::fs::write(path, encode_manifest(rows)).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_manifest(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let rows = vec![ManifestRow {
            image: "img/0.pgm".into(),
            features: "feat/0.cfmp".into(),
            object_mask: "mask/0_obj.pgm".into(),
            occluder_mask: "mask/0_occ.pgm".into(),
            class: 2,
            pose: 1,
            level: Level::L2,
            kind: OccluderType::Texture,
            bbox: BBox::new(4.0, 8.0, 44.0, 36.0),
        }];
        let text = encode_manifest(&rows);
        assert_eq!(decode_manifest(&text, Path::new("m")).unwrap(), rows);
        assert!(decode_manifest(&encode_manifest(&[]), Path::new("m")).unwrap().is_empty());
        assert!(decode_manifest(&text.replace("L2", "L9"), Path::new("m")).is_err());
    }
}
