//! Netpbm rasters and tab-separated split manifests.
//!
//! * images: binary portable pixmap (`P6`, maxval 255);
//! * labels: binary portable graymap (`P5`, maxval 65535, big-endian
//!   samples), with 65535 marking unlabeled pixels;
//! * manifest: UTF-8, one `image-path TAB label-path TAB scene-id` line per
//!   record. Paths are relative to the manifest's directory; a scene id of
//!   `-` means none.

use std::fs;
use std::path::{Path, PathBuf};

use super::{ClassCatalog, DatasetSplit, LabelMap, RgbImage, SceneRecord, SplitRole};
use crate::error::{Error, Result};

struct Header {
    width: usize,
    height: usize,
    maxval: u32,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> std::result::Result<Header, String> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(format!("expected magic {:?}", String::from_utf8_lossy(magic)));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("header ends early".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(format!("malformed header field at byte {start}"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| format!("header number at byte {start} out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("missing whitespace after header".into()),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(format!("degenerate size {width}x{height}"));
    }
    Ok(Header {
        width,
        height,
        maxval: maxval as u32,
        data_start: pos,
    })
}

pub fn encode_ppm(image: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(image.data());
    out
}

pub fn decode_ppm(bytes: &[u8]) -> std::result::Result<RgbImage, String> {
    let h = parse_header(bytes, b"P6")?;
    if h.maxval != 255 {
        return Err(format!("unsupported PPM maxval {}", h.maxval));
    }
    let need = h.width * h.height * 3;
    let data = &bytes[h.data_start..];
    if data.len() < need {
        return Err(format!("truncated pixel data: {} of {need} bytes", data.len()));
    }
    if data.len() > need {
        return Err(format!("{} trailing bytes after pixel data", data.len() - need));
    }
    RgbImage::new(h.height, h.width, data.to_vec()).map_err(|e| e.to_string())
}

pub fn encode_pgm16(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", labels.width(), labels.height()).into_bytes();
    for &l in labels.labels() {
        out.extend_from_slice(&l.to_be_bytes());
    }
    out
}

pub fn decode_pgm16(bytes: &[u8]) -> std::result::Result<LabelMap, String> {
    let h = parse_header(bytes, b"P5")?;
    if h.maxval != 65535 {
        return Err(format!("label maps must use maxval 65535, got {}", h.maxval));
    }
    let need = h.width * h.height * 2;
    let data = &bytes[h.data_start..];
    if data.len() < need {
        return Err(format!("truncated label data: {} of {need} bytes", data.len()));
    }
    if data.len() > need {
        return Err(format!("{} trailing bytes after label data", data.len() - need));
    }
    let labels = data.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]])).collect();
    LabelMap::new(h.height, h.width, labels).map_err(|e| e.to_string())
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    decode_ppm(&fs::read(path)?).map_err(|m| Error::parse(path, m))
}

pub fn write_ppm(path: &Path, image: &RgbImage) -> Result<()> {
    fs::write(path, encode_ppm(image))?;
    Ok(())
}

pub fn read_label_map(path: &Path) -> Result<LabelMap> {
    decode_pgm16(&fs::read(path)?).map_err(|m| Error::parse(path, m))
}

pub fn write_label_map(path: &Path, labels: &LabelMap) -> Result<()> {
    fs::write(path, encode_pgm16(labels))?;
    Ok(())
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub labels: PathBuf,
    pub scene: Option<u32>,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path)?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::parse(
                path,
                format!(
                    "line {}: expected 3 tab-separated fields, found {}",
                    lineno + 1,
                    cols.len()
                ),
            ));
        }
        let scene = match cols[2].trim() {
            "-" | "" => None,
            s => Some(
                s.parse()
                    .map_err(|_| Error::parse(path, format!("line {}: bad scene id {s:?}", lineno + 1)))?,
            ),
        };
        entries.push(ManifestEntry {
            image: PathBuf::from(cols[0]),
            labels: PathBuf::from(cols[1]),
            scene,
        });
    }
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let mut text = String::new();
    for e in entries {
        let scene = e.scene.map_or_else(|| "-".to_string(), |s| s.to_string());
        text.push_str(&format!("{}\t{}\t{}\n", e.image.display(), e.labels.display(), scene));
    }
    fs::write(path, text)?;
    Ok(())
}

fn base_dir(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

/// Loads a split from a manifest, validating labels against `catalog`.
pub fn load_split(manifest: &Path, catalog: &ClassCatalog, role: SplitRole) -> Result<DatasetSplit> {
    let base = base_dir(manifest);
    let entries = read_manifest(manifest)?;
    let mut records = Vec::with_capacity(entries.len());
    for (i, e) in entries.into_iter().enumerate() {
        let tag = |err: Error| match err {
            Error::Parse { location, message } => Error::Parse {
                location,
                message: format!("record {i}: {message}"),
            },
            other => other,
        };
        let image = read_ppm(&base.join(&e.image)).map_err(tag)?;
        let labels = read_label_map(&base.join(&e.labels)).map_err(tag)?;
        labels
            .validate(catalog)
            .map_err(|err| Error::Validation(format!("record {i} ({}): {err}", e.labels.display())))?;
        let rec = SceneRecord::new(image, labels, e.scene).map_err(|err| Error::Shape(format!("record {i}: {err}")))?;
        records.push(rec);
    }
    DatasetSplit::new(catalog.clone(), role, records)
}

/// Writes the manifest at `manifest` and one PPM/PGM pair per record into a
/// sibling directory named after the manifest's file stem.
pub fn save_split(split: &DatasetSplit, manifest: &Path) -> Result<()> {
    let base = base_dir(manifest);
    let stem = manifest
        .file_stem()
        .ok_or_else(|| Error::Argument(format!("manifest path {} has no file name", manifest.display())))?
        .to_string_lossy()
        .into_owned();
    fs::create_dir_all(base.join(&stem))?;
    let mut entries = Vec::with_capacity(split.len());
    for (i, rec) in split.records.iter().enumerate() {
        let image = PathBuf::from(&stem).join(format!("{i:05}.ppm"));
        let labels = PathBuf::from(&stem).join(format!("{i:05}.pgm"));
        write_ppm(&base.join(&image), &rec.image)?;
        write_label_map(&base.join(&labels), &rec.labels)?;
        entries.push(ManifestEntry {
            image,
            labels,
            scene: rec.scene,
        });
    }
    write_manifest(manifest, &entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::UNLABELED;

    #[test]
    fn ppm_round_trip_and_comments() {
        let img = RgbImage::new(2, 3, (0..18).collect()).unwrap();
        assert_eq!(decode_ppm(&encode_ppm(&img)).unwrap(), img);
        let mut commented = b"P6\n# made by hand\n3 2\n255\n".to_vec();
        commented.extend(0..18u8);
        assert_eq!(decode_ppm(&commented).unwrap(), img);
    }

    #[test]
    fn pgm_keeps_sentinel() {
        let m = LabelMap::new(1, 3, vec![0, 300, UNLABELED]).unwrap();
        assert_eq!(decode_pgm16(&encode_pgm16(&m)).unwrap(), m);
    }

    #[test]
    fn malformed_headers() {
        assert!(decode_ppm(b"P5\n1 1\n255\n\0\0\0").is_err());
        assert!(decode_ppm(b"P6\nx 1\n255\n").is_err());
        assert!(decode_pgm16(b"P5\n1 1\n255\n\0").is_err());
        let mut short = encode_ppm(&RgbImage::new(2, 2, vec![1; 12]).unwrap());
        short.truncate(short.len() - 1);
        assert!(decode_ppm(&short).unwrap_err().contains("truncated"));
    }
}
