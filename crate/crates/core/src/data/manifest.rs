//! Manifest ingestion: `path,label,session,tracklet`, one row per sample.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use serde::Deserialize;

use super::{Dataset, IdentityLabel, Origin, Patch, Sample};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["path", "label", "session", "tracklet"];

#[derive(Debug, Deserialize)]
struct Row {
    path: String,
    label: u32,
    session: u32,
    tracklet: u32,
}

/// Reads a manifest; image paths are resolved relative to the manifest's
/// directory and resized to `patch_size` when needed.
pub fn load_dataset(manifest_path: &Path, n_identities: u32, patch_size: usize) -> Result<Dataset> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Schema(format!("manifest header: {e}")))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Schema(format!(
            "manifest header must be `{}`, found `{}`",
            MANIFEST_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for (i, rec) in reader.deserialize::<Row>().enumerate() {
        let row_no = i + 1;
        let row = rec.map_err(|e| Error::Schema(format!("manifest row {row_no}: {e}")))?;
        if row.label > n_identities {
            return Err(Error::Schema(format!(
                "manifest row {row_no}: label {} exceeds N = {n_identities}",
                row.label
            )));
        }
        let full: PathBuf = base.join(&row.path);
        let image = read_patch(&full, patch_size).map_err(|reason| Error::Load {
            row: row_no,
            path: row.path.clone(),
            reason,
        })?;
        samples.push(Sample {
            image,
            label: IdentityLabel(row.label),
            session_id: row.session,
            tracklet_id: row.tracklet,
            origin: Origin::Original,
            face: None,
            source: Some(row.path),
        });
    }
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Dataset::new(samples, n_identities)
}

fn read_patch(path: &Path, patch_size: usize) -> std::result::Result<Patch, String> {
    let img = image::open(path).map_err(|e| e.to_string())?.to_rgb8();
    let img = if img.width() as usize != patch_size || img.height() as usize != patch_size {
        image::imageops::resize(&img, patch_size as u32, patch_size as u32, FilterType::Triangle)
    } else {
        img
    };
    let data = img
        .as_raw()
        .iter()
        .map(|&v| v as f32 / 127.5 - 1.0)
        .map(|v| v.clamp(-1.0, 1.0))
        .collect();
    Patch::new(patch_size, data).map_err(|e| e.to_string())
}

fn to_u8(v: f32) -> u8 {
    ((v + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Saves a patch as an 8-bit PNG.
pub fn save_patch(patch: &Patch, path: &Path) -> Result<()> {
    let s = patch.size() as u32;
    let raw: Vec<u8> = patch.pixels().iter().map(|&v| to_u8(v)).collect();
    let img = image::RgbImage::from_raw(s, s, raw).expect("patch buffer size");
    img.save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e.to_string())))
}

/// Writes every sample as PNG under `dir/images/` plus `dir/manifest.csv`.
/// Returns the manifest path. Samples without a source get `img_NNNNNN.png`.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<PathBuf> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let manifest = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&manifest)
        .map_err(|e| Error::io(&manifest, std::io::Error::other(e.to_string())))?;
    let csv_err = |e: csv::Error| Error::io(&manifest, std::io::Error::other(e.to_string()));
    w.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for (i, s) in dataset.samples().iter().enumerate() {
        let rel = format!("images/img_{i:06}.png");
        save_patch(&s.image, &dir.join(&rel))?;
        w.write_record([
            rel,
            s.label.to_string(),
            s.session_id.to_string(),
            s.tracklet_id.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

/// Writes `path,x,y,confidence` rows for samples with a recorded face glyph,
/// using the same image names as [`write_dataset`]. This is the file format
/// consumed by the external detector.
pub fn write_detections(dataset: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::from("path,x,y,confidence\n");
    for (i, s) in dataset.samples().iter().enumerate() {
        if let Some(face) = s.face {
            out.push_str(&format!("images/img_{i:06}.png,{},{},1\n", face.x, face.y));
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(dir: &Path, name: &str, size: u32) {
        let img = image::RgbImage::from_fn(size, size, |x, y| image::Rgb([(x * 40) as u8, (y * 40) as u8, 255]));
        img.save(dir.join(name)).unwrap();
    }

    #[test]
    fn loads_three_rows_in_manifest_order() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.png", "b.png", "c.png"] {
            write_png(dir.path(), n, 4);
        }
        let m = dir.path().join("m.csv");
        fs::write(&m, "path,label,session,tracklet\nb.png,2,0,1\na.png,0,0,0\nc.png,1,1,2\n").unwrap();
        let ds = load_dataset(&m, 2, 4).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.n_identities(), 2);
        let labels: Vec<u32> = ds.samples().iter().map(|s| s.label.0).collect();
        assert_eq!(labels, vec![2, 0, 1]);
        assert!(ds
            .samples()
            .iter()
            .all(|s| s.image.pixels().iter().all(|v| (-1.0..=1.0).contains(v))));
        assert_eq!(ds.samples()[0].image.pixels()[2], 1.0);
    }

    #[test]
    fn label_above_n_is_a_schema_error() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png", 4);
        let m = dir.path().join("m.csv");
        fs::write(&m, "path,label,session,tracklet\na.png,7,0,0\n").unwrap();
        assert!(matches!(load_dataset(&m, 2, 4), Err(Error::Schema(_))));
    }

    #[test]
    fn missing_image_names_the_row() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png", 4);
        let m = dir.path().join("m.csv");
        fs::write(&m, "path,label,session,tracklet\na.png,1,0,0\nnope.png,1,0,0\n").unwrap();
        match load_dataset(&m, 2, 4) {
            Err(Error::Load { row, path, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(path, "nope.png");
            }
            other => panic!("expected load error, got {other:?}"),
        }
    }

    #[test]
    fn empty_manifest_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        fs::write(&m, "path,label,session,tracklet\n").unwrap();
        assert!(matches!(load_dataset(&m, 2, 4), Err(Error::EmptyDataset)));
    }

    #[test]
    fn resizes_to_patch_size() {
        let dir = tempfile::tempdir().unwrap();
        write_png(dir.path(), "a.png", 6);
        let m = dir.path().join("m.csv");
        fs::write(&m, "path,label,session,tracklet\na.png,1,0,0\n").unwrap();
        let ds = load_dataset(&m, 1, 4).unwrap();
        assert_eq!(ds.patch_size(), Some(4));
    }
}
