//! Manifest-driven dataset assembly and synthetic corpus generation on disk.

use std::fs;
use std::path::{Path, PathBuf};

use atelier_core::dataset::{format_manifest, parse_manifest, ManifestEntry, Split, TileDataset};
use atelier_core::synthgen::{generate_painting, plan_corpus, StyleParams};
use atelier_core::{Error as CoreError, Executor};

use crate::image_io::{load_image, save_png};
use crate::{Error, Result};

pub const MANIFEST_NAME: &str = "manifest.tsv";

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text).map_err(|e| match e {
        CoreError::Manifest { line, message } => Error::Table {
            path: path.into(),
            line,
            message,
        },
        other => other.into(),
    })
}

/// Relative manifest paths are resolved against the manifest's directory.
pub fn resolve(base_dir: &Path, entry: &ManifestEntry) -> PathBuf {
    let p = Path::new(&entry.path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base_dir.join(p)
    }
}

/// Sieved tiles of every painting in `split`, in manifest order.
///
/// Paintings are decoded in parallel but added in order, so the dataset does
/// not depend on the executor.
pub fn build_dataset<E: Executor>(
    entries: &[ManifestEntry],
    base_dir: &Path,
    tile_size: usize,
    stride: usize,
    split: Split,
    exec: &E,
) -> Result<TileDataset> {
    let chosen: Vec<&ManifestEntry> = entries.iter().filter(|e| e.split == split).collect();
    if chosen.is_empty() {
        return Err(Error::Data(format!("manifest has no {split} paintings")));
    }
    let images = exec.map(&chosen, |e| load_image(resolve(base_dir, e)));
    let mut ds = TileDataset::new(tile_size);
    for (entry, img) in chosen.iter().zip(images) {
        let wrap = |source: Error| Error::Painting {
            painting_id: entry.painting_id.clone(),
            source: Box::new(source),
        };
        let img = img.map_err(wrap)?;
        ds.add_painting(&entry.painting_id, entry.label, &img, stride)
            .map_err(|e| wrap(e.into()))?;
    }
    for w in ds.warnings() {
        log::warn!("{w}");
    }
    if ds.is_empty() {
        return Err(Error::Data(format!(
            "no {split} tile survived the entropy sieve"
        )));
    }
    Ok(ds)
}

/// Writes `2 * n_per_class` PNGs and their manifest into `out_dir`; returns
/// the manifest path.
pub fn generate_corpus<E: Executor>(
    style_a: &StyleParams,
    style_b: &StyleParams,
    n_per_class: usize,
    width: usize,
    height: usize,
    out_dir: &Path,
    exec: &E,
) -> Result<PathBuf> {
    let items = plan_corpus(style_a, style_b, n_per_class)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let written = exec.map(&items, |item| -> Result<()> {
        let img = generate_painting(&item.style, width, height)?;
        save_png(&img, out_dir.join(&item.entry.path))
    });
    written.into_iter().collect::<Result<Vec<()>>>()?;
    let entries: Vec<ManifestEntry> = items.into_iter().map(|i| i.entry).collect();
    let manifest = out_dir.join(MANIFEST_NAME);
    fs::write(&manifest, format_manifest(&entries)).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use atelier_core::Serial;

    #[test]
    fn generated_corpus_loads_back() {
        let dir = tempfile::tempdir().unwrap();
        let a = StyleParams::with_orientation(0.0, 1);
        let b = StyleParams::with_orientation(90.0, 2);
        let manifest = generate_corpus(&a, &b, 4, 64, 64, dir.path(), &Serial).unwrap();
        let entries = read_manifest(&manifest).unwrap();
        assert_eq!(entries.len(), 8);
        let ds = build_dataset(&entries, dir.path(), 32, 16, Split::Train, &Serial).unwrap();
        assert!(!ds.is_empty());
        assert_eq!(ds.channels(), Some(3));
    }

    #[test]
    fn missing_image_names_the_painting() {
        let dir = tempfile::tempdir().unwrap();
        let entries = parse_manifest("gone.png\tpos\tp1\ttrain\n").unwrap();
        match build_dataset(&entries, dir.path(), 32, 16, Split::Train, &Serial) {
            Err(Error::Painting { painting_id, .. }) => assert_eq!(painting_id, "p1"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn manifest_errors_keep_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, "# header\na.png\tpos\tp\ttrain\nb.png\tneg\tp\ttrain\n").unwrap();
        match read_manifest(&path) {
            Err(Error::Table { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
