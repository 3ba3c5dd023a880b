//! Labeled manifests and sieved tile datasets.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::imaging::{to_luma, ImageBuffer};
use crate::tiler::{grid_tiles, sieve, TileSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Label {
    /// Painted by the target artist.
    Positive,
    Negative,
}

impl Label {
    pub fn as_target(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => 0.0,
        }
    }

    /// Decision rule: positive iff `p >= 0.5`.
    pub fn from_probability(p: f64) -> Self {
        if p >= 0.5 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            Label::Positive => "pos",
            Label::Negative => "neg",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, String> {
        match s {
            "pos" => Ok(Label::Positive),
            "neg" => Ok(Label::Negative),
            other => Err(format!("unknown label {other:?} (expected pos or neg)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn token(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> core::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub path: String,
    pub label: Label,
    pub painting_id: String,
    pub split: Split,
}

/// Parses `path<TAB>label<TAB>painting_id<TAB>split` lines.
///
/// Blank lines and lines starting with `#` are skipped. A painting listed more
/// than once must keep its label and split, and a path may belong to only one
/// painting.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut entries = Vec::new();
    let mut paintings: BTreeMap<String, (Label, Split, usize)> = BTreeMap::new();
    let mut paths: BTreeMap<String, (String, usize)> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Manifest {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(err(format!(
                "expected 4 tab-separated fields, found {}",
                fields.len()
            )));
        }
        if fields.iter().any(|f| f.is_empty()) {
            return Err(err("empty field".to_string()));
        }
        let label: Label = fields[1].parse().map_err(err)?;
        let split: Split = fields[3].parse().map_err(err)?;
        let entry = ManifestEntry {
            path: fields[0].to_string(),
            label,
            painting_id: fields[2].to_string(),
            split,
        };

        if let Some((id, first)) = paths.get(&entry.path) {
            if *id != entry.painting_id {
                return Err(err(format!(
                    "path {} already belongs to painting {id} (line {first})",
                    entry.path
                )));
            }
        } else {
            paths.insert(entry.path.clone(), (entry.painting_id.clone(), line_no));
        }
        if let Some(&(l, s, first)) = paintings.get(&entry.painting_id) {
            if l != label || s != split {
                return Err(err(format!(
                    "painting {} listed as {l}/{s} on line {first} but {label}/{split} here",
                    entry.painting_id
                )));
            }
        } else {
            paintings.insert(entry.painting_id.clone(), (label, split, line_no));
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Formats entries in the manifest text format.
pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("# path\tlabel\tpainting_id\tsplit\n");
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            e.path, e.label, e.painting_id, e.split
        ));
    }
    out
}

/// A tile's samples as a channel-major tensor scaled by 1/255.
pub fn tile_tensor(img: &ImageBuffer, x: usize, y: usize, size: usize) -> Vec<f64> {
    let c = img.channels();
    let mut out = Vec::with_capacity(c * size * size);
    for ch in 0..c {
        for row in y..y + size {
            for col in x..x + size {
                out.push(img.pixel(col, row)[ch] as f64 / 255.0);
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileSample {
    /// Channel-major, normalized to `[0, 1]`.
    pub pixels: Vec<f64>,
    pub label: Label,
    pub painting_id: String,
    pub x: usize,
    pub y: usize,
}

/// Sieved tiles of one tile size, in insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct TileDataset {
    tile_size: usize,
    channels: Option<usize>,
    samples: Vec<TileSample>,
    warnings: Vec<String>,
}

impl TileDataset {
    pub fn new(tile_size: usize) -> Self {
        Self {
            tile_size,
            channels: None,
            samples: Vec::new(),
            warnings: Vec::new(),
        }
    }

    pub fn tile_size(&self) -> usize {
        self.tile_size
    }

    /// Channel count of the stored tiles, once the first painting is added.
    pub fn channels(&self) -> Option<usize> {
        self.channels
    }

    pub fn samples(&self) -> &[TileSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Paintings that contributed no tile.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn push(&mut self, sample: TileSample) -> Result<()> {
        let channels = *self
            .channels
            .get_or_insert(sample.pixels.len() / (self.tile_size * self.tile_size));
        let expected = channels * self.tile_size * self.tile_size;
        if sample.pixels.len() != expected {
            return Err(Error::ShapeMismatch {
                expected,
                actual: sample.pixels.len(),
            });
        }
        self.samples.push(sample);
        Ok(())
    }

    /// Sieves `img` and appends its kept tiles in row-major order.
    ///
    /// Returns the number of tiles added. A painting with no surviving tile
    /// leaves a warning instead of failing.
    pub fn add_painting(
        &mut self,
        painting_id: &str,
        label: Label,
        img: &ImageBuffer,
        stride: usize,
    ) -> Result<usize> {
        let spec = TileSpec::new(self.tile_size, stride)?;
        if let Some(c) = self.channels {
            if c != img.channels() {
                return Err(Error::Dataset(format!(
                    "painting {painting_id} has {} channels but the dataset holds {c}-channel tiles",
                    img.channels()
                )));
            }
        }
        let tiles = grid_tiles(img, spec).map_err(|e| {
            Error::Dataset(format!("painting {painting_id}: {e}"))
        })?;
        let sieved = sieve(&to_luma(img), tiles)?;
        let mut added = 0;
        for t in sieved.iter().filter(|t| t.kept) {
            self.push(TileSample {
                pixels: tile_tensor(img, t.x, t.y, t.size),
                label,
                painting_id: painting_id.to_string(),
                x: t.x,
                y: t.y,
            })?;
            added += 1;
        }
        if added == 0 {
            self.warnings.push(format!(
                "painting {painting_id}: no tile of {} survived the entropy sieve",
                sieved.len()
            ));
        }
        Ok(added)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassBalance {
    pub positive_fraction: f64,
    /// Tile count per painting, keyed by painting id.
    pub per_painting: BTreeMap<String, usize>,
}

pub fn class_balance(ds: &TileDataset) -> Result<ClassBalance> {
    if ds.is_empty() {
        return Err(Error::Empty("tile dataset"));
    }
    let mut per_painting = BTreeMap::new();
    let mut positives = 0usize;
    for s in ds.samples() {
        *per_painting.entry(s.painting_id.clone()).or_insert(0) += 1;
        if s.label == Label::Positive {
            positives += 1;
        }
    }
    Ok(ClassBalance {
        positive_fraction: positives as f64 / ds.len() as f64,
        per_painting,
    })
}
