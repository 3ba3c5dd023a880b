//! Tab-separated tables with `#` header lines.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use atelier_core::aggregate::{EnsembleWeights, PaintingResult};
use atelier_core::classifier::EpochMetrics;
use atelier_core::dataset::Label;
use atelier_core::probmap::ProbabilityMap;
use atelier_core::TileRecord;

use crate::{Error, Result};

pub const TILE_HEADER: &str = "# x\ty\tsize\tentropy\tkept";
pub const RESULTS_HEADER: &str =
    "# painting_id\tmean_prob\tpredicted\ttrue_label\tn_tiles_kept\tn_tiles_total";
pub const MAP_HEADER: &str = "# x\ty\tcoverage\tprob";
pub const METRICS_HEADER: &str = "# epoch\ttrain_loss\tval_loss\tval_accuracy";
pub const WEIGHTS_HEADER: &str = "# w\tachieved_error\tmisclassified";

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn tile_table(tiles: &[TileRecord]) -> String {
    let mut out = String::from(TILE_HEADER);
    out.push('\n');
    for t in tiles {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{:.6}\t{}",
            t.x,
            t.y,
            t.size,
            t.entropy,
            u8::from(t.kept)
        );
    }
    out
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub painting_id: String,
    pub mean_prob: f64,
    pub predicted: Label,
    pub true_label: Option<Label>,
    pub n_tiles_kept: usize,
    pub n_tiles_total: usize,
}

impl From<&PaintingResult> for ResultRow {
    fn from(r: &PaintingResult) -> Self {
        Self {
            painting_id: r.painting_id.clone(),
            mean_prob: r.mean_prob,
            predicted: r.predicted,
            true_label: r.true_label,
            n_tiles_kept: r.n_tiles_kept(),
            n_tiles_total: r.n_tiles_total(),
        }
    }
}

/// Probabilities are written in shortest round-trip form so that reading a
/// table back reproduces the exact values.
pub fn results_table(rows: &[ResultRow]) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}",
            r.painting_id,
            r.mean_prob,
            r.predicted,
            r.true_label.map_or("-", Label::token),
            r.n_tiles_kept,
            r.n_tiles_total
        );
    }
    out
}

pub fn parse_results(text: &str, path: &Path) -> Result<Vec<ResultRow>> {
    let err = |line: usize, message: String| Error::Table {
        path: path.into(),
        line,
        message,
    };
    let mut rows: Vec<ResultRow> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() || raw.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').collect();
        if fields.len() != 6 {
            return Err(err(line, format!("expected 6 fields, found {}", fields.len())));
        }
        let mean_prob: f64 = fields[1]
            .parse()
            .map_err(|_| err(line, format!("bad probability {:?}", fields[1])))?;
        if !(0.0..=1.0).contains(&mean_prob) {
            return Err(err(line, format!("probability {mean_prob} outside [0, 1]")));
        }
        let label = |s: &str| -> Result<Label> {
            s.parse().map_err(|_| err(line, format!("bad label {s:?}")))
        };
        let predicted = label(fields[2])?;
        let true_label = match fields[3] {
            "-" => None,
            s => Some(label(s)?),
        };
        let count = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| err(line, format!("bad tile count {s:?}")))
        };
        let painting_id = fields[0].to_string();
        if rows.iter().any(|r| r.painting_id == painting_id) {
            return Err(err(line, format!("duplicate painting {painting_id}")));
        }
        rows.push(ResultRow {
            painting_id,
            mean_prob,
            predicted,
            true_label,
            n_tiles_kept: count(fields[4])?,
            n_tiles_total: count(fields[5])?,
        });
    }
    Ok(rows)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>> {
    let path = path.as_ref();
    parse_results(&read_text(path)?, path)
}

/// Covered pixels only, row-major.
pub fn map_table(map: &ProbabilityMap) -> String {
    let mut out = String::from(MAP_HEADER);
    out.push('\n');
    for (x, y, coverage, prob) in map.covered() {
        let _ = writeln!(out, "{x}\t{y}\t{coverage}\t{prob:.6}");
    }
    out
}

pub fn metrics_table(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in metrics {
        let _ = writeln!(
            out,
            "{}\t{:.6}\t{:.6}\t{:.6}",
            m.epoch, m.train_loss, m.val_loss, m.val_accuracy
        );
    }
    out
}

pub fn weights_table(w: &EnsembleWeights) -> String {
    format!(
        "{WEIGHTS_HEADER}\n{:.2}\t{:.6}\t{}\n",
        w.w, w.achieved_error, w.misclassified
    )
}
