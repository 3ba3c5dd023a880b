//! Painting-level decisions, classification error and two-model ensembles.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::classifier::CnnModel;
use crate::dataset::{tile_tensor, Label};
use crate::exec::Executor;
use crate::imaging::{to_luma, ImageBuffer};
use crate::tiler::{grid_tiles, sieve, TileRecord, TileSpec};
use crate::{Error, Result};

/// Decision boundary; probabilities at or above it are positive.
pub const DECISION_BOUNDARY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct PaintingResult {
    pub painting_id: String,
    /// Every grid tile; kept tiles carry their probability.
    pub tiles: Vec<TileRecord>,
    pub mean_prob: f64,
    pub predicted: Label,
    pub true_label: Option<Label>,
}

impl PaintingResult {
    /// Averages the probabilities of the kept tiles in order.
    pub fn from_tiles(
        painting_id: impl Into<String>,
        tiles: Vec<TileRecord>,
        true_label: Option<Label>,
    ) -> Result<Self> {
        let painting_id = painting_id.into();
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in tiles.iter().filter(|t| t.kept) {
            let p = t.probability.ok_or(Error::MissingProbability { x: t.x, y: t.y })?;
            sum += p;
            n += 1;
        }
        if n == 0 {
            return Err(Error::Unclassifiable(painting_id));
        }
        let mean_prob = sum / n as f64;
        Ok(Self::with_mean(painting_id, tiles, mean_prob, true_label))
    }

    /// A result whose mean is already known (e.g. read back from a table).
    pub fn with_mean(
        painting_id: impl Into<String>,
        tiles: Vec<TileRecord>,
        mean_prob: f64,
        true_label: Option<Label>,
    ) -> Self {
        Self {
            painting_id: painting_id.into(),
            tiles,
            mean_prob,
            predicted: Label::from_probability(mean_prob),
            true_label,
        }
    }

    pub fn n_tiles_kept(&self) -> usize {
        self.tiles.iter().filter(|t| t.kept).count()
    }

    pub fn n_tiles_total(&self) -> usize {
        self.tiles.len()
    }
}

/// Grid, sieve, score every kept tile and average.
pub fn classify_painting<E: Executor>(
    model: &CnnModel,
    img: &ImageBuffer,
    spec: TileSpec,
    painting_id: &str,
    true_label: Option<Label>,
    exec: &E,
) -> Result<PaintingResult> {
    let cfg = model.config();
    if spec.size() != cfg.input_size {
        return Err(Error::InvalidTileSpec(alloc::format!(
            "tile size {} does not match the model input size {}",
            spec.size(),
            cfg.input_size
        )));
    }
    if img.channels() != cfg.input_channels {
        return Err(Error::ChannelMismatch {
            expected: cfg.input_channels,
            actual: img.channels(),
        });
    }
    let tiles = sieve(&to_luma(img), grid_tiles(img, spec)?)?;
    let probs = exec.map(&tiles, |t| {
        if t.kept {
            model.forward(&tile_tensor(img, t.x, t.y, t.size)).map(Some)
        } else {
            Ok(None)
        }
    });
    let mut scored = tiles;
    for (t, p) in scored.iter_mut().zip(probs) {
        t.probability = p?;
    }
    PaintingResult::from_tiles(painting_id.to_string(), scored, true_label)
}

/// `|mean - 0.5|` for a misclassified painting, `None` when it is correct.
pub fn classification_error(r: &PaintingResult) -> Result<Option<f64>> {
    let truth = r
        .true_label
        .ok_or_else(|| Error::MissingLabel(r.painting_id.clone()))?;
    Ok(misclassification_error(r.mean_prob, truth))
}

fn misclassification_error(p: f64, truth: Label) -> Option<f64> {
    (Label::from_probability(p) != truth).then(|| libm::fabs(p - DECISION_BOUNDARY))
}

/// Fraction of paintings whose prediction matches the true label.
pub fn set_accuracy(results: &[PaintingResult]) -> Result<f64> {
    if results.is_empty() {
        return Err(Error::Empty("result list"));
    }
    let mut correct = 0usize;
    for r in results {
        let truth = r
            .true_label
            .ok_or_else(|| Error::MissingLabel(r.painting_id.clone()))?;
        if r.predicted == truth {
            correct += 1;
        }
    }
    Ok(correct as f64 / results.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleWeights {
    /// Weight on model A; model B gets `1 - w`.
    pub w: f64,
    /// Summed classification error at `w` on the optimization set.
    pub achieved_error: f64,
    pub misclassified: usize,
}

impl EnsembleWeights {
    pub fn new(w: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::ProbabilityOutOfRange(w));
        }
        Ok(Self {
            w,
            achieved_error: 0.0,
            misclassified: 0,
        })
    }
}

/// Convex combination `w pA + (1 - w) pB`.
pub fn combine(p_a: f64, p_b: f64, weights: &EnsembleWeights) -> f64 {
    if p_a == p_b {
        return p_a;
    }
    let w = weights.w;
    let p = w * p_a + (1.0 - w) * p_b;
    p.clamp(p_a.min(p_b), p_a.max(p_b))
}

/// Grid steps per unit weight.
pub const WEIGHT_GRID_STEPS: usize = 100;

/// Summed classification error and misclassification count at weight `w`.
pub fn ensemble_objective(val: &[(f64, f64, Label)], w: f64) -> (f64, usize) {
    let weights = EnsembleWeights {
        w,
        achieved_error: 0.0,
        misclassified: 0,
    };
    let mut total = 0.0;
    let mut count = 0;
    for &(a, b, truth) in val {
        if let Some(e) = misclassification_error(combine(a, b, &weights), truth) {
            total += e;
            count += 1;
        }
    }
    (total, count)
}

/// Searches `w` over `0.00, 0.01, ..., 1.00` for the least summed
/// classification error; ties go to fewer misclassifications, then smaller `w`.
pub fn optimize_weights(val: &[(f64, f64, Label)]) -> Result<EnsembleWeights> {
    if val.is_empty() {
        return Err(Error::Empty("validation list"));
    }
    for &(a, b, _) in val {
        for p in [a, b] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::ProbabilityOutOfRange(p));
            }
        }
    }
    let mut best: Option<EnsembleWeights> = None;
    for i in 0..=WEIGHT_GRID_STEPS {
        let w = i as f64 / WEIGHT_GRID_STEPS as f64;
        let (err, count) = ensemble_objective(val, w);
        let better = match &best {
            None => true,
            Some(b) => err < b.achieved_error || (err == b.achieved_error && count < b.misclassified),
        };
        if better {
            best = Some(EnsembleWeights {
                w,
                achieved_error: err,
                misclassified: count,
            });
        }
    }
    Ok(best.expect("grid is non-empty"))
}
