//! Synthetic two-artist corpus: oriented brush strokes over a flat ground.
//!
//! Class signal lives in stroke statistics (orientation, length, width), not
//! in composition.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Label, ManifestEntry, Split};
use crate::imaging::ImageBuffer;
use crate::{Error, Result};

pub const MIN_DIMENSION: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct StyleParams {
    /// Degrees, counter-clockwise from the x axis.
    pub stroke_orientation: f64,
    /// Uniform jitter applied to the orientation, in degrees either way.
    pub orientation_jitter: f64,
    pub stroke_length: f64,
    pub stroke_width: f64,
    /// First entry is the ground; strokes draw from the rest (or the ground
    /// color itself when it is the only entry).
    pub palette: Vec<[u8; 3]>,
    pub noise_amplitude: u32,
    /// `None` paints enough strokes to cover the canvas about twice.
    pub stroke_count: Option<usize>,
    pub seed: u64,
}

impl StyleParams {
    /// Earthy palette shared by both default styles.
    pub fn default_palette() -> Vec<[u8; 3]> {
        vec![
            [196, 180, 150],
            [120, 84, 52],
            [66, 92, 60],
            [214, 160, 70],
            [40, 52, 90],
            [170, 60, 40],
            [235, 225, 200],
        ]
    }

    pub fn with_orientation(degrees: f64, seed: u64) -> Self {
        Self {
            stroke_orientation: degrees,
            orientation_jitter: 10.0,
            stroke_length: 24.0,
            stroke_width: 4.0,
            palette: Self::default_palette(),
            noise_amplitude: 12,
            stroke_count: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.palette.is_empty() {
            return Err(Error::InvalidStyle("palette is empty".into()));
        }
        if self.noise_amplitude > 255 {
            return Err(Error::InvalidStyle(format!(
                "noise amplitude {} exceeds 255",
                self.noise_amplitude
            )));
        }
        let geometry = [
            self.stroke_orientation,
            self.orientation_jitter,
            self.stroke_length,
            self.stroke_width,
        ];
        if geometry.iter().any(|v| !v.is_finite())
            || self.stroke_length <= 0.0
            || self.stroke_width <= 0.0
            || self.orientation_jitter < 0.0
        {
            return Err(Error::InvalidStyle(
                "stroke geometry must be finite and positive".into(),
            ));
        }
        Ok(())
    }

    fn strokes_for(&self, width: usize, height: usize) -> usize {
        self.stroke_count.unwrap_or_else(|| {
            let area = (width * height) as f64;
            libm::ceil(2.0 * area / (self.stroke_length * self.stroke_width)) as usize
        })
    }
}

/// Paints one canvas: ground fill, seeded strokes, then uniform noise.
pub fn generate_painting(style: &StyleParams, width: usize, height: usize) -> Result<ImageBuffer> {
    style.validate()?;
    if width < MIN_DIMENSION || height < MIN_DIMENSION {
        return Err(Error::InvalidStyle(format!(
            "canvas {width}x{height} is below the {MIN_DIMENSION}x{MIN_DIMENSION} minimum"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(style.seed);
    let ground = style.palette[0];
    let mut data: Vec<u8> = ground.iter().copied().cycle().take(width * height * 3).collect();
    let inks = if style.palette.len() > 1 {
        &style.palette[1..]
    } else {
        &style.palette[..]
    };

    let half_len = style.stroke_length / 2.0;
    let half_wid = style.stroke_width / 2.0;
    let reach = libm::ceil(libm::hypot(half_len, half_wid)) as isize;
    for _ in 0..style.strokes_for(width, height) {
        let cx = rng.random_range(0.0..width as f64);
        let cy = rng.random_range(0.0..height as f64);
        let jitter = if style.orientation_jitter > 0.0 {
            rng.random_range(-style.orientation_jitter..=style.orientation_jitter)
        } else {
            0.0
        };
        let theta = (style.stroke_orientation + jitter).to_radians();
        let ink = inks[rng.random_range(0..inks.len())];
        let shade: i32 = rng.random_range(-24..=24);
        let color = ink.map(|c| (c as i32 + shade).clamp(0, 255) as u8);
        let (sin, cos) = (libm::sin(theta), libm::cos(theta));

        let (x0, y0) = (cx as isize - reach, cy as isize - reach);
        for py in y0.max(0)..(cy as isize + reach + 1).min(height as isize) {
            for px in x0.max(0)..(cx as isize + reach + 1).min(width as isize) {
                let dx = px as f64 + 0.5 - cx;
                let dy = py as f64 + 0.5 - cy;
                // Image y grows downward; flip it so orientation is counter-clockwise.
                let along = dx * cos - dy * sin;
                let across = dx * sin + dy * cos;
                if libm::fabs(along) <= half_len && libm::fabs(across) <= half_wid {
                    let i = (py as usize * width + px as usize) * 3;
                    data[i..i + 3].copy_from_slice(&color);
                }
            }
        }
    }

    if style.noise_amplitude > 0 {
        let amp = style.noise_amplitude as i32;
        for v in data.iter_mut() {
            let n: i32 = rng.random_range(-amp..=amp);
            *v = (*v as i32 + n).clamp(0, 255) as u8;
        }
    }
    ImageBuffer::new(width, height, 3, data)
}

/// One painting of a planned corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusItem {
    pub entry: ManifestEntry,
    /// Style of the painting's class with its own derived seed.
    pub style: StyleParams,
}

/// Train/val/test painting counts for one class: 60/20/20 with at least one
/// painting held out for each of val and test.
pub fn split_counts(n_per_class: usize) -> (usize, usize, usize) {
    let held = ((n_per_class + 2) / 5).max(1);
    (n_per_class - 2 * held, held, held)
}

fn derive_seed(seed: u64, index: usize) -> u64 {
    // splitmix64 finalizer
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Lays out a balanced corpus: `n_per_class` positive paintings in
/// `style_a` and as many negative ones in `style_b`, one file each.
pub fn plan_corpus(
    style_a: &StyleParams,
    style_b: &StyleParams,
    n_per_class: usize,
) -> Result<Vec<CorpusItem>> {
    if n_per_class < 4 {
        return Err(Error::InvalidStyle(format!(
            "need at least 4 paintings per class, got {n_per_class}"
        )));
    }
    style_a.validate()?;
    style_b.validate()?;
    let (train, val, _) = split_counts(n_per_class);
    let mut items = Vec::with_capacity(2 * n_per_class);
    for (prefix, label, style) in [
        ("a", Label::Positive, style_a),
        ("b", Label::Negative, style_b),
    ] {
        for i in 0..n_per_class {
            let split = if i < train {
                Split::Train
            } else if i < train + val {
                Split::Val
            } else {
                Split::Test
            };
            let painting_id: String = format!("{prefix}{i:03}");
            items.push(CorpusItem {
                entry: ManifestEntry {
                    path: format!("{painting_id}.png"),
                    label,
                    painting_id,
                    split,
                },
                style: StyleParams {
                    seed: derive_seed(style.seed, i),
                    ..style.clone()
                },
            });
        }
    }
    Ok(items)
}
