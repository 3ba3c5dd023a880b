//! Per-pixel probability maps from overlapping kept tiles.

use alloc::vec;
use alloc::vec::Vec;

use crate::imaging::ImageBuffer;
use crate::tiler::TileRecord;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    width: usize,
    height: usize,
    /// Mean probability; meaningful only where `coverage > 0`.
    prob: Vec<f64>,
    coverage: Vec<u32>,
}

impl ProbabilityMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn coverage(&self, x: usize, y: usize) -> u32 {
        self.coverage[y * self.width + x]
    }

    pub fn prob(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        (self.coverage[i] > 0).then(|| self.prob[i])
    }

    /// Covered pixels as `(x, y, coverage, prob)`, row-major.
    pub fn covered(&self) -> impl Iterator<Item = (usize, usize, u32, f64)> + '_ {
        (0..self.height).flat_map(move |y| {
            (0..self.width).filter_map(move |x| {
                let i = y * self.width + x;
                (self.coverage[i] > 0).then(|| (x, y, self.coverage[i], self.prob[i]))
            })
        })
    }
}

/// Per-pixel mean of the probabilities of every kept tile covering it.
///
/// Discarded tiles are ignored; sums run in tile order.
pub fn accumulate(width: usize, height: usize, tiles: &[TileRecord]) -> Result<ProbabilityMap> {
    let mut sum = vec![0.0; width * height];
    let mut coverage = vec![0u32; width * height];
    for t in tiles.iter().filter(|t| t.kept) {
        let p = t.probability.ok_or(Error::MissingProbability { x: t.x, y: t.y })?;
        if t.x + t.size > width || t.y + t.size > height {
            return Err(Error::RegionOutOfBounds {
                x: t.x,
                y: t.y,
                width: t.size,
                height: t.size,
                image_width: width,
                image_height: height,
            });
        }
        for y in t.y..t.y + t.size {
            let row = y * width;
            for s in &mut sum[row + t.x..row + t.x + t.size] {
                *s += p;
            }
            for c in &mut coverage[row + t.x..row + t.x + t.size] {
                *c += 1;
            }
        }
    }
    let prob = sum
        .into_iter()
        .zip(&coverage)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    Ok(ProbabilityMap {
        width,
        height,
        prob,
        coverage,
    })
}

/// Four likelihood bands of the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Band {
    /// `p >= 0.65`
    Red,
    /// `0.5 <= p < 0.65`
    Gold,
    /// `0.35 < p < 0.5`
    Green,
    /// `p <= 0.35`
    Blue,
}

pub const GRAY: [u8; 3] = [128, 128, 128];

impl Band {
    pub const ALL: [Band; 4] = [Band::Red, Band::Gold, Band::Green, Band::Blue];

    pub fn rgb(self) -> [u8; 3] {
        match self {
            Band::Red => [200, 30, 30],
            Band::Gold => [218, 165, 32],
            Band::Green => [40, 160, 40],
            Band::Blue => [30, 60, 200],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Band::Red => "red",
            Band::Gold => "gold",
            Band::Green => "green",
            Band::Blue => "blue",
        }
    }
}

pub fn bucket(p: f64) -> Result<Band> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ProbabilityOutOfRange(p));
    }
    Ok(if p >= 0.65 {
        Band::Red
    } else if p >= 0.5 {
        Band::Gold
    } else if p > 0.35 {
        Band::Green
    } else {
        Band::Blue
    })
}

/// Sidecar legend for rendered maps.
pub fn legend() -> &'static str {
    "red\t200,30,30\tp >= 0.65\n\
     gold\t218,165,32\t0.5 <= p < 0.65\n\
     green\t40,160,40\t0.35 < p < 0.5\n\
     blue\t30,60,200\tp <= 0.35\n\
     gray\t128,128,128\tnot examined\n"
}

fn blend(band: u8, src: u8, alpha: f64) -> u8 {
    let v = alpha * band as f64 + (1.0 - alpha) * src as f64;
    libm::floor(v + 0.5).clamp(0.0, 255.0) as u8
}

/// Colors each pixel by band (gray where uncovered), optionally blended
/// over `source` as `alpha * band + (1 - alpha) * source`.
pub fn render(map: &ProbabilityMap, source: Option<&ImageBuffer>, alpha: f64) -> Result<ImageBuffer> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::ProbabilityOutOfRange(alpha));
    }
    if let Some(src) = source {
        if src.width() != map.width || src.height() != map.height {
            return Err(Error::DimensionMismatch {
                map_width: map.width,
                map_height: map.height,
                source_width: src.width(),
                source_height: src.height(),
            });
        }
    }
    let mut data = Vec::with_capacity(map.width * map.height * 3);
    for y in 0..map.height {
        for x in 0..map.width {
            let color = match map.prob(x, y) {
                Some(p) => bucket(p)?.rgb(),
                None => GRAY,
            };
            match source {
                None => data.extend_from_slice(&color),
                Some(src) => {
                    let px = src.pixel(x, y);
                    for (ch, &c) in color.iter().enumerate() {
                        let s = if px.len() == 1 { px[0] } else { px[ch] };
                        data.push(blend(c, s, alpha));
                    }
                }
            }
        }
    }
    ImageBuffer::new(map.width, map.height, 3, data)
}
