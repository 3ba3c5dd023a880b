//! Overlapping square tiles and the inclusive entropy sieve.

use alloc::format;
use alloc::vec::Vec;

use crate::imaging::{histogram, shannon_entropy, ImageBuffer, Rect};
use crate::{Error, Result};

/// Side length and step of a square tile grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TileSpec {
    size: usize,
    stride: usize,
}

impl TileSpec {
    pub const MIN_SIZE: usize = 8;

    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size < Self::MIN_SIZE {
            return Err(Error::InvalidTileSpec(format!(
                "tile size {size} is below the minimum of {}",
                Self::MIN_SIZE
            )));
        }
        if stride == 0 || stride > size {
            return Err(Error::InvalidTileSpec(format!(
                "stride {stride} must be in 1..={size}"
            )));
        }
        Ok(Self { size, stride })
    }

    /// Half-tile stride (rounded down).
    pub fn with_default_stride(size: usize) -> Result<Self> {
        Self::new(size, (size / 2).max(1))
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Tiles along an axis of length `dim`.
    pub fn count_along(&self, dim: usize) -> usize {
        if dim < self.size {
            0
        } else {
            (dim - self.size) / self.stride + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileRecord {
    pub x: usize,
    pub y: usize,
    pub size: usize,
    pub entropy: f64,
    pub kept: bool,
    pub probability: Option<f64>,
}

impl TileRecord {
    pub fn at(x: usize, y: usize, size: usize) -> Self {
        Self {
            x,
            y,
            size,
            entropy: 0.0,
            kept: false,
            probability: None,
        }
    }

    pub fn rect(&self) -> Rect {
        Rect::square(self.x, self.y, self.size)
    }
}

/// Every fully contained tile position, row-major.
pub fn grid_tiles(img: &ImageBuffer, spec: TileSpec) -> Result<Vec<TileRecord>> {
    let (w, h) = (img.width(), img.height());
    if w < spec.size || h < spec.size {
        return Err(Error::ImageSmallerThanTile {
            width: w,
            height: h,
            size: spec.size,
        });
    }
    let (nx, ny) = (spec.count_along(w), spec.count_along(h));
    let mut tiles = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            tiles.push(TileRecord::at(i * spec.stride, j * spec.stride, spec.size));
        }
    }
    Ok(tiles)
}

/// Fills in each tile's entropy and keeps it iff it equals or exceeds the
/// entropy of the whole (one-channel) image.
pub fn sieve(img: &ImageBuffer, tiles: Vec<TileRecord>) -> Result<Vec<TileRecord>> {
    let threshold = shannon_entropy(&histogram(img, &img.full_rect())?)?;
    sieve_with_threshold(img, tiles, threshold)
}

/// [`sieve`] against an explicit entropy threshold.
pub fn sieve_with_threshold(
    img: &ImageBuffer,
    mut tiles: Vec<TileRecord>,
    threshold: f64,
) -> Result<Vec<TileRecord>> {
    for tile in &mut tiles {
        tile.entropy = shannon_entropy(&histogram(img, &tile.rect())?)?;
        tile.kept = tile.entropy >= threshold;
    }
    Ok(tiles)
}

/// Fraction of tiles that survived the sieve.
pub fn coverage_fraction(tiles: &[TileRecord]) -> Result<f64> {
    if tiles.is_empty() {
        return Err(Error::Empty("tile list"));
    }
    let kept = tiles.iter().filter(|t| t.kept).count();
    Ok(kept as f64 / tiles.len() as f64)
}
