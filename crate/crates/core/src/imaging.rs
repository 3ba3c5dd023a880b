//! Raster buffers, luma conversion, histograms and Shannon entropy.

use alloc::format;
use alloc::vec::Vec;
use core::ops::AddAssign;

use crate::{Error, Result};

/// A decoded 8-bit raster, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be at least 1x1, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidImage(format!("{width}x{height}x{channels} overflows")))?;
        if data.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} samples for {width}x{height}x{channels}, got {}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// An image with every sample set to `value`.
    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        let len = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidImage(format!("{width}x{height}x{channels} overflows")))?;
        Self::new(width, height, channels, alloc::vec![value; len])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn full_rect(&self) -> Rect {
        Rect::new(0, 0, self.width, self.height)
    }

    /// Samples of the pixel at (`x`, `y`).
    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [u8] {
        let start = (y * self.width + x) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    pub fn contains(&self, rect: &Rect) -> bool {
        rect.x
            .checked_add(rect.width)
            .is_some_and(|r| r <= self.width)
            && rect
                .y
                .checked_add(rect.height)
                .is_some_and(|b| b <= self.height)
    }

    /// Copies `rect` out as a new image with the same channel count.
    pub fn crop(&self, rect: &Rect) -> Result<ImageBuffer> {
        self.check_region(rect)?;
        if rect.area() == 0 {
            return Err(Error::EmptyRegion);
        }
        let mut data = Vec::with_capacity(rect.area() * self.channels);
        for y in rect.y..rect.y + rect.height {
            let start = (y * self.width + rect.x) * self.channels;
            data.extend_from_slice(&self.data[start..start + rect.width * self.channels]);
        }
        ImageBuffer::new(rect.width, rect.height, self.channels, data)
    }

    pub(crate) fn check_region(&self, rect: &Rect) -> Result<()> {
        if self.contains(rect) {
            Ok(())
        } else {
            Err(Error::RegionOutOfBounds {
                x: rect.x,
                y: rect.y,
                width: rect.width,
                height: rect.height,
                image_width: self.width,
                image_height: self.height,
            })
        }
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub const fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        Self {
            x,
            y,
            width,
            height,
        }
    }

    pub const fn square(x: usize, y: usize, size: usize) -> Self {
        Self::new(x, y, size, size)
    }

    pub const fn area(&self) -> usize {
        self.width * self.height
    }
}

/// BT.601 luma of one RGB pixel, rounded half-up.
///
/// Integer weights per mille, so the rounding is exact.
pub fn luma(r: u8, g: u8, b: u8) -> u8 {
    let weighted = 299 * r as u32 + 587 * g as u32 + 114 * b as u32;
    ((weighted + 500) / 1000) as u8
}

/// Converts to a single luma channel. One-channel input is returned as is.
pub fn to_luma(img: &ImageBuffer) -> ImageBuffer {
    if img.channels == 1 {
        return img.clone();
    }
    let data = img
        .data
        .chunks_exact(3)
        .map(|px| luma(px[0], px[1], px[2]))
        .collect();
    ImageBuffer {
        width: img.width,
        height: img.height,
        channels: 1,
        data,
    }
}

/// Counts of each 8-bit luma value.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Histogram {
    bins: [u64; 256],
    total: u64,
}

impl Default for Histogram {
    fn default() -> Self {
        Self {
            bins: [0; 256],
            total: 0,
        }
    }
}

impl Histogram {
    pub fn from_bins(bins: [u64; 256]) -> Self {
        let total = bins.iter().sum();
        Self { bins, total }
    }

    pub fn bins(&self) -> &[u64; 256] {
        &self.bins
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn add_sample(&mut self, value: u8) {
        self.bins[value as usize] += 1;
        self.total += 1;
    }
}

impl AddAssign<&Histogram> for Histogram {
    fn add_assign(&mut self, rhs: &Histogram) {
        for (a, b) in self.bins.iter_mut().zip(rhs.bins.iter()) {
            *a += b;
        }
        self.total += rhs.total;
    }
}

/// Histogram of a one-channel image over `region`.
pub fn histogram(img: &ImageBuffer, region: &Rect) -> Result<Histogram> {
    if img.channels != 1 {
        return Err(Error::ChannelMismatch {
            expected: 1,
            actual: img.channels,
        });
    }
    if region.area() == 0 {
        return Err(Error::EmptyRegion);
    }
    img.check_region(region)?;
    let mut hist = Histogram::default();
    for y in region.y..region.y + region.height {
        let row = y * img.width;
        for &v in &img.data[row + region.x..row + region.x + region.width] {
            hist.bins[v as usize] += 1;
        }
    }
    hist.total = region.area() as u64;
    Ok(hist)
}

/// Shannon entropy in bits, with `0 log 0 = 0`.
///
/// Each term uses the proportion `count / total`, so two histograms with the
/// same proportions yield bit-identical entropies.
pub fn shannon_entropy(h: &Histogram) -> Result<f64> {
    if h.total == 0 {
        return Err(Error::EmptyHistogram);
    }
    let total = h.total as f64;
    let mut sum = 0.0;
    for &count in h.bins.iter().filter(|&&c| c > 0) {
        let p = count as f64 / total;
        sum -= p * libm::log2(p);
    }
    // A single occupied bin gives -0.0.
    Ok(if sum <= 0.0 { 0.0 } else { sum })
}

/// Entropy of a whole image, converting to luma first when needed.
pub fn image_entropy(img: &ImageBuffer) -> Result<f64> {
    let gray = to_luma(img);
    shannon_entropy(&histogram(&gray, &gray.full_rect())?)
}
