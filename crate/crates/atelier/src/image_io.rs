//! PNG and binary PPM/PGM reading, PNG and PPM/PGM writing.
//!
//! Sources with 16-bit samples keep only the high byte. Alpha channels are
//! rejected.

use std::fs;
use std::io::{BufWriter, Cursor, Write};
use std::path::Path;

use atelier_core::ImageBuffer;

use crate::{Error, Result};

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Largest accepted pixel count.
const MAX_PIXELS: u64 = 1 << 30;

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

/// Decodes PNG or P5/P6 bytes; `path` only labels errors.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes, path)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_pnm(bytes, path)
    } else if bytes.len() < 2 {
        Err(unreadable(path, "file is empty or truncated"))
    } else {
        Err(Error::Unsupported {
            path: path.into(),
            message: "expected PNG or binary PPM/PGM (P6/P5)".into(),
        })
    }
}

fn unreadable(path: &Path, message: impl Into<String>) -> Error {
    Error::Unreadable {
        path: path.into(),
        message: message.into(),
    }
}

fn check_dims(path: &Path, width: u64, height: u64) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(unreadable(path, format!("zero dimension {width}x{height}")));
    }
    if width.checked_mul(height).is_none_or(|n| n > MAX_PIXELS) {
        return Err(Error::DimensionOverflow {
            path: path.into(),
            width,
            height,
        });
    }
    Ok(())
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| unreadable(path, e.to_string()))?;
    {
        let info = reader.info();
        check_dims(path, info.width as u64, info.height as u64)?;
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::DimensionOverflow {
            path: path.into(),
            width: reader.info().width as u64,
            height: reader.info().height as u64,
        })?;
    let mut buf = vec![0; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| unreadable(path, e.to_string()))?;
    let channels = match frame.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        png::ColorType::GrayscaleAlpha | png::ColorType::Rgba => {
            return Err(Error::Unsupported {
                path: path.into(),
                message: "alpha channels are not supported".into(),
            })
        }
        other => {
            return Err(Error::Unsupported {
                path: path.into(),
                message: format!("color type {other:?}"),
            })
        }
    };
    let (w, h) = (frame.width as usize, frame.height as usize);
    let row_samples = w * channels;
    let mut data = Vec::with_capacity(row_samples * h);
    for row in buf[..frame.buffer_size()].chunks_exact(frame.line_size) {
        match frame.bit_depth {
            png::BitDepth::Eight => data.extend_from_slice(&row[..row_samples]),
            // Big-endian samples: the high byte comes first.
            png::BitDepth::Sixteen => data.extend(row[..2 * row_samples].iter().step_by(2)),
            other => {
                return Err(Error::Unsupported {
                    path: path.into(),
                    message: format!("bit depth {other:?} after expansion"),
                })
            }
        }
    }
    Ok(ImageBuffer::new(w, h, channels, data)?)
}

/// Splits a PNM header into its four tokens and returns the data offset.
fn pnm_header<'a>(bytes: &'a [u8], path: &Path) -> Result<([&'a [u8]; 4], usize)> {
    let mut tokens: [&[u8]; 4] = [&[]; 4];
    let mut pos = 0;
    for slot in tokens.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(unreadable(path, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        *slot = &bytes[start..pos];
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() {
        return Err(unreadable(path, "truncated header"));
    }
    Ok((tokens, pos + 1))
}

fn decode_pnm(bytes: &[u8], path: &Path) -> Result<ImageBuffer> {
    let (tokens, offset) = pnm_header(bytes, path)?;
    let channels = if tokens[0] == b"P6" { 3 } else { 1 };
    let number = |t: &[u8], what: &str| -> Result<u64> {
        std::str::from_utf8(t)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| unreadable(path, format!("bad {what} in header")))
    };
    let width = number(tokens[1], "width")?;
    let height = number(tokens[2], "height")?;
    let maxval = number(tokens[3], "maxval")?;
    check_dims(path, width, height)?;
    if maxval == 0 || maxval > 65535 {
        return Err(unreadable(path, format!("maxval {maxval} out of range")));
    }
    let samples = (width * height) as usize * channels;
    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let raster = &bytes[offset..];
    if raster.len() < samples * bytes_per_sample {
        return Err(unreadable(
            path,
            format!(
                "truncated raster: {} of {} bytes",
                raster.len(),
                samples * bytes_per_sample
            ),
        ));
    }
    let data = if bytes_per_sample == 2 {
        raster[..2 * samples].iter().step_by(2).copied().collect()
    } else {
        raster[..samples].to_vec()
    };
    Ok(ImageBuffer::new(width as usize, height as usize, channels, data)?)
}

/// Encodes an 8-bit gray or RGB PNG.
pub fn encode_png(img: &ImageBuffer) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        encoder.set_color(if img.channels() == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder
            .write_header()
            .map_err(|e| Error::Internal(format!("png encoder: {e}")))?;
        writer
            .write_image_data(img.data())
            .map_err(|e| Error::Internal(format!("png encoder: {e}")))?;
    }
    Ok(out)
}

pub fn save_png(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_png(img)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes P6 (RGB) or P5 (gray).
pub fn save_pnm(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    write!(w, "{magic}\n{} {}\n255\n", img.width(), img.height())
        .and_then(|_| w.write_all(img.data()))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}
