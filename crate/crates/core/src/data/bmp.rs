//! Minimal Windows bitmap codec: uncompressed 24-bit, 32×32 only.

use crate::error::{Error, Result};

pub const IMAGE_SIDE: usize = 32;

const FILE_HEADER_LEN: usize = 14;
const CORE_HEADER_LEN: u32 = 12;
const INFO_HEADER_LEN: u32 = 40;
const BI_RGB: u32 = 0;

/// Decoded RGB image, rows top to bottom.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[u8; 3]>,
}

impl RawImage {
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        RawImage {
            width,
            height,
            pixels: vec![rgb; width * height],
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn i32_at(b: &[u8], at: usize) -> i32 {
    i32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

pub fn decode_bitmap(bytes: &[u8]) -> Result<RawImage> {
    decode_bitmap_named(bytes, "<memory>")
}

/// Decodes a bitmap, naming `source` in any error.
pub fn decode_bitmap_named(bytes: &[u8], source: &str) -> Result<RawImage> {
    let decode_err = |reason: String| Error::Decode {
        path: source.to_string(),
        reason,
    };
    let unsupported = |reason: String| Error::UnsupportedFormat {
        path: source.to_string(),
        reason,
    };

    if bytes.len() < FILE_HEADER_LEN + 4 {
        return Err(decode_err(format!("file is {} bytes, too short for a bitmap header", bytes.len())));
    }
    if &bytes[..2] != b"BM" {
        return Err(unsupported("missing `BM` signature".into()));
    }
    let data_offset = u32_at(bytes, 10) as usize;
    let dib_len = u32_at(bytes, 14);
    if bytes.len() < FILE_HEADER_LEN + dib_len as usize {
        return Err(decode_err(format!("truncated {dib_len}-byte info header")));
    }

    let (width, height, bpp, compression) = match dib_len {
        CORE_HEADER_LEN => (
            i64::from(u16_at(bytes, 18)),
            i64::from(u16_at(bytes, 20)),
            u16_at(bytes, 24),
            BI_RGB,
        ),
        n if n >= INFO_HEADER_LEN => (
            i64::from(i32_at(bytes, 18)),
            i64::from(i32_at(bytes, 22)),
            u16_at(bytes, 28),
            u32_at(bytes, 30),
        ),
        n => return Err(unsupported(format!("unknown info header size {n}"))),
    };

    if bpp != 24 {
        return Err(unsupported(format!("{bpp} bits per pixel; only 24 is supported")));
    }
    if compression != BI_RGB {
        return Err(unsupported(format!("compression method {compression}; only uncompressed is supported")));
    }
    let top_down = height < 0;
    let (w, h) = (width, height.abs());
    if w != IMAGE_SIDE as i64 || h != IMAGE_SIDE as i64 {
        return Err(unsupported(format!("image is {w}×{h}; expected {IMAGE_SIDE}×{IMAGE_SIDE}")));
    }
    let (w, h) = (w as usize, h as usize);

    let stride = (w * 3).div_ceil(4) * 4;
    let needed = data_offset
        .checked_add(stride * h)
        .ok_or_else(|| decode_err("pixel offset overflows".into()))?;
    if bytes.len() < needed {
        return Err(decode_err(format!(
            "pixel data truncated: need {needed} bytes, file has {}",
            bytes.len()
        )));
    }

    let mut pixels = Vec::with_capacity(w * h);
    for y in 0..h {
        let stored_row = if top_down { y } else { h - 1 - y };
        let row = &bytes[data_offset + stored_row * stride..][..w * 3];
        pixels.extend(row.chunks_exact(3).map(|bgr| [bgr[2], bgr[1], bgr[0]]));
    }
    Ok(RawImage {
        width: w,
        height: h,
        pixels,
    })
}

/// Encodes a bottom-up 24-bit bitmap with a 40-byte info header.
pub fn encode_bitmap(image: &RawImage) -> Vec<u8> {
    let stride = (image.width * 3).div_ceil(4) * 4;
    let data_offset = FILE_HEADER_LEN + INFO_HEADER_LEN as usize;
    let file_len = data_offset + stride * image.height;
    let mut out = Vec::with_capacity(file_len);
    out.extend_from_slice(b"BM");
    out.extend_from_slice(&(file_len as u32).to_le_bytes());
    out.extend_from_slice(&[0; 4]);
    out.extend_from_slice(&(data_offset as u32).to_le_bytes());
    out.extend_from_slice(&INFO_HEADER_LEN.to_le_bytes());
    out.extend_from_slice(&(image.width as i32).to_le_bytes());
    out.extend_from_slice(&(image.height as i32).to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&24u16.to_le_bytes());
    out.extend_from_slice(&BI_RGB.to_le_bytes());
    out.extend_from_slice(&((stride * image.height) as u32).to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&2835i32.to_le_bytes());
    out.extend_from_slice(&[0; 8]);
    for y in (0..image.height).rev() {
        let start = out.len();
        for x in 0..image.width {
            let [r, g, b] = image.pixel(x, y);
            out.extend_from_slice(&[b, g, r]);
        }
        out.resize(start + stride, 0);
    }
    out
}
