use super::image::Image;
use crate::error::{Error, Result};

/// Decodes a binary P6 PPM with maxval 255. Header comments are skipped.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut p = Parser { bytes, pos: 0 };
    if bytes.get(0..2) != Some(b"P6") {
        return Err(p.err("missing P6 magic"));
    }
    p.pos = 2;
    let width = p.field("width")?;
    let height = p.field("height")?;
    let maxval = p.field("maxval")?;
    if maxval != 255 {
        return Err(p.err(&format!("maxval {maxval} unsupported, expected 255")));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(p.pos) {
        Some(b) if b.is_ascii_whitespace() => p.pos += 1,
        _ => return Err(p.err("expected single whitespace after maxval")),
    }
    if width == 0 || height == 0 {
        return Err(p.err("zero image dimension"));
    }
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| p.err("dimensions overflow"))?;
    let raster = &bytes[p.pos..];
    if raster.len() < need {
        return Err(Error::Ppm {
            pos: bytes.len(),
            msg: format!("truncated raster: need {need} bytes, have {}", raster.len()),
        });
    }
    if raster.len() > need {
        return Err(Error::Ppm {
            pos: p.pos + need,
            msg: "trailing bytes after raster".into(),
        });
    }
    Image::new(width, height, raster.to_vec())
}

/// Canonical P6 encoding: `P6\n<w> <h>\n255\n` followed by the raster.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.data());
    out
}

struct Parser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::Ppm {
            pos: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn field(&mut self, what: &str) -> Result<usize> {
        let before = self.pos;
        self.skip_space_and_comments();
        if self.pos == before {
            return Err(self.err(&format!("expected whitespace before {what}")));
        }
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(&format!("expected decimal {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Ppm {
                pos: start,
                msg: format!("{what} out of range"),
            })
    }
}
