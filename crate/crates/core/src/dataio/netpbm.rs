//! Binary portable pixmap (`P6`) and graymap (`P5`) with 8-bit samples.

use std::fs;
use std::path::Path;

use super::Raster;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PnmKind {
    Graymap,
    Pixmap,
}

impl PnmKind {
    fn magic(self) -> &'static [u8; 2] {
        match self {
            PnmKind::Graymap => b"P5",
            PnmKind::Pixmap => b"P6",
        }
    }

    fn channels(self) -> usize {
        match self {
            PnmKind::Graymap => 1,
            PnmKind::Pixmap => 3,
        }
    }
}

struct Header {
    width: usize,
    height: usize,
    payload_offset: usize,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_string(),
            offset: self.pos,
            msg: msg.into(),
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

    fn number(&mut self, what: &str) -> Result<(usize, usize)> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .expect("ascii digits")
            .parse()
            .map(|v| (v, start))
            .map_err(|_| Error::Parse {
                path: self.path.to_string(),
                offset: start,
                msg: format!("{what} out of range"),
            })
    }
}

fn parse_header(bytes: &[u8], kind: PnmKind, path: &str) -> Result<Header> {
    let mut cur = Cursor {
        bytes,
        pos: 0,
        path,
    };
    if bytes.len() < 2 || &bytes[..2] != kind.magic() {
        return Err(cur.err(format!(
            "bad magic, expected {}",
            String::from_utf8_lossy(kind.magic())
        )));
    }
    cur.pos = 2;
    let (width, _) = cur.number("width")?;
    let (height, _) = cur.number("height")?;
    if width == 0 || height == 0 {
        return Err(cur.err("zero image dimension"));
    }
    let (maxval, max_start) = cur.number("max value")?;
    if maxval != 255 {
        return Err(Error::Parse {
            path: path.to_string(),
            offset: max_start,
            msg: format!("unsupported max value {maxval}, only 255 is accepted"),
        });
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.err("expected single whitespace before payload")),
    }
    Ok(Header {
        width,
        height,
        payload_offset: cur.pos,
    })
}

/// Decodes an in-memory file; `path` is only used in error messages.
pub fn decode(bytes: &[u8], kind: PnmKind, path: &str) -> Result<Raster> {
    let header = parse_header(bytes, kind, path)?;
    let need = header.width * header.height * kind.channels();
    let payload = &bytes[header.payload_offset..];
    if payload.len() < need {
        return Err(Error::Parse {
            path: path.to_string(),
            offset: bytes.len(),
            msg: format!(
                "truncated payload: need {need} bytes, found {}",
                payload.len()
            ),
        });
    }
    let data = payload[..need]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Ok(Raster::new(header.height, header.width, kind.channels(), data).expect("consistent dims"))
}

/// Encodes with values in `[0, 1]` quantized to the nearest byte.
pub fn encode(raster: &Raster, kind: PnmKind) -> Result<Vec<u8>> {
    if raster.channels() != kind.channels() {
        return Err(Error::invalid(
            "netpbm encode",
            format!(
                "{kind:?} needs {} channels, raster has {}",
                kind.channels(),
                raster.channels()
            ),
        ));
    }
    let mut out = format!(
        "{}\n{} {}\n255\n",
        String::from_utf8_lossy(kind.magic()),
        raster.width(),
        raster.height()
    )
    .into_bytes();
    out.extend(raster.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn read(path: &Path, kind: PnmKind) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, kind, &path.display().to_string())
}

fn write(path: &Path, raster: &Raster, kind: PnmKind) -> Result<()> {
    let bytes = encode(raster, kind)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// RGB image as `H×W×3` values in `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    read(path.as_ref(), PnmKind::Pixmap)
}

/// Single-channel mask as `H×W` values in `[0, 1]`.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Raster> {
    read(path.as_ref(), PnmKind::Graymap)
}

pub fn save_image(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    write(path.as_ref(), raster, PnmKind::Pixmap)
}

pub fn save_mask(path: impl AsRef<Path>, raster: &Raster) -> Result<()> {
    write(path.as_ref(), raster, PnmKind::Graymap)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixmap_is_all_ones() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend([255u8; 12]);
        let r = decode(&bytes, PnmKind::Pixmap, "mem").unwrap();
        assert_eq!((r.height(), r.width(), r.channels()), (2, 2, 3));
        assert!(r.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn black_graymap_pixel_is_zero() {
        let r = decode(b"P5 1 1 255\n\x00", PnmKind::Graymap, "mem").unwrap();
        assert_eq!(r.data(), &[0.0]);
    }

    #[test]
    fn comments_are_skipped() {
        let r = decode(
            b"P5\n# made by hand\n2 1\n# max\n255\n\x10\x20",
            PnmKind::Graymap,
            "mem",
        )
        .unwrap();
        assert_eq!(r.width(), 2);
    }

    #[test]
    fn malformed_files_report_offsets() {
        let err = decode(b"P3\n1 1\n255\n\x00", PnmKind::Graymap, "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }), "{err}");

        let err = decode(b"P5\n1 1\n65535\n\x00\x00", PnmKind::Graymap, "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 7, .. }), "{err}");

        let err = decode(b"P6\n2 2\n255\n\x00\x00", PnmKind::Pixmap, "mem").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let err = decode(b"P5\nx 1\n255\n", PnmKind::Graymap, "mem").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 3, .. }), "{err}");
    }
}
