//! `.gacm` container: magic, version, kind, float width, length-prefixed text
//! header, scalar count, then little-endian floats.

use std::fs;
use std::path::Path;

use super::{param_layout, Model, ModelSpec, NamedParam};
use crate::error::{Error, Result};
use crate::real::{FloatWidth, Real};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"GACM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContainerKind {
    Model,
    Wrapper,
}

impl ContainerKind {
    fn byte(self) -> u8 {
        match self {
            ContainerKind::Model => 0,
            ContainerKind::Wrapper => 1,
        }
    }
}

/// Decoded file contents before interpretation.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: ContainerKind,
    pub width: FloatWidth,
    pub text: String,
    /// Raw little-endian scalars, `width.bytes()` each.
    pub payload: Vec<u8>,
}

impl Container {
    pub fn scalar_count(&self) -> usize {
        self.payload.len() / self.width.bytes()
    }

    pub fn header_len(text_len: usize) -> usize {
        4 + 2 + 1 + 1 + 4 + text_len + 8
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::header_len(self.text.len()) + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.kind.byte());
        out.push(self.width.bytes() as u8);
        out.extend_from_slice(&(self.text.len() as u32).to_le_bytes());
        out.extend_from_slice(self.text.as_bytes());
        out.extend_from_slice(&(self.scalar_count() as u64).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &str) -> Result<Self> {
        let fail = |msg: String| Error::ModelFile {
            path: path.to_string(),
            msg,
        };
        let take = |at: usize, n: usize| -> Result<&[u8]> {
            bytes.get(at..at + n).ok_or_else(|| {
                fail(format!(
                    "truncated: need {} bytes at offset {at}, file has {}",
                    n,
                    bytes.len()
                ))
            })
        };
        if take(0, 4)? != MAGIC {
            return Err(fail("bad magic bytes".into()));
        }
        let version = u16::from_le_bytes(take(4, 2)?.try_into().expect("2 bytes"));
        if version != FORMAT_VERSION {
            return Err(fail(format!(
                "unsupported version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let kind = match take(6, 1)?[0] {
            0 => ContainerKind::Model,
            1 => ContainerKind::Wrapper,
            k => return Err(fail(format!("unknown container kind {k}"))),
        };
        let width = match take(7, 1)?[0] {
            4 => FloatWidth::F32,
            8 => FloatWidth::F64,
            w => return Err(fail(format!("unsupported float width {w} bytes"))),
        };
        let text_len = u32::from_le_bytes(take(8, 4)?.try_into().expect("4 bytes")) as usize;
        let text = std::str::from_utf8(take(12, text_len)?)
            .map_err(|_| fail("header text is not UTF-8".into()))?
            .to_string();
        let at = 12 + text_len;
        let count = u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes")) as usize;
        let payload = take(at + 8, count * width.bytes())?.to_vec();
        if bytes.len() != at + 8 + payload.len() {
            return Err(fail(format!(
                "{} trailing bytes",
                bytes.len() - at - 8 - payload.len()
            )));
        }
        Ok(Container {
            kind,
            width,
            text,
            payload,
        })
    }

    /// Payload as `T`; the stored width must match.
    pub fn scalars<T: Real>(&self, path: &str) -> Result<Vec<T>> {
        if self.width != FloatWidth::of::<T>() {
            return Err(Error::ModelFile {
                path: path.to_string(),
                msg: format!(
                    "file stores {:?} values, requested {:?}",
                    self.width,
                    FloatWidth::of::<T>()
                ),
            });
        }
        Ok(self
            .payload
            .chunks_exact(T::BYTES)
            .map(T::read_le)
            .collect())
    }
}

pub fn write_container(path: &Path, c: &Container) -> Result<()> {
    fs::write(path, c.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes, &path.display().to_string())
}

impl<T: Real> Model<T> {
    pub fn to_container(&self) -> Container {
        Container {
            kind: ContainerKind::Model,
            width: FloatWidth::of::<T>(),
            text: self.spec().to_text(),
            payload: self.param_bytes(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.to_container().to_bytes()
    }

    pub fn from_container(c: &Container, path: &str) -> Result<Self> {
        let fail = |msg: String| Error::ModelFile {
            path: path.to_string(),
            msg,
        };
        if c.kind != ContainerKind::Model {
            return Err(fail(
                "file holds a reprogramming wrapper, not a model".into(),
            ));
        }
        let spec = ModelSpec::parse(&c.text).map_err(|e| fail(e.to_string()))?;
        let values = c.scalars::<T>(path)?;
        let layout = param_layout(&spec);
        let need: usize = layout.iter().map(|p| p.numel()).sum();
        if values.len() != need {
            return Err(fail(format!(
                "spec needs {need} parameters, file stores {}",
                values.len()
            )));
        }
        let mut at = 0;
        let params = layout
            .into_iter()
            .map(|info| {
                let n = info.numel();
                let value =
                    Tensor::new(info.shape, values[at..at + n].to_vec()).expect("layout sizes");
                at += n;
                NamedParam {
                    name: info.name,
                    value,
                }
            })
            .collect();
        Model::from_parts(spec, params).map_err(|e| fail(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&Container::from_bytes(bytes, "<memory>")?, "<memory>")
    }
}

pub fn save_model<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    write_container(path.as_ref(), &model.to_container())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    let path = path.as_ref();
    Model::from_container(&read_container(path)?, &path.display().to_string())
}
