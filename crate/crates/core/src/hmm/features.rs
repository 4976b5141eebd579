//! Feature streams: fixed-rate observation sequences attached to an utterance.
//!
//! Two on-disk encodings are supported. The CSV form is one frame per row
//! with `#` comment lines skipped, handy for inspection and small fixtures.
//! The packed form stores little-endian `f32` values behind a 16-byte header
//! (`VLF1` magic, frame count, dimensionality, reserved word) and is what the
//! synthesizer and pipeline use for anything sizeable.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

pub const BINARY_MAGIC: &[u8; 4] = b"VLF1";

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("frame {frame} has {got} values, expected {want}")]
    RaggedFrame { frame: usize, got: usize, want: usize },
    #[error("stream has no frames")]
    Empty,
    #[error("bad magic: expected VLF1")]
    BadMagic,
    #[error("binary payload truncated: expected {want} bytes, found {got}")]
    Truncated { want: usize, got: usize },
    #[error("header declares zero dimensionality")]
    ZeroDim,
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// One utterance worth of observations: `frames.len()` frames, each `dim()`
/// wide, plus the token transcript when one is known.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStream {
    pub id: String,
    pub frames: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

impl FeatureStream {
    pub fn new(
        id: impl Into<String>,
        frames: Vec<Vec<f64>>,
        labels: Vec<String>,
    ) -> Result<Self, FeatureError> {
        if frames.is_empty() {
            return Err(FeatureError::Empty);
        }
        let want = frames[0].len();
        if want == 0 {
            return Err(FeatureError::ZeroDim);
        }
        for (i, f) in frames.iter().enumerate() {
            if f.len() != want {
                return Err(FeatureError::RaggedFrame { frame: i, got: f.len(), want });
            }
        }
        Ok(Self { id: id.into(), frames, labels })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, Vec::len)
    }

    /// Serializes frames as CSV, one frame per row, full `f64` precision.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        for frame in &self.frames {
            let row: Vec<String> = frame.iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Parses CSV frames written by [`to_csv_string`](Self::to_csv_string).
    /// Blank lines and `#` comments are skipped.
    pub fn parse_csv(id: impl Into<String>, text: &str) -> Result<Self, FeatureError> {
        let mut frames = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut frame = Vec::new();
            for field in line.split(',') {
                let v: f64 = field.trim().parse().map_err(|_| FeatureError::Parse {
                    line: idx + 1,
                    msg: format!("bad float {field:?}"),
                })?;
                frame.push(v);
            }
            frames.push(frame);
        }
        Self::new(id, frames, Vec::new())
    }

    /// Packs the stream as little-endian `f32` values behind the 16-byte
    /// `VLF1` header. Values are narrowed from `f64`.
    pub fn to_binary(&self) -> Vec<u8> {
        let t = self.len() as u32;
        let d = self.dim() as u32;
        let mut out = Vec::with_capacity(16 + self.len() * self.dim() * 4);
        out.extend_from_slice(BINARY_MAGIC);
        out.extend_from_slice(&t.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
        out.extend_from_slice(&[0u8; 4]);
        for frame in &self.frames {
            for &v in frame {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn parse_binary(id: impl Into<String>, bytes: &[u8]) -> Result<Self, FeatureError> {
        if bytes.len() < 16 {
            return Err(FeatureError::Truncated { want: 16, got: bytes.len() });
        }
        if &bytes[0..4] != BINARY_MAGIC {
            return Err(FeatureError::BadMagic);
        }
        let t = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if d == 0 {
            return Err(FeatureError::ZeroDim);
        }
        let want = 16 + t * d * 4;
        if bytes.len() < want {
            return Err(FeatureError::Truncated { want, got: bytes.len() });
        }
        let mut frames = Vec::with_capacity(t);
        let mut off = 16;
        for _ in 0..t {
            let mut frame = Vec::with_capacity(d);
            for _ in 0..d {
                let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                frame.push(v as f64);
                off += 4;
            }
            frames.push(frame);
        }
        Self::new(id, frames, Vec::new())
    }

    pub fn write_binary(&self, path: &Path) -> Result<(), FeatureError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_binary())?;
        Ok(())
    }

    pub fn read_binary(id: impl Into<String>, path: &Path) -> Result<Self, FeatureError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::parse_binary(id, &bytes)
    }
}
