//! Feature files.
//!
//! Binary (little-endian): `"TRXF"`, version `u32`, video count `u32`, then
//! per video `label u32, F u32, D_in u32` followed by `F * D_in` `f32`
//! values, row-major.
//!
//! Text (`.txt` / `.csv`): per video a header line `label,F,D_in` followed by
//! `F` lines of `D_in` comma-separated values.

use std::fs;
use std::path::Path;

use super::{Dataset, SplitPolicy, VideoFeatures};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"TRXF";
pub const FEATURE_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureFormat {
    Binary,
    Text,
}

impl FeatureFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("txt" | "csv") => FeatureFormat::Text,
            _ => FeatureFormat::Binary,
        }
    }
}

pub fn write_features(path: &Path, videos: &[VideoFeatures]) -> Result<()> {
    let bytes = match FeatureFormat::from_path(path) {
        FeatureFormat::Binary => encode_binary(videos),
        FeatureFormat::Text => encode_text(videos).into_bytes(),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: &Path) -> Result<Vec<VideoFeatures>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match FeatureFormat::from_path(path) {
        FeatureFormat::Binary => decode_binary(&bytes),
        FeatureFormat::Text => decode_text(&bytes),
    }
}

pub fn load_features(path: &Path, policy: SplitPolicy) -> Result<Dataset> {
    Dataset::new(read_features(path)?, policy)
}

pub fn encode_binary(videos: &[VideoFeatures]) -> Vec<u8> {
    let payload: usize = videos.iter().map(|v| 12 + 4 * v.data().len()).sum();
    let mut out = Vec::with_capacity(12 + payload);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(videos.len() as u32).to_le_bytes());
    for v in videos {
        out.extend_from_slice(&v.label.to_le_bytes());
        out.extend_from_slice(&(v.frames() as u32).to_le_bytes());
        out.extend_from_slice(&(v.dim() as u32).to_le_bytes());
        for x in v.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Little-endian reader that reports the byte offset of every failure.
pub(crate) struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    pub(crate) fn pos(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!("truncated while reading {what}"),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<Vec<VideoFeatures>> {
    let mut cur = Cursor::new(bytes);
    if cur.take(4, "magic")? != FEATURE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "bad magic, expected TRXF".into(),
        });
    }
    let version = cur.u32("version")?;
    if version != FEATURE_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let count = cur.u32("video count")? as usize;
    let mut videos = Vec::with_capacity(count.min(1 << 16));
    for i in 0..count {
        let start = cur.pos as u64;
        let label = cur.u32("label")?;
        let frames = cur.u32("frame count")? as usize;
        let dim = cur.u32("feature dimension")? as usize;
        if frames == 0 || dim == 0 {
            return Err(Error::Format {
                offset: start,
                message: format!("video {i} has empty shape {frames}x{dim}"),
            });
        }
        let n = frames
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format {
                offset: start,
                message: format!("video {i} shape overflows"),
            })?;
        let raw = cur.take(n, "frame values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        videos.push(VideoFeatures::new(label, frames, dim, data)?);
    }
    if cur.pos != bytes.len() {
        return Err(Error::Format {
            offset: cur.pos as u64,
            message: format!("{} trailing bytes", bytes.len() - cur.pos),
        });
    }
    Ok(videos)
}

pub fn encode_text(videos: &[VideoFeatures]) -> String {
    let mut out = String::new();
    for v in videos {
        out.push_str(&format!("{},{},{}\n", v.label, v.frames(), v.dim()));
        for f in 0..v.frames() {
            let row: Vec<String> = v.frame(f).iter().map(|x| x.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
    }
    out
}

pub fn decode_text(bytes: &[u8]) -> Result<Vec<VideoFeatures>> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format {
        offset: e.valid_up_to() as u64,
        message: "not valid UTF-8".into(),
    })?;
    // (byte offset, trimmed line) for every non-blank line
    let mut lines = Vec::new();
    let mut offset = 0usize;
    for raw in text.split_inclusive('\n') {
        let line = raw.trim();
        if !line.is_empty() {
            lines.push((offset as u64, line));
        }
        offset += raw.len();
    }
    let fmt = |offset: u64, message: String| Error::Format { offset, message };

    let mut videos = Vec::new();
    let mut it = lines.into_iter();
    while let Some((off, header)) = it.next() {
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        let parsed: Vec<usize> = fields
            .iter()
            .map(|f| f.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| fmt(off, format!("bad header `{header}`, expected label,F,D_in")))?;
        let [label, frames, dim] = parsed[..] else {
            return Err(fmt(off, format!("bad header `{header}`, expected label,F,D_in")));
        };
        let mut data = Vec::with_capacity(frames * dim);
        for f in 0..frames {
            let (roff, row) = it
                .next()
                .ok_or_else(|| fmt(offset as u64, format!("truncated: missing frame {f} of label {label}")))?;
            let values: Vec<f32> = row
                .split(',')
                .map(|x| x.trim().parse::<f32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| fmt(roff, format!("bad value: {e}")))?;
            if values.len() != dim {
                return Err(fmt(roff, format!("expected {dim} values, found {}", values.len())));
            }
            data.extend(values);
        }
        let label = u32::try_from(label).map_err(|_| fmt(off, format!("label {label} too large")))?;
        videos.push(VideoFeatures::new(label, frames, dim, data).map_err(|e| fmt(off, e.to_string()))?);
    }
    Ok(videos)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<VideoFeatures> {
        vec![VideoFeatures::new(3, 2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap()]
    }

    #[test]
    fn hand_built_binary_fixture() {
        let mut bytes = b"TRXF".to_vec();
        for v in [1u32, 1, 3, 2, 3] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        for x in 0..6 {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        let videos = decode_binary(&bytes).unwrap();
        assert_eq!(videos.len(), 1);
        assert_eq!(videos[0].frame(0), &[0.0, 1.0, 2.0]);
        assert_eq!(videos[0].frame(1), &[3.0, 4.0, 5.0]);
        assert_eq!(encode_binary(&videos), bytes);
    }

    #[test]
    fn hand_built_text_fixture() {
        let videos = decode_text(b"3,2,3\n0,1,2\n3,4,5\n").unwrap();
        assert_eq!(videos, fixture());
        assert_eq!(encode_text(&videos), "3,2,3\n0,1,2\n3,4,5\n");
    }

    #[test]
    fn wrong_magic_is_a_format_error() {
        let mut bytes = encode_binary(&fixture());
        bytes[0] = b'X';
        assert!(matches!(decode_binary(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn truncation_names_the_offset() {
        let bytes = encode_binary(&fixture());
        let err = decode_binary(&bytes[..bytes.len() - 2]).unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, 24),
            other => panic!("unexpected {other:?}"),
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_binary(&long), Err(Error::Format { .. })));
    }

    #[test]
    fn text_shape_errors() {
        let err = decode_text(b"3,2,3\n0,1,2\n3,4\n").unwrap_err();
        assert!(matches!(err, Error::Format { offset: 12, .. }), "{err}");
        assert!(decode_text(b"3,2,3\n0,1,2\n").is_err());
        assert!(decode_text(b"nonsense\n").is_err());
    }

    #[test]
    fn file_roundtrip_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let videos = vec![
            VideoFeatures::new(0, 2, 2, vec![0.1, -2.5e-3, 7.0, f32::MIN_POSITIVE]).unwrap(),
            VideoFeatures::new(1, 2, 2, vec![1.0 / 3.0, 2.0, 3.0, 4.0]).unwrap(),
        ];
        for name in ["f.trxf", "f.txt"] {
            let path = dir.path().join(name);
            write_features(&path, &videos).unwrap();
            assert_eq!(read_features(&path).unwrap(), videos, "{name}");
        }
    }
}
