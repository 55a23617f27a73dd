//! Volume files: one ASCII header line `MMTSVOL1 <C> <D> <H> <W> <dtype>`
//! followed by a row-major little-endian payload (`f32` images, `u8` labels).

use std::fs;
use std::path::Path;

use super::{voxel_count, Extents, LabelVolume, MultiModalVolume};
use crate::error::{Error, Result};

pub const MAGIC: &str = "MMTSVOL1";
const MAX_HEADER: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Dtype {
    F32,
    U8,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::U8 => "u8",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

fn encode(channels: usize, extents: Extents, dtype: Dtype, payload: &[u8]) -> Vec<u8> {
    let [d, h, w] = extents;
    let mut out = format!("{MAGIC} {channels} {d} {h} {w} {}\n", dtype.name()).into_bytes();
    out.extend_from_slice(payload);
    out
}

fn decode<'a>(path: &Path, bytes: &'a [u8]) -> Result<(usize, Extents, Dtype, &'a [u8])> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let newline = bytes
        .iter()
        .take(MAX_HEADER)
        .position(|&b| b == b'\n')
        .ok_or_else(|| bad("missing header line".into()))?;
    let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| bad("header is not ASCII".into()))?;
    let fields: Vec<&str> = header.split(' ').collect();
    if fields.first() != Some(&MAGIC) {
        return Err(bad(format!("bad magic {:?}", fields.first().unwrap_or(&""))));
    }
    if fields.len() != 6 {
        return Err(bad(format!("expected 6 header fields, got {}", fields.len())));
    }
    let mut dims = [0usize; 4];
    for (slot, field) in dims.iter_mut().zip(&fields[1..5]) {
        *slot = field
            .parse()
            .ok()
            .filter(|&v| v > 0)
            .ok_or_else(|| bad(format!("invalid extent {field:?}")))?;
    }
    let dtype = match fields[5] {
        "f32" => Dtype::F32,
        "u8" => Dtype::U8,
        other => return Err(bad(format!("unknown dtype {other:?}"))),
    };
    let extents = [dims[1], dims[2], dims[3]];
    let payload = &bytes[newline + 1..];
    let expected = dims[0]
        .checked_mul(voxel_count(extents))
        .and_then(|n| n.checked_mul(dtype.width()))
        .ok_or_else(|| bad("extents overflow".into()))?;
    if payload.len() != expected {
        return Err(bad(format!("payload has {} bytes, header implies {expected}", payload.len())));
    }
    Ok((dims[0], extents, dtype, payload))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_volume(volume: &MultiModalVolume) -> Vec<u8> {
    let payload: Vec<u8> = volume.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    encode(MultiModalVolume::CHANNELS, volume.extents(), Dtype::F32, &payload)
}

pub fn encode_labels(labels: &LabelVolume) -> Vec<u8> {
    encode(1, labels.extents(), Dtype::U8, labels.data())
}

pub fn write_volume(path: impl AsRef<Path>, volume: &MultiModalVolume) -> Result<()> {
    write_bytes(path.as_ref(), &encode_volume(volume))
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelVolume) -> Result<()> {
    write_bytes(path.as_ref(), &encode_labels(labels))
}

/// Reads a 4-channel f32 image. Voxel spacing is not stored and reads back as 1.
pub fn read_volume(path: impl AsRef<Path>) -> Result<MultiModalVolume> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (channels, extents, dtype, payload) = decode(path, &bytes)?;
    if channels != MultiModalVolume::CHANNELS || dtype != Dtype::F32 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected 4-channel f32 image, got {channels}-channel {}", dtype.name()),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    MultiModalVolume::new(extents, data, 1.0)
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabelVolume> {
    let path = path.as_ref();
    let bytes = read_bytes(path)?;
    let (channels, extents, dtype, payload) = decode(path, &bytes)?;
    if channels != 1 || dtype != Dtype::U8 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("expected 1-channel u8 labels, got {channels}-channel {}", dtype.name()),
        });
    }
    LabelVolume::new(extents, payload.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::generate_phantom;

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let (vol, labels) = generate_phantom(5, [16, 16, 17]).unwrap();
        let (vp, lp) = (dir.path().join("a.vol"), dir.path().join("a.lbl"));
        write_volume(&vp, &vol).unwrap();
        write_labels(&lp, &labels).unwrap();
        assert_eq!(read_volume(&vp).unwrap(), vol);
        assert_eq!(read_labels(&lp).unwrap(), labels);
    }

    #[test]
    fn header_text_is_exact() {
        let labels = LabelVolume::new([1, 2, 3], vec![0, 1, 2, 3, 0, 1]).unwrap();
        let bytes = encode_labels(&labels);
        assert!(bytes.starts_with(b"MMTSVOL1 1 1 2 3 u8\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 1, 2, 3, 0, 1]);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.vol");
        let labels = LabelVolume::new([2, 2, 2], vec![0; 8]).unwrap();
        let mut bytes = encode_labels(&labels);
        bytes.pop();
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.vol");
        std::fs::write(&p, b"MMTSVOL2 1 1 1 1 u8\n\0").unwrap();
        assert!(matches!(read_labels(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_volume("/nonexistent/x.vol"), Err(Error::Io { .. })));
    }
}
