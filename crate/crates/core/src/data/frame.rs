//! EVF1 frame files: `"EVF1"`, then `u32` C, H, W (little-endian), then
//! C·H·W little-endian `f32` values in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FRAME_MAGIC: &[u8; 4] = b"EVF1";

pub fn encode_frame(frame: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = frame.shape()[..] else {
        return Err(Error::Shape(format!("frame must be [C, H, W], got {:?}", frame.shape())));
    };
    let mut out = Vec::with_capacity(16 + 4 * frame.len());
    out.extend_from_slice(FRAME_MAGIC);
    for d in [c, h, w] {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in frame.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn write_frame(path: &Path, frame: &Tensor) -> Result<()> {
    fs::write(path, encode_frame(frame)?).map_err(|e| Error::io(path, e))
}

/// Reads a frame, checking its header against `shape`.
pub fn read_frame(path: &Path, shape: [usize; 3]) -> Result<Tensor> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..4] != FRAME_MAGIC {
        return Err(Error::format(path, "not an EVF1 frame"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes")) as usize;
    let header = [dim(0), dim(1), dim(2)];
    if header != shape {
        return Err(Error::format(path, format!("frame shape {header:?}, expected {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if bytes.len() != 16 + 4 * n {
        return Err(Error::format(path, format!("{} payload bytes for {n} values", bytes.len() - 16)));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::new(shape.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = Tensor::new(vec![1, 1, 2], vec![0.5, 1.0]).unwrap();
        let b = encode_frame(&t).unwrap();
        assert_eq!(&b[..4], b"EVF1");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&b[16..20], &0.5f32.to_le_bytes());
    }

    #[test]
    fn shape_and_magic_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.evf");
        write_frame(&p, &Tensor::zeros(&[1, 2, 2])).unwrap();
        assert!(read_frame(&p, [1, 2, 2]).is_ok());
        assert!(matches!(read_frame(&p, [1, 2, 3]), Err(Error::Format { .. })));
        fs::write(&p, b"EVF2xxxxxxxxxxxx").unwrap();
        assert!(matches!(read_frame(&p, [1, 2, 2]), Err(Error::Format { .. })));
        assert!(matches!(read_frame(&dir.path().join("nope"), [1, 2, 2]), Err(Error::MissingArtifact(_))));
    }
}
