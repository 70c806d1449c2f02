use std::io::Read;
use std::path::Path;

use super::EncodedSpeech;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

const FEAT_MAGIC: &[u8; 8] = b"HSFEAT01";

/// Import an externally computed B×M feature matrix (for example a frozen
/// pretrained encoder run offline): 16-byte header (magic, u32 B, u32 M,
/// little-endian) followed by B·M float32 values, row-major.
pub fn read_features(path: &Path, frame_period_ms: f64) -> Result<EncodedSpeech<f32>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 {
        return Err(Error::format(path, "shorter than the 16-byte header"));
    }
    if &bytes[0..8] != FEAT_MAGIC {
        return Err(Error::format(path, "bad magic, want HSFEAT01"));
    }
    let b = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let m = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let want = 16 + b * m * 4;
    if bytes.len() != want {
        return Err(Error::format(
            path,
            format!("size mismatch: {b}x{m} features want {want} bytes, got {}", bytes.len()),
        ));
    }
    if b == 0 || m == 0 {
        return Err(Error::format(path, "empty feature matrix"));
    }
    let mut data = Vec::with_capacity(b * m);
    for chunk in bytes[16..].chunks_exact(4) {
        data.push(f32::from_le_bytes(chunk.try_into().unwrap()));
    }
    Ok(EncodedSpeech {
        vectors: Tensor::constant(vec![b, m], data)?,
        frame_period_ms,
    })
}

pub fn write_features(path: &Path, features: &EncodedSpeech<f32>) -> Result<()> {
    let (b, m) = features.vectors.dims2();
    let mut bytes = Vec::with_capacity(16 + b * m * 4);
    bytes.extend_from_slice(FEAT_MAGIC);
    bytes.extend_from_slice(&(b as u32).to_le_bytes());
    bytes.extend_from_slice(&(m as u32).to_le_bytes());
    for v in features.vectors.to_vec() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.hsfeat");
        let feats = EncodedSpeech {
            vectors: Tensor::constant(vec![5, 3], (0..15).map(|i| (i as f32).exp()).collect()).unwrap(),
            frame_period_ms: 20.0,
        };
        write_features(&path, &feats).unwrap();
        let back = read_features(&path, 20.0).unwrap();
        assert_eq!(back.vectors.shape(), &[5, 3]);
        let (a, b) = (feats.vectors.to_vec(), back.vectors.to_vec());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn header_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.hsfeat");
        std::fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(read_features(&path, 20.0).is_err());
        std::fs::write(&path, b"HSFEAT01\x02\x00\x00\x00\x01\x00\x00\x00only4").unwrap();
        let err = read_features(&path, 20.0).unwrap_err().to_string();
        assert!(err.contains("size mismatch"), "{err}");
    }
}
