//! Per-modality series files: 16-byte header `{"MMTS", D: u32, T: u32, reserved: u32}`
//! followed by `D * T` little-endian f32 values, variate-major.

use std::path::Path;

use crate::error::{MaestroError, Result};

pub const MAGIC: &[u8; 4] = b"MMTS";

pub fn encode(data: &[Vec<f64>]) -> Result<Vec<u8>> {
    let d = data.len();
    let t = data.first().map_or(0, Vec::len);
    if data.iter().any(|v| v.len() != t) {
        return Err(MaestroError::contract("variates differ in length"));
    }
    let mut out = Vec::with_capacity(16 + 4 * d * t);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(d as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&0u32.to_le_bytes());
    for v in data.iter().flatten() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Vec<Vec<f64>>, String> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err("missing MMTS header".into());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
    let (d, t) = (word(4), word(8));
    let body = &bytes[16..];
    if body.len() != 4 * d * t {
        return Err(format!("expected {} bytes of samples for {d}x{t}, found {}", 4 * d * t, body.len()));
    }
    let vals: Vec<f64> = body
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    if vals.iter().any(|v| !v.is_finite()) {
        return Err("non-finite sample".into());
    }
    Ok(if t == 0 { vec![Vec::new(); d] } else { vals.chunks(t).map(<[f64]>::to_vec).collect() })
}

pub fn write(path: &Path, data: &[Vec<f64>]) -> Result<()> {
    std::fs::write(path, encode(data)?).map_err(|e| MaestroError::io(path, e))
}

pub fn read(path: &Path) -> Result<Vec<Vec<f64>>> {
    let bytes = std::fs::read(path).map_err(|e| MaestroError::io(path, e))?;
    decode(&bytes).map_err(|m| MaestroError::data(format!("{}: {m}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_through_f32() {
        let data = vec![vec![0.5, -1.25, 3.0], vec![1e-3, 2.0, -7.5]];
        let back = decode(&encode(&data).unwrap()).unwrap();
        for (a, b) in data.iter().flatten().zip(back.iter().flatten()) {
            assert_eq!(*a as f32, *b as f32);
        }
        assert_eq!(&encode(&data).unwrap()[..4], b"MMTS");
    }

    #[test]
    fn corrupt_files_rejected() {
        let mut bytes = encode(&[vec![1.0, 2.0]]).unwrap();
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        assert!(decode(b"XXXX").is_err());
        bytes[16..20].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&bytes).is_err());
    }
}
