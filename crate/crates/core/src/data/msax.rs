//! Symbol files written by `tokenize`: header `{"MSAX", version: u8, alpha: u16, W: u32, D: u32}`
//! then `D * W` little-endian u16 symbols, variate-major.

use crate::error::{MaestroError, Result};

pub const MAGIC: &[u8; 4] = b"MSAX";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolFile {
    pub alpha: u16,
    pub symbols: Vec<Vec<u16>>,
}

pub fn encode(f: &SymbolFile) -> Result<Vec<u8>> {
    let d = f.symbols.len();
    let w = f.symbols.first().map_or(0, Vec::len);
    if f.symbols.iter().any(|s| s.len() != w) {
        return Err(MaestroError::contract("symbol rows differ in length"));
    }
    let mut out = Vec::with_capacity(15 + 2 * d * w);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&f.alpha.to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(d as u32).to_le_bytes());
    for s in f.symbols.iter().flatten() {
        out.extend_from_slice(&s.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<SymbolFile> {
    if bytes.len() < 15 || &bytes[..4] != MAGIC || bytes[4] != VERSION {
        return Err(MaestroError::data("missing MSAX header"));
    }
    let alpha = u16::from_le_bytes([bytes[5], bytes[6]]);
    let w = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
    let body = &bytes[15..];
    if body.len() != 2 * d * w {
        return Err(MaestroError::data("symbol payload length mismatch"));
    }
    let flat: Vec<u16> = body.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
    if flat.iter().any(|&s| s > alpha) {
        return Err(MaestroError::data("symbol outside alphabet"));
    }
    let symbols = if w == 0 { vec![Vec::new(); d] } else { flat.chunks(w).map(<[u16]>::to_vec).collect() };
    Ok(SymbolFile { alpha, symbols })
}
