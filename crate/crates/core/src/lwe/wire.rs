//! Binary ciphertext encoding.
//!
//! All integers are little-endian.
//!
//! | offset | size | field                                        |
//! |-------:|-----:|----------------------------------------------|
//! | 0      | 4    | magic `RDCT`                                 |
//! | 4      | 1    | format version, currently 1                  |
//! | 5      | 1    | kind: 0 = conventional, 1 = modified         |
//! | 6      | 2    | reserved, must be zero                       |
//! | 8      | 8    | modulus q (u64)                              |
//! | 16     | 8    | key dimension N (u64)                        |
//! | 24     | 8    | rows (u64)                                   |
//! | 32     | 8·rows·(N+1+kind) | entries, row-major, each u64 < q |

use crate::error::{Error, Result};
use crate::field::Modulus;
use crate::linalg::ZqMatrix;
use crate::lwe::{Ciphertext, CiphertextKind};

pub const MAGIC: &[u8; 4] = b"RDCT";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 32;

pub fn encode(c: &Ciphertext) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * c.body().data().len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(match c.kind() {
        CiphertextKind::Conventional => 0,
        CiphertextKind::Modified => 1,
    });
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&c.modulus().value().to_le_bytes());
    out.extend_from_slice(&(c.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(c.rows() as u64).to_le_bytes());
    for &v in c.body().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn read_u64(bytes: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

pub fn decode(bytes: &[u8]) -> Result<Ciphertext> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated header: {} of {HEADER_LEN} bytes",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    if bytes[4] != VERSION {
        return Err(Error::Format(format!("unsupported version {}", bytes[4])));
    }
    let kind = match bytes[5] {
        0 => CiphertextKind::Conventional,
        1 => CiphertextKind::Modified,
        k => return Err(Error::Format(format!("unknown kind tag {k}"))),
    };
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::Format("reserved bytes are nonzero".into()));
    }
    let q = Modulus::new(read_u64(bytes, 8)).map_err(|e| Error::Format(e.to_string()))?;
    let dim = read_u64(bytes, 16) as usize;
    let rows = read_u64(bytes, 24) as usize;
    if dim == 0 {
        return Err(Error::Format("key dimension N = 0".into()));
    }
    let width = dim
        .checked_add(kind.extra_columns())
        .ok_or_else(|| Error::Format("N overflows".into()))?;
    let expected = rows
        .checked_mul(width)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {rows}x{width}, found {}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(rows * width);
    for i in 0..rows * width {
        let v = read_u64(bytes, HEADER_LEN + 8 * i);
        if v >= q.value() {
            return Err(Error::Format(format!("entry {i} = {v} is not reduced mod {q}")));
        }
        data.push(v);
    }
    Ciphertext::from_body(ZqMatrix::new(rows, width, data, q), kind)
}
