//! Binary tensor container.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "MXT1"
//! 4       1     element format id (0..=5, see ElementFormat::id), 255 = f64
//! 5       3     reserved, zero
//! 8       4     rows, u32 little-endian
//! 12      4     cols, u32 little-endian
//! 16      ...   payload
//! ```
//!
//! An f64 payload is `rows * cols` little-endian values in row-major order.
//! An MX payload holds, per row, `ceil(cols / 32)` blocks; each block is its
//! shared exponent byte followed by the 32 element codes packed LSB-first at
//! the format's bit width (4 bytes for FP4, 24 for FP6, 32 for 8-bit).

use std::io::{Read, Write};
use std::path::Path;

use crate::block::{MxBlock, MxMatrix, BLOCK_SIZE};
use crate::error::{MxError, Result};
use crate::format::ElementFormat;
use crate::matrix::RealMatrix;

pub const MAGIC: &[u8; 4] = b"MXT1";
pub const F64_ID: u8 = 255;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Real(RealMatrix),
    Mx(MxMatrix),
}

impl Tensor {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            Tensor::Real(m) => (m.rows, m.cols),
            Tensor::Mx(m) => (m.rows, m.cols),
        }
    }
}

fn packed_len(format: ElementFormat) -> usize {
    BLOCK_SIZE * format.spec().total_bits as usize / 8
}

fn pack(codes: &[u8; BLOCK_SIZE], bits: u32, out: &mut Vec<u8>) {
    let mut acc: u32 = 0;
    let mut n = 0;
    for &c in codes {
        acc |= (c as u32 & ((1 << bits) - 1)) << n;
        n += bits;
        while n >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            n -= 8;
        }
    }
    debug_assert_eq!(n, 0);
}

fn unpack(bytes: &[u8], bits: u32) -> [u8; BLOCK_SIZE] {
    let mut codes = [0u8; BLOCK_SIZE];
    let mut acc: u32 = 0;
    let mut n = 0;
    let mut it = bytes.iter();
    for c in &mut codes {
        while n < bits {
            acc |= (*it.next().expect("sized payload") as u32) << n;
            n += 8;
        }
        *c = (acc & ((1 << bits) - 1)) as u8;
        acc >>= bits;
        n -= bits;
    }
    codes
}

fn dim(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| MxError::TensorFile(format!("{what} {v} does not fit in u32")))
}

pub fn write_tensor<W: Write>(mut w: W, t: &Tensor) -> Result<()> {
    let (rows, cols) = t.shape();
    let id = match t {
        Tensor::Real(_) => F64_ID,
        Tensor::Mx(m) => m.format.id(),
    };
    let mut buf = Vec::with_capacity(HEADER_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&[id, 0, 0, 0]);
    buf.extend_from_slice(&dim(rows, "rows")?.to_le_bytes());
    buf.extend_from_slice(&dim(cols, "cols")?.to_le_bytes());
    match t {
        Tensor::Real(m) => {
            for v in &m.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::Mx(m) => {
            let bits = m.format.spec().total_bits;
            for b in &m.blocks {
                buf.push(b.shared_exponent);
                pack(&b.elements, bits, &mut buf);
            }
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_tensor<R: Read>(mut r: R) -> Result<Tensor> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    parse(&bytes)
}

fn parse(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < HEADER_LEN {
        return Err(MxError::TensorFile(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(MxError::TensorFile("bad magic, expected MXT1".into()));
    }
    let id = bytes[4];
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN..];
    let expect = |len: usize| -> Result<()> {
        if payload.len() != len {
            return Err(MxError::TensorFile(format!(
                "payload is {} bytes, expected {len} for {rows}x{cols}",
                payload.len()
            )));
        }
        Ok(())
    };
    if id == F64_ID {
        expect(rows * cols * 8)?;
        let values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        return Ok(Tensor::Real(RealMatrix::new(rows, cols, values)?));
    }
    let format = ElementFormat::from_id(id)
        .ok_or_else(|| MxError::TensorFile(format!("unknown format id {id}")))?;
    let bits = format.spec().total_bits;
    let stride = 1 + packed_len(format);
    let nblocks = rows * MxMatrix::blocks_per_row(cols);
    expect(nblocks * stride)?;
    let blocks = payload
        .chunks_exact(stride)
        .map(|c| MxBlock {
            format,
            shared_exponent: c[0],
            elements: unpack(&c[1..], bits),
        })
        .collect();
    Ok(Tensor::Mx(MxMatrix {
        format,
        rows,
        cols,
        blocks,
    }))
}

pub fn save(path: &Path, t: &Tensor) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor> {
    parse(&std::fs::read(path)?)
}
