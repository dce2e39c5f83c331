use serde::Serialize;

use crate::error::{MxError, Result};
use crate::mac::PrecisionMode;

use super::ARRAY_DIM;

pub const CSR_COUNT: u8 = 3;
/// Fixed cost of handing a kernel to the core after the CSR writes.
pub const LAUNCH_LATENCY: u64 = 10;

/// The three configuration registers of the tensor core.
///
/// - `csr0`: precision mode code, the index into [`PrecisionMode::ALL`].
/// - `csr1`: accumulation count, i.e. K tiles per output tile.
/// - `csr2`: tile row/column dimension (the padded N), a multiple of 8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CsrFile {
    pub mode: PrecisionMode,
    pub k_tiles: u32,
    pub tile_dim: u32,
}

impl Default for CsrFile {
    fn default() -> Self {
        CsrFile {
            mode: PrecisionMode::MxInt8,
            k_tiles: 1,
            tile_dim: ARRAY_DIM as u32,
        }
    }
}

impl CsrFile {
    pub fn mode_code(mode: PrecisionMode) -> u32 {
        PrecisionMode::ALL.iter().position(|&m| m == mode).expect("listed mode") as u32
    }

    pub fn write(&mut self, index: u8, value: u32) -> Result<()> {
        match index {
            0 => {
                self.mode = *PrecisionMode::ALL
                    .get(value as usize)
                    .ok_or_else(|| MxError::Csr(format!("precision code {value} is not defined")))?;
            }
            1 => {
                if value == 0 {
                    return Err(MxError::Csr("accumulation count must be at least 1".into()));
                }
                self.k_tiles = value;
            }
            2 => {
                if value == 0 || !(value as usize).is_multiple_of(ARRAY_DIM) {
                    return Err(MxError::Csr(format!("tile dimension {value} is not a positive multiple of 8")));
                }
                self.tile_dim = value;
            }
            _ => return Err(MxError::Csr(format!("register index {index} out of range 0..{CSR_COUNT}"))),
        }
        Ok(())
    }

    /// Applies a write sequence, one per cycle over the 32-bit interface,
    /// and returns the new file with the configuration cost including the
    /// launch latency.
    pub fn configure(&self, writes: &[(u8, u32)]) -> Result<(CsrFile, u64)> {
        let mut next = *self;
        for &(i, v) in writes {
            next.write(i, v)?;
        }
        Ok((next, writes.len() as u64 + LAUNCH_LATENCY))
    }

    /// The full write sequence for a layer.
    pub fn writes_for(mode: PrecisionMode, k_tiles: u32, tile_dim: u32) -> [(u8, u32); 3] {
        [(0, Self::mode_code(mode)), (1, k_tiles), (2, tile_dim)]
    }
}
