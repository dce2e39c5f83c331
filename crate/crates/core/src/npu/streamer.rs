use serde::{Deserialize, Serialize};

use crate::mac::PrecisionMode;

use super::channel_activity;

/// Bits delivered by one streamer channel per cycle.
pub const CHANNEL_WIDTH_BITS: u32 = 64;
/// Channels wired per operand streamer.
pub const MAX_CHANNELS: u32 = 4;

/// Data streamer setup for both operands. Only the channels the precision
/// mode needs are switched on; the rest stay gated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamerConfig {
    /// Channels available per operand streamer.
    pub channels: u32,
    pub channel_width_bits: u32,
    /// Channels of the shared-scale streamer.
    pub scale_channels: u32,
}

impl Default for StreamerConfig {
    fn default() -> Self {
        StreamerConfig {
            channels: MAX_CHANNELS,
            channel_width_bits: CHANNEL_WIDTH_BITS,
            scale_channels: 1,
        }
    }
}

impl StreamerConfig {
    pub fn with_channels(channels: u32) -> Self {
        StreamerConfig {
            channels,
            ..Self::default()
        }
    }

    /// Channels switched on per operand in `mode`.
    pub fn active_channels(&self, mode: PrecisionMode) -> u32 {
        channel_activity(mode).min(self.channels)
    }

    /// Operand bandwidth in bits per cycle after gating.
    pub fn operand_bandwidth(&self, mode: PrecisionMode) -> u64 {
        self.active_channels(mode) as u64 * self.channel_width_bits as u64
    }
}

/// Nested-loop address generator: the innermost loop is the last entry.
/// Yields `base + sum(i_d * stride_d)` for every index tuple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressGenerator {
    pub base: u64,
    pub bounds: Vec<u32>,
    pub strides: Vec<i64>,
    idx: Vec<u32>,
    done: bool,
}

impl AddressGenerator {
    pub fn new(base: u64, bounds: Vec<u32>, strides: Vec<i64>) -> Self {
        assert_eq!(bounds.len(), strides.len(), "one stride per loop");
        let done = bounds.contains(&0);
        AddressGenerator {
            base,
            idx: vec![0; bounds.len()],
            bounds,
            strides,
            done,
        }
    }

    pub fn len(&self) -> usize {
        self.bounds.iter().map(|&b| b as usize).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Iterator for AddressGenerator {
    /// The loop indices and the generated address.
    type Item = (Vec<u32>, u64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let offset: i64 = self
            .idx
            .iter()
            .zip(&self.strides)
            .map(|(&i, &s)| i as i64 * s)
            .sum();
        let item = (self.idx.clone(), (self.base as i64 + offset) as u64);
        self.done = true;
        for d in (0..self.idx.len()).rev() {
            self.idx[d] += 1;
            if self.idx[d] < self.bounds[d] {
                self.done = false;
                break;
            }
            self.idx[d] = 0;
        }
        Some(item)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gating_caps_channels() {
        let s = StreamerConfig::with_channels(8);
        assert_eq!(s.active_channels(PrecisionMode::MxInt8), 1);
        assert_eq!(s.active_channels(PrecisionMode::MxFp6E3M2), 3);
        let narrow = StreamerConfig::with_channels(2);
        assert_eq!(narrow.active_channels(PrecisionMode::MxFp8E4M3), 2);
    }

    #[test]
    fn two_level_pattern() {
        let g = AddressGenerator::new(100, vec![2, 3], vec![64, 8]);
        let addrs: Vec<u64> = g.map(|(_, a)| a).collect();
        assert_eq!(addrs, [100, 108, 116, 164, 172, 180]);
    }

    #[test]
    fn empty_bound() {
        assert_eq!(AddressGenerator::new(0, vec![3, 0], vec![1, 1]).count(), 0);
    }
}
