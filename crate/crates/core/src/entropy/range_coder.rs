//! Byte-oriented range coder with carry propagation (LZMA style): a 33-bit
//! `low` register, a 32-bit `range`, and a cached output byte that absorbs
//! carries. Tables must share the coder's precision.

use super::pmf::PmfTable;
use crate::error::{NvcError, Result};

const TOP: u32 = 1 << 24;

/// Bytes written by [`RangeEncoder::finish`] beyond the information content
/// (one leading cache byte plus four flush bytes).
pub const FLUSH_BYTES: usize = 5;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    pub fn encode(&mut self, symbol: i32, table: &PmfTable) -> Result<()> {
        let (start, freq) = table.interval(symbol)?;
        let r = self.range >> table.precision;
        self.low += r as u64 * start as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
        Ok(())
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Self {
            data,
            pos: 0,
            code: 0,
            range: u32::MAX,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or(NvcError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    pub fn decode(&mut self, table: &PmfTable) -> Result<i32> {
        let r = self.range >> table.precision;
        let target = self.code / r;
        if target >= table.total() {
            return Err(NvcError::CorruptStream("range decoder overflow".into()));
        }
        let idx = table.find(target);
        let (start, freq) = (table.cum[idx], table.freqs[idx]);
        self.code -= r * start;
        self.range = r * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(table.min_symbol + idx as i32)
    }

    /// Checks that the whole payload was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(NvcError::CorruptStream(format!(
                "{} trailing bytes after range-coded payload",
                self.data.len() - self.pos
            )));
        }
        Ok(())
    }
}

/// Encodes `symbols[i]` with `tables[i]`.
pub fn range_encode(symbols: &[i32], tables: &[PmfTable]) -> Result<Vec<u8>> {
    if symbols.len() != tables.len() {
        return Err(NvcError::Shape(format!(
            "{} symbols vs {} tables",
            symbols.len(),
            tables.len()
        )));
    }
    let mut enc = RangeEncoder::new();
    for (&s, t) in symbols.iter().zip(tables) {
        enc.encode(s, t)?;
    }
    Ok(enc.finish())
}

/// Decodes one symbol per table.
pub fn range_decode(bytes: &[u8], tables: &[PmfTable]) -> Result<Vec<i32>> {
    let mut dec = RangeDecoder::new(bytes)?;
    let out = tables
        .iter()
        .map(|t| dec.decode(t))
        .collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(out)
}
