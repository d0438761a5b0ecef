//! Token grids, mask grids, and their binary stream formats.
//!
//! A [`TokenGrid`] is a `T x N` matrix of codebook indices, row = timestep,
//! column = quantizer level with level 0 the coarsest. A [`MaskGrid`] has the
//! same shape and marks which positions are hidden from the model (`true` =
//! masked). Masks are never encoded in-band: the MASK symbol only exists
//! inside the model's embedding tables.
//!
//! Token stream layout (little-endian):
//!
//! ```text
//! "VMPT" | version u8 = 1 | N u8 | T u32 | N x u16 vocab | T*N x u16 tokens
//! ```
//!
//! Mask sidecar layout:
//!
//! ```text
//! "VMPM" | version u8 = 1 | N u8 | T u32 | ceil(T*N/8) bytes, bit set = masked
//! ```
//!
//! Both payloads are timestep-major; mask bits are packed LSB-first.

use std::io::{Read, Write};
use std::ops::Range;

use crate::error::{argument, format_err, Error, Result};

pub const TOKEN_MAGIC: &[u8; 4] = b"VMPT";
pub const MASK_MAGIC: &[u8; 4] = b"VMPM";
pub const STREAM_VERSION: u8 = 1;

/// Largest vocabulary representable by the 16-bit vocabulary field.
pub const MAX_VOCAB: u32 = u16::MAX as u32;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    timesteps: usize,
    vocab: Vec<u32>,
    data: Vec<u16>,
}

impl TokenGrid {
    /// Builds a grid from timestep-major token data, validating every entry.
    pub fn new(timesteps: usize, vocab: Vec<u32>, data: Vec<u16>) -> Result<Self> {
        let levels = vocab.len();
        if timesteps == 0 || levels == 0 {
            return argument(format!(
                "token grid needs T >= 1 and N >= 1, got T={timesteps} N={levels}"
            ));
        }
        if levels > u8::MAX as usize {
            return argument(format!("at most 255 levels supported, got {levels}"));
        }
        if let Some(bad) = vocab.iter().find(|&&c| c == 0 || c > MAX_VOCAB) {
            return argument(format!("vocabulary size {bad} outside [1, {MAX_VOCAB}]"));
        }
        if data.len() != timesteps * levels {
            return argument(format!(
                "token data has {} entries, expected {}",
                data.len(),
                timesteps * levels
            ));
        }
        for (i, &tok) in data.iter().enumerate() {
            let level = i % levels;
            if u32::from(tok) >= vocab[level] {
                return argument(format!(
                    "token {tok} at t={} level={level} not below vocabulary size {}",
                    i / levels,
                    vocab[level]
                ));
            }
        }
        Ok(Self {
            timesteps,
            vocab,
            data,
        })
    }

    /// All-zero grid with a uniform vocabulary.
    pub fn zeros(timesteps: usize, levels: usize, vocab: u32) -> Result<Self> {
        Self::new(timesteps, vec![vocab; levels], vec![0; timesteps * levels])
    }

    pub fn from_fn(
        timesteps: usize,
        vocab: Vec<u32>,
        mut f: impl FnMut(usize, usize) -> u16,
    ) -> Result<Self> {
        let levels = vocab.len();
        let data = (0..timesteps * levels)
            .map(|i| f(i / levels, i % levels))
            .collect();
        Self::new(timesteps, vocab, data)
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn levels(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[u32] {
        &self.vocab
    }

    pub fn vocab_at(&self, level: usize) -> u32 {
        self.vocab[level]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[u16] {
        &self.data
    }

    pub fn get(&self, t: usize, level: usize) -> u16 {
        self.data[t * self.levels() + level]
    }

    pub fn row(&self, t: usize) -> &[u16] {
        let n = self.levels();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn set(&mut self, t: usize, level: usize, token: u16) -> Result<()> {
        if t >= self.timesteps || level >= self.levels() {
            return argument(format!("position ({t}, {level}) outside grid"));
        }
        if u32::from(token) >= self.vocab[level] {
            return argument(format!(
                "token {token} not below vocabulary size {} at level {level}",
                self.vocab[level]
            ));
        }
        let n = self.levels();
        self.data[t * n + level] = token;
        Ok(())
    }

    /// Sub-grid holding only the given contiguous range of levels.
    pub fn select_levels(&self, levels: Range<usize>) -> Result<Self> {
        if levels.is_empty() || levels.end > self.levels() {
            return argument(format!(
                "level range {levels:?} invalid for {} levels",
                self.levels()
            ));
        }
        let vocab = self.vocab[levels.clone()].to_vec();
        Self::from_fn(self.timesteps, vocab, |t, n| self.get(t, levels.start + n))
    }

    /// Sub-grid holding only the given contiguous range of timesteps.
    pub fn select_timesteps(&self, steps: Range<usize>) -> Result<Self> {
        if steps.is_empty() || steps.end > self.timesteps {
            return argument(format!(
                "timestep range {steps:?} invalid for T={}",
                self.timesteps
            ));
        }
        let n = self.levels();
        Self::new(
            steps.len(),
            self.vocab.clone(),
            self.data[steps.start * n..steps.end * n].to_vec(),
        )
    }

    /// Overwrites levels starting at `first_level` with the columns of `part`.
    pub fn replace_levels(&mut self, first_level: usize, part: &TokenGrid) -> Result<()> {
        if part.timesteps != self.timesteps || first_level + part.levels() > self.levels() {
            return argument("replacement grid does not fit");
        }
        for (k, &c) in part.vocab.iter().enumerate() {
            if c != self.vocab[first_level + k] {
                return argument("replacement grid vocabulary differs");
            }
        }
        let n = self.levels();
        for t in 0..self.timesteps {
            for k in 0..part.levels() {
                self.data[t * n + first_level + k] = part.get(t, k);
            }
        }
        Ok(())
    }

    /// Writes the token-stream format; returns the number of bytes emitted.
    pub fn write_stream<W: Write>(&self, sink: &mut W) -> Result<usize> {
        let bytes = self.to_stream_bytes();
        sink.write_all(&bytes)?;
        Ok(bytes.len())
    }

    pub fn to_stream_bytes(&self) -> Vec<u8> {
        let n = self.levels();
        let mut out = Vec::with_capacity(10 + 2 * n + 2 * self.data.len());
        out.extend_from_slice(TOKEN_MAGIC);
        out.push(STREAM_VERSION);
        out.push(n as u8);
        out.extend_from_slice(&(self.timesteps as u32).to_le_bytes());
        for &c in &self.vocab {
            out.extend_from_slice(&(c as u16).to_le_bytes());
        }
        for &tok in &self.data {
            out.extend_from_slice(&tok.to_le_bytes());
        }
        out
    }

    pub fn read_stream<R: Read>(source: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_stream_bytes(&bytes)
    }

    pub fn from_stream_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let (levels, timesteps) = cur.header(TOKEN_MAGIC)?;
        let mut vocab = Vec::with_capacity(levels);
        for _ in 0..levels {
            let at = cur.pos;
            let c = cur.u16()?;
            if c == 0 {
                return format_err(at, "vocabulary size 0");
            }
            vocab.push(u32::from(c));
        }
        let count = timesteps
            .checked_mul(levels)
            .ok_or_else(|| Error::Format {
                offset: 6,
                message: "grid size overflows".into(),
            })?;
        cur.require(count.saturating_mul(2), "token payload")?;
        let mut data = Vec::with_capacity(count);
        for i in 0..count {
            let at = cur.pos;
            let tok = cur.u16()?;
            let level = i % levels;
            if u32::from(tok) >= vocab[level] {
                return format_err(
                    at,
                    format!(
                        "token {tok} at level {level} not below vocabulary size {}",
                        vocab[level]
                    ),
                );
            }
            data.push(tok);
        }
        cur.finish()?;
        Self::new(timesteps, vocab, data)
    }
}

/// Boolean `T x N` grid; `true` marks a masked (hidden) position.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MaskGrid {
    timesteps: usize,
    levels: usize,
    data: Vec<bool>,
}

impl MaskGrid {
    pub fn new(timesteps: usize, levels: usize, data: Vec<bool>) -> Result<Self> {
        if timesteps == 0 || levels == 0 {
            return argument(format!(
                "mask grid needs T >= 1 and N >= 1, got T={timesteps} N={levels}"
            ));
        }
        if levels > u8::MAX as usize {
            return argument(format!("at most 255 levels supported, got {levels}"));
        }
        if data.len() != timesteps * levels {
            return argument(format!(
                "mask data has {} entries, expected {}",
                data.len(),
                timesteps * levels
            ));
        }
        Ok(Self {
            timesteps,
            levels,
            data,
        })
    }

    pub fn filled(timesteps: usize, levels: usize, masked: bool) -> Result<Self> {
        Self::new(timesteps, levels, vec![masked; timesteps * levels])
    }

    pub fn from_fn(
        timesteps: usize,
        levels: usize,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        let data = (0..timesteps * levels)
            .map(|i| f(i / levels, i % levels))
            .collect();
        Self::new(timesteps, levels, data)
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, t: usize, level: usize) -> bool {
        self.data[t * self.levels + level]
    }

    pub fn set(&mut self, t: usize, level: usize, masked: bool) {
        self.data[t * self.levels + level] = masked;
    }

    pub fn masked_count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn unmasked_count(&self) -> usize {
        self.data.len() - self.masked_count()
    }

    pub fn same_shape(&self, grid: &TokenGrid) -> bool {
        self.timesteps == grid.timesteps() && self.levels == grid.levels()
    }

    /// Positions in timestep-major order.
    pub fn masked_positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.levels;
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &m)| m)
            .map(move |(i, _)| (i / n, i % n))
    }

    pub fn select_levels(&self, levels: Range<usize>) -> Result<Self> {
        if levels.is_empty() || levels.end > self.levels {
            return argument(format!(
                "level range {levels:?} invalid for {} levels",
                self.levels
            ));
        }
        Self::from_fn(self.timesteps, levels.len(), |t, n| {
            self.get(t, levels.start + n)
        })
    }

    pub fn select_timesteps(&self, steps: Range<usize>) -> Result<Self> {
        if steps.is_empty() || steps.end > self.timesteps {
            return argument(format!(
                "timestep range {steps:?} invalid for T={}",
                self.timesteps
            ));
        }
        let n = self.levels;
        Self::new(
            steps.len(),
            n,
            self.data[steps.start * n..steps.end * n].to_vec(),
        )
    }

    pub fn to_stream_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + self.data.len().div_ceil(8));
        out.extend_from_slice(MASK_MAGIC);
        out.push(STREAM_VERSION);
        out.push(self.levels as u8);
        out.extend_from_slice(&(self.timesteps as u32).to_le_bytes());
        let mut packed = vec![0u8; self.data.len().div_ceil(8)];
        for (i, _) in self.data.iter().enumerate().filter(|(_, &m)| m) {
            packed[i / 8] |= 1 << (i % 8);
        }
        out.extend_from_slice(&packed);
        out
    }

    pub fn write_stream<W: Write>(&self, sink: &mut W) -> Result<usize> {
        let bytes = self.to_stream_bytes();
        sink.write_all(&bytes)?;
        Ok(bytes.len())
    }

    pub fn read_stream<R: Read>(source: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        source.read_to_end(&mut bytes)?;
        Self::from_stream_bytes(&bytes)
    }

    pub fn from_stream_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor::new(bytes);
        let (levels, timesteps) = cur.header(MASK_MAGIC)?;
        let count = timesteps.checked_mul(levels).ok_or_else(|| Error::Format {
            offset: 6,
            message: "grid size overflows".into(),
        })?;
        let packed_len = count.div_ceil(8);
        let start = cur.pos;
        let packed = cur.take(packed_len, "mask payload")?;
        if count % 8 != 0 {
            let spare = packed[packed_len - 1] >> (count % 8);
            if spare != 0 {
                return format_err(start + packed_len - 1, "padding bits set");
            }
        }
        let data = (0..count)
            .map(|i| packed[i / 8] & (1 << (i % 8)) != 0)
            .collect();
        cur.finish()?;
        Self::new(timesteps, levels, data)
    }
}

/// Number of `true` entries.
pub fn masked_count(mask: &MaskGrid) -> usize {
    mask.masked_count()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn require(&self, n: usize, what: &str) -> Result<()> {
        if self.bytes.len() - self.pos < n {
            return format_err(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            );
        }
        Ok(())
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        self.require(n, what)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1, "u8")?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2, "u16")?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4, "u32")?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    /// Reads magic, version, N and T; returns `(N, T)`.
    fn header(&mut self, magic: &[u8; 4]) -> Result<(usize, usize)> {
        let found = self.take(4, "magic")?;
        if found != magic {
            return format_err(
                0,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(found),
                    String::from_utf8_lossy(magic)
                ),
            );
        }
        let version = self.u8()?;
        if version != STREAM_VERSION {
            return format_err(4, format!("unsupported version {version}"));
        }
        let levels = self.u8()? as usize;
        if levels == 0 {
            return format_err(5, "level count 0");
        }
        let timesteps = self.u32()? as usize;
        if timesteps == 0 {
            return format_err(6, "timestep count 0");
        }
        Ok((levels, timesteps))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return format_err(
                self.pos,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn masked_count_examples() {
        let none = MaskGrid::filled(4, 3, false).unwrap();
        let all = MaskGrid::filled(4, 3, true).unwrap();
        let row = MaskGrid::from_fn(4, 3, |t, _| t == 2).unwrap();
        assert_eq!(masked_count(&none), 0);
        assert_eq!(masked_count(&all), 12);
        assert_eq!(masked_count(&row), 3);
        assert_eq!(row.masked_count() + row.unmasked_count(), 12);
    }

    #[test]
    fn minimal_stream_layout() {
        let g = TokenGrid::new(1, vec![4], vec![3]).unwrap();
        let mut buf = Vec::new();
        let n = g.write_stream(&mut buf).unwrap();
        assert_eq!(n, 14);
        assert_eq!(
            buf,
            [b'V', b'M', b'P', b'T', 1, 1, 1, 0, 0, 0, 4, 0, 3, 0]
        );
        let back = TokenGrid::read_stream(&mut buf.as_slice()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn out_of_range_token_rejected() {
        assert!(matches!(
            TokenGrid::new(1, vec![4], vec![4]),
            Err(Error::Argument(_))
        ));
        let mut g = TokenGrid::zeros(2, 2, 4).unwrap();
        assert!(g.set(0, 1, 9).is_err());
    }

    #[test]
    fn truncated_and_bad_magic() {
        let g = TokenGrid::zeros(3, 2, 8).unwrap();
        let bytes = g.to_stream_bytes();
        let err = TokenGrid::from_stream_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = TokenGrid::from_stream_bytes(&bad).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }));
    }

    #[test]
    fn out_of_range_token_in_stream_names_offset() {
        let mut bytes = TokenGrid::zeros(2, 1, 4).unwrap().to_stream_bytes();
        // second token lives at 10 + 2 + 2
        bytes[14] = 7;
        match TokenGrid::from_stream_bytes(&bytes).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 14),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn mask_sidecar_layout() {
        let m = MaskGrid::from_fn(3, 3, |t, n| t == n).unwrap();
        let bytes = m.to_stream_bytes();
        assert_eq!(&bytes[..4], MASK_MAGIC);
        assert_eq!(bytes.len(), 10 + 2);
        // positions 0, 4, 8 set
        assert_eq!(bytes[10], 0b0001_0001);
        assert_eq!(bytes[11], 0b0000_0001);
        assert_eq!(MaskGrid::from_stream_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn level_selection_and_replacement() {
        let g = TokenGrid::from_fn(3, vec![8, 8, 8], |t, n| (t * 3 + n) as u16 % 8).unwrap();
        let sub = g.select_levels(1..3).unwrap();
        assert_eq!(sub.get(2, 0), g.get(2, 1));
        let mut h = TokenGrid::zeros(3, 3, 8).unwrap();
        h.replace_levels(1, &sub).unwrap();
        assert_eq!(h.get(2, 2), g.get(2, 2));
        assert_eq!(h.get(2, 0), 0);
    }

    fn arb_grid() -> impl Strategy<Value = TokenGrid> {
        (1usize..20, prop::collection::vec(1u32..=MAX_VOCAB, 1..6), any::<u64>()).prop_map(
            |(t, vocab, seed)| {
                let mut s = seed;
                TokenGrid::from_fn(t, vocab.clone(), |_, n| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    ((s >> 33) % u64::from(vocab[n])) as u16
                })
                .unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn token_stream_round_trip(g in arb_grid()) {
            let bytes = g.to_stream_bytes();
            let back = TokenGrid::from_stream_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(back.to_stream_bytes(), bytes);
        }

        #[test]
        fn mask_stream_round_trip(t in 1usize..30, n in 1usize..8, bits in any::<u64>()) {
            let m = MaskGrid::from_fn(t, n, |a, b| (bits >> ((a * n + b) % 64)) & 1 == 1).unwrap();
            let back = MaskGrid::from_stream_bytes(&m.to_stream_bytes()).unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
