//! Checkpoint layout (little-endian):
//!
//! ```text
//! "VMPW" | version u8 = 1
//! embed_dim u32 | layers u32 | heads u32 | levels u32 | vocab u32
//! max_len u32 | rel_window u32 | role u8 | coarse_levels u32 | fine_levels u32
//! step u64 | parameter count u64 | parameters f32...
//! crc32 u32 over every preceding byte
//! ```

use super::{ModelConfig, Parameters, Role};
use crate::error::{format_err, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VMPW";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: Parameters<f32>,
    /// Optimizer steps taken when the checkpoint was written.
    pub step: u64,
}

impl Checkpoint {
    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }
}

pub fn write_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let cfg = ckpt.params.config();
    let flat = ckpt.params.flat();
    let mut out = Vec::with_capacity(64 + 4 * flat.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    for v in [
        cfg.embed_dim,
        cfg.layers,
        cfg.heads,
        cfg.levels,
        cfg.vocab,
        cfg.max_len,
        cfg.rel_window,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.push(match cfg.role {
        Role::Coarse => 0,
        Role::CoarseToFine => 1,
    });
    out.extend_from_slice(&(cfg.coarse_levels as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.fine_levels as u32).to_le_bytes());
    out.extend_from_slice(&ckpt.step.to_le_bytes());
    out.extend_from_slice(&(flat.len() as u64).to_le_bytes());
    for v in flat {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    const HEADER: usize = 4 + 1 + 7 * 4 + 1 + 2 * 4 + 8 + 8;
    if bytes.len() < 5 {
        return format_err(bytes.len(), "truncated checkpoint");
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return format_err(0, "bad checkpoint magic");
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: bytes[4],
            expected: CHECKPOINT_VERSION,
        });
    }
    if bytes.len() < HEADER + 4 {
        return format_err(bytes.len(), "truncated checkpoint header");
    }
    let body = &bytes[..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Corruption { stored, computed });
    }

    let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as usize;
    let u64_at = |o: usize| u64::from_le_bytes(body[o..o + 8].try_into().unwrap());
    let role = match body[33] {
        0 => Role::Coarse,
        1 => Role::CoarseToFine,
        r => return format_err(33, format!("unknown role {r}")),
    };
    let config = ModelConfig {
        embed_dim: u32_at(5),
        layers: u32_at(9),
        heads: u32_at(13),
        levels: u32_at(17),
        vocab: u32_at(21),
        max_len: u32_at(25),
        rel_window: u32_at(29),
        role,
        coarse_levels: u32_at(34),
        fine_levels: u32_at(38),
    };
    config
        .validate()
        .map_err(|e| Error::Format { offset: 5, message: e.to_string() })?;
    let step = u64_at(42);
    let count = u64_at(50) as usize;
    let payload = &body[HEADER..];
    if payload.len() != count.saturating_mul(4) || count != config.param_count() {
        return format_err(
            HEADER,
            format!(
                "payload holds {} bytes for {count} parameters; config needs {}",
                payload.len(),
                config.param_count()
            ),
        );
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(Checkpoint {
        params: Parameters::from_flat(&config, data)?,
        step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            params: Parameters::init(&ModelConfig::tiny(), 3).unwrap(),
            step: 42,
        }
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ck = sample();
        let bytes = write_checkpoint(&ck);
        let back = read_checkpoint(&bytes).unwrap();
        assert_eq!(back.step, 42);
        assert!(back
            .params
            .flat()
            .iter()
            .zip(ck.params.flat())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(write_checkpoint(&back), bytes);
    }

    #[test]
    fn flipped_byte_is_corruption() {
        let mut bytes = write_checkpoint(&sample());
        let i = bytes.len() / 2;
        bytes[i] ^= 0x40;
        assert!(matches!(read_checkpoint(&bytes), Err(Error::Corruption { .. })));
    }

    #[test]
    fn version_gate() {
        let mut bytes = write_checkpoint(&sample());
        bytes[4] = 2;
        assert!(matches!(
            read_checkpoint(&bytes),
            Err(Error::UnsupportedVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn c2f_role_survives() {
        let mut cfg = ModelConfig::coarse_to_fine(1, 2, 4);
        cfg.embed_dim = 8;
        cfg.layers = 1;
        cfg.heads = 2;
        let ck = Checkpoint {
            params: Parameters::init(&cfg, 1).unwrap(),
            step: 0,
        };
        let back = read_checkpoint(&write_checkpoint(&ck)).unwrap();
        assert_eq!(back.config(), &cfg);
    }
}
