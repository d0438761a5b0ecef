// Writes and reads token streams, mask sidecars, codecs and checkpoints.

use vampnet::model::{ModelConfig, Parameters};
use vampnet::pipeline::{load_checkpoint, save_checkpoint};
use vampnet::prompts::periodic_mask;
use vampnet::tokenizer::{Codebook, Framing, RvqCodec};
use vampnet::tokens::{MaskGrid, TokenGrid};

pub fn run_example() -> vampnet::Result<()> {
    let dir = tempfile::tempdir()?;

    let grid = TokenGrid::from_fn(10, vec![32, 32, 32], |t, n| ((t * 7 + n) % 32) as u16)?;
    let path = dir.path().join("clip.vmpt");
    std::fs::write(&path, grid.to_stream_bytes())?;
    let bytes = std::fs::read(&path)?;
    println!("token stream: {} bytes, equal {}", bytes.len(), TokenGrid::from_stream_bytes(&bytes)? == grid);

    let mask = periodic_mask(10, 3, 4, 0)?;
    let back = MaskGrid::from_stream_bytes(&mask.to_stream_bytes())?;
    println!("mask sidecar: equal {}", back == mask);

    let framing = Framing { sample_rate: 8000, frame_len: 4, hop: 2 };
    let books = (0..2)
        .map(|level| Codebook::new(level, 4, (0..12).map(|i| (i / 4) as f32 * 0.1 * (i % 4) as f32).collect()))
        .collect::<vampnet::Result<Vec<_>>>()?;
    let codec = RvqCodec::new(framing, books)?;
    let codec_bytes = codec.to_bytes();
    println!("codec: {} bytes, equal {}", codec_bytes.len(), RvqCodec::from_bytes(&codec_bytes)?.to_bytes() == codec_bytes);

    let params = Parameters::<f32>::init(&ModelConfig::tiny(), 0)?;
    let ckpt = dir.path().join("coarse.vmpw");
    save_checkpoint(&params, 42, &ckpt)?;
    let loaded = load_checkpoint(&ckpt)?;
    println!("checkpoint: step {}, {} parameters, equal {}", loaded.step, loaded.params.len(), loaded.params == params);

    let mut corrupt = std::fs::read(&ckpt)?;
    corrupt[20] ^= 0x10;
    std::fs::write(&ckpt, corrupt)?;
    println!("corrupted checkpoint: {}", load_checkpoint(&ckpt).unwrap_err());
    Ok(())
}

fn main() {
    run_example().unwrap();
}
