// Prompt masks, their text form and the bitrate they keep.

use vampnet::prompts::{effective_bitrate, PromptContext, PromptSpec};

pub fn run_example() -> vampnet::Result<()> {
    let ctx = PromptContext::new(62.5);
    let (t, levels, codec_bps) = (124, 4, 2500.0);
    for text in [
        "periodic:P=16",
        "periodic:P=4,offset=2",
        "compression:Nk=1",
        "compression:Nk=1+periodic:P=8",
        "inpaint:prefix=31,suffix=31",
        "beat:width=2,at=0/31/62/93",
    ] {
        let spec = PromptSpec::parse(text, &ctx)?;
        let mask = spec.mask(t, levels)?;
        println!(
            "{spec:<36} keeps {:>3} of {}  -> {:>7.2} bps",
            mask.unmasked_count(),
            t * levels,
            effective_bitrate(&mask, codec_bps)?
        );
    }
    Ok(())
}

fn main() {
    run_example().unwrap();
}
