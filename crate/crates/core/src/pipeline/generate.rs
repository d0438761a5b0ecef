use crate::error::{argument, Result};
use crate::model::{ModelConfig, Parameters, Real, Role};
use crate::sampler::{decode_iterative, DecodeTrace, SamplerConfig, TokenModel};
use crate::tokens::{MaskGrid, TokenGrid};

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    /// Full hierarchy, coarse levels first.
    pub input: TokenGrid,
    /// Same shape as `input`; `true` marks positions to generate.
    pub prompt: MaskGrid,
    pub coarse: SamplerConfig,
    pub c2f: SamplerConfig,
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub output: TokenGrid,
    pub coarse_trace: DecodeTrace,
    pub c2f_trace: DecodeTrace,
}

impl Generation {
    pub fn forward_passes(&self) -> usize {
        self.coarse_trace.forward_passes + self.c2f_trace.forward_passes
    }
}

/// Fine-level mask for stage two: the prompt restricted to fine columns.
pub fn fine_prompt(prompt: &MaskGrid, coarse_levels: usize) -> Result<MaskGrid> {
    if coarse_levels > prompt.levels() {
        return argument("more coarse levels than the prompt has");
    }
    MaskGrid::from_fn(prompt.timesteps(), prompt.levels(), |t, n| {
        n >= coarse_levels && prompt.get(t, n)
    })
}

/// Two-stage chain with checked model configs.
pub fn generate<F: Real, G: Real>(
    coarse: &Parameters<F>,
    c2f: &Parameters<G>,
    req: &GenerationRequest,
) -> Result<Generation> {
    let (cc, fc) = (coarse.config(), c2f.config());
    check_pair(cc, fc, req.input.levels())?;
    generate_with(coarse, c2f, cc.levels, req)
}

fn check_pair(coarse: &ModelConfig, c2f: &ModelConfig, levels: usize) -> Result<()> {
    if coarse.role != Role::Coarse || c2f.role != Role::CoarseToFine {
        return argument("expected a coarse model and a coarse-to-fine model");
    }
    if c2f.coarse_levels != coarse.levels || c2f.levels != levels {
        return argument(format!(
            "models cover {}+{} levels, grid has {levels}",
            coarse.levels, c2f.fine_levels
        ));
    }
    Ok(())
}

/// Stage one decodes the coarse sub-grid under the coarse part of the
/// prompt. Stage two decodes the fine levels with the stage-one coarse
/// tokens fixed.
pub fn generate_with<A, B>(
    coarse: &A,
    c2f: &B,
    coarse_levels: usize,
    req: &GenerationRequest,
) -> Result<Generation>
where
    A: TokenModel + ?Sized,
    B: TokenModel + ?Sized,
{
    let levels = req.input.levels();
    if !req.prompt.same_shape(&req.input) {
        return argument("prompt shape differs from the input grid");
    }
    if coarse_levels == 0 || coarse_levels > levels {
        return argument(format!("{coarse_levels} coarse levels out of {levels}"));
    }
    let coarse_in = req.input.select_levels(0..coarse_levels)?;
    let coarse_prompt = req.prompt.select_levels(0..coarse_levels)?;
    let (coarse_out, coarse_trace) = decode_iterative(coarse, &coarse_in, &coarse_prompt, &req.coarse)?;

    let mut full = req.input.clone();
    full.replace_levels(0, &coarse_out)?;
    if coarse_levels == levels {
        return Ok(Generation {
            output: full,
            coarse_trace,
            c2f_trace: DecodeTrace::default(),
        });
    }
    let fine = fine_prompt(&req.prompt, coarse_levels)?;
    let (output, c2f_trace) = decode_iterative(c2f, &full, &fine, &req.c2f)?;
    Ok(Generation {
        output,
        coarse_trace,
        c2f_trace,
    })
}

/// Forward passes an autoregressive model spends on `seconds` of audio at
/// one pass per latent timestep.
pub fn autoregressive_passes(seconds: f64, token_rate: f64) -> usize {
    // the product is rounded to 1e-9 first so 10 s at 57.4 Hz gives 574
    let steps = seconds * token_rate;
    ((steps * 1e9).round() / 1e9).ceil() as usize
}
