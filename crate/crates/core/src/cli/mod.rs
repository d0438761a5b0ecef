//! Command-line front end. `run` returns the process exit code.

mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

pub use config::RunConfig;

use crate::error::Error;
use crate::eval::{embed, fad, multiscale_mel_error, write_metrics_csv, write_summary_csv, MelConfig, MetricRow, SummaryRow};
use crate::experiment::{eval_clips, run_condition, run_noisy, ConditionReport, EvalClip, ToyModels, SWEEP_STEPS};
use crate::model::{Parameters, Role};
use crate::pipeline::{
    generate, load_checkpoint, save_checkpoint, train, write_loss_csv, GenerationRequest, Recipe,
};
use crate::prompts::{effective_bitrate, PromptContext, PromptSpec};
use crate::sampler::SamplerConfig;
use crate::synth::{build_corpus, generate_clip, read_wav, write_beats, write_wav};
use crate::tokenizer::{FrameVector, RvqCodec};
use crate::tokens::TokenGrid;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config values or missing inputs. Exit code 2.
    Usage(String),
    /// Failures while running. Exit code 1.
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(Error::Io(e))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "vampnet", about = "Masked token modeling on synthetic music")]
pub struct Cli {
    /// key = value config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides one config key, e.g. `--set train.steps=200`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Parent of the per-config run directories.
    #[arg(long, default_value = "runs", global = true)]
    pub runs_dir: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Coarse,
    C2f,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write corpus WAVs and beat files.
    Synth,
    /// Fit the residual quantizer on training WAVs.
    FitCodec {
        #[arg(long)]
        codec: Option<PathBuf>,
    },
    /// Encode WAVs to token streams.
    Tokenize {
        #[arg(long)]
        codec: Option<PathBuf>,
        /// Files to encode instead of the corpus.
        #[arg(long)]
        input: Vec<PathBuf>,
    },
    /// Train a coarse or coarse-to-fine model.
    Train {
        #[arg(long, value_enum)]
        role: RoleArg,
    },
    /// Generate from a prompt.
    Vamp {
        /// Token stream (.vmpt) or WAV.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        c2f_steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        coarse: Option<PathBuf>,
        #[arg(long)]
        c2f: Option<PathBuf>,
        #[arg(long)]
        codec: Option<PathBuf>,
        /// Output name inside the run's vamp directory.
        #[arg(long, default_value = "out")]
        name: String,
    },
    /// Metric tables over test clips, or over matching WAV pairs.
    Evaluate {
        #[arg(long, requires = "generated")]
        reference: Option<PathBuf>,
        #[arg(long, requires = "reference")]
        generated: Option<PathBuf>,
    },
    /// Metrics against decode step count.
    SweepSteps {
        #[arg(long, default_value = "periodic:P=16")]
        prompt: String,
        /// Comma-separated step counts.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            match e {
                CliError::Usage(_) => 2,
                CliError::Runtime(_) => 1,
            }
        }
    }
}

/// Resolved config plus the run directory it names.
pub struct Run {
    pub config: RunConfig,
    pub recipe: Recipe,
    pub dir: PathBuf,
}

impl Run {
    pub fn resolve(cli: &Cli) -> CliResult<Self> {
        let mut config = RunConfig::default();
        if let Some(path) = &cli.config {
            config.apply_file(path)?;
        }
        for pair in &cli.set {
            config.set_pair(pair)?;
        }
        let recipe = config.recipe()?;
        let dir = cli.runs_dir.join(format!("run-{}", config.hash()));
        Ok(Self { config, recipe, dir })
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.join(rel)
    }

    fn existing(&self, given: &Option<PathBuf>, default: &str, what: &str) -> CliResult<PathBuf> {
        let p = given.clone().unwrap_or_else(|| self.path(default));
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::Usage(format!("{what} not found at {}", p.display())))
        }
    }

    fn ctx(&self) -> PromptContext {
        PromptContext {
            token_rate: self.recipe.framing.token_rate(),
            base_dir: self.dir.clone(),
        }
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let run = Run::resolve(cli)?;
    fs::create_dir_all(&run.dir)?;
    fs::write(run.path("config.txt"), run.config.to_text())?;
    log::info!("run directory {}", run.dir.display());
    for line in run.config.to_text().lines() {
        log::info!("config {line}");
    }
    match &cli.command {
        Command::Synth => cmd_synth(&run),
        Command::FitCodec { codec } => cmd_fit_codec(&run, codec),
        Command::Tokenize { codec, input } => cmd_tokenize(&run, codec, input),
        Command::Train { role } => cmd_train(&run, *role),
        Command::Vamp {
            input,
            prompt,
            steps,
            c2f_steps,
            seed,
            coarse,
            c2f,
            codec,
            name,
        } => {
            let models = load_models(&run, coarse, c2f)?;
            let codec = load_codec(&run, codec)?;
            cmd_vamp(&run, &codec, &models, input, prompt, *steps, *c2f_steps, *seed, name)
        }
        Command::Evaluate { reference, generated } => match (reference, generated) {
            (Some(r), Some(g)) => cmd_evaluate_pairs(&run, r, g),
            _ => cmd_evaluate(&run),
        },
        Command::SweepSteps { prompt, steps } => {
            cmd_sweep(&run, prompt, steps.clone().unwrap_or_else(|| SWEEP_STEPS.to_vec()))
        }
    }
}

fn sorted_files(dir: &Path, ext: &str) -> CliResult<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("{} does not exist", dir.display())));
    }
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

const SPLITS: [&str; 3] = ["train", "val", "test"];

fn cmd_synth(run: &Run) -> CliResult<()> {
    let splits = build_corpus(&run.recipe.corpus)?;
    let mut manifest = String::from("id,split,genre,artist,tempo,seed\n");
    for (split, specs) in SPLITS.iter().zip([&splits.train, &splits.val, &splits.test]) {
        let dir = run.path(&format!("corpus/{split}"));
        fs::create_dir_all(&dir)?;
        for (i, spec) in specs.iter().enumerate() {
            let id = format!("{split}-{i:04}");
            let clip = generate_clip(spec)?;
            write_wav(&dir.join(format!("{id}.wav")), &clip.signal)?;
            write_beats(&dir.join(format!("{id}.beats")), &clip.beat_times)?;
            manifest.push_str(&format!(
                "{id},{split},{},{},{},{}\n",
                spec.preset.genre.name(),
                spec.preset.artist,
                spec.tempo,
                spec.seed
            ));
        }
    }
    fs::write(run.path("corpus/manifest.csv"), manifest)?;
    println!(
        "wrote {} clips to {}",
        splits.train.len() + splits.val.len() + splits.test.len(),
        run.path("corpus").display()
    );
    Ok(())
}

fn cmd_fit_codec(run: &Run, out: &Option<PathBuf>) -> CliResult<()> {
    let wavs = sorted_files(&run.path("corpus/train"), "wav")?;
    let mut frames: Vec<FrameVector> = Vec::new();
    for w in wavs.iter().take(run.recipe.codec_clips) {
        frames.extend(run.recipe.framing.frames(&read_wav(w)?)?);
    }
    let codec = crate::tokenizer::fit_rvq(run.recipe.framing, &frames, &run.recipe.codec)?;
    let path = out.clone().unwrap_or_else(|| run.path("codec.vmpc"));
    fs::write(&path, codec.to_bytes())?;
    println!(
        "codec: {} levels x {} entries, {:.1} tokens/s, {:.1} bps -> {}",
        codec.levels(),
        codec.codebook_size(),
        codec.token_rate(),
        codec.bitrate(),
        path.display()
    );
    Ok(())
}

fn load_codec(run: &Run, given: &Option<PathBuf>) -> CliResult<RvqCodec> {
    let path = run.existing(given, "codec.vmpc", "codec file")?;
    Ok(RvqCodec::from_bytes(&fs::read(path)?)?)
}

fn cmd_tokenize(run: &Run, codec: &Option<PathBuf>, inputs: &[PathBuf]) -> CliResult<()> {
    let codec = load_codec(run, codec)?;
    let mut jobs: Vec<(PathBuf, PathBuf)> = Vec::new();
    if inputs.is_empty() {
        for split in SPLITS {
            let out = run.path(&format!("tokens/{split}"));
            for w in sorted_files(&run.path(&format!("corpus/{split}")), "wav")? {
                jobs.push((out.join(format!("{}.vmpt", stem(&w))), w));
            }
        }
    } else {
        for w in inputs {
            if !w.is_file() {
                return Err(CliError::Usage(format!("input {} not found", w.display())));
            }
            jobs.push((run.path(&format!("tokens/extra/{}.vmpt", stem(w))), w.clone()));
        }
    }
    for (out, wav) in &jobs {
        fs::create_dir_all(out.parent().unwrap())?;
        let grid = codec.encode(&read_wav(wav)?)?;
        fs::write(out, grid.to_stream_bytes())?;
    }
    println!("encoded {} files", jobs.len());
    Ok(())
}

fn read_grids(dir: &Path) -> CliResult<Vec<(String, TokenGrid)>> {
    sorted_files(dir, "vmpt")?
        .into_iter()
        .map(|p| Ok((stem(&p), TokenGrid::from_stream_bytes(&fs::read(&p)?)?)))
        .collect()
}

fn cmd_train(run: &Run, role: RoleArg) -> CliResult<()> {
    let corpus: Vec<TokenGrid> = read_grids(&run.path("tokens/train"))?
        .into_iter()
        .map(|(_, g)| g)
        .collect();
    let (model, name) = match role {
        RoleArg::Coarse => (&run.recipe.coarse_model, "coarse"),
        RoleArg::C2f => (&run.recipe.c2f_model, "c2f"),
    };
    let out = train(model, &corpus, &run.recipe.train)?;
    save_checkpoint(&out.params, run.recipe.train.steps as u64, &run.path(&format!("{name}.vmpw")))?;
    write_loss_csv(&out.history, fs::File::create(run.path(&format!("{name}_loss.csv")))?)?;
    println!(
        "{name}: {} steps, final loss {:.4} (uniform {:.4})",
        out.history.len(),
        out.final_loss(),
        (model.vocab as f64).ln()
    );
    Ok(())
}

fn load_models(run: &Run, coarse: &Option<PathBuf>, c2f: &Option<PathBuf>) -> CliResult<ToyModels> {
    let load = |p: PathBuf, role: Role| -> CliResult<Parameters<f32>> {
        let ck = load_checkpoint(&p)?;
        if ck.config().role != role {
            return Err(CliError::Usage(format!("{} holds a {:?} model", p.display(), ck.config().role)));
        }
        Ok(ck.params)
    };
    Ok(ToyModels {
        coarse: load(run.existing(coarse, "coarse.vmpw", "coarse checkpoint")?, Role::Coarse)?,
        c2f: load(run.existing(c2f, "c2f.vmpw", "coarse-to-fine checkpoint")?, Role::CoarseToFine)?,
        coarse_history: Vec::new(),
        c2f_history: Vec::new(),
    })
}

fn sampler_steps(run: &Run, key: &str, flag: Option<usize>) -> CliResult<usize> {
    flag.map_or_else(|| run.config.parse(key), Ok)
}

fn sampler(run: &Run, steps: usize, seed: u64) -> CliResult<SamplerConfig> {
    Ok(SamplerConfig {
        temp0: run.config.parse("sampler.temp0")?,
        ..SamplerConfig::new(steps, seed)
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_vamp(
    run: &Run,
    codec: &RvqCodec,
    models: &ToyModels,
    input: &Path,
    prompt: &str,
    steps: Option<usize>,
    c2f_steps: Option<usize>,
    seed: Option<u64>,
    name: &str,
) -> CliResult<()> {
    if !input.is_file() {
        return Err(CliError::Usage(format!("input {} not found", input.display())));
    }
    let grid = if input.extension().is_some_and(|e| e == "wav") {
        codec.encode(&read_wav(input)?)?
    } else {
        TokenGrid::from_stream_bytes(&fs::read(input)?)?
    };
    let spec = PromptSpec::parse(prompt, &run.ctx()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mask = spec.mask(grid.timesteps(), grid.levels())?;
    let seed = seed.map_or_else(|| run.config.parse("seed"), Ok)?;
    let req = GenerationRequest {
        input: grid,
        prompt: mask.clone(),
        coarse: sampler(run, sampler_steps(run, "sampler.coarse_steps", steps)?, seed)?,
        c2f: sampler(run, sampler_steps(run, "sampler.c2f_steps", c2f_steps)?, seed ^ 0xF1E)?,
    };
    let out = generate(&models.coarse, &models.c2f, &req)?;
    let dir = run.path("vamp");
    fs::create_dir_all(&dir)?;
    fs::write(dir.join(format!("{name}.vmpt")), out.output.to_stream_bytes())?;
    fs::write(dir.join(format!("{name}.vmpm")), mask.to_stream_bytes())?;
    write_wav(&dir.join(format!("{name}.wav")), &codec.decode(&out.output)?)?;
    println!("prompt {spec}");
    println!("effective bitrate {:.2} bps (codec {:.2} bps)", effective_bitrate(&mask, codec.bitrate())?, codec.bitrate());
    println!("forward passes {}", out.forward_passes());
    println!("wrote {}", dir.join(format!("{name}.vmpt")).display());
    Ok(())
}

fn test_clips(run: &Run, codec: &RvqCodec, mel: &MelConfig) -> CliResult<Vec<EvalClip>> {
    let named = read_grids(&run.path("tokens/test"))?;
    let grids: Vec<TokenGrid> = named.iter().map(|(_, g)| g.clone()).collect();
    let mut clips = eval_clips(codec, &grids, mel)?;
    for (c, (id, _)) in clips.iter_mut().zip(named) {
        c.id = id;
    }
    Ok(clips)
}

fn write_reports(run: &Run, dir: &str, reports: &[ConditionReport]) -> CliResult<()> {
    let dir = run.path(dir);
    fs::create_dir_all(&dir)?;
    let rows: Vec<MetricRow> = reports.iter().flat_map(|r| r.rows.clone()).collect();
    write_metrics_csv(&rows, fs::File::create(dir.join("metrics.csv"))?)?;
    let summary: Vec<SummaryRow> = reports
        .iter()
        .map(|r| SummaryRow {
            group: r.group.clone(),
            clips: r.rows.len(),
            mean_mel_error: r.mean_mel_error,
            fad: r.fad,
        })
        .collect();
    write_summary_csv(&summary, fs::File::create(dir.join("summary.csv"))?)?;
    for s in &summary {
        println!("{:<48} mel {:>12.2}  fad {:>10.4}", s.group, s.mean_mel_error, s.fad);
    }
    println!("wrote {}", dir.display());
    Ok(())
}

fn cmd_evaluate(run: &Run) -> CliResult<()> {
    let codec = load_codec(run, &None)?;
    let models = load_models(run, &None, &None)?;
    let mel = MelConfig::default();
    let clips = test_clips(run, &codec, &mel)?;
    let seed: u64 = run.config.parse("seed")?;
    let steps = (
        run.config.parse("sampler.coarse_steps")?,
        run.config.parse("sampler.c2f_steps")?,
    );
    let mut reports = Vec::new();
    for prompt in run.config.prompts(&run.ctx())? {
        reports.push(run_condition(&codec, &models, &clips, &prompt, steps, seed, &mel)?);
    }
    for r in run.config.noise_ratios()? {
        reports.push(run_noisy(&codec, &clips, r, seed, &mel)?);
    }
    write_reports(run, "eval", &reports)
}

fn cmd_evaluate_pairs(run: &Run, reference: &Path, generated: &Path) -> CliResult<()> {
    let mel = MelConfig::default();
    let mut rows = Vec::new();
    let (mut refs, mut gens) = (Vec::new(), Vec::new());
    for r in sorted_files(reference, "wav")? {
        let g = generated.join(r.file_name().unwrap());
        if !g.is_file() {
            return Err(CliError::Usage(format!("no generated file for {}", r.display())));
        }
        let (a, b) = (read_wav(&r)?, read_wav(&g)?);
        refs.push(embed(&a, mel.eps)?);
        gens.push(embed(&b, mel.eps)?);
        rows.push(MetricRow {
            clip_id: stem(&r),
            prompt: "pairs".into(),
            steps: 0,
            bitrate_bps: 0.0,
            mel_error: multiscale_mel_error(&a, &b, &mel)?,
            group: "pairs".into(),
        });
    }
    if rows.is_empty() {
        return Err(CliError::Usage(format!("no WAV files in {}", reference.display())));
    }
    let report = ConditionReport {
        group: "pairs".into(),
        fad: fad(&refs, &gens)?,
        mean_mel_error: rows.iter().map(|r| r.mel_error).sum::<f64>() / rows.len() as f64,
        mean_kept_fraction: f64::NAN,
        forward_passes: 0,
        rows,
    };
    write_reports(run, "eval-pairs", &[report])
}

fn cmd_sweep(run: &Run, prompt: &str, steps: Vec<usize>) -> CliResult<()> {
    if steps.is_empty() || steps.contains(&0) {
        return Err(CliError::Usage("step counts must be positive".into()));
    }
    let codec = load_codec(run, &None)?;
    let models = load_models(run, &None, &None)?;
    let spec = PromptSpec::parse(prompt, &run.ctx()).map_err(|e| CliError::Usage(e.to_string()))?;
    let mel = MelConfig::default();
    let clips = test_clips(run, &codec, &mel)?;
    let seed: u64 = run.config.parse("seed")?;
    let mut csv = String::from("steps,forward_passes,bitrate_bps,mean_mel_error,fad\n");
    let mut reports = Vec::new();
    for &s in &steps {
        let r = run_condition(&codec, &models, &clips, &spec, (s, s), seed, &mel)?;
        let bitrate = r.rows.iter().map(|row| row.bitrate_bps).sum::<f64>() / r.rows.len() as f64;
        csv.push_str(&format!(
            "{s},{},{bitrate},{},{}\n",
            r.forward_passes / clips.len(),
            r.mean_mel_error,
            r.fad
        ));
        reports.push(r);
    }
    fs::write(run.path("sweep_steps.csv"), csv)?;
    write_reports(run, "sweep", &reports)?;
    println!("wrote {}", run.path("sweep_steps.csv").display());
    Ok(())
}

