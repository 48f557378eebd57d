//! Command-line front end: argument definitions, config-file merging and the
//! six pipeline commands.
//!
//! All randomness in a command derives from its `--seed`: training seeds the
//! model config directly; `generate` draws from `ChaCha8(seed)` (stream 0 for
//! sampling, stream 1 for the cgan z source).

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cgan::{CGanConfig, CGanModel, DictionaryZ, GaussianZ, ZSource, ZSourceKind};
use crate::clstm::{self, CLstmConfig, CLstmModel, GenerationMode};
use crate::corpus::synth::{synth_corpus, SynthConfig};
use crate::corpus::{load_corpus, save_corpus, AffectClass, AffectVector, Corpus, DyadSequence};
use crate::dictionary::{build_dictionary, AffectShapeDictionary, DictionaryConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalReport, MethodReport};
use crate::pdm::{build_pdm, PdmModel, ShapeParams};
use crate::sketch::{self, Topology};
use crate::standardize::Standardizer;
use crate::textio::{fmt_f64, push_row, Records};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const REPORT_KEYS: &str = "Report keys (key=value file): mse_convention, methods, \
method.<name>.{history_frames,frames,mse,secs_per_frame}, \
smoothness.{frames,mean_disp,max_disp,pixel_mean,pixel_max}, \
cluster.{frames,ari,purity,subcluster_counts,min_subcluster_size,counts_in_range}, \
ordering.overlap_better, config.<key>. The JSON file holds the same fields.";

#[derive(Debug, Parser)]
#[command(name = "dyadface", version, about = "Affect-conditioned facial behavior generation")]
#[command(after_help = "A `--config FILE` of key=value lines (flag names without dashes) may \
precede the subcommand; explicit flags take precedence.\nExit codes: 0 ok, 1 usage, 2 data, 3 numerical.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Fit a point distribution model to the corpus's 3D training shapes.
    BuildPdm(BuildPdmArgs),
    /// Build the affect-shape dictionary.
    BuildDict(BuildDictArgs),
    /// Train a generator.
    #[command(subcommand)]
    Train(TrainCommand),
    /// Generate a shape-parameter sequence (and optionally render it).
    #[command(subcommand)]
    Generate(GenerateCommand),
    /// Score a generated sequence and the models against the corpus.
    #[command(after_help = REPORT_KEYS)]
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub n_sequences: usize,
    #[arg(long, default_value_t = 100)]
    pub seq_len: usize,
    /// PDM rank.
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 3)]
    pub n_intensity_levels: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BuildPdmArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
}

#[derive(Debug, Args)]
pub struct BuildDictArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Optional PDM; when given its rank must match the corpus.
    #[arg(long)]
    pub pdm: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub min_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub affect_window: usize,
    #[arg(long, default_value_t = 10)]
    pub n_init: usize,
    #[arg(long, default_value_t = 9)]
    pub max_subclusters: usize,
    #[arg(long, default_value_t = 3)]
    pub min_subclusters: usize,
}

#[derive(Debug, Subcommand)]
pub enum TrainCommand {
    /// Conditional LSTM.
    Lstm(TrainLstmArgs),
    /// Conditional GAN over shape vectors.
    Cgan(TrainCganArgs),
}

#[derive(Debug, Args)]
pub struct TrainLstmArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 5.0)]
    pub grad_clip: f64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Condition on the trailing-window mean affect instead of per-frame affect.
    #[arg(long)]
    pub aggregate_affect: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainCganArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 64)]
    pub hidden_units: usize,
    #[arg(long, default_value_t = 2)]
    pub hidden_layers: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 2e-4)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub beta1: f64,
    #[arg(long, default_value_t = 0.998)]
    pub ema_decay: f64,
    #[arg(long, default_value_t = 10)]
    pub affect_window: usize,
    /// gaussian | dictionary
    #[arg(long, default_value_t = ZSourceKind::Gaussian)]
    pub z_source: ZSourceKind,
    /// Dictionary file, required for `--z-source dictionary`.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum GenerateCommand {
    /// Sample the affect-shape dictionary.
    Dict(GenDictArgs),
    /// Run the conditional LSTM from a corpus history.
    Lstm(GenLstmArgs),
    /// Sample the conditional GAN frame by frame.
    Cgan(GenCganArgs),
}

#[derive(Debug, Args)]
pub struct GenCommon {
    /// Corpus supplying the affect stream (and LSTM history).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Index of the driving sequence.
    #[arg(long, default_value_t = 0)]
    pub sequence: usize,
    /// Constant affect class instead of the sequence's affect track.
    #[arg(long)]
    pub affect: Option<AffectClass>,
    #[arg(long, default_value_t = 400)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output sequence file.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for rendered `frame_%06d.pgm` files (needs `--pdm`).
    #[arg(long)]
    pub render: Option<PathBuf>,
    /// SVG output of all frames (needs `--pdm`).
    #[arg(long)]
    pub svg: Option<PathBuf>,
    #[arg(long)]
    pub pdm: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    pub width: usize,
    #[arg(long, default_value_t = 256)]
    pub height: usize,
}

#[derive(Debug, Args)]
pub struct GenDictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    #[command(flatten)]
    pub common: GenCommon,
}

#[derive(Debug, Args)]
pub struct GenLstmArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// overlap | nonoverlap
    #[arg(long, default_value_t = GenerationMode::Overlap)]
    pub mode: GenerationMode,
    #[command(flatten)]
    pub common: GenCommon,
}

#[derive(Debug, Args)]
pub struct GenCganArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// gaussian | dictionary
    #[arg(long, default_value_t = ZSourceKind::Gaussian)]
    pub z_source: ZSourceKind,
    #[arg(long)]
    pub dict: Option<PathBuf>,
    #[command(flatten)]
    pub common: GenCommon,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub pdm: PathBuf,
    /// Sequence file written by `generate`.
    #[arg(long)]
    pub generated: PathBuf,
    /// Dictionary to score for cluster recovery and sampling latency.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// LSTM checkpoint to run the two-mode comparison on.
    #[arg(long)]
    pub lstm: Option<PathBuf>,
    /// Frames generated after each history in the mode comparison (0 = window).
    #[arg(long, default_value_t = 0)]
    pub horizon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// key=value report path.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// A generated shape-parameter sequence with the facts needed to score it.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedSequence {
    pub method: String,
    /// Corpus sequence the affect stream came from, and the frame index the
    /// first generated frame corresponds to.
    pub sequence: usize,
    pub start: usize,
    pub history_frames: usize,
    pub secs_per_frame: f64,
    pub dim: usize,
    pub frames: Vec<ShapeParams>,
}

impl GeneratedSequence {
    pub fn to_text(&self) -> String {
        let mut out = String::from("GEN v1\n");
        out.push_str(&format!("method {}\n", self.method));
        out.push_str(&format!("sequence {}\n", self.sequence));
        out.push_str(&format!("start {}\n", self.start));
        out.push_str(&format!("history_frames {}\n", self.history_frames));
        out.push_str(&format!("secs_per_frame {}\n", fmt_f64(self.secs_per_frame)));
        out.push_str(&format!("dim {}\n", self.dim));
        out.push_str(&format!("frames {}\n", self.frames.len()));
        for f in &self.frames {
            push_row(&mut out, &f.flatten());
        }
        out
    }

    pub fn from_text(name: &str, text: &str) -> Result<Self> {
        let mut rec = Records::new(name, text);
        rec.expect_header("GEN v1")?;
        let (_, method) = rec.keyed("method")?;
        let method = method.to_string();
        let sequence = rec.keyed_value("sequence")?;
        let start = rec.keyed_value("start")?;
        let history_frames = rec.keyed_value("history_frames")?;
        let secs_per_frame = rec.keyed_value("secs_per_frame")?;
        let dim: usize = rec.keyed_value("dim")?;
        let n: usize = rec.keyed_value("frames")?;
        let frames = (0..n)
            .map(|_| ShapeParams::from_flat(&rec.floats(dim)?))
            .collect::<Result<Vec<_>>>()?;
        if let Some((line, _)) = rec.try_next() {
            return Err(rec.error(line, "trailing data after frames"));
        }
        Ok(Self {
            method,
            sequence,
            start,
            history_frames,
            secs_per_frame,
            dim,
            frames,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_text(&path.display().to_string(), &text)
    }
}

/// Maps an error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) | Error::NonFinite(_) => EXIT_NUMERICAL,
        Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

/// Splices `--config FILE` entries into `args` as flags, unless the same
/// flag is already given. Boolean entries become bare flags when true.
pub fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let Some(pos) = args.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(args);
    };
    let mut args = args;
    let path = match args[pos].strip_prefix("--config=") {
        Some(p) => {
            let p = p.to_string();
            args.remove(pos);
            p
        }
        None => {
            if pos + 1 >= args.len() {
                return Err(Error::InvalidConfig("--config needs a file".into()));
            }
            let p = args.remove(pos + 1);
            args.remove(pos);
            p
        }
    };
    let text = std::fs::read_to_string(&path)?;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            source_name: path.clone(),
            line: i + 1,
            msg: format!("expected key=value, found `{line}`"),
        })?;
        let flag = format!("--{}", k.trim().replace('_', "-"));
        let given = args.iter().any(|a| a == &flag || a.starts_with(&format!("{flag}=")));
        if given {
            continue;
        }
        match v.trim() {
            "true" => args.push(flag),
            "false" => {}
            v => args.push(format!("{flag}={v}")),
        }
    }
    Ok(args)
}

/// Parses `args` (including the program name) and runs the command. Returns
/// the exit code; diagnostics go to stderr.
pub fn main_with_args(args: Vec<String>) -> i32 {
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e).max(EXIT_USAGE);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn echo(cmd: &str, resolved: &str) {
    println!("{cmd}: {resolved}");
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => cmd_synth(&a),
        Command::BuildPdm(a) => cmd_build_pdm(&a),
        Command::BuildDict(a) => cmd_build_dict(&a),
        Command::Train(TrainCommand::Lstm(a)) => cmd_train_lstm(&a),
        Command::Train(TrainCommand::Cgan(a)) => cmd_train_cgan(&a),
        Command::Generate(g) => cmd_generate(g),
        Command::Eval(a) => cmd_eval(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        n_sequences: a.n_sequences,
        seq_len: a.seq_len,
        m: a.m,
        n_intensity_levels: a.n_intensity_levels,
        seed: a.seed,
    };
    echo("synth", &format!("{} out={}", cfg.echo(), a.out.display()));
    let (_, corpus) = synth_corpus(&cfg)?;
    save_corpus(&corpus, &a.out)
}

pub fn cmd_build_pdm(a: &BuildPdmArgs) -> Result<()> {
    echo("build-pdm", &format!("corpus={} m={} out={}", a.corpus.display(), a.m, a.out.display()));
    let corpus = load_corpus(&a.corpus)?;
    let shapes = corpus
        .pdm_shapes
        .as_ref()
        .ok_or_else(|| Error::Degenerate("corpus carries no 3D training shapes".into()))?;
    let pdm = build_pdm(shapes, a.m)?;
    pdm.save(&a.out)
}

fn check_pdm_dim(pdm: &PdmModel, corpus: &Corpus) -> Result<()> {
    let d = 6 + pdm.rank();
    if d != corpus.dim() {
        return Err(Error::DimensionMismatch {
            what: "PDM parameter dimension vs corpus",
            expected: corpus.dim(),
            got: d,
        });
    }
    Ok(())
}

pub fn cmd_build_dict(a: &BuildDictArgs) -> Result<()> {
    let cfg = DictionaryConfig {
        min_size: a.min_size,
        seed: a.seed,
        affect_window: a.affect_window,
        n_init: a.n_init,
        max_subclusters: a.max_subclusters,
        min_subclusters: a.min_subclusters,
    };
    cfg.validate()?;
    echo("build-dict", &format!("{} corpus={} out={}", cfg.echo(), a.corpus.display(), a.out.display()));
    let corpus = load_corpus(&a.corpus)?;
    if let Some(p) = &a.pdm {
        check_pdm_dim(&PdmModel::load(p)?, &corpus)?;
    }
    build_dictionary(&corpus, &cfg)?.save(&a.out)
}

pub fn cmd_train_lstm(a: &TrainLstmArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let cfg = CLstmConfig {
        hidden_dim: a.hidden_dim,
        output_dim: corpus.dim(),
        window: a.window,
        learning_rate: a.learning_rate,
        grad_clip: a.grad_clip,
        epochs: a.epochs,
        seed: a.seed,
        batch_size: a.batch_size,
        aggregate_affect: a.aggregate_affect,
    };
    cfg.validate()?;
    echo("train lstm", &format!("{} out={}", cfg.echo(), a.out.display()));
    let (model, report) = clstm::train(&corpus, &cfg)?;
    for (e, l) in report.epoch_losses.iter().enumerate() {
        println!("epoch {} loss {l:.6e}", e + 1);
    }
    model.save(&a.out)
}

pub fn cmd_train_cgan(a: &TrainCganArgs) -> Result<()> {
    let corpus = load_corpus(&a.corpus)?;
    let d = corpus.dim();
    let cfg = CGanConfig {
        hidden_units: a.hidden_units,
        hidden_layers: a.hidden_layers,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        beta1: a.beta1,
        steps: a.steps,
        seed: a.seed,
        affect_window: a.affect_window,
        z_source: a.z_source,
        ema_decay: a.ema_decay,
        ..CGanConfig::for_dim(d)
    };
    cfg.validate()?;
    echo("train cgan", &format!("{} out={}", cfg.echo(), a.out.display()));
    let dict = load_dict_for(a.z_source, a.dict.as_deref())?;
    let mut zs = z_source(a.z_source, d, dict.as_ref());
    let mut model = CGanModel::new(cfg, Standardizer::fit(&corpus.flat_shapes())?)?;
    let report = model.train_corpus(&corpus, zs.as_mut())?;
    if let (Some(dl), Some(gl)) = (report.d_losses.last(), report.g_losses.last()) {
        println!("final d_loss {dl:.6e} g_loss {gl:.6e}");
    }
    model.save(&a.out)
}

fn load_dict_for(kind: ZSourceKind, path: Option<&Path>) -> Result<Option<AffectShapeDictionary>> {
    match (kind, path) {
        (ZSourceKind::Gaussian, _) => Ok(None),
        (ZSourceKind::Dictionary, Some(p)) => Ok(Some(AffectShapeDictionary::load(p)?)),
        (ZSourceKind::Dictionary, None) => Err(Error::InvalidConfig("--z-source dictionary needs --dict".into())),
    }
}

fn z_source<'a>(kind: ZSourceKind, d: usize, dict: Option<&'a AffectShapeDictionary>) -> Box<dyn ZSource + 'a> {
    match (kind, dict) {
        (ZSourceKind::Dictionary, Some(dict)) => Box::new(DictionaryZ { dict }),
        _ => Box::new(GaussianZ { dim: d }),
    }
}

/// Affect stream of `steps` vectors: a constant class, or the sequence's
/// affect track from `start`, repeated from its beginning when exhausted.
fn affect_stream(seq: &DyadSequence, start: usize, steps: usize, constant: Option<AffectClass>) -> Vec<AffectVector> {
    match constant {
        Some(c) => vec![AffectVector::one_hot(c); steps],
        None => {
            let track = seq.affects();
            (0..steps).map(|k| track[(start + k) % track.len()]).collect()
        }
    }
}

pub fn cmd_generate(g: GenerateCommand) -> Result<()> {
    let (common, method) = match &g {
        GenerateCommand::Dict(a) => (&a.common, "dict"),
        GenerateCommand::Lstm(a) => (&a.common, "lstm"),
        GenerateCommand::Cgan(a) => (&a.common, "cgan"),
    };
    let corpus = load_corpus(&common.corpus)?;
    let seq = corpus.sequences.get(common.sequence).ok_or_else(|| {
        Error::InvalidConfig(format!(
            "sequence {} out of range ({} sequences)",
            common.sequence,
            corpus.sequences.len()
        ))
    })?;
    let pdm = common.pdm.as_deref().map(PdmModel::load).transpose()?;
    if (common.render.is_some() || common.svg.is_some()) && pdm.is_none() {
        return Err(Error::InvalidConfig("rendering needs --pdm".into()));
    }
    if let Some(p) = &pdm {
        check_pdm_dim(p, &corpus)?;
    }
    echo(
        &format!("generate {method}"),
        &format!(
            "corpus={} sequence={} affect={} steps={} seed={} out={}",
            common.corpus.display(),
            common.sequence,
            common.affect.map_or("track".to_string(), |c| c.to_string()),
            common.steps,
            common.seed,
            common.out.display()
        ),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(common.seed);
    let t0 = Instant::now();
    let (start, history_frames, frames) = match &g {
        GenerateCommand::Dict(a) => {
            let dict = AffectShapeDictionary::load(&a.model)?;
            let affects = affect_stream(seq, 0, common.steps, common.affect);
            let z = dict.sample_sequence(&affects, &mut rng, a.top_k)?;
            let frames = z.iter().map(|v| ShapeParams::from_flat(v)).collect::<Result<Vec<_>>>()?;
            (0, 0, frames)
        }
        GenerateCommand::Lstm(a) => {
            let model = CLstmModel::load(&a.model)?;
            let n = model.config().window;
            let history = clstm::history_of(seq, n)?;
            let affects = affect_stream(seq, n, common.steps, common.affect);
            (n, n, model.generate(history, &affects, common.steps, a.mode)?)
        }
        GenerateCommand::Cgan(a) => {
            let model = CGanModel::load(&a.model)?;
            let dict = load_dict_for(a.z_source, a.dict.as_deref())?;
            let mut zs = z_source(a.z_source, model.config().z_dim, dict.as_ref());
            let mut zrng = ChaCha8Rng::seed_from_u64(common.seed);
            zrng.set_stream(1);
            let affects = affect_stream(seq, 0, common.steps, common.affect);
            let w = model.config().affect_window.max(1);
            let mut frames = Vec::with_capacity(common.steps);
            for t in 0..affects.len() {
                let cond = crate::corpus::aggregate_affect(&affects[(t + 1).saturating_sub(w)..=t])?;
                let z = zs.sample(&cond, &mut zrng)?;
                let y = model.generate(&cond, Some(&[z]), 1, zs.as_mut(), &mut rng)?;
                frames.push(ShapeParams::from_flat(&y[0])?);
            }
            (0, 0, frames)
        }
    };
    let secs = t0.elapsed().as_secs_f64();
    let out = GeneratedSequence {
        method: method.into(),
        sequence: common.sequence,
        start,
        history_frames,
        secs_per_frame: if frames.is_empty() { 0.0 } else { secs / frames.len() as f64 },
        dim: corpus.dim(),
        frames,
    };
    if let Some(pdm) = &pdm {
        let topo = Topology::ibug68();
        if let Some(dir) = &common.render {
            let rasters = sketch::render_sequence(&out.frames, pdm, &topo, common.width, common.height)?;
            sketch::export_pgm(&rasters, dir)?;
        }
        if let Some(path) = &common.svg {
            let lms = out.frames.iter().map(|p| pdm.project(p)).collect::<Result<Vec<_>>>()?;
            sketch::export_svg(&lms, &topo, common.width, common.height, path)?;
        }
    }
    out.save(&common.out)?;
    println!("wrote {} frames", out.frames.len());
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    echo(
        "eval",
        &format!(
            "corpus={} pdm={} generated={} horizon={} seed={} out={}",
            a.corpus.display(),
            a.pdm.display(),
            a.generated.display(),
            a.horizon,
            a.seed,
            a.out.display()
        ),
    );
    let corpus = load_corpus(&a.corpus)?;
    let pdm = PdmModel::load(&a.pdm)?;
    check_pdm_dim(&pdm, &corpus)?;
    let gen = GeneratedSequence::load(&a.generated)?;
    if gen.dim != corpus.dim() {
        return Err(Error::DimensionMismatch {
            what: "generated sequence dimension",
            expected: corpus.dim(),
            got: gen.dim,
        });
    }
    let std = Standardizer::fit(&corpus.flat_shapes())?;
    let mut report = EvalReport::default();

    // Generated vs. the true continuation of its driving sequence, over the
    // frames both have.
    let seq = corpus
        .sequences
        .get(gen.sequence)
        .ok_or_else(|| Error::InvalidConfig(format!("generated sequence index {} not in corpus", gen.sequence)))?;
    let truth: Vec<Vec<f64>> = seq.frames.iter().skip(gen.start).map(|f| std.transform(&f.agent_shape.flatten())).collect();
    let k = truth.len().min(gen.frames.len());
    let mse = if k > 0 {
        let g: Vec<Vec<f64>> = gen.frames[..k].iter().map(|p| std.transform(&p.flatten())).collect();
        Some(eval::mse(&g, &truth[..k])?)
    } else {
        None
    };
    report.methods.push(MethodReport {
        name: format!("generated-{}", gen.method),
        history_frames: gen.history_frames,
        frames: gen.frames.len(),
        mse,
        secs_per_frame: gen.secs_per_frame,
    });
    if gen.frames.len() >= 2 {
        report.smoothness = Some(eval::smoothness(&gen.frames, &pdm, &std)?);
    }
    report.config.push(("generated.method".into(), gen.method.clone()));
    report.config.push(("generated.mse_frames".into(), k.to_string()));

    if let Some(p) = &a.dict {
        let dict = AffectShapeDictionary::load(p)?;
        report.cluster = Some(eval::cluster_recovery(&dict, &corpus)?);
        // Sampling latency with no history, under the first sequence's affect.
        let affects = affect_stream(seq, 0, 400, None);
        let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
        let t0 = Instant::now();
        let z = dict.sample_sequence(&affects, &mut rng, 5)?;
        let secs = t0.elapsed().as_secs_f64().max(f64::MIN_POSITIVE);
        report.methods.push(MethodReport {
            name: "dict".into(),
            history_frames: 0,
            frames: z.len(),
            mse: None,
            secs_per_frame: secs / z.len() as f64,
        });
        report.config.push(("dict".into(), dict.config().echo()));
    }
    if let Some(p) = &a.lstm {
        let model = CLstmModel::load(p)?;
        let horizon = if a.horizon == 0 { model.config().window } else { a.horizon };
        report.merge(eval::compare_modes(&model, &corpus, horizon)?);
        report.config.push(("lstm".into(), model.config().echo()));
    }
    if !report.is_finite() {
        return Err(Error::NonFinite("evaluation report"));
    }
    std::fs::write(&a.out, report.to_kv())?;
    if let Some(j) = &a.json {
        std::fs::write(j, report.to_json())?;
    }
    print!("{}", report.to_kv());
    Ok(())
}
