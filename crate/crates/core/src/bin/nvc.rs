use std::path::{Path, PathBuf};
use std::process::ExitCode;

use candle_core::Tensor;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use nvc::bd::RdCurve;
use nvc::bitstream::NvcBitstream;
use nvc::eval::{BdSummary, EvalCodec, Quality, RdTable};
use nvc::flowviz::dump_flows;
use nvc::frame::{read_png_dir, read_yuv420p, write_png_dir, write_yuv420p};
use nvc::model::{ModelConfig, NvcModel};
use nvc::pipeline::{decode_sequence, encode_sequence, rd_point, CodecConfig};
use nvc::train::data::{FolderSource, FrameSource, MixedSource, MotionKind, SyntheticSource};
use nvc::train::{Stage, StageSession, TrainConfig};
use nvc::{NvcError, Result};

#[derive(Parser)]
#[command(name = "nvc", version, about = "Neural video codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a PNG folder or raw YUV file into an .nvc stream.
    Encode(EncodeArgs),
    /// Decode an .nvc stream to PNG frames (or a .yuv file).
    Decode(DecodeArgs),
    /// Measure rate and quality of coded streams.
    Eval(EvalArgs),
    /// BD-rate and BD-quality of one RD curve against another.
    Bdrate(BdrateArgs),
    /// Run one training stage.
    Train(TrainArgs),
}

#[derive(Args)]
struct InputArgs {
    /// Frame size for raw YUV input, e.g. 416x240.
    #[arg(long, value_parser = parse_size)]
    size: Option<(usize, usize)>,
    /// Raw input pixel format.
    #[arg(long, value_enum)]
    pixfmt: Option<PixFmt>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PixFmt {
    Yuv420p,
}

#[derive(Args)]
struct EncodeArgs {
    input: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model checkpoint; overrides the config's `model`.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    intra_only: bool,
    #[arg(long)]
    gop: Option<usize>,
    #[command(flatten)]
    input_fmt: InputArgs,
    /// Write decoded flows (.flo and color-wheel .png) for each P-frame.
    #[arg(long)]
    dump_flows: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    input: PathBuf,
    /// Output folder for PNG frames, or a file ending in .yuv.
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    dump_flows: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Source frames and the stream coded from them.
    #[arg(long, num_args = 2, value_names = ["SRC", "NVC"])]
    pair: Option<Vec<PathBuf>>,
    /// Checkpoints, one per operating point (table mode).
    #[arg(long, num_args = 1..)]
    models: Vec<PathBuf>,
    /// Source sequences (table mode).
    #[arg(long, num_args = 1..)]
    clips: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "nvc")]
    codec: CodecArg,
    #[arg(long, default_value_t = 10)]
    gop: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[command(flatten)]
    input_fmt: InputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum CodecArg {
    Nvc,
    IntraOnly,
    MotionFree,
}

#[derive(Args)]
struct BdrateArgs {
    anchor: PathBuf,
    test: PathBuf,
    #[arg(long, value_enum, default_value = "psnr")]
    metric: MetricArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Psnr,
    MsSsim,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    stage: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting checkpoint; a fresh model is built when absent.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
    /// Continue an interrupted run of the same stage from `--output`.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    lambda_index: Option<usize>,
    #[arg(long)]
    steps: Option<u64>,
    /// Architecture for a fresh model.
    #[arg(long, value_enum, default_value = "toy")]
    arch: Arch,
    /// PNG sequence folders mixed with synthetic clips.
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Synthetic motion kinds.
    #[arg(long, value_delimiter = ',', default_value = "translation,rotation,zoom,occlusion")]
    motion: Vec<String>,
    #[arg(long, default_value_t = 100)]
    checkpoint_every: u64,
    /// JSON-lines metrics file (stdout when absent).
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Toy,
    Full,
}

fn parse_size(s: &str) -> std::result::Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WxH")?;
    let w = w.parse().map_err(|_| "bad width")?;
    let h = h.parse().map_err(|_| "bad height")?;
    Ok((w, h))
}

fn read_frames(path: &Path, fmt: &InputArgs) -> Result<Vec<Tensor>> {
    let frames = match (fmt.pixfmt, fmt.size) {
        (Some(PixFmt::Yuv420p), Some((w, h))) => read_yuv420p(path, w, h)?,
        (Some(_), None) => return Err(NvcError::Config("--pixfmt needs --size WxH".into())),
        (None, _) if path.is_dir() => read_png_dir(path)?,
        (None, _) => return Err(NvcError::Config(format!("{} is not a PNG folder; pass --pixfmt/--size for raw input", path.display()))),
    };
    Ok(frames.into_iter().map(|f| f.pixels).collect())
}

fn codec_config(path: Option<&Path>) -> Result<CodecConfig> {
    match path {
        Some(p) => CodecConfig::from_toml(&std::fs::read_to_string(p)?),
        None => Ok(CodecConfig::default()),
    }
}

fn load_model(cli: Option<&PathBuf>, cfg: &CodecConfig) -> Result<NvcModel> {
    let path = cli
        .or(cfg.model.as_ref())
        .ok_or_else(|| NvcError::Config("no model checkpoint: pass --model or set `model` in the config".into()))?;
    NvcModel::load(path)
}

fn encode(a: EncodeArgs) -> Result<()> {
    let mut cfg = codec_config(a.config.as_deref())?;
    cfg.intra_only |= a.intra_only;
    if let Some(g) = a.gop {
        cfg.gop_size = g;
    }
    let model = load_model(a.model.as_ref(), &cfg)?;
    let frames = read_frames(&a.input, &a.input_fmt)?;
    let enc = encode_sequence(&model, &frames, &cfg)?;
    let bytes = enc.bitstream.to_bytes()?;
    std::fs::write(&a.output, &bytes)?;
    if let Some(dir) = &a.dump_flows {
        for (i, f) in enc.flows.iter().enumerate() {
            if let Some(f) = f {
                dump_flows(dir, i, f)?;
            }
        }
    }
    println!(
        "{} frames, {} bytes, {:.4} bpp",
        frames.len(),
        bytes.len(),
        enc.bitstream.bits_per_pixel()
    );
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let cfg = codec_config(a.config.as_deref())?;
    let model = load_model(a.model.as_ref(), &cfg)?;
    let stream = NvcBitstream::from_bytes(&std::fs::read(&a.input)?)?;
    let dec = decode_sequence(&model, &stream)?;
    if a.output.extension().is_some_and(|e| e == "yuv") {
        write_yuv420p(&a.output, &dec.frames)?;
    } else {
        write_png_dir(&a.output, &dec.frames)?;
    }
    if let Some(dir) = &a.dump_flows {
        for (i, f) in dec.flows.iter().enumerate() {
            if let Some(f) = f {
                dump_flows(dir, i, f)?;
            }
        }
    }
    println!("decoded {} frames", dec.frames.len());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    if let Some(pair) = &a.pair {
        let cfg = codec_config(a.config.as_deref())?;
        let model = load_model(a.model.as_ref(), &cfg)?;
        let frames = read_frames(&pair[0], &a.input_fmt)?;
        let stream = NvcBitstream::from_bytes(&std::fs::read(&pair[1])?)?;
        let dec = decode_sequence(&model, &stream)?;
        let p = rd_point(&frames, &stream, &dec.frames)?;
        println!("{}", serde_json::to_string_pretty(&p)?);
        return Ok(());
    }
    if a.models.is_empty() || a.clips.is_empty() {
        return Err(NvcError::Config("eval needs --pair SRC NVC, or --models and --clips".into()));
    }
    let models = a.models.iter().map(|p| NvcModel::load(p)).collect::<Result<Vec<_>>>()?;
    let labelled: Vec<(String, &NvcModel)> = a
        .models
        .iter()
        .zip(&models)
        .map(|(p, m)| (p.file_stem().and_then(|s| s.to_str()).unwrap_or("model").to_string(), m))
        .collect();
    let clips = a
        .clips
        .iter()
        .map(|p| Ok((p.display().to_string(), read_frames(p, &a.input_fmt)?)))
        .collect::<Result<Vec<_>>>()?;
    let codec = match a.codec {
        CodecArg::Nvc => EvalCodec::Nvc,
        CodecArg::IntraOnly => EvalCodec::IntraOnly,
        CodecArg::MotionFree => EvalCodec::MotionFree,
    };
    let table = RdTable::evaluate(&labelled, &clips, codec, a.gop)?;
    if let Some(p) = &a.csv {
        table.write_csv(p)?;
    }
    if let Some(p) = &a.json {
        table.write_json(p)?;
    }
    for r in &table.rows {
        println!("{:12} {:24} {:8.4} bpp {:7.3} dB {:.5}", r.label, r.sequence, r.bpp, r.psnr, r.ms_ssim);
    }
    Ok(())
}

/// Accepts RD tables written by `nvc eval` or plain `bpp,quality` rows.
fn load_curve(path: &Path, quality: Quality) -> Result<RdCurve> {
    if let Ok(table) = RdTable::read_csv(path) {
        if let Some(codec) = table.rows.first().map(|r| r.codec.clone()) {
            let mut c = table.curve(&codec, quality)?;
            c.tag = path.file_stem().and_then(|s| s.to_str()).unwrap_or(&codec).to_string();
            return Ok(c);
        }
    }
    RdCurve::from_csv(path, quality.name())
}

fn bdrate(a: BdrateArgs) -> Result<()> {
    let q = match a.metric {
        MetricArg::Psnr => Quality::Psnr,
        MetricArg::MsSsim => Quality::MsSsim,
    };
    let s = BdSummary::compute(&load_curve(&a.anchor, q)?, &load_curve(&a.test, q)?)?;
    println!("{s}");
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let stage = Stage::from_name(&a.stage)?;
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_toml(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(i) = a.lambda_index {
        cfg.lambda_index = i;
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    cfg.validate_for(stage)?;
    let (mut model, mut session) = if a.resume && a.output.exists() {
        StageSession::resume(&a.output, stage, &cfg)?
    } else {
        let model = match &a.model {
            Some(p) => NvcModel::load(p)?,
            None => NvcModel::new(match a.arch {
                Arch::Toy => ModelConfig::toy(),
                Arch::Full => ModelConfig::full(),
            })?,
        };
        let session = StageSession::new(&model, stage, &cfg)?;
        (model, session)
    };
    let kinds = a.motion.iter().map(|m| MotionKind::from_name(m)).collect::<Result<Vec<_>>>()?;
    let mut sources: Vec<Box<dyn FrameSource>> = vec![Box::new(SyntheticSource::new(kinds, cfg.seed))];
    if !a.data.is_empty() {
        sources.push(Box::new(FolderSource::open(&a.data, cfg.seed)?));
    }
    let data = MixedSource(sources);
    let mut log: Box<dyn std::io::Write> = match &a.log {
        Some(p) => Box::new(std::fs::OpenOptions::new().create(true).append(true).open(p)?),
        None => Box::new(std::io::stdout()),
    };
    info!("stage {} from step {} to {}", stage.name(), session.step, cfg.steps);
    while session.step < cfg.steps {
        let n = a.checkpoint_every.max(1).min(cfg.steps - session.step);
        session.run(&model, &cfg, &data, n, &mut log)?;
        session.save(&model, &a.output)?;
        info!("checkpoint at step {}", session.step);
    }
    model.completed.insert(stage);
    model.save(&a.output)?;
    info!("stage {} complete: {}", stage.name(), a.output.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(a),
        Command::Bdrate(a) => bdrate(a),
        Command::Train(a) => train(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut src = std::error::Error::source(&e);
            while let Some(s) = src {
                eprintln!("  caused by: {s}");
                src = s.source();
            }
            ExitCode::from(e.code())
        }
    }
}
