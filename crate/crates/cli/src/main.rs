//! `rangepack` command-line front end.
//!
//! Exit codes: 0 success, 2 usage, 3 I/O, 4 corrupt or mismatched container,
//! 5 weights (unknown digest or wrong shape), 6 invalid input data.

mod bench;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rangepack::codec::{
    bpp, decode_frame, encode_frame, frames_from_bytes, sequence_to_bytes, BlockLayout,
    PreviousFrame, WeightRegistry,
};
use rangepack::geometry::{
    image_to_point_cloud, quantize, read_rimg, write_rimg, LidarCalibration, PoseTrack,
    QuantizationSpec, RangeImage, RimgHeader, Sidecar,
};
use rangepack::metrics::MetricReport;
use rangepack::predictor::{PredictorKind, WeightBundle};
use rangepack::scene::{generate, small_calibration, SceneKind, SceneSpec};
use rangepack::Error;

#[derive(Parser)]
#[command(name = "rangepack", version, about = "Predictive lidar range-image codec")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compress one frame or a sequence of frames.
    Encode(EncodeArgs),
    /// Reconstruct the quantized frames of a container.
    Decode(DecodeArgs),
    /// Compare an original and a reconstructed frame.
    Eval(EvalArgs),
    /// Rate-distortion table and residual histograms over scenes or a corpus.
    Bench(bench::BenchArgs),
    /// Raytrace a synthetic scene.
    Genscene(GensceneArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PredictorArg {
    PreviousValid,
    Linear,
    Anchor,
}

#[derive(Args)]
struct EncodeArgs {
    /// Range images (`RIMG`), in time order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Calibration and pose sidecar (JSON); frame `t` uses pose track `t`.
    #[arg(long)]
    calib: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    precision: f64,
    #[arg(long, value_enum, default_value_t = PredictorArg::Linear)]
    predictor: PredictorArg,
    /// `RWGT` weight bundle for the anchor predictor.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Block size as `HxW`, or `whole`.
    #[arg(long, default_value = "16x50")]
    block: String,
    /// Use the previous frame as context (anchor predictor with a 4-input bundle).
    #[arg(long)]
    temporal: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct DecodeArgs {
    container: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Directory searched for `*.rwgt` bundles.
    #[arg(long)]
    weights_dir: Option<PathBuf>,
    /// Output file; frame `t` of a sequence goes to `<stem>_<t>.<ext>`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    original: PathBuf,
    reconstructed: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Pose track of the sidecar to use.
    #[arg(long, default_value_t = 0)]
    frame: usize,
    /// Container whose size is reported as bpp.
    #[arg(long)]
    container: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct GensceneArgs {
    #[arg(long, default_value = "boxes-on-ground")]
    kind: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 2650)]
    width: usize,
    /// Uniform range noise half-width in meters.
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    /// Probability of dropping a return.
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Output directory for `frame_<t>.rimg` and `calib.json`.
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::Io(_) => 3,
                Error::CorruptStream(_)
                | Error::HeaderMismatch(_)
                | Error::Unsupported(_)
                | Error::MissingPreviousFrame => 4,
                Error::UnknownWeights(_) | Error::WeightShapeMismatch(_) => 5,
                _ => 6,
            },
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Encode(a) => cmd_encode(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Bench(a) => bench::cmd_bench(a),
        Command::Genscene(a) => cmd_genscene(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

pub fn read_sidecar(path: &Path) -> CliResult<(Sidecar, LidarCalibration)> {
    let sidecar = Sidecar::from_reader(BufReader::new(File::open(path)?))?;
    let calib = sidecar.calibration()?;
    Ok((sidecar, calib))
}

pub fn read_image(path: &Path) -> CliResult<(RangeImage, RimgHeader)> {
    Ok(read_rimg(BufReader::new(File::open(path)?))?)
}

pub fn write_image(path: &Path, img: &RangeImage, header: RimgHeader) -> CliResult<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_rimg(&mut w, img, header)?;
    w.flush()?;
    Ok(())
}

pub fn parse_block(s: &str) -> CliResult<Option<BlockLayout>> {
    if s == "whole" {
        return Ok(None);
    }
    let bad = || CliError::Usage(format!("--block expects HxW or whole, got {s:?}"));
    let (h, w) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let h = h.trim().parse().map_err(|_| bad())?;
    let w = w.trim().parse().map_err(|_| bad())?;
    Ok(Some(BlockLayout::new(h, w)?))
}

pub fn load_bundle(path: &Path) -> CliResult<Arc<WeightBundle>> {
    Ok(Arc::new(WeightBundle::from_bytes(&fs::read(path)?)?))
}

fn predictor_kind(
    arg: PredictorArg,
    weights: Option<&Path>,
    temporal: bool,
) -> CliResult<PredictorKind> {
    match (arg, weights, temporal) {
        (PredictorArg::Anchor, None, _) => Err(CliError::Usage(
            "--predictor anchor needs --weights".into(),
        )),
        (PredictorArg::Anchor, Some(p), t) => {
            let bundle = load_bundle(p)?;
            let kind = if t {
                PredictorKind::AnchorNetTemporal(bundle)
            } else {
                PredictorKind::AnchorNetIntra(bundle)
            };
            kind.validate()?;
            Ok(kind)
        }
        (_, _, true) => Err(CliError::Usage(
            "--temporal needs --predictor anchor".into(),
        )),
        (PredictorArg::PreviousValid, _, _) => Ok(PredictorKind::PreviousValid),
        (PredictorArg::Linear, _, _) => Ok(PredictorKind::LinearInterpolation),
    }
}

fn cmd_encode(a: EncodeArgs) -> CliResult<()> {
    let spec = QuantizationSpec::new(a.precision)?;
    let kind = predictor_kind(a.predictor, a.weights.as_deref(), a.temporal)?;
    let (sidecar, calib) = read_sidecar(&a.calib)?;
    let layout = parse_block(&a.block)?.unwrap_or(BlockLayout::whole(calib.height(), calib.width()));
    let mut frames = Vec::with_capacity(a.inputs.len());
    let mut prev: Option<PreviousFrame> = None;
    for (t, path) in a.inputs.iter().enumerate() {
        let (img, _) = read_image(path)?;
        let track = sidecar.track(t)?;
        let start = Instant::now();
        let cf = encode_frame(&img, &calib, &track, spec, &kind, layout, prev.as_ref())?;
        let elapsed = start.elapsed();
        let bytes = cf.to_bytes().len();
        match bpp(&cf) {
            Ok(v) => println!("frame {t}: {bytes} bytes, {v:.4} bpp"),
            Err(Error::ZeroPoints) => println!("frame {t}: {bytes} bytes, no valid points"),
            Err(e) => return Err(e.into()),
        }
        eprintln!("frame {t}: encoded in {:.3} s", elapsed.as_secs_f64());
        if kind.is_temporal() {
            prev = Some(PreviousFrame::new(&quantize(&img, spec), &calib, &track)?);
        }
        frames.push(cf);
    }
    let bytes = if frames.len() == 1 {
        frames[0].to_bytes()
    } else {
        sequence_to_bytes(&frames)
    };
    fs::write(&a.output, bytes)?;
    Ok(())
}

fn sequence_path(base: &Path, t: usize, count: usize) -> PathBuf {
    if count == 1 {
        return base.to_path_buf();
    }
    let stem = base.file_stem().map_or("frame".into(), |s| s.to_string_lossy());
    let name = match base.extension() {
        Some(ext) => format!("{stem}_{t}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{t}"),
    };
    base.with_file_name(name)
}

fn cmd_decode(a: DecodeArgs) -> CliResult<()> {
    let frames = frames_from_bytes(&fs::read(&a.container)?)?;
    let (sidecar, calib) = read_sidecar(&a.calib)?;
    let weights = match &a.weights_dir {
        Some(dir) => WeightRegistry::load_dir(dir)?,
        None => WeightRegistry::new(),
    };
    let mut prev: Option<PreviousFrame> = None;
    let mut decoded = Vec::with_capacity(frames.len());
    for (t, cf) in frames.iter().enumerate() {
        let track = sidecar.track(t)?;
        let start = Instant::now();
        let img = decode_frame(cf, &calib, &track, &weights, prev.as_ref())?;
        eprintln!("frame {t}: decoded in {:.3} s", start.elapsed().as_secs_f64());
        prev = match frames.get(t + 1) {
            Some(next) if next.header.uses_previous_frame() => {
                Some(PreviousFrame::new(&img, &calib, &track)?)
            }
            _ => None,
        };
        decoded.push((img, cf.header.precision));
    }
    // Nothing is written unless every frame decoded.
    for (t, (img, precision)) in decoded.iter().enumerate() {
        let header = RimgHeader {
            precision: Some(*precision),
            max_range: calib.max_range(),
        };
        write_image(&sequence_path(&a.output, t, decoded.len()), img, header)?;
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let (sidecar, calib) = read_sidecar(&a.calib)?;
    let track = sidecar.track(a.frame)?;
    let (orig, _) = read_image(&a.original)?;
    let (recon, _) = read_image(&a.reconstructed)?;
    let p = image_to_point_cloud(&orig, &calib, &track)?;
    let q = image_to_point_cloud(&recon, &calib, &track)?;
    let mut report = MetricReport::compare(&p, &q)?;
    if let Some(path) = &a.container {
        let frames = frames_from_bytes(&fs::read(path)?)?;
        let cf = frames.get(a.frame).ok_or_else(|| {
            CliError::Usage(format!("container has no frame {}", a.frame))
        })?;
        report.bpp = Some(bpp(cf)?);
    }
    let json = report.to_json()?;
    match &a.output {
        Some(path) => fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_genscene(a: GensceneArgs) -> CliResult<()> {
    let kind: SceneKind = a.kind.parse()?;
    if a.height == 0 || a.width == 0 {
        return Err(CliError::Usage("--height and --width must be positive".into()));
    }
    let spec = SceneSpec::new(kind, a.seed)
        .with_calibration(small_calibration(a.height, a.width))
        .with_noise(a.jitter, a.dropout);
    let scene = generate(&spec);
    fs::create_dir_all(&a.output)?;
    let header = RimgHeader {
        precision: None,
        max_range: spec.calib.max_range(),
    };
    for (t, img) in scene.frames.iter().enumerate() {
        write_image(&a.output.join(format!("frame_{t}.rimg")), img, header)?;
    }
    let mut w = BufWriter::new(File::create(a.output.join("calib.json"))?);
    Sidecar::new(&spec.calib, &scene.tracks).to_writer(&mut w)?;
    w.flush()?;
    println!(
        "{}: {} frame(s), {}x{}, written to {}",
        kind,
        scene.frames.len(),
        a.height,
        a.width,
        a.output.display()
    );
    Ok(())
}

/// Pose tracks of a corpus, one per frame.
pub fn corpus_tracks(sidecar: &Sidecar, frames: usize) -> CliResult<Vec<PoseTrack>> {
    (0..frames).map(|t| Ok(sidecar.track(t)?)).collect()
}
