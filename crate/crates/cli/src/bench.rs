//! `rangepack bench`: rate-distortion sweep.
//!
//! Writes two kinds of tab-separated files into `--out-dir`:
//!
//! * `rd_table.tsv` with header
//!   `predictor precision bpp cd_sym psnr accuracy zero_fraction`,
//!   one row per setting, sorted by precision then predictor order.
//!   `bpp` pools all frames; `cd_sym` and `psnr` are frame means (`psnr` is
//!   `inf` when every frame is exact); `accuracy` and `zero_fraction` pool
//!   all valid pixels.
//! * `hist_<predictor>_<precision>.tsv` with header `residual count`, one row
//!   per distinct residual value in ascending order.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, ValueEnum};
use rangepack::codec::{analyze_frame, decode_frame, encode_frame, BlockLayout, PreviousFrame, WeightRegistry};
use rangepack::geometry::{
    image_to_point_cloud, LidarCalibration, PoseTrack, QuantizationSpec, RangeImage,
};
use rangepack::metrics::{chamfer_sym, prediction_accuracy, psnr, Psnr};
use rangepack::predictor::{PredictorKind, WeightBundle};
use rangepack::scene::{generate, small_calibration, SceneKind, SceneSpec};
use rangepack::Error;

use crate::{corpus_tracks, load_bundle, parse_block, read_image, read_sidecar, CliError, CliResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BenchPredictor {
    PreviousValid,
    Linear,
    Anchor,
    AnchorTemporal,
}

#[derive(Args)]
pub struct BenchArgs {
    /// Synthetic scene kind (ignored with --corpus).
    #[arg(long, default_value = "boxes-on-ground")]
    scene: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 2650)]
    width: usize,
    #[arg(long, default_value_t = 0.0)]
    jitter: f64,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Directory laid out like `genscene` output (`frame_<t>.rimg`, `calib.json`).
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.02,0.1,0.2")]
    precisions: Vec<f64>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "previous-valid,linear")]
    predictors: Vec<BenchPredictor>,
    /// Bundle for `anchor` (3 inputs).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Bundle for `anchor-temporal` (4 inputs).
    #[arg(long)]
    temporal_weights: Option<PathBuf>,
    #[arg(long, default_value = "16x50")]
    block: String,
    #[arg(long)]
    out_dir: PathBuf,
}

struct Corpus {
    calib: LidarCalibration,
    frames: Vec<RangeImage>,
    tracks: Vec<PoseTrack>,
}

fn load_corpus(a: &BenchArgs) -> CliResult<Corpus> {
    if let Some(dir) = &a.corpus {
        let (sidecar, calib) = read_sidecar(&dir.join("calib.json"))?;
        let mut paths: Vec<(usize, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
            let index = name
                .as_deref()
                .and_then(|n| n.strip_prefix("frame_"))
                .and_then(|n| n.strip_suffix(".rimg"))
                .and_then(|n| n.parse().ok());
            if let Some(t) = index {
                paths.push((t, path));
            }
        }
        paths.sort();
        if paths.is_empty() {
            return Err(CliError::Usage(format!("no frame_<t>.rimg files in {}", dir.display())));
        }
        let frames = paths
            .iter()
            .map(|(_, p)| read_image(p).map(|(img, _)| img))
            .collect::<CliResult<Vec<_>>>()?;
        let tracks = corpus_tracks(&sidecar, frames.len())?;
        return Ok(Corpus { calib, frames, tracks });
    }
    let kind: SceneKind = a.scene.parse()?;
    if a.height == 0 || a.width == 0 {
        return Err(CliError::Usage("--height and --width must be positive".into()));
    }
    let spec = SceneSpec::new(kind, a.seed)
        .with_calibration(small_calibration(a.height, a.width))
        .with_noise(a.jitter, a.dropout);
    let scene = generate(&spec);
    Ok(Corpus {
        calib: spec.calib,
        frames: scene.frames,
        tracks: scene.tracks,
    })
}

fn predictor_kinds(a: &BenchArgs) -> CliResult<Vec<(BenchPredictor, PredictorKind)>> {
    let bundle = |path: &Option<PathBuf>, flag: &str| -> CliResult<Arc<WeightBundle>> {
        match path {
            Some(p) => load_bundle(p),
            None => Err(CliError::Usage(format!("anchor predictors need --{flag}"))),
        }
    };
    a.predictors
        .iter()
        .map(|&p| {
            let kind = match p {
                BenchPredictor::PreviousValid => PredictorKind::PreviousValid,
                BenchPredictor::Linear => PredictorKind::LinearInterpolation,
                BenchPredictor::Anchor => PredictorKind::AnchorNetIntra(bundle(&a.weights, "weights")?),
                BenchPredictor::AnchorTemporal => {
                    PredictorKind::AnchorNetTemporal(bundle(&a.temporal_weights, "temporal-weights")?)
                }
            };
            kind.validate()?;
            Ok((p, kind))
        })
        .collect()
}

#[derive(Default)]
struct Row {
    bits: u64,
    points: u64,
    cd_sum: f64,
    psnr_sum: f64,
    psnr_finite: usize,
    frames: usize,
    hits: f64,
    zeros: u64,
    residuals: u64,
    histogram: BTreeMap<i64, u64>,
}

fn measure(corpus: &Corpus, kind: &PredictorKind, spec: QuantizationSpec, layout: BlockLayout) -> CliResult<Row> {
    let mut row = Row::default();
    let registry: WeightRegistry = kind.weights().cloned().into_iter().collect();
    let mut prev: Option<PreviousFrame> = None;
    for (img, track) in corpus.frames.iter().zip(&corpus.tracks) {
        let cf = encode_frame(img, &corpus.calib, track, spec, kind, layout, prev.as_ref())?;
        let decoded = decode_frame(&cf, &corpus.calib, track, &registry, prev.as_ref())?;
        let analysis = analyze_frame(img, &corpus.calib, track, spec, kind, layout, prev.as_ref())?;
        if analysis.quantized != decoded {
            return Err(Error::CorruptStream("decoded frame differs from the quantized input".into()).into());
        }
        let n = img.valid_count();
        row.bits += 8 * cf.to_bytes().len() as u64;
        row.points += n as u64;
        if n > 0 {
            let p = image_to_point_cloud(img, &corpus.calib, track)?;
            let q = image_to_point_cloud(&decoded, &corpus.calib, track)?;
            row.cd_sum += chamfer_sym(&p, &q)?;
            if let Psnr::Db(db) = psnr(&p, &q)? {
                row.psnr_sum += db;
                row.psnr_finite += 1;
            }
            row.frames += 1;
            row.hits += prediction_accuracy(&analysis.predictions, &decoded, spec.precision())? * n as f64;
        }
        for d in analysis.residuals() {
            row.residuals += 1;
            row.zeros += (d == 0) as u64;
            *row.histogram.entry(d).or_default() += 1;
        }
        prev = if kind.is_temporal() {
            Some(PreviousFrame::new(&decoded, &corpus.calib, track)?)
        } else {
            None
        };
    }
    Ok(row)
}

fn ratio(num: f64, den: u64) -> String {
    if den == 0 {
        "nan".into()
    } else {
        format!("{:.6}", num / den as f64)
    }
}

fn histogram_name(p: BenchPredictor, precision: f64) -> String {
    let name = p.to_possible_value().expect("no skipped variants").get_name().to_owned();
    format!("hist_{name}_{precision}.tsv")
}

pub fn cmd_bench(a: BenchArgs) -> CliResult<()> {
    let corpus = load_corpus(&a)?;
    let kinds = predictor_kinds(&a)?;
    let layout = parse_block(&a.block)?
        .unwrap_or(BlockLayout::whole(corpus.calib.height(), corpus.calib.width()));
    let mut precisions = a.precisions.clone();
    for &p in &precisions {
        QuantizationSpec::new(p)?;
    }
    precisions.sort_by(f64::total_cmp);
    precisions.dedup();

    fs::create_dir_all(&a.out_dir)?;
    let mut table = String::from("predictor\tprecision\tbpp\tcd_sym\tpsnr\taccuracy\tzero_fraction\n");
    for &precision in &precisions {
        let spec = QuantizationSpec::new(precision)?;
        for (p, kind) in &kinds {
            let row = measure(&corpus, kind, spec, layout)?;
            let psnr = if row.frames == 0 {
                "nan".to_owned()
            } else if row.psnr_finite == 0 {
                "inf".to_owned()
            } else {
                ratio(row.psnr_sum, row.psnr_finite as u64)
            };
            writeln!(
                table,
                "{}\t{precision}\t{}\t{}\t{psnr}\t{}\t{}",
                kind.name(),
                ratio(row.bits as f64, row.points),
                ratio(row.cd_sum, row.frames as u64),
                ratio(row.hits, row.points),
                ratio(row.zeros as f64, row.residuals),
            )
            .expect("writing to a String");
            let mut hist = String::from("residual\tcount\n");
            for (d, c) in &row.histogram {
                writeln!(hist, "{d}\t{c}").expect("writing to a String");
            }
            fs::write(a.out_dir.join(histogram_name(*p, precision)), hist)?;
        }
    }
    fs::write(a.out_dir.join("rd_table.tsv"), &table)?;
    print!("{table}");
    Ok(())
}
