use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use semjpeg::harness::{
    load_dataset, load_pgm, load_ppm, parse_ppm, run_benchmark, run_one, save_pgm, sweep, sweep_csv, write_atomic,
    BenchItem, BenchReport, RunConfig, SyntheticSpec,
};
use semjpeg::jpeg::JpegStream;
use semjpeg::metrics::{self, MetricsReport};
use semjpeg::msroi::{evaluate, prepare_samples, train, CamNet, Classifier, SaliencyMap, TrainConfig};
use semjpeg::semantic::{semantic_compress, SizeTarget};
use semjpeg::tensor::{read_checkpoint, write_checkpoint, CheckpointKind};
use semjpeg::{MsroiNet32, RgbImage};

#[derive(Parser)]
#[command(name = "semjpeg", version, about = "Saliency-guided JPEG compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct Settings {
    /// key = value run configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Lowest ladder quality
    #[arg(long, global = true)]
    ql: Option<u8>,
    /// Highest ladder quality
    #[arg(long, global = true)]
    qh: Option<u8>,
    /// Number of saliency levels
    #[arg(long, global = true)]
    levels: Option<usize>,
    /// Allowed relative size mismatch
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Quality of the standard JPEG whose size is matched
    #[arg(long, global = true)]
    baseline_quality: Option<u8>,
    /// Run single-threaded
    #[arg(long, global = true)]
    sequential: bool,
}

impl Settings {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        let flags = [
            ("q_low", self.ql.map(|v| v.to_string())),
            ("q_high", self.qh.map(|v| v.to_string())),
            ("levels", self.levels.map(|v| v.to_string())),
            ("tolerance", self.tolerance.map(|v| v.to_string())),
            ("baseline_quality", self.baseline_quality.map(|v| v.to_string())),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if self.sequential {
            cfg.parallel = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct MapSource {
    /// Saliency map as an 8-bit PGM with the image's dimensions
    #[arg(long, conflicts_with = "checkpoint")]
    map: Option<PathBuf>,
    /// Trained network checkpoint used to compute the map
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

enum Saliency {
    File(PathBuf),
    Msroi(Box<MsroiNet32>),
    Cam(Box<CamNet<f32>>),
}

impl Saliency {
    fn from_args(src: &MapSource) -> Result<Option<Saliency>> {
        if let Some(p) = &src.map {
            return Ok(Some(Saliency::File(p.clone())));
        }
        let Some(p) = &src.checkpoint else {
            return Ok(None);
        };
        let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let ckpt = read_checkpoint::<f32, _>(&mut BufReader::new(file)).with_context(|| format!("reading {}", p.display()))?;
        Ok(Some(match ckpt.kind {
            CheckpointKind::MultiStructure => Saliency::Msroi(Box::new(MsroiNet32::from_checkpoint(ckpt)?)),
            CheckpointKind::ClassActivation => Saliency::Cam(Box::new(CamNet::from_checkpoint(ckpt)?)),
        }))
    }

    fn required(src: &MapSource) -> Result<Saliency> {
        Self::from_args(src)?.ok_or_else(|| anyhow!("a saliency source is required: pass --map or --checkpoint"))
    }

    fn map_for(&self, image: &RgbImage, cfg: &RunConfig) -> Result<SaliencyMap> {
        let map = match self {
            Saliency::File(p) => load_pgm(p)?,
            Saliency::Msroi(net) => net.saliency(image, cfg.map_mode)?,
            Saliency::Cam(net) => net.saliency(image, None)?,
        };
        if map.dims() != image.dims() {
            bail!(
                "saliency map is {}x{} but the image is {}x{}",
                map.width(),
                map.height(),
                image.width(),
                image.height()
            );
        }
        Ok(map)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Compress a PPM image with saliency-driven quality
    Compress {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        source: MapSource,
        /// Target size in bytes (default: size of the baseline-quality JPEG)
        #[arg(long)]
        size_target: Option<usize>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Write the saliency map of a PPM image as a PGM
    Map {
        input: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        settings: Settings,
    },
    /// Train a saliency network on generated shape images
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Train the single-label class-activation baseline instead
        #[arg(long)]
        cam: bool,
        #[arg(long, default_value_t = 600)]
        images: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = TrainConfig::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
        lr: f64,
        #[arg(long, default_value_t = TrainConfig::default().batch_size)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-epoch loss/accuracy CSV
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Metrics CSV: candidates against an original, the matched-size
    /// comparison for one image, or a benchmark over a directory
    Evaluate {
        input: Option<PathBuf>,
        /// Decoded PPM or JPEG file to measure against INPUT (repeatable)
        #[arg(long)]
        candidate: Vec<PathBuf>,
        /// Directory of .ppm images with optional same-stem .pgm maps
        #[arg(long, conflicts_with_all = ["input", "candidate"])]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        source: MapSource,
        /// CSV destination (default: stdout)
        #[arg(long)]
        out: Option<PathBuf>,
        /// Benchmark summary destination (default: stderr)
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Also write both JPEG streams per image here
        #[arg(long)]
        jpeg_dir: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
    /// Matched-size comparison across rescaled copies of one image
    Sweep {
        input: PathBuf,
        #[command(flatten)]
        source: MapSource,
        /// Comma-separated long-side lengths
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        settings: Settings,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => print!("{text}"),
    }
    Ok(())
}

/// PPM or JPEG, by magic bytes.
fn load_any(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(&[0xFF, 0xD8]) {
        Ok(JpegStream::from_bytes(bytes).decode().with_context(|| format!("decoding {}", path.display()))?)
    } else {
        Ok(parse_ppm(&bytes).with_context(|| format!("parsing {}", path.display()))?)
    }
}

fn compress(input: &Path, out: &Path, source: &MapSource, size_target: Option<usize>, cfg: &RunConfig) -> Result<()> {
    let image = load_ppm(input)?;
    let map = Saliency::required(source)?.map_for(&image, cfg)?;
    let target = match size_target {
        Some(n) => SizeTarget::Bytes(n),
        None => SizeTarget::MatchQuality(cfg.baseline_quality),
    };
    let result = semantic_compress(&image, &map, &cfg.ladder()?, target, cfg.tolerance)?;
    let enc = &result.encoding;
    write_atomic(out, enc.stream.as_bytes())?;
    eprintln!(
        "{}: {} bytes (target {}), final quality {}, levels {:?}",
        out.display(),
        enc.stream.len(),
        enc.target_bytes,
        enc.quality,
        result.levels.histogram()
    );
    if !enc.within_tolerance {
        eprintln!(
            "warning: size is {:+.2}% off target, outside the {:.2}% tolerance",
            100.0 * enc.relative_size_error(),
            100.0 * cfg.tolerance
        );
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    out: &Path,
    cam: bool,
    images: usize,
    size: usize,
    config: TrainConfig,
    report: Option<&Path>,
) -> Result<()> {
    let spec = SyntheticSpec {
        width: size,
        height: size,
        count: images,
        seed: config.seed.wrapping_add(1),
        ..SyntheticSpec::default()
    };
    let merge = spec.merge_table()?;
    let data = spec.labeled(&spec.generate()?);
    let samples = prepare_samples::<f64>(&data, &merge)?;
    let net_spec = semjpeg::msroi::NetworkSpec {
        categories: merge.categories(),
        ..Default::default()
    };
    let (ckpt, train_report, fit) = if cam {
        let mut net = CamNet::<f64>::new(net_spec, config.seed)?;
        let r = train(&mut net, &samples, &config)?;
        let fit = evaluate(&net, &samples)?;
        (net.to_checkpoint(), r, fit)
    } else {
        let mut net = semjpeg::MsroiNet64::new(net_spec, config.seed)?;
        let r = train(&mut net, &samples, &config)?;
        let fit = evaluate(&net, &samples)?;
        let _ = Classifier::categories(&net);
        (net.to_checkpoint(), r, fit)
    };
    let mut bytes = Vec::new();
    write_checkpoint(&mut BufWriter::new(&mut bytes), &ckpt)?;
    write_atomic(out, &bytes)?;
    if let Some(p) = report {
        write_atomic(p, train_report.to_csv().as_bytes())?;
    }
    eprintln!(
        "{}: {} epochs, final loss {:.4}, training-set loss {:.4} accuracy {:.4}",
        out.display(),
        config.epochs,
        train_report.final_loss(),
        fit.0,
        fit.1
    );
    Ok(())
}

fn write_streams(dir: &Path, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for r in &report.rows {
        write_atomic(&dir.join(format!("{}.baseline.jpg", r.id)), r.baseline_stream.as_bytes())?;
        write_atomic(&dir.join(format!("{}.semantic.jpg", r.id)), r.semantic_stream.as_bytes())?;
    }
    Ok(())
}

struct EvaluateArgs<'a> {
    input: Option<&'a Path>,
    candidates: &'a [PathBuf],
    dataset: Option<&'a Path>,
    source: &'a MapSource,
    out: Option<&'a Path>,
    summary: Option<&'a Path>,
    jpeg_dir: Option<&'a Path>,
}

fn evaluate_cmd(a: EvaluateArgs, cfg: &RunConfig) -> Result<()> {
    if let Some(dir) = a.dataset {
        let saliency = Saliency::from_args(a.source)?;
        let mut items = Vec::new();
        let mut missing = Vec::new();
        for (id, image, map) in load_dataset(dir)? {
            let map = match (map, &saliency) {
                (Some(m), _) => Ok(m),
                (None, Some(s)) => s.map_for(&image, cfg),
                (None, None) => Err(anyhow!("no {id}.pgm map and no --checkpoint")),
            };
            match map {
                Ok(map) => items.push(BenchItem { id, image, map }),
                Err(e) => missing.push((id, e.to_string())),
            }
        }
        let mut report = run_benchmark(cfg, &items);
        report.failures.extend(missing);
        emit(a.out, &report.csv())?;
        match a.summary {
            Some(p) => write_atomic(p, report.summary_text().as_bytes())?,
            None => eprint!("{}", report.summary_text()),
        }
        if let Some(d) = a.jpeg_dir {
            write_streams(d, &report)?;
        }
        if !report.failures.is_empty() {
            bail!("{} of {} images failed", report.failures.len(), report.failures.len() + report.rows.len());
        }
        return Ok(());
    }

    let input = a.input.ok_or_else(|| anyhow!("evaluate needs an input image or --dataset"))?;
    let original = load_ppm(input)?;
    let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let saliency = Saliency::from_args(a.source)?;
    let map = match &saliency {
        Some(s) => s.map_for(&original, cfg)?,
        None => SaliencyMap::constant(original.width(), original.height(), 1.0)?,
    };
    if !a.candidates.is_empty() {
        let mut reports = Vec::new();
        for c in a.candidates {
            let decoded = load_any(c)?;
            if decoded.dims() != original.dims() {
                bail!(
                    "{} is {}x{} but {} is {}x{}",
                    c.display(),
                    decoded.width(),
                    decoded.height(),
                    input.display(),
                    original.width(),
                    original.height()
                );
            }
            let bytes = std::fs::metadata(c).map(|m| m.len() as usize).unwrap_or(0);
            let cid = c.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            reports.push(MetricsReport::measure(cid, bytes, &original, &decoded, &map, cfg.salient_cutoff)?);
        }
        return emit(a.out, &metrics::to_csv(&reports));
    }
    if saliency.is_none() {
        bail!("the matched-size comparison needs --map or --checkpoint");
    }
    let row = run_one(&BenchItem { id, image: original, map }, cfg)?;
    let report = BenchReport {
        rows: vec![row],
        failures: Vec::new(),
    };
    if let Some(d) = a.jpeg_dir {
        write_streams(d, &report)?;
    }
    emit(a.out, &report.csv())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Compress {
            input,
            out,
            source,
            size_target,
            settings,
        } => compress(&input, &out, &source, size_target, &settings.resolve()?),
        Command::Map {
            input,
            checkpoint,
            out,
            settings,
        } => {
            let cfg = settings.resolve()?;
            let image = load_ppm(&input)?;
            let source = MapSource {
                map: None,
                checkpoint: Some(checkpoint),
            };
            let map = Saliency::required(&source)?.map_for(&image, &cfg)?;
            save_pgm(&out, &map)?;
            Ok(())
        }
        Command::Train {
            out,
            cam,
            images,
            size,
            epochs,
            lr,
            batch,
            seed,
            report,
            settings,
        } => {
            let config = TrainConfig {
                epochs,
                learning_rate: lr,
                batch_size: batch,
                seed,
                parallel: !settings.sequential,
            };
            train_cmd(&out, cam, images, size, config, report.as_deref())
        }
        Command::Evaluate {
            input,
            candidate,
            dataset,
            source,
            out,
            summary,
            jpeg_dir,
            settings,
        } => evaluate_cmd(
            EvaluateArgs {
                input: input.as_deref(),
                candidates: &candidate,
                dataset: dataset.as_deref(),
                source: &source,
                out: out.as_deref(),
                summary: summary.as_deref(),
                jpeg_dir: jpeg_dir.as_deref(),
            },
            &settings.resolve()?,
        ),
        Command::Sweep {
            input,
            source,
            sizes,
            out,
            settings,
        } => {
            let mut cfg = settings.resolve()?;
            if let Some(s) = sizes {
                cfg.set("sweep_sizes", &s)?;
                cfg.validate()?;
            }
            let image = load_ppm(&input)?;
            let map = Saliency::required(&source)?.map_for(&image, &cfg)?;
            let id = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let rows = sweep(&BenchItem { id, image, map }, &cfg)?;
            emit(out.as_deref(), &sweep_csv(&rows))
        }
    }
}
