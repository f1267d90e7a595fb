//! Command-line front end.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use scenecam_core::bench::{bench_preprocess, reference_cases};
use scenecam_core::cam::{cam_gap, event_activation_report, grad_cam, render_grayscale, render_overlay};
use scenecam_core::corpus::{make_synth, Split, SynthConfig};
use scenecam_core::dsp::{self, StftConfig};
use scenecam_core::enhance::{enhance_with, EnhanceKind};
use scenecam_core::eval::{evaluate, FeaturePipeline};
use scenecam_core::experiment::{prepare, run_grid, ExperimentSpec};
use scenecam_core::nn::{predicted_class, train, Arch, ArchConfig, EpochLog, NetworkState, Tensor, TrainConfig};

use crate::atomic::write_atomic_str;
use crate::dataset::{load_dcase_index, write_synth, DatasetIndex};
use crate::error::{Error, Result};
use crate::format::{read_checkpoint, read_features, write_checkpoint, write_features, Checkpoint, ModelMeta};
use crate::raster::write_png;
use crate::report::{format_grid, format_report, grid_records, report_records};
use crate::wav::read_wav;

#[derive(Debug, Parser)]
#[command(name = "scenecam", version, about = "Acoustic scene classification with class activation maps")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Seed for corpus generation, initialization and shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads: 1, or auto for one per core.
    #[arg(long, global = true, default_value = "auto", value_parser = parse_threads)]
    pub threads: Threads,
    /// Progress on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Threads {
    One,
    Auto,
}

fn parse_threads(s: &str) -> std::result::Result<Threads, String> {
    match s {
        "1" => Ok(Threads::One),
        "auto" => Ok(Threads::Auto),
        _ => Err(format!("expected 1 or auto, got '{s}'")),
    }
}

fn parse_pair(s: &str, sep: char) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(sep).ok_or_else(|| format!("expected A{sep}B, got '{s}'"))?;
    let num = |v: &str| v.trim().parse::<usize>().map_err(|_| format!("'{v}' is not a count"));
    Ok((num(a)?, num(b)?))
}

fn parse_kernel(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_pair(s, ',')
}

fn parse_shape(s: &str) -> std::result::Result<(usize, usize), String> {
    parse_pair(s, 'x')
}

fn parse_widths(s: &str) -> std::result::Result<[usize; 5], String> {
    let v: Vec<usize> = s
        .split(',')
        .map(|w| w.trim().parse().map_err(|_| format!("'{w}' is not a width")))
        .collect::<std::result::Result<_, _>>()?;
    v.try_into().map_err(|_| "expected five comma-separated widths".to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Logmel,
    Dog,
    Sobel,
    Median,
}

impl From<KindArg> for EnhanceKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Logmel => EnhanceKind::LogMel,
            KindArg::Dog => EnhanceKind::DoG,
            KindArg::Sobel => EnhanceKind::Sobel,
            KindArg::Median => EnhanceKind::MedianResidual,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Fc,
    Gap,
}

impl From<ArchArg> for Arch {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Fc => Arch::Fc,
            ArchArg::Gap => Arch::Gap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CamMethod {
    GradCam,
    Cam,
}

#[derive(Debug, Clone, Args)]
pub struct FeatureArgs {
    /// Mel bands.
    #[arg(long, default_value_t = 128)]
    pub n_mels: usize,
    #[arg(long, default_value_t = 2048)]
    pub fft_len: usize,
    #[arg(long, default_value_t = 25.0)]
    pub window_ms: f64,
    #[arg(long, default_value_t = 10.0)]
    pub hop_ms: f64,
    /// Median filter size as TIME,FREQ.
    #[arg(long, value_parser = parse_kernel, default_value = "51,7")]
    pub median_kernel: (usize, usize),
}

impl FeatureArgs {
    fn stft(&self) -> StftConfig {
        StftConfig {
            window_ms: self.window_ms,
            hop_ms: self.hop_ms,
            fft_len: self.fft_len,
            n_mels: self.n_mels,
        }
    }

    fn pipeline(&self, kind: EnhanceKind) -> FeaturePipeline {
        FeaturePipeline {
            stft: self.stft(),
            median_kernel: self.median_kernel,
            ..FeaturePipeline::new(kind)
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Channels of the five convolutions.
    #[arg(long, value_parser = parse_widths, default_value = "64,192,384,256,256")]
    pub widths: [usize; 5],
    /// Width of the hidden fully connected layers (CNN-FC).
    #[arg(long, default_value_t = 2048)]
    pub fc_dim: usize,
    #[arg(long, default_value_t = 0.5)]
    pub dropout: f64,
}

impl ModelArgs {
    fn config(&self) -> ArchConfig {
        ArchConfig {
            conv_widths: self.widths,
            fc_dim: self.fc_dim,
            dropout: self.dropout,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct OptimArgs {
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Keep the learning rate constant instead of dropping it tenfold for
    /// the last third of training.
    #[arg(long)]
    pub no_step_decay: bool,
}

impl OptimArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            momentum: self.momentum,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed,
            weight_decay: self.weight_decay,
            step_decay: !self.no_step_decay,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic corpus of WAV files and a meta.txt index.
    Synth {
        #[arg(long, default_value_t = 4)]
        classes: usize,
        /// Recordings per class, training and evaluation together.
        #[arg(long, default_value_t = 60)]
        per_class: usize,
        /// Share of each class held out for evaluation.
        #[arg(long, default_value_t = 1.0 / 3.0)]
        eval_fraction: f64,
        /// Recording length in seconds.
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
        #[arg(long, default_value_t = 44100)]
        rate: u32,
        /// Mean foreground events per recording.
        #[arg(long, default_value_t = 3.0)]
        event_rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Log-Mel features of a WAV file.
    Extract {
        #[arg(long)]
        wav: PathBuf,
        /// Output file with --whole, otherwise a directory receiving one
        /// file per 1 s segment.
        #[arg(long)]
        out: PathBuf,
        /// One image for the whole recording instead of segments.
        #[arg(long)]
        whole: bool,
        #[command(flatten)]
        features: FeatureArgs,
    },
    /// Apply an enhancement filter to a feature file.
    Enhance {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        kind: KindArg,
        #[arg(long, value_parser = parse_kernel, default_value = "51,7")]
        median_kernel: (usize, usize),
        /// Grayscale picture of the result.
        #[arg(long)]
        png: Option<PathBuf>,
    },
    /// Train a network on the training split of a corpus.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "gap")]
        arch: ArchArg,
        #[arg(long, alias = "kind", value_enum, default_value = "logmel")]
        feature_kind: KindArg,
        #[command(flatten)]
        optim: OptimArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        features: FeatureArgs,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Score the evaluation split afterwards and write key=value records.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a checkpoint on one split of a corpus.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "eval")]
        split: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Class activation map of one input rendered over its features.
    Cam {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, conflicts_with = "feature", required_unless_present = "feature")]
        wav: Option<PathBuf>,
        /// Unenhanced log-Mel feature file matching the model input size.
        #[arg(long)]
        feature: Option<PathBuf>,
        /// Segment of the WAV file to explain.
        #[arg(long, default_value_t = 0)]
        segment: usize,
        /// Class label, class index, or argmax.
        #[arg(long, default_value = "argmax")]
        class: String,
        /// Architecture table row whose activations are used.
        #[arg(long, default_value_t = 7)]
        layer: usize,
        #[arg(long, value_enum, default_value = "grad-cam")]
        method: CamMethod,
        #[arg(long, default_value_t = 0.4)]
        alpha: f64,
        /// Energy quantile separating loud pixels in the activation report.
        #[arg(long, default_value_t = 0.95)]
        quantile: f64,
        #[arg(long)]
        png: PathBuf,
    },
    /// Time the enhancement filters on random images.
    Bench {
        #[arg(long, default_value_t = 100)]
        images: usize,
        /// Image size as FRAMESxBINS.
        #[arg(long, value_parser = parse_shape, default_value = "1000x128")]
        shape: (usize, usize),
        #[arg(long, default_value_t = 3)]
        runs: usize,
    },
    /// Train and score every feature kind with every architecture.
    Experiment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "fc,gap")]
        archs: Vec<ArchArg>,
        #[arg(long, value_enum, value_delimiter = ',', default_value = "logmel,dog,sobel,median")]
        kinds: Vec<KindArg>,
        #[arg(long, default_value_t = 3)]
        trials: usize,
        #[command(flatten)]
        optim: OptimArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        features: FeatureArgs,
        /// Write key=value accuracy records here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn configure_threads(t: Threads) {
    let n = match t {
        Threads::One => 1,
        Threads::Auto => 0,
    };
    // A pool may already exist when running in-process more than once.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
}

fn open_index(data: &PathBuf) -> Result<DatasetIndex> {
    let index = load_dcase_index(data)?;
    let missing = index.missing();
    if let Some(first) = missing.first() {
        eprintln!("warning: {} listed files are missing, e.g. {}", missing.len(), first.display());
    }
    Ok(index)
}

fn log_epochs(verbose: bool, epochs: &[EpochLog]) {
    if verbose {
        for e in epochs {
            eprintln!("epoch {:>3} lr {:.5} loss {:.5} acc {:.4}", e.epoch, e.lr, e.loss, e.accuracy);
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    configure_threads(cli.threads);
    let seed = cli.seed;
    let verbose = cli.verbose;
    match cli.command {
        Command::Synth {
            classes,
            per_class,
            eval_fraction,
            duration,
            rate,
            event_rate,
            out,
        } => {
            let cfg = SynthConfig {
                n_classes: classes,
                samples_per_class: per_class,
                eval_fraction,
                sample_s: duration,
                sample_rate: rate,
                seed,
                event_rate,
            };
            let corpus = make_synth(&cfg)?;
            let index = write_synth(&out, &corpus)?;
            println!(
                "wrote {} recordings ({} train, {} eval) to {}",
                index.entries.len(),
                index.entries_in(Split::Train).count(),
                index.entries_in(Split::Eval).count(),
                out.display()
            );
        }
        Command::Extract {
            wav,
            out,
            whole,
            features,
        } => {
            let w = read_wav(&wav)?;
            let stft = features.stft();
            if whole {
                write_features(&out, &dsp::log_mel(&w, &stft)?)?;
                println!("wrote {}", out.display());
            } else {
                let segs = features.pipeline(EnhanceKind::LogMel).segment_features(&w)?;
                let stem = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                for (i, s) in segs.iter().enumerate() {
                    write_features(&out.join(format!("{stem}_seg{i:03}.slns")), s)?;
                }
                println!("wrote {} segments to {}", segs.len(), out.display());
            }
        }
        Command::Enhance {
            input,
            out,
            kind,
            median_kernel,
            png,
        } => {
            let img = read_features(&input)?;
            let enhanced = enhance_with(&img, kind.into(), median_kernel)?;
            write_features(&out, &enhanced)?;
            if let Some(p) = png {
                write_png(&p, &render_grayscale(&enhanced))?;
            }
        }
        Command::Train {
            data,
            arch,
            feature_kind,
            optim,
            model,
            features,
            out,
            report,
        } => {
            let index = open_index(&data)?;
            let train_set = index.load_split(Split::Train)?;
            let eval_set = index.load_split(Split::Eval)?;
            let pipeline = features.pipeline(feature_kind.into());
            let start = Instant::now();
            let prepared = prepare(&pipeline, &train_set, &[])?;
            let mut net = NetworkState::build(
                arch.into(),
                index.label_set.len(),
                prepared.input_shape,
                &model.config(),
                seed,
            )?;
            let log = train(&mut net, &prepared.train, &optim.config(seed))?;
            log_epochs(verbose, &log.epochs);
            if verbose {
                eprintln!("trained in {:.1} s", start.elapsed().as_secs_f64());
            }
            let ck = Checkpoint {
                network: net,
                stats: prepared.stats,
                meta: ModelMeta {
                    pipeline,
                    labels: index.label_set.clone(),
                },
            };
            write_checkpoint(&out, &ck)?;
            println!(
                "wrote {} ({} parameters, final loss {:.5})",
                out.display(),
                ck.network.param_count(),
                log.final_loss().unwrap_or(f64::NAN)
            );
            if let Some(path) = report {
                let mut net = ck.network;
                let r = evaluate(&mut net, &eval_set, &index.label_set, &pipeline, &ck.stats)?;
                print!("{}", format_report(&r));
                write_atomic_str(&path, &report_records(&r))?;
            }
        }
        Command::Evaluate {
            ckpt,
            data,
            split,
            report,
        } => {
            let mut ck = read_checkpoint(&ckpt)?;
            let index = open_index(&data)?;
            if index.label_set != ck.meta.labels {
                return Err(scenecam_core::Error::Config(format!(
                    "corpus labels {:?} differ from the model's {:?}",
                    index.label_set, ck.meta.labels
                ))
                .into());
            }
            let split: Split = split.parse()?;
            let samples = index.load_split(split)?;
            let r = evaluate(&mut ck.network, &samples, &ck.meta.labels, &ck.meta.pipeline, &ck.stats)?;
            print!("{}", format_report(&r));
            if let Some(path) = report {
                write_atomic_str(&path, &report_records(&r))?;
            }
        }
        Command::Cam {
            ckpt,
            wav,
            feature,
            segment,
            class,
            layer,
            method,
            alpha,
            quantile,
            png,
        } => {
            let mut ck = read_checkpoint(&ckpt)?;
            let p = ck.meta.pipeline;
            let logmel = match (wav, feature) {
                (Some(w), _) => {
                    let w = read_wav(&w)?;
                    let segs = dsp::segment(&w, p.segment_s, p.hop_s)?;
                    let seg = segs.get(segment).ok_or_else(|| {
                        Error::Usage(format!("segment {segment} out of range, recording has {}", segs.len()))
                    })?;
                    dsp::log_mel(seg, &p.stft)?
                }
                (None, Some(f)) => read_features(&f)?,
                (None, None) => return Err(Error::Usage("need --wav or --feature".into())),
            };
            let input = dsp::apply_norm(&enhance_with(&logmel, p.kind, p.median_kernel)?, &ck.stats)?;
            let net = &mut ck.network;
            let probs = net.forward(&Tensor::from_image(&input), true)?;
            let class_id = match class.as_str() {
                "argmax" => predicted_class(probs.data()),
                name => match ck.meta.labels.iter().position(|l| l == name) {
                    Some(i) => i,
                    None => name
                        .parse::<usize>()
                        .ok()
                        .filter(|&i| i < net.n_classes())
                        .ok_or_else(|| Error::Usage(format!("unknown class '{name}'")))?,
                },
            };
            let cam = match method {
                CamMethod::Cam => cam_gap(net, class_id)?,
                CamMethod::GradCam => grad_cam(net, class_id, layer)?,
            };
            write_png(&png, &render_overlay(&input, &cam, alpha)?)?;
            let ev = event_activation_report(&input, &cam, quantile)?;
            let label = ck.meta.labels.get(class_id).cloned().unwrap_or_else(|| class_id.to_string());
            println!(
                "class={label} prob={:.4} layer={} map={}x{} high_energy_mean={:.6} background_mean={:.6} ratio={:.4}",
                probs.data()[class_id],
                cam.layer_index,
                cam.height,
                cam.width,
                ev.high_energy_mean,
                ev.background_mean,
                ev.ratio
            );
        }
        Command::Bench { images, shape, runs } => {
            for (label, secs) in bench_preprocess(shape, images, &reference_cases(), runs, seed)? {
                println!("{label:<14} {secs:.4} s");
            }
        }
        Command::Experiment {
            data,
            archs,
            kinds,
            trials,
            optim,
            model,
            features,
            report,
        } => {
            let index = open_index(&data)?;
            let train_set = index.load_split(Split::Train)?;
            let eval_set = index.load_split(Split::Eval)?;
            let spec = ExperimentSpec {
                arch: Arch::Gap,
                arch_cfg: model.config(),
                pipeline: features.pipeline(EnhanceKind::LogMel),
                train: optim.config(seed),
                trials,
            };
            let kinds: Vec<EnhanceKind> = kinds.into_iter().map(Into::into).collect();
            let archs: Vec<Arch> = archs.into_iter().map(Into::into).collect();
            let grid = run_grid(&train_set, &eval_set, &index.label_set, &kinds, &archs, &spec)?;
            print!("{}", format_grid(&grid));
            if let Some(path) = report {
                write_atomic_str(&path, &grid_records(&grid))?;
            }
        }
    }
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
/// Errors are reported on stderr as one `error[kind]: message` line.
pub fn main_with_args<I, T>(args: I) -> i32
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
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', "; ");
            eprintln!("error[{}]: {msg}", e.kind());
            e.exit_code()
        }
    }
}

