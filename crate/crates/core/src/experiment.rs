//! Train/evaluate runs over feature kinds and architectures.

use crate::corpus::LabeledAudio;
use crate::dsp::{self, LogMelImage, NormStats, Waveform};
use crate::enhance::EnhanceKind;
use crate::error::{Error, Result};
use crate::eval::{evaluate_features, normalize_all, EvalReport, FeaturePipeline};
use crate::nn::{train, Arch, ArchConfig, NetworkState, Tensor, TrainConfig, TrainLog};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentSpec {
    pub arch: Arch,
    pub arch_cfg: ArchConfig,
    pub pipeline: FeaturePipeline,
    pub train: TrainConfig,
    pub trials: usize,
}

/// Normalized features for one feature kind.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub stats: NormStats,
    /// One entry per training segment.
    pub train: Vec<(Tensor, usize)>,
    /// Segment stacks per evaluation recording.
    pub eval: Vec<(Vec<LogMelImage>, usize)>,
    pub input_shape: [usize; 3],
}

fn audio(set: &[LabeledAudio]) -> Vec<&Waveform> {
    set.iter().map(|s| &s.waveform).collect()
}

/// Extracts features, fits normalization on the training split only and
/// applies it to both splits. The evaluation split may be empty.
pub fn prepare(pipeline: &FeaturePipeline, train: &[LabeledAudio], eval: &[LabeledAudio]) -> Result<PreparedData> {
    if train.is_empty() {
        return Err(Error::EmptyInput("no training recordings"));
    }
    let train_feats = pipeline.extract_all(&audio(train))?;
    let flat: Vec<LogMelImage> = train_feats.iter().flatten().cloned().collect();
    let stats = dsp::fit_norm(&flat)?;
    let train_norm = normalize_all(&train_feats, &stats)?;
    let eval_norm = normalize_all(&pipeline.extract_all(&audio(eval))?, &stats)?;
    let (frames, bins) = flat[0].shape();
    let train_set = train_norm
        .iter()
        .zip(train)
        .flat_map(|(segs, s)| segs.iter().map(move |img| (Tensor::from_image(img), s.label)))
        .collect();
    Ok(PreparedData {
        stats,
        train: train_set,
        eval: eval_norm.into_iter().zip(eval.iter().map(|s| s.label)).collect(),
        input_shape: [1, frames, bins],
    })
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Confusion summed over trials, so its accuracy is the trial mean.
    pub report: EvalReport,
    pub trial_acc: Vec<f64>,
    pub logs: Vec<TrainLog>,
    pub stats: NormStats,
    /// Network of the last trial.
    pub network: NetworkState,
}

/// Trains `trials` networks on prepared data, seeding trial `i` with
/// `seed + i` for both initialization and training.
pub fn run_prepared(
    data: &PreparedData,
    n_classes: usize,
    labels: &[String],
    arch: Arch,
    arch_cfg: &ArchConfig,
    cfg: &TrainConfig,
    trials: usize,
) -> Result<ExperimentOutcome> {
    if trials == 0 {
        return Err(Error::Parameter("need at least one trial".into()));
    }
    if data.eval.is_empty() {
        return Err(Error::EmptyInput("no evaluation recordings"));
    }
    let mut reports = Vec::new();
    let mut logs = Vec::new();
    let mut last = None;
    for i in 0..trials {
        let seed = cfg.seed + i as u64;
        let mut net = NetworkState::build(arch, n_classes, data.input_shape, arch_cfg, seed)?;
        logs.push(train(&mut net, &data.train, &TrainConfig { seed, ..*cfg })?);
        reports.push(evaluate_features(&mut net, &data.eval, labels)?);
        last = Some(net);
    }
    Ok(ExperimentOutcome {
        trial_acc: reports.iter().map(|r| r.overall_acc).collect(),
        report: EvalReport::merge(&reports)?,
        logs,
        stats: data.stats.clone(),
        network: last.expect("at least one trial"),
    })
}

/// One row of the feature-kind by architecture comparison.
pub fn run_experiment(
    train: &[LabeledAudio],
    eval: &[LabeledAudio],
    labels: &[String],
    spec: &ExperimentSpec,
) -> Result<ExperimentOutcome> {
    let data = prepare(&spec.pipeline, train, eval)?;
    run_prepared(&data, labels.len(), labels, spec.arch, &spec.arch_cfg, &spec.train, spec.trials)
}

/// Mean accuracies indexed `[kind][arch]`.
#[derive(Debug, Clone)]
pub struct ResultGrid {
    pub kinds: Vec<EnhanceKind>,
    pub archs: Vec<Arch>,
    pub accuracy: Vec<Vec<f64>>,
    pub reports: Vec<Vec<EvalReport>>,
}

impl ResultGrid {
    pub fn get(&self, kind: EnhanceKind, arch: Arch) -> Option<f64> {
        let k = self.kinds.iter().position(|&x| x == kind)?;
        let a = self.archs.iter().position(|&x| x == arch)?;
        Some(self.accuracy[k][a])
    }
}

/// Runs every kind x arch combination; features are extracted once per kind.
pub fn run_grid(
    train: &[LabeledAudio],
    eval: &[LabeledAudio],
    labels: &[String],
    kinds: &[EnhanceKind],
    archs: &[Arch],
    base: &ExperimentSpec,
) -> Result<ResultGrid> {
    let mut accuracy = Vec::new();
    let mut reports = Vec::new();
    for &kind in kinds {
        let data = prepare(&base.pipeline.with_kind(kind), train, eval)?;
        let mut acc_row = Vec::new();
        let mut rep_row = Vec::new();
        for &arch in archs {
            let out = run_prepared(&data, labels.len(), labels, arch, &base.arch_cfg, &base.train, base.trials)?;
            acc_row.push(out.report.overall_acc);
            rep_row.push(out.report);
        }
        accuracy.push(acc_row);
        reports.push(rep_row);
    }
    Ok(ResultGrid {
        kinds: kinds.to_vec(),
        archs: archs.to_vec(),
        accuracy,
        reports,
    })
}
