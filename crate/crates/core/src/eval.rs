//! Feature pipeline and recording-level evaluation.

use rayon::prelude::*;

use crate::corpus::LabeledAudio;
use crate::dsp::{self, LogMelImage, NormStats, StftConfig, Waveform};
use crate::enhance::{self, EnhanceKind, DEFAULT_MEDIAN_KERNEL};
use crate::error::{Error, Result};
use crate::nn::{predict_sample, predicted_class, NetworkState};

/// Everything between a waveform and the (unnormalized) network inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeaturePipeline {
    pub stft: StftConfig,
    pub kind: EnhanceKind,
    pub median_kernel: (usize, usize),
    pub segment_s: f64,
    pub hop_s: f64,
}

impl FeaturePipeline {
    pub fn new(kind: EnhanceKind) -> Self {
        Self {
            stft: StftConfig::default(),
            kind,
            median_kernel: DEFAULT_MEDIAN_KERNEL,
            segment_s: 1.0,
            hop_s: 0.5,
        }
    }

    pub fn with_kind(self, kind: EnhanceKind) -> Self {
        Self { kind, ..self }
    }

    /// Segment, log-Mel and enhance one recording.
    pub fn segment_features(&self, w: &Waveform) -> Result<Vec<LogMelImage>> {
        let fb = dsp::mel_filterbank(&self.stft, w.sample_rate())?;
        dsp::segment(w, self.segment_s, self.hop_s)?
            .iter()
            .map(|s| {
                let img = dsp::log_mel_with(s, &self.stft, &fb)?;
                enhance::enhance_with(&img, self.kind, self.median_kernel)
            })
            .collect()
    }

    /// Features for many recordings, in input order. Work is spread over the
    /// rayon pool; the result does not depend on the thread count.
    pub fn extract_all(&self, audio: &[&Waveform]) -> Result<Vec<Vec<LogMelImage>>> {
        audio.par_iter().map(|w| self.segment_features(w)).collect()
    }
}

/// Normalizes every segment of every recording.
pub fn normalize_all(features: &[Vec<LogMelImage>], stats: &NormStats) -> Result<Vec<Vec<LogMelImage>>> {
    features
        .iter()
        .map(|segs| segs.iter().map(|s| dsp::apply_norm(s, stats)).collect())
        .collect()
}

/// Accuracy summary with its confusion matrix (rows: truth, columns:
/// prediction).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub labels: Vec<String>,
    pub confusion: Vec<Vec<u64>>,
    pub overall_acc: f64,
    pub per_class_acc: Vec<f64>,
    pub n_trials: usize,
    /// Seconds per preprocessing case, when timed.
    pub timing: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn from_confusion(labels: Vec<String>, confusion: Vec<Vec<u64>>, n_trials: usize) -> Self {
        let total: u64 = confusion.iter().flatten().sum();
        let hits: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let per_class_acc = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    row[i] as f64 / n as f64
                }
            })
            .collect();
        Self {
            labels,
            overall_acc: if total == 0 { 0.0 } else { hits as f64 / total as f64 },
            confusion,
            per_class_acc,
            n_trials,
            timing: Vec::new(),
        }
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }

    /// Elementwise sum of confusion matrices of reports over the same labels.
    pub fn merge(reports: &[EvalReport]) -> Result<Self> {
        let first = reports.first().ok_or(Error::EmptyInput("no reports to merge"))?;
        let c = first.confusion.len();
        let mut confusion = vec![vec![0u64; c]; c];
        for r in reports {
            if r.labels != first.labels {
                return Err(Error::Shape("reports cover different label sets".into()));
            }
            for (acc, row) in confusion.iter_mut().zip(&r.confusion) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
        }
        Ok(Self::from_confusion(first.labels.clone(), confusion, reports.len()))
    }
}

fn label_names(labels: &[String], n: usize) -> Vec<String> {
    if labels.len() == n {
        labels.to_vec()
    } else {
        (0..n).map(|c| format!("class{c}")).collect()
    }
}

/// Scores normalized per-recording segment stacks.
pub fn evaluate_features(
    net: &mut NetworkState,
    samples: &[(Vec<LogMelImage>, usize)],
    labels: &[String],
) -> Result<EvalReport> {
    let c = net.n_classes();
    let mut confusion = vec![vec![0u64; c]; c];
    for (segs, y) in samples {
        if *y >= c {
            return Err(Error::Config(format!("label {y} outside the network's {c} classes")));
        }
        let probs = predict_sample(net, segs)?;
        confusion[*y][predicted_class(&probs)] += 1;
    }
    Ok(EvalReport::from_confusion(label_names(labels, c), confusion, 1))
}

/// Runs the full pipeline on labeled recordings and tallies argmax
/// predictions.
pub fn evaluate(
    net: &mut NetworkState,
    samples: &[LabeledAudio],
    labels: &[String],
    pipeline: &FeaturePipeline,
    stats: &NormStats,
) -> Result<EvalReport> {
    if let Some(s) = samples.iter().find(|s| s.label >= net.n_classes()) {
        return Err(Error::Config(format!(
            "label {} outside the network's {} classes",
            s.label,
            net.n_classes()
        )));
    }
    let audio: Vec<&Waveform> = samples.iter().map(|s| &s.waveform).collect();
    let feats = normalize_all(&pipeline.extract_all(&audio)?, stats)?;
    let tagged: Vec<_> = feats.into_iter().zip(samples.iter().map(|s| s.label)).collect();
    evaluate_features(net, &tagged, labels)
}
