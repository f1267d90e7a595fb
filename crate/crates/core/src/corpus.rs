//! Synthetic scene corpus.
//!
//! Every class owns a stationary background texture: white noise shaped by a
//! fixed random spectral envelope. Foreground events (tone bursts and linear
//! chirps at random onsets) come from one pool shared by all classes, so the
//! background texture is the only cue that separates them.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::{num_complex::Complex, FftPlanner};

use crate::dsp::Waveform;
use crate::error::{Error, Result};

/// Dataset partition tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Eval,
    Fold(u32),
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => f.write_str("train"),
            Split::Eval => f.write_str("eval"),
            Split::Fold(k) => write!(f, "fold{k}"),
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "eval" | "evaluate" | "test" => Ok(Split::Eval),
            _ => s
                .strip_prefix("fold")
                .and_then(|k| k.parse().ok())
                .map(Split::Fold)
                .ok_or_else(|| Error::Parameter(format!("unknown split '{s}'"))),
        }
    }
}

/// A recording with its class index.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledAudio {
    pub waveform: Waveform,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_classes: usize,
    /// Recordings per class, train and eval together.
    pub samples_per_class: usize,
    /// Share of each class held out for evaluation.
    pub eval_fraction: f64,
    pub sample_s: f64,
    pub sample_rate: u32,
    pub seed: u64,
    /// Mean number of foreground events per recording.
    pub event_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            samples_per_class: 60,
            eval_fraction: 1.0 / 3.0,
            sample_s: 10.0,
            sample_rate: crate::dsp::DEFAULT_SAMPLE_RATE,
            seed: 0,
            event_rate: 3.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 || self.samples_per_class == 0 || self.sample_rate == 0 {
            return Err(Error::Parameter("class count, samples per class and sample rate must be positive".into()));
        }
        if !(self.sample_s > 0.0) || !(self.event_rate >= 0.0) {
            return Err(Error::Parameter("duration must be positive and event rate non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.eval_fraction) {
            return Err(Error::Parameter("eval fraction must be in [0,1]".into()));
        }
        Ok(())
    }

    pub fn eval_per_class(&self) -> usize {
        (self.samples_per_class as f64 * self.eval_fraction).round() as usize
    }
}

/// Piecewise-linear gain curve in dB over log frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralEnvelope {
    pub knots_hz: Vec<f64>,
    pub gains_db: Vec<f64>,
}

impl SpectralEnvelope {
    /// Random envelope with `n` log-spaced knots between 50 Hz and `max_hz`.
    pub fn random(rng: &mut ChaCha8Rng, n: usize, max_hz: f64) -> Self {
        let knots_hz = (0..n)
            .map(|i| 50.0 * (max_hz / 50.0).powf(i as f64 / (n - 1) as f64))
            .collect();
        let gains_db = (0..n).map(|_| rng.gen_range(-30.0..0.0)).collect();
        Self { knots_hz, gains_db }
    }

    /// Flat passband between `lo_hz` and `hi_hz` with `stop_db` outside.
    pub fn band(lo_hz: f64, hi_hz: f64, max_hz: f64, stop_db: f64) -> Self {
        let edge = 1.05;
        Self {
            knots_hz: vec![1.0, lo_hz / edge, lo_hz, hi_hz, hi_hz * edge, max_hz.max(hi_hz * edge * 1.01)],
            gains_db: vec![stop_db, stop_db, 0.0, 0.0, stop_db, stop_db],
        }
    }

    /// Linear amplitude gain at `hz`.
    pub fn gain(&self, hz: f64) -> f64 {
        let db = if hz <= self.knots_hz[0] {
            self.gains_db[0]
        } else if hz >= *self.knots_hz.last().unwrap() {
            *self.gains_db.last().unwrap()
        } else {
            let i = self.knots_hz.partition_point(|&k| k <= hz) - 1;
            let (f0, f1) = (self.knots_hz[i].ln(), self.knots_hz[i + 1].ln());
            let t = (hz.ln() - f0) / (f1 - f0);
            self.gains_db[i] * (1.0 - t) + self.gains_db[i + 1] * t
        };
        10f64.powf(db / 20.0)
    }
}

/// Stationary noise with the given spectral envelope, scaled to `rms`.
pub fn synthesize_texture(
    env: &SpectralEnvelope,
    len: usize,
    sample_rate: u32,
    rms: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..len)
        .map(|_| Complex::new(rng.gen_range(-1.0..1.0), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(len).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(len - k);
        *c *= env.gain(bin as f64 * sample_rate as f64 / len as f64);
    }
    planner.plan_fft_inverse(len).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let current = (out.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt();
    if current > 0.0 {
        out.iter_mut().for_each(|v| *v *= rms / current);
    }
    out
}

/// A foreground sound shared across classes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventTemplate {
    Tone { hz: f64, duration_s: f64 },
    Chirp { start_hz: f64, end_hz: f64, duration_s: f64 },
}

impl EventTemplate {
    pub fn duration_s(&self) -> f64 {
        match *self {
            EventTemplate::Tone { duration_s, .. } | EventTemplate::Chirp { duration_s, .. } => duration_s,
        }
    }

    /// Hann-tapered rendering with unit peak envelope.
    pub fn render(&self, sample_rate: u32) -> Vec<f64> {
        let rate = sample_rate as f64;
        let n = ((self.duration_s() * rate).round() as usize).max(2);
        let dur = n as f64 / rate;
        (0..n)
            .map(|i| {
                let t = i as f64 / rate;
                let phase = match *self {
                    EventTemplate::Tone { hz, .. } => 2.0 * PI * hz * t,
                    EventTemplate::Chirp { start_hz, end_hz, .. } => {
                        2.0 * PI * (start_hz * t + 0.5 * (end_hz - start_hz) / dur * t * t)
                    }
                };
                let taper = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
                taper * phase.sin()
            })
            .collect()
    }
}

/// The shared event pool drawn from `seed`.
pub fn event_pool(seed: u64, sample_rate: u32) -> Vec<EventTemplate> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xe7e7_0001);
    let top = 0.4 * sample_rate as f64;
    (0..8)
        .map(|i| {
            let duration_s = rng.gen_range(0.1..0.6);
            if i % 2 == 0 {
                EventTemplate::Tone {
                    hz: rng.gen_range(200.0..top),
                    duration_s,
                }
            } else {
                EventTemplate::Chirp {
                    start_hz: rng.gen_range(200.0..top),
                    end_hz: rng.gen_range(200.0..top),
                    duration_s,
                }
            }
        })
        .collect()
}

/// Per-class background envelopes drawn from `seed`.
pub fn class_envelopes(cfg: &SynthConfig) -> Vec<SpectralEnvelope> {
    (0..cfg.n_classes)
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0x0e11_0000 + c as u64));
            SpectralEnvelope::random(&mut rng, 12, cfg.sample_rate as f64 / 2.0)
        })
        .collect()
}

fn mix(a: u64, b: u64) -> u64 {
    let mut z = a ^ b.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const BACKGROUND_RMS: f64 = 0.05;
const EVENT_PEAK: f64 = 0.4;

/// Texture from `env` plus events from `pool`, peak-limited to 0.95.
pub fn synthesize_recording(
    env: &SpectralEnvelope,
    pool: &[EventTemplate],
    event_rate: f64,
    len: usize,
    sample_rate: u32,
    rng: &mut ChaCha8Rng,
) -> Vec<f64> {
    let mut out = synthesize_texture(env, len, sample_rate, BACKGROUND_RMS, rng);
    let whole = event_rate.floor() as usize;
    let count = whole + usize::from(rng.gen::<f64>() < event_rate - whole as f64);
    for _ in 0..count {
        let ev = pool[rng.gen_range(0..pool.len())].render(sample_rate);
        let onset = rng.gen_range(0..len);
        let gain = EVENT_PEAK * rng.gen_range(0.5..1.0);
        for (o, e) in out[onset..].iter_mut().zip(&ev) {
            *o += gain * e;
        }
    }
    let peak = out.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    if peak > 0.95 {
        out.iter_mut().for_each(|v| *v *= 0.95 / peak);
    }
    out
}

/// One generated recording.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthItem {
    pub name: String,
    pub label: usize,
    pub split: Split,
    pub waveform: Waveform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub labels: Vec<String>,
    pub items: Vec<SynthItem>,
}

impl SynthCorpus {
    pub fn split(&self, split: Split) -> Vec<LabeledAudio> {
        self.items
            .iter()
            .filter(|i| i.split == split)
            .map(|i| LabeledAudio {
                waveform: i.waveform.clone(),
                label: i.label,
            })
            .collect()
    }
}

pub fn class_label(c: usize) -> String {
    format!("scene{c:02}")
}

/// Generates the full corpus; the first `samples_per_class - eval_per_class`
/// recordings of each class are training data.
pub fn make_synth(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let len = (cfg.sample_s * cfg.sample_rate as f64).round() as usize;
    if len == 0 {
        return Err(Error::Parameter("recordings would be empty".into()));
    }
    let envelopes = class_envelopes(cfg);
    let pool = event_pool(cfg.seed, cfg.sample_rate);
    let n_train = cfg.samples_per_class - cfg.eval_per_class();
    let mut items = Vec::with_capacity(cfg.n_classes * cfg.samples_per_class);
    for (c, env) in envelopes.iter().enumerate() {
        for i in 0..cfg.samples_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, ((c as u64) << 32) | i as u64));
            let samples = synthesize_recording(env, &pool, cfg.event_rate, len, cfg.sample_rate, &mut rng);
            items.push(SynthItem {
                name: format!("{}_{i:03}.wav", class_label(c)),
                label: c,
                split: if i < n_train { Split::Train } else { Split::Eval },
                waveform: Waveform::new(samples, cfg.sample_rate)?,
            });
        }
    }
    Ok(SynthCorpus {
        labels: (0..cfg.n_classes).map(class_label).collect(),
        items,
    })
}
