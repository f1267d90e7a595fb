//! Waveform segmentation and log-Mel feature extraction.
//!
//! A recording is cut into overlapping fixed-length segments, each segment is
//! turned into a Hann-windowed power spectrogram, projected onto an HTK-style
//! triangular Mel filterbank and log-compressed. Features are normalized per
//! Mel bin with statistics fitted on training data only.

use std::f64::consts::PI;

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Additive floor inside the logarithm; silence maps to `ln(LOG_FLOOR)`.
pub const LOG_FLOOR: f64 = 1e-10;

/// Lower bound applied to fitted per-bin standard deviations.
pub const STD_FLOOR: f64 = 1e-8;

/// Sample rate assumed when none is given.
pub const DEFAULT_SAMPLE_RATE: u32 = 44_100;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("waveform has no samples"));
        }
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::Parameter(format!("sample {i} is not finite")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    /// Averages two channels into one.
    pub fn from_stereo(left: &[f64], right: &[f64], sample_rate: u32) -> Result<Self> {
        if left.len() != right.len() {
            return Err(Error::Shape(format!(
                "channel lengths differ: {} vs {}",
                left.len(),
                right.len()
            )));
        }
        let mono = left
            .iter()
            .zip(right)
            .map(|(l, r)| 0.5 * (l + r))
            .collect();
        Self::new(mono, sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }
}

/// Framing and filterbank parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_len: usize,
    pub n_mels: usize,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_len: 2048,
            n_mels: 128,
        }
    }
}

impl StftConfig {
    pub fn window_len(&self, sample_rate: u32) -> usize {
        (self.window_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn hop_len(&self, sample_rate: u32) -> usize {
        (self.hop_ms * sample_rate as f64 / 1000.0).round() as usize
    }

    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if !(self.window_ms > self.hop_ms && self.hop_ms > 0.0) {
            return Err(Error::Parameter(format!(
                "need window_ms > hop_ms > 0, got {} / {}",
                self.window_ms, self.hop_ms
            )));
        }
        let hop = self.hop_len(sample_rate);
        let win = self.window_len(sample_rate);
        if hop == 0 {
            return Err(Error::Parameter("hop is shorter than one sample".into()));
        }
        if self.fft_len < win {
            return Err(Error::Parameter(format!(
                "fft_len {} is shorter than the window ({win} samples)",
                self.fft_len
            )));
        }
        if self.n_mels == 0 {
            return Err(Error::Parameter("n_mels must be at least 1".into()));
        }
        Ok(())
    }
}

/// A `frames x bins` matrix of log Mel energies, stored row-major (one row
/// per time frame).
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelImage {
    frames: usize,
    bins: usize,
    values: Vec<f64>,
}

impl LogMelImage {
    pub fn new(frames: usize, bins: usize, values: Vec<f64>) -> Result<Self> {
        if frames == 0 || bins == 0 {
            return Err(Error::Shape(format!("empty image {frames}x{bins}")));
        }
        if values.len() != frames * bins {
            return Err(Error::Shape(format!(
                "{} values for a {frames}x{bins} image",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("image contains non-finite values".into()));
        }
        Ok(Self {
            frames,
            bins,
            values,
        })
    }

    pub fn from_fn(frames: usize, bins: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            for m in 0..bins {
                values.push(f(t, m));
            }
        }
        Self {
            frames,
            bins,
            values,
        }
    }

    pub fn filled(frames: usize, bins: usize, value: f64) -> Self {
        Self::from_fn(frames, bins, |_, _| value)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.frames, self.bins)
    }

    #[inline]
    pub fn get(&self, t: usize, m: usize) -> f64 {
        self.values[t * self.bins + m]
    }

    #[inline]
    pub fn set(&mut self, t: usize, m: usize, v: f64) {
        self.values[t * self.bins + m] = v;
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            frames: self.frames,
            bins: self.bins,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped images.
    pub fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(Error::Shape(format!(
                "{:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            frames: self.frames,
            bins: self.bins,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.bins, self.frames, |i, j| self.get(j, i))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Power spectrogram, `frames x (fft_len/2 + 1)`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub power: Vec<f64>,
}

impl Spectrogram {
    pub fn row(&self, t: usize) -> &[f64] {
        &self.power[t * self.bins..(t + 1) * self.bins]
    }
}

/// Per-bin normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Statistics that leave features unchanged.
    pub fn identity(bins: usize) -> Self {
        Self {
            mean: vec![0.0; bins],
            std: vec![1.0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.mean.len()
    }
}

/// Cuts `w` into windows of `seg_s` seconds starting every `hop_s` seconds.
///
/// Start offsets are rounded per segment rather than accumulated, so the
/// count does not drift at sample rates where `hop_s * rate` is fractional.
/// A trailing remainder shorter than `seg_s` is dropped.
pub fn segment(w: &Waveform, seg_s: f64, hop_s: f64) -> Result<Vec<Waveform>> {
    if !(seg_s > 0.0 && hop_s > 0.0) {
        return Err(Error::Parameter(format!(
            "segment and hop durations must be positive, got {seg_s} / {hop_s}"
        )));
    }
    let rate = w.sample_rate as f64;
    let seg_len = (seg_s * rate).round() as usize;
    if seg_len == 0 {
        return Err(Error::Parameter("segment is shorter than one sample".into()));
    }
    if w.len() < seg_len {
        return Err(Error::TooShort {
            len: w.len(),
            needed: seg_len,
        });
    }
    let duration = w.len() as f64 / rate;
    let slack = 0.5 / rate;
    let mut out = Vec::new();
    let mut i = 0usize;
    loop {
        let start_s = i as f64 * hop_s;
        if start_s + seg_s > duration + slack {
            break;
        }
        let end = ((start_s * rate).round() as usize + seg_len).min(w.len());
        let start = end - seg_len;
        out.push(Waveform {
            samples: w.samples[start..end].to_vec(),
            sample_rate: w.sample_rate,
        });
        i += 1;
    }
    Ok(out)
}

/// Periodic Hann window of length `n`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Hann-windowed short-time power spectrum `|X|^2`.
///
/// Frame count is `floor((len - window) / hop) + 1`; each frame is
/// zero-padded to `fft_len` before the transform.
pub fn stft_power(seg: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate(seg.sample_rate)?;
    let win = cfg.window_len(seg.sample_rate);
    let hop = cfg.hop_len(seg.sample_rate);
    if seg.len() < win {
        return Err(Error::TooShort {
            len: seg.len(),
            needed: win,
        });
    }
    let frames = (seg.len() - win) / hop + 1;
    let bins = cfg.n_bins();
    let window = hann_window(win);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(cfg.fft_len);
    let mut scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex::default(); cfg.fft_len];
    let mut power = Vec::with_capacity(frames * bins);
    for f in 0..frames {
        let start = f * hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            *slot = if i < win {
                Complex::new(seg.samples[start + i] * window[i], 0.0)
            } else {
                Complex::default()
            };
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        power.extend(buf[..bins].iter().map(|c| c.norm_sqr()));
    }
    Ok(Spectrogram {
        frames,
        bins,
        power,
    })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters on the HTK Mel scale, `n_mels x (fft_len/2 + 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_mels: usize,
    pub n_bins: usize,
    /// Apex frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
    /// Row-major weights.
    pub weights: Vec<f64>,
}

impl MelFilterbank {
    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Applies the filterbank to one power spectrum frame.
    pub fn apply(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            *o = self
                .row(m)
                .iter()
                .zip(power)
                .map(|(w, p)| w * p)
                .sum::<f64>();
        }
    }
}

/// Builds `n_mels` unnormalized triangles with apexes uniformly spaced in
/// Mel between 0 Hz and Nyquist.
///
/// A filter narrower than the FFT bin spacing can miss every bin; such a row
/// gets unit weight at the bin nearest its apex so no band is silent.
pub fn mel_filterbank(cfg: &StftConfig, sample_rate: u32) -> Result<MelFilterbank> {
    if sample_rate == 0 {
        return Err(Error::Parameter("sample rate must be positive".into()));
    }
    if cfg.n_mels == 0 || cfg.fft_len < 2 {
        return Err(Error::Parameter("need n_mels >= 1 and fft_len >= 2".into()));
    }
    let n_bins = cfg.n_bins();
    let nyquist = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (cfg.n_mels + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / cfg.fft_len as f64;
    let mut weights = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut weights[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let up = (f - lo) / (mid - lo);
            let down = (hi - f) / (hi - mid);
            *w = up.min(down).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            let k = ((mid / bin_hz).round() as usize).min(n_bins - 1);
            row[k] = 1.0;
        }
    }
    Ok(MelFilterbank {
        n_mels: cfg.n_mels,
        n_bins,
        centers_hz: edges[1..=cfg.n_mels].to_vec(),
        weights,
    })
}

/// Number of frames a segment of `len` samples produces under the padding
/// policy: one frame per started hop.
pub fn padded_frame_count(len: usize, hop: usize) -> usize {
    len.div_ceil(hop).max(1)
}

/// Log-Mel image of one segment.
///
/// The segment is right-padded with zeros to `window + (T - 1) * hop`
/// samples where `T = ceil(len / hop)`, so one second at a 10 ms hop always
/// yields 100 frames.
pub fn log_mel(seg: &Waveform, cfg: &StftConfig) -> Result<LogMelImage> {
    let fb = mel_filterbank(cfg, seg.sample_rate)?;
    log_mel_with(seg, cfg, &fb)
}

/// [`log_mel`] with a prebuilt filterbank.
pub fn log_mel_with(seg: &Waveform, cfg: &StftConfig, fb: &MelFilterbank) -> Result<LogMelImage> {
    cfg.validate(seg.sample_rate)?;
    if fb.n_mels != cfg.n_mels || fb.n_bins != cfg.n_bins() {
        return Err(Error::Shape("filterbank does not match config".into()));
    }
    let win = cfg.window_len(seg.sample_rate);
    let hop = cfg.hop_len(seg.sample_rate);
    let frames = padded_frame_count(seg.len(), hop);
    let target = win + (frames - 1) * hop;
    let spec = if seg.len() < target {
        let mut padded = seg.samples.clone();
        padded.resize(target, 0.0);
        stft_power(
            &Waveform {
                samples: padded,
                sample_rate: seg.sample_rate,
            },
            cfg,
        )?
    } else {
        stft_power(seg, cfg)?
    };
    let mut values = vec![0.0; spec.frames * cfg.n_mels];
    for t in 0..spec.frames {
        let out = &mut values[t * cfg.n_mels..(t + 1) * cfg.n_mels];
        fb.apply(spec.row(t), out);
        for v in out.iter_mut() {
            *v = (*v + LOG_FLOOR).ln();
        }
    }
    LogMelImage::new(spec.frames, cfg.n_mels, values)
}

/// Per-bin mean and population standard deviation over every frame of
/// every image.
pub fn fit_norm(features: &[LogMelImage]) -> Result<NormStats> {
    let first = features
        .first()
        .ok_or(Error::EmptyInput("no features to fit normalization on"))?;
    let bins = first.bins;
    if let Some(bad) = features.iter().find(|f| f.bins != bins) {
        return Err(Error::Shape(format!(
            "mixed bin counts {} and {}",
            bins, bad.bins
        )));
    }
    let count = features.iter().map(|f| f.frames).sum::<usize>() as f64;
    let mut mean = vec![0.0; bins];
    for f in features {
        for t in 0..f.frames {
            for (acc, v) in mean.iter_mut().zip(f.row(t)) {
                *acc += v;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; bins];
    for f in features {
        for t in 0..f.frames {
            for ((acc, v), m) in var.iter_mut().zip(f.row(t)).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
    }
    let std = var
        .into_iter()
        .map(|v| (v / count).sqrt().max(STD_FLOOR))
        .collect();
    Ok(NormStats { mean, std })
}

pub fn apply_norm(img: &LogMelImage, stats: &NormStats) -> Result<LogMelImage> {
    if img.bins != stats.bins() || stats.std.len() != stats.mean.len() {
        return Err(Error::Shape(format!(
            "image has {} bins, stats have {}",
            img.bins,
            stats.bins()
        )));
    }
    Ok(LogMelImage::from_fn(img.frames, img.bins, |t, m| {
        (img.get(t, m) - stats.mean[m]) / stats.std[m]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, rate: u32, seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::new((0..len).map(|_| rng.gen_range(-0.5..0.5)).collect(), rate).unwrap()
    }

    #[test]
    fn waveform_rejects_bad_input() {
        assert!(Waveform::new(vec![], 8000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
        assert!(Waveform::new(vec![f64::NAN], 8000).is_err());
        let w = Waveform::from_stereo(&[1000.0 / 32768.0], &[-1000.0 / 32768.0], 8000).unwrap();
        assert_eq!(w.samples(), &[0.0]);
    }

    fn brute_segment_count(duration: f64, seg: f64, hop: f64) -> usize {
        let mut n = 0;
        while n as f64 * hop + seg <= duration + 1e-9 {
            n += 1;
        }
        n
    }

    #[test]
    fn segment_counts() {
        let w = Waveform::new(vec![0.0; 441_000], 44_100).unwrap();
        assert_eq!(brute_segment_count(10.0, 1.0, 0.5), 19);
        assert_eq!(segment(&w, 1.0, 0.5).unwrap().len(), 19);

        let w = Waveform::new(vec![0.0; 44_100], 44_100).unwrap();
        assert_eq!(segment(&w, 1.0, 0.5).unwrap().len(), 1);

        let w = Waveform::new(vec![0.0; 61_740], 44_100).unwrap();
        assert_eq!(brute_segment_count(1.4, 1.0, 0.5), 1);
        assert_eq!(segment(&w, 1.0, 0.5).unwrap().len(), 1);

        let short = Waveform::new(vec![0.0; 100], 44_100).unwrap();
        assert!(matches!(
            segment(&short, 1.0, 0.5),
            Err(Error::TooShort { .. })
        ));
    }

    #[test]
    fn segments_are_contiguous_slices() {
        let w = Waveform::new((0..30_000).map(|i| i as f64 / 30_000.0).collect(), 10_000).unwrap();
        let segs = segment(&w, 1.0, 0.5).unwrap();
        assert_eq!(segs.len(), 5);
        for (i, s) in segs.iter().enumerate() {
            assert_eq!(s.len(), 10_000);
            assert_eq!(s.samples()[0], w.samples()[i * 5_000]);
        }
    }

    #[test]
    fn stft_of_silence_is_zero() {
        let w = Waveform::new(vec![0.0; 44_100], 44_100).unwrap();
        let s = stft_power(&w, &StftConfig::default()).unwrap();
        assert_eq!(s.frames, 98);
        assert!(s.power.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn sinusoid_at_bin_center_has_one_dominant_bin() {
        // Window equal to the FFT length puts the tone exactly on a bin.
        let rate = 20_480;
        let cfg = StftConfig {
            window_ms: 100.0,
            hop_ms: 10.0,
            fft_len: 2048,
            n_mels: 16,
        };
        assert_eq!(cfg.window_len(rate), 2048);
        let k0 = 100usize;
        let freq = k0 as f64 * rate as f64 / 2048.0;
        let samples = (0..rate as usize)
            .map(|n| (2.0 * PI * freq * n as f64 / rate as f64).sin())
            .collect();
        let w = Waveform::new(samples, rate).unwrap();
        let s = stft_power(&w, &cfg).unwrap();
        for t in 0..s.frames {
            let row = s.row(t);
            let peak = row[k0];
            for (k, &p) in row.iter().enumerate() {
                if k.abs_diff(k0) > 1 {
                    assert!(peak >= 10.0 * p, "frame {t} bin {k}");
                }
            }
        }
    }

    #[test]
    fn filterbank_rows_are_positive_contiguous_and_peak_at_center() {
        for &rate in &[16_000u32, 22_050, 44_100] {
            let cfg = StftConfig::default();
            let fb = mel_filterbank(&cfg, rate).unwrap();
            let bin_hz = rate as f64 / cfg.fft_len as f64;
            for m in 0..fb.n_mels {
                let row = fb.row(m);
                assert!(row.iter().all(|&w| w >= 0.0));
                assert!(row.iter().sum::<f64>() > 0.0, "row {m} at {rate}");
                let nz: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
                assert_eq!(nz.last().unwrap() - nz[0] + 1, nz.len(), "gap in row {m}");
                let argmax = (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]))
                    .unwrap();
                let c = fb.centers_hz[m] / bin_hz;
                assert!(
                    argmax == c.floor() as usize || argmax == c.ceil() as usize,
                    "row {m}: argmax {argmax}, apex at bin {c}"
                );
            }
            assert!(fb.centers_hz.windows(2).all(|p| p[0] < p[1]));
        }
    }

    #[test]
    fn one_second_gives_paper_input_shape() {
        let w = Waveform::new(vec![0.0; 44_100], 44_100).unwrap();
        let img = log_mel(&w, &StftConfig::default()).unwrap();
        assert_eq!(img.shape(), (100, 128));
        let floor = LOG_FLOOR.ln();
        assert!(img.values().iter().all(|&v| v == floor));
        assert!((floor + 23.0259).abs() < 1e-4);
    }

    #[test]
    fn doubling_amplitude_adds_ln4() {
        let w = noise(16_000, 16_000, 3);
        let w2 = Waveform::new(w.samples().iter().map(|s| 2.0 * s).collect(), 16_000).unwrap();
        let cfg = StftConfig::default();
        let a = log_mel(&w, &cfg).unwrap();
        let b = log_mel(&w2, &cfg).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            if *x > -10.0 {
                assert!((y - x - 4f64.ln()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn norm_fitting() {
        let c = LogMelImage::filled(5, 3, 2.5);
        let s = fit_norm(&[c]).unwrap();
        assert_eq!(s.mean, vec![2.5; 3]);
        assert_eq!(s.std, vec![STD_FLOOR; 3]);

        let s = fit_norm(&[LogMelImage::filled(4, 2, 0.0), LogMelImage::filled(4, 2, 2.0)]).unwrap();
        assert_eq!(s.mean, vec![1.0; 2]);
        assert_eq!(s.std, vec![1.0; 2]);

        assert!(matches!(fit_norm(&[]), Err(Error::EmptyInput(_))));
        assert!(fit_norm(&[LogMelImage::filled(2, 2, 0.0), LogMelImage::filled(2, 3, 0.0)]).is_err());
    }

    #[test]
    fn apply_norm_is_affine() {
        let stats = NormStats {
            mean: vec![1.0, -2.0, 0.5],
            std: vec![0.5, 2.0, 3.0],
        };
        let at_mean = LogMelImage::from_fn(4, 3, |_, m| stats.mean[m]);
        assert!(apply_norm(&at_mean, &stats).unwrap().values().iter().all(|&v| v == 0.0));
        let two_sd = LogMelImage::from_fn(4, 3, |_, m| stats.mean[m] + 2.0 * stats.std[m]);
        assert!(apply_norm(&two_sd, &stats).unwrap().values().iter().all(|&v| (v - 2.0).abs() < 1e-15));
        let img = LogMelImage::from_fn(4, 3, |t, m| (t * 3 + m) as f64);
        assert_eq!(apply_norm(&img, &NormStats::identity(3)).unwrap(), img);
        assert!(matches!(
            apply_norm(&img, &NormStats::identity(4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn self_normalization_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let batch: Vec<LogMelImage> = (0..6)
            .map(|_| LogMelImage::from_fn(20, 8, |_, m| rng.gen_range(-30.0..5.0) * (m + 1) as f64))
            .collect();
        let stats = fit_norm(&batch).unwrap();
        let normed: Vec<_> = batch.iter().map(|b| apply_norm(b, &stats).unwrap()).collect();
        let check = fit_norm(&normed).unwrap();
        for m in 0..8 {
            assert!(check.mean[m].abs() < 1e-9);
            assert!((check.std[m] - 1.0).abs() < 1e-9);
        }
    }
}
