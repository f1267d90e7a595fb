//! Edge and texture enhancement of log-Mel images.
//!
//! Images are indexed `[t, m]` (time frame, Mel bin). In the 2-D filters the
//! horizontal axis `x` is time and the vertical axis `y` is frequency, the
//! way a spectrogram is usually drawn. Borders use half-sample symmetric
//! reflection (`d c b a | a b c d | d c b a`).

use std::f64::consts::SQRT_2;
use std::fmt;
use std::str::FromStr;

use crate::dsp::LogMelImage;
use crate::error::{Error, Result};

/// Median window used for background drift removal: 51 frames (about half a
/// second at a 10 ms hop) by 7 Mel bins.
pub const DEFAULT_MEDIAN_KERNEL: (usize, usize) = (51, 7);

/// Maps any integer offset into `0..n` by symmetric reflection.
#[inline]
pub fn reflect_index(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = i.rem_euclid(2 * n);
    (if r >= n { 2 * n - 1 - r } else { r }) as usize
}

/// Normalized, truncated 1-D Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub sigma: f64,
    pub radius: usize,
    pub weights: Vec<f64>,
}

impl GaussianKernel {
    /// Samples `exp(-i^2 / 2 sigma^2)` on `-r..=r` with `r = ceil(3 sigma)` and
    /// rescales to unit sum.
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::Parameter(format!("sigma must be positive, got {sigma}")));
        }
        let radius = (3.0 * sigma).ceil() as usize;
        let raw: Vec<f64> = (-(radius as isize)..=radius as isize)
            .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            sigma,
            radius,
            weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }
}

/// `line` extended by `r` reflected samples on each side.
fn pad_line(line: &[f64], r: usize, out: &mut Vec<f64>) {
    let n = line.len();
    out.clear();
    out.extend((0..r).map(|i| line[reflect_index(i as isize - r as isize, n)]));
    out.extend_from_slice(line);
    out.extend((0..r).map(|i| line[reflect_index((n + i) as isize, n)]));
}

/// Separable Gaussian blur: along time first, then along frequency.
pub fn gaussian_blur(img: &LogMelImage, sigma: f64) -> Result<LogMelImage> {
    let k = GaussianKernel::new(sigma)?;
    let (frames, bins) = img.shape();
    let r = k.radius as isize;
    // Time pass: whole rows are scaled and accumulated.
    let mut along_time = vec![0.0; frames * bins];
    for (t, out) in along_time.chunks_exact_mut(bins).enumerate() {
        for (j, &w) in k.weights.iter().enumerate() {
            let src = img.row(reflect_index(t as isize + j as isize - r, frames));
            for (o, &v) in out.iter_mut().zip(src) {
                *o += w * v;
            }
        }
    }
    let mut values = vec![0.0; frames * bins];
    let mut padded = Vec::with_capacity(bins + 2 * k.radius);
    for (row, out) in along_time.chunks_exact(bins).zip(values.chunks_exact_mut(bins)) {
        pad_line(row, k.radius, &mut padded);
        for (m, o) in out.iter_mut().enumerate() {
            *o = k.weights.iter().zip(&padded[m..]).map(|(w, v)| w * v).sum();
        }
    }
    LogMelImage::new(frames, bins, values)
}

/// Difference of Gaussians: `blur(img, 1) - blur(img, sqrt 2)`.
pub fn dog(img: &LogMelImage) -> LogMelImage {
    let narrow = gaussian_blur(img, 1.0).expect("positive sigma");
    let wide = gaussian_blur(img, SQRT_2).expect("positive sigma");
    narrow
        .zip_with(&wide, |a, b| a - b)
        .expect("blur preserves shape")
}

/// Horizontal (time) derivative kernel, rows indexed by frequency offset.
pub const SOBEL_X: [[f64; 3]; 3] = [[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]];
/// Vertical (frequency) derivative kernel.
pub const SOBEL_Y: [[f64; 3]; 3] = [[1.0, 2.0, 1.0], [0.0, 0.0, 0.0], [-1.0, -2.0, -1.0]];

/// Both Sobel responses `(G_x, G_y)` as true convolutions
/// `(K * A)(y, x) = sum K[a][b] A(y - a + 1, x - b + 1)`. Both kernels
/// factor into `[1, 2, 1]` smoothing and a central difference, which is how
/// they are evaluated here.
pub fn sobel_gradients(img: &LogMelImage) -> (LogMelImage, LogMelImage) {
    let (frames, bins) = img.shape();
    // Per reflected row t' in -1..=frames: smoothing and difference over m.
    let mut smooth = vec![0.0; (frames + 2) * bins];
    let mut diff = vec![0.0; (frames + 2) * bins];
    let mut padded = Vec::with_capacity(bins + 2);
    for tp in 0..frames + 2 {
        pad_line(img.row(reflect_index(tp as isize - 1, frames)), 1, &mut padded);
        let (s, d) = (&mut smooth[tp * bins..(tp + 1) * bins], &mut diff[tp * bins..(tp + 1) * bins]);
        for m in 0..bins {
            let (lo, mid, hi) = (padded[m], padded[m + 1], padded[m + 2]);
            s[m] = lo + 2.0 * mid + hi;
            d[m] = hi - lo;
        }
    }
    let mut gx = vec![0.0; frames * bins];
    let mut gy = vec![0.0; frames * bins];
    fn row(v: &[f64], tp: usize, bins: usize) -> &[f64] {
        &v[tp * bins..(tp + 1) * bins]
    }
    for t in 0..frames {
        let (s_prev, s_next) = (row(&smooth, t, bins), row(&smooth, t + 2, bins));
        let (d_prev, d_mid, d_next) = (row(&diff, t, bins), row(&diff, t + 1, bins), row(&diff, t + 2, bins));
        for m in 0..bins {
            gx[t * bins + m] = s_next[m] - s_prev[m];
            gy[t * bins + m] = d_prev[m] + 2.0 * d_mid[m] + d_next[m];
        }
    }
    let image = |v| LogMelImage::new(frames, bins, v).expect("same shape");
    (image(gx), image(gy))
}

/// Sobel gradient magnitude `sqrt(G_x^2 + G_y^2)`.
pub fn sobel(img: &LogMelImage) -> LogMelImage {
    let (gx, gy) = sobel_gradients(img);
    gx.zip_with(&gy, |a, b| a.hypot(b)).expect("same shape")
}

/// Exact median over a `kt x kf` window centred on each pixel.
pub fn median_filter(img: &LogMelImage, kt: usize, kf: usize) -> Result<LogMelImage> {
    if kt == 0 || kf == 0 || kt % 2 == 0 || kf % 2 == 0 {
        return Err(Error::Parameter(format!(
            "median kernel must be odd and positive, got ({kt}, {kf})"
        )));
    }
    let (frames, bins) = img.shape();
    let (rt, rf) = ((kt / 2) as isize, (kf / 2) as isize);
    let time_idx: Vec<Vec<usize>> = (0..frames as isize)
        .map(|t| (t - rt..=t + rt).map(|i| reflect_index(i, frames)).collect())
        .collect();
    let freq_idx: Vec<Vec<usize>> = (0..bins as isize)
        .map(|m| (m - rf..=m + rf).map(|i| reflect_index(i, bins)).collect())
        .collect();
    let mid = kt * kf / 2;
    let mut window = Vec::with_capacity(kt * kf);
    let values = img.values();
    Ok(LogMelImage::from_fn(frames, bins, |t, m| {
        window.clear();
        for &ti in &time_idx[t] {
            let row = &values[ti * bins..(ti + 1) * bins];
            window.extend(freq_idx[m].iter().map(|&mi| row[mi]));
        }
        *window.select_nth_unstable_by(mid, f64::total_cmp).1
    }))
}

/// Subtracts the median-filtered background with the default (51, 7) window.
pub fn remove_drift(img: &LogMelImage) -> Result<LogMelImage> {
    remove_drift_with(img, DEFAULT_MEDIAN_KERNEL)
}

pub fn remove_drift_with(img: &LogMelImage, kernel: (usize, usize)) -> Result<LogMelImage> {
    let background = median_filter(img, kernel.0, kernel.1)?;
    img.zip_with(&background, |a, b| a - b)
}

/// Input feature variants compared in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EnhanceKind {
    LogMel,
    DoG,
    Sobel,
    MedianResidual,
}

impl EnhanceKind {
    pub const ALL: [EnhanceKind; 4] = [
        EnhanceKind::LogMel,
        EnhanceKind::DoG,
        EnhanceKind::Sobel,
        EnhanceKind::MedianResidual,
    ];

    /// Short name used on the command line and in files.
    pub fn name(self) -> &'static str {
        match self {
            EnhanceKind::LogMel => "logmel",
            EnhanceKind::DoG => "dog",
            EnhanceKind::Sobel => "sobel",
            EnhanceKind::MedianResidual => "median",
        }
    }

    /// Row label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            EnhanceKind::LogMel => "LogMel",
            EnhanceKind::DoG => "DoG",
            EnhanceKind::Sobel => "Sobel",
            EnhanceKind::MedianResidual => "Medium",
        }
    }
}

impl fmt::Display for EnhanceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnhanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "logmel" | "log-mel" | "logmel-128" => Ok(EnhanceKind::LogMel),
            "dog" => Ok(EnhanceKind::DoG),
            "sobel" => Ok(EnhanceKind::Sobel),
            "median" | "medium" | "median-residual" => Ok(EnhanceKind::MedianResidual),
            other => Err(Error::Parameter(format!("unknown feature kind '{other}'"))),
        }
    }
}

/// Applies one enhancement with the default median window.
pub fn enhance(img: &LogMelImage, kind: EnhanceKind) -> Result<LogMelImage> {
    enhance_with(img, kind, DEFAULT_MEDIAN_KERNEL)
}

pub fn enhance_with(
    img: &LogMelImage,
    kind: EnhanceKind,
    median_kernel: (usize, usize),
) -> Result<LogMelImage> {
    match kind {
        EnhanceKind::LogMel => Ok(img.clone()),
        EnhanceKind::DoG => Ok(dog(img)),
        EnhanceKind::Sobel => Ok(sobel(img)),
        EnhanceKind::MedianResidual => remove_drift_with(img, median_kernel),
    }
}
