//! Class activation maps and signed overlay rendering.
//!
//! For a network ending in global average pooling and a linear layer, the
//! class score is `y_c = sum_k w[c][k] * mean(f_k) + b_c`, so the map
//! `M_c = sum_k w[c][k] f_k` localizes the evidence for class `c`. Grad-CAM
//! replaces `w[c][k]` with the spatial mean of `d y_c / d f_k`, which works
//! for any convolutional feature map. Both signs are kept.

use crate::dsp::LogMelImage;
use crate::error::{Error, Result};
use crate::nn::{Arch, LayerSpec, NetworkState, Tensor};

/// A class activation map over one feature-map resolution, oriented like the
/// input (rows are time, columns are frequency).
#[derive(Debug, Clone, PartialEq)]
pub struct Cam {
    pub map: Vec<f64>,
    pub height: usize,
    pub width: usize,
    pub class_id: usize,
    /// Architecture table row whose output the maps were taken from.
    pub layer_index: usize,
    /// `w[c][k]` for CAM or `alpha[c][k]` for Grad-CAM.
    pub channel_weights: Vec<f64>,
    /// Pixels per feature map, `height * width`.
    pub pixel_count: usize,
}

impl Cam {
    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.map[y * self.width + x]
    }

    /// Bilinear resampling (pixel centres aligned) to `height x width`.
    pub fn upsample(&self, height: usize, width: usize) -> LogMelImage {
        let coord = |dst: usize, out: usize, inp: usize| {
            let s = ((dst as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(inp - 1);
            (lo, hi, s - lo as f64)
        };
        LogMelImage::from_fn(height, width, |y, x| {
            let (y0, y1, fy) = coord(y, height, self.height);
            let (x0, x1, fx) = coord(x, width, self.width);
            let top = self.get(y0, x0) * (1.0 - fx) + self.get(y0, x1) * fx;
            let bottom = self.get(y1, x0) * (1.0 - fx) + self.get(y1, x1) * fx;
            top * (1.0 - fy) + bottom * fy
        })
    }
}

/// Cosine similarity of two equally long vectors.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn weighted_sum(maps: &[f64], weights: &[f64], pixels: usize) -> Vec<f64> {
    let mut out = vec![0.0; pixels];
    for (w, f) in weights.iter().zip(maps.chunks(pixels)) {
        for (o, v) in out.iter_mut().zip(f) {
            *o += w * v;
        }
    }
    out
}

/// Feature maps `K x H x W` of the first sample at the output of `layer`.
fn feature_maps(net: &NetworkState, layer: usize) -> Result<(&[f64], [usize; 3])> {
    let cache = net
        .cache()
        .ok_or_else(|| Error::State("no retained forward pass".into()))?;
    let act = &cache.activations[layer + 1];
    match act.shape() {
        [_, k, h, w] => Ok((act.sample(0), [*k, *h, *w])),
        other => Err(Error::Parameter(format!(
            "layer {layer} output {other:?} is not a convolutional feature map"
        ))),
    }
}

fn check_class(net: &NetworkState, class_id: usize) -> Result<()> {
    if class_id >= net.n_classes() {
        return Err(Error::Parameter(format!(
            "class {class_id} outside {} classes",
            net.n_classes()
        )));
    }
    Ok(())
}

/// CAM from the maps feeding global average pooling and the weights of the
/// linear head, for the first sample of the retained pass.
pub fn cam_gap(net: &NetworkState, class_id: usize) -> Result<Cam> {
    if net.arch() != Arch::Gap {
        return Err(Error::Unsupported("CAM needs a global-average-pooling network; use Grad-CAM".into()));
    }
    check_class(net, class_id)?;
    let trunk = net.trunk_output_index();
    let (maps, [k, h, w]) = feature_maps(net, trunk)?;
    let head = net.layers()[trunk + 1..]
        .iter()
        .find(|l| matches!(l.spec, LayerSpec::FullyConnected { .. }))
        .ok_or_else(|| Error::State("no linear head after pooling".into()))?;
    let weights = head.params[0].data()[class_id * k..(class_id + 1) * k].to_vec();
    Ok(Cam {
        map: weighted_sum(maps, &weights, h * w),
        height: h,
        width: w,
        class_id,
        layer_index: net.trunk_output_row(),
        channel_weights: weights,
        pixel_count: h * w,
    })
}

/// Bias of the linear head for `class_id` (GAP networks).
pub fn head_bias(net: &NetworkState, class_id: usize) -> Result<f64> {
    let trunk = net.trunk_output_index();
    net.layers()[trunk + 1..]
        .iter()
        .find(|l| matches!(l.spec, LayerSpec::FullyConnected { .. }))
        .map(|l| l.params[1].data()[class_id])
        .ok_or_else(|| Error::State("no linear head after pooling".into()))
}

/// Grad-CAM at table row `row` for the first sample of the retained pass,
/// using gradients of the pre-softmax score. No rectification is applied.
pub fn grad_cam(net: &NetworkState, class_id: usize, row: usize) -> Result<Cam> {
    check_class(net, class_id)?;
    let layer = net
        .row_output_index(row)
        .ok_or_else(|| Error::Parameter(format!("network has no layer row {row}")))?;
    let (maps, [k, h, w]) = feature_maps(net, layer)?;
    let logits = net.logits()?;
    let mut seed = Tensor::zeros(logits.shape());
    seed.data_mut()[class_id] = 1.0;
    let grads = net.backward_from(net.layers().len() - 1, &seed, false)?;
    let g = grads.activations[layer]
        .as_ref()
        .ok_or_else(|| Error::State("gradient did not reach the requested layer".into()))?;
    let pixels = h * w;
    let weights: Vec<f64> = g
        .sample(0)
        .chunks(pixels)
        .map(|c| c.iter().sum::<f64>() / pixels as f64)
        .collect();
    debug_assert_eq!(weights.len(), k);
    Ok(Cam {
        map: weighted_sum(maps, &weights, pixels),
        height: h,
        width: w,
        class_id,
        layer_index: row,
        channel_weights: weights,
        pixel_count: pixels,
    })
}

/// 8-bit RGB raster, row-major from the top-left pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OverlayImage {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
}

impl OverlayImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Gray levels in `[0, 255]` from min-max scaling; a flat image is black.
fn gray_levels(img: &LogMelImage) -> LogMelImage {
    let (lo, hi) = img.min_max();
    let span = hi - lo;
    img.map(|v| if span > 0.0 { 255.0 * (v - lo) / span } else { 0.0 })
}

/// Min-max scaled grayscale picture of an image, time left to right and
/// frequency increasing upwards.
pub fn render_grayscale(img: &LogMelImage) -> OverlayImage {
    let gray = gray_levels(img);
    let (frames, bins) = img.shape();
    let mut rgb = Vec::with_capacity(frames * bins * 3);
    for y in 0..bins {
        for x in 0..frames {
            let g = gray.get(x, bins - 1 - y).round() as u8;
            rgb.extend([g, g, g]);
        }
    }
    OverlayImage {
        width: frames,
        height: bins,
        rgb,
    }
}

/// Blends the upsampled map over the grayscale image: positive values
/// toward red, negative toward blue, each branch scaled by its own maximum
/// magnitude and by `alpha`.
pub fn render_overlay(img: &LogMelImage, cam: &Cam, alpha: f64) -> Result<OverlayImage> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Parameter(format!("alpha must be in [0,1], got {alpha}")));
    }
    let (frames, bins) = img.shape();
    let act = cam.upsample(frames, bins);
    let max_pos = act.values().iter().cloned().fold(0.0, f64::max);
    let max_neg = act.values().iter().map(|v| -v).fold(0.0, f64::max);
    let gray = gray_levels(img);
    let mut rgb = Vec::with_capacity(frames * bins * 3);
    for y in 0..bins {
        let m = bins - 1 - y;
        for t in 0..frames {
            let g = gray.get(t, m);
            let v = act.get(t, m);
            let (weight, target) = if v > 0.0 {
                (alpha * v / max_pos, [255.0, 0.0, 0.0])
            } else if v < 0.0 {
                (alpha * -v / max_neg, [0.0, 0.0, 255.0])
            } else {
                (0.0, [0.0; 3])
            };
            rgb.extend(
                target
                    .iter()
                    .map(|&c| ((1.0 - weight) * g + weight * c).round().clamp(0.0, 255.0) as u8),
            );
        }
    }
    Ok(OverlayImage {
        width: frames,
        height: bins,
        rgb,
    })
}

/// Mean activation magnitude on loud pixels versus the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventActivationReport {
    pub threshold: f64,
    pub high_energy_mean: f64,
    pub background_mean: f64,
    /// `high_energy_mean / background_mean`; infinite when the background
    /// carries no activation at all.
    pub ratio: f64,
}

/// Splits pixels at the `energy_quantile` of the log-Mel values and compares
/// mean `|activation|` (upsampled map) above versus at-or-below it.
pub fn event_activation_report(img: &LogMelImage, cam: &Cam, energy_quantile: f64) -> Result<EventActivationReport> {
    if !(0.0..1.0).contains(&energy_quantile) {
        return Err(Error::Parameter(format!(
            "quantile must be in [0,1), got {energy_quantile}"
        )));
    }
    let (frames, bins) = img.shape();
    let act = cam.upsample(frames, bins);
    let mut sorted = img.values().to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((energy_quantile * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    let threshold = sorted[rank - 1];
    let (mut hi_sum, mut hi_n, mut lo_sum, mut lo_n) = (0.0, 0usize, 0.0, 0usize);
    for (&e, &a) in img.values().iter().zip(act.values()) {
        if e > threshold {
            hi_sum += a.abs();
            hi_n += 1;
        } else {
            lo_sum += a.abs();
            lo_n += 1;
        }
    }
    let mean = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    let (high, low) = (mean(hi_sum, hi_n), mean(lo_sum, lo_n));
    let ratio = if low > 0.0 {
        high / low
    } else if high > 0.0 {
        f64::INFINITY
    } else {
        1.0
    };
    Ok(EventActivationReport {
        threshold,
        high_energy_mean: high,
        background_mean: low,
        ratio,
    })
}
