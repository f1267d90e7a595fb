//! Binary containers: feature images (`SLNS`), normalization statistics and
//! model checkpoints (`SLNN`). All numbers are little-endian; floats are
//! 64-bit.

use std::path::Path;

use scenecam_core::dsp::{LogMelImage, NormStats, StftConfig};
use scenecam_core::enhance::EnhanceKind;
use scenecam_core::eval::FeaturePipeline;
use scenecam_core::nn::{BnRunning, Layer, LayerSpec, NetworkState, Tensor};

use crate::atomic::{read, write_atomic};
use crate::error::{Error, Result};

pub const FEATURE_MAGIC: &[u8; 4] = b"SLNS";
pub const FEATURE_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SLNN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("value fits in u32").to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, vs: &[f64]) {
    out.reserve(8 * vs.len());
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Bounds-checked little-endian reader.
struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::format(self.path, format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::format(self.path, format!("{what} length overflows")))?;
        Ok(self
            .take(bytes, what)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn magic(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        if self.take(4, "magic")? != magic {
            return Err(Error::format(
                self.path,
                format!("expected magic {}", String::from_utf8_lossy(magic)),
            ));
        }
        let v = self.u32("version")?;
        if v != version as usize {
            return Err(Error::Unsupported {
                path: self.path.to_path_buf(),
                msg: format!("version {v}, expected {version}"),
            });
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::format(
                self.path,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn encode_features(img: &LogMelImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * img.values().len());
    out.extend_from_slice(FEATURE_MAGIC);
    put_u32(&mut out, FEATURE_VERSION as usize);
    put_u32(&mut out, img.frames());
    put_u32(&mut out, img.bins());
    put_f64s(&mut out, img.values());
    out
}

pub fn decode_features(bytes: &[u8], path: &Path) -> Result<LogMelImage> {
    let mut r = Reader::new(bytes, path);
    r.magic(FEATURE_MAGIC, FEATURE_VERSION)?;
    let t = r.u32("frame count")?;
    let m = r.u32("bin count")?;
    let n = t
        .checked_mul(m)
        .ok_or_else(|| Error::format(path, "image size overflows"))?;
    let values = r.f64s(n, "feature values")?;
    r.finish()?;
    Ok(LogMelImage::new(t, m, values)?)
}

pub fn write_features(path: &Path, img: &LogMelImage) -> Result<()> {
    write_atomic(path, &encode_features(img))
}

pub fn read_features(path: &Path) -> Result<LogMelImage> {
    decode_features(&read(path)?, path)
}

fn put_stats(out: &mut Vec<u8>, stats: &NormStats) {
    put_u32(out, stats.bins());
    put_f64s(out, &stats.mean);
    put_f64s(out, &stats.std);
}

fn take_stats(r: &mut Reader) -> Result<NormStats> {
    let m = r.u32("statistics size")?;
    let mean = r.f64s(m, "means")?;
    let std = r.f64s(m, "standard deviations")?;
    Ok(NormStats { mean, std })
}

pub fn encode_stats(stats: &NormStats) -> Vec<u8> {
    let mut out = Vec::new();
    put_stats(&mut out, stats);
    out
}

pub fn decode_stats(bytes: &[u8], path: &Path) -> Result<NormStats> {
    let mut r = Reader::new(bytes, path);
    let s = take_stats(&mut r)?;
    r.finish()?;
    Ok(s)
}

/// How features were produced for a model, so evaluation repeats it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub pipeline: FeaturePipeline,
    pub labels: Vec<String>,
}

impl ModelMeta {
    fn to_text(&self) -> String {
        let p = &self.pipeline;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            s.push_str(k);
            s.push('=');
            s.push_str(&v);
            s.push('\n');
        };
        kv("kind", p.kind.name().to_string());
        kv("median_kernel", format!("{},{}", p.median_kernel.0, p.median_kernel.1));
        kv("window_ms", p.stft.window_ms.to_string());
        kv("hop_ms", p.stft.hop_ms.to_string());
        kv("fft_len", p.stft.fft_len.to_string());
        kv("n_mels", p.stft.n_mels.to_string());
        kv("segment_s", p.segment_s.to_string());
        kv("segment_hop_s", p.hop_s.to_string());
        for l in &self.labels {
            kv("label", l.clone());
        }
        s
    }

    fn from_text(text: &str, path: &Path) -> Result<Self> {
        let bad = |msg: String| Error::format(path, format!("metadata: {msg}"));
        let mut pipeline = FeaturePipeline::new(EnhanceKind::LogMel);
        let mut stft = StftConfig::default();
        let mut labels = Vec::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("line '{line}'")))?;
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(format!("{k}={v}")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad(format!("{k}={v}")));
            match k {
                "kind" => pipeline.kind = v.parse().map_err(|_| bad(format!("kind {v}")))?,
                "median_kernel" => {
                    let (a, b) = v.split_once(',').ok_or_else(|| bad(format!("median_kernel {v}")))?;
                    pipeline.median_kernel = (int(a)?, int(b)?);
                }
                "window_ms" => stft.window_ms = num(v)?,
                "hop_ms" => stft.hop_ms = num(v)?,
                "fft_len" => stft.fft_len = int(v)?,
                "n_mels" => stft.n_mels = int(v)?,
                "segment_s" => pipeline.segment_s = num(v)?,
                "segment_hop_s" => pipeline.hop_s = num(v)?,
                "label" => labels.push(v.to_string()),
                _ => return Err(bad(format!("unknown key {k}"))),
            }
        }
        pipeline.stft = stft;
        Ok(Self { pipeline, labels })
    }
}

/// A trained network with everything needed to score new audio.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub network: NetworkState,
    pub stats: NormStats,
    pub meta: ModelMeta,
}

fn put_spec(out: &mut Vec<u8>, spec: &LayerSpec) {
    match *spec {
        LayerSpec::Conv {
            in_ch,
            out_ch,
            kernel,
            pad,
            stride,
        } => {
            out.push(1);
            for v in [in_ch, out_ch, kernel, pad, stride] {
                put_u32(out, v);
            }
        }
        LayerSpec::BatchNorm { ch } => {
            out.push(2);
            put_u32(out, ch);
        }
        LayerSpec::ReLU => out.push(3),
        LayerSpec::MaxPool { kernel, stride } => {
            out.push(4);
            put_u32(out, kernel);
            put_u32(out, stride);
        }
        LayerSpec::Flatten => out.push(5),
        LayerSpec::Dropout { p } => {
            out.push(6);
            put_f64s(out, &[p]);
        }
        LayerSpec::FullyConnected { inputs, outputs } => {
            out.push(7);
            put_u32(out, inputs);
            put_u32(out, outputs);
        }
        LayerSpec::GlobalAvgPool => out.push(8),
        LayerSpec::Softmax => out.push(9),
    }
}

fn take_spec(r: &mut Reader) -> Result<LayerSpec> {
    let tag = r.u8("layer tag")?;
    Ok(match tag {
        1 => LayerSpec::Conv {
            in_ch: r.u32("conv")?,
            out_ch: r.u32("conv")?,
            kernel: r.u32("conv")?,
            pad: r.u32("conv")?,
            stride: r.u32("conv")?,
        },
        2 => LayerSpec::BatchNorm { ch: r.u32("batchnorm")? },
        3 => LayerSpec::ReLU,
        4 => LayerSpec::MaxPool {
            kernel: r.u32("maxpool")?,
            stride: r.u32("maxpool")?,
        },
        5 => LayerSpec::Flatten,
        6 => LayerSpec::Dropout { p: r.f64("dropout")? },
        7 => LayerSpec::FullyConnected {
            inputs: r.u32("linear")?,
            outputs: r.u32("linear")?,
        },
        8 => LayerSpec::GlobalAvgPool,
        9 => LayerSpec::Softmax,
        t => return Err(Error::format(r.path, format!("unknown layer tag {t}"))),
    })
}

/// Layout: magic, version, input shape, layer records, parameter tensors
/// in layer order, BatchNorm running statistics, normalization statistics,
/// then length-prefixed `key=value` metadata.
pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let net = &ck.network;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION as usize);
    for d in net.input_shape() {
        put_u32(&mut out, d);
    }
    put_u32(&mut out, net.layers().len());
    for l in net.layers() {
        put_spec(&mut out, &l.spec);
    }
    for l in net.layers() {
        for p in &l.params {
            put_f64s(&mut out, p.data());
        }
    }
    for r in net.layers().iter().filter_map(|l| l.running.as_ref()) {
        put_f64s(&mut out, &r.mean);
        put_f64s(&mut out, &r.var);
    }
    put_stats(&mut out, &ck.stats);
    let meta = ck.meta.to_text();
    put_u32(&mut out, meta.len());
    out.extend_from_slice(meta.as_bytes());
    out
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, path);
    r.magic(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let input = [r.u32("input shape")?, r.u32("input shape")?, r.u32("input shape")?];
    let n = r.u32("layer count")?;
    if n > 4096 {
        return Err(Error::format(path, format!("implausible layer count {n}")));
    }
    let specs = (0..n).map(|_| take_spec(&mut r)).collect::<Result<Vec<_>>>()?;
    let mut layers: Vec<Layer> = specs.into_iter().map(Layer::new).collect();
    for l in &mut layers {
        for p in &mut l.params {
            let shape = p.shape().to_vec();
            *p = Tensor::new(shape, r.f64s(p.len(), "parameters")?)?;
        }
    }
    for l in &mut layers {
        if let Some(run) = l.running.as_mut() {
            let ch = run.mean.len();
            *run = BnRunning {
                mean: r.f64s(ch, "running mean")?,
                var: r.f64s(ch, "running variance")?,
            };
        }
    }
    let stats = take_stats(&mut r)?;
    let meta_len = r.u32("metadata length")?;
    let text = std::str::from_utf8(r.take(meta_len, "metadata")?)
        .map_err(|_| Error::format(path, "metadata is not UTF-8"))?;
    let meta = ModelMeta::from_text(text, path)?;
    r.finish()?;
    let network = NetworkState::from_layers(input, layers)?;
    if stats.bins() != input[2] {
        return Err(Error::format(path, "normalization statistics do not match the input width"));
    }
    if !meta.labels.is_empty() && meta.labels.len() != network.n_classes() {
        return Err(Error::format(path, "label count does not match the output layer"));
    }
    Ok(Checkpoint { network, stats, meta })
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    write_atomic(path, &encode_checkpoint(ck))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use scenecam_core::nn::{Arch, ArchConfig};

    fn p() -> &'static Path {
        Path::new("x")
    }

    #[test]
    fn features_round_trip() {
        let img = LogMelImage::from_fn(3, 4, |t, m| t as f64 - 0.25 * m as f64);
        let bytes = encode_features(&img);
        assert_eq!(&bytes[..4], b"SLNS");
        assert_eq!(bytes.len(), 16 + 8 * 12);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(decode_features(&bytes, p()).unwrap(), img);
        assert!(matches!(decode_features(&bytes[..20], p()), Err(Error::Format { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_features(&bad, p()).is_err());
        let mut v2 = bytes;
        v2[4] = 2;
        assert!(matches!(decode_features(&v2, p()), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn stats_round_trip() {
        let s = NormStats {
            mean: vec![1.0, -2.5],
            std: vec![0.5, 1e-8],
        };
        let b = encode_stats(&s);
        assert_eq!(b.len(), 4 + 32);
        assert_eq!(decode_stats(&b, p()).unwrap(), s);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ArchConfig {
            conv_widths: [2, 3, 4, 4, 3],
            fc_dim: 5,
            dropout: 0.5,
        };
        for arch in Arch::ALL {
            let mut net = NetworkState::build(arch, 3, [1, 20, 16], &cfg, 4).unwrap();
            for l in net.layers_mut() {
                if let Some(r) = l.running.as_mut() {
                    r.mean[0] = 0.25;
                    r.var[0] = 2.0;
                }
            }
            let mut pipeline = FeaturePipeline::new(EnhanceKind::MedianResidual);
            pipeline.stft.n_mels = 16;
            pipeline.median_kernel = (5, 3);
            let ck = Checkpoint {
                network: net,
                stats: NormStats {
                    mean: vec![0.5; 16],
                    std: vec![2.0; 16],
                },
                meta: ModelMeta {
                    pipeline,
                    labels: vec!["a".into(), "b".into(), "c".into()],
                },
            };
            let bytes = encode_checkpoint(&ck);
            let back = decode_checkpoint(&bytes, p()).unwrap();
            assert_eq!(back.network.layers(), ck.network.layers());
            assert_eq!(back.network.arch(), arch);
            assert_eq!(back.stats, ck.stats);
            assert_eq!(back.meta, ck.meta);
            assert_eq!(encode_checkpoint(&back), bytes);
            assert!(decode_checkpoint(&bytes[..bytes.len() - 1], p()).is_err());
        }
    }
}
