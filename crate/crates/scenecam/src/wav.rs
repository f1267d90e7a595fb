//! 16-bit PCM WAV input and output.

use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};
use scenecam_core::dsp::Waveform;

use crate::atomic::write_atomic;
use crate::error::{Error, Result};

const SCALE: f64 = 32768.0;

fn hound_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        hound::Error::Unsupported => Error::Unsupported {
            path: path.to_path_buf(),
            msg: "encoding not supported".into(),
        },
        other => Error::format(path, other.to_string()),
    }
}

/// Decodes 16-bit PCM bytes; samples are divided by 32768 and stereo is
/// averaged to mono.
pub fn decode_wav(bytes: &[u8], path: &Path) -> Result<Waveform> {
    let reader = WavReader::new(Cursor::new(bytes)).map_err(|e| hound_error(path, e))?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            msg: format!("{}-bit {:?} samples, only 16-bit PCM is read", spec.bits_per_sample, spec.sample_format),
        });
    }
    if !(1..=2).contains(&spec.channels) {
        return Err(Error::Unsupported {
            path: path.to_path_buf(),
            msg: format!("{} channels, only mono and stereo are read", spec.channels),
        });
    }
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| hound_error(path, e))?;
    let samples: Vec<f64> = if spec.channels == 2 {
        if raw.len() % 2 != 0 {
            return Err(Error::format(path, "stereo data with an odd sample count"));
        }
        raw.chunks_exact(2)
            .map(|f| (f[0] as f64 + f[1] as f64) / (2.0 * SCALE))
            .collect()
    } else {
        raw.iter().map(|&s| s as f64 / SCALE).collect()
    };
    Ok(Waveform::new(samples, spec.sample_rate)?)
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    decode_wav(&crate::atomic::read(path)?, path)
}

/// Quantizes to mono 16-bit PCM, clipping to the representable range.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut buf = Cursor::new(Vec::with_capacity(44 + 2 * w.len()));
    {
        let mut writer = WavWriter::new(&mut buf, spec).expect("in-memory WAV header");
        let mut samples = writer.get_i16_writer(w.len() as u32);
        for &s in w.samples() {
            samples.write_sample((s * SCALE).round().clamp(-32768.0, 32767.0) as i16);
        }
        samples.flush().expect("in-memory WAV data");
        writer.finalize().expect("in-memory WAV finalize");
    }
    buf.into_inner()
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    write_atomic(path, &encode_wav(w))
}
