//! Wall-clock comparison of the enhancement filters.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::LogMelImage;
use crate::enhance::{enhance_with, EnhanceKind};
use crate::error::{Error, Result};

/// One timed preprocessing variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchCase {
    pub kind: EnhanceKind,
    pub median_kernel: (usize, usize),
}

impl BenchCase {
    pub fn new(kind: EnhanceKind) -> Self {
        Self {
            kind,
            median_kernel: crate::enhance::DEFAULT_MEDIAN_KERNEL,
        }
    }

    pub fn median(kt: usize, kf: usize) -> Self {
        Self {
            kind: EnhanceKind::MedianResidual,
            median_kernel: (kt, kf),
        }
    }

    pub fn label(&self) -> String {
        match self.kind {
            EnhanceKind::MedianResidual => {
                format!("Medium({},{})", self.median_kernel.0, self.median_kernel.1)
            }
            k => k.label().to_string(),
        }
    }
}

/// The four timings reported for the reference workload.
pub fn reference_cases() -> Vec<BenchCase> {
    vec![
        BenchCase::new(EnhanceKind::DoG),
        BenchCase::new(EnhanceKind::Sobel),
        BenchCase::median(51, 7),
        BenchCase::median(3, 3),
    ]
}

/// Identical uniform random images for every case.
pub fn bench_inputs(shape: (usize, usize), n_images: usize, seed: u64) -> Vec<LogMelImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_images)
        .map(|_| LogMelImage::from_fn(shape.0, shape.1, |_, _| rng.gen_range(-1.0..1.0)))
        .collect()
}

/// Seconds to enhance all images, single-threaded, per case; each value is
/// the median of `runs` repetitions.
pub fn bench_preprocess(
    shape: (usize, usize),
    n_images: usize,
    cases: &[BenchCase],
    runs: usize,
    seed: u64,
) -> Result<Vec<(String, f64)>> {
    if n_images == 0 {
        return Err(Error::Parameter("need at least one image".into()));
    }
    if cases.is_empty() {
        return Err(Error::Parameter("no preprocessing kinds to time".into()));
    }
    if runs == 0 || shape.0 == 0 || shape.1 == 0 {
        return Err(Error::Parameter("runs and image size must be positive".into()));
    }
    let images = bench_inputs(shape, n_images, seed);
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let mut times = Vec::with_capacity(runs);
        for _ in 0..runs {
            let start = Instant::now();
            for img in &images {
                std::hint::black_box(enhance_with(img, case.kind, case.median_kernel)?);
            }
            times.push(start.elapsed().as_secs_f64());
        }
        times.sort_by(f64::total_cmp);
        out.push((case.label(), times[runs / 2]));
    }
    Ok(out)
}
