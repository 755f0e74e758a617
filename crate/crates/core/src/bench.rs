//! Latency benchmark: a wall-clock warm-up followed by a fixed number of
//! individually timed frames.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use image::RgbImage;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::preprocess;
use crate::graph::{ExecError, Executor, Graph};
use crate::ops::argmax_channels;
use crate::weights::WeightManifest;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub warmup_seconds: f64,
    pub frames: usize,
    /// `(height, width)`.
    pub input_size: (usize, usize),
    /// Intra-op threads; 0 uses one per core.
    pub threads: usize,
    /// Time standardization and argmax along with the forward pass.
    pub include_pre_post: bool,
    /// Seed for the synthetic input image.
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup_seconds: 30.0,
            frames: 300,
            input_size: (224, 224),
            threads: 0,
            include_pre_post: true,
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.frames == 0 {
            return Err(BenchError::Config("frames must be >= 1".into()));
        }
        if !(self.warmup_seconds >= 0.0) || !self.warmup_seconds.is_finite() {
            return Err(BenchError::Config(format!(
                "warmup_seconds must be a finite value >= 0, got {}",
                self.warmup_seconds
            )));
        }
        if self.input_size.0 == 0 || self.input_size.1 == 0 {
            return Err(BenchError::Config("input size must be non-zero".into()));
        }
        Ok(())
    }
}

/// Everything a latency figure depends on besides the hardware itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub threads: usize,
    pub graph: String,
    pub input_size: (usize, usize),
    pub include_pre_post: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub mean_ms: f64,
    /// Population variance of the samples, in ms squared.
    pub variance_ms: f64,
    pub fps: f64,
    pub warmup_frames: usize,
    pub samples_ms: Vec<f64>,
    pub fingerprint: Fingerprint,
}

impl BenchResult {
    fn from_samples(samples_ms: Vec<f64>, warmup_frames: usize, fingerprint: Fingerprint) -> Self {
        let n = samples_ms.len() as f64;
        let mean_ms = samples_ms.iter().sum::<f64>() / n;
        let variance_ms = samples_ms
            .iter()
            .map(|s| (s - mean_ms).powi(2))
            .sum::<f64>()
            / n;
        BenchResult {
            mean_ms,
            variance_ms,
            fps: 1000.0 / mean_ms,
            warmup_frames,
            samples_ms,
            fingerprint,
        }
    }

    /// Latencies are only comparable when measured under the same setup.
    pub fn comparable(&self, other: &BenchResult) -> bool {
        self.fingerprint == other.fingerprint
    }

    pub fn to_text(&self) -> String {
        let f = &self.fingerprint;
        let mut s = String::new();
        let _ = writeln!(s, "graph        {}", f.graph);
        let _ = writeln!(s, "input        {}x{}", f.input_size.1, f.input_size.0);
        let _ = writeln!(s, "threads      {}", f.threads);
        let _ = writeln!(
            s,
            "pre/post     {}",
            if f.include_pre_post {
                "timed"
            } else {
                "excluded"
            }
        );
        let _ = writeln!(s, "warm-up      {} frames", self.warmup_frames);
        let _ = writeln!(s, "frames       {}", self.samples_ms.len());
        let _ = writeln!(s, "mean (ms)    {:.3}", self.mean_ms);
        let _ = writeln!(s, "var (ms^2)   {:.3}", self.variance_ms);
        let _ = writeln!(s, "fps          {:.2}", self.fps);
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn csv_header() -> &'static str {
        "graph,input,threads,include_pre_post,frames,mean_ms,variance_ms,fps"
    }

    pub fn to_csv_row(&self) -> String {
        let f = &self.fingerprint;
        format!(
            "{},{}x{},{},{},{},{:.6},{:.6},{:.4}",
            f.graph,
            f.input_size.1,
            f.input_size.0,
            f.threads,
            f.include_pre_post,
            self.samples_ms.len(),
            self.mean_ms,
            self.variance_ms,
            self.fps
        )
    }
}

/// Deterministic noise image used when no input file is given.
pub fn synthetic_image(height: usize, width: usize, seed: u64) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = RgbImage::new(width as u32, height as u32);
    for px in img.pixels_mut() {
        px.0 = rng.random();
    }
    img
}

pub fn bench(
    graph: &Graph,
    weights: &WeightManifest,
    cfg: &BenchConfig,
) -> Result<BenchResult, BenchError> {
    let img = synthetic_image(cfg.input_size.0, cfg.input_size.1, cfg.seed);
    bench_image(graph, weights, cfg, &img)
}

/// Benchmarks on a given image; its size overrides `cfg.input_size`.
pub fn bench_image(
    graph: &Graph,
    weights: &WeightManifest,
    cfg: &BenchConfig,
    img: &RgbImage,
) -> Result<BenchResult, BenchError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()?;
    let threads = pool.current_num_threads();
    let exec = Executor::new(graph, weights)?;
    let input_size = (img.height() as usize, img.width() as usize);
    let pre = preprocess(img);

    let frame = || -> Result<Duration, ExecError> {
        if cfg.include_pre_post {
            let t0 = Instant::now();
            let x = preprocess(img);
            let logits = exec.logits(&x)?;
            let labels = argmax_channels(&logits).map_err(|source| ExecError::Kernel {
                layer: "argmax".into(),
                source,
            })?;
            let dt = t0.elapsed();
            std::hint::black_box(labels);
            Ok(dt)
        } else {
            let t0 = Instant::now();
            let logits = exec.logits(&pre)?;
            let dt = t0.elapsed();
            std::hint::black_box(logits);
            Ok(dt)
        }
    };

    pool.install(|| {
        let warmup = Duration::from_secs_f64(cfg.warmup_seconds);
        let start = Instant::now();
        let mut warmup_frames = 0;
        while start.elapsed() < warmup {
            frame()?;
            warmup_frames += 1;
        }
        let mut samples = Vec::with_capacity(cfg.frames);
        for _ in 0..cfg.frames {
            samples.push(frame()?.as_secs_f64() * 1000.0);
        }
        log::debug!(
            "collected {} samples after {warmup_frames} warm-up frames",
            samples.len()
        );
        Ok(BenchResult::from_samples(
            samples,
            warmup_frames,
            Fingerprint {
                threads,
                graph: graph.fingerprint(),
                input_size,
                include_pre_post: cfg.include_pre_post,
            },
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fp() -> Fingerprint {
        Fingerprint {
            threads: 1,
            graph: "abc".into(),
            input_size: (2, 2),
            include_pre_post: true,
        }
    }

    #[test]
    fn statistics() {
        let r = BenchResult::from_samples(vec![1.0, 3.0], 0, fp());
        assert_eq!(r.mean_ms, 2.0);
        assert_eq!(r.variance_ms, 1.0);
        assert_eq!(r.fps, 500.0);
        let one = BenchResult::from_samples(vec![7.5], 0, fp());
        assert_eq!(one.variance_ms, 0.0);
    }

    #[test]
    fn comparability_follows_fingerprint() {
        let a = BenchResult::from_samples(vec![1.0], 0, fp());
        let mut b = a.clone();
        assert!(a.comparable(&b));
        b.fingerprint.threads = 4;
        assert!(!a.comparable(&b));
    }

    #[test]
    fn config_validation() {
        assert!(BenchConfig::default().validate().is_ok());
        let bad = BenchConfig {
            frames: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = BenchConfig {
            warmup_seconds: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let r = BenchResult::from_samples(vec![1.0, 2.0, 4.0], 3, fp());
        let back: BenchResult = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
        assert_eq!(
            r.to_csv_row().split(',').count(),
            BenchResult::csv_header().split(',').count()
        );
    }
}
