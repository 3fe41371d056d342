//! Deterministic acoustic target features: framing, spectrogram, mel
//! filterbank, MFCC, and pooling from the 100 fps audio rate down to
//! the 25 fps video rate.

use crate::error::{CoreError, Result};
use crate::store::ParameterStore;
use crate::tensor::Tensor;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(CoreError::invalid("waveform", "sample_rate must be > 0"));
        }
        Ok(Waveform { samples, sample_rate })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn rms(&self) -> f32 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let s: f64 = self.samples.iter().map(|&v| (v as f64) * (v as f64)).sum();
        (s / self.samples.len() as f64).sqrt() as f32
    }
}

/// T x D feature matrix with an explicit frame rate (100 or 25 fps).
#[derive(Debug, Clone)]
pub struct AcousticFeatureSeq {
    pub values: Tensor<f32>,
    pub frame_rate: u32,
}

impl AcousticFeatureSeq {
    pub fn new(values: Tensor<f32>, frame_rate: u32) -> Result<Self> {
        if values.shape().len() != 2 {
            return Err(CoreError::shape("features", format!("{:?}", values.shape())));
        }
        if frame_rate != 100 && frame_rate != 25 {
            return Err(CoreError::invalid("features", format!("frame_rate {frame_rate}")));
        }
        if values.data().iter().any(|v| !v.is_finite()) {
            return Err(CoreError::invalid("features", "non-finite value"));
        }
        Ok(AcousticFeatureSeq { values, frame_rate })
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.values.shape()[1]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    pub fmax: f64,
}

impl MelConfig {
    /// 16 kHz defaults: 25 ms frames at 100 fps, 20 coefficients.
    pub fn default_16k() -> Self {
        MelConfig { n_fft: 400, hop: 160, n_mels: 26, n_mfcc: 20, fmin: 0.0, fmax: 8000.0 }
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= nyquist) {
            return Err(CoreError::invalid(
                "mel_config",
                format!("need 0 <= fmin < fmax <= {nyquist}, got [{}, {}]", self.fmin, self.fmax),
            ));
        }
        if self.n_mfcc > self.n_mels {
            return Err(CoreError::invalid(
                "mel_config",
                format!("n_mfcc {} > n_mels {}", self.n_mfcc, self.n_mels),
            ));
        }
        if self.hop > self.n_fft || self.hop == 0 {
            return Err(CoreError::invalid(
                "mel_config",
                format!("need 0 < hop <= n_fft, got hop {} n_fft {}", self.hop, self.n_fft),
            ));
        }
        Ok(())
    }
}

/// Slice into hop-spaced frames of length n_fft with a periodic Hann
/// window applied. Frame count is 1 + floor((len - n_fft) / hop).
pub fn frame_signal(wave: &Waveform, n_fft: usize, hop: usize) -> Result<Vec<Vec<f64>>> {
    if wave.samples.len() < n_fft {
        return Err(CoreError::TooShort { got: wave.samples.len(), need: n_fft });
    }
    if hop == 0 {
        return Err(CoreError::invalid("frame_signal", "hop must be > 0"));
    }
    let window: Vec<f64> = (0..n_fft)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / n_fft as f64).cos())
        .collect();
    let n_frames = 1 + (wave.samples.len() - n_fft) / hop;
    let mut frames = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let start = f * hop;
        frames.push(
            (0..n_fft)
                .map(|n| wave.samples[start + n] as f64 * window[n])
                .collect(),
        );
    }
    Ok(frames)
}

/// |DFT|^2 of one windowed frame, bins 0..=n_fft/2 (FFT-based).
pub fn power_spectrum(frame: &[f64]) -> Vec<f64> {
    let n = frame.len();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.process(&mut buf);
    buf[..n / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Band edge frequencies: n_mels + 2 points, mel-spaced in [fmin, fmax].
pub fn mel_band_edges(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.n_mels + 1) as f64))
        .collect()
}

/// Triangular, area-normalized mel filterbank over n_fft/2 + 1 bins.
pub fn mel_filterbank(cfg: &MelConfig, sample_rate: u32) -> Vec<Vec<f64>> {
    let edges = mel_band_edges(cfg);
    let n_bins = cfg.n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / cfg.n_fft as f64;
    let mut filters = Vec::with_capacity(cfg.n_mels);
    for k in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[k], edges[k + 1], edges[k + 2]);
        let norm = 2.0 / (hi - lo);
        let mut filt = vec![0.0; n_bins];
        for (bin, w) in filt.iter_mut().enumerate() {
            let f = bin as f64 * bin_hz;
            if f > lo && f < center {
                *w = norm * (f - lo) / (center - lo);
            } else if (f - center).abs() < 1e-12 {
                *w = norm;
            } else if f > center && f < hi {
                *w = norm * (hi - f) / (hi - center);
            }
        }
        filters.push(filt);
    }
    filters
}

/// Orthonormal DCT-II of `x`, keeping the first n_out coefficients.
pub fn dct2_orthonormal(x: &[f64], n_out: usize) -> Vec<f64> {
    let n = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (std::f64::consts::PI / n * (i as f64 + 0.5) * k as f64).cos())
                .sum();
            scale * s
        })
        .collect()
}

/// Log floor applied before the DCT; keeps silence finite.
pub const LOG_FLOOR: f64 = 1e-10;

/// MFCC features at 100 fps: frame -> |DFT|^2 -> mel filterbank ->
/// log(x + 1e-10) -> orthonormal DCT-II, keeping n_mfcc coefficients.
pub fn mfcc_features(wave: &Waveform, cfg: &MelConfig) -> Result<AcousticFeatureSeq> {
    cfg.validate(wave.sample_rate)?;
    let frames = frame_signal(wave, cfg.n_fft, cfg.hop)?;
    let filters = mel_filterbank(cfg, wave.sample_rate);
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(frames.len());
    for frame in &frames {
        let power = power_spectrum(frame);
        let mels: Vec<f64> = filters
            .iter()
            .map(|filt| filt.iter().zip(&power).map(|(w, p)| w * p).sum::<f64>())
            .collect();
        let logs: Vec<f64> = mels.iter().map(|&m| (m + LOG_FLOOR).ln()).collect();
        rows.push(dct2_orthonormal(&logs, cfg.n_mfcc).iter().map(|&v| v as f32).collect());
    }
    let values = Tensor::from_rows(
        &rows.iter().map(|r| r.clone()).collect::<Vec<_>>(),
    );
    AcousticFeatureSeq::new(values, 100)
}

/// Average non-overlapping groups of 4 frames: 100 fps -> 25 fps.
/// Trailing remainder frames are dropped.
pub fn pool_to_video_rate(feats: &AcousticFeatureSeq) -> Result<AcousticFeatureSeq> {
    if feats.frame_rate != 100 {
        return Err(CoreError::invalid(
            "pool_to_video_rate",
            format!("input frame_rate {} must be 100", feats.frame_rate),
        ));
    }
    let t_in = feats.frames();
    if t_in < 4 {
        return Err(CoreError::TooShort { got: t_in, need: 4 });
    }
    let d = feats.dim();
    let t_out = t_in / 4;
    let mut out = Tensor::zeros(vec![t_out, d]);
    for t in 0..t_out {
        for j in 0..d {
            let mut acc = 0.0f32;
            for k in 0..4 {
                acc += feats.values.at2(4 * t + k, j);
            }
            out.data_mut()[t * d + j] = acc / 4.0;
        }
    }
    AcousticFeatureSeq::new(out, 25)
}

/// Write feature sequences into one container file plus a sidecar text
/// manifest listing (utterance id, T, D, frame_rate) per line.
pub fn dump_features(path: impl AsRef<Path>, entries: &[(String, AcousticFeatureSeq)]) -> Result<()> {
    let mut store = ParameterStore::new();
    for (id, feats) in entries {
        store.insert_tensor(id.clone(), feats.values.clone())?;
    }
    store.save(path.as_ref())?;
    let sidecar = path.as_ref().with_extension("manifest.txt");
    let mut f = std::fs::File::create(sidecar)?;
    for (id, feats) in entries {
        writeln!(f, "{}\t{}\t{}\t{}", id, feats.frames(), feats.dim(), feats.frame_rate)?;
    }
    Ok(())
}

/// Reference implementations used as independent oracles by the test
/// suites. Kept free of FFT machinery on purpose.
pub mod reference {
    /// O(n^2) DFT magnitude-squared, bins 0..=n/2.
    pub fn naive_power_spectrum(frame: &[f64]) -> Vec<f64> {
        let n = frame.len();
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0f64, 0.0f64);
                for (i, &v) in frame.iter().enumerate() {
                    let ang = -std::f64::consts::TAU * k as f64 * i as f64 / n as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect()
    }
}
