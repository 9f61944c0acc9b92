//! Log-mel front end: framing, STFT, mel filterbank, DCT, energy VAD and
//! short-time mean centering.
//!
//! All networks in this crate operate on the `T x 40` log-mel matrices
//! produced here. MFCCs are only formed at the very end, right before the
//! speaker embedder.

use ndarray::{s, Array1, Array2, Axis};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mono audio with amplitudes nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate: sample_rate.max(1),
        }
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
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

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Mean-square amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self.samples.iter().map(|v| v * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Povey,
    Hamming,
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, len: usize) -> Vec<f64> {
        if len == 1 {
            return vec![1.0];
        }
        let denom = (len - 1) as f64;
        (0..len)
            .map(|n| {
                let c = (2.0 * std::f64::consts::PI * n as f64 / denom).cos();
                match self {
                    WindowKind::Povey => (0.5 - 0.5 * c).powf(0.85),
                    WindowKind::Hamming => 0.54 - 0.46 * c,
                    WindowKind::Hann => 0.5 - 0.5 * c,
                    WindowKind::Rectangular => 1.0,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub frame_length: usize,
    pub frame_shift: usize,
    pub fft_size: usize,
    pub window: WindowKind,
    /// Samples are multiplied by this before analysis. The default puts
    /// energies on the 16-bit PCM scale the VAD offset is calibrated for.
    pub input_scale: f64,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            frame_length: 400,
            frame_shift: 160,
            fft_size: 512,
            window: WindowKind::Povey,
            input_scale: 32768.0,
        }
    }
}

impl FrameConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0 < self.frame_shift
            && self.frame_shift <= self.frame_length
            && self.frame_length <= self.fft_size)
        {
            return Err(Error::invalid(format!(
                "frame config needs 0 < shift ({}) <= length ({}) <= fft size ({})",
                self.frame_shift, self.frame_length, self.fft_size
            )));
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return Err(Error::invalid("input scale must be positive"));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of complete frames in a signal of `len` samples.
    pub fn frame_count(&self, len: usize) -> Option<usize> {
        if len < self.frame_length {
            None
        } else {
            Some((len - self.frame_length) / self.frame_shift + 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub n_filters: usize,
    pub f_min: f64,
    /// `None` means the Nyquist frequency.
    pub f_max: Option<f64>,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_filters: 40,
            f_min: 20.0,
            f_max: None,
            log_floor: 1e-10,
        }
    }
}

impl MelConfig {
    pub fn upper_edge(&self, sample_rate: u32) -> f64 {
        self.f_max.unwrap_or(sample_rate as f64 / 2.0)
    }

    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let f_max = self.upper_edge(sample_rate);
        if self.n_filters == 0 {
            return Err(Error::invalid("mel filterbank needs at least one filter"));
        }
        if !(0.0 <= self.f_min && self.f_min < f_max && f_max <= nyquist) {
            return Err(Error::invalid(format!(
                "mel band edges must satisfy 0 <= {} < {} <= {}",
                self.f_min, f_max, nyquist
            )));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return Err(Error::invalid("log floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    LogMel,
    Mfcc,
}

/// `T x F` matrix of frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub values: Array2<f64>,
    pub kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, kind: FeatureKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("feature matrix has non-finite entries"));
        }
        Ok(Self { values, kind })
    }

    pub fn frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }

    /// Keeps the frames selected by `mask`.
    pub fn select(&self, mask: &FrameMask) -> Result<Self> {
        if mask.len() != self.frames() {
            return Err(Error::Shape(format!(
                "mask has {} entries for {} frames",
                mask.len(),
                self.frames()
            )));
        }
        let rows: Vec<usize> = mask.kept_indices().collect();
        Ok(Self {
            values: self.values.select(Axis(0), &rows),
            kind: self.kind,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameMask {
    pub keep: Vec<bool>,
}

impl FrameMask {
    pub fn len(&self) -> usize {
        self.keep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keep.is_empty()
    }

    pub fn kept(&self) -> usize {
        self.keep.iter().filter(|k| **k).count()
    }

    pub fn kept_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.keep
            .iter()
            .enumerate()
            .filter(|(_, k)| **k)
            .map(|(i, _)| i)
    }
}

/// Windowed DFT of every complete frame, `T x (fft_size/2 + 1)`.
pub fn stft(w: &Waveform, cfg: &FrameConfig) -> Result<Array2<Complex<f64>>> {
    cfg.validate()?;
    let n_frames = cfg.frame_count(w.len()).ok_or_else(|| {
        Error::invalid(format!(
            "utterance of {} samples is shorter than one frame ({} samples)",
            w.len(),
            cfg.frame_length
        ))
    })?;
    let window = cfg.window.coefficients(cfg.frame_length);
    let fft = FftPlanner::new().plan_fft_forward(cfg.fft_size);
    let n_bins = cfg.n_bins();
    let mut out = Array2::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); cfg.fft_size];
    let samples = w.samples();
    for t in 0..n_frames {
        let start = t * cfg.frame_shift;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (i, (x, wv)) in samples[start..start + cfg.frame_length]
            .iter()
            .zip(&window)
            .enumerate()
        {
            buf[i].re = x * cfg.input_scale * wv;
        }
        fft.process(&mut buf);
        for (dst, src) in out.row_mut(t).iter_mut().zip(&buf[..n_bins]) {
            *dst = *src;
        }
    }
    Ok(out)
}

pub fn hz_to_mel(hz: f64) -> f64 {
    1127.0 * (1.0 + hz / 700.0).ln()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * ((mel / 1127.0).exp() - 1.0)
}

/// Triangular filters (equally spaced on the mel scale), `n_filters x n_bins`.
pub fn mel_filterbank(mcfg: &MelConfig, fft_size: usize, sample_rate: u32) -> Result<Array2<f64>> {
    mcfg.validate(sample_rate)?;
    let n_bins = fft_size / 2 + 1;
    let mel_lo = hz_to_mel(mcfg.f_min);
    let mel_hi = hz_to_mel(mcfg.upper_edge(sample_rate));
    let step = (mel_hi - mel_lo) / (mcfg.n_filters + 1) as f64;
    let mut fb = Array2::zeros((mcfg.n_filters, n_bins));
    for k in 0..mcfg.n_filters {
        let left = mel_lo + k as f64 * step;
        let center = left + step;
        let right = center + step;
        for bin in 0..n_bins {
            let mel = hz_to_mel(bin as f64 * sample_rate as f64 / fft_size as f64);
            let weight = if mel > left && mel <= center {
                (mel - left) / (center - left)
            } else if mel > center && mel < right {
                (right - mel) / (right - center)
            } else {
                0.0
            };
            fb[[k, bin]] = weight;
        }
    }
    Ok(fb)
}

/// Center frequency in Hz of filter `k`.
pub fn mel_center_hz(mcfg: &MelConfig, sample_rate: u32, k: usize) -> f64 {
    let mel_lo = hz_to_mel(mcfg.f_min);
    let mel_hi = hz_to_mel(mcfg.upper_edge(sample_rate));
    let step = (mel_hi - mel_lo) / (mcfg.n_filters + 1) as f64;
    mel_to_hz(mel_lo + (k + 1) as f64 * step)
}

/// Natural-log mel filterbank energies, floored at `log_floor`.
pub fn log_mel(w: &Waveform, fcfg: &FrameConfig, mcfg: &MelConfig) -> Result<FeatureMatrix> {
    let spec = stft(w, fcfg)?;
    let fb = mel_filterbank(mcfg, fcfg.fft_size, w.sample_rate())?;
    let power = spec.mapv(|c| c.norm_sqr());
    let energies = power.dot(&fb.t());
    let floor = mcfg.log_floor;
    Ok(FeatureMatrix {
        values: energies.mapv(|e| e.max(floor).ln()),
        kind: FeatureKind::LogMel,
    })
}

/// Orthonormal DCT-II matrix; row `k` is the `k`-th basis vector.
pub fn dct_matrix(n: usize) -> Array2<f64> {
    let mut m = Array2::zeros((n, n));
    let nf = n as f64;
    for k in 0..n {
        let scale = if k == 0 {
            (1.0 / nf).sqrt()
        } else {
            (2.0 / nf).sqrt()
        };
        for i in 0..n {
            m[[k, i]] = scale * (std::f64::consts::PI / nf * (i as f64 + 0.5) * k as f64).cos();
        }
    }
    m
}

pub fn mfcc_from_logmel(x: &FeatureMatrix, n_ceps: usize) -> Result<FeatureMatrix> {
    if x.kind != FeatureKind::LogMel {
        return Err(Error::invalid("MFCCs are computed from log-mel features"));
    }
    let f = x.dims();
    if n_ceps > f {
        return Err(Error::invalid(format!(
            "cannot keep {n_ceps} cepstra from {f} filterbank channels"
        )));
    }
    let m = dct_matrix(f);
    let basis = m.slice(s![..n_ceps, ..]);
    Ok(FeatureMatrix {
        values: x.values.dot(&basis.t()),
        kind: FeatureKind::Mfcc,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VadConfig {
    pub mean_scale: f64,
    pub offset: f64,
}

impl Default for VadConfig {
    fn default() -> Self {
        Self {
            mean_scale: 0.5,
            offset: 5.5,
        }
    }
}

/// Per-frame log energy: log of summed linear mel energies for log-mel input,
/// coefficient 0 for MFCC input.
pub fn frame_log_energy(x: &FeatureMatrix) -> Array1<f64> {
    match x.kind {
        FeatureKind::Mfcc => x.values.column(0).to_owned(),
        FeatureKind::LogMel => x
            .values
            .rows()
            .into_iter()
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                if m == f64::NEG_INFINITY {
                    return m;
                }
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect(),
    }
}

/// Keeps frames whose log energy is strictly above
/// `mean_scale * mean(log energy) + offset`.
pub fn energy_vad(x: &FeatureMatrix, cfg: &VadConfig) -> FrameMask {
    let energy = frame_log_energy(x);
    if energy.is_empty() {
        return FrameMask { keep: Vec::new() };
    }
    let threshold = cfg.mean_scale * energy.mean().unwrap_or(0.0) + cfg.offset;
    FrameMask {
        keep: energy.iter().map(|e| *e > threshold).collect(),
    }
}

/// Subtracts from each frame the per-dimension mean of the centered window
/// of `window` frames around it. Windows are truncated at the edges.
pub fn short_time_mean_center(x: &FeatureMatrix, window: usize) -> Result<FeatureMatrix> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!(
            "centering window must be odd and positive, got {window}"
        )));
    }
    let (t_len, f) = x.values.dim();
    let half = window / 2;
    // prefix[t] = sum of frames 0..t
    let mut prefix = Array2::<f64>::zeros((t_len + 1, f));
    for t in 0..t_len {
        let next = &prefix.row(t) + &x.values.row(t);
        prefix.row_mut(t + 1).assign(&next);
    }
    let mut out = x.values.clone();
    for t in 0..t_len {
        let lo = t.saturating_sub(half);
        let hi = (t + half + 1).min(t_len);
        let n = (hi - lo) as f64;
        let mean = (&prefix.row(hi) - &prefix.row(lo)) / n;
        let mut row = out.row_mut(t);
        row -= &mean;
    }
    Ok(FeatureMatrix {
        values: out,
        kind: x.kind,
    })
}

/// End-to-end front end: log-mel, then centering, with VAD decided on the
/// pre-centering energies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub frame: FrameConfig,
    pub mel: MelConfig,
    pub vad: Option<VadConfig>,
    pub center_window: Option<usize>,
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self {
            frame: FrameConfig::default(),
            mel: MelConfig::default(),
            vad: Some(VadConfig::default()),
            center_window: Some(301),
        }
    }
}

impl FeatureExtractor {
    /// Returns the processed features and the VAD mask over the raw frames.
    pub fn extract(&self, w: &Waveform) -> Result<(FeatureMatrix, FrameMask)> {
        let raw = log_mel(w, &self.frame, &self.mel)?;
        let mask = match &self.vad {
            Some(cfg) => energy_vad(&raw, cfg),
            None => FrameMask {
                keep: vec![true; raw.frames()],
            },
        };
        let out = self.finish(&raw, &mask)?;
        Ok((out, mask))
    }

    /// Same as [`extract`](Self::extract) but with a VAD mask decided
    /// elsewhere, e.g. on the clean twin of a simulated degraded utterance.
    pub fn extract_with_mask(&self, w: &Waveform, mask: &FrameMask) -> Result<FeatureMatrix> {
        let raw = log_mel(w, &self.frame, &self.mel)?;
        self.finish(&raw, mask)
    }

    fn finish(&self, raw: &FeatureMatrix, mask: &FrameMask) -> Result<FeatureMatrix> {
        let centered = match self.center_window {
            Some(win) => short_time_mean_center(raw, win)?,
            None => raw.clone(),
        };
        centered.select(mask)
    }
}
