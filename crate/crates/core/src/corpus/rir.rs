use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::features::Waveform;
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RirSource {
    ExternalFile,
    SyntheticExponential,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RirSpec {
    pub rt60: f64,
    pub source: RirSource,
    pub samples: Vec<f64>,
}

impl RirSpec {
    /// Loads a measured or precomputed RIR from a WAV file. The RT60 is only
    /// recorded, not estimated.
    pub fn from_wav(path: impl AsRef<Path>, rt60: f64) -> Result<Self> {
        let w = super::wav::read_wav(path)?;
        Ok(Self {
            rt60,
            source: RirSource::ExternalFile,
            samples: w.into_samples(),
        })
    }
}

/// Gaussian noise under an exponential envelope that falls 60 dB in energy
/// at `t = rt60`, peak-normalized to 1. `rt60 == 0` gives a unit impulse.
pub fn synth_rir(rt60: f64, length: usize, sample_rate: u32, seed: u64) -> Result<RirSpec> {
    if !(rt60.is_finite() && rt60 >= 0.0) {
        return Err(Error::invalid(format!(
            "RT60 must be finite and non-negative, got {rt60}"
        )));
    }
    if rt60 == 0.0 {
        return Ok(RirSpec {
            rt60,
            source: RirSource::SyntheticExponential,
            samples: vec![1.0],
        });
    }
    if length == 0 {
        return Err(Error::invalid("RIR length must be positive"));
    }
    let mut rng = rng_for(seed, &["synth_rir"]);
    let decay = 3.0 * std::f64::consts::LN_10 / rt60;
    let sr = sample_rate as f64;
    let mut samples: Vec<f64> = (0..length)
        .map(|n| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * (-decay * n as f64 / sr).exp()
        })
        .collect();
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::invalid("synthetic RIR has no finite energy"));
    }
    samples.iter_mut().for_each(|v| *v /= peak);
    Ok(RirSpec {
        rt60,
        source: RirSource::SyntheticExponential,
        samples,
    })
}

/// Full linear convolution truncated to the input length, rescaled so the
/// output peak equals the input peak.
pub fn apply_rir(w: &Waveform, r: &RirSpec) -> Result<Waveform> {
    if r.samples.is_empty() {
        return Err(Error::invalid("empty RIR"));
    }
    let mut out = if r.samples.len() <= 32 || w.len() <= 32 {
        convolve_direct(w.samples(), &r.samples, w.len())
    } else {
        convolve_fft(w.samples(), &r.samples, w.len())
    };
    let in_peak = w.peak();
    let out_peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if out_peak > 0.0 {
        let g = in_peak / out_peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    Waveform::new(out, w.sample_rate())
}

/// `O(len * taps)` convolution, first `len` output samples.
pub fn convolve_direct(x: &[f64], h: &[f64], len: usize) -> Vec<f64> {
    let mut y = vec![0.0; len];
    for (n, yn) in y.iter_mut().enumerate() {
        let kmax = h.len().min(n + 1);
        let mut acc = 0.0;
        for (k, hk) in h[..kmax].iter().enumerate() {
            if let Some(xv) = x.get(n - k) {
                acc += hk * xv;
            }
        }
        *yn = acc;
    }
    y
}

fn convolve_fft(x: &[f64], h: &[f64], len: usize) -> Vec<f64> {
    let n = (x.len() + h.len() - 1).next_power_of_two();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |v: &[f64]| {
        let mut b = vec![Complex::new(0.0, 0.0); n];
        for (d, s) in b.iter_mut().zip(v) {
            d.re = *s;
        }
        b
    };
    let mut a = pad(x);
    let mut b = pad(h);
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (u, v) in a.iter_mut().zip(&b) {
        *u *= v;
    }
    inv.process(&mut a);
    a[..len].iter().map(|c| c.re / n as f64).collect()
}
