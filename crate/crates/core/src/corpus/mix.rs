use crate::error::{Error, Result};
use crate::features::Waveform;

/// Result of an additive mix; `mixed = speech + noise_gain * noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mixture {
    pub mixed: Waveform,
    /// The noise as aligned to the speech (looped/trimmed), before gain.
    pub noise: Waveform,
    pub noise_gain: f64,
}

/// Loops or trims `n` to `len` samples, starting at `offset` (taken modulo
/// the noise length).
pub fn fit_noise(n: &Waveform, len: usize, offset: usize) -> Result<Waveform> {
    if n.is_empty() {
        return Err(Error::invalid("empty noise signal"));
    }
    let src = n.samples();
    let start = offset % src.len();
    let samples = (0..len).map(|i| src[(start + i) % src.len()]).collect();
    Waveform::new(samples, n.sample_rate())
}

/// Adds `n` to `s` scaled so that `10 log10(P_s / P_noise) == snr_db`, both
/// powers measured as mean squares over the mixed region.
pub fn mix_noise_at_snr(s: &Waveform, n: &Waveform, snr_db: f64) -> Result<Mixture> {
    if !snr_db.is_finite() {
        return Err(Error::invalid(format!("SNR must be finite, got {snr_db}")));
    }
    if s.sample_rate() != n.sample_rate() {
        return Err(Error::invalid(format!(
            "speech at {} Hz mixed with noise at {} Hz",
            s.sample_rate(),
            n.sample_rate()
        )));
    }
    let noise = fit_noise(n, s.len(), 0)?;
    let ps = s.power();
    let pn = noise.power();
    if ps <= 0.0 {
        return Err(Error::invalid("speech has zero power"));
    }
    if pn <= 0.0 {
        return Err(Error::invalid("noise has zero power over the mixed region"));
    }
    let noise_gain = (ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt();
    let mixed = s
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(a, b)| a + noise_gain * b)
        .collect();
    Ok(Mixture {
        mixed: Waveform::new(mixed, s.sample_rate())?,
        noise,
        noise_gain,
    })
}
