//! Synthetic stand-ins for the speech and noise corpora.
//!
//! Speech is a train of voiced syllables: a harmonic source at a
//! speaker-specific pitch shaped by vowel formants scaled by a
//! speaker-specific vocal-tract factor, separated by short pauses. It is
//! crude, but it has the properties the pipeline cares about: silence for
//! the VAD, formant structure that reverberation smears, and speaker
//! identity carried by pitch and spectral envelope.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{AudioCorpus, Domain, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::Waveform;
use crate::seed::rng_for;

const VOWELS: [[f64; 3]; 5] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [300.0, 870.0, 2240.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Voice {
    pub f0: f64,
    pub formant_scale: f64,
    /// Extra speaker-specific resonance above the vowel formants.
    pub f4: f64,
    /// Per-harmonic spectral tilt exponent.
    pub tilt: f64,
}

impl Voice {
    pub fn random(rng: &mut impl Rng) -> Self {
        Self {
            f0: rng.random_range(90.0..260.0),
            formant_scale: rng.random_range(0.85..1.2),
            f4: rng.random_range(3000.0..4200.0),
            tilt: rng.random_range(0.6..1.2),
        }
    }
}

/// Renders `secs` seconds of syllables in `voice`, peak-normalized to `peak`.
pub fn synth_speech(
    voice: &Voice,
    secs: f64,
    sample_rate: u32,
    peak: f64,
    rng: &mut ChaCha8Rng,
) -> Waveform {
    let sr = sample_rate as f64;
    let total = (secs * sr).round() as usize;
    let mut out = vec![0.0; total];
    let nyquist_guard = 0.45 * sr;
    let mut pos = (rng.random_range(0.05..0.2) * sr) as usize;
    while pos < total {
        let dur = (rng.random_range(0.15..0.35) * sr) as usize;
        let end = (pos + dur).min(total);
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let formants = [
            vowel[0] * voice.formant_scale,
            vowel[1] * voice.formant_scale,
            vowel[2] * voice.formant_scale,
            voice.f4,
        ];
        let f0_start = voice.f0 * rng.random_range(0.9..1.1);
        let f0_end = voice.f0 * rng.random_range(0.85..1.15);
        let n_harm = (nyquist_guard / f0_start.max(f0_end)) as usize;
        let amps: Vec<f64> = (1..=n_harm)
            .map(|h| {
                let f = h as f64 * voice.f0;
                let env: f64 = formants
                    .iter()
                    .enumerate()
                    .map(|(i, fc)| {
                        let bw = 60.0 + 40.0 * i as f64;
                        1.0 / (1.0 + ((f - fc) / bw).powi(2))
                    })
                    .sum();
                env / (h as f64).powf(voice.tilt)
            })
            .collect();
        let mut phases = vec![0.0f64; n_harm];
        let len = end - pos;
        // occasional fricative-like onset
        let burst = if rng.random_bool(0.3) {
            (0.04 * sr) as usize
        } else {
            0
        };
        let mut prev = 0.0;
        for i in 0..len {
            let frac = i as f64 / len.max(1) as f64;
            let f0 = f0_start + (f0_end - f0_start) * frac;
            let ramp = (PI * frac).sin().powf(0.5);
            let mut v = 0.0;
            for (h, (ph, a)) in phases.iter_mut().zip(&amps).enumerate() {
                *ph += 2.0 * PI * f0 * (h + 1) as f64 / sr;
                v += a * ph.sin();
            }
            let mut sample = ramp * v;
            if i < burst {
                let z: f64 = StandardNormal.sample(rng);
                sample += 0.3 * (z - prev);
                prev = z;
            }
            out[pos + i] += sample;
        }
        pos = end + (rng.random_range(0.05..0.25) * sr) as usize;
    }
    // low recording floor so silence is not digitally exact
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(rng);
        *v += 1e-5 * z;
    }
    normalize_peak(out, sample_rate, peak)
}

fn normalize_peak(mut samples: Vec<f64>, sample_rate: u32, peak: f64) -> Waveform {
    let m = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m > 0.0 {
        samples.iter_mut().for_each(|v| *v *= peak / m);
    }
    Waveform::new(samples, sample_rate).expect("synthesized samples are finite")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToySpeechConfig {
    pub speakers: usize,
    pub utts_per_speaker: usize,
    pub sessions_per_speaker: usize,
    pub min_secs: f64,
    pub max_secs: f64,
    pub sample_rate: u32,
}

impl Default for ToySpeechConfig {
    fn default() -> Self {
        Self {
            speakers: 20,
            utts_per_speaker: 10,
            sessions_per_speaker: 2,
            min_secs: 1.5,
            max_secs: 3.0,
            sample_rate: 16000,
        }
    }
}

/// Speaker `k`'s voice under root seed `seed`. Used by every corpus built from
/// the same speaker set so that train and test share identities.
pub fn speaker_voice(seed: u64, speaker: usize) -> Voice {
    Voice::random(&mut rng_for(seed, &["voice", &speaker.to_string()]))
}

/// Clean corpus of synthetic speakers. `split` names the random stream so
/// that e.g. train and test utterances differ while speakers stay the same.
pub fn toy_clean_corpus(cfg: &ToySpeechConfig, seed: u64, split: &str) -> Result<AudioCorpus> {
    if cfg.speakers == 0 || cfg.utts_per_speaker == 0 || cfg.sessions_per_speaker == 0 {
        return Err(Error::invalid(
            "toy corpus needs speakers, utterances and sessions",
        ));
    }
    if !(0.0 < cfg.min_secs && cfg.min_secs <= cfg.max_secs) {
        return Err(Error::invalid("toy corpus duration range is empty"));
    }
    let mut parts = Vec::new();
    for spk in 0..cfg.speakers {
        let voice = speaker_voice(seed, spk);
        for u in 0..cfg.utts_per_speaker {
            let id = format!("{split}-spk{spk:03}-u{u:03}");
            let mut rng = rng_for(seed, &["toy_speech", &id]);
            let secs = if cfg.max_secs > cfg.min_secs {
                rng.random_range(cfg.min_secs..cfg.max_secs)
            } else {
                cfg.min_secs
            };
            let w = synth_speech(&voice, secs, cfg.sample_rate, 0.5, &mut rng);
            let session = u % cfg.sessions_per_speaker;
            parts.push((
                UtteranceRecord {
                    audio_path: format!("{split}/clean/{id}.wav"),
                    utt_id: id,
                    speaker_id: format!("spk{spk:03}"),
                    session_id: format!("spk{spk:03}-{split}-s{session}"),
                    mic_id: "close".into(),
                    domain: Domain::Clean,
                },
                w,
            ));
        }
    }
    AudioCorpus::from_parts(Domain::Clean, parts)
}

/// Noise sources: `Noise` gives colored noise with hum and bursts, `Babble`
/// overlapping synthetic talkers, `Music` sustained harmonic chords.
pub fn toy_noise_corpus(
    kind: Domain,
    files: usize,
    secs: f64,
    sample_rate: u32,
    seed: u64,
) -> Result<AudioCorpus> {
    if files == 0 || !(secs > 0.0) {
        return Err(Error::invalid(
            "noise corpus needs at least one file of positive length",
        ));
    }
    let mut parts = Vec::new();
    for i in 0..files {
        let id = format!("{kind}-src{i:03}");
        let mut rng = rng_for(seed, &["toy_noise", &id]);
        let w = match kind {
            Domain::Noise => colored_noise(secs, sample_rate, &mut rng),
            Domain::Babble => babble(secs, sample_rate, &mut rng),
            Domain::Music => music(secs, sample_rate, &mut rng),
            other => return Err(Error::invalid(format!("{other} is not a noise type"))),
        };
        parts.push((
            UtteranceRecord {
                audio_path: format!("sources/{kind}/{id}.wav"),
                utt_id: id.clone(),
                speaker_id: "none".into(),
                session_id: id,
                mic_id: "none".into(),
                domain: kind,
            },
            w,
        ));
    }
    AudioCorpus::from_parts(kind, parts)
}

fn colored_noise(secs: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> Waveform {
    let sr = sample_rate as f64;
    let n = (secs * sr) as usize;
    let pole: f64 = rng.random_range(0.0..0.95);
    let hum_f = if rng.random_bool(0.5) { 50.0 } else { 60.0 };
    let hum_amp: f64 = rng.random_range(0.0..0.5);
    let mut state = 0.0;
    let mut out = Vec::with_capacity(n);
    let mut burst_left = 0usize;
    for i in 0..n {
        let z: f64 = StandardNormal.sample(rng);
        state = pole * state + z;
        let t = i as f64 / sr;
        let hum: f64 = (1..=3)
            .map(|h| (2.0 * PI * hum_f * h as f64 * t).sin() / h as f64)
            .sum();
        if burst_left == 0 && rng.random_bool(2.0 / sr) {
            burst_left = (0.05 * sr) as usize;
        }
        let burst = if burst_left > 0 {
            burst_left -= 1;
            3.0 * z
        } else {
            0.0
        };
        out.push(state * (1.0 - pole) + hum_amp * hum + burst);
    }
    normalize_peak(out, sample_rate, 0.5)
}

fn babble(secs: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> Waveform {
    let talkers = rng.random_range(3..=6);
    let n = (secs * sample_rate as f64).round() as usize;
    let mut out = vec![0.0; n];
    for _ in 0..talkers {
        let voice = Voice::random(rng);
        let w = synth_speech(&voice, secs, sample_rate, 1.0, rng);
        for (o, s) in out.iter_mut().zip(w.samples()) {
            *o += s;
        }
    }
    normalize_peak(out, sample_rate, 0.5)
}

fn music(secs: f64, sample_rate: u32, rng: &mut ChaCha8Rng) -> Waveform {
    let sr = sample_rate as f64;
    let n = (secs * sr) as usize;
    let mut out = vec![0.0; n];
    let mut pos = 0;
    while pos < n {
        let dur = ((rng.random_range(0.3..0.8) * sr) as usize).max(1);
        let root = 110.0 * 2f64.powf(rng.random_range(0..24) as f64 / 12.0);
        let chord = [1.0, 2f64.powf(4.0 / 12.0), 2f64.powf(7.0 / 12.0)];
        for i in 0..dur.min(n - pos) {
            let t = i as f64 / sr;
            let env = (-3.0 * t).exp();
            let mut v = 0.0;
            for ratio in chord {
                for h in 1..=4 {
                    v += (2.0 * PI * root * ratio * h as f64 * t).sin() / (h * h) as f64;
                }
            }
            out[pos + i] += env * v;
        }
        pos += dur;
    }
    normalize_peak(out, sample_rate, 0.5)
}
