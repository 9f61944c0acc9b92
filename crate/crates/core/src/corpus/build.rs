use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    apply_rir, fit_noise, mix_noise_at_snr, synth_rir, wada_snr, AudioCorpus, CorpusManifest,
    Domain,
};
use super::{PairedManifest, RirSpec, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::Waveform;
use crate::seed::{derive_seed, rng_for};

/// Keeps utterances whose WADA-SNR estimate is strictly above `threshold_db`.
pub fn filter_by_snr(corpus: &AudioCorpus, threshold_db: f64) -> Result<AudioCorpus> {
    let mut kept = Vec::new();
    for (r, w) in corpus.iter() {
        if wada_snr(w)?.snr_db > threshold_db {
            kept.push((r.clone(), w.clone()));
        }
    }
    AudioCorpus::from_parts(corpus.domain(), kept)
}

/// Concatenates all utterances sharing a group key into one record, in input
/// order. The output id is the group key; other metadata comes from the
/// group's first record.
pub fn concat_same_source<K>(corpus: &AudioCorpus, group_key: K) -> Result<AudioCorpus>
where
    K: Fn(&UtteranceRecord) -> String,
{
    let mut groups: IndexMap<String, Vec<(&UtteranceRecord, &Waveform)>> = IndexMap::new();
    for (r, w) in corpus.iter() {
        groups.entry(group_key(r)).or_default().push((r, w));
    }
    let domain = corpus.domain();
    let mut parts = Vec::with_capacity(groups.len());
    for (key, members) in groups {
        let (first, first_wave) = members[0];
        let sr = first_wave.sample_rate();
        let mut samples = Vec::new();
        for (r, w) in &members {
            if w.sample_rate() != sr {
                return Err(Error::invalid(format!(
                    "group {key}: {} is at {} Hz but {} is at {sr} Hz",
                    r.utt_id,
                    w.sample_rate(),
                    first.utt_id
                )));
            }
            samples.extend_from_slice(w.samples());
        }
        let record = if members.len() == 1 {
            first.clone()
        } else {
            UtteranceRecord {
                utt_id: key.clone(),
                audio_path: format!("{domain}/{key}.wav"),
                ..first.clone()
            }
        };
        parts.push((record, Waveform::new(samples, sr)?));
    }
    AudioCorpus::from_parts(domain, parts)
}

/// Where reverberation comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum RirBank {
    /// Exponential-decay RIRs with RT60 drawn uniformly from `rt60_range`.
    /// `namespace` keeps train and test RIRs disjoint.
    Synthetic {
        rt60_range: (f64, f64),
        namespace: String,
    },
    /// Drawn uniformly from a fixed set of loaded RIRs.
    External(Vec<RirSpec>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParallelCorpusConfig {
    pub rirs: RirBank,
    pub snr_levels: Vec<f64>,
    pub seed: u64,
    /// Suffix appended to clean ids to form degraded ids.
    pub id_suffix: String,
}

impl ParallelCorpusConfig {
    pub fn new(rirs: RirBank, seed: u64) -> Self {
        Self {
            rirs,
            snr_levels: vec![15.0, 10.0, 5.0, 0.0],
            seed,
            id_suffix: "-rev".into(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.snr_levels.is_empty() || self.snr_levels.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("SNR level set must be non-empty and finite"));
        }
        match &self.rirs {
            RirBank::Synthetic {
                rt60_range: (lo, hi),
                ..
            } => {
                if !(lo.is_finite() && hi.is_finite() && 0.0 <= *lo && lo <= hi) {
                    return Err(Error::invalid(format!("bad RT60 range [{lo}, {hi}]")));
                }
            }
            RirBank::External(v) => {
                if v.is_empty() {
                    return Err(Error::invalid("external RIR set is empty"));
                }
            }
        }
        Ok(())
    }
}

/// The random draws that define one degraded utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Degradation {
    pub clean_id: String,
    pub degraded_id: String,
    pub rt60: f64,
    /// Index into the external bank, or the synthesis seed for synthetic RIRs.
    pub rir_choice: u64,
    pub noise_id: String,
    pub noise_offset: usize,
    pub snr_db: f64,
}

/// Draws every utterance's corruption parameters without rendering audio.
/// Each utterance gets its own stream derived from `(seed, utt_id)`.
pub fn plan_parallel_corpus(
    clean: &AudioCorpus,
    noise: &AudioCorpus,
    cfg: &ParallelCorpusConfig,
) -> Result<Vec<Degradation>> {
    cfg.validate()?;
    if clean.is_empty() || noise.is_empty() {
        return Err(Error::invalid(
            "parallel corpus needs non-empty clean and noise corpora",
        ));
    }
    let noise_ids: Vec<&str> = noise.manifest.ids().collect();
    let mut plan = Vec::with_capacity(clean.len());
    for r in clean.manifest.records() {
        let mut rng = rng_for(cfg.seed, &["parallel", &r.utt_id]);
        let (rt60, rir_choice) = match &cfg.rirs {
            RirBank::Synthetic {
                rt60_range: (lo, hi),
                namespace,
            } => {
                let rt60 = if hi > lo {
                    rng.random_range(*lo..=*hi)
                } else {
                    *lo
                };
                (rt60, derive_seed(cfg.seed, &["rir", namespace, &r.utt_id]))
            }
            RirBank::External(bank) => {
                let i = rng.random_range(0..bank.len());
                (bank[i].rt60, i as u64)
            }
        };
        let noise_id = noise_ids[rng.random_range(0..noise_ids.len())];
        let noise_len = noise.audio(noise_id).map(|w| w.len()).unwrap_or(1).max(1);
        let noise_offset = rng.random_range(0..noise_len);
        let snr_db = cfg.snr_levels[rng.random_range(0..cfg.snr_levels.len())];
        plan.push(Degradation {
            clean_id: r.utt_id.clone(),
            degraded_id: format!("{}{}", r.utt_id, cfg.id_suffix),
            rt60,
            rir_choice,
            noise_id: noise_id.to_string(),
            noise_offset,
            snr_db,
        });
    }
    Ok(plan)
}

/// Reverberates then adds noise to every clean utterance, recording the
/// degraded/clean pairing.
pub fn build_parallel_corpus(
    clean: &AudioCorpus,
    noise: &AudioCorpus,
    cfg: &ParallelCorpusConfig,
) -> Result<(AudioCorpus, PairedManifest, Vec<Degradation>)> {
    let plan = plan_parallel_corpus(clean, noise, cfg)?;
    let mut parts = Vec::with_capacity(plan.len());
    let mut pairs = Vec::with_capacity(plan.len());
    for d in &plan {
        let record = clean
            .manifest
            .get(&d.clean_id)
            .expect("planned from this manifest");
        let speech = clean.audio(&d.clean_id).expect("corpus invariant");
        let rir = match &cfg.rirs {
            RirBank::Synthetic { .. } => {
                let len = ((d.rt60 * speech.sample_rate() as f64).ceil() as usize).max(1);
                synth_rir(d.rt60, len, speech.sample_rate(), d.rir_choice)?
            }
            RirBank::External(bank) => bank[d.rir_choice as usize].clone(),
        };
        let reverberant = apply_rir(speech, &rir)?;
        let degraded = add_noise(&reverberant, noise.audio(&d.noise_id).expect("planned"), d)?;
        let out = UtteranceRecord {
            utt_id: d.degraded_id.clone(),
            audio_path: format!("{}/{}.wav", Domain::ReverbNoise, d.degraded_id),
            speaker_id: record.speaker_id.clone(),
            session_id: record.session_id.clone(),
            mic_id: format!("{}-far", record.mic_id),
            domain: Domain::ReverbNoise,
        };
        parts.push((out, degraded));
        pairs.push((d.degraded_id.clone(), d.clean_id.clone()));
    }
    let corpus = AudioCorpus::from_parts(Domain::ReverbNoise, parts)?;
    Ok((corpus, PairedManifest { pairs }, plan))
}

/// Noise-only corruption (no reverberation) into `domain`, e.g. the noisy
/// source domain for domain adaptation or augmentation copies.
pub fn build_additive_corpus(
    clean: &AudioCorpus,
    noise: &AudioCorpus,
    snr_levels: &[f64],
    domain: Domain,
    seed: u64,
) -> Result<AudioCorpus> {
    if clean.is_empty() || noise.is_empty() {
        return Err(Error::invalid(
            "additive corpus needs non-empty clean and noise corpora",
        ));
    }
    if snr_levels.is_empty() {
        return Err(Error::invalid("SNR level set is empty"));
    }
    let noise_ids: Vec<&str> = noise.manifest.ids().collect();
    let mut parts = Vec::with_capacity(clean.len());
    for (r, w) in clean.iter() {
        let mut rng = rng_for(seed, &["additive", domain.as_str(), &r.utt_id]);
        let noise_id = noise_ids[rng.random_range(0..noise_ids.len())];
        let n = noise.audio(noise_id).expect("corpus invariant");
        let d = Degradation {
            clean_id: r.utt_id.clone(),
            degraded_id: format!("{}-{}", r.utt_id, domain),
            rt60: 0.0,
            rir_choice: 0,
            noise_id: noise_id.to_string(),
            noise_offset: rng.random_range(0..n.len().max(1)),
            snr_db: snr_levels[rng.random_range(0..snr_levels.len())],
        };
        let out = UtteranceRecord {
            utt_id: d.degraded_id.clone(),
            audio_path: format!("{domain}/{}.wav", d.degraded_id),
            domain,
            ..r.clone()
        };
        parts.push((out, add_noise(w, n, &d)?));
    }
    AudioCorpus::from_parts(domain, parts)
}

fn add_noise(speech: &Waveform, noise: &Waveform, d: &Degradation) -> Result<Waveform> {
    let segment = fit_noise(noise, speech.len(), d.noise_offset)?;
    let mixed = mix_noise_at_snr(speech, &segment, d.snr_db)
        .map_err(|e| Error::invalid(format!("{}: {e}", d.clean_id)))?
        .mixed;
    // scale the whole mixture down if it would clip; the SNR is unchanged
    let peak = mixed.peak();
    Ok(if peak > 0.99 {
        mixed.scaled(0.99 / peak)
    } else {
        mixed
    })
}

/// Unpaired draws for CycleGAN training. Each epoch visits every utterance
/// of the reference manifest exactly once, in shuffled order, each paired
/// with an independent uniform draw from the other manifest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnpairedSampler {
    pub n_reference: usize,
    pub n_other: usize,
    pub seed: u64,
}

impl UnpairedSampler {
    pub fn new(reference: &CorpusManifest, other: &CorpusManifest, seed: u64) -> Result<Self> {
        Self::with_sizes(reference.len(), other.len(), seed)
    }

    pub fn with_sizes(n_reference: usize, n_other: usize, seed: u64) -> Result<Self> {
        if n_reference == 0 || n_other == 0 {
            return Err(Error::invalid(
                "unpaired draws need two non-empty manifests",
            ));
        }
        Ok(Self {
            n_reference,
            n_other,
            seed,
        })
    }

    /// `(reference index, other index)` pairs for one epoch.
    pub fn epoch(&self, epoch: usize) -> Vec<(usize, usize)> {
        let mut rng = rng_for(self.seed, &["unpaired", &epoch.to_string()]);
        let mut order: Vec<usize> = (0..self.n_reference).collect();
        order.shuffle(&mut rng);
        order
            .into_iter()
            .map(|i| (i, rng.random_range(0..self.n_other)))
            .collect()
    }

    /// Endless stream of draws, epoch after epoch.
    pub fn draws(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..).flat_map(move |e| self.epoch(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::wada::tests::{gamma_speech, gaussian};

    fn rec(id: &str, group: &str, domain: Domain) -> UtteranceRecord {
        UtteranceRecord {
            utt_id: id.into(),
            audio_path: format!("{domain}/{id}.wav"),
            speaker_id: format!("spk-{group}"),
            session_id: group.into(),
            mic_id: "m0".into(),
            domain,
        }
    }

    fn corpus(domain: Domain, items: Vec<(&str, &str, Vec<f64>)>) -> AudioCorpus {
        AudioCorpus::from_parts(
            domain,
            items
                .into_iter()
                .map(|(id, g, s)| (rec(id, g, domain), Waveform::new(s, 16000).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    fn mixed_at(snr: f64, seed: u64) -> Vec<f64> {
        let s = gamma_speech(32000, seed);
        let n = gaussian(32000, seed + 100);
        let w = Waveform::new(s, 16000).unwrap();
        let m = mix_noise_at_snr(&w, &Waveform::new(n, 16000).unwrap(), snr).unwrap();
        m.mixed.into_samples()
    }

    #[test]
    fn snr_filter_examples() {
        let c = corpus(
            Domain::Clean,
            vec![
                ("hi1", "a", mixed_at(25.0, 1)),
                ("lo1", "a", mixed_at(10.0, 2)),
                ("hi2", "b", mixed_at(25.0, 3)),
                ("lo2", "b", mixed_at(10.0, 4)),
            ],
        );
        assert_eq!(filter_by_snr(&c, f64::NEG_INFINITY).unwrap(), c);
        assert!(filter_by_snr(&c, f64::INFINITY).unwrap().is_empty());
        let kept = filter_by_snr(&c, 19.0).unwrap();
        assert_eq!(kept.manifest.ids().collect::<Vec<_>>(), vec!["hi1", "hi2"]);
        // monotone in the threshold
        let mut prev = c.len();
        for thr in [-30.0, 0.0, 5.0, 12.0, 19.0, 30.0, 120.0] {
            let n = filter_by_snr(&c, thr).unwrap().len();
            assert!(n <= prev);
            prev = n;
        }
    }

    #[test]
    fn concat_examples() {
        let c = corpus(
            Domain::Clean,
            vec![("a", "g1", vec![0.1; 16000]), ("b", "g2", vec![0.2; 16000])],
        );
        assert_eq!(concat_same_source(&c, |r| r.session_id.clone()).unwrap(), c);

        let c = corpus(
            Domain::Clean,
            vec![
                ("a1", "A", vec![1.0; 3]),
                ("b1", "B", vec![2.0; 5]),
                ("a2", "A", vec![3.0; 4]),
                ("b2", "B", vec![4.0; 1]),
                ("c1", "C", vec![5.0; 2]),
                ("b3", "B", vec![6.0; 2]),
            ],
        );
        let out = concat_same_source(&c, |r| r.session_id.clone()).unwrap();
        let lens: Vec<(String, usize)> = out
            .iter()
            .map(|(r, w)| (r.utt_id.clone(), w.len()))
            .collect();
        assert_eq!(
            lens,
            vec![
                ("A".to_string(), 7),
                ("B".to_string(), 8),
                ("c1".to_string(), 2)
            ]
        );
        assert_eq!(
            out.audio("A").unwrap().samples(),
            &[1.0, 1.0, 1.0, 3.0, 3.0, 3.0, 3.0]
        );

        let two_secs = corpus(
            Domain::Clean,
            vec![("x", "g", vec![0.1; 16000]), ("y", "g", vec![0.1; 16000])],
        );
        let out = concat_same_source(&two_secs, |r| r.session_id.clone()).unwrap();
        assert_eq!(out.audio("g").unwrap().duration_secs(), 2.0);
    }

    #[test]
    fn concat_rejects_mixed_rates() {
        let parts = vec![
            (
                rec("a", "g", Domain::Clean),
                Waveform::new(vec![0.0; 4], 16000).unwrap(),
            ),
            (
                rec("b", "g", Domain::Clean),
                Waveform::new(vec![0.0; 4], 8000).unwrap(),
            ),
        ];
        let c = AudioCorpus::from_parts(Domain::Clean, parts).unwrap();
        assert!(concat_same_source(&c, |r| r.session_id.clone()).is_err());
    }

    fn toy_inputs(n: usize) -> (AudioCorpus, AudioCorpus) {
        let clean = corpus(
            Domain::Clean,
            (0..n)
                .map(|i| {
                    let id: &'static str = Box::leak(format!("u{i}").into_boxed_str());
                    let s: Vec<f64> = gamma_speech(4000, i as u64)
                        .iter()
                        .map(|v| v * 0.1)
                        .collect();
                    (id, "g", s)
                })
                .collect(),
        );
        let noise = corpus(
            Domain::Noise,
            vec![
                ("n0", "n", gaussian(3000, 9)),
                ("n1", "n", gaussian(5000, 10)),
            ],
        );
        (clean, noise)
    }

    #[test]
    fn parallel_corpus_is_bijective_and_deterministic() {
        let (clean, noise) = toy_inputs(10);
        let cfg = ParallelCorpusConfig::new(
            RirBank::Synthetic {
                rt60_range: (0.0, 0.3),
                namespace: "train".into(),
            },
            42,
        );
        let (deg, pairs, plan) = build_parallel_corpus(&clean, &noise, &cfg).unwrap();
        assert_eq!(deg.len(), 10);
        assert_eq!(pairs.pairs.len(), 10);
        let mut cleans: Vec<&str> = pairs.pairs.iter().map(|p| p.1.as_str()).collect();
        cleans.sort();
        cleans.dedup();
        assert_eq!(cleans.len(), 10);
        for (d, c) in &pairs.pairs {
            assert_eq!(deg.audio(d).unwrap().len(), clean.audio(c).unwrap().len());
            assert_eq!(
                deg.manifest.get(d).unwrap().speaker_id,
                clean.manifest.get(c).unwrap().speaker_id
            );
        }
        assert!(plan
            .iter()
            .all(|p| cfg.snr_levels.contains(&p.snr_db) && p.rt60 <= 0.3));
        let (again, pairs2, _) = build_parallel_corpus(&clean, &noise, &cfg).unwrap();
        assert_eq!(pairs, pairs2);
        for (a, b) in deg.iter().zip(again.iter()) {
            let qa: Vec<i16> =
                a.1.samples()
                    .iter()
                    .map(|v| crate::corpus::wav::quantize(*v))
                    .collect();
            let qb: Vec<i16> =
                b.1.samples()
                    .iter()
                    .map(|v| crate::corpus::wav::quantize(*v))
                    .collect();
            assert_eq!(qa, qb);
        }
    }

    #[test]
    fn degenerate_corruption_is_near_identity() {
        let (clean, noise) = toy_inputs(4);
        let mut cfg = ParallelCorpusConfig::new(
            RirBank::Synthetic {
                rt60_range: (0.0, 0.0),
                namespace: "train".into(),
            },
            1,
        );
        cfg.snr_levels = vec![200.0];
        let (deg, pairs, _) = build_parallel_corpus(&clean, &noise, &cfg).unwrap();
        for (d, c) in &pairs.pairs {
            let a = deg.audio(d).unwrap();
            let b = clean.audio(c).unwrap();
            let (pa, pb) = (a.peak(), b.peak());
            let linf = a
                .samples()
                .iter()
                .zip(b.samples())
                .fold(0.0f64, |m, (x, y)| m.max((x / pa - y / pb).abs()));
            assert!(linf < 1e-4, "{linf}");
        }
    }

    #[test]
    fn train_and_test_namespaces_give_different_rirs() {
        let (clean, noise) = toy_inputs(3);
        let mk = |ns: &str| {
            ParallelCorpusConfig::new(
                RirBank::Synthetic {
                    rt60_range: (0.2, 0.2),
                    namespace: ns.into(),
                },
                5,
            )
        };
        let a = plan_parallel_corpus(&clean, &noise, &mk("train")).unwrap();
        let b = plan_parallel_corpus(&clean, &noise, &mk("test")).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_ne!(x.rir_choice, y.rir_choice);
        }
    }

    #[test]
    fn additive_corpus_labels_domain() {
        let (clean, noise) = toy_inputs(3);
        let out = build_additive_corpus(&clean, &noise, &[5.0], Domain::Noise, 3).unwrap();
        assert_eq!(out.domain(), Domain::Noise);
        assert_eq!(
            out.manifest.ids().collect::<Vec<_>>(),
            vec!["u0-noise", "u1-noise", "u2-noise"]
        );
    }

    #[test]
    fn unpaired_epoch_contract() {
        let s = UnpairedSampler::with_sizes(1, 1, 0).unwrap();
        assert!(s.draws().take(5).all(|p| p == (0, 0)));

        let s = UnpairedSampler::with_sizes(13, 4, 7).unwrap();
        for e in 0..3 {
            let mut refs: Vec<usize> = s.epoch(e).iter().map(|p| p.0).collect();
            refs.sort();
            assert_eq!(refs, (0..13).collect::<Vec<_>>());
        }
        assert_eq!(s.epoch(1), s.epoch(1));
        assert_ne!(s.epoch(0), s.epoch(1));
        assert!(UnpairedSampler::with_sizes(0, 3, 0).is_err());
    }

    #[test]
    fn unpaired_other_draws_are_uniform() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let k = 10;
        let s = UnpairedSampler::with_sizes(100, k, 123).unwrap();
        let mut counts = vec![0usize; k];
        for (_, b) in s.draws().take(10_000) {
            counts[b] += 1;
        }
        let expected = 10_000.0 / k as f64;
        let chi2: f64 = counts
            .iter()
            .map(|c| (*c as f64 - expected).powi(2) / expected)
            .sum();
        let critical = ChiSquared::new((k - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }
}
