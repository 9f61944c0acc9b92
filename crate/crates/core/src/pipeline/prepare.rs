//! Corpus simulation and feature extraction stages.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::layout::*;
use crate::archive::FeatureArchive;
use crate::config::{CorpusSource, PipelineConfig};
use crate::corpus::synth::{toy_clean_corpus, toy_noise_corpus, ToySpeechConfig};
use crate::corpus::{
    build_additive_corpus, build_parallel_corpus, plan_parallel_corpus, write_text, AudioCorpus,
    CorpusManifest, Degradation, Domain, PairedManifest, ParallelCorpusConfig, RirBank,
};
use crate::error::{Error, Result};
use crate::features::FrameMask;
use crate::seed::derive_seed;

/// Counts and draw statistics of a simulation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub corpora: Vec<(String, usize)>,
    pub train_rt60: (f64, f64, f64),
    pub test_rt60: (f64, f64, f64),
    pub snr_counts: Vec<(f64, usize)>,
    pub written: bool,
}

impl fmt::Display for SimulationSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, n) in &self.corpora {
            writeln!(f, "{name:<18} {n:>6} utterances")?;
        }
        for (split, (lo, mean, hi)) in [("train", self.train_rt60), ("test", self.test_rt60)] {
            writeln!(
                f,
                "{split} RT60 (s)      min {lo:.3} mean {mean:.3} max {hi:.3}"
            )?;
        }
        let snr: Vec<String> = self
            .snr_counts
            .iter()
            .map(|(s, n)| format!("{s} dB: {n}"))
            .collect();
        writeln!(f, "SNR draws          {}", snr.join(", "))?;
        write!(
            f,
            "{}",
            if self.written {
                "corpora written"
            } else {
                "dry run: nothing written"
            }
        )
    }
}

struct Sources {
    train_clean: AudioCorpus,
    test_clean: AudioCorpus,
    noise: AudioCorpus,
    additive: AudioCorpus,
}

fn load_sources(cfg: &PipelineConfig) -> Result<Sources> {
    let seed = cfg.seed;
    let c = &cfg.corpus;
    match &c.source {
        CorpusSource::Toy {
            speech,
            test_utts_per_speaker,
            noise_files,
            noise_secs,
        } => {
            let speech_seed = derive_seed(seed, &["speech"]);
            let test_cfg = ToySpeechConfig {
                utts_per_speaker: *test_utts_per_speaker,
                ..speech.clone()
            };
            let noise_seed = derive_seed(seed, &["noise"]);
            let noise = toy_noise_corpus(
                Domain::Noise,
                *noise_files,
                *noise_secs,
                speech.sample_rate,
                noise_seed,
            )?;
            let additive = if c.additive_domain == Domain::Noise {
                noise.clone()
            } else {
                toy_noise_corpus(
                    c.additive_domain,
                    *noise_files,
                    *noise_secs,
                    speech.sample_rate,
                    noise_seed,
                )?
            };
            Ok(Sources {
                train_clean: toy_clean_corpus(speech, speech_seed, "train")?,
                test_clean: toy_clean_corpus(&test_cfg, speech_seed, "test")?,
                noise,
                additive,
            })
        }
        CorpusSource::Files {
            train_clean,
            test_clean,
            noise,
            audio_root,
        } => {
            cfg.check_inputs()?;
            let load = |p: &std::path::Path, d: Domain| {
                AudioCorpus::load(CorpusManifest::load(p, d)?, audio_root)
            };
            let noise = load(noise, Domain::Noise)?;
            Ok(Sources {
                train_clean: load(train_clean, Domain::Clean)?,
                test_clean: load(test_clean, Domain::Clean)?,
                additive: noise.clone(),
                noise,
            })
        }
    }
}

fn parallel_config(cfg: &PipelineConfig, split: &str) -> ParallelCorpusConfig {
    let rt60_range = if split == "train" {
        cfg.corpus.train_rt60
    } else {
        cfg.corpus.test_rt60
    };
    let mut p = ParallelCorpusConfig::new(
        RirBank::Synthetic {
            rt60_range,
            namespace: split.to_string(),
        },
        derive_seed(cfg.seed, &["simulate", split]),
    );
    p.snr_levels = cfg.corpus.snr_levels.clone();
    p
}

fn rt60_stats(plan: &[Degradation]) -> (f64, f64, f64) {
    let v: Vec<f64> = plan.iter().map(|d| d.rt60).collect();
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, v.iter().sum::<f64>() / v.len().max(1) as f64, hi)
}

fn plan_tsv(plan: &[Degradation]) -> String {
    let mut s =
        String::from("degraded_id\tclean_id\trt60\trir_choice\tnoise_id\tnoise_offset\tsnr_db\n");
    for d in plan {
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            d.degraded_id, d.clean_id, d.rt60, d.rir_choice, d.noise_id, d.noise_offset, d.snr_db
        ));
    }
    s
}

fn additive_pairs(clean: &AudioCorpus, domain: Domain) -> PairedManifest {
    PairedManifest {
        pairs: clean
            .manifest
            .ids()
            .map(|id| (format!("{id}-{domain}"), id.to_string()))
            .collect(),
    }
}

/// Builds the training and evaluation corpora. With `dry_run` only the
/// corruption plan is drawn and summarized; nothing is written.
pub fn simulate(cfg: &PipelineConfig, dry_run: bool) -> Result<SimulationSummary> {
    cfg.validate()?;
    let src = load_sources(cfg)?;
    let train_cfg = parallel_config(cfg, "train");
    let test_cfg = parallel_config(cfg, "test");
    let train_plan = plan_parallel_corpus(&src.train_clean, &src.noise, &train_cfg)?;
    let test_plan = plan_parallel_corpus(&src.test_clean, &src.noise, &test_cfg)?;
    let mut snr: IndexMap<String, (f64, usize)> = cfg
        .corpus
        .snr_levels
        .iter()
        .map(|s| (s.to_string(), (*s, 0)))
        .collect();
    for d in train_plan.iter().chain(&test_plan) {
        snr.get_mut(&d.snr_db.to_string())
            .expect("drawn from the level set")
            .1 += 1;
    }
    let n_train = src.train_clean.len();
    let mut summary = SimulationSummary {
        corpora: vec![
            (TRAIN_CLEAN.into(), n_train),
            (TRAIN_REVERB.into(), n_train),
            (TRAIN_ADDITIVE.into(), n_train),
            (TEST_CLEAN.into(), src.test_clean.len()),
            (TEST_REVERB.into(), src.test_clean.len()),
            (NOISE_SOURCES.into(), src.noise.len()),
        ],
        train_rt60: rt60_stats(&train_plan),
        test_rt60: rt60_stats(&test_plan),
        snr_counts: snr.into_values().collect(),
        written: false,
    };
    if dry_run {
        return Ok(summary);
    }
    let layout = RunLayout::new(&cfg.out_dir);
    ensure_dir(&layout.corpus_dir())?;
    let (train_rev, train_pairs, _) =
        build_parallel_corpus(&src.train_clean, &src.noise, &train_cfg)?;
    let (test_rev, test_pairs, _) = build_parallel_corpus(&src.test_clean, &src.noise, &test_cfg)?;
    let additive_seed = derive_seed(cfg.seed, &["simulate", "additive"]);
    let domain = cfg.corpus.additive_domain;
    let train_add = build_additive_corpus(
        &src.train_clean,
        &src.additive,
        &cfg.corpus.snr_levels,
        domain,
        additive_seed,
    )?;
    let audio = layout.audio_root();
    for (name, corpus) in [
        (TRAIN_CLEAN, &src.train_clean),
        (TRAIN_REVERB, &train_rev),
        (TRAIN_ADDITIVE, &train_add),
        (TEST_CLEAN, &src.test_clean),
        (TEST_REVERB, &test_rev),
        (NOISE_SOURCES, &src.noise),
        (ADDITIVE_SOURCES, &src.additive),
    ] {
        corpus.manifest.save(layout.manifest(name))?;
        corpus.save_audio(&audio)?;
    }
    train_pairs.save(layout.pairs("train"))?;
    test_pairs.save(layout.pairs("test"))?;
    additive_pairs(&src.train_clean, domain).save(layout.pairs("additive"))?;
    write_text(&layout.plan("train"), &plan_tsv(&train_plan))?;
    write_text(&layout.plan("test"), &plan_tsv(&test_plan))?;
    summary.written = true;
    Ok(summary)
}

/// Frame rate shared by all archives of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureInfo {
    pub frames_per_sec: f64,
    pub dims: usize,
}

impl FeatureInfo {
    pub fn load(layout: &RunLayout) -> Result<Self> {
        let path = layout.feature_info();
        let text = crate::corpus::read_text(&path)?;
        serde_json::from_str(&text).map_err(|e| Error::format("feature info", path, e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtractSummary {
    pub archives: Vec<(String, usize, usize)>,
    pub frames_per_sec: f64,
}

impl fmt::Display for ExtractSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, utts, frames) in &self.archives {
            writeln!(f, "{name:<16} {utts:>6} utterances {frames:>9} frames")?;
        }
        write!(f, "{} frames per second", self.frames_per_sec)
    }
}

fn load_corpus(layout: &RunLayout, name: &str, domain: Domain) -> Result<AudioCorpus> {
    AudioCorpus::load(
        CorpusManifest::load(layout.manifest(name), domain)?,
        layout.audio_root(),
    )
}

/// Log-mel features for every corpus. Degraded utterances reuse the speech
/// mask of their clean source so paired frames stay aligned.
pub fn extract(cfg: &PipelineConfig) -> Result<ExtractSummary> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.out_dir);
    ensure_dir(&layout.features_dir())?;
    let ex = &cfg.features;
    let mut summary = ExtractSummary {
        archives: Vec::new(),
        frames_per_sec: 0.0,
    };
    let mut record = |name: &str, a: &FeatureArchive| -> Result<()> {
        a.save(layout.features(name))?;
        let frames = a.iter().map(|(_, x)| x.nrows()).sum();
        summary.archives.push((name.to_string(), a.len(), frames));
        Ok(())
    };
    let mut sample_rate = None;
    for (clean_name, twins) in [
        (
            TRAIN_CLEAN,
            vec![(TRAIN_REVERB, "train"), (TRAIN_ADDITIVE, "additive")],
        ),
        (TEST_CLEAN, vec![(TEST_REVERB, "test")]),
    ] {
        let clean = load_corpus(&layout, clean_name, Domain::Clean)?;
        let mut masks: IndexMap<String, FrameMask> = IndexMap::new();
        let mut feats = FeatureArchive::new();
        for (r, w) in clean.iter() {
            sample_rate.get_or_insert(w.sample_rate());
            let (x, mask) = ex
                .extract(w)
                .map_err(|e| Error::invalid(format!("{}: {e}", r.utt_id)))?;
            feats.insert(r.utt_id.clone(), x.values)?;
            masks.insert(r.utt_id.clone(), mask);
        }
        record(clean_name, &feats)?;
        for (name, pair_split) in twins {
            let pairs = PairedManifest::load(layout.pairs(pair_split))?;
            let domain = if name == TRAIN_ADDITIVE {
                cfg.corpus.additive_domain
            } else {
                Domain::ReverbNoise
            };
            let corpus = load_corpus(&layout, name, domain)?;
            let mut out = FeatureArchive::new();
            for (deg, src) in &pairs.pairs {
                let w = corpus
                    .audio(deg)
                    .ok_or_else(|| Error::invalid(format!("{deg}: audio missing from {name}")))?;
                let mask = masks.get(src).ok_or_else(|| {
                    Error::invalid(format!("{deg}: clean source {src} not extracted"))
                })?;
                let x = ex
                    .extract_with_mask(w, mask)
                    .map_err(|e| Error::invalid(format!("{deg}: {e}")))?;
                out.insert(deg.clone(), x.values)?;
            }
            record(name, &out)?;
        }
    }
    let sr = sample_rate.ok_or_else(|| Error::invalid("no audio to extract"))?;
    let info = FeatureInfo {
        frames_per_sec: sr as f64 / ex.frame.frame_shift as f64,
        dims: ex.mel.n_filters,
    };
    summary.frames_per_sec = info.frames_per_sec;
    write_text(
        &layout.feature_info(),
        &serde_json::to_string_pretty(&info).expect("plain struct"),
    )?;
    Ok(summary)
}
