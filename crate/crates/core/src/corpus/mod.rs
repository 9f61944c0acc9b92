//! Corpus simulation: SNR filtering, same-source concatenation, reverberation,
//! additive noise at exact SNRs, and paired / unpaired corpus construction.

mod build;
mod mix;
mod rir;
pub mod synth;
mod wada;
mod wada_table;
pub mod wav;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::Waveform;

pub use build::{
    build_additive_corpus, build_parallel_corpus, concat_same_source, filter_by_snr,
    plan_parallel_corpus, Degradation, ParallelCorpusConfig, RirBank, UnpairedSampler,
};
pub use mix::{fit_noise, mix_noise_at_snr, Mixture};
pub use rir::{apply_rir, convolve_direct, synth_rir, RirSource, RirSpec};
pub use wada::{wada_snr, WadaEstimate};
pub use wada_table::{WADA_DB_MAX, WADA_DB_MIN, WADA_G};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Clean,
    ReverbNoise,
    Noise,
    Babble,
    Music,
}

impl Domain {
    pub const ALL: [Domain; 5] = [
        Domain::Clean,
        Domain::ReverbNoise,
        Domain::Noise,
        Domain::Babble,
        Domain::Music,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Clean => "clean",
            Domain::ReverbNoise => "reverb_noise",
            Domain::Noise => "noise",
            Domain::Babble => "babble",
            Domain::Music => "music",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown domain {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct UtteranceRecord {
    pub utt_id: String,
    pub audio_path: String,
    pub speaker_id: String,
    pub session_id: String,
    pub mic_id: String,
    pub domain: Domain,
}

const MANIFEST_HEADER: [&str; 6] = ["utt_id", "path", "speaker", "session", "mic", "domain"];

/// Utterances of one domain. Paths are relative to the corpus root.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub domain: Domain,
    records: Vec<UtteranceRecord>,
}

impl CorpusManifest {
    pub fn new(domain: Domain, records: Vec<UtteranceRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.domain != domain {
                return Err(Error::invalid(format!(
                    "record {} has domain {} in a {} manifest",
                    r.utt_id, r.domain, domain
                )));
            }
            if !seen.insert(r.utt_id.as_str()) {
                return Err(Error::invalid(format!(
                    "duplicate utterance id {}",
                    r.utt_id
                )));
            }
        }
        Ok(Self { domain, records })
    }

    pub fn empty(domain: Domain) -> Self {
        Self {
            domain,
            records: Vec::new(),
        }
    }

    pub fn records(&self) -> &[UtteranceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, utt_id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.utt_id == utt_id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.utt_id.as_str())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = MANIFEST_HEADER.join("\t");
        out.push('\n');
        for r in &self.records {
            let fields = [
                r.utt_id.as_str(),
                r.audio_path.as_str(),
                r.speaker_id.as_str(),
                r.session_id.as_str(),
                r.mic_id.as_str(),
                r.domain.as_str(),
            ];
            out.push_str(&fields.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Parses a manifest. A header-only file is an empty manifest of
    /// `default_domain`.
    pub fn from_tsv(text: &str, default_domain: Domain) -> std::result::Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or("empty manifest")?.split('\t').collect();
        if header != MANIFEST_HEADER {
            return Err(format!(
                "bad header {header:?}, expected {MANIFEST_HEADER:?}"
            ));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(format!(
                    "line {}: expected 6 fields, got {}",
                    i + 2,
                    f.len()
                ));
            }
            records.push(UtteranceRecord {
                utt_id: f[0].into(),
                audio_path: f[1].into(),
                speaker_id: f[2].into(),
                session_id: f[3].into(),
                mic_id: f[4].into(),
                domain: f[5]
                    .parse()
                    .map_err(|e: Error| format!("line {}: {e}", i + 2))?,
            });
        }
        let domain = records.first().map(|r| r.domain).unwrap_or(default_domain);
        Self::new(domain, records).map_err(|e| e.to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_tsv())
    }

    pub fn load(path: impl AsRef<Path>, default_domain: Domain) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        Self::from_tsv(&text, default_domain).map_err(|r| Error::format("manifest", path, r))
    }
}

/// `(degraded_id, clean_id)` correspondences of a simulated parallel corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairedManifest {
    pub pairs: Vec<(String, String)>,
}

impl PairedManifest {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("degraded_id\tclean_id\n");
        for (d, c) in &self.pairs {
            out.push_str(d);
            out.push('\t');
            out.push_str(c);
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some("degraded_id\tclean_id") => {}
            other => return Err(format!("bad header {other:?}")),
        }
        let pairs = lines
            .enumerate()
            .map(|(i, l)| match l.split('\t').collect::<Vec<_>>()[..] {
                [d, c] => Ok((d.to_string(), c.to_string())),
                _ => Err(format!("line {}: expected 2 fields", i + 2)),
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Self { pairs })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_tsv())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        Self::from_tsv(&text).map_err(|r| Error::format("paired manifest", path, r))
    }
}

/// A manifest together with its decoded audio, keyed by utterance id.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioCorpus {
    pub manifest: CorpusManifest,
    audio: IndexMap<String, Waveform>,
}

impl AudioCorpus {
    pub fn new(manifest: CorpusManifest, audio: IndexMap<String, Waveform>) -> Result<Self> {
        for r in manifest.records() {
            if !audio.contains_key(&r.utt_id) {
                return Err(Error::invalid(format!("no audio for {}", r.utt_id)));
            }
        }
        Ok(Self { manifest, audio })
    }

    /// Builds a corpus from `(record, audio)` pairs, all in `domain`.
    pub fn from_parts(domain: Domain, parts: Vec<(UtteranceRecord, Waveform)>) -> Result<Self> {
        let mut audio = IndexMap::with_capacity(parts.len());
        let mut records = Vec::with_capacity(parts.len());
        for (r, w) in parts {
            audio.insert(r.utt_id.clone(), w);
            records.push(r);
        }
        Self::new(CorpusManifest::new(domain, records)?, audio)
    }

    pub fn domain(&self) -> Domain {
        self.manifest.domain
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn audio(&self, utt_id: &str) -> Option<&Waveform> {
        self.audio.get(utt_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UtteranceRecord, &Waveform)> {
        self.manifest
            .records()
            .iter()
            .map(move |r| (r, &self.audio[&r.utt_id]))
    }

    /// Reads every record's WAV file relative to `root`.
    pub fn load(manifest: CorpusManifest, root: impl AsRef<Path>) -> Result<Self> {
        let root = root.as_ref();
        let mut audio = IndexMap::with_capacity(manifest.len());
        for r in manifest.records() {
            audio.insert(r.utt_id.clone(), wav::read_wav(root.join(&r.audio_path))?);
        }
        Self::new(manifest, audio)
    }

    /// Writes every waveform as 16-bit PCM to `root/<audio_path>`.
    pub fn save_audio(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for (r, w) in self.iter() {
            wav::write_wav(root.join(&r.audio_path), w)?;
        }
        Ok(())
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingFile(PathBuf::from(path)));
    }
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}
