//! Pipeline configuration file and the named training presets.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::synth::ToySpeechConfig;
use crate::corpus::Domain;
use crate::error::{Error, Result};
use crate::features::FeatureExtractor;
use crate::losses::LossWeights;
use crate::nn::{DiscriminatorConfig, GeneratorConfig};
use crate::sv::{DcfParams, EmbedderConfig, EmbedderTraining, SvsScheme, TrialRule};
use crate::train::TrainSchedule;

/// Named loss-weight and network-pairing presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "SEN1")]
    Sen1,
    #[serde(rename = "SEN2")]
    Sen2,
    #[serde(rename = "SEN3")]
    Sen3,
    #[serde(rename = "SEN4")]
    Sen4,
    #[serde(rename = "SEN5")]
    Sen5,
    #[serde(rename = "UEN")]
    Uen,
    #[serde(rename = "DAN")]
    Dan,
}

/// How a preset is trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PresetKind {
    /// Paired enhancement network.
    Supervised,
    /// Cycle-consistent mapping from the reverberant domain to `target`.
    Unpaired { target: Domain },
}

impl Preset {
    pub const ALL: [Preset; 7] = [
        Preset::Sen1,
        Preset::Sen2,
        Preset::Sen3,
        Preset::Sen4,
        Preset::Sen5,
        Preset::Uen,
        Preset::Dan,
    ];

    pub const SUPERVISED: [Preset; 5] = [
        Preset::Sen1,
        Preset::Sen2,
        Preset::Sen3,
        Preset::Sen4,
        Preset::Sen5,
    ];

    pub fn weights(self) -> LossWeights {
        match self {
            Preset::Sen1 => LossWeights::sen(1.0, 0.0),
            Preset::Sen2 => LossWeights::sen(0.0, 1.0),
            Preset::Sen3 => LossWeights::sen(1.0, 1.0),
            Preset::Sen4 => LossWeights::sen(1.0, 0.1),
            Preset::Sen5 => LossWeights::sen(1.0, 0.01),
            Preset::Uen | Preset::Dan => LossWeights::cyclegan(2.5, 1.0),
        }
    }

    /// `dan_target` is the noisy domain the adaptation network maps into.
    pub fn kind(self, dan_target: Domain) -> PresetKind {
        match self {
            Preset::Uen => PresetKind::Unpaired {
                target: Domain::Clean,
            },
            Preset::Dan => PresetKind::Unpaired { target: dan_target },
            _ => PresetKind::Supervised,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Sen1 => "SEN1",
            Preset::Sen2 => "SEN2",
            Preset::Sen3 => "SEN3",
            Preset::Sen4 => "SEN4",
            Preset::Sen5 => "SEN5",
            Preset::Uen => "UEN",
            Preset::Dan => "DAN",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown preset {s:?}; expected SEN1..SEN5, UEN or DAN"
                ))
            })
    }
}

/// Where the audio comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Synthetic speakers and noise generated from the seed.
    Toy {
        #[serde(default)]
        speech: ToySpeechConfig,
        #[serde(default = "default_test_utts")]
        test_utts_per_speaker: usize,
        #[serde(default = "default_noise_files")]
        noise_files: usize,
        #[serde(default = "default_noise_secs")]
        noise_secs: f64,
    },
    /// Existing manifests; audio paths resolve against `audio_root`.
    Files {
        train_clean: PathBuf,
        test_clean: PathBuf,
        noise: PathBuf,
        audio_root: PathBuf,
    },
}

fn default_test_utts() -> usize {
    10
}

fn default_noise_files() -> usize {
    8
}

fn default_noise_secs() -> f64 {
    10.0
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Toy {
            speech: ToySpeechConfig::default(),
            test_utts_per_speaker: default_test_utts(),
            noise_files: default_noise_files(),
            noise_secs: default_noise_secs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub source: CorpusSource,
    /// RT60 range (seconds) of the training reverberation.
    pub train_rt60: (f64, f64),
    /// RT60 range of the evaluation reverberation, drawn from a disjoint
    /// RIR stream.
    pub test_rt60: (f64, f64),
    pub snr_levels: Vec<f64>,
    /// Noise type of the additive corpus, which is also the adaptation
    /// target domain.
    pub additive_domain: Domain,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            source: CorpusSource::default(),
            train_rt60: (0.0, 0.3),
            test_rt60: (0.0, 0.3),
            snr_levels: vec![15.0, 10.0, 5.0, 0.0],
            additive_domain: Domain::Noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvConfig {
    pub enroll_secs: Vec<f64>,
    pub test_chunk_secs: f64,
    pub min_chunk_secs: f64,
    pub rules: Vec<TrialRule>,
    pub n_ceps: usize,
    pub dcf: DcfParams,
    pub embedder: EmbedderConfig,
    pub training: EmbedderTraining,
    /// Training-corpus recipe for the embedder; without one it trains on the
    /// clean training data only.
    pub scheme: Option<SvsScheme>,
}

impl Default for SvConfig {
    fn default() -> Self {
        Self {
            enroll_secs: vec![2.0, 4.0],
            test_chunk_secs: 2.0,
            min_chunk_secs: 0.5,
            rules: vec![TrialRule::SameSessionAndMic],
            n_ceps: 20,
            dcf: DcfParams::default(),
            embedder: EmbedderConfig::default(),
            training: EmbedderTraining::default(),
            scheme: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub corpus: CorpusConfig,
    #[serde(default)]
    pub features: FeatureExtractor,
    #[serde(default = "GeneratorConfig::desk")]
    pub generator: GeneratorConfig,
    #[serde(default = "DiscriminatorConfig::desk")]
    pub discriminator: DiscriminatorConfig,
    #[serde(default)]
    pub schedule: TrainSchedule,
    /// Replaces the preset's loss weights when present.
    #[serde(default)]
    pub weights: Option<LossWeights>,
    #[serde(default)]
    pub sv: SvConfig,
}

fn default_preset() -> Preset {
    Preset::Sen4
}

impl PipelineConfig {
    /// A configuration with every optional section at its default.
    pub fn new(seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            seed,
            out_dir: out_dir.into(),
            preset: default_preset(),
            corpus: CorpusConfig::default(),
            features: FeatureExtractor::default(),
            generator: GeneratorConfig::desk(),
            discriminator: DiscriminatorConfig::desk(),
            schedule: TrainSchedule::default(),
            weights: None,
            sv: SvConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a configuration file; relative `out_dir` and corpus paths are
    /// taken relative to the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out_dir);
        if let CorpusSource::Files {
            train_clean,
            test_clean,
            noise,
            audio_root,
        } = &mut self.corpus.source
        {
            fix(train_clean);
            fix(test_clean);
            fix(noise);
            fix(audio_root);
        }
    }

    pub fn weights(&self) -> LossWeights {
        self.weights.unwrap_or_else(|| self.preset.weights())
    }

    pub fn validate(&self) -> Result<()> {
        self.features.frame.validate()?;
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.schedule.validate()?;
        self.weights().validate()?;
        self.sv.dcf.validate()?;
        self.sv.embedder.validate()?;
        let c = &self.corpus;
        for (name, (lo, hi)) in [("train_rt60", c.train_rt60), ("test_rt60", c.test_rt60)] {
            if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!(
                    "corpus.{name} must satisfy 0 <= lo <= hi"
                )));
            }
        }
        if c.snr_levels.is_empty() || c.snr_levels.iter().any(|s| !s.is_finite()) {
            return Err(Error::Config(
                "corpus.snr_levels must be non-empty and finite".into(),
            ));
        }
        if matches!(c.additive_domain, Domain::Clean | Domain::ReverbNoise) {
            return Err(Error::Config(format!(
                "corpus.additive_domain must be a noise type, not {}",
                c.additive_domain
            )));
        }
        if self.sv.n_ceps == 0 || self.sv.n_ceps > self.features.mel.n_filters {
            return Err(Error::Config(
                "sv.n_ceps must lie in 1..=mel filters".into(),
            ));
        }
        if self.sv.embedder.input_dim != self.sv.n_ceps {
            return Err(Error::Config(format!(
                "sv.embedder.input_dim ({}) must equal sv.n_ceps ({})",
                self.sv.embedder.input_dim, self.sv.n_ceps
            )));
        }
        if self.sv.enroll_secs.is_empty() || self.sv.enroll_secs.iter().any(|d| !(*d > 0.0)) {
            return Err(Error::Config(
                "sv.enroll_secs must list positive durations".into(),
            ));
        }
        if !(self.sv.test_chunk_secs > 0.0) {
            return Err(Error::Config("sv.test_chunk_secs must be positive".into()));
        }
        let min_frames = self.discriminator.min_input();
        if self.schedule.seq_len < min_frames || self.features.mel.n_filters < min_frames {
            return Err(Error::Config(format!(
                "training crops must be at least {min_frames} frames and filters for the discriminator"
            )));
        }
        Ok(())
    }

    /// Paths named by the configuration that must exist before a run.
    pub fn required_inputs(&self) -> Vec<PathBuf> {
        match &self.corpus.source {
            CorpusSource::Toy { .. } => Vec::new(),
            CorpusSource::Files {
                train_clean,
                test_clean,
                noise,
                audio_root,
            } => vec![
                train_clean.clone(),
                test_clean.clone(),
                noise.clone(),
                audio_root.clone(),
            ],
        }
    }

    pub fn check_inputs(&self) -> Result<()> {
        match self.required_inputs().into_iter().find(|p| !p.exists()) {
            Some(p) => Err(Error::MissingFile(p)),
            None => Ok(()),
        }
    }
}
