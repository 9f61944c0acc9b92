use std::path::{Path, PathBuf};

use crate::config::Preset;

/// Corpora produced by simulation, by file stem.
pub const TRAIN_CLEAN: &str = "train_clean";
pub const TRAIN_REVERB: &str = "train_reverb";
pub const TRAIN_ADDITIVE: &str = "train_additive";
pub const TEST_CLEAN: &str = "test_clean";
pub const TEST_REVERB: &str = "test_reverb";
pub const NOISE_SOURCES: &str = "noise_sources";
pub const ADDITIVE_SOURCES: &str = "additive_sources";

pub const TRAIN_CORPORA: [&str; 3] = [TRAIN_CLEAN, TRAIN_REVERB, TRAIN_ADDITIVE];
pub const FEATURE_CORPORA: [&str; 5] = [
    TRAIN_CLEAN,
    TRAIN_REVERB,
    TRAIN_ADDITIVE,
    TEST_CLEAN,
    TEST_REVERB,
];

/// Directory layout of a run:
///
/// ```text
/// corpus/    <name>.tsv manifests, <split>_pairs.tsv, <split>_plan.tsv, audio/
/// features/  <name>.fea archives, info.json
/// models/<preset>/     checkpoints, losses.jsonl, train.state
/// enhanced/<preset>/   <name>.fea, <name>.tsv, svs1..3.tsv
/// eval/      trials.tsv, segments.json
/// eval/<preset>/       embedder.embd, scores_{baseline,enhanced}.tsv, report.{txt,json}
/// ablation/  table.txt, table.json
/// ```
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn audio_root(&self) -> PathBuf {
        self.corpus_dir().join("audio")
    }

    pub fn manifest(&self, name: &str) -> PathBuf {
        self.corpus_dir().join(format!("{name}.tsv"))
    }

    pub fn pairs(&self, split: &str) -> PathBuf {
        self.corpus_dir().join(format!("{split}_pairs.tsv"))
    }

    pub fn plan(&self, split: &str) -> PathBuf {
        self.corpus_dir().join(format!("{split}_plan.tsv"))
    }

    pub fn features_dir(&self) -> PathBuf {
        self.root.join("features")
    }

    pub fn features(&self, name: &str) -> PathBuf {
        self.features_dir().join(format!("{name}.fea"))
    }

    pub fn feature_info(&self) -> PathBuf {
        self.features_dir().join("info.json")
    }

    pub fn model_dir(&self, preset: Preset) -> PathBuf {
        self.root.join("models").join(preset.as_str())
    }

    pub fn enhanced_dir(&self, preset: Preset) -> PathBuf {
        self.root.join("enhanced").join(preset.as_str())
    }

    pub fn enhanced(&self, preset: Preset, name: &str) -> PathBuf {
        self.enhanced_dir(preset).join(format!("{name}.fea"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }

    pub fn trials(&self) -> PathBuf {
        self.eval_dir().join("trials.tsv")
    }

    pub fn segments(&self) -> PathBuf {
        self.eval_dir().join("segments.json")
    }

    pub fn preset_eval_dir(&self, preset: Preset) -> PathBuf {
        self.eval_dir().join(preset.as_str())
    }

    pub fn ablation_dir(&self) -> PathBuf {
        self.root.join("ablation")
    }
}

pub(crate) fn ensure_dir(dir: &Path) -> crate::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| crate::Error::io(dir, e))
}
