//! Training schedule, epoch batching, the paired (supervised) and unpaired
//! (cycle-consistent) trainers, and bulk enhancement with a trained
//! generator.

mod cyclegan;
mod enhance;
mod sen;
mod state;

use std::io::Write;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::archive::FeatureArchive;
use crate::corpus::PairedManifest;
use crate::error::{Error, Result};
use crate::losses::LossRecord;
use crate::seed::rng_for;

pub use cyclegan::{train_cyclegan, CycleGanOutcome, CycleGanTrainer};
pub use enhance::{enhance_corpus, EnhanceMode};
pub use sen::{train_sen, SenOutcome, SenTrainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSchedule {
    pub batch_size: usize,
    pub seq_len: usize,
    pub epochs: usize,
    /// Epochs `0..=constant_epochs` run at the base rate; decay reaches
    /// `lr_min` at the final epoch.
    pub constant_epochs: usize,
    pub lr_gen: f64,
    pub lr_disc: f64,
    pub lr_min: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            batch_size: 32,
            seq_len: 127,
            epochs: 50,
            constant_epochs: 15,
            lr_gen: 3e-4,
            lr_disc: 1e-4,
            lr_min: 1e-6,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("schedule: {m}")));
        if self.batch_size == 0 || self.seq_len == 0 || self.epochs == 0 {
            return bad("batch_size, seq_len and epochs must be positive");
        }
        if self.constant_epochs >= self.epochs {
            return bad("constant_epochs must be below epochs");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_gen && self.lr_min <= self.lr_disc) {
            return bad("need 0 < lr_min <= lr_gen, lr_disc");
        }
        if !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("Adam coefficients must lie in [0, 1) with positive epsilon");
        }
        Ok(())
    }

    /// Learning rate for `epoch`: flat through `constant_epochs`, then linear
    /// down to `lr_min` at the last epoch.
    pub fn lr_at(&self, epoch: usize, base_lr: f64) -> Result<f64> {
        if epoch >= self.epochs {
            return Err(Error::invalid(format!(
                "epoch {epoch} outside a {}-epoch schedule",
                self.epochs
            )));
        }
        if epoch <= self.constant_epochs {
            return Ok(base_lr);
        }
        let span = (self.epochs - 1 - self.constant_epochs) as f64;
        let frac = (epoch - self.constant_epochs) as f64 / span;
        Ok(base_lr + frac * (self.lr_min - base_lr))
    }
}

/// One training crop: utterance index and first frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub index: usize,
    pub offset: usize,
}

/// Crop plan for one epoch over utterances of the given frame counts: every
/// utterance once, shuffled, one random window each, grouped into batches
/// (the last batch may be short).
pub fn epoch_batches(lengths: &[usize], s: &TrainSchedule, epoch: usize) -> Result<Vec<Vec<Crop>>> {
    if lengths.is_empty() {
        return Err(Error::invalid("cannot batch an empty corpus"));
    }
    if let Some(i) = lengths.iter().position(|l| *l == 0) {
        return Err(Error::invalid(format!("utterance {i} has no frames")));
    }
    let mut rng = rng_for(s.seed, &["crops", &epoch.to_string()]);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    let crops: Vec<Crop> = order
        .into_iter()
        .map(|index| Crop {
            index,
            offset: random_offset(lengths[index], s.seq_len, &mut rng),
        })
        .collect();
    Ok(crops.chunks(s.batch_size).map(|c| c.to_vec()).collect())
}

fn random_offset(len: usize, seq_len: usize, rng: &mut impl Rng) -> usize {
    if len > seq_len {
        rng.random_range(0..=len - seq_len)
    } else {
        0
    }
}

/// `seq_len` consecutive frames from `offset`, wrapping around to the start
/// when the utterance is shorter than the window.
pub fn crop_frames(x: &Array2<f64>, offset: usize, seq_len: usize) -> Array2<f64> {
    let n = x.nrows();
    Array2::from_shape_fn((seq_len, x.ncols()), |(i, j)| x[[(offset + i) % n, j]])
}

/// Degraded/clean feature pairs grouped by clean utterance. An epoch visits
/// each clean utterance once, with one of its degraded versions.
#[derive(Debug, Clone)]
pub struct PairedData {
    clean: Vec<(String, Array2<f64>)>,
    degraded: Vec<Vec<(String, Array2<f64>)>>,
}

impl PairedData {
    pub fn new(
        pairs: &PairedManifest,
        degraded: &FeatureArchive,
        clean: &FeatureArchive,
    ) -> Result<Self> {
        let mut groups: IndexMap<String, Vec<(String, Array2<f64>)>> = IndexMap::new();
        for (deg_id, clean_id) in &pairs.pairs {
            let d = degraded
                .get(deg_id)
                .ok_or_else(|| Error::invalid(format!("degraded features for {deg_id} missing")))?;
            let c = clean
                .get(clean_id)
                .ok_or_else(|| Error::invalid(format!("clean features for {clean_id} missing")))?;
            if d.dim() != c.dim() {
                return Err(Error::Shape(format!(
                    "pair {deg_id}/{clean_id} differs in shape: {:?} vs {:?}",
                    d.dim(),
                    c.dim()
                )));
            }
            groups
                .entry(clean_id.clone())
                .or_default()
                .push((deg_id.clone(), d.clone()));
        }
        if groups.is_empty() {
            return Err(Error::invalid("paired manifest is empty"));
        }
        let clean = groups
            .keys()
            .map(|id| (id.clone(), clean.get(id).expect("checked above").clone()))
            .collect();
        Ok(Self {
            clean,
            degraded: groups.into_values().collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.clean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean.is_empty()
    }

    pub fn clean_ids(&self) -> impl Iterator<Item = &str> {
        self.clean.iter().map(|(id, _)| id.as_str())
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.clean.iter().map(|(_, x)| x.nrows()).collect()
    }

    /// Paired crops for one epoch, with the clean utterance id of each.
    pub fn epoch(
        &self,
        s: &TrainSchedule,
        epoch: usize,
    ) -> Result<Vec<(Vec<String>, crate::losses::BatchPair)>> {
        let plan = epoch_batches(&self.lengths(), s, epoch)?;
        let mut rng = rng_for(s.seed, &["partner", &epoch.to_string()]);
        plan.into_iter()
            .map(|batch| {
                let mut ids = Vec::with_capacity(batch.len());
                let mut deg = Vec::with_capacity(batch.len());
                let mut cln = Vec::with_capacity(batch.len());
                for c in batch {
                    let (id, x) = &self.clean[c.index];
                    let versions = &self.degraded[c.index];
                    let (_, d) = &versions[rng.random_range(0..versions.len())];
                    ids.push(id.clone());
                    deg.push(crop_frames(d, c.offset, s.seq_len));
                    cln.push(crop_frames(x, c.offset, s.seq_len));
                }
                Ok((ids, crate::losses::BatchPair::new(deg, cln, true)?))
            })
            .collect()
    }
}

/// Two unpaired feature sets. The epoch follows `reference`; each of its
/// crops is matched with a crop of a uniformly drawn `source` utterance.
#[derive(Debug, Clone)]
pub struct UnpairedData {
    source: Vec<(String, Array2<f64>)>,
    reference: Vec<(String, Array2<f64>)>,
}

impl UnpairedData {
    pub fn new(source: &FeatureArchive, reference: &FeatureArchive) -> Result<Self> {
        if source.is_empty() || reference.is_empty() {
            return Err(Error::invalid(
                "unpaired training needs two non-empty archives",
            ));
        }
        let own = |a: &FeatureArchive| a.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        Ok(Self {
            source: own(source),
            reference: own(reference),
        })
    }

    /// `(source crops, reference crops, reference ids)` per batch.
    #[allow(clippy::type_complexity)]
    pub fn epoch(
        &self,
        s: &TrainSchedule,
        epoch: usize,
    ) -> Result<Vec<(Vec<Array2<f64>>, Vec<Array2<f64>>, Vec<String>)>> {
        let lengths: Vec<usize> = self.reference.iter().map(|(_, x)| x.nrows()).collect();
        if self.source.iter().any(|(_, x)| x.nrows() == 0) {
            return Err(Error::invalid("source utterance with no frames"));
        }
        let plan = epoch_batches(&lengths, s, epoch)?;
        let mut rng = rng_for(s.seed, &["source-draw", &epoch.to_string()]);
        Ok(plan
            .into_iter()
            .map(|batch| {
                let mut src = Vec::with_capacity(batch.len());
                let mut refs = Vec::with_capacity(batch.len());
                let mut ids = Vec::with_capacity(batch.len());
                for c in batch {
                    let (id, x) = &self.reference[c.index];
                    let (_, y) = &self.source[rng.random_range(0..self.source.len())];
                    let off = random_offset(y.nrows(), s.seq_len, &mut rng);
                    src.push(crop_frames(y, off, s.seq_len));
                    refs.push(crop_frames(x, c.offset, s.seq_len));
                    ids.push(id.clone());
                }
                (src, refs, ids)
            })
            .collect())
    }
}

/// Where a training run writes its loss log, per-epoch checkpoints and
/// resumable state. Without `out_dir` nothing is written.
#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    pub out_dir: Option<PathBuf>,
    /// Resume from this state file instead of initializing.
    pub resume: Option<PathBuf>,
    /// Stop after this many epochs of the schedule (the schedule's rates are
    /// unaffected).
    pub stop_after: Option<usize>,
}

pub const LOSS_LOG: &str = "losses.jsonl";
pub const STATE_FILE: &str = "train.state";

pub(crate) struct LossLog {
    records: Vec<LossRecord>,
    file: Option<(PathBuf, std::fs::File)>,
}

impl LossLog {
    pub fn open(out_dir: Option<&Path>, append: bool) -> Result<Self> {
        let file = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join(LOSS_LOG);
                let f = std::fs::OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(append)
                    .truncate(!append)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((path, f))
            }
            None => None,
        };
        Ok(Self {
            records: Vec::new(),
            file,
        })
    }

    pub fn push(&mut self, r: LossRecord) -> Result<()> {
        if let Some((path, f)) = &mut self.file {
            writeln!(f, "{}", r.to_line()).map_err(|e| Error::io(path.as_path(), e))?;
        }
        self.records.push(r);
        Ok(())
    }

    pub fn into_records(self) -> Vec<LossRecord> {
        self.records
    }
}

/// Reads a loss log written by a trainer.
pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<LossRecord>> {
    let text = crate::corpus::read_text(path.as_ref())?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(LossRecord::from_line)
        .collect()
}

pub(crate) fn check_finite(values: &[(&str, f64)], epoch: usize, step: u64) -> Result<()> {
    match values.iter().find(|(_, v)| !v.is_finite()) {
        Some((what, v)) => Err(Error::Numerical {
            epoch,
            step,
            what: format!("{what} = {v}"),
        }),
        None => Ok(()),
    }
}
