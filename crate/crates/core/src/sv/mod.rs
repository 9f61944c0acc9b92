//! Speaker-verification evaluation: enrollment and test segmentation, trial
//! lists, a small embedding network, cosine scoring, error rates and the
//! training-corpus recipes for the downstream system.

mod compose;
mod embedder;
mod metrics;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::corpus::{read_text, write_text, CorpusManifest};
use crate::error::{Error, Result};

pub use compose::{
    compose_svs_corpus, enhanced_id, SvsCorpus, SvsScheme, TrainingPool, ENHANCED_SUFFIX,
};
pub use embedder::{
    train_embedder, Embedder, EmbedderConfig, EmbedderTraining, LabeledFeatures, EMBEDDER_MAGIC,
};
pub use metrics::{compute_eer, compute_min_dcf, eer, min_dcf, operating_points, DcfParams};

/// A stretch `[start, end)` of one utterance's speech, in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub utt_id: String,
    pub speaker_id: String,
    pub session_id: String,
    pub mic_id: String,
    pub start: f64,
    pub end: f64,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    /// Frame range covered at `frames_per_sec`, clipped to `n_frames`.
    pub fn frame_range(&self, frames_per_sec: f64, n_frames: usize) -> std::ops::Range<usize> {
        let a = ((self.start * frames_per_sec).round() as usize).min(n_frames);
        let b = ((self.end * frames_per_sec).round() as usize).clamp(a, n_frames);
        a..b
    }
}

/// Enrollment of one speaker: non-overlapping speech accumulated to a fixed
/// total duration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Enrollment {
    pub id: String,
    pub speaker_id: String,
    pub duration: f64,
    pub segments: Vec<Segment>,
}

/// A speaker that lacked speech for a requested enrollment duration.
#[derive(Debug, Clone, PartialEq)]
pub struct SkippedEnrollment {
    pub speaker_id: String,
    pub requested: f64,
    pub available: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnrollmentPlan {
    pub enrollments: Vec<Enrollment>,
    pub skipped: Vec<SkippedEnrollment>,
}

fn segment_of(r: &crate::corpus::UtteranceRecord, start: f64, end: f64) -> Segment {
    Segment {
        utt_id: r.utt_id.clone(),
        speaker_id: r.speaker_id.clone(),
        session_id: r.session_id.clone(),
        mic_id: r.mic_id.clone(),
        start,
        end,
    }
}

fn speech_of(speech_secs: &IndexMap<String, f64>, id: &str) -> Result<f64> {
    match speech_secs.get(id) {
        Some(d) if d.is_finite() && *d >= 0.0 => Ok(*d),
        Some(d) => Err(Error::invalid(format!("speech duration of {id} is {d}"))),
        None => Err(Error::invalid(format!("no speech duration for {id}"))),
    }
}

/// For every speaker and requested duration, takes speech greedily from the
/// start of the speaker's utterances in manifest order until the total
/// reaches the duration. Speakers with too little speech are skipped and
/// reported.
pub fn build_enrollments(
    m: &CorpusManifest,
    speech_secs: &IndexMap<String, f64>,
    durations: &[f64],
) -> Result<EnrollmentPlan> {
    if let Some(d) = durations.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
        return Err(Error::invalid(format!(
            "enrollment duration {d} must be positive"
        )));
    }
    let mut by_speaker: IndexMap<&str, Vec<&crate::corpus::UtteranceRecord>> = IndexMap::new();
    for r in m.records() {
        by_speaker.entry(r.speaker_id.as_str()).or_default().push(r);
    }
    let mut plan = EnrollmentPlan::default();
    for (spk, utts) in &by_speaker {
        let lens = utts
            .iter()
            .map(|r| speech_of(speech_secs, &r.utt_id))
            .collect::<Result<Vec<_>>>()?;
        let available: f64 = lens.iter().sum();
        for &want in durations {
            if available < want {
                log::warn!(
                    "speaker {spk}: {available:.2} s of speech, skipping {want} s enrollment"
                );
                plan.skipped.push(SkippedEnrollment {
                    speaker_id: spk.to_string(),
                    requested: want,
                    available,
                });
                continue;
            }
            let mut left = want;
            let mut segments = Vec::new();
            for (r, len) in utts.iter().zip(&lens) {
                if left <= 0.0 {
                    break;
                }
                let take = len.min(left);
                if take > 0.0 {
                    segments.push(segment_of(r, 0.0, take));
                    left -= take;
                }
            }
            plan.enrollments.push(Enrollment {
                id: format!("{spk}-enroll{want}s"),
                speaker_id: spk.to_string(),
                duration: want,
                segments,
            });
        }
    }
    Ok(plan)
}

/// Consecutive `chunk`-second pieces of every utterance; a final remainder
/// is kept when it lasts at least `min_secs`.
pub fn build_test_chunks(
    m: &CorpusManifest,
    speech_secs: &IndexMap<String, f64>,
    chunk: f64,
    min_secs: f64,
) -> Result<Vec<(String, Segment)>> {
    if !(chunk.is_finite() && chunk > 0.0 && min_secs >= 0.0) {
        return Err(Error::invalid("test chunk length must be positive"));
    }
    let mut out = Vec::new();
    for r in m.records() {
        let len = speech_of(speech_secs, &r.utt_id)?;
        let mut start = 0.0;
        let mut k = 0;
        while start < len {
            let end = (start + chunk).min(len);
            if end - start >= chunk || end - start >= min_secs {
                out.push((
                    format!("{}-chunk{k:03}", r.utt_id),
                    segment_of(r, start, end),
                ));
            }
            k += 1;
            start += chunk;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialLabel {
    Target,
    Nontarget,
}

impl fmt::Display for TrialLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrialLabel::Target => "target",
            TrialLabel::Nontarget => "nontarget",
        })
    }
}

impl FromStr for TrialLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target" => Ok(TrialLabel::Target),
            "nontarget" => Ok(TrialLabel::Nontarget),
            _ => Err(Error::invalid(format!("unknown trial label {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: TrialLabel,
}

/// Conditions under which a trial is dropped from the cross product.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialRule {
    /// Target trials whose test shares both session and microphone with any
    /// enrollment segment.
    SameSessionAndMic,
}

fn violates(rule: TrialRule, e: &Enrollment, test: &Segment) -> bool {
    match rule {
        TrialRule::SameSessionAndMic => {
            e.speaker_id == test.speaker_id
                && e.segments
                    .iter()
                    .any(|s| s.session_id == test.session_id && s.mic_id == test.mic_id)
        }
    }
}

/// Every enrollment against every test segment, minus rule violations.
/// Labels depend only on whether the speakers match.
pub fn build_trials(
    enrolls: &[Enrollment],
    tests: &[(String, Segment)],
    rules: &[TrialRule],
) -> Vec<Trial> {
    let mut out = Vec::with_capacity(enrolls.len() * tests.len());
    for e in enrolls {
        for (tid, t) in tests {
            if rules.iter().any(|r| violates(*r, e, t)) {
                continue;
            }
            out.push(Trial {
                enroll_id: e.id.clone(),
                test_id: tid.clone(),
                label: if e.speaker_id == t.speaker_id {
                    TrialLabel::Target
                } else {
                    TrialLabel::Nontarget
                },
            });
        }
    }
    out
}

pub fn trials_to_tsv(trials: &[Trial]) -> String {
    let mut s = String::from("enroll_id\ttest_id\tlabel\n");
    for t in trials {
        s.push_str(&format!("{}\t{}\t{}\n", t.enroll_id, t.test_id, t.label));
    }
    s
}

fn tsv_rows<'a>(text: &'a str, header: &str) -> std::result::Result<Vec<Vec<&'a str>>, String> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next() {
        Some(h) if h.trim_end() == header => {}
        other => return Err(format!("expected header {header:?}, found {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split('\t').collect();
            if cols.len() == 3 {
                Ok(cols)
            } else {
                Err(format!(
                    "line {}: expected 3 columns, found {}",
                    i + 2,
                    cols.len()
                ))
            }
        })
        .collect()
}

pub fn save_trials(path: impl AsRef<Path>, trials: &[Trial]) -> Result<()> {
    write_text(path.as_ref(), &trials_to_tsv(trials))
}

pub fn load_trials(path: impl AsRef<Path>) -> Result<Vec<Trial>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let bad = |r: String| Error::format("trial list", path, r);
    tsv_rows(&text, "enroll_id\ttest_id\tlabel")
        .map_err(bad)?
        .into_iter()
        .map(|c| {
            Ok(Trial {
                enroll_id: c[0].to_string(),
                test_id: c[1].to_string(),
                label: c[2].parse().map_err(|e: Error| bad(e.to_string()))?,
            })
        })
        .collect()
}

/// Scored trials; every trial appears once with a finite score.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub scores: Vec<(Trial, f64)>,
}

impl ScoreSet {
    pub fn new(scores: Vec<(Trial, f64)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for (t, s) in &scores {
            if !s.is_finite() {
                return Err(Error::invalid(format!(
                    "score of {}/{} is {s}",
                    t.enroll_id, t.test_id
                )));
            }
            if !seen.insert((&t.enroll_id, &t.test_id)) {
                return Err(Error::invalid(format!(
                    "trial {}/{} scored twice",
                    t.enroll_id, t.test_id
                )));
            }
        }
        Ok(Self { scores })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn counts(&self) -> (usize, usize) {
        let t = self
            .scores
            .iter()
            .filter(|(t, _)| t.label == TrialLabel::Target)
            .count();
        (t, self.scores.len() - t)
    }

    /// Score file: `enroll_id test_id score`.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("enroll_id\ttest_id\tscore\n");
        for (t, v) in &self.scores {
            s.push_str(&format!("{}\t{}\t{v}\n", t.enroll_id, t.test_id));
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_text(path.as_ref(), &self.to_tsv())
    }

    /// Reads a score file and attaches labels from the matching trial list.
    pub fn load(path: impl AsRef<Path>, trials: &[Trial]) -> Result<Self> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let bad = |r: String| Error::format("score", path, r);
        let labels: IndexMap<(&str, &str), &Trial> = trials
            .iter()
            .map(|t| ((t.enroll_id.as_str(), t.test_id.as_str()), t))
            .collect();
        let mut scores = Vec::new();
        for c in tsv_rows(&text, "enroll_id\ttest_id\tscore").map_err(bad)? {
            let trial = labels
                .get(&(c[0], c[1]))
                .ok_or_else(|| bad(format!("trial {}/{} is not in the trial list", c[0], c[1])))?;
            let v: f64 = c[2]
                .parse()
                .map_err(|_| bad(format!("bad score {:?}", c[2])))?;
            scores.push(((*trial).clone(), v));
        }
        if scores.len() != trials.len() {
            return Err(bad(format!(
                "{} scores for {} trials",
                scores.len(),
                trials.len()
            )));
        }
        Self::new(scores)
    }
}

/// Cosine similarity of two embeddings.
pub fn score_cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "embedding sizes {} and {}",
            a.len(),
            b.len()
        )));
    }
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(na > 0.0 && nb > 0.0 && na.is_finite() && nb.is_finite()) {
        return Err(Error::invalid(
            "cannot score a zero or non-finite embedding",
        ));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
