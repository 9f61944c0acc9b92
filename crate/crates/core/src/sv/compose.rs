//! Training-corpus recipes for the downstream speaker system.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, Domain, UtteranceRecord};
use crate::error::{Error, Result};

pub const ENHANCED_SUFFIX: &str = "-enh";

pub fn enhanced_id(utt_id: &str) -> String {
    format!("{utt_id}{ENHANCED_SUFFIX}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SvsScheme {
    /// Every training utterance replaced by its enhanced version.
    Svs1,
    /// Enhanced reverberant data with the unmodified clean and additive data.
    Svs2,
    /// Original data together with its enhanced copy, for half the epochs.
    Svs3,
}

impl SvsScheme {
    pub const ALL: [SvsScheme; 3] = [SvsScheme::Svs1, SvsScheme::Svs2, SvsScheme::Svs3];

    pub fn epochs(self) -> f64 {
        match self {
            SvsScheme::Svs1 | SvsScheme::Svs2 => 3.0,
            SvsScheme::Svs3 => 1.5,
        }
    }
}

impl fmt::Display for SvsScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SvsScheme::Svs1 => "SVS1",
            SvsScheme::Svs2 => "SVS2",
            SvsScheme::Svs3 => "SVS3",
        })
    }
}

impl FromStr for SvsScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SvsScheme::ALL
            .into_iter()
            .find(|v| v.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown scheme {s:?} (SVS1, SVS2 or SVS3)")))
    }
}

/// One source of training data and, when available, its enhanced copy.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPool {
    pub original: CorpusManifest,
    pub enhanced: Option<CorpusManifest>,
}

impl TrainingPool {
    fn enhanced_records(&self) -> Result<Vec<UtteranceRecord>> {
        let domain = self.original.domain;
        let enh = self
            .enhanced
            .as_ref()
            .ok_or_else(|| Error::invalid(format!("no enhanced version of the {domain} data")))?;
        self.original
            .records()
            .iter()
            .map(|r| {
                let id = enhanced_id(&r.utt_id);
                enh.get(&id).cloned().ok_or_else(|| {
                    Error::invalid(format!("enhanced counterpart {id} of {} missing", r.utt_id))
                })
            })
            .collect()
    }
}

/// Records of a composed training corpus, possibly spanning domains, with
/// its epoch budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SvsCorpus {
    pub scheme: SvsScheme,
    pub records: Vec<UtteranceRecord>,
    pub epochs: f64,
}

impl SvsCorpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Utterance visits the budget allows.
    pub fn utterance_visits(&self) -> f64 {
        self.epochs * self.records.len() as f64
    }

    /// Manifest TSV of the records, in the corpus manifest column layout.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("utt_id\tpath\tspeaker\tsession\tmic\tdomain\n");
        for r in &self.records {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                r.utt_id, r.audio_path, r.speaker_id, r.session_id, r.mic_id, r.domain
            ));
        }
        s
    }
}

pub fn compose_svs_corpus(scheme: SvsScheme, pools: &[TrainingPool]) -> Result<SvsCorpus> {
    if pools.is_empty() {
        return Err(Error::invalid("no training data to compose"));
    }
    let mut records = Vec::new();
    for pool in pools {
        let reverberant = pool.original.domain == Domain::ReverbNoise;
        match scheme {
            SvsScheme::Svs1 => records.extend(pool.enhanced_records()?),
            SvsScheme::Svs2 if reverberant => records.extend(pool.enhanced_records()?),
            SvsScheme::Svs2 => records.extend(pool.original.records().iter().cloned()),
            SvsScheme::Svs3 => {
                records.extend(pool.original.records().iter().cloned());
                records.extend(pool.enhanced_records()?);
            }
        }
    }
    Ok(SvsCorpus {
        scheme,
        records,
        epochs: scheme.epochs(),
    })
}
