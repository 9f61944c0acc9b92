//! Training, enhancement and speaker-verification stages.

use std::fmt;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::layout::*;
use super::prepare::FeatureInfo;
use crate::archive::FeatureArchive;
use crate::config::{PipelineConfig, Preset, PresetKind};
use crate::corpus::{write_text, CorpusManifest, Domain, PairedManifest, UtteranceRecord};
use crate::error::{Error, Result};
use crate::features::{mfcc_from_logmel, FeatureKind, FeatureMatrix};
use crate::nn::ModelCheckpoint;
use crate::sv::{
    build_enrollments, build_test_chunks, build_trials, compose_svs_corpus, compute_eer,
    compute_min_dcf, enhanced_id, load_trials, save_trials, score_cosine, train_embedder,
    DcfParams, Embedder, Enrollment, LabeledFeatures, ScoreSet, Segment, SkippedEnrollment,
    SvsCorpus, SvsScheme, TrainingPool, ENHANCED_SUFFIX,
};
use crate::train::{
    train_cyclegan, train_sen, PairedData, TrainOptions, UnpairedData, LOSS_LOG, STATE_FILE,
};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainSummary {
    pub preset: Preset,
    pub checkpoint: PathBuf,
    pub steps: usize,
    pub first_total: f64,
    pub last_total: f64,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} steps, total loss {:.4} -> {:.4}, checkpoint {}",
            self.preset,
            self.steps,
            self.first_total,
            self.last_total,
            self.checkpoint.display()
        )
    }
}

/// Checkpoint of the generator used for enhancement under `preset`.
pub fn enhancement_checkpoint(cfg: &PipelineConfig, preset: Preset) -> PathBuf {
    let dir = RunLayout::new(&cfg.out_dir).model_dir(preset);
    match preset.kind(cfg.corpus.additive_domain) {
        PresetKind::Supervised => dir.join("sen.ckpt"),
        PresetKind::Unpaired { target } => {
            dir.join(format!("{}_to_{}.ckpt", Domain::ReverbNoise, target))
        }
    }
}

/// Trains the networks of `preset` on the extracted training features.
pub fn train(cfg: &PipelineConfig, preset: Preset, resume: bool) -> Result<TrainSummary> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.out_dir);
    let out = layout.model_dir(preset);
    let state = out.join(STATE_FILE);
    if resume && !state.exists() {
        return Err(Error::MissingFile(state));
    }
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
        resume: resume.then_some(state),
        stop_after: None,
    };
    let mut schedule = cfg.schedule.clone();
    schedule.seed = crate::seed::derive_seed(cfg.seed, &["train", preset.as_str()]);
    let weights = cfg.weights();
    let (gen, disc) = (cfg.generator.clone(), cfg.discriminator.clone());
    let log = match preset.kind(cfg.corpus.additive_domain) {
        PresetKind::Supervised => {
            let pairs = PairedManifest::load(layout.pairs("train"))?;
            let deg = FeatureArchive::load(layout.features(TRAIN_REVERB))?;
            let clean = FeatureArchive::load(layout.features(TRAIN_CLEAN))?;
            let data = PairedData::new(&pairs, &deg, &clean)?;
            train_sen(&data, gen, disc, weights, schedule, &opts)?.log
        }
        PresetKind::Unpaired { target } => {
            let source = FeatureArchive::load(layout.features(TRAIN_REVERB))?;
            let target_name = if target == Domain::Clean {
                TRAIN_CLEAN
            } else {
                TRAIN_ADDITIVE
            };
            let reference = FeatureArchive::load(layout.features(target_name))?;
            let data = UnpairedData::new(&source, &reference)?;
            let domains = (Domain::ReverbNoise.as_str(), target.as_str());
            train_cyclegan(&data, domains, gen, disc, weights, schedule, &opts)?.log
        }
    };
    let log = if resume {
        crate::train::read_loss_log(out.join(LOSS_LOG))?
    } else {
        log
    };
    Ok(TrainSummary {
        preset,
        checkpoint: enhancement_checkpoint(cfg, preset),
        steps: log.len(),
        first_total: log.first().map_or(f64::NAN, |r| r.total),
        last_total: log.last().map_or(f64::NAN, |r| r.total),
    })
}

fn domain_of(cfg: &PipelineConfig, name: &str) -> Domain {
    match name {
        TRAIN_CLEAN | TEST_CLEAN => Domain::Clean,
        TRAIN_ADDITIVE => cfg.corpus.additive_domain,
        _ => Domain::ReverbNoise,
    }
}

fn load_manifest(cfg: &PipelineConfig, name: &str) -> Result<CorpusManifest> {
    CorpusManifest::load(
        RunLayout::new(&cfg.out_dir).manifest(name),
        domain_of(cfg, name),
    )
}

fn enhanced_manifest(m: &CorpusManifest, name: &str) -> Result<CorpusManifest> {
    let records = m
        .records()
        .iter()
        .map(|r| UtteranceRecord {
            utt_id: enhanced_id(&r.utt_id),
            audio_path: format!("{name}.fea#{}", r.utt_id),
            ..r.clone()
        })
        .collect();
    CorpusManifest::new(m.domain, records)
}

/// Size and epoch budget of one composed embedder training corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecipeBudget {
    pub scheme: SvsScheme,
    pub records: usize,
    pub epochs: f64,
    pub utterance_visits: f64,
}

/// Budgets of the composed corpora, next to their manifests.
pub const RECIPES_FILE: &str = "recipes.json";

/// Maps the evaluation and training archives through the preset's generator
/// (or `checkpoint`) and writes the three training-corpus recipes.
pub fn enhance(
    cfg: &PipelineConfig,
    preset: Preset,
    checkpoint: Option<&Path>,
) -> Result<Vec<SvsCorpus>> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.out_dir);
    let ckpt_path =
        checkpoint.map_or_else(|| enhancement_checkpoint(cfg, preset), Path::to_path_buf);
    let g = ModelCheckpoint::load(&ckpt_path)?.generator;
    let dir = layout.enhanced_dir(preset);
    ensure_dir(&dir)?;
    let mut pools = Vec::new();
    for name in [TEST_REVERB, TRAIN_CLEAN, TRAIN_REVERB, TRAIN_ADDITIVE] {
        let input = FeatureArchive::load(layout.features(name))?;
        let out = crate::train::enhance_corpus(&g, &input, crate::train::EnhanceMode::Full)?;
        out.save(layout.enhanced(preset, name))?;
        let m = load_manifest(cfg, name)?;
        let em = enhanced_manifest(&m, name)?;
        em.save(dir.join(format!("{name}.tsv")))?;
        if name != TEST_REVERB {
            pools.push(TrainingPool {
                original: m,
                enhanced: Some(em),
            });
        }
    }
    let mut composed = Vec::new();
    let mut budgets = Vec::new();
    for scheme in SvsScheme::ALL {
        let c = compose_svs_corpus(scheme, &pools)?;
        write_text(
            &dir.join(format!("{}.tsv", scheme.to_string().to_lowercase())),
            &c.to_tsv(),
        )?;
        budgets.push(RecipeBudget {
            scheme,
            records: c.records.len(),
            epochs: c.epochs,
            utterance_visits: c.utterance_visits(),
        });
        composed.push(c);
    }
    write_text(
        &dir.join(RECIPES_FILE),
        &serde_json::to_string_pretty(&budgets).expect("plain data"),
    )?;
    Ok(composed)
}

/// Enrollment and test segments of the evaluation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPlan {
    pub enrollments: Vec<Enrollment>,
    pub tests: Vec<(String, Segment)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSummary {
    pub enrollments: usize,
    pub tests: usize,
    pub targets: usize,
    pub nontargets: usize,
    pub skipped: Vec<SkippedEnrollment>,
}

impl fmt::Display for TrialSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} enrollments, {} test segments, {} target and {} nontarget trials",
            self.enrollments, self.tests, self.targets, self.nontargets
        )?;
        for s in &self.skipped {
            write!(
                f,
                "\nskipped {} s enrollment of {} ({:.2} s of speech)",
                s.requested, s.speaker_id, s.available
            )?;
        }
        Ok(())
    }
}

/// Builds enrollments from each speaker's first recording session and test
/// chunks from the remaining sessions of the far-field evaluation split.
pub fn build_trial_list(cfg: &PipelineConfig) -> Result<TrialSummary> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.out_dir);
    let info = FeatureInfo::load(&layout)?;
    let m = load_manifest(cfg, TEST_REVERB)?;
    let feats = FeatureArchive::load(layout.features(TEST_REVERB))?;
    let mut speech = IndexMap::new();
    for r in m.records() {
        let x = feats
            .get(&r.utt_id)
            .ok_or_else(|| Error::invalid(format!("{}: features missing", r.utt_id)))?;
        speech.insert(r.utt_id.clone(), x.nrows() as f64 / info.frames_per_sec);
    }
    let mut first_session: IndexMap<&str, &str> = IndexMap::new();
    for r in m.records() {
        first_session.entry(&r.speaker_id).or_insert(&r.session_id);
    }
    let (enroll, test): (Vec<UtteranceRecord>, Vec<UtteranceRecord>) = m
        .records()
        .iter()
        .cloned()
        .partition(|r| first_session[r.speaker_id.as_str()] == r.session_id);
    let enroll = CorpusManifest::new(m.domain, enroll)?;
    let test = CorpusManifest::new(m.domain, test)?;
    let plan = build_enrollments(&enroll, &speech, &cfg.sv.enroll_secs)?;
    let tests = build_test_chunks(
        &test,
        &speech,
        cfg.sv.test_chunk_secs,
        cfg.sv.min_chunk_secs,
    )?;
    let trials = build_trials(&plan.enrollments, &tests, &cfg.sv.rules);
    save_trials(layout.trials(), &trials)?;
    let segments = SegmentPlan {
        enrollments: plan.enrollments,
        tests,
    };
    write_text(
        &layout.segments(),
        &serde_json::to_string_pretty(&segments).expect("plain data"),
    )?;
    let targets = trials
        .iter()
        .filter(|t| t.label == crate::sv::TrialLabel::Target)
        .count();
    Ok(TrialSummary {
        enrollments: segments.enrollments.len(),
        tests: segments.tests.len(),
        targets,
        nontargets: trials.len() - targets,
        skipped: plan.skipped,
    })
}

fn load_segments(layout: &RunLayout) -> Result<SegmentPlan> {
    let path = layout.segments();
    let text = crate::corpus::read_text(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::format("segment plan", path, e.to_string()))
}

fn to_mfcc(x: &Array2<f64>, n_ceps: usize) -> Result<Array2<f64>> {
    Ok(mfcc_from_logmel(&FeatureMatrix::new(x.clone(), FeatureKind::LogMel)?, n_ceps)?.values)
}

fn lookup<'a>(a: &'a FeatureArchive, id: &str) -> Result<&'a Array2<f64>> {
    a.get(id)
        .ok_or_else(|| Error::invalid(format!("{id}: features missing")))
}

/// Embedder training set and epoch count: the clean training features, or
/// the configured recipe's corpus with the recipe's budget scaled so that
/// an SVS1 run matches a plain run.
fn embedder_data(
    cfg: &PipelineConfig,
    preset: Preset,
) -> Result<(Vec<LabeledFeatures>, usize, f64)> {
    let layout = RunLayout::new(&cfg.out_dir);
    let (records, epochs): (Vec<UtteranceRecord>, f64) = match cfg.sv.scheme {
        None => (
            load_manifest(cfg, TRAIN_CLEAN)?.records().to_vec(),
            cfg.sv.training.epochs,
        ),
        Some(scheme) => {
            let pools = TRAIN_CORPORA
                .iter()
                .map(|name| {
                    let m = load_manifest(cfg, name)?;
                    let enhanced = enhanced_manifest(&m, name)?;
                    Ok(TrainingPool {
                        original: m,
                        enhanced: Some(enhanced),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let c = compose_svs_corpus(scheme, &pools)?;
            let scale = cfg.sv.training.epochs / SvsScheme::Svs1.epochs();
            (c.records, c.epochs * scale)
        }
    };
    let mut archives: IndexMap<(Domain, bool), FeatureArchive> = IndexMap::new();
    let mut speakers: Vec<&str> = records.iter().map(|r| r.speaker_id.as_str()).collect();
    speakers.sort_unstable();
    speakers.dedup();
    let mut data = Vec::with_capacity(records.len());
    for r in &records {
        let name = TRAIN_CORPORA
            .into_iter()
            .find(|n| domain_of(cfg, n) == r.domain)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "{}: no training corpus of domain {}",
                    r.utt_id, r.domain
                ))
            })?;
        let (id, enhanced) = match r.utt_id.strip_suffix(ENHANCED_SUFFIX) {
            Some(id) => (id, true),
            None => (r.utt_id.as_str(), false),
        };
        let key = (r.domain, enhanced);
        if !archives.contains_key(&key) {
            let path = if enhanced {
                layout.enhanced(preset, name)
            } else {
                layout.features(name)
            };
            archives.insert(key, FeatureArchive::load(path)?);
        }
        let x = to_mfcc(lookup(&archives[&key], id)?, cfg.sv.n_ceps)?;
        let label = speakers
            .binary_search(&r.speaker_id.as_str())
            .expect("collected above");
        data.push((x, label));
    }
    Ok((data, speakers.len(), epochs))
}

fn segment_frames(x: &Array2<f64>, s: &Segment, fps: f64) -> Array2<f64> {
    x.slice(ndarray::s![s.frame_range(fps, x.nrows()), ..])
        .to_owned()
}

/// Embeddings of every enrollment and test segment under one feature set.
fn embed_segments(
    emb: &Embedder,
    feats: &FeatureArchive,
    plan: &SegmentPlan,
    fps: f64,
    n_ceps: usize,
) -> Result<IndexMap<String, Array1<f64>>> {
    let mut out = IndexMap::new();
    for e in &plan.enrollments {
        let parts = e
            .segments
            .iter()
            .map(|s| Ok(segment_frames(lookup(feats, &s.utt_id)?, s, fps)))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        let x = ndarray::concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        out.insert(e.id.clone(), emb.embed(&to_mfcc(&x, n_ceps)?)?);
    }
    for (id, s) in &plan.tests {
        let x = segment_frames(lookup(feats, &s.utt_id)?, s, fps);
        out.insert(id.clone(), emb.embed(&to_mfcc(&x, n_ceps)?)?);
    }
    Ok(out)
}

fn score_trials(
    trials: &[crate::sv::Trial],
    emb: &IndexMap<String, Array1<f64>>,
) -> Result<ScoreSet> {
    let get = |id: &str| {
        emb.get(id)
            .ok_or_else(|| Error::invalid(format!("no segment {id}")))
    };
    let scores = trials
        .iter()
        .map(|t| {
            let s = score_cosine(
                get(&t.enroll_id)?.as_slice().expect("contiguous"),
                get(&t.test_id)?.as_slice().expect("contiguous"),
            )?;
            Ok((t.clone(), s))
        })
        .collect::<Result<Vec<_>>>()?;
    ScoreSet::new(scores)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSummary {
    pub trials: usize,
    pub embedder_losses: (f64, f64),
    pub baseline: PathBuf,
    pub enhanced: PathBuf,
}

impl fmt::Display for ScoreSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "scored {} trials (embedder loss {:.3} -> {:.3}); {} and {}",
            self.trials,
            self.embedder_losses.0,
            self.embedder_losses.1,
            self.baseline.display(),
            self.enhanced.display()
        )
    }
}

/// Trains the embedder and scores the trial list on the unprocessed and on
/// the enhanced far-field features.
pub fn score(cfg: &PipelineConfig, preset: Preset) -> Result<ScoreSummary> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.out_dir);
    let info = FeatureInfo::load(&layout)?;
    let trials = load_trials(layout.trials())?;
    let plan = load_segments(&layout)?;
    let baseline = FeatureArchive::load(layout.features(TEST_REVERB))?;
    let enhanced = FeatureArchive::load(layout.enhanced(preset, TEST_REVERB))?;
    let (data, classes, epochs) = embedder_data(cfg, preset)?;
    let mut opts = cfg.sv.training.clone();
    opts.epochs = epochs;
    opts.seed = crate::seed::derive_seed(cfg.seed, &["embedder"]);
    let (emb, losses) = train_embedder(cfg.sv.embedder.clone(), &data, classes, &opts)?;
    let dir = layout.preset_eval_dir(preset);
    ensure_dir(&dir)?;
    emb.save(dir.join("embedder.embd"))?;
    let mut paths = Vec::new();
    for (name, feats) in [("baseline", &baseline), ("enhanced", &enhanced)] {
        let e = embed_segments(&emb, feats, &plan, info.frames_per_sec, cfg.sv.n_ceps)?;
        let scores = score_trials(&trials, &e)?;
        let path = dir.join(format!("scores_{name}.tsv"));
        scores.save(&path)?;
        paths.push(path);
    }
    let enhanced = paths.pop().expect("two score files");
    let baseline = paths.pop().expect("two score files");
    Ok(ScoreSummary {
        trials: trials.len(),
        embedder_losses: (
            losses.first().copied().unwrap_or(f64::NAN),
            losses.last().copied().unwrap_or(f64::NAN),
        ),
        baseline,
        enhanced,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRates {
    /// Equal error rate in percent.
    pub eer_percent: f64,
    pub min_dcf: f64,
}

fn rates(s: &ScoreSet, p: &DcfParams) -> Result<ErrorRates> {
    Ok(ErrorRates {
        eer_percent: 100.0 * compute_eer(s)?,
        min_dcf: compute_min_dcf(s, p)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub preset: Preset,
    pub scheme: Option<SvsScheme>,
    pub dcf: DcfParams,
    pub target_trials: usize,
    pub nontarget_trials: usize,
    pub baseline: ErrorRates,
    pub enhanced: ErrorRates,
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "preset: {}", self.preset)?;
        let scheme = self
            .scheme
            .map_or("clean training data".to_string(), |s| s.to_string());
        writeln!(f, "embedder training: {scheme}")?;
        writeln!(
            f,
            "dcf: p_target={} c_miss={} c_fa={}",
            self.dcf.p_target, self.dcf.c_miss, self.dcf.c_fa
        )?;
        writeln!(
            f,
            "trials: {} target, {} nontarget",
            self.target_trials, self.nontarget_trials
        )?;
        writeln!(f, "condition   EER(%)   minDCF")?;
        for (name, r) in [("baseline", self.baseline), ("enhanced", self.enhanced)] {
            writeln!(f, "{name:<10} {:>7.3} {:>8.4}", r.eer_percent, r.min_dcf)?;
        }
        Ok(())
    }
}

/// Error rates of the baseline and enhanced score files.
pub fn evaluate(cfg: &PipelineConfig, preset: Preset) -> Result<EvalReport> {
    cfg.validate()?;
    let layout = RunLayout::new(&cfg.out_dir);
    let trials = load_trials(layout.trials())?;
    let dir = layout.preset_eval_dir(preset);
    let baseline = ScoreSet::load(dir.join("scores_baseline.tsv"), &trials)?;
    let enhanced = ScoreSet::load(dir.join("scores_enhanced.tsv"), &trials)?;
    let (t, n) = baseline.counts();
    let report = EvalReport {
        preset,
        scheme: cfg.sv.scheme,
        dcf: cfg.sv.dcf,
        target_trials: t,
        nontarget_trials: n,
        baseline: rates(&baseline, &cfg.sv.dcf)?,
        enhanced: rates(&enhanced, &cfg.sv.dcf)?,
    };
    write_text(&dir.join("report.txt"), &report.to_string())?;
    write_text(
        &dir.join("report.json"),
        &serde_json::to_string_pretty(&report).expect("plain data"),
    )?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub system: String,
    pub lambda_fm: Option<f64>,
    pub lambda_adv: Option<f64>,
    pub rates: ErrorRates,
}

fn ablation_table(rows: &[AblationRow], dcf: &DcfParams) -> String {
    let w = |v: Option<f64>| v.map_or("-".to_string(), |x| x.to_string());
    let mut s = format!("minDCF at p_target={}\n", dcf.p_target);
    s.push_str("system  lambda_fm  lambda_adv   EER(%)   minDCF\n");
    for r in rows {
        s.push_str(&format!(
            "{:<7} {:>9} {:>11} {:>8.3} {:>8.4}\n",
            r.system,
            w(r.lambda_fm),
            w(r.lambda_adv),
            r.rates.eer_percent,
            r.rates.min_dcf
        ));
    }
    s
}

/// Trains, enhances, scores and evaluates every supervised preset and writes
/// a comparison table with the unenhanced baseline as the first row.
pub fn ablate(cfg: &PipelineConfig) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::new();
    for preset in Preset::SUPERVISED {
        let mut c = cfg.clone();
        c.preset = preset;
        c.weights = None;
        train(&c, preset, false)?;
        enhance(&c, preset, None)?;
        score(&c, preset)?;
        let report = evaluate(&c, preset)?;
        if rows.is_empty() {
            rows.push(AblationRow {
                system: "BL".into(),
                lambda_fm: None,
                lambda_adv: None,
                rates: report.baseline,
            });
        }
        let w = preset.weights();
        rows.push(AblationRow {
            system: preset.to_string(),
            lambda_fm: Some(w.lambda_fm),
            lambda_adv: Some(w.lambda_adv),
            rates: report.enhanced,
        });
    }
    let layout = RunLayout::new(&cfg.out_dir);
    let dir = layout.ablation_dir();
    write_text(&dir.join("table.txt"), &ablation_table(&rows, &cfg.sv.dcf))?;
    write_text(
        &dir.join("table.json"),
        &serde_json::to_string_pretty(&rows).expect("plain data"),
    )?;
    Ok(rows)
}
