use std::fs;
use std::path::Path;

use farfield::config::{PipelineConfig, Preset};
use farfield::corpus::Domain;
use farfield::nn::{Generator, ModelCheckpoint};
use farfield::pipeline::{self, RunLayout};
use farfield::Error;

fn small_config(seed: u64, out: &Path) -> PipelineConfig {
    let text = format!(
        r#"
seed = {seed}
out_dir = "{}"

[corpus.source]
kind = "toy"
test_utts_per_speaker = 4
noise_files = 2
noise_secs = 2.0

[corpus.source.speech]
speakers = 3
utts_per_speaker = 4
min_secs = 1.0
max_secs = 1.5

[schedule]
batch_size = 2
seq_len = 16
epochs = 1
constant_epochs = 0

[sv]
enroll_secs = [1.0]
test_chunk_secs = 0.5

[sv.training]
epochs = 2.0
crop_frames = 40
"#,
        out.display()
    );
    PipelineConfig::from_toml(&text).unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let summary = pipeline::simulate(&small_config(0, &out), true).unwrap();
    assert!(!out.exists());
    assert_eq!(
        summary
            .corpora
            .iter()
            .find(|(n, _)| n == "train_clean")
            .unwrap()
            .1,
        12
    );
    let text = summary.to_string();
    assert!(text.contains("RT60") && text.contains("dB"));
}

#[test]
fn simulation_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline::simulate(&small_config(4, &a), false).unwrap();
    pipeline::simulate(&small_config(4, &b), false).unwrap();
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.iter().any(|(n, _)| n.ends_with(".tsv")));
    assert!(ta.iter().any(|(n, _)| n.ends_with(".wav")));
    assert_eq!(ta, tb);
    pipeline::simulate(&small_config(4, &a), false).unwrap();
    assert_eq!(tree(&a), tb);
}

#[test]
fn supervised_training_needs_the_pair_list() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(1, &tmp.path().join("run"));
    pipeline::simulate(&cfg, false).unwrap();
    pipeline::extract(&cfg).unwrap();
    let pairs = RunLayout::new(&cfg.out_dir).pairs("train");
    fs::remove_file(&pairs).unwrap();
    match pipeline::train(&cfg, Preset::Sen4, false) {
        Err(Error::MissingFile(p)) => assert_eq!(p, pairs),
        other => panic!("expected a missing-file error, got {other:?}"),
    }
    // unpaired presets do not read it
    let summary = pipeline::train(&cfg, Preset::Uen, false).unwrap();
    assert!(summary.checkpoint.ends_with("reverb_noise_to_clean.ckpt"));
    assert!(summary.checkpoint.exists());
}

#[test]
fn adaptation_target_must_be_a_noise_domain() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(1, tmp.path());
    cfg.corpus.additive_domain = Domain::Clean;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    cfg.corpus.additive_domain = Domain::Babble;
    cfg.validate().unwrap();
    let ckpt = pipeline::enhancement_checkpoint(&cfg, Preset::Dan);
    assert!(ckpt.ends_with("models/DAN/reverb_noise_to_babble.ckpt"));
}

#[test]
fn identity_enhancement_reproduces_the_baseline() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(2, &tmp.path().join("run"));
    pipeline::simulate(&cfg, false).unwrap();
    pipeline::extract(&cfg).unwrap();
    let ckpt = tmp.path().join("identity.ckpt");
    ModelCheckpoint {
        role: "identity".into(),
        generator: Generator::zeroed(cfg.generator.clone()).unwrap(),
    }
    .save(&ckpt)
    .unwrap();
    let recipes = pipeline::enhance(&cfg, Preset::Sen4, Some(&ckpt)).unwrap();
    assert_eq!(recipes.len(), 3);
    assert_eq!(recipes[2].records.len(), 2 * recipes[0].records.len());
    let trials = pipeline::build_trial_list(&cfg).unwrap();
    assert!(trials.targets > 0 && trials.nontargets > 0);
    pipeline::score(&cfg, Preset::Sen4).unwrap();
    let report = pipeline::evaluate(&cfg, Preset::Sen4).unwrap();
    assert_eq!(report.baseline, report.enhanced);
    assert_eq!(report.target_trials, trials.targets);
    let dir = RunLayout::new(&cfg.out_dir).preset_eval_dir(Preset::Sen4);
    let base = fs::read_to_string(dir.join("scores_baseline.tsv")).unwrap();
    assert_eq!(
        base,
        fs::read_to_string(dir.join("scores_enhanced.tsv")).unwrap()
    );
    let text = fs::read_to_string(dir.join("report.txt")).unwrap();
    assert!(text.contains("EER") && text.contains("minDCF") && text.contains("p_target=0.05"));

    // every stage is a deterministic function of its inputs
    let before = tree(&cfg.out_dir);
    pipeline::score(&cfg, Preset::Sen4).unwrap();
    pipeline::evaluate(&cfg, Preset::Sen4).unwrap();
    assert_eq!(tree(&cfg.out_dir), before);
}

#[test]
fn full_run_with_recipe_and_ablation() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small_config(3, &tmp.path().join("run"));
    pipeline::simulate(&cfg, false).unwrap();
    pipeline::extract(&cfg).unwrap();
    let t = pipeline::train(&cfg, Preset::Sen4, false).unwrap();
    assert!(t.steps > 0 && t.last_total.is_finite());
    pipeline::enhance(&cfg, Preset::Sen4, None).unwrap();
    pipeline::build_trial_list(&cfg).unwrap();
    cfg.sv.scheme = Some(farfield::sv::SvsScheme::Svs3);
    pipeline::score(&cfg, Preset::Sen4).unwrap();
    let report = pipeline::evaluate(&cfg, Preset::Sen4).unwrap();
    assert_eq!(report.scheme, Some(farfield::sv::SvsScheme::Svs3));

    cfg.sv.scheme = None;
    let rows = pipeline::ablate(&cfg).unwrap();
    let names: Vec<_> = rows.iter().map(|r| r.system.as_str()).collect();
    assert_eq!(names, ["BL", "SEN1", "SEN2", "SEN3", "SEN4", "SEN5"]);
    assert_eq!(
        (rows[4].lambda_fm, rows[4].lambda_adv),
        (Some(1.0), Some(0.1))
    );
    let table = fs::read_to_string(
        RunLayout::new(&cfg.out_dir)
            .ablation_dir()
            .join("table.txt"),
    )
    .unwrap();
    assert_eq!(table.lines().count(), 2 + rows.len());
}
