//! End-to-end acceptance suite. Every criterion prints one PASS/FAIL line
//! (written straight to stdout so it shows without `--nocapture`); the test
//! fails if any criterion fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use farfield::archive::FeatureArchive;
use farfield::config::{PipelineConfig, Preset};
use farfield::corpus::{
    apply_rir, mix_noise_at_snr, synth_rir, CorpusManifest, Domain, PairedManifest,
};
use farfield::features::Waveform;
use farfield::losses::{
    cyclegan_objective, disc_objective, loss_adv_gen, loss_cycle, loss_cyclegan_gen, loss_disc,
    loss_fm, loss_sen, sen_objective, BatchPair, LossWeights,
};
use farfield::nn::gradcheck::{max_relative_error, numeric_gradient};
use farfield::nn::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ParamSet};
use farfield::pipeline::{
    RecipeBudget, RunLayout, RECIPES_FILE, TEST_CLEAN, TEST_REVERB, TRAIN_CLEAN, TRAIN_REVERB,
};
use farfield::sv::{eer, min_dcf, DcfParams};
use farfield::train::{
    train_cyclegan, CycleGanTrainer, PairedData, TrainOptions, TrainSchedule, UnpairedData,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

const SEEDS: [u64; 2] = [0, 1];

fn toy_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/toy.toml")
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn line(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
    let _ = out.flush();
}

fn run_criterion(
    id: usize,
    title: &str,
    budget: Option<Duration>,
    f: impl FnOnce() -> Outcome,
) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into());
        Err(msg)
    });
    let elapsed = start.elapsed();
    let result = match (result, budget) {
        (Ok(_), Some(b)) if elapsed > b => Err(format!(
            "took {:.1} s, budget {:.0} s",
            elapsed.as_secs_f64(),
            b.as_secs_f64()
        )),
        (r, _) => r,
    };
    let (tag, detail) = match &result {
        Ok(d) => ("PASS", d.as_str()),
        Err(d) => ("FAIL", d.as_str()),
    };
    line(&format!(
        "criterion {id:>2} [{tag}] {title}: {detail} ({:.1} s)",
        elapsed.as_secs_f64()
    ));
    result.is_ok()
}

fn random(rng: &mut ChaCha8Rng, t: usize, f: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((t, f), || rng.random_range(-scale..scale))
}

fn tiny_gen() -> GeneratorConfig {
    GeneratorConfig {
        base_filters: 2,
        n_residual_blocks: 1,
        ..GeneratorConfig::default()
    }
}

fn tiny_disc() -> DiscriminatorConfig {
    DiscriminatorConfig {
        base_filters: 2,
        ..DiscriminatorConfig::default()
    }
}

/// Zero-core generator whose output is its input plus `c`.
fn shifter(c: f64) -> Generator {
    let mut g = Generator::zeroed(tiny_gen()).unwrap();
    g.params_mut().get_mut("out.bias").unwrap().fill(c);
    g
}

fn scale_weights(p: &mut ParamSet, factor: f64) {
    for (name, t) in p.iter_mut() {
        if name.ends_with(".weight") {
            t.mapv_inplace(|v| v * factor);
        }
    }
}

// Criterion 1 ------------------------------------------------------------

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&mut rng, 9, 40, 3.0);
    let y = random(&mut rng, 9, 40, 3.0);
    ensure(loss_fm(&x, &x).unwrap() == 0.0, "fm(x, x) != 0")?;
    ensure(
        loss_fm(&(&x + 0.5), &x).unwrap() == 0.5,
        "fm(x + 0.5, x) != 0.5",
    )?;
    let brute: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / x.len() as f64;
    ensure(
        (loss_fm(&y, &x).unwrap() - brute).abs() <= 1e-15,
        "fm differs from direct summation",
    )?;

    let ones = Array2::<f64>::ones((4, 5));
    let zeros = Array2::<f64>::zeros((4, 5));
    let half = Array2::<f64>::from_elem((4, 5), 0.5);
    ensure(loss_disc(&ones, &zeros) == 0.0, "disc(1, 0) != 0")?;
    ensure(loss_disc(&zeros, &ones) == 2.0, "disc(0, 1) != 2")?;
    ensure(loss_disc(&half, &half) == 0.5, "disc(0.5, 0.5) != 0.5")?;
    ensure(loss_adv_gen(&ones) == 0.0, "adv(1) != 0")?;
    ensure(loss_adv_gen(&zeros) == 1.0, "adv(0) != 1")?;
    let m = random(&mut rng, 6, 3, 2.0);
    let brute = m.iter().map(|v| (v - 1.0) * (v - 1.0)).sum::<f64>() / m.len() as f64;
    ensure(
        (loss_adv_gen(&m) - brute).abs() <= 1e-15,
        "adv differs from direct summation",
    )?;

    // loss_fm = 0.4 and loss_adv = 0.2
    let enh = Array2::from_elem((2, 2), 0.4);
    let clean = Array2::zeros((2, 2));
    let d_fake = Array2::from_elem((1, 1), 1.0 - 0.2f64.sqrt());
    let sen = loss_sen(&LossWeights::sen(1.0, 0.1), &enh, &clean, &d_fake).unwrap();
    ensure(
        (sen - 0.42).abs() <= 1e-15,
        format!("sen = {sen}, want 0.42"),
    )?;
    let fm_only = loss_sen(&LossWeights::sen(1.0, 0.0), &y, &x, &m).unwrap();
    ensure(
        fm_only == loss_fm(&y, &x).unwrap(),
        "SEN1 weights are not pure FM",
    )?;
    let adv_only = loss_sen(&LossWeights::sen(0.0, 1.0), &y, &x, &m).unwrap();
    ensure(
        adv_only == loss_adv_gen(&m),
        "SEN2 weights are not pure adversarial",
    )?;

    let xa = vec![random(&mut rng, 12, 8, 1.0), random(&mut rng, 9, 8, 1.0)];
    let xb = vec![random(&mut rng, 10, 8, 1.0)];
    let id = shifter(0.0);
    ensure(
        loss_cycle(&id, &id, &xa, &xb).unwrap() == 0.0,
        "cycle of identities != 0",
    )?;
    let inverse = loss_cycle(&shifter(0.75), &shifter(-0.75), &xa, &xb).unwrap();
    ensure(
        inverse <= 1e-15,
        format!("cycle of inverse shifts = {inverse}"),
    )?;
    let off = loss_cycle(&shifter(1.0), &id, &xa, &xb).unwrap();
    ensure(
        (off - 2.0).abs() <= 1e-12,
        format!("cycle of +1/identity = {off}, want 2"),
    )?;
    let mut d = Discriminator::new(tiny_disc(), 1).unwrap();
    d.params_mut().fill(0.0);
    let no_adv = LossWeights::cyclegan(2.5, 0.0);
    let v = loss_cyclegan_gen(&no_adv, &shifter(0.5), &shifter(-0.5), &d, &d, &xa, &xb).unwrap();
    ensure(
        v <= 1e-15,
        "cyclegan objective of inverse generators without adversary != 0",
    )?;
    Ok("fm, disc, adv, sen and cycle examples reproduced".into())
}

// Criterion 2 ------------------------------------------------------------

fn grad_error(
    analytic: &ParamSet,
    params: &ParamSet,
    loss: impl FnMut(&ParamSet) -> f64,
) -> Result<f64, String> {
    let numeric = numeric_gradient(params, 1e-6, loss);
    ensure(
        numeric.nonsmooth_fraction() < 0.02,
        "too many kinks within the probe step",
    )?;
    Ok(max_relative_error(analytic, &numeric).0)
}

fn gradient_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut g = Generator::new(tiny_gen(), 1).unwrap();
    scale_weights(g.params_mut(), 100.0);
    let mut d = Discriminator::new(tiny_disc(), 2).unwrap();
    scale_weights(d.params_mut(), 10.0);
    let sizes = [g.params().num_elements(), d.params().num_elements()];
    ensure(
        sizes.iter().all(|n| *n <= 5000),
        format!("tiny configs too large: {sizes:?}"),
    )?;

    let x_deg: Vec<_> = (0..2).map(|_| random(&mut rng, 8, 8, 2.0)).collect();
    // targets kept 0.5 away from the outputs so probes never cross |.| kinks
    let x_ref: Vec<_> = x_deg
        .iter()
        .map(|x| {
            g.forward(x).unwrap().mapv(|v| {
                let off = rng.random_range(0.5..1.5);
                if rng.random_bool(0.5) {
                    v + off
                } else {
                    v - off
                }
            })
        })
        .collect();
    let batch = BatchPair::new(x_deg, x_ref, true).unwrap();
    let mut errors: Vec<(String, f64)> = Vec::new();
    for w in [
        LossWeights::sen(1.0, 0.0),
        LossWeights::sen(0.0, 1.0),
        LossWeights::sen(1.0, 0.1),
    ] {
        let (_, analytic) = sen_objective(&w, &g, &d, &batch).unwrap();
        let err = grad_error(&analytic, g.params(), |p| {
            let g = Generator::from_params(tiny_gen(), p.clone()).unwrap();
            let mut total = 0.0;
            let (mut fm, mut n) = (0.0, 0.0);
            let mut maps = Vec::new();
            for (x, c) in batch.x_deg.iter().zip(&batch.x_ref) {
                let y = g.forward(x).unwrap();
                fm += y
                    .iter()
                    .zip(c.iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum::<f64>();
                n += y.len() as f64;
                maps.push(d.forward(&y).unwrap());
            }
            let cells: f64 = maps.iter().map(|m| m.len() as f64).sum();
            let adv: f64 = maps
                .iter()
                .flat_map(|m| m.iter())
                .map(|v| (v - 1.0).powi(2))
                .sum::<f64>()
                / cells;
            total += w.lambda_fm * fm / n + w.lambda_adv * adv;
            total
        })?;
        errors.push((format!("SEN {w:?}"), err));
    }

    let real: Vec<_> = (0..2).map(|_| random(&mut rng, 9, 8, 2.0)).collect();
    let fake: Vec<_> = (0..2).map(|_| random(&mut rng, 9, 8, 2.0)).collect();
    let (_, analytic) = disc_objective(&d, &real, &fake).unwrap();
    errors.push((
        "critic".into(),
        grad_error(&analytic, d.params(), |p| {
            let d = Discriminator::from_params(tiny_disc(), p.clone()).unwrap();
            let mean = |xs: &[Array2<f64>], target: f64| {
                let maps: Vec<_> = xs.iter().map(|x| d.forward(x).unwrap()).collect();
                let n: usize = maps.iter().map(|m| m.len()).sum();
                maps.iter()
                    .flat_map(|m| m.iter())
                    .map(|v| (v - target).powi(2))
                    .sum::<f64>()
                    / n as f64
            };
            mean(&real, 1.0) + mean(&fake, 0.0)
        })?,
    ));

    let mut g_ab = Generator::new(tiny_gen(), 3).unwrap();
    let mut g_ba = Generator::new(tiny_gen(), 4).unwrap();
    for g in [&mut g_ab, &mut g_ba] {
        scale_weights(g.params_mut(), 100.0);
        g.params_mut().get_mut("out.bias").unwrap().fill(3.0);
    }
    let d_b = Discriminator::new(tiny_disc(), 5).unwrap();
    let xa = vec![random(&mut rng, 8, 8, 1.0)];
    let xb = vec![random(&mut rng, 8, 8, 1.0)];
    let w = LossWeights::cyclegan(2.5, 1.0);
    let (_, grad_ab, grad_ba) = cyclegan_objective(&w, &g_ab, &g_ba, &d, &d_b, &xa, &xb).unwrap();
    errors.push((
        "g_ab".into(),
        grad_error(&grad_ab, g_ab.params(), |p| {
            let g = Generator::from_params(tiny_gen(), p.clone()).unwrap();
            loss_cyclegan_gen(&w, &g, &g_ba, &d, &d_b, &xa, &xb).unwrap()
        })?,
    ));
    errors.push((
        "g_ba".into(),
        grad_error(&grad_ba, g_ba.params(), |p| {
            let g = Generator::from_params(tiny_gen(), p.clone()).unwrap();
            loss_cyclegan_gen(&w, &g_ab, &g, &d, &d_b, &xa, &xb).unwrap()
        })?,
    ));
    let (name, worst) = errors
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    ensure(
        worst < 1e-4,
        format!("max relative error {worst:.2e} ({name})"),
    )?;
    Ok(format!(
        "SEN (3 weightings), critic and both CycleGAN generators; max relative error {worst:.1e} \
         ({} / {} parameters)",
        sizes[0], sizes[1]
    ))
}

// Criterion 3 ------------------------------------------------------------

fn shape_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let g = Generator::new(GeneratorConfig::desk(), 7).unwrap();
    for t in 1..=256 {
        let x = random(&mut rng, t, 40, 2.0);
        let y = g.forward(&x).unwrap();
        ensure(y.dim() == (t, 40), format!("T={t}: output {:?}", y.dim()))?;
    }
    let zero = Generator::zeroed(GeneratorConfig::desk()).unwrap();
    for t in [1, 5, 127, 200] {
        let x = random(&mut rng, t, 40, 5.0);
        ensure(
            zero.forward(&x).unwrap() == x,
            format!("zeroed core is not the identity at T={t}"),
        )?;
    }
    let cfg = DiscriminatorConfig::desk();
    let d = Discriminator::new(cfg.clone(), 8).unwrap();
    let oracle = |n: usize| cfg.strides.iter().fold(n, |n, s| n.div_ceil(*s));
    ensure(
        cfg.output_size(127, 40) == (16, 5),
        format!("127x40 -> {:?}", cfg.output_size(127, 40)),
    )?;
    for t in (cfg.min_input()..=200).step_by(7) {
        let map = d.forward(&random(&mut rng, t, 40, 1.0)).unwrap();
        ensure(
            map.dim() == (oracle(t), oracle(40)),
            format!("T={t}: map {:?}", map.dim()),
        )?;
        let (single, double) = (cfg.output_size(t, 40).0, cfg.output_size(2 * t, 40).0);
        ensure(
            double.abs_diff(2 * single) <= 1,
            format!("T={t}: doubling gives {single} -> {double}"),
        )?;
    }
    Ok("T x 40 preserved for T in 1..=256, zeroed core is the identity, critic maps match stride arithmetic".into())
}

// Criterion 4 ------------------------------------------------------------

fn power(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

fn snr_and_rir() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut worst_db: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(400..4000);
        let s: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-1.0..1.0) * rng.random_range(0.01..1.0))
            .collect();
        let noise_len = rng.random_range(100..3000);
        let z: Vec<f64> = (0..noise_len)
            .map(|_| rng.random_range(-0.3..0.3))
            .collect();
        let snr = rng.random_range(-5.0..30.0);
        let s = Waveform::new(s, 16000).unwrap();
        let m = mix_noise_at_snr(&s, &Waveform::new(z, 16000).unwrap(), snr).unwrap();
        let added: Vec<f64> = m
            .mixed
            .samples()
            .iter()
            .zip(s.samples())
            .map(|(a, b)| a - b)
            .collect();
        let measured = 10.0 * (power(s.samples()) / power(&added)).log10();
        worst_db = worst_db.max((measured - snr).abs());
    }
    ensure(worst_db <= 0.01, format!("SNR off by {worst_db:.4} dB"))?;

    let mut worst_rel: f64 = 0.0;
    for trial in 0..20u64 {
        let x: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = if trial % 2 == 0 {
            (0..64).map(|_| rng.random_range(-1.0..1.0)).collect()
        } else {
            synth_rir(rng.random_range(0.05..0.3), 2048, 16000, trial)
                .unwrap()
                .samples
        };
        let mut direct = vec![0.0; x.len()];
        for (n, out) in direct.iter_mut().enumerate() {
            for (k, hk) in h.iter().enumerate().take(n + 1) {
                *out += hk * x[n - k];
            }
        }
        let in_peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let out_peak = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        direct.iter_mut().for_each(|v| *v *= in_peak / out_peak);
        let spec = farfield::corpus::RirSpec {
            rt60: 0.0,
            source: farfield::corpus::RirSource::ExternalFile,
            samples: h,
        };
        let got = apply_rir(&Waveform::new(x, 16000).unwrap(), &spec).unwrap();
        let err = got
            .samples()
            .iter()
            .zip(&direct)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        worst_rel = worst_rel.max(err / in_peak);
    }
    ensure(
        worst_rel <= 1e-6,
        format!("RIR convolution off by {worst_rel:.2e} relative"),
    )?;
    Ok(format!(
        "100 mixes within {worst_db:.1e} dB; 20 convolutions within {worst_rel:.1e} relative"
    ))
}

// Criterion 5 ------------------------------------------------------------

fn schedule() -> Outcome {
    let s = TrainSchedule::default();
    ensure(
        s.epochs == 50 && s.lr_gen == 3e-4 && s.lr_min == 1e-6,
        "default schedule changed",
    )?;
    for epoch in 0..50 {
        let got = s.lr_at(epoch, 3e-4).unwrap();
        let want = if epoch < 15 {
            3e-4
        } else {
            3e-4 + (epoch as f64 - 15.0) / (49.0 - 15.0) * (1e-6 - 3e-4)
        };
        ensure(
            (got - want).abs() <= 1e-12,
            format!("epoch {epoch}: {got} vs {want}"),
        )?;
    }
    ensure(
        s.lr_at(14, 3e-4).unwrap() == 3e-4,
        "epoch 14 not at base rate",
    )?;
    ensure(
        (s.lr_at(49, 3e-4).unwrap() - 1e-6).abs() <= 1e-18,
        "epoch 49 not at the floor",
    )?;
    Ok(format!(
        "constant 3e-4 through epoch 14, 1e-6 at 49, epoch 32 = {:.6e}",
        s.lr_at(32, 3e-4).unwrap()
    ))
}

// Criterion 6 ------------------------------------------------------------

fn epoch_contract(run: &Path) -> Outcome {
    let layout = RunLayout::new(run);
    let cfg = PipelineConfig::load(toy_config()).unwrap();
    let manifest = CorpusManifest::load(layout.manifest(TRAIN_CLEAN), Domain::Clean).unwrap();
    let pairs = PairedManifest::load(layout.pairs("train")).unwrap();
    let deg = FeatureArchive::load(layout.features(TRAIN_REVERB)).unwrap();
    let clean = FeatureArchive::load(layout.features(TRAIN_CLEAN)).unwrap();
    let data = PairedData::new(&pairs, &deg, &clean).unwrap();
    let mut want: Vec<&str> = manifest
        .records()
        .iter()
        .map(|r| r.utt_id.as_str())
        .collect();
    want.sort_unstable();
    for schedule in [cfg.schedule.clone(), TrainSchedule::default()] {
        for epoch in 0..2 {
            let mut seen: Vec<String> = data
                .epoch(&schedule, epoch)
                .unwrap()
                .into_iter()
                .flat_map(|(ids, _)| ids)
                .collect();
            seen.sort_unstable();
            ensure(
                seen == want,
                format!(
                    "batch size {}, epoch {epoch}: visited ids differ",
                    schedule.batch_size
                ),
            )?;
        }
    }
    Ok(format!(
        "{} clean utterances each visited once per epoch (batch sizes 2 and 32)",
        want.len()
    ))
}

// Criterion 7 ------------------------------------------------------------

/// Error rates at every threshold placed below, between and above the
/// distinct scores.
fn sweep(t: &[f64], n: &[f64]) -> Vec<(f64, f64)> {
    let mut all: Vec<f64> = t.iter().chain(n).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(all.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(f64::INFINITY);
    thresholds
        .iter()
        .map(|th| {
            let miss = t.iter().filter(|s| **s < *th).count() as f64 / t.len() as f64;
            let fa = n.iter().filter(|s| **s >= *th).count() as f64 / n.len() as f64;
            (miss, fa)
        })
        .collect()
}

fn sweep_eer(points: &[(f64, f64)]) -> f64 {
    for w in points.windows(2) {
        let ((m1, f1), (m2, f2)) = (w[0], w[1]);
        if m1 <= f1 && m2 >= f2 {
            let (d1, d2) = (m1 - f1, m2 - f2);
            if d2 == d1 {
                return m1;
            }
            return m1 + (-d1 / (d2 - d1)) * (m2 - m1);
        }
    }
    panic!("no crossing");
}

fn sweep_min_dcf(points: &[(f64, f64)], p: &DcfParams) -> f64 {
    let norm = (p.c_miss * p.p_target).min(p.c_fa * (1.0 - p.p_target));
    points
        .iter()
        .map(|(m, f)| p.c_miss * p.p_target * m + p.c_fa * (1.0 - p.p_target) * f)
        .fold(f64::INFINITY, f64::min)
        / norm
}

fn scoring_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let p = DcfParams::default();
    let (mut worst, mut worst_invariance): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let nt = rng.random_range(5..60);
        let nn = rng.random_range(20..200);
        let shift = rng.random_range(0.0..2.0);
        let mut t: Vec<f64> = (0..nt)
            .map(|_| rng.random_range(-1.0..1.0) + shift)
            .collect();
        let n: Vec<f64> = (0..nn).map(|_| rng.random_range(-1.0..1.0)).collect();
        if rng.random_bool(0.3) {
            // exact ties between classes
            t[0] = n[0];
        }
        let points = sweep(&t, &n);
        let (e, c) = (eer(&t, &n).unwrap(), min_dcf(&t, &n, &p).unwrap());
        worst = worst
            .max((e - sweep_eer(&points)).abs())
            .max((c - sweep_min_dcf(&points, &p)).abs());
        let warp = |v: &f64| 3.0 * v + v.powi(3) + 7.0;
        let (tw, nw): (Vec<f64>, Vec<f64>) =
            (t.iter().map(warp).collect(), n.iter().map(warp).collect());
        worst_invariance = worst_invariance
            .max((eer(&tw, &nw).unwrap() - e).abs())
            .max((min_dcf(&tw, &nw, &p).unwrap() - c).abs());
    }
    ensure(worst <= 1e-9, format!("sweep mismatch {worst:.2e}"))?;
    ensure(
        worst_invariance <= 1e-9,
        format!("monotone transform changed metrics by {worst_invariance:.2e}"),
    )?;
    Ok(format!(
        "100 score sets within {worst:.1e} of the sweep; monotone transform changes {worst_invariance:.1e}"
    ))
}

// Pipeline runs ------------------------------------------------------------

struct CliRun {
    status: i32,
    output: String,
}

fn cli(args: &[&str]) -> CliRun {
    let out = Command::new(env!("CARGO_BIN_EXE_farfield"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs");
    CliRun {
        status: out.status.code().unwrap_or(-1),
        output: format!(
            "{}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        ),
    }
}

struct SeedRun {
    seed: u64,
    dir: PathBuf,
    /// Failed stage, if any.
    failure: Option<String>,
    train_time: Duration,
}

fn run_pipeline(seed: u64, dir: &Path) -> SeedRun {
    let config = toy_config();
    let (config, seed_s, dir_s) = (
        config.to_str().unwrap(),
        seed.to_string(),
        dir.to_str().unwrap().to_string(),
    );
    let mut run = SeedRun {
        seed,
        dir: dir.to_path_buf(),
        failure: None,
        train_time: Duration::ZERO,
    };
    let stages: [&[&str]; 9] = [
        &["simulate"],
        &["extract"],
        &["train", "--preset", "SEN4"],
        &["enhance", "--preset", "SEN4"],
        &["trials"],
        &["score", "--preset", "SEN4"],
        &["evaluate", "--preset", "SEN4"],
        &["train", "--preset", "SEN1"],
        &["enhance", "--preset", "SEN1"],
    ];
    for stage in stages {
        let mut args = vec!["--config", config, "--seed", &seed_s, "--out-dir", &dir_s];
        args.extend_from_slice(stage);
        let start = Instant::now();
        let r = cli(&args);
        if stage[0] == "train" {
            run.train_time += start.elapsed();
        }
        if r.status != 0 {
            run.failure = Some(format!(
                "`{}` exited with {}: {}",
                stage.join(" "),
                r.status,
                r.output.trim()
            ));
            break;
        }
    }
    run
}

fn mean_l1(a: &FeatureArchive, clean: &FeatureArchive, id_of: impl Fn(&str) -> String) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for (id, x) in a.iter() {
        let c = clean.get(&id_of(id)).expect("clean twin");
        sum += x
            .iter()
            .zip(c.iter())
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>();
        n += x.len();
    }
    sum / n as f64
}

/// Mean over utterances of the per-dimension temporal variance.
fn temporal_variance(a: &FeatureArchive) -> f64 {
    let per_utt: Vec<f64> = a
        .iter()
        .filter(|(_, x)| x.nrows() > 1)
        .map(|(_, x)| x.var_axis(ndarray::Axis(0), 0.0).mean().unwrap())
        .collect();
    per_utt.iter().sum::<f64>() / per_utt.len() as f64
}

fn clean_twin(id: &str) -> String {
    id.strip_suffix("-rev").unwrap_or(id).to_string()
}

fn toy_dereverberation(runs: &[SeedRun]) -> Outcome {
    let mut details = Vec::new();
    for run in runs {
        if let Some(f) = &run.failure {
            return Err(format!("seed {}: {f}", run.seed));
        }
        let layout = RunLayout::new(&run.dir);
        let clean = FeatureArchive::load(layout.features(TEST_CLEAN)).unwrap();
        let degraded = FeatureArchive::load(layout.features(TEST_REVERB)).unwrap();
        let sen4 = FeatureArchive::load(layout.enhanced(Preset::Sen4, TEST_REVERB)).unwrap();
        let sen1 = FeatureArchive::load(layout.enhanced(Preset::Sen1, TEST_REVERB)).unwrap();
        let base = mean_l1(&degraded, &clean, clean_twin);
        let enh = mean_l1(&sen4, &clean, clean_twin);
        let reduction = 1.0 - enh / base;
        let (v_clean, v_fm, v_adv) = (
            temporal_variance(&clean),
            temporal_variance(&sen1),
            temporal_variance(&sen4),
        );
        details.push(format!(
            "seed {}: L1 {base:.3} -> {enh:.3} ({:.0}% lower), variance clean {v_clean:.3} FM-only {v_fm:.3} FM+adv {v_adv:.3}, training {:.0} s",
            run.seed,
            100.0 * reduction,
            run.train_time.as_secs_f64()
        ));
        ensure(
            reduction >= 0.30,
            format!("{}; L1 reduction below 30%", details.join("; ")),
        )?;
        ensure(
            v_fm < v_clean,
            format!(
                "{}; FM-only output is not smoother than clean",
                details.join("; ")
            ),
        )?;
        ensure(
            (v_adv - v_clean).abs() < (v_fm - v_clean).abs(),
            format!(
                "{}; FM+adv variance is not closer to clean",
                details.join("; ")
            ),
        )?;
        ensure(
            run.train_time < Duration::from_secs(15 * 60),
            format!(
                "seed {}: training took {:.0} s",
                run.seed,
                run.train_time.as_secs_f64()
            ),
        )?;
    }
    Ok(details.join("; "))
}

fn round_trip_l1(
    g_ab: &Generator,
    g_ba: &Generator,
    a: &FeatureArchive,
    b: &FeatureArchive,
) -> f64 {
    let mut errs = Vec::new();
    for (fwd, inv, set) in [(g_ab, g_ba, a), (g_ba, g_ab, b)] {
        let (mut sum, mut n) = (0.0, 0usize);
        for (_, x) in set.iter() {
            let rec = inv.forward(&fwd.forward(x).unwrap()).unwrap();
            sum += rec
                .iter()
                .zip(x.iter())
                .map(|(p, q)| (p - q).abs())
                .sum::<f64>();
            n += x.len();
        }
        errs.push(sum / n as f64);
    }
    errs.iter().sum::<f64>() / errs.len() as f64
}

fn cyclegan_sanity(run: &SeedRun) -> Outcome {
    if let Some(f) = &run.failure {
        return Err(format!("seed {}: {f}", run.seed));
    }
    let cfg = PipelineConfig::load(toy_config()).unwrap();
    let layout = RunLayout::new(&run.dir);
    let load = |name| FeatureArchive::load(layout.features(name)).unwrap();
    let data = UnpairedData::new(&load(TRAIN_REVERB), &load(TRAIN_CLEAN)).unwrap();
    let (test_a, test_b) = (load(TEST_REVERB), load(TEST_CLEAN));
    let weights = LossWeights::cyclegan(2.5, 1.0);
    let mut schedule = cfg.schedule.clone();
    schedule.seed = run.seed;
    let domains = ("reverb_noise", "clean");
    let init = CycleGanTrainer::new(
        domains,
        cfg.generator.clone(),
        cfg.discriminator.clone(),
        weights,
        schedule.clone(),
    )
    .unwrap();
    let before = round_trip_l1(&init.g_ab, &init.g_ba, &test_a, &test_b);
    let out = train_cyclegan(
        &data,
        domains,
        cfg.generator,
        cfg.discriminator,
        weights,
        schedule,
        &TrainOptions::default(),
    )
    .unwrap();
    let after = round_trip_l1(&out.g_ab, &out.g_ba, &test_a, &test_b);
    let detail = format!(
        "seed {}: held-out round-trip L1 {before:.4} -> {after:.4} ({:.1}% of initial) after {} steps",
        run.seed,
        100.0 * after / before,
        out.log.len()
    );
    ensure(after <= 0.5 * before, detail.clone())?;
    Ok(detail)
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn pipeline_smoke(runs: &[SeedRun]) -> Outcome {
    let mut details = Vec::new();
    for run in runs {
        if let Some(f) = &run.failure {
            return Err(format!("seed {}: {f}", run.seed));
        }
        let layout = RunLayout::new(&run.dir);
        let report = read_json(&layout.preset_eval_dir(Preset::Sen4).join("report.json"));
        let base = report["baseline"]["eer_percent"].as_f64().unwrap();
        let enh = report["enhanced"]["eer_percent"].as_f64().unwrap();
        ensure(
            report["dcf"]["p_target"].as_f64().is_some(),
            "report lacks DCF parameters",
        )?;
        details.push(format!("seed {}: EER {base:.2}% -> {enh:.2}%", run.seed));
        ensure(
            enh <= base,
            format!("{}; enhanced EER above baseline", details.join("; ")),
        )?;

        let dir = layout.enhanced_dir(Preset::Sen4);
        let budgets: Vec<RecipeBudget> =
            serde_json::from_value(read_json(&dir.join(RECIPES_FILE))).unwrap();
        let by_name: BTreeMap<String, RecipeBudget> =
            budgets.iter().map(|b| (b.scheme.to_string(), *b)).collect();
        let base_records: usize = farfield::pipeline::TRAIN_CORPORA
            .iter()
            .map(|n| {
                std::fs::read_to_string(layout.manifest(n))
                    .unwrap()
                    .lines()
                    .count()
                    - 1
            })
            .sum();
        let rows = |scheme: &str| -> Vec<Vec<String>> {
            std::fs::read_to_string(dir.join(format!("{scheme}.tsv")))
                .unwrap()
                .lines()
                .skip(1)
                .map(|l| l.split('\t').map(str::to_string).collect())
                .collect()
        };
        let (s1, s2, s3) = (rows("svs1"), rows("svs2"), rows("svs3"));
        ensure(
            s1.len() == base_records && s1.iter().all(|r| r[0].ends_with("-enh")),
            "SVS1 is not the all-enhanced set",
        )?;
        ensure(
            s2.len() == base_records,
            "SVS2 size differs from the base set",
        )?;
        ensure(
            s2.iter()
                .all(|r| r[0].ends_with("-enh") == (r[5] == "reverb_noise")),
            "SVS2 must enhance exactly the reverberant records",
        )?;
        ensure(s3.len() == 2 * s1.len(), "SVS3 is not twice SVS1")?;
        let (b1, b2, b3) = (by_name["SVS1"], by_name["SVS2"], by_name["SVS3"]);
        ensure(
            b1.epochs == 3.0 && b2.epochs == 3.0 && b3.epochs == 1.5,
            "recipe epoch budgets",
        )?;
        ensure(
            b1.records == s1.len() && b3.records == s3.len(),
            "recipe sizes disagree with manifests",
        )?;
        ensure(
            b3.utterance_visits == b1.utterance_visits,
            "SVS3 and SVS1 step budgets differ",
        )?;
    }
    Ok(format!(
        "{}; SVS1/2/3 recipes satisfy size and budget contracts",
        details.join("; ")
    ))
}

#[test]
fn acceptance_criteria() {
    let mut ok = vec![run_criterion(
        1,
        "loss identities",
        Some(Duration::from_secs(1)),
        loss_identities,
    )];
    ok.push(run_criterion(
        2,
        "gradient correctness",
        Some(Duration::from_secs(120)),
        gradient_checks,
    ));
    ok.push(run_criterion(
        3,
        "shape and shortcut contract",
        Some(Duration::from_secs(60)),
        shape_contract,
    ));
    ok.push(run_criterion(4, "SNR and RIR exactness", None, snr_and_rir));
    ok.push(run_criterion(5, "learning-rate schedule", None, schedule));

    let root = tempfile::tempdir().unwrap();
    let runs: Vec<SeedRun> = SEEDS
        .iter()
        .map(|s| run_pipeline(*s, &root.path().join(format!("seed{s}"))))
        .collect();
    ok.push(run_criterion(6, "epoch contract", None, || {
        if let Some(f) = &runs[0].failure {
            return Err(f.clone());
        }
        epoch_contract(&runs[0].dir)
    }));
    ok.push(run_criterion(7, "scoring oracles", None, scoring_oracles));
    ok.push(run_criterion(8, "toy dereverberation", None, || {
        toy_dereverberation(&runs)
    }));
    ok.push(run_criterion(
        9,
        "CycleGAN round trip",
        Some(Duration::from_secs(20 * 60)),
        || cyclegan_sanity(&runs[0]),
    ));
    ok.push(run_criterion(10, "end-to-end pipeline", None, || {
        pipeline_smoke(&runs)
    }));

    let passed = ok.iter().filter(|p| **p).count();
    line(&format!(
        "acceptance: {passed}/{} criteria passed",
        ok.len()
    ));
    assert_eq!(passed, ok.len(), "some acceptance criteria failed");
}
