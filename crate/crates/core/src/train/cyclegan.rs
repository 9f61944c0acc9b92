use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::state::StateBundle;
use super::{check_finite, LossLog, TrainOptions, TrainSchedule, UnpairedData, STATE_FILE};
use crate::error::{Error, Result};
use crate::losses::{cyclegan_objective, disc_objective, LossRecord, LossWeights};
use crate::nn::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelCheckpoint};
use crate::optim::Adam;
use crate::seed::derive_seed;

/// Two generators (`a -> b`, `b -> a`) and one critic per domain, trained on
/// unpaired batches with cycle-consistency and adversarial losses.
#[derive(Debug, Clone)]
pub struct CycleGanTrainer {
    pub domain_a: String,
    pub domain_b: String,
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub d_a: Discriminator,
    pub d_b: Discriminator,
    pub weights: LossWeights,
    pub schedule: TrainSchedule,
    opts: [Adam; 4],
    next_epoch: usize,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct CycleMeta {
    kind: String,
    domain_a: String,
    domain_b: String,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    weights: LossWeights,
    schedule: TrainSchedule,
    next_epoch: usize,
    step: u64,
    adam_steps: [u64; 4],
}

const NETS: [&str; 4] = ["g_ab", "g_ba", "d_a", "d_b"];

pub struct CycleGanOutcome {
    pub g_ab: Generator,
    pub g_ba: Generator,
    pub role_ab: String,
    pub role_ba: String,
    pub log: Vec<LossRecord>,
}

pub fn role(from: &str, to: &str) -> String {
    format!("{from}_to_{to}")
}

impl CycleGanTrainer {
    pub fn new(
        domains: (&str, &str),
        gen: GeneratorConfig,
        disc: DiscriminatorConfig,
        weights: LossWeights,
        schedule: TrainSchedule,
    ) -> Result<Self> {
        schedule.validate()?;
        weights.validate()?;
        let seed = |label: &str| derive_seed(schedule.seed, &["cyclegan", label]);
        let g_ab = Generator::new(gen.clone(), seed("g_ab"))?;
        let g_ba = Generator::new(gen, seed("g_ba"))?;
        let d_a = Discriminator::new(disc.clone(), seed("d_a"))?;
        let d_b = Discriminator::new(disc, seed("d_b"))?;
        let adam = |p| {
            Adam::new(
                p,
                schedule.adam_beta1,
                schedule.adam_beta2,
                schedule.adam_eps,
            )
        };
        let opts = [
            adam(g_ab.params()),
            adam(g_ba.params()),
            adam(d_a.params()),
            adam(d_b.params()),
        ];
        Ok(Self {
            domain_a: domains.0.to_string(),
            domain_b: domains.1.to_string(),
            g_ab,
            g_ba,
            d_a,
            d_b,
            weights,
            schedule,
            opts,
            next_epoch: 0,
            step: 0,
        })
    }

    pub fn next_epoch(&self) -> usize {
        self.next_epoch
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Critics first (each on real data of its domain against translations
    /// into it), then both generators jointly.
    pub fn train_step(
        &mut self,
        x_a: &[Array2<f64>],
        x_b: &[Array2<f64>],
        epoch: usize,
    ) -> Result<LossRecord> {
        let lr_gen = self.schedule.lr_at(epoch, self.schedule.lr_gen)?;
        let lr_disc = self.schedule.lr_at(epoch, self.schedule.lr_disc)?;
        let fake_b = x_a
            .iter()
            .map(|x| self.g_ab.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let fake_a = x_b
            .iter()
            .map(|x| self.g_ba.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let (disc_a, grad_da) = disc_objective(&self.d_a, x_a, &fake_a)?;
        let (disc_b, grad_db) = disc_objective(&self.d_b, x_b, &fake_b)?;
        check_finite(&[("disc_a", disc_a), ("disc_b", disc_b)], epoch, self.step)?;
        let [og_ab, og_ba, od_a, od_b] = &mut self.opts;
        od_a.step(self.d_a.params_mut(), &grad_da, lr_disc);
        od_b.step(self.d_b.params_mut(), &grad_db, lr_disc);

        let (terms, grad_ab, grad_ba) = cyclegan_objective(
            &self.weights,
            &self.g_ab,
            &self.g_ba,
            &self.d_a,
            &self.d_b,
            x_a,
            x_b,
        )?;
        check_finite(
            &[
                ("cyc", terms.cyc),
                ("adv_ab", terms.adv_ab),
                ("adv_ba", terms.adv_ba),
            ],
            epoch,
            self.step,
        )?;
        og_ab.step(self.g_ab.params_mut(), &grad_ab, lr_gen);
        og_ba.step(self.g_ba.params_mut(), &grad_ba, lr_gen);
        let all_finite = self.g_ab.params().all_finite()
            && self.g_ba.params().all_finite()
            && self.d_a.params().all_finite()
            && self.d_b.params().all_finite();
        if !all_finite {
            return Err(Error::Numerical {
                epoch,
                step: self.step,
                what: "parameters became non-finite".into(),
            });
        }
        let record = LossRecord {
            epoch,
            step: self.step,
            components: [
                ("disc_a".into(), disc_a),
                ("disc_b".into(), disc_b),
                ("cyc".into(), terms.cyc),
                ("adv_ab".into(), terms.adv_ab),
                ("adv_ba".into(), terms.adv_ba),
            ]
            .into(),
            total: terms.total,
        };
        self.step += 1;
        Ok(record)
    }

    /// `data` holds domain `a` as source and domain `b` as reference; the
    /// epoch follows `b`.
    pub(crate) fn run_epoch(&mut self, data: &UnpairedData, log: &mut LossLog) -> Result<()> {
        let epoch = self.next_epoch;
        for (x_a, x_b, _) in data.epoch(&self.schedule, epoch)? {
            let r = self.train_step(&x_a, &x_b, epoch)?;
            log::debug!("epoch {epoch} step {} total {:.5}", r.step, r.total);
            log.push(r)?;
        }
        self.next_epoch += 1;
        Ok(())
    }

    pub fn save_state(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut b = StateBundle::default();
        let params = [
            self.g_ab.params(),
            self.g_ba.params(),
            self.d_a.params(),
            self.d_b.params(),
        ];
        for ((name, p), opt) in NETS.iter().zip(params).zip(&self.opts) {
            b.add(name, p);
            b.add_adam(&format!("opt_{name}"), opt);
        }
        let meta = CycleMeta {
            kind: "cyclegan".into(),
            domain_a: self.domain_a.clone(),
            domain_b: self.domain_b.clone(),
            generator: self.g_ab.config().clone(),
            discriminator: self.d_a.config().clone(),
            weights: self.weights,
            schedule: self.schedule.clone(),
            next_epoch: self.next_epoch,
            step: self.step,
            adam_steps: [0, 1, 2, 3].map(|i| self.opts[i].steps()),
        };
        b.save(path.as_ref(), &meta)
    }

    pub fn load_state(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (meta, b): (CycleMeta, _) = StateBundle::load(path)?;
        if meta.kind != "cyclegan" {
            return Err(Error::format(
                "training state",
                path,
                format!("expected cyclegan state, got {}", meta.kind),
            ));
        }
        let g_ab = Generator::from_params(meta.generator.clone(), b.take("g_ab"))?;
        let g_ba = Generator::from_params(meta.generator, b.take("g_ba"))?;
        let d_a = Discriminator::from_params(meta.discriminator.clone(), b.take("d_a"))?;
        let d_b = Discriminator::from_params(meta.discriminator, b.take("d_b"))?;
        let s = &meta.schedule;
        let betas = (s.adam_beta1, s.adam_beta2, s.adam_eps);
        let params = [g_ab.params(), g_ba.params(), d_a.params(), d_b.params()];
        let mut opts = Vec::with_capacity(4);
        for (i, (name, p)) in NETS.iter().zip(params).enumerate() {
            opts.push(b.take_adam(&format!("opt_{name}"), p, betas, meta.adam_steps[i])?);
        }
        let opts: [Adam; 4] = opts.try_into().expect("four optimizers");
        Ok(Self {
            domain_a: meta.domain_a,
            domain_b: meta.domain_b,
            g_ab,
            g_ba,
            d_a,
            d_b,
            weights: meta.weights,
            schedule: meta.schedule,
            opts,
            next_epoch: meta.next_epoch,
            step: meta.step,
        })
    }
}

/// Runs (or resumes) unpaired training. With an output directory, writes
/// `losses.jsonl`, per-epoch and final checkpoints named `<a>_to_<b>` and
/// `<b>_to_<a>`, and the resumable `train.state`.
pub fn train_cyclegan(
    data: &UnpairedData,
    domains: (&str, &str),
    gen: GeneratorConfig,
    disc: DiscriminatorConfig,
    weights: LossWeights,
    schedule: TrainSchedule,
    opts: &TrainOptions,
) -> Result<CycleGanOutcome> {
    let mut trainer = match &opts.resume {
        Some(path) => CycleGanTrainer::load_state(path)?,
        None => CycleGanTrainer::new(domains, gen, disc, weights, schedule)?,
    };
    let role_ab = role(&trainer.domain_a, &trainer.domain_b);
    let role_ba = role(&trainer.domain_b, &trainer.domain_a);
    let out = opts.out_dir.as_deref();
    let mut log = LossLog::open(out, opts.resume.is_some())?;
    let last = opts
        .stop_after
        .map_or(trainer.schedule.epochs, |n| n.min(trainer.schedule.epochs));
    let save = |t: &CycleGanTrainer, dir: &Path, suffix: &str| -> Result<()> {
        for (role, g) in [(&role_ab, &t.g_ab), (&role_ba, &t.g_ba)] {
            ModelCheckpoint {
                role: role.clone(),
                generator: g.clone(),
            }
            .save(dir.join(format!("{role}{suffix}.ckpt")))?;
        }
        Ok(())
    };
    while trainer.next_epoch() < last {
        let epoch = trainer.next_epoch();
        if let Err(e) = trainer.run_epoch(data, &mut log) {
            if let (Error::Numerical { .. }, Some(dir)) = (&e, out) {
                trainer.save_state(dir.join("nan_snapshot.state"))?;
            }
            return Err(e);
        }
        log::info!("cyclegan epoch {epoch} done ({} steps)", trainer.steps());
        if let Some(dir) = out {
            save(&trainer, dir, &format!(".epoch{epoch:03}"))?;
            trainer.save_state(dir.join(STATE_FILE))?;
        }
    }
    if let Some(dir) = out {
        save(&trainer, dir, "")?;
    }
    Ok(CycleGanOutcome {
        g_ab: trainer.g_ab,
        g_ba: trainer.g_ba,
        role_ab,
        role_ba,
        log: log.into_records(),
    })
}
