use std::path::Path;

use serde::{Deserialize, Serialize};

use super::state::StateBundle;
use super::{check_finite, LossLog, PairedData, TrainOptions, TrainSchedule, STATE_FILE};
use crate::error::{Error, Result};
use crate::losses::{disc_objective, sen_objective, BatchPair, LossRecord, LossWeights};
use crate::nn::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, ModelCheckpoint};
use crate::optim::Adam;
use crate::seed::derive_seed;

/// Supervised enhancement trainer: one critic update, then one generator
/// update, per paired batch.
#[derive(Debug, Clone)]
pub struct SenTrainer {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub weights: LossWeights,
    pub schedule: TrainSchedule,
    opt_gen: Adam,
    opt_disc: Adam,
    next_epoch: usize,
    step: u64,
}

#[derive(Serialize, Deserialize)]
struct SenMeta {
    kind: String,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
    weights: LossWeights,
    schedule: TrainSchedule,
    next_epoch: usize,
    step: u64,
    adam_steps_gen: u64,
    adam_steps_disc: u64,
}

pub struct SenOutcome {
    pub generator: Generator,
    pub log: Vec<LossRecord>,
}

pub const SEN_ROLE: &str = "sen";

impl SenTrainer {
    pub fn new(
        gen: GeneratorConfig,
        disc: DiscriminatorConfig,
        weights: LossWeights,
        schedule: TrainSchedule,
    ) -> Result<Self> {
        schedule.validate()?;
        weights.validate()?;
        let generator = Generator::new(gen, derive_seed(schedule.seed, &["sen", "generator"]))?;
        let discriminator =
            Discriminator::new(disc, derive_seed(schedule.seed, &["sen", "discriminator"]))?;
        let adam = |p| {
            Adam::new(
                p,
                schedule.adam_beta1,
                schedule.adam_beta2,
                schedule.adam_eps,
            )
        };
        Ok(Self {
            opt_gen: adam(generator.params()),
            opt_disc: adam(discriminator.params()),
            generator,
            discriminator,
            weights,
            schedule,
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

    /// One update of each network on `batch` at the rates of `epoch`.
    pub fn train_step(&mut self, batch: &BatchPair, epoch: usize) -> Result<LossRecord> {
        let lr_gen = self.schedule.lr_at(epoch, self.schedule.lr_gen)?;
        let lr_disc = self.schedule.lr_at(epoch, self.schedule.lr_disc)?;
        let fakes = batch
            .x_deg
            .iter()
            .map(|x| self.generator.forward(x))
            .collect::<Result<Vec<_>>>()?;
        let (disc, gd) = disc_objective(&self.discriminator, &batch.x_ref, &fakes)?;
        check_finite(&[("disc", disc)], epoch, self.step)?;
        self.opt_disc
            .step(self.discriminator.params_mut(), &gd, lr_disc);

        let (terms, gg) =
            sen_objective(&self.weights, &self.generator, &self.discriminator, batch)?;
        check_finite(
            &[("fm", terms.fm), ("adv", terms.adv), ("total", terms.total)],
            epoch,
            self.step,
        )?;
        self.opt_gen.step(self.generator.params_mut(), &gg, lr_gen);
        if !self.generator.params().all_finite() || !self.discriminator.params().all_finite() {
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
                ("disc".into(), disc),
                ("fm".into(), terms.fm),
                ("adv".into(), terms.adv),
            ]
            .into(),
            total: terms.total,
        };
        self.step += 1;
        Ok(record)
    }

    pub(crate) fn run_epoch(&mut self, data: &PairedData, log: &mut LossLog) -> Result<()> {
        let epoch = self.next_epoch;
        for (_, batch) in data.epoch(&self.schedule, epoch)? {
            let r = self.train_step(&batch, epoch)?;
            log::debug!("epoch {epoch} step {} total {:.5}", r.step, r.total);
            log.push(r)?;
        }
        self.next_epoch += 1;
        Ok(())
    }

    pub fn save_state(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut b = StateBundle::default();
        b.add("generator", self.generator.params());
        b.add("discriminator", self.discriminator.params());
        b.add_adam("opt_generator", &self.opt_gen);
        b.add_adam("opt_discriminator", &self.opt_disc);
        let meta = SenMeta {
            kind: "sen".into(),
            generator: self.generator.config().clone(),
            discriminator: self.discriminator.config().clone(),
            weights: self.weights,
            schedule: self.schedule.clone(),
            next_epoch: self.next_epoch,
            step: self.step,
            adam_steps_gen: self.opt_gen.steps(),
            adam_steps_disc: self.opt_disc.steps(),
        };
        b.save(path.as_ref(), &meta)
    }

    pub fn load_state(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (meta, b): (SenMeta, _) = StateBundle::load(path)?;
        if meta.kind != "sen" {
            return Err(Error::format(
                "training state",
                path,
                format!("expected sen state, got {}", meta.kind),
            ));
        }
        let generator = Generator::from_params(meta.generator, b.take("generator"))?;
        let discriminator =
            Discriminator::from_params(meta.discriminator, b.take("discriminator"))?;
        let s = &meta.schedule;
        let betas = (s.adam_beta1, s.adam_beta2, s.adam_eps);
        let opt_gen = b.take_adam(
            "opt_generator",
            generator.params(),
            betas,
            meta.adam_steps_gen,
        )?;
        let opt_disc = b.take_adam(
            "opt_discriminator",
            discriminator.params(),
            betas,
            meta.adam_steps_disc,
        )?;
        Ok(Self {
            generator,
            discriminator,
            weights: meta.weights,
            schedule: meta.schedule,
            opt_gen,
            opt_disc,
            next_epoch: meta.next_epoch,
            step: meta.step,
        })
    }
}

/// Runs (or resumes) supervised training over the schedule. With an output
/// directory, writes `losses.jsonl`, `sen.epochNNN.ckpt` per epoch, the
/// resumable `train.state` and the final `sen.ckpt`.
pub fn train_sen(
    data: &PairedData,
    gen: GeneratorConfig,
    disc: DiscriminatorConfig,
    weights: LossWeights,
    schedule: TrainSchedule,
    opts: &TrainOptions,
) -> Result<SenOutcome> {
    let mut trainer = match &opts.resume {
        Some(path) => SenTrainer::load_state(path)?,
        None => SenTrainer::new(gen, disc, weights, schedule)?,
    };
    let out = opts.out_dir.as_deref();
    let mut log = LossLog::open(out, opts.resume.is_some())?;
    let last = opts
        .stop_after
        .map_or(trainer.schedule.epochs, |n| n.min(trainer.schedule.epochs));
    while trainer.next_epoch() < last {
        let epoch = trainer.next_epoch();
        if let Err(e) = trainer.run_epoch(data, &mut log) {
            if let (Error::Numerical { .. }, Some(dir)) = (&e, out) {
                trainer.save_state(dir.join("nan_snapshot.state"))?;
            }
            return Err(e);
        }
        log::info!("sen epoch {epoch} done ({} steps)", trainer.steps());
        if let Some(dir) = out {
            checkpoint(
                &trainer.generator,
                &dir.join(format!("{SEN_ROLE}.epoch{epoch:03}.ckpt")),
            )?;
            trainer.save_state(dir.join(STATE_FILE))?;
        }
    }
    if let Some(dir) = out {
        checkpoint(&trainer.generator, &dir.join(format!("{SEN_ROLE}.ckpt")))?;
    }
    Ok(SenOutcome {
        generator: trainer.generator,
        log: log.into_records(),
    })
}

fn checkpoint(g: &Generator, path: &Path) -> Result<()> {
    ModelCheckpoint {
        role: SEN_ROLE.into(),
        generator: g.clone(),
    }
    .save(path)
}
