//! Time-delay network with mean and standard-deviation pooling, trained as a
//! speaker classifier; the pooled projection is the embedding.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Ix1, Ix2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{read_tensor_file, write_tensor_file, DType, ParamSet};
use crate::optim::Adam;
use crate::seed::rng_for;
use crate::train::crop_frames;

pub const EMBEDDER_MAGIC: &[u8; 8] = b"EMBD1\0\0\0";

const STD_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderConfig {
    pub input_dim: usize,
    pub hidden: usize,
    /// Frame offsets spliced by each frame-level layer.
    pub contexts: Vec<Vec<isize>>,
    pub embed_dim: usize,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        Self {
            input_dim: 20,
            hidden: 64,
            contexts: vec![vec![-2, -1, 0, 1, 2], vec![-2, 0, 2], vec![0]],
            embed_dim: 64,
        }
    }
}

impl EmbedderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.embed_dim == 0 {
            return Err(Error::Config("embedder sizes must be positive".into()));
        }
        if self.contexts.is_empty() || self.contexts.iter().any(Vec::is_empty) {
            return Err(Error::Config(
                "every embedder layer needs a non-empty context".into(),
            ));
        }
        Ok(())
    }

    fn layer_in(&self, i: usize) -> usize {
        if i == 0 {
            self.input_dim
        } else {
            self.hidden
        }
    }

    fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut v = Vec::new();
        for (i, c) in self.contexts.iter().enumerate() {
            v.push((
                format!("frame{i}.weight"),
                vec![c.len() * self.layer_in(i), self.hidden],
            ));
            v.push((format!("frame{i}.bias"), vec![self.hidden]));
        }
        v.push(("embed.weight".into(), vec![2 * self.hidden, self.embed_dim]));
        v.push(("embed.bias".into(), vec![self.embed_dim]));
        v
    }
}

/// Spliced context rows with indices clamped at the edges.
fn splice(h: ArrayView2<f64>, ctx: &[isize]) -> Array2<f64> {
    let (t, d) = h.dim();
    let mut out = Array2::zeros((t, ctx.len() * d));
    for i in 0..t {
        for (k, off) in ctx.iter().enumerate() {
            let src = (i as isize + off).clamp(0, t as isize - 1) as usize;
            out.slice_mut(s![i, k * d..(k + 1) * d]).assign(&h.row(src));
        }
    }
    out
}

fn unsplice(ds: &Array2<f64>, ctx: &[isize], d: usize) -> Array2<f64> {
    let t = ds.nrows();
    let mut out = Array2::zeros((t, d));
    for i in 0..t {
        for (k, off) in ctx.iter().enumerate() {
            let src = (i as isize + off).clamp(0, t as isize - 1) as usize;
            let mut row = out.row_mut(src);
            row += &ds.slice(s![i, k * d..(k + 1) * d]);
        }
    }
    out
}

fn w2<'a>(p: &'a ParamSet, name: &str) -> ArrayView2<'a, f64> {
    p.get(name)
        .expect("layout checked")
        .view()
        .into_dimensionality::<Ix2>()
        .expect("matrix")
}

fn w1<'a>(p: &'a ParamSet, name: &str) -> ndarray::ArrayView1<'a, f64> {
    p.get(name)
        .expect("layout checked")
        .view()
        .into_dimensionality::<Ix1>()
        .expect("vector")
}

fn add_grad(g: &mut ParamSet, name: &str, v: ndarray::ArrayViewD<f64>) {
    *g.get_mut(name).expect("layout checked") += &v;
}

struct Tape {
    spliced: Vec<Array2<f64>>,
    acts: Vec<Array2<f64>>,
    mean: Array1<f64>,
    std: Array1<f64>,
    pooled: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedder {
    cfg: EmbedderConfig,
    params: ParamSet,
}

impl Embedder {
    /// He-normal weights, zero biases.
    pub fn new(cfg: EmbedderConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = he_init(&cfg.shapes(), seed, "embedder");
        Ok(Self { cfg, params })
    }

    pub fn from_params(cfg: EmbedderConfig, params: ParamSet) -> Result<Self> {
        cfg.validate()?;
        let want = he_init(&cfg.shapes(), 0, "layout");
        if !want.same_layout(&params) {
            return Err(Error::Shape(
                "embedder parameters do not match the configuration".into(),
            ));
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn embed(&self, x: &Array2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x)?.0)
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.nrows() == 0 {
            return Err(Error::invalid("cannot embed an utterance without frames"));
        }
        if x.ncols() != self.cfg.input_dim {
            return Err(Error::Shape(format!(
                "embedder expects {} dims, got {}",
                self.cfg.input_dim,
                x.ncols()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("embedder input is not finite"));
        }
        Ok(())
    }

    fn forward(&self, x: &Array2<f64>) -> Result<(Array1<f64>, Tape)> {
        self.check_input(x)?;
        let p = &self.params;
        let mut h = x.clone();
        let mut spliced = Vec::new();
        let mut acts = Vec::new();
        for (i, ctx) in self.cfg.contexts.iter().enumerate() {
            let sp = splice(h.view(), ctx);
            let mut z = sp.dot(&w2(p, &format!("frame{i}.weight")));
            z += &w1(p, &format!("frame{i}.bias"));
            z.mapv_inplace(|v| v.max(0.0));
            spliced.push(sp);
            acts.push(z.clone());
            h = z;
        }
        let t = h.nrows() as f64;
        let mean = h.mean_axis(Axis(0)).expect("non-empty");
        let var = (&h - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / t;
        let std = var.mapv(|v| (v + STD_EPS).sqrt());
        let pooled = ndarray::concatenate(Axis(0), &[mean.view(), std.view()]).expect("same rank");
        let e = pooled.dot(&w2(p, "embed.weight")) + w1(p, "embed.bias");
        Ok((
            e,
            Tape {
                spliced,
                acts,
                mean,
                std,
                pooled,
            },
        ))
    }

    /// Accumulates parameter gradients for an upstream embedding gradient.
    fn backward(&self, tape: &Tape, de: &Array1<f64>, grads: &mut ParamSet) {
        let p = &self.params;
        let outer = |a: &Array1<f64>, b: &Array1<f64>| {
            a.view()
                .insert_axis(Axis(1))
                .dot(&b.view().insert_axis(Axis(0)))
        };
        add_grad(
            grads,
            "embed.weight",
            outer(&tape.pooled, de).into_dyn().view(),
        );
        add_grad(grads, "embed.bias", de.view().into_dyn());
        let dp = w2(p, "embed.weight").dot(de);
        let hdim = self.cfg.hidden;
        let (dmean, dstd) = (dp.slice(s![..hdim]), dp.slice(s![hdim..]));
        let last = tape.acts.last().expect("at least one layer");
        let t = last.nrows() as f64;
        let mut dh = (last - &tape.mean) * &(&dstd / &tape.std / t);
        dh += &(&dmean / t);
        for i in (0..self.cfg.contexts.len()).rev() {
            let mut dz = dh;
            ndarray::Zip::from(&mut dz)
                .and(&tape.acts[i])
                .for_each(|d, a| {
                    if *a <= 0.0 {
                        *d = 0.0
                    }
                });
            let wname = format!("frame{i}.weight");
            add_grad(
                grads,
                &wname,
                tape.spliced[i].t().dot(&dz).into_dyn().view(),
            );
            add_grad(
                grads,
                &format!("frame{i}.bias"),
                dz.sum_axis(Axis(0)).into_dyn().view(),
            );
            if i == 0 {
                break;
            }
            let ds = dz.dot(&w2(p, &wname).t());
            dh = unsplice(&ds, &self.cfg.contexts[i], self.cfg.layer_in(i));
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let meta = serde_json::json!({ "format": "EMBD1", "config": self.cfg });
        write_tensor_file(path, EMBEDDER_MAGIC, meta, &self.params, DType::F32)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let (meta, params) = read_tensor_file(path, EMBEDDER_MAGIC)?;
        let cfg: EmbedderConfig = serde_json::from_value(meta["config"].clone())
            .map_err(|e| Error::format("embedder", path, e.to_string()))?;
        if !params.all_finite() {
            return Err(Error::format("embedder", path, "non-finite parameters"));
        }
        Self::from_params(cfg, params)
    }
}

fn he_init(shapes: &[(String, Vec<usize>)], seed: u64, label: &str) -> ParamSet {
    let mut rng = rng_for(seed, &["init", label]);
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        let mut t = ndarray::ArrayD::zeros(ndarray::IxDyn(shape));
        if name.ends_with(".weight") {
            let normal = Normal::new(0.0, (2.0 / shape[0] as f64).sqrt()).expect("positive std");
            t.iter_mut().for_each(|v| *v = normal.sample(&mut rng));
        }
        p.insert(name.clone(), t);
    }
    p
}

/// Softmax classifier head used only while training the embedder.
#[derive(Debug, Clone)]
struct Classifier {
    params: ParamSet,
}

impl Classifier {
    fn new(embed_dim: usize, classes: usize, seed: u64) -> Self {
        let shapes = vec![
            ("classifier.weight".to_string(), vec![embed_dim, classes]),
            ("classifier.bias".to_string(), vec![classes]),
        ];
        Self {
            params: he_init(&shapes, seed, "classifier"),
        }
    }

    /// Cross-entropy of one embedding against `label`, with gradients scaled
    /// by `weight`; returns the loss and the embedding gradient.
    fn loss(
        &self,
        e: &Array1<f64>,
        label: usize,
        weight: f64,
        grads: &mut ParamSet,
    ) -> (f64, Array1<f64>) {
        let a = e.mapv(|v| v.max(0.0));
        let w = w2(&self.params, "classifier.weight");
        let logits = a.dot(&w) + w1(&self.params, "classifier.bias");
        let m = logits.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let exp = logits.mapv(|v| (v - m).exp());
        let z = exp.sum();
        let loss = z.ln() + m - logits[label];
        let mut dl = exp / z;
        dl[label] -= 1.0;
        dl *= weight;
        let outer = a
            .view()
            .insert_axis(Axis(1))
            .dot(&dl.view().insert_axis(Axis(0)));
        add_grad(grads, "classifier.weight", outer.into_dyn().view());
        add_grad(grads, "classifier.bias", dl.view().into_dyn());
        let mut de = w.dot(&dl);
        ndarray::Zip::from(&mut de).and(e).for_each(|d, v| {
            if *v <= 0.0 {
                *d = 0.0
            }
        });
        (loss, de)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedderTraining {
    /// Passes over the training set; fractional values stop part-way.
    pub epochs: f64,
    pub batch_size: usize,
    pub crop_frames: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for EmbedderTraining {
    fn default() -> Self {
        Self {
            epochs: 30.0,
            batch_size: 16,
            crop_frames: 100,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Training example: feature matrix and class index.
pub type LabeledFeatures = (Array2<f64>, usize);

/// Trains the embedder with a softmax speaker classifier for
/// `round(epochs * len(data))` utterance visits and returns it with the mean
/// loss of each batch.
pub fn train_embedder(
    cfg: EmbedderConfig,
    data: &[LabeledFeatures],
    classes: usize,
    opts: &EmbedderTraining,
) -> Result<(Embedder, Vec<f64>)> {
    if data.is_empty() || classes < 2 {
        return Err(Error::invalid(
            "embedder training needs data from at least two speakers",
        ));
    }
    if let Some((_, l)) = data.iter().find(|(_, l)| *l >= classes) {
        return Err(Error::invalid(format!(
            "label {l} outside {classes} classes"
        )));
    }
    if !(opts.epochs > 0.0 && opts.batch_size > 0 && opts.crop_frames > 0 && opts.lr > 0.0) {
        return Err(Error::Config(
            "embedder training options must be positive".into(),
        ));
    }
    let mut emb = Embedder::new(cfg.clone(), opts.seed)?;
    let mut head = Classifier::new(cfg.embed_dim, classes, opts.seed);
    let mut opt_e = Adam::new(emb.params(), 0.9, 0.999, 1e-8);
    let mut opt_c = Adam::new(&head.params, 0.9, 0.999, 1e-8);
    let visits = (opts.epochs * data.len() as f64).round() as usize;
    let mut order = Vec::with_capacity(visits);
    let mut pass = 0usize;
    while order.len() < visits {
        let mut perm: Vec<usize> = (0..data.len()).collect();
        perm.shuffle(&mut rng_for(
            opts.seed,
            &["embedder-order", &pass.to_string()],
        ));
        order.extend(perm.into_iter().take(visits - order.len()));
        pass += 1;
    }
    let mut losses = Vec::new();
    for (b, batch) in order.chunks(opts.batch_size).enumerate() {
        let mut rng = rng_for(opts.seed, &["embedder-crops", &b.to_string()]);
        let mut ge = emb.params().zeros_like();
        let mut gc = head.params.zeros_like();
        let weight = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for &i in batch {
            let (x, label) = &data[i];
            let n = x.nrows();
            let offset = if n > opts.crop_frames {
                rng.random_range(0..=n - opts.crop_frames)
            } else {
                0
            };
            let crop = crop_frames(x, offset, opts.crop_frames.min(n.max(1)));
            let (e, tape) = emb.forward(&crop)?;
            let (l, de) = head.loss(&e, *label, weight, &mut gc);
            emb.backward(&tape, &de, &mut ge);
            total += l * weight;
        }
        if !total.is_finite() {
            return Err(Error::Numerical {
                epoch: 0,
                step: b as u64,
                what: format!("embedder loss = {total}"),
            });
        }
        opt_e.step(emb.params_mut(), &ge, opts.lr);
        opt_c.step(&mut head.params, &gc, opts.lr);
        losses.push(total);
    }
    Ok((emb, losses))
}
