//! Feature-mapping, least-squares adversarial and cycle-consistency losses,
//! plus value-and-gradient routines for each training update.
//!
//! Expectations are batch means: over every element for feature losses and
//! over every patch score for adversarial ones.

use std::collections::BTreeMap;

use ndarray::{Array, Array2, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Discriminator, Generator, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    #[serde(default)]
    pub lambda_fm: f64,
    #[serde(default)]
    pub lambda_adv: f64,
    #[serde(default)]
    pub lambda_cyc: f64,
}

impl LossWeights {
    pub fn sen(lambda_fm: f64, lambda_adv: f64) -> Self {
        Self {
            lambda_fm,
            lambda_adv,
            lambda_cyc: 0.0,
        }
    }

    pub fn cyclegan(lambda_cyc: f64, lambda_adv: f64) -> Self {
        Self {
            lambda_fm: 0.0,
            lambda_adv,
            lambda_cyc,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_fm, self.lambda_adv, self.lambda_cyc];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        if all.iter().all(|v| *v == 0.0) {
            return Err(Error::Config(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Degraded and reference feature crops. With `paired`, element `i` of both
/// sides describes the same utterance at the same frame offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPair {
    pub x_deg: Vec<Array2<f64>>,
    pub x_ref: Vec<Array2<f64>>,
    pub paired: bool,
}

impl BatchPair {
    pub fn new(x_deg: Vec<Array2<f64>>, x_ref: Vec<Array2<f64>>, paired: bool) -> Result<Self> {
        if x_deg.len() != x_ref.len() {
            return Err(Error::Shape(format!(
                "batch sides differ in size: {} vs {}",
                x_deg.len(),
                x_ref.len()
            )));
        }
        if let Some((a, b)) = x_deg.iter().zip(&x_ref).find(|(a, b)| a.dim() != b.dim()) {
            return Err(Error::Shape(format!(
                "crop shapes differ: {:?} vs {:?}",
                a.dim(),
                b.dim()
            )));
        }
        Ok(Self {
            x_deg,
            x_ref,
            paired,
        })
    }

    pub fn len(&self) -> usize {
        self.x_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_deg.is_empty()
    }
}

fn mean_of<D: Dimension>(a: &Array<f64, D>, f: impl Fn(f64) -> f64) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().map(|v| f(*v)).sum::<f64>() / a.len() as f64
}

/// Mean absolute difference.
pub fn loss_fm<D: Dimension>(y_enh: &Array<f64, D>, x_clean: &Array<f64, D>) -> Result<f64> {
    if y_enh.shape() != x_clean.shape() {
        return Err(Error::Shape(format!(
            "feature-mapping loss needs equal shapes, got {:?} and {:?}",
            y_enh.shape(),
            x_clean.shape()
        )));
    }
    if y_enh.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = Zip::from(y_enh)
        .and(x_clean)
        .fold(0.0, |acc, a, b| acc + (a - b).abs());
    Ok(sum / y_enh.len() as f64)
}

/// Least-squares critic loss: real scores pulled to 1, fake scores to 0.
pub fn loss_disc<D: Dimension>(d_real: &Array<f64, D>, d_fake: &Array<f64, D>) -> f64 {
    mean_of(d_real, |v| (v - 1.0).powi(2)) + mean_of(d_fake, |v| v * v)
}

/// Least-squares generator loss: fake scores pulled to 1.
pub fn loss_adv_gen<D: Dimension>(d_fake: &Array<f64, D>) -> f64 {
    mean_of(d_fake, |v| (v - 1.0).powi(2))
}

pub fn loss_sen<D: Dimension, E: Dimension>(
    w: &LossWeights,
    y_enh: &Array<f64, D>,
    x_clean: &Array<f64, D>,
    d_fake: &Array<f64, E>,
) -> Result<f64> {
    Ok(w.lambda_fm * loss_fm(y_enh, x_clean)? + w.lambda_adv * loss_adv_gen(d_fake))
}

fn batch_fm(ys: &[Array2<f64>], xs: &[Array2<f64>]) -> Result<f64> {
    let n: usize = xs.iter().map(|x| x.len()).sum();
    let mut total = 0.0;
    for (y, x) in ys.iter().zip(xs) {
        total += loss_fm(y, x)? * x.len() as f64;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

/// Mean L1 reconstruction error through `g_ab` then `g_ba` on `x_a`, plus the
/// reverse direction on `x_b`.
pub fn loss_cycle(
    g_ab: &Generator,
    g_ba: &Generator,
    x_a: &[Array2<f64>],
    x_b: &[Array2<f64>],
) -> Result<f64> {
    let rec_a = x_a
        .iter()
        .map(|x| g_ba.forward(&g_ab.forward(x)?))
        .collect::<Result<Vec<_>>>()?;
    let rec_b = x_b
        .iter()
        .map(|x| g_ab.forward(&g_ba.forward(x)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(batch_fm(&rec_a, x_a)? + batch_fm(&rec_b, x_b)?)
}

fn batch_adv(d: &Discriminator, fakes: &[Array2<f64>]) -> Result<f64> {
    let maps = fakes
        .iter()
        .map(|f| d.forward(f))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = maps.iter().map(|m| m.len()).sum();
    let sum: f64 = maps
        .iter()
        .flat_map(|m| m.iter())
        .map(|v| (v - 1.0).powi(2))
        .sum();
    Ok(sum / n as f64)
}

/// Generator objective of the two-way mapping: weighted cycle loss plus the
/// adversarial loss of each translated batch under the target critic.
pub fn loss_cyclegan_gen(
    w: &LossWeights,
    g_ab: &Generator,
    g_ba: &Generator,
    d_a: &Discriminator,
    d_b: &Discriminator,
    x_a: &[Array2<f64>],
    x_b: &[Array2<f64>],
) -> Result<f64> {
    let cyc = loss_cycle(g_ab, g_ba, x_a, x_b)?;
    let fa = x_a
        .iter()
        .map(|x| g_ab.forward(x))
        .collect::<Result<Vec<_>>>()?;
    let fb = x_b
        .iter()
        .map(|x| g_ba.forward(x))
        .collect::<Result<Vec<_>>>()?;
    Ok(w.lambda_cyc * cyc + w.lambda_adv * (batch_adv(d_b, &fa)? + batch_adv(d_a, &fb)?))
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Loss components of one generator update.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SenTerms {
    pub fm: f64,
    pub adv: f64,
    pub total: f64,
}

/// Value of the supervised objective on a paired batch and its gradient
/// w.r.t. the generator parameters. The critic only passes gradients
/// through.
pub fn sen_objective(
    w: &LossWeights,
    g: &Generator,
    d: &Discriminator,
    batch: &BatchPair,
) -> Result<(SenTerms, ParamSet)> {
    if !batch.paired {
        return Err(Error::invalid("supervised objective needs a paired batch"));
    }
    let n_feat: usize = batch.x_ref.iter().map(|x| x.len()).sum();
    let n_map: usize = batch
        .x_ref
        .iter()
        .map(|x| {
            let (a, b) = d.config().output_size(x.nrows(), x.ncols());
            a * b
        })
        .sum();
    let mut grads = g.params().zeros_like();
    let mut fm_sum = 0.0;
    let mut adv_sum = 0.0;
    for (x, clean) in batch.x_deg.iter().zip(&batch.x_ref) {
        let (y, gtape) = g.forward_train(x)?;
        let mut dy = Array2::zeros(y.dim());
        Zip::from(&mut dy).and(&y).and(clean).for_each(|o, &a, &b| {
            fm_sum += (a - b).abs();
            *o = w.lambda_fm * sign(a - b) / n_feat as f64;
        });
        if w.lambda_adv != 0.0 {
            let (map, dtape) = d.forward_train(&y)?;
            adv_sum += map.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>();
            let dmap = map.mapv(|v| w.lambda_adv * 2.0 * (v - 1.0) / n_map as f64);
            dy += &d
                .backward(&dtape, &dmap, None, true)
                .expect("input gradient");
        }
        g.backward(&gtape, &dy, Some(&mut grads));
    }
    let fm = fm_sum / n_feat as f64;
    let adv = if w.lambda_adv != 0.0 {
        adv_sum / n_map as f64
    } else {
        let fakes = batch
            .x_deg
            .iter()
            .map(|x| g.forward(x))
            .collect::<Result<Vec<_>>>()?;
        batch_adv(d, &fakes)?
    };
    let terms = SenTerms {
        fm,
        adv,
        total: w.lambda_fm * fm + w.lambda_adv * adv,
    };
    Ok((terms, grads))
}

/// Critic loss on real features against already generated (and therefore
/// gradient-blocked) fake features, with its gradient w.r.t. the critic.
pub fn disc_objective(
    d: &Discriminator,
    real: &[Array2<f64>],
    fake: &[Array2<f64>],
) -> Result<(f64, ParamSet)> {
    let mut grads = d.params().zeros_like();
    let count = |xs: &[Array2<f64>]| -> usize {
        xs.iter()
            .map(|x| {
                let (a, b) = d.config().output_size(x.nrows(), x.ncols());
                a * b
            })
            .sum()
    };
    let (n_real, n_fake) = (count(real), count(fake));
    let mut loss = 0.0;
    for x in real {
        let (map, tape) = d.forward_train(x)?;
        loss += map.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>() / n_real as f64;
        let dmap = map.mapv(|v| 2.0 * (v - 1.0) / n_real as f64);
        d.backward(&tape, &dmap, Some(&mut grads), false);
    }
    for x in fake {
        let (map, tape) = d.forward_train(x)?;
        loss += map.iter().map(|v| v * v).sum::<f64>() / n_fake as f64;
        let dmap = map.mapv(|v| 2.0 * v / n_fake as f64);
        d.backward(&tape, &dmap, Some(&mut grads), false);
    }
    Ok((loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CycleTerms {
    pub cyc: f64,
    pub adv_ab: f64,
    pub adv_ba: f64,
    pub total: f64,
}

/// Value of the two-way generator objective and its gradients w.r.t. the
/// parameters of `g_ab` and `g_ba`.
#[allow(clippy::too_many_arguments)]
pub fn cyclegan_objective(
    w: &LossWeights,
    g_ab: &Generator,
    g_ba: &Generator,
    d_a: &Discriminator,
    d_b: &Discriminator,
    x_a: &[Array2<f64>],
    x_b: &[Array2<f64>],
) -> Result<(CycleTerms, ParamSet, ParamSet)> {
    let mut grad_ab = g_ab.params().zeros_like();
    let mut grad_ba = g_ba.params().zeros_like();
    let (cyc_a, adv_ab) = one_direction(w, g_ab, g_ba, d_b, x_a, &mut grad_ab, &mut grad_ba)?;
    let (cyc_b, adv_ba) = one_direction(w, g_ba, g_ab, d_a, x_b, &mut grad_ba, &mut grad_ab)?;
    let cyc = cyc_a + cyc_b;
    let terms = CycleTerms {
        cyc,
        adv_ab,
        adv_ba,
        total: w.lambda_cyc * cyc + w.lambda_adv * (adv_ab + adv_ba),
    };
    Ok((terms, grad_ab, grad_ba))
}

/// Translates `xs` with `fwd`, reconstructs with `inv`, scores the
/// translation with `critic`. Returns (cycle term, adversarial term).
fn one_direction(
    w: &LossWeights,
    fwd: &Generator,
    inv: &Generator,
    critic: &Discriminator,
    xs: &[Array2<f64>],
    grad_fwd: &mut ParamSet,
    grad_inv: &mut ParamSet,
) -> Result<(f64, f64)> {
    let n_feat: usize = xs.iter().map(|x| x.len()).sum();
    let n_map: usize = xs
        .iter()
        .map(|x| {
            let (a, b) = critic.config().output_size(x.nrows(), x.ncols());
            a * b
        })
        .sum();
    let mut cyc = 0.0;
    let mut adv = 0.0;
    for x in xs {
        let (f, ftape) = fwd.forward_train(x)?;
        let (rec, rtape) = inv.forward_train(&f)?;
        let mut drec = Array2::zeros(rec.dim());
        Zip::from(&mut drec).and(&rec).and(x).for_each(|o, &a, &b| {
            cyc += (a - b).abs();
            *o = w.lambda_cyc * sign(a - b) / n_feat as f64;
        });
        let mut df = inv.backward(&rtape, &drec, Some(grad_inv));
        let (map, dtape) = critic.forward_train(&f)?;
        adv += map.iter().map(|v| (v - 1.0).powi(2)).sum::<f64>();
        if w.lambda_adv != 0.0 {
            let dmap = map.mapv(|v| w.lambda_adv * 2.0 * (v - 1.0) / n_map as f64);
            df += &critic
                .backward(&dtape, &dmap, None, true)
                .expect("input gradient");
        }
        fwd.backward(&ftape, &df, Some(grad_fwd));
    }
    Ok((cyc / n_feat as f64, adv / n_map as f64))
}

/// One line of the training log, serialized as a JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: u64,
    pub components: BTreeMap<String, f64>,
    pub total: f64,
}

impl LossRecord {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::invalid(format!("bad loss record: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{max_relative_error, numeric_gradient};
    use crate::nn::{DiscriminatorConfig, GeneratorConfig};
    use ndarray::{arr2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: (usize, usize), rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
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

    fn widen(p: &mut ParamSet, factor: f64) {
        for (name, t) in p.iter_mut() {
            if name.ends_with(".weight") {
                t.mapv_inplace(|v| v * factor);
            }
        }
    }

    /// Identity generator whose output is shifted by `c`.
    fn shifter(c: f64) -> Generator {
        let mut g = Generator::zeroed(tiny_gen()).unwrap();
        g.params_mut().get_mut("out.bias").unwrap().fill(c);
        g
    }

    #[test]
    fn fm_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random((7, 5), &mut rng);
        assert_eq!(loss_fm(&x, &x).unwrap(), 0.0);
        assert_eq!(loss_fm(&(&x + 0.5), &x).unwrap(), 0.5);
        let y = random((7, 5), &mut rng);
        let mut sum = 0.0;
        for i in 0..7 {
            for j in 0..5 {
                sum += (y[[i, j]] - x[[i, j]]).abs();
            }
        }
        assert!((loss_fm(&y, &x).unwrap() - sum / 35.0).abs() < 1e-15);
        assert!(loss_fm(&y, &random((7, 4), &mut rng)).is_err());
        let b = Array3::<f64>::zeros((2, 3, 4));
        assert_eq!(loss_fm(&(&b + 1.0), &b).unwrap(), 1.0);
    }

    #[test]
    fn disc_and_adv_examples() {
        let ones = Array2::<f64>::ones((3, 4));
        let zeros = Array2::<f64>::zeros((3, 4));
        let half = Array2::<f64>::from_elem((3, 4), 0.5);
        assert_eq!(loss_disc(&ones, &zeros), 0.0);
        assert_eq!(loss_disc(&zeros, &ones), 2.0);
        assert_eq!(loss_disc(&half, &half), 0.5);
        assert_eq!(loss_adv_gen(&ones), 0.0);
        assert_eq!(loss_adv_gen(&zeros), 1.0);
        let m = arr2(&[[0.3, -1.2], [2.0, 0.9]]);
        let want = ((0.3f64 - 1.0).powi(2) + 2.2f64.powi(2) + 1.0 + 0.1f64.powi(2)) / 4.0;
        assert!((loss_adv_gen(&m) - want).abs() < 1e-15);
    }

    #[test]
    fn sen_is_weighted_sum() {
        // loss_fm = 0.4 and loss_adv = 0.2
        let y = Array2::from_elem((2, 2), 0.4);
        let x = Array2::zeros((2, 2));
        let d = Array2::from_elem((1, 1), 1.0 - 0.2f64.sqrt());
        let v = loss_sen(&LossWeights::sen(1.0, 0.1), &y, &x, &d).unwrap();
        assert!((v - 0.42).abs() < 1e-12);
        let fm_only = loss_sen(&LossWeights::sen(1.0, 0.0), &y, &x, &d).unwrap();
        assert_eq!(fm_only, loss_fm(&y, &x).unwrap());
        let adv_only = loss_sen(&LossWeights::sen(0.0, 1.0), &y, &x, &d).unwrap();
        assert_eq!(adv_only, loss_adv_gen(&d));
    }

    #[test]
    fn cycle_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xa = vec![random((6, 8), &mut rng), random((6, 8), &mut rng)];
        let xb = vec![random((5, 8), &mut rng)];
        let id = shifter(0.0);
        assert_eq!(loss_cycle(&id, &id, &xa, &xb).unwrap(), 0.0);
        let (up, down) = (shifter(0.75), shifter(-0.75));
        assert!(loss_cycle(&up, &down, &xa, &xb).unwrap() < 1e-15);
        let plus_one = shifter(1.0);
        assert!((loss_cycle(&plus_one, &id, &xa, &xb).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cyclegan_weighting() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xa = vec![random((8, 8), &mut rng)];
        let xb = vec![random((8, 8), &mut rng)];
        let mut d = Discriminator::new(tiny_disc(), 1).unwrap();
        d.params_mut().fill(0.0);
        let (up, down) = (shifter(0.5), shifter(-0.5));
        let cyc_only = LossWeights::cyclegan(2.5, 0.0);
        assert!(loss_cyclegan_gen(&cyc_only, &up, &down, &d, &d, &xa, &xb).unwrap() < 1e-15);
        // zero critics score everything 0, so each adversarial term is 1
        let w = LossWeights::cyclegan(2.5, 1.0);
        let v = loss_cyclegan_gen(&w, &up, &down, &d, &d, &xa, &xb).unwrap();
        assert!((v - 2.0).abs() < 1e-12);
        let id = shifter(0.0);
        let plus = shifter(0.08);
        let cyc = loss_cycle(&plus, &id, &xa, &xb).unwrap();
        let v = loss_cyclegan_gen(&w, &plus, &id, &d, &d, &xa, &xb).unwrap();
        assert!((v - (2.5 * cyc + 2.0)).abs() < 1e-12);
        assert!((2.5f64 * 0.2 + 1.0 * (0.1 + 0.3) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn constant_critic_optimum_is_one_half() {
        // (d-1)^2 + d^2 minimized over a grid and by its stationary point
        let best = (0..=1000)
            .map(|i| i as f64 / 1000.0)
            .min_by(|a, b| {
                let f = |d: f64| (d - 1.0).powi(2) + d * d;
                f(*a).total_cmp(&f(*b))
            })
            .unwrap();
        assert_eq!(best, 0.5);
        let p = Array2::from_elem((2, 2), 0.5);
        assert_eq!(loss_disc(&p, &p), 0.5);
    }

    #[test]
    fn losses_are_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = random((3, 3), &mut rng) * 3.0;
            let b = random((3, 3), &mut rng) * 3.0;
            assert!(loss_fm(&a, &b).unwrap() >= 0.0);
            assert!(loss_disc(&a, &b) >= 0.0);
            assert!(loss_adv_gen(&a) >= 0.0);
        }
    }

    fn batch(rng: &mut ChaCha8Rng, n: usize, t: usize, f: usize) -> Vec<Array2<f64>> {
        (0..n).map(|_| random((t, f), rng) * 2.0).collect()
    }

    #[test]
    fn sen_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = Generator::new(tiny_gen(), 1).unwrap();
        widen(g.params_mut(), 100.0);
        let mut d = Discriminator::new(tiny_disc(), 2).unwrap();
        widen(d.params_mut(), 10.0);
        // targets sit at least 0.5 away from the output so the step never
        // crosses the kink of the absolute value
        let x_deg = batch(&mut rng, 2, 8, 8);
        let x_ref = x_deg
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
        let b = BatchPair::new(x_deg, x_ref, true).unwrap();
        for w in [
            LossWeights::sen(1.0, 0.0),
            LossWeights::sen(0.0, 1.0),
            LossWeights::sen(1.0, 0.1),
        ] {
            let (terms, analytic) = sen_objective(&w, &g, &d, &b).unwrap();
            let y: Vec<_> = b.x_deg.iter().map(|x| g.forward(x).unwrap()).collect();
            assert!((terms.fm - batch_fm(&y, &b.x_ref).unwrap()).abs() < 1e-12);
            assert!((terms.adv - batch_adv(&d, &y).unwrap()).abs() < 1e-12);
            let numeric = numeric_gradient(g.params(), 1e-4, |p| {
                let g = Generator::from_params(tiny_gen(), p.clone()).unwrap();
                let y: Vec<_> = b.x_deg.iter().map(|x| g.forward(x).unwrap()).collect();
                w.lambda_fm * batch_fm(&y, &b.x_ref).unwrap()
                    + w.lambda_adv * batch_adv(&d, &y).unwrap()
            });
            let (err, name) = max_relative_error(&analytic, &numeric);
            assert!(numeric.nonsmooth_fraction() < 0.02);
            assert!(err < 1e-4, "{w:?} {name}: {err}");
        }
    }

    #[test]
    fn disc_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut d = Discriminator::new(tiny_disc(), 2).unwrap();
        widen(d.params_mut(), 10.0);
        let real = batch(&mut rng, 2, 9, 8);
        let fake = batch(&mut rng, 2, 9, 8);
        let (loss, analytic) = disc_objective(&d, &real, &fake).unwrap();
        let value = |d: &Discriminator| {
            let cat = |xs: &[Array2<f64>]| {
                let maps: Vec<_> = xs.iter().map(|x| d.forward(x).unwrap()).collect();
                let views: Vec<_> = maps.iter().map(|m| m.view()).collect();
                ndarray::concatenate(ndarray::Axis(0), &views).unwrap()
            };
            loss_disc(&cat(&real), &cat(&fake))
        };
        assert!((loss - value(&d)).abs() < 1e-12);
        let numeric = numeric_gradient(d.params(), 1e-4, |p| {
            value(&Discriminator::from_params(tiny_disc(), p.clone()).unwrap())
        });
        let (err, name) = max_relative_error(&analytic, &numeric);
        assert!(numeric.nonsmooth_fraction() < 0.02);
        assert!(err < 1e-4, "{name}: {err}");
    }

    #[test]
    fn cyclegan_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut g_ab = Generator::new(tiny_gen(), 1).unwrap();
        let mut g_ba = Generator::new(tiny_gen(), 2).unwrap();
        widen(g_ab.params_mut(), 100.0);
        widen(g_ba.params_mut(), 100.0);
        // both directions shift by +3 so reconstructions stay far from
        // their inputs and the L1 kink is never crossed
        g_ab.params_mut().get_mut("out.bias").unwrap().fill(3.0);
        g_ba.params_mut().get_mut("out.bias").unwrap().fill(3.0);
        let mut d_a = Discriminator::new(tiny_disc(), 3).unwrap();
        let mut d_b = Discriminator::new(tiny_disc(), 4).unwrap();
        widen(d_a.params_mut(), 10.0);
        widen(d_b.params_mut(), 10.0);
        let xa = batch(&mut rng, 1, 8, 8);
        let xb = batch(&mut rng, 1, 8, 8);
        let w = LossWeights::cyclegan(2.5, 1.0);
        let (terms, grad_ab, grad_ba) =
            cyclegan_objective(&w, &g_ab, &g_ba, &d_a, &d_b, &xa, &xb).unwrap();
        let direct = loss_cyclegan_gen(&w, &g_ab, &g_ba, &d_a, &d_b, &xa, &xb).unwrap();
        assert!((terms.total - direct).abs() < 1e-12);
        let num_ab = numeric_gradient(g_ab.params(), 1e-4, |p| {
            let g = Generator::from_params(tiny_gen(), p.clone()).unwrap();
            loss_cyclegan_gen(&w, &g, &g_ba, &d_a, &d_b, &xa, &xb).unwrap()
        });
        let (err, name) = max_relative_error(&grad_ab, &num_ab);
        assert!(num_ab.nonsmooth_fraction() < 0.02);
        assert!(err < 1e-4, "g_ab {name}: {err}");
        let num_ba = numeric_gradient(g_ba.params(), 1e-4, |p| {
            let g = Generator::from_params(tiny_gen(), p.clone()).unwrap();
            loss_cyclegan_gen(&w, &g_ab, &g, &d_a, &d_b, &xa, &xb).unwrap()
        });
        let (err, name) = max_relative_error(&grad_ba, &num_ba);
        assert!(num_ba.nonsmooth_fraction() < 0.02);
        assert!(err < 1e-4, "g_ba {name}: {err}");
    }

    #[test]
    fn weights_validation() {
        assert!(LossWeights::sen(1.0, 0.1).validate().is_ok());
        assert!(LossWeights::sen(0.0, 0.0).validate().is_err());
        assert!(LossWeights::sen(-1.0, 0.1).validate().is_err());
    }

    #[test]
    fn loss_record_line_round_trip() {
        let r = LossRecord {
            epoch: 2,
            step: 17,
            components: [("fm".to_string(), 0.25), ("adv".to_string(), 0.5)].into(),
            total: 0.3,
        };
        let line = r.to_line();
        assert!(!line.contains('\n'));
        assert_eq!(LossRecord::from_line(&line).unwrap(), r);
    }
}
