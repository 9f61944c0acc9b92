//! Central finite differences over a parameter set, for checking analytic
//! gradients of piecewise-smooth losses.

use super::params::ParamSet;

pub struct NumericGradient {
    pub grad: ParamSet,
    /// 1 where the forward and backward one-sided differences disagree, i.e.
    /// a kink of the loss lies within one step of the current point.
    pub nonsmooth: ParamSet,
}

impl NumericGradient {
    pub fn nonsmooth_count(&self) -> usize {
        self.nonsmooth
            .iter()
            .map(|(_, t)| t.iter().filter(|v| **v != 0.0).count())
            .sum()
    }

    pub fn nonsmooth_fraction(&self) -> f64 {
        self.nonsmooth_count() as f64 / self.grad.num_elements().max(1) as f64
    }
}

/// Gradient of `loss` estimated entry by entry with step `h`.
pub fn numeric_gradient(
    params: &ParamSet,
    h: f64,
    mut loss: impl FnMut(&ParamSet) -> f64,
) -> NumericGradient {
    let mut probe = params.clone();
    let mut grad = params.zeros_like();
    let mut nonsmooth = params.zeros_like();
    let center = loss(params);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for name in &names {
        let n = params.tensor(name).len();
        for i in 0..n {
            let orig = get(params, name, i);
            set(&mut probe, name, i, orig + h);
            let up = loss(&probe);
            set(&mut probe, name, i, orig - h);
            let down = loss(&probe);
            set(&mut probe, name, i, orig);
            set(&mut grad, name, i, (up - down) / (2.0 * h));
            let fwd = (up - center) / h;
            let bwd = (center - down) / h;
            if (fwd - bwd).abs() > 1e-2 * (fwd.abs() + bwd.abs()) + 1e-8 {
                set(&mut nonsmooth, name, i, 1.0);
            }
        }
    }
    NumericGradient { grad, nonsmooth }
}

fn get(p: &ParamSet, name: &str, i: usize) -> f64 {
    p.tensor(name).as_slice_memory_order().expect("contiguous")[i]
}

fn set(p: &mut ParamSet, name: &str, i: usize, v: f64) {
    p.tensor_mut(name)
        .as_slice_memory_order_mut()
        .expect("contiguous")[i] = v;
}

/// Largest per-tensor relative error `|a - n| / max(|a|, |n|, floor)` in the
/// Euclidean norm over smooth entries, with the tensor it occurs in. The
/// floor is a thousandth of the norm of the whole analytic gradient, so
/// tensors whose exact gradient vanishes are judged against the overall
/// scale.
pub fn max_relative_error(analytic: &ParamSet, numeric: &NumericGradient) -> (f64, String) {
    let global = analytic
        .iter()
        .map(|(_, t)| t.iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let floor = (1e-3 * global).max(f64::MIN_POSITIVE);
    let mut worst = (0.0, String::new());
    let tensors = analytic
        .iter()
        .zip(numeric.grad.iter())
        .zip(numeric.nonsmooth.iter());
    for (((name, a), (_, n)), (_, skip)) in tensors {
        let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
        for ((x, y), s) in a.iter().zip(n.iter()).zip(skip.iter()) {
            if *s == 0.0 {
                diff += (x - y).powi(2);
                na += x * x;
                nn += y * y;
            }
        }
        let err = diff.sqrt() / na.sqrt().max(nn.sqrt()).max(floor);
        if err > worst.0 {
            worst = (err, name.to_string());
        }
    }
    worst
}
