//! Conv (or transposed conv) + optional instance norm + optional activation,
//! the building block shared by both networks.

use ndarray::{Array3, ArrayView3};

use super::ops::{
    conv2d, conv2d_backward, conv_transpose2d, conv_transpose2d_backward, instance_norm,
    instance_norm_backward, leaky_relu, leaky_relu_backward, ConvCache, ConvGrads,
    ConvTransposeCache, NormCache,
};
use super::params::ParamSet;

#[derive(Debug, Clone, Copy)]
pub(crate) enum ConvKind {
    Forward,
    /// Transposed convolution with the given output size.
    Transposed(usize, usize),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Block<'a> {
    pub name: &'a str,
    pub kind: ConvKind,
    pub stride: usize,
    pub norm: bool,
    /// Leaky slope of the activation, `None` for a linear output.
    pub act: Option<f64>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
enum ConvTape {
    Forward(ConvCache),
    Transposed(ConvTransposeCache),
}

#[derive(Debug, Clone)]
pub(crate) struct BlockTape {
    conv: ConvTape,
    norm: Option<NormCache>,
    out: Option<Array3<f64>>,
}

fn key(name: &str, leaf: &str) -> String {
    format!("{name}.{leaf}")
}

impl Block<'_> {
    pub fn forward(&self, p: &ParamSet, x: ArrayView3<f64>) -> (Array3<f64>, BlockTape) {
        let w = p.view4(&key(self.name, "weight"));
        let b = p.view1(&key(self.name, "bias"));
        let (mut y, conv) = match self.kind {
            ConvKind::Forward => {
                let (y, c) = conv2d(x, w, b, self.stride);
                (y, ConvTape::Forward(c))
            }
            ConvKind::Transposed(h, wd) => {
                let (y, c) = conv_transpose2d(x, w, b, self.stride, (h, wd));
                (y, ConvTape::Transposed(c))
            }
        };
        let norm = self.norm.then(|| {
            let (n, cache) = instance_norm(
                &y,
                p.view1(&key(self.name, "norm.scale")),
                p.view1(&key(self.name, "norm.offset")),
                self.eps,
            );
            y = n;
            cache
        });
        let out = self.act.map(|slope| {
            leaky_relu(&mut y, slope);
            y.clone()
        });
        (y, BlockTape { conv, norm, out })
    }

    /// Accumulates parameter gradients into `grads` when given and returns the
    /// input gradient when `need_dx`.
    pub fn backward(
        &self,
        p: &ParamSet,
        tape: &BlockTape,
        mut dy: Array3<f64>,
        grads: Option<&mut ParamSet>,
        need_dx: bool,
    ) -> Option<Array3<f64>> {
        if let (Some(slope), Some(out)) = (self.act, &tape.out) {
            leaky_relu_backward(&mut dy, out, slope);
        }
        let mut grads = grads;
        if let Some(cache) = &tape.norm {
            let (dx, ds, doff) =
                instance_norm_backward(&dy, p.view1(&key(self.name, "norm.scale")), cache);
            if let Some(g) = grads.as_deref_mut() {
                *g.tensor_mut(&key(self.name, "norm.scale")) += &ds.into_dyn();
                *g.tensor_mut(&key(self.name, "norm.offset")) += &doff.into_dyn();
            }
            dy = dx;
        }
        let w = p.view4(&key(self.name, "weight"));
        let want_params = grads.is_some();
        let ConvGrads { dx, dw, db } = match &tape.conv {
            ConvTape::Forward(c) => conv2d_backward(&dy, w, c, need_dx, want_params),
            ConvTape::Transposed(c) => conv_transpose2d_backward(&dy, w, c, want_params),
        };
        if let (Some(g), Some(dw), Some(db)) = (grads, dw, db) {
            *g.tensor_mut(&key(self.name, "weight")) += &dw.into_dyn();
            *g.tensor_mut(&key(self.name, "bias")) += &db.into_dyn();
        }
        dx
    }
}

/// Parameter shapes for one block: weight, bias and, with `norm`, the
/// normalization scale and offset.
pub(crate) fn block_shapes(
    name: &str,
    weight: [usize; 4],
    bias: usize,
    norm: bool,
) -> Vec<(String, Vec<usize>)> {
    let mut v = vec![
        (key(name, "weight"), weight.to_vec()),
        (key(name, "bias"), vec![bias]),
    ];
    if norm {
        v.push((key(name, "norm.scale"), vec![bias]));
        v.push((key(name, "norm.offset"), vec![bias]));
    }
    v
}
