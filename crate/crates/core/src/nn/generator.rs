use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use super::layers::{block_shapes, Block, BlockTape, ConvKind};
use super::ops::{image_to_matrix, matrix_to_image, ConvGeom};
use super::params::ParamSet;
use super::{init_params, Shapes};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub base_filters: usize,
    pub n_residual_blocks: usize,
    pub kernel: usize,
    pub use_input_shortcut: bool,
    pub norm_eps: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            base_filters: 32,
            n_residual_blocks: 9,
            kernel: 3,
            use_input_shortcut: true,
            norm_eps: 1e-5,
        }
    }
}

impl GeneratorConfig {
    /// Same topology at a size that trains on a laptop CPU.
    pub fn desk() -> Self {
        Self {
            base_filters: 8,
            n_residual_blocks: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0 {
            return Err(Error::Config(
                "generator base_filters must be at least 1".into(),
            ));
        }
        if self.kernel == 0 {
            return Err(Error::Config("generator kernel must be at least 1".into()));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::Config("generator norm_eps must be positive".into()));
        }
        Ok(())
    }

    pub(crate) fn shapes(&self) -> Shapes {
        let (b, k) = (self.base_filters, self.kernel);
        let mut v = block_shapes("enc1", [b, 1, k, k], b, false);
        v.extend(block_shapes("enc2", [2 * b, b, k, k], 2 * b, true));
        v.extend(block_shapes("enc3", [4 * b, 2 * b, k, k], 4 * b, true));
        for i in 0..self.n_residual_blocks {
            v.extend(block_shapes(
                &format!("res{i}.a"),
                [4 * b, 4 * b, k, k],
                4 * b,
                true,
            ));
            v.extend(block_shapes(
                &format!("res{i}.b"),
                [4 * b, 4 * b, k, k],
                4 * b,
                true,
            ));
        }
        // transposed weights are laid out (in, out, k, k)
        v.extend(block_shapes("dec1", [4 * b, 2 * b, k, k], 2 * b, true));
        v.extend(block_shapes("dec2", [2 * b, b, k, k], b, true));
        v.extend(block_shapes("out", [1, b, k, k], 1, false));
        v
    }
}

/// Encoder / residual / decoder mapping from a `T x F` feature matrix to one
/// of the same shape, with an optional additive path from the input.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamSet,
}

pub struct GeneratorTape {
    enc: [BlockTape; 3],
    res: Vec<(BlockTape, BlockTape)>,
    dec: [BlockTape; 2],
    out: BlockTape,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.shapes(), seed, "generator");
        Ok(Self { config, params })
    }

    /// Every parameter zero. With the input shortcut this is the identity.
    pub fn zeroed(config: GeneratorConfig) -> Result<Self> {
        let mut g = Self::new(config, 0)?;
        g.params.fill(0.0);
        Ok(g)
    }

    pub fn from_params(config: GeneratorConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let want = init_params(&config.shapes(), 0, "generator");
        if !want.same_layout(&params) {
            return Err(Error::Shape(
                "parameter set does not match the generator config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn block<'a>(
        &self,
        name: &'a str,
        kind: ConvKind,
        stride: usize,
        norm: bool,
        act: bool,
    ) -> Block<'a> {
        Block {
            name,
            kind,
            stride,
            norm,
            act: act.then_some(0.0),
            eps: self.config.norm_eps,
        }
    }

    fn check_input(x: &Array2<f64>) -> Result<()> {
        let (t, f) = x.dim();
        if t < 1 || f < 4 {
            return Err(Error::Shape(format!(
                "generator input must be at least 1x4, got {t}x{f}"
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("generator input contains non-finite values"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward_train(x).map(|(y, _)| y)
    }

    pub fn forward_train(&self, x: &Array2<f64>) -> Result<(Array2<f64>, GeneratorTape)> {
        Self::check_input(x)?;
        let (t, f) = x.dim();
        let mid = ConvGeom::same(t, f, self.config.kernel, 2);
        let p = &self.params;
        let img = matrix_to_image(x);
        let (h, e1) = self
            .block("enc1", ConvKind::Forward, 1, false, true)
            .forward(p, img.view());
        let (h, e2) = self
            .block("enc2", ConvKind::Forward, 2, true, true)
            .forward(p, h.view());
        let (mut h, e3) = self
            .block("enc3", ConvKind::Forward, 2, true, true)
            .forward(p, h.view());
        let mut res = Vec::with_capacity(self.config.n_residual_blocks);
        let names = res_names(self.config.n_residual_blocks);
        for (a, b) in &names {
            let (u, ta) = self
                .block(a, ConvKind::Forward, 1, true, true)
                .forward(p, h.view());
            let (u, tb) = self
                .block(b, ConvKind::Forward, 1, true, false)
                .forward(p, u.view());
            h += &u;
            res.push((ta, tb));
        }
        let (h, d1) = self
            .block(
                "dec1",
                ConvKind::Transposed(mid.out_h, mid.out_w),
                2,
                true,
                true,
            )
            .forward(p, h.view());
        let (h, d2) = self
            .block("dec2", ConvKind::Transposed(t, f), 2, true, true)
            .forward(p, h.view());
        let (core, o) = self
            .block("out", ConvKind::Forward, 1, false, false)
            .forward(p, h.view());
        let mut y = image_to_matrix(core);
        if self.config.use_input_shortcut {
            y += x;
        }
        let tape = GeneratorTape {
            enc: [e1, e2, e3],
            res,
            dec: [d1, d2],
            out: o,
        };
        Ok((y, tape))
    }

    /// Back-propagates `dy` (gradient of a scalar w.r.t. the output). Adds
    /// parameter gradients into `grads` when given; returns the input
    /// gradient.
    pub fn backward(
        &self,
        tape: &GeneratorTape,
        dy: &Array2<f64>,
        mut grads: Option<&mut ParamSet>,
    ) -> Array2<f64> {
        let (t, f) = dy.dim();
        let mid = ConvGeom::same(t, f, self.config.kernel, 2);
        let p = &self.params;
        let dh = self
            .block("out", ConvKind::Forward, 1, false, false)
            .backward(
                p,
                &tape.out,
                matrix_to_image(dy),
                grads.as_deref_mut(),
                true,
            )
            .expect("dx requested");
        let dh = self
            .block("dec2", ConvKind::Transposed(t, f), 2, true, true)
            .backward(p, &tape.dec[1], dh, grads.as_deref_mut(), true)
            .expect("dx requested");
        let mut dh = self
            .block(
                "dec1",
                ConvKind::Transposed(mid.out_h, mid.out_w),
                2,
                true,
                true,
            )
            .backward(p, &tape.dec[0], dh, grads.as_deref_mut(), true)
            .expect("dx requested");
        let names = res_names(self.config.n_residual_blocks);
        for ((a, b), (ta, tb)) in names.iter().zip(&tape.res).rev() {
            let du = self
                .block(b, ConvKind::Forward, 1, true, false)
                .backward(p, tb, dh.clone(), grads.as_deref_mut(), true)
                .expect("dx requested");
            let du = self
                .block(a, ConvKind::Forward, 1, true, true)
                .backward(p, ta, du, grads.as_deref_mut(), true)
                .expect("dx requested");
            dh += &du;
        }
        let dh = self
            .block("enc3", ConvKind::Forward, 2, true, true)
            .backward(p, &tape.enc[2], dh, grads.as_deref_mut(), true)
            .expect("dx requested");
        let dh = self
            .block("enc2", ConvKind::Forward, 2, true, true)
            .backward(p, &tape.enc[1], dh, grads.as_deref_mut(), true)
            .expect("dx requested");
        let dx: Array3<f64> = self
            .block("enc1", ConvKind::Forward, 1, false, true)
            .backward(p, &tape.enc[0], dh, grads, true)
            .expect("dx requested");
        let mut dx = image_to_matrix(dx);
        if self.config.use_input_shortcut {
            dx += dy;
        }
        dx
    }
}

fn res_names(n: usize) -> Vec<(String, String)> {
    (0..n)
        .map(|i| (format!("res{i}.a"), format!("res{i}.b")))
        .collect()
}
