use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::layers::{block_shapes, Block, BlockTape, ConvKind};
use super::ops::{image_to_matrix, matrix_to_image};
use super::params::ParamSet;
use super::{init_params, Shapes};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    /// Filters of the first layer; later layers use 2x, 4x and 8x, and the
    /// last emits one channel.
    pub base_filters: usize,
    pub kernel: usize,
    pub strides: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            base_filters: 64,
            kernel: 4,
            strides: vec![2, 2, 2, 1, 1],
            leaky_slope: 0.2,
        }
    }
}

impl DiscriminatorConfig {
    pub fn desk() -> Self {
        Self {
            base_filters: 8,
            ..Self::default()
        }
    }

    pub fn filters(&self) -> Vec<usize> {
        let n = self.strides.len();
        (0..n)
            .map(|i| {
                if i + 1 == n {
                    1
                } else {
                    self.base_filters << i
                }
            })
            .collect()
    }

    /// Smallest input side accepted: the product of the strides.
    pub fn min_input(&self) -> usize {
        self.strides.iter().product()
    }

    /// Score-map size for a `t x f` input.
    pub fn output_size(&self, t: usize, f: usize) -> (usize, usize) {
        self.strides
            .iter()
            .fold((t, f), |(h, w), s| (h.div_ceil(*s), w.div_ceil(*s)))
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_filters == 0
            || self.kernel == 0
            || self.strides.is_empty()
            || self.strides.contains(&0)
        {
            return Err(Error::Config(
                "discriminator needs base_filters, kernel and strides all at least 1".into(),
            ));
        }
        if !(self.leaky_slope >= 0.0) {
            return Err(Error::Config(
                "discriminator leaky_slope must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn shapes(&self) -> Shapes {
        let k = self.kernel;
        let mut cin = 1;
        let mut v = Vec::new();
        for (i, cout) in self.filters().into_iter().enumerate() {
            v.extend(block_shapes(&layer_name(i), [cout, cin, k, k], cout, false));
            cin = cout;
        }
        v
    }
}

fn layer_name(i: usize) -> String {
    format!("layer{}", i + 1)
}

/// Fully convolutional patch critic with a linear last layer; outputs an
/// unbounded score map.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamSet,
}

pub struct DiscriminatorTape {
    layers: Vec<BlockTape>,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config.shapes(), seed, "discriminator");
        Ok(Self { config, params })
    }

    pub fn from_params(config: DiscriminatorConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let want = init_params(&config.shapes(), 0, "discriminator");
        if !want.same_layout(&params) {
            return Err(Error::Shape(
                "parameter set does not match the discriminator config".into(),
            ));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn blocks(&self) -> Vec<(String, usize, Option<f64>)> {
        let n = self.config.strides.len();
        self.config
            .strides
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    layer_name(i),
                    *s,
                    (i + 1 < n).then_some(self.config.leaky_slope),
                )
            })
            .collect()
    }

    fn block<'a>(&self, name: &'a str, stride: usize, act: Option<f64>) -> Block<'a> {
        Block {
            name,
            kind: ConvKind::Forward,
            stride,
            norm: false,
            act,
            eps: 0.0,
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.forward_train(x).map(|(y, _)| y)
    }

    pub fn forward_train(&self, x: &Array2<f64>) -> Result<(Array2<f64>, DiscriminatorTape)> {
        let (t, f) = x.dim();
        let min = self.config.min_input();
        if t < min || f < min {
            return Err(Error::Shape(format!(
                "discriminator input must be at least {min}x{min}, got {t}x{f}"
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid(
                "discriminator input contains non-finite values",
            ));
        }
        let mut h = matrix_to_image(x);
        let mut layers = Vec::new();
        for (name, stride, act) in self.blocks() {
            let (y, tape) = self
                .block(&name, stride, act)
                .forward(&self.params, h.view());
            h = y;
            layers.push(tape);
        }
        Ok((image_to_matrix(h), DiscriminatorTape { layers }))
    }

    /// Gradient of a scalar w.r.t. the input given its gradient w.r.t. the
    /// score map. Parameter gradients are accumulated only when `grads` is
    /// given; `need_dx = false` skips the input gradient.
    pub fn backward(
        &self,
        tape: &DiscriminatorTape,
        dmap: &Array2<f64>,
        mut grads: Option<&mut ParamSet>,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        let mut dh = matrix_to_image(dmap);
        let blocks = self.blocks();
        for (i, ((name, stride, act), t)) in blocks.iter().zip(&tape.layers).enumerate().rev() {
            let want_dx = need_dx || i > 0;
            dh = self.block(name, *stride, *act).backward(
                &self.params,
                t,
                dh,
                grads.as_deref_mut(),
                want_dx,
            )?;
        }
        Some(image_to_matrix(dh))
    }
}
