//! Convolutional generator and patch discriminator with hand-written
//! back-propagation in 64-bit floats.

mod checkpoint;
mod discriminator;
mod generator;
pub mod gradcheck;
mod layers;
pub mod ops;
mod params;

pub use checkpoint::{
    read_tensor_file, write_tensor_file, DType, ModelCheckpoint, CHECKPOINT_MAGIC,
};
pub use discriminator::{Discriminator, DiscriminatorConfig, DiscriminatorTape};
pub use generator::{Generator, GeneratorConfig, GeneratorTape};
pub use params::ParamSet;

use crate::seed::rng_for;

pub(crate) type Shapes = Vec<(String, Vec<usize>)>;

pub(crate) const INIT_STD: f64 = 0.02;

/// Weights from `Normal(0, 0.02)`, biases and offsets zero, normalization
/// scales one.
pub(crate) fn init_params(shapes: &Shapes, seed: u64, label: &str) -> ParamSet {
    let mut p = ParamSet::new();
    for (name, shape) in shapes {
        let t = if name.ends_with("norm.scale") {
            params::ones(shape)
        } else {
            params::zeros(shape)
        };
        p.insert(name.clone(), t);
    }
    let mut rng = rng_for(seed, &["init", label]);
    p.randomize_weights(INIT_STD, &mut rng);
    p
}
