use indexmap::IndexMap;
use ndarray::{ArrayD, ArrayView1, ArrayView4, Ix1, Ix4, IxDyn};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Ordered named tensors. Gradients and optimizer moments use the same type
/// with the same names and shapes as the parameters they belong to.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: IndexMap<String, ArrayD<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.tensors.get_mut(name)
    }

    pub(crate) fn tensor(&self, name: &str) -> &ArrayD<f64> {
        self.tensors
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    pub(crate) fn tensor_mut(&mut self, name: &str) -> &mut ArrayD<f64> {
        self.tensors
            .get_mut(name)
            .unwrap_or_else(|| panic!("parameter {name} missing"))
    }

    pub(crate) fn view1(&self, name: &str) -> ArrayView1<'_, f64> {
        self.tensor(name)
            .view()
            .into_dimensionality::<Ix1>()
            .expect("rank-1 parameter")
    }

    pub(crate) fn view4(&self, name: &str) -> ArrayView4<'_, f64> {
        self.tensor(name)
            .view()
            .into_dimensionality::<Ix4>()
            .expect("rank-4 parameter")
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries.
    pub fn num_elements(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), ArrayD::zeros(v.raw_dim())))
                .collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        self.tensors.values_mut().for_each(|t| t.fill(value));
    }

    /// `self += scale * other`, matching by position.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for ((ka, a), (kb, b)) in self.tensors.iter_mut().zip(&other.tensors) {
            debug_assert_eq!(ka, kb);
            a.scaled_add(scale, b);
        }
    }

    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|((ka, a), (kb, b))| ka == kb && a.shape() == b.shape())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .values()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Overwrites every weight tensor (name ending in `.weight`) with
    /// `Normal(0, std)` draws. Other tensors are left alone.
    pub(crate) fn randomize_weights(&mut self, std: f64, rng: &mut impl Rng) {
        let normal = Normal::new(0.0, std).expect("valid std");
        for (name, t) in self.tensors.iter_mut() {
            if name.ends_with(".weight") {
                t.iter_mut().for_each(|v| *v = normal.sample(rng));
            }
        }
    }
}

pub(crate) fn zeros(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(shape))
}

pub(crate) fn ones(shape: &[usize]) -> ArrayD<f64> {
    ArrayD::ones(IxDyn(shape))
}
