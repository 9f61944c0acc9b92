//! Resumable trainer state: parameters, optimizer moments and counters in
//! one 64-bit tensor file.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{read_tensor_file, write_tensor_file, DType, ParamSet};
use crate::optim::Adam;

pub(crate) const STATE_MAGIC: &[u8; 8] = b"FFSTATE1";

#[derive(Default)]
pub(crate) struct StateBundle {
    tensors: ParamSet,
}

impl StateBundle {
    pub fn add(&mut self, prefix: &str, p: &ParamSet) {
        for (name, t) in p.iter() {
            self.tensors.insert(format!("{prefix}/{name}"), t.clone());
        }
    }

    pub fn add_adam(&mut self, prefix: &str, opt: &Adam) {
        let (m, v) = opt.moments();
        self.add(&format!("{prefix}.m"), m);
        self.add(&format!("{prefix}.v"), v);
    }

    pub fn save(&self, path: &Path, meta: &impl Serialize) -> Result<()> {
        let meta = serde_json::to_value(meta).expect("state metadata serializes");
        write_tensor_file(path, STATE_MAGIC, meta, &self.tensors, DType::F64)
    }

    pub fn load<M: DeserializeOwned>(path: &Path) -> Result<(M, Self)> {
        let (meta, tensors) = read_tensor_file(path, STATE_MAGIC)?;
        let meta = serde_json::from_value(meta)
            .map_err(|e| Error::format("training state", path, format!("bad metadata: {e}")))?;
        Ok((meta, Self { tensors }))
    }

    /// Tensors stored under `prefix`, with the prefix stripped.
    pub fn take(&self, prefix: &str) -> ParamSet {
        let lead = format!("{prefix}/");
        let mut out = ParamSet::new();
        for (name, t) in self.tensors.iter() {
            if let Some(rest) = name.strip_prefix(&lead) {
                out.insert(rest.to_string(), t.clone());
            }
        }
        out
    }

    pub fn take_adam(
        &self,
        prefix: &str,
        like: &ParamSet,
        betas: (f64, f64, f64),
        steps: u64,
    ) -> Result<Adam> {
        let m = self.take(&format!("{prefix}.m"));
        let v = self.take(&format!("{prefix}.v"));
        if !like.same_layout(&m) || !like.same_layout(&v) {
            return Err(Error::Shape(format!(
                "optimizer state {prefix} does not match its parameters"
            )));
        }
        Ok(Adam::from_state(betas.0, betas.1, betas.2, m, v, steps))
    }
}
