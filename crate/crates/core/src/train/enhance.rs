use ndarray::{s, Axis};

use crate::archive::FeatureArchive;
use crate::error::Result;
use crate::nn::Generator;

/// How utterances are fed to the generator at enhancement time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnhanceMode {
    /// Whole utterance in one pass.
    #[default]
    Full,
    /// Consecutive blocks of this many frames, each mapped on its own. The
    /// convolutions see zero padding at every block edge instead of the
    /// neighbouring frames, and instance norm statistics are per block, so
    /// output near block boundaries differs from full-utterance mapping.
    Chunked(usize),
}

/// Maps every utterance through `g`, keeping ids, order and frame counts.
pub fn enhance_corpus(
    g: &Generator,
    input: &FeatureArchive,
    mode: EnhanceMode,
) -> Result<FeatureArchive> {
    let mut out = FeatureArchive::new();
    for (id, x) in input.iter() {
        let y = match mode {
            EnhanceMode::Chunked(n) if x.nrows() > 0 => {
                let n = n.max(1);
                let parts = (0..x.nrows())
                    .step_by(n)
                    .map(|start| {
                        g.forward(
                            &x.slice(s![start..(start + n).min(x.nrows()), ..])
                                .to_owned(),
                        )
                    })
                    .collect::<Result<Vec<_>>>()?;
                let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                ndarray::concatenate(Axis(0), &views).expect("blocks share width")
            }
            _ => g.forward(x)?,
        };
        out.insert(id, y)?;
    }
    Ok(out)
}
