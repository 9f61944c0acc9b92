//! Stage-by-stage orchestration of a run: simulation, feature extraction,
//! training, enhancement, trial construction, scoring and reporting. Every
//! stage reads its inputs from and writes its outputs to the run directory
//! described by [`RunLayout`].

mod evaluate;
mod layout;
mod prepare;

pub use evaluate::{
    ablate, build_trial_list, enhance, enhancement_checkpoint, evaluate, score, train, AblationRow,
    ErrorRates, EvalReport, RecipeBudget, ScoreSummary, SegmentPlan, TrainSummary, TrialSummary,
    RECIPES_FILE,
};
pub use layout::*;
pub use prepare::{extract, simulate, ExtractSummary, FeatureInfo, SimulationSummary};
