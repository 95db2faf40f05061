//! Support recovery, screening-based sparse testing and step-down multiple
//! testing built on the de-sparsified estimator.

mod recovery;
mod screening;
mod stepdown;
mod three_step;

pub use recovery::{similarity, support_recover, RecoveryResult, DEFAULT_TAU};
pub use screening::{iterative_screen, marginal_screen, split_sample, ScreenMode, ScreenSize};
pub use stepdown::{bonferroni_holm, stepdown_fwer, Sided, Step, StepdownResult};
pub use three_step::{
    one_step_test, three_step_test, NodewiseTuning, ScreenedFit, ThreeStepOptions, ThreeStepOutcome,
};
