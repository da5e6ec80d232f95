//! The transfer attack and its metric: fine-tune a (possibly pruned) model
//! on nested target subsets of growing size, train the same architecture
//! from scratch on the same subsets, and integrate the accuracy gap over
//! `log10(n)`.

mod cache;
mod curve;
mod harness;
mod plot;

pub use cache::{CacheKey, CurveCache, CACHE_COLUMNS};
pub use curve::{slc_auc, CurvePoint, InitKind, LearningCurve, SlcReport, SlcResult};
pub use harness::{
    build_slc, evaluate_slc, finetune, slc_subset, train_scratch, FineTuneConfig, Init, RunOutcome, Scheme,
};
pub use plot::slc_svg;
