//! Average-of-domain-experts toolkit: checkpoint container I/O, weighted
//! parameter averaging, fine-tuning schedules (slanted triangular learning
//! rate and layer-wise decay), a WER evaluation stack, and a desk-scale
//! synthetic lab that contrasts parallel expert averaging with sequential
//! fine-tuning.
//!
//! Data-parallel inner loops (tensor merging, corpus scoring, expert
//! training) run on rayon when the default `parallel` feature is enabled and
//! fall back to sequential execution without it; outputs are bit-identical
//! either way.

pub mod checkpoint;
pub mod eval;
pub mod glob;
pub mod merge;
pub mod par;
pub mod render;
pub mod schedules;
pub mod toy;

pub use checkpoint::{
    read_checkpoint, validate_compat, write_checkpoint, Checkpoint, CheckpointError, DType,
    TensorData, TensorRecord,
};
pub use eval::{corpus_wer, geometric_mean, normalize_text, word_error_rate, EvalError};
pub use merge::{average_experts, diff_norm, interpolate_pair, MergeError, MergeSpec};
pub use schedules::{
    effective_lr, llrd_multipliers, stlr_lr, LayerRateMap, LayerRule, ScheduleError, StlrConfig,
};
