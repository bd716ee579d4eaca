//! Cascade residual attention network: a gain stage `C = G(y) * y` followed
//! by an offset stage `X = C + O(C)`, each a head conv, five coarse-fine +
//! attention blocks and a 1x1 output conv.

pub mod arch;
pub mod checkpoint;
pub mod model;
pub mod train;
pub mod units;

pub use arch::{WidthScale, Widths};
pub use checkpoint::{
    decode_checkpoint, decode_checkpoint_as, encode_checkpoint, load_checkpoint,
    load_checkpoint_as, save_checkpoint,
};
pub use model::{CascadeModel, CascadeOutput, CascadeVars, ForwardOptions};
pub use train::{
    evaluate, history_csv, train_model, EvalSummary, LossKind, StepRecord, TrainConfig,
};
pub use units::{CfConvUnit, ScnauUnit};
