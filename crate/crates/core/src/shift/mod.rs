//! Fixed-point inference where every weight multiply is an arithmetic shift.

mod engine;
mod fixed;
mod format;

pub use engine::{conv2d_shift, svpe_infer, Alu, CountingAlu, FastAlu, FxMap, SvpeEngine, SvpeLayerPlan, SvpeStage};
pub use fixed::{accum_frac, shift_mul, shifts_exact, FxAccum, FxVal, FX_FRAC};
pub use format::{read_frozen, write_frozen};
