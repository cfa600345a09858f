use alloc::string::String;
use thiserror::Error;

/// Everything that can go wrong in the core crate. Shape problems name the
/// offending operation and axis so errors stay debuggable two layers up.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("{op}: expected rank {expected}, got {found}")]
    RankMismatch {
        op: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{op}: axis {axis} has extent {found}, expected {expected}")]
    ShapeMismatch {
        op: &'static str,
        axis: usize,
        expected: usize,
        found: usize,
    },
    #[error("{op}: axis {axis} out of range for rank {rank}")]
    AxisOutOfRange {
        op: &'static str,
        axis: usize,
        rank: usize,
    },
    #[error("{op}: {what} ({value}) not divisible by {divisor}")]
    NotDivisible {
        op: &'static str,
        what: &'static str,
        value: usize,
        divisor: usize,
    },
    #[error("{op}: invalid argument: {what}")]
    InvalidArg { op: &'static str, what: &'static str },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("backward: root must be a scalar, got {numel} elements")]
    NonScalarRoot { numel: usize },
    #[error("decompose: {side} side {found} too small for {levels} levels (kernel reach {reach})")]
    ImageTooSmall {
        side: &'static str,
        found: usize,
        levels: usize,
        reach: usize,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: bad magic")]
    CkptMagic,
    #[error("checkpoint: file truncated")]
    CkptTruncated,
    #[error("checkpoint: checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    CkptChecksum { stored: u32, computed: u32 },
    #[error("checkpoint: unknown dtype tag {0}")]
    CkptDtype(u8),
    #[error("checkpoint: parameter {name}: {detail}")]
    CkptParam { name: String, detail: String },
    #[error("moire: carrier frequency {value} is at or above the Nyquist limit 0.5")]
    Nyquist { value: f64 },
    #[error("train: non-finite loss at step {step}; halted with last good parameters")]
    NanLoss { step: usize },
    #[error("train: non-finite gradient for {name} at step {step}")]
    NanGradient { name: String, step: usize },
}

pub type Result<T> = core::result::Result<T, Error>;
