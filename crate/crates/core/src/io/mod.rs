//! File formats: DVOL volumes and SWC-style trace files.

mod dvol;
mod swc;

pub use dvol::{read_dvol, write_dvol, DvolHeader};
pub use swc::{read_swc, write_swc, TraceFile, TYPE_GAP, TYPE_TRACE};

use thiserror::Error;

use crate::tree::TreeError;
use crate::volume::VolumeError;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad header: {0}")]
    Header(String),
    #[error("truncated at byte {offset}: expected {expected} more bytes")]
    Truncated { offset: u64, expected: u64 },
    #[error("{0} unexpected bytes after voxel data")]
    Trailing(u64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}
