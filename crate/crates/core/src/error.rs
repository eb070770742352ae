//! Error type shared by the core modules.

use alloc::string::String;
use core::fmt;

/// Errors surfaced by the differentiation engine, models, losses, trainer,
/// and data generators.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// A caller violated a precondition (dimension mismatch, empty batch,
    /// label out of range, invalid generator arguments, ...).
    InvalidArgument(String),
    /// A non-finite value appeared during a forward or backward pass.
    /// `node` is the tape index of the first offending node.
    NumericalFailure { node: usize, op: &'static str },
}

impl CoreError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArgument(msg.into())
    }
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::InvalidArgument(msg) => write!(f, "invalid argument: {msg}"),
            CoreError::NumericalFailure { node, op } => {
                write!(f, "numerical failure: non-finite value at tape node {node} ({op})")
            }
        }
    }
}

impl core::error::Error for CoreError {}
