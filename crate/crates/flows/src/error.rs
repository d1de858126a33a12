//! Error types shared across the crate.
//!
//! Everything that can go wrong while running a flow is folded into
//! [`FlowError`] so that combinators compose without error-type plumbing.
//! Errors are `Clone + PartialEq`: backends fan results out to several
//! threads, and tests compare failures structurally.

use thiserror::Error;

/// A decoding failure produced by a [`Codec`](crate::codec::Codec)
/// implementation.
///
/// Carries the type the decoder was trying to produce and how many bytes
/// remained in the buffer, which is usually enough to spot a framing bug.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("failed to decode {expected}: {detail} ({remaining} bytes remaining)")]
pub struct CodecError {
    /// Name of the type the decoder expected to read.
    pub expected: &'static str,
    /// Bytes left unconsumed in the buffer when the failure was detected.
    pub remaining: usize,
    /// Human-readable description of the failure.
    pub detail: String,
}

/// Any failure surfaced by running a flow.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum FlowError {
    /// A task body panicked. `index` is the position of the task in the
    /// argument list of the `par_eval_n` call that dispatched it.
    #[error("task {index} panicked: {message}")]
    TaskPanicked {
        /// Index of the failed task within its dispatch batch.
        index: usize,
        /// Panic payload rendered as text.
        message: String,
    },

    /// A value failed to decode at a serialization boundary.
    #[error("decode error: {0}")]
    Decode(#[from] CodecError),

    /// A channel's peer hung up while a send or receive was outstanding.
    #[error("channel closed: {context}")]
    ChannelClosed {
        /// Where the closed channel was observed.
        context: &'static str,
    },

    /// A blocking receive exceeded the configured timeout. Raised instead of
    /// hanging when a flow's communication structure deadlocks.
    #[error("deadlock suspected: waited {waited_ms} ms on {context}")]
    DeadlockTimeout {
        /// How long the receiver waited before giving up.
        waited_ms: u64,
        /// Which receive operation timed out.
        context: &'static str,
    },

    /// A remote-data fetch named a slot the owning worker has no entry for.
    #[error("unknown future slot {slot} on worker {owner}")]
    UnknownSlot {
        /// Worker id the handle claims owns the value.
        owner: usize,
        /// Slot id that was not found in that worker's table.
        slot: u64,
    },

    /// A torus was given a non-square grid of inputs.
    #[error("torus input is not square: {rows} rows, row {bad_row} has {bad_len} columns")]
    NonSquareInput {
        /// Number of rows in the offending grid.
        rows: usize,
        /// First row whose length differs from the number of rows.
        bad_row: usize,
        /// Length of that row.
        bad_len: usize,
    },
}
