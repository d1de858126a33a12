//! Composable parallel combinators with pluggable evaluation backends.
//!
//! This crate expresses parallel programs as [`Flow`]s — immutable,
//! composable computation graphs — and decides *how* they execute at run
//! time via a [`BackendConf`]. The same flow, unchanged, can run in order
//! on the calling thread, across a shared-memory thread pool, or on a
//! simulated distributed machine whose workers exchange nothing but
//! serialized messages.
//!
//! The layers, bottom to top:
//!
//! - [`flow`] — the combinator core: [`lift`], composition, products, sums,
//!   and in-order list application ([`eval_n`]). Everything here is
//!   sequential and doubles as the executable specification of everything
//!   below.
//! - [`backend`] — [`par_eval_n`]: list application with the evaluation
//!   strategy chosen by a [`BackendConf`] (Sequential / Pool / Dist), plus
//!   the loop variants behind cyclic skeletons.
//! - [`codec`] — the byte-serialization seam the distributed backend moves
//!   every value through.
//! - [`future`] — remote-data handles ([`Fut`]) that let composed
//!   distributed stages hand values directly between workers instead of
//!   funneling them through the master.
//! - [`stream`] — bounded element streams with explicit end-of-stream and
//!   deadlock-detecting receives, the strict stand-in for lazy lists.
//! - [`skeleton`] — the algorithmic skeletons: farms, chunked dispatch,
//!   pipelines, rings, tori, and the list plumbing they are made of.
//! - [`trace`] — per-message/per-state event logs for distributed runs,
//!   with JSONL export and aggregate statistics.
//!
//! Two properties tie the design together. Every parallel construct has
//! sequential semantics — [`Flow::sequentialize`] rewrites any flow into an
//! in-order equivalent, so parallel results are always checkable against a
//! reference run of the same graph. And the distributed simulation is
//! honest: values cross worker boundaries only as encoded bytes, remote
//! reads cost visible messages, and an attached [`TraceLog`] records every
//! one of them.
//!
//! # Example
//!
//! ```
//! use flows::{lift, par_map, BackendConf};
//!
//! let square = lift(|x: u64| x * x);
//! let conf = BackendConf::pool(4);
//! let result = par_map(&conf, square).run((1..=6).collect()).unwrap();
//! assert_eq!(result, vec![1, 4, 9, 16, 25, 36]);
//! ```

#![warn(missing_docs)]

pub mod backend;
pub mod codec;
pub mod either;
pub mod error;
pub(crate) mod fabric;
pub mod flow;
pub mod future;
pub mod skeleton;
pub mod stream;
pub mod trace;

pub use backend::{
    loop_par_eval_n, par_eval_n, post_loop_par_eval_n, BackendConf, DistConf, PoolConf, SeqConf,
    DEFAULT_CHANNEL_CAPACITY, DEFAULT_RECV_TIMEOUT,
};
pub use codec::{decode_from_slice, encode_to_vec, ByteReader, Codec};
pub use either::{partition_eithers, Either};
pub use error::{CodecError, FlowError};
pub use flow::{
    choose, eval_n, fanin, identity, lift, map_flow, zip_with_flow, ExecCtx, Flow, NodeKind,
};
pub use future::{get, lift_fut, put, unlift_fut, Fut};
pub use skeleton::{
    farm, farm_chunk, par_both, par_compose, par_eval_2, par_eval_n_lazy, par_fanout, par_map,
    par_map_stream, pipe, pipe2, right_rotate, ring, shuffle, take_each, torus, unshuffle,
};
pub use stream::{stream, StreamReceiver, StreamSender};
pub use trace::{
    import_jsonl, stats, ProcState, TraceEvent, TraceImportError, TraceKind, TraceLog, TraceStats,
    TAG_FUT_PAYLOAD, TAG_FUT_REQ, TAG_STREAM, TAG_TASK_IN, TAG_TASK_OUT,
};
