//! Parallel evaluation backends.
//!
//! [`par_eval_n`] is the crate's one parallelism primitive: it turns a list
//! of flows into a flow over lists, `Flow<Vec<A>, Vec<B>>`, where element
//! `i` of the output is flow `i` applied to input `i` and the result is
//! truncated to the shorter of the two lists — exactly the semantics of
//! [`eval_n`](crate::flow::eval_n), which doubles as its executable
//! specification. *How* the elements are evaluated is chosen at run time by
//! a [`BackendConf`]:
//!
//! - **Sequential** — in order on the calling thread. The reference
//!   implementation everything else is checked against.
//! - **Pool** — a fixed number of worker threads over shared memory,
//!   pulling tasks from a shared queue. Output order is restored by task
//!   index, so results never depend on scheduling. With `workers = 1` it
//!   performs the tasks in order and is output-equivalent to Sequential.
//! - **Dist** — a simulated distributed machine: workers share no mutable
//!   state, every task input/output crosses a serialized channel, and
//!   remote values are reachable only through
//!   [future](crate::future) handles. Task `i` goes to worker
//!   `(i mod workers) + 1` (the master is pid 0); an optional
//!   [`TraceLog`] records every message. The simulation is deliberately
//!   honest about serialization: each value is encoded exactly once per
//!   hop and decoded exactly once on arrival.
//!
//! Failure contract (all backends): the first failing task wins, remaining
//! tasks are cancelled cooperatively, and a panic in a task body surfaces as
//! [`FlowError::TaskPanicked`] carrying the task's index.
//!
//! [`loop_par_eval_n`] is the variant behind cyclic skeletons: instead of
//! sharing pooled workers it pins one long-lived worker (thread) per
//! element, because loop-coupled tasks communicate through
//! [streams](crate::stream) while they run and may all need to be resident
//! at once. [`post_loop_par_eval_n`] has the contract of [`par_eval_n`] and
//! exists to mark staging that follows a loop.
//!
//! A distributed stage evaluated *inside* a worker task (a nested `Dist`
//! stage) runs in place sequentially: workers do not re-enter the dispatch
//! fabric.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::codec::{decode_from_slice, encode_to_vec, Codec};
use crate::error::FlowError;
use crate::fabric::{panic_message, FabricSlot, JobFn, Reply, MASTER};
use crate::flow::{eval_n, rebuild_list, ExecCtx, Flow, FlowOp, NodeKind};
use crate::trace::TraceLog;

/// Default bound for every channel a conf creates (task inboxes, stream
/// buffers).
pub const DEFAULT_CHANNEL_CAPACITY: usize = 64;

/// Default patience for blocking receives before declaring a deadlock.
pub const DEFAULT_RECV_TIMEOUT: Duration = Duration::from_secs(10);

/// Configuration of the sequential backend.
#[derive(Debug, Clone)]
pub struct SeqConf {
    /// Capacity of streams created under this conf.
    pub channel_capacity: usize,
    /// How long a blocking receive waits before failing with
    /// [`FlowError::DeadlockTimeout`].
    pub recv_timeout: Duration,
}

impl Default for SeqConf {
    fn default() -> Self {
        SeqConf {
            channel_capacity: DEFAULT_CHANNEL_CAPACITY,
            recv_timeout: DEFAULT_RECV_TIMEOUT,
        }
    }
}

/// Configuration of the shared-memory thread-pool backend.
#[derive(Debug, Clone)]
pub struct PoolConf {
    /// Number of worker threads. Must be at least 1.
    pub workers: usize,
    /// Capacity of streams created under this conf.
    pub channel_capacity: usize,
    /// How long a blocking receive waits before failing.
    pub recv_timeout: Duration,
}

impl PoolConf {
    /// A pool of `workers` threads with default channel parameters.
    ///
    /// # Panics
    ///
    /// Panics if `workers` is 0.
    pub fn new(workers: usize) -> Self {
        assert!(workers >= 1, "a pool needs at least one worker");
        PoolConf {
            workers,
            channel_capacity: DEFAULT_CHANNEL_CAPACITY,
            recv_timeout: DEFAULT_RECV_TIMEOUT,
        }
    }
}

impl Default for PoolConf {
    /// One worker per available hardware thread.
    fn default() -> Self {
        PoolConf::new(
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
        )
    }
}

/// Configuration of the simulated distributed backend.
#[derive(Clone)]
pub struct DistConf {
    /// Number of round-robin workers. Must be at least 1.
    pub workers: usize,
    /// Capacity of every fabric channel and stream under this conf.
    pub channel_capacity: usize,
    /// How long blocking receives (task collection aside) wait before
    /// failing.
    pub recv_timeout: Duration,
    /// Message/state sink. `None` disables tracing entirely.
    pub trace: Option<Arc<TraceLog>>,
}

impl DistConf {
    /// `workers` simulated machines with default channel parameters and no
    /// tracing.
    ///
    /// # Panics
    ///
    /// Panics if `workers` is 0.
    pub fn new(workers: usize) -> Self {
        assert!(workers >= 1, "a distributed conf needs at least one worker");
        DistConf {
            workers,
            channel_capacity: DEFAULT_CHANNEL_CAPACITY,
            recv_timeout: DEFAULT_RECV_TIMEOUT,
            trace: None,
        }
    }

    /// Attaches a trace sink. The sink of the conf that creates a run's
    /// fabric is the one that records that run.
    pub fn with_trace(mut self, log: Arc<TraceLog>) -> Self {
        self.trace = Some(log);
        self
    }
}

impl std::fmt::Debug for DistConf {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DistConf")
            .field("workers", &self.workers)
            .field("channel_capacity", &self.channel_capacity)
            .field("recv_timeout", &self.recv_timeout)
            .field("trace", &self.trace.is_some())
            .finish()
    }
}

/// Which backend evaluates a parallel stage, with its parameters.
///
/// Passed by reference when building stages and cloned into them; a conf is
/// plain data (plus an optional shared trace sink).
#[derive(Debug, Clone)]
pub enum BackendConf {
    /// In-order evaluation on the calling thread.
    Sequential(SeqConf),
    /// Fixed shared-memory thread pool.
    Pool(PoolConf),
    /// Simulated distributed machine with serialized channels.
    Dist(DistConf),
}

impl BackendConf {
    /// The sequential backend with default channel parameters.
    pub fn sequential() -> Self {
        BackendConf::Sequential(SeqConf::default())
    }

    /// A thread pool of `workers` threads.
    ///
    /// # Panics
    ///
    /// Panics if `workers` is 0.
    pub fn pool(workers: usize) -> Self {
        BackendConf::Pool(PoolConf::new(workers))
    }

    /// A simulated distributed machine with `workers` workers.
    ///
    /// # Panics
    ///
    /// Panics if `workers` is 0.
    pub fn dist(workers: usize) -> Self {
        BackendConf::Dist(DistConf::new(workers))
    }

    /// Worker count (1 for Sequential).
    pub fn workers(&self) -> usize {
        match self {
            BackendConf::Sequential(_) => 1,
            BackendConf::Pool(c) => c.workers,
            BackendConf::Dist(c) => c.workers,
        }
    }

    /// Stream/channel capacity of this conf.
    pub fn channel_capacity(&self) -> usize {
        match self {
            BackendConf::Sequential(c) => c.channel_capacity,
            BackendConf::Pool(c) => c.channel_capacity,
            BackendConf::Dist(c) => c.channel_capacity,
        }
    }

    /// Receive timeout of this conf.
    pub fn recv_timeout(&self) -> Duration {
        match self {
            BackendConf::Sequential(c) => c.recv_timeout,
            BackendConf::Pool(c) => c.recv_timeout,
            BackendConf::Dist(c) => c.recv_timeout,
        }
    }

    /// The trace sink, if this conf records one (only Dist confs do).
    pub fn trace_log(&self) -> Option<&Arc<TraceLog>> {
        match self {
            BackendConf::Dist(c) => c.trace.as_ref(),
            _ => None,
        }
    }

    /// A Sequential conf preserving this conf's channel parameters. Used by
    /// [`Flow::sequentialize`](crate::flow::Flow::sequentialize) to strip
    /// parallelism without changing stream behavior.
    pub(crate) fn to_sequential(&self) -> BackendConf {
        BackendConf::Sequential(SeqConf {
            channel_capacity: self.channel_capacity(),
            recv_timeout: self.recv_timeout(),
        })
    }
}

impl Default for BackendConf {
    /// A thread pool sized to the machine.
    fn default() -> Self {
        BackendConf::Pool(PoolConf::default())
    }
}

/// Evaluates a list of flows on a list of inputs in parallel, according to
/// `conf`.
///
/// Output `i` is `fs[i]` applied to `inputs[i]`; the result is truncated to
/// the shorter list. Semantically this is exactly
/// [`eval_n`](crate::flow::eval_n) — only the evaluation strategy differs —
/// and [`Flow::sequentialize`](crate::flow::Flow::sequentialize) rewrites
/// one into the other.
pub fn par_eval_n<A: Codec, B: Codec>(conf: &BackendConf, fs: Vec<Flow<A, B>>) -> Flow<Vec<A>, Vec<B>> {
    Flow::from_op(ParStageOp {
        conf: conf.clone(),
        fs,
        mode: StageMode::Eval,
    })
}

/// Like [`par_eval_n`], but pins one long-lived worker per element instead
/// of sharing pooled workers.
///
/// This is the dispatch mode for loop-coupled tasks — nodes of a
/// [`ring`](crate::skeleton::ring), [`torus`](crate::skeleton::torus) or
/// [`pipe`](crate::skeleton::pipe) — which exchange stream elements *while*
/// they run and therefore must all be resident simultaneously.
pub fn loop_par_eval_n<A: Codec, B: Codec>(
    conf: &BackendConf,
    fs: Vec<Flow<A, B>>,
) -> Flow<Vec<A>, Vec<B>> {
    Flow::from_op(ParStageOp {
        conf: conf.clone(),
        fs,
        mode: StageMode::Loop,
    })
}

/// Identical contract to [`par_eval_n`]; marks a stage that runs after a
/// loop stage (result collection, reordering and the like).
pub fn post_loop_par_eval_n<A: Codec, B: Codec>(
    conf: &BackendConf,
    fs: Vec<Flow<A, B>>,
) -> Flow<Vec<A>, Vec<B>> {
    Flow::from_op(ParStageOp {
        conf: conf.clone(),
        fs,
        mode: StageMode::PostLoop,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum StageMode {
    Eval,
    Loop,
    PostLoop,
}

pub(crate) struct ParStageOp<A, B> {
    pub(crate) conf: BackendConf,
    pub(crate) fs: Vec<Flow<A, B>>,
    pub(crate) mode: StageMode,
}

impl<A: Codec, B: Codec> FlowOp<Vec<A>, Vec<B>> for ParStageOp<A, B> {
    fn eval(&self, ctx: &ExecCtx<'_>, inputs: Vec<A>) -> Result<Vec<B>, FlowError> {
        match self.mode {
            StageMode::Eval | StageMode::PostLoop => eval_batch(ctx, &self.conf, &self.fs, inputs),
            StageMode::Loop => {
                let n = self.fs.len().min(inputs.len());
                let fs = self.fs[..n].to_vec();
                run_loop_with(ctx, &self.conf, n, move |_ids| fs, inputs)
            }
        }
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Backend
    }

    fn sequentialized(&self) -> Option<Flow<Vec<A>, Vec<B>>> {
        let fs = rebuild_list(&self.fs).unwrap_or_else(|| self.fs.clone());
        match self.mode {
            // An eval stage is, semantically, eval_n.
            StageMode::Eval | StageMode::PostLoop => Some(eval_n(fs)),
            // A loop stage cannot become eval_n — its tasks communicate
            // while running — so it keeps loop dispatch under a Sequential
            // conf (one plain thread per element, no work distribution).
            StageMode::Loop => Some(Flow::from_op(ParStageOp {
                conf: self.conf.to_sequential(),
                fs,
                mode: StageMode::Loop,
            })),
        }
    }
}

/// Dispatches one batch of independent tasks according to `conf`.
pub(crate) fn eval_batch<A: Codec, B: Codec>(
    ctx: &ExecCtx<'_>,
    conf: &BackendConf,
    fs: &[Flow<A, B>],
    mut inputs: Vec<A>,
) -> Result<Vec<B>, FlowError> {
    let n = fs.len().min(inputs.len());
    inputs.truncate(n);
    if n == 0 {
        return Ok(Vec::new());
    }
    match conf {
        BackendConf::Sequential(_) => seq_batch(ctx, fs, inputs),
        BackendConf::Pool(pc) => pool_batch(ctx, pc.workers, fs, inputs),
        // Workers do not re-enter the fabric: a distributed stage inside a
        // worker task evaluates in place.
        BackendConf::Dist(_) if ctx.endpoint.is_some() => seq_batch(ctx, fs, inputs),
        BackendConf::Dist(dc) => dist_batch(ctx, dc, fs, inputs),
    }
}

/// In-order evaluation on the calling thread. The reference backend: every
/// other dispatch path must match its outputs.
fn seq_batch<A: Codec, B: Codec>(
    ctx: &ExecCtx<'_>,
    fs: &[Flow<A, B>],
    inputs: Vec<A>,
) -> Result<Vec<B>, FlowError> {
    let mut out = Vec::with_capacity(inputs.len());
    for (index, (f, x)) in fs.iter().zip(inputs).enumerate() {
        let result = catch_unwind(AssertUnwindSafe(|| f.op.eval(ctx, x)));
        out.push(flatten_task(index, result)?);
    }
    Ok(out)
}

/// Shared-queue dispatch over `workers` scoped threads. The queue is an
/// atomic cursor over the task list; output order is restored by index.
fn pool_batch<A: Codec, B: Codec>(
    ctx: &ExecCtx<'_>,
    workers: usize,
    fs: &[Flow<A, B>],
    inputs: Vec<A>,
) -> Result<Vec<B>, FlowError> {
    let n = inputs.len();
    let cells: Vec<Mutex<Option<A>>> = inputs.into_iter().map(|x| Mutex::new(Some(x))).collect();
    let results: Vec<Mutex<Option<Result<B, FlowError>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let cancel = AtomicBool::new(false);
    let spawned = workers.max(1).min(n);

    std::thread::scope(|scope| {
        for _ in 0..spawned {
            scope.spawn(|| loop {
                if cancel.load(Ordering::Relaxed) {
                    break;
                }
                let index = next.fetch_add(1, Ordering::Relaxed);
                if index >= n {
                    break;
                }
                let x = cells[index]
                    .lock()
                    .unwrap()
                    .take()
                    .expect("each task input is taken exactly once");
                let result = catch_unwind(AssertUnwindSafe(|| fs[index].op.eval(ctx, x)));
                let result = flatten_task(index, result);
                if result.is_err() {
                    cancel.store(true, Ordering::Relaxed);
                }
                *results[index].lock().unwrap() = Some(result);
            });
        }
    });

    // First failure by task index wins; with one worker this coincides with
    // the sequential backend exactly.
    let mut out = Vec::with_capacity(n);
    let mut first_err: Option<FlowError> = None;
    for cell in results {
        match cell.into_inner().unwrap() {
            Some(Ok(b)) if first_err.is_none() => out.push(b),
            Some(Ok(_)) => {}
            Some(Err(e)) => {
                first_err.get_or_insert(e);
            }
            // Skipped after cancellation; an error exists earlier or later.
            None => {}
        }
    }
    match first_err {
        None => Ok(out),
        Some(e) => Err(e),
    }
}

/// Round-robin dispatch over the run's fabric. Every input is encoded by
/// the master and decoded by its worker; every output is encoded by the
/// worker and decoded by the master — one encode and one decode per value
/// per hop, never more.
fn dist_batch<A: Codec, B: Codec>(
    ctx: &ExecCtx<'_>,
    dc: &DistConf,
    fs: &[Flow<A, B>],
    inputs: Vec<A>,
) -> Result<Vec<B>, FlowError> {
    let fabric = ctx
        .fabric
        .get_or_create(dc.channel_capacity, dc.recv_timeout, dc.trace.clone());
    let workers = dc.workers.max(1);
    fabric.ensure_workers(workers);

    let n = inputs.len();
    let (reply_tx, reply_rx) = crossbeam_channel::bounded::<Reply>(n);
    let cancel = Arc::new(AtomicBool::new(false));

    for (index, x) in inputs.into_iter().enumerate() {
        let bytes = encode_to_vec(&x);
        let f = fs[index].clone();
        let job: JobFn = Box::new(move |endpoint, bytes| {
            let input: A = decode_from_slice(&bytes)?;
            let fabric = endpoint.fabric().ok_or(FlowError::ChannelClosed {
                context: "task without a live fabric",
            })?;
            let slot = FabricSlot::adopted(fabric);
            let task_ctx = ExecCtx::with_endpoint(&slot, endpoint);
            let output = f.op.eval(&task_ctx, input)?;
            Ok(encode_to_vec(&output))
        });
        fabric.dispatch(
            MASTER,
            (index % workers) + 1,
            index,
            bytes,
            job,
            reply_tx.clone(),
            Arc::clone(&cancel),
        )?;
    }
    drop(reply_tx);

    let mut encoded: Vec<Option<Vec<u8>>> = vec![None; n];
    for _ in 0..n {
        match reply_rx.recv() {
            Ok(Reply::Done { index, bytes }) => encoded[index] = Some(bytes),
            Ok(Reply::Failed { error, .. }) => {
                // Fail fast: flag the batch cancelled and let queued tasks
                // skip themselves.
                cancel.store(true, Ordering::Relaxed);
                return Err(error);
            }
            Err(_) => {
                return Err(FlowError::ChannelClosed {
                    context: "task reply collection",
                })
            }
        }
    }

    let mut out = Vec::with_capacity(n);
    for bytes in encoded {
        let bytes = bytes.ok_or(FlowError::ChannelClosed {
            context: "missing task reply",
        })?;
        out.push(decode_from_slice::<B>(&bytes)?);
    }
    Ok(out)
}

/// Runs `n` loop-coupled tasks, one resident worker each.
///
/// `build` receives the worker ids chosen for the elements (1-based; under
/// non-distributed confs they are simply `1..=n`) and returns the per-element
/// flows — loop skeletons use the ids to label their stream edges. All
/// workers are joined before this returns; the first failure by element
/// index wins, but no task is cancelled (loop protocols must wind down
/// through their streams, bounded by the receive timeout).
pub(crate) fn run_loop_with<A: Codec, B: Codec>(
    ctx: &ExecCtx<'_>,
    conf: &BackendConf,
    n: usize,
    build: impl FnOnce(&[usize]) -> Vec<Flow<A, B>>,
    inputs: Vec<A>,
) -> Result<Vec<B>, FlowError> {
    debug_assert!(inputs.len() >= n);
    if n == 0 {
        return Ok(Vec::new());
    }
    match conf {
        BackendConf::Dist(dc) if ctx.endpoint.is_none() => {
            let fabric = ctx
                .fabric
                .get_or_create(dc.channel_capacity, dc.recv_timeout, dc.trace.clone());
            let ids = fabric.spawn_dedicated(n);
            let fs = build(&ids);
            debug_assert_eq!(fs.len(), n);

            let (reply_tx, reply_rx) = crossbeam_channel::bounded::<Reply>(n);
            let cancel = Arc::new(AtomicBool::new(false));
            for (index, (x, f)) in inputs.into_iter().take(n).zip(fs).enumerate() {
                let bytes = encode_to_vec(&x);
                let job: JobFn = Box::new(move |endpoint, bytes| {
                    let input: A = decode_from_slice(&bytes)?;
                    let fabric = endpoint.fabric().ok_or(FlowError::ChannelClosed {
                        context: "task without a live fabric",
                    })?;
                    let slot = FabricSlot::adopted(fabric);
                    let task_ctx = ExecCtx::with_endpoint(&slot, endpoint);
                    let output = f.op.eval(&task_ctx, input)?;
                    Ok(encode_to_vec(&output))
                });
                fabric.dispatch(
                    MASTER,
                    ids[index],
                    index,
                    bytes,
                    job,
                    reply_tx.clone(),
                    Arc::clone(&cancel),
                )?;
            }
            drop(reply_tx);

            let mut results: Vec<Option<Result<Vec<u8>, FlowError>>> = (0..n).map(|_| None).collect();
            for _ in 0..n {
                match reply_rx.recv() {
                    Ok(Reply::Done { index, bytes }) => results[index] = Some(Ok(bytes)),
                    Ok(Reply::Failed { index, error }) => results[index] = Some(Err(error)),
                    Err(_) => {
                        return Err(FlowError::ChannelClosed {
                            context: "loop reply collection",
                        })
                    }
                }
            }
            let mut out = Vec::with_capacity(n);
            for result in results {
                let bytes = result.ok_or(FlowError::ChannelClosed {
                    context: "missing loop reply",
                })??;
                out.push(decode_from_slice::<B>(&bytes)?);
            }
            Ok(out)
        }
        _ => {
            // Sequential and Pool confs host loop elements on plain threads;
            // so does a distributed stage nested inside a worker task.
            let ids: Vec<usize> = (1..=n).collect();
            let fs = build(&ids);
            debug_assert_eq!(fs.len(), n);
            thread_loop(ctx, &fs, inputs.into_iter().take(n).collect())
        }
    }
}

/// One plain thread per element; join them all, then report in index order.
fn thread_loop<A: Codec, B: Codec>(
    ctx: &ExecCtx<'_>,
    fs: &[Flow<A, B>],
    inputs: Vec<A>,
) -> Result<Vec<B>, FlowError> {
    let n = inputs.len();
    let results: Vec<Mutex<Option<Result<B, FlowError>>>> =
        (0..n).map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for (index, x) in inputs.into_iter().enumerate() {
            let results = &results;
            let f = &fs[index];
            scope.spawn(move || {
                let result = catch_unwind(AssertUnwindSafe(|| f.op.eval(ctx, x)));
                *results[index].lock().unwrap() = Some(flatten_task(index, result));
            });
        }
    });

    let mut out = Vec::with_capacity(n);
    for cell in results {
        let result = cell
            .into_inner()
            .unwrap()
            .expect("every loop element reports exactly once");
        out.push(result?);
    }
    Ok(out)
}

fn flatten_task<B>(
    index: usize,
    result: std::thread::Result<Result<B, FlowError>>,
) -> Result<B, FlowError> {
    match result {
        Ok(inner) => inner,
        Err(payload) => Err(FlowError::TaskPanicked {
            index,
            message: panic_message(&*payload),
        }),
    }
}
