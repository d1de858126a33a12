//! Algorithmic skeletons: reusable parallel structure over
//! [`par_eval_n`](crate::backend::par_eval_n).
//!
//! Everything here is a composition of the core combinators and the backend
//! primitives — which is the point of the exercise: a farm is a shuffle and
//! an eval, a pipe is a loop stage whose elements hand futures down a chain
//! of streams, a torus is a loop stage wired into a twisted grid. Because
//! they are ordinary flows, all skeletons run on every backend and
//! [`sequentialize`](crate::flow::Flow::sequentialize) into their own
//! oracles.
//!
//! Task parallel:
//!
//! - [`par_map`] / [`farm`] / [`farm_chunk`] — data parallelism over lists;
//! - [`par_eval_n_lazy`] — chunked dispatch to cap resident tasks;
//! - [`par_eval_2`] / [`par_both`] / [`par_fanout`] — heterogeneous pairs;
//! - [`par_map_stream`] — data parallelism over [streams](crate::stream).
//!
//! Topological (loop-coupled, one resident worker per node):
//!
//! - [`pipe`] / [`pipe2`] / [`par_compose`] — sequential stages in parallel
//!   residence, intermediate values handed along as
//!   [futures](crate::future);
//! - [`ring`] — nodes in a cycle, each talking to its successor;
//! - [`torus`] — nodes in a twisted 2-D grid, each talking to its right and
//!   down neighbors.
//!
//! The list plumbing ([`shuffle`], [`unshuffle`], [`take_each`],
//! [`right_rotate`]) is exported too: distribution-and-reassembly is part of
//! a skeleton's observable behavior, and call sites (and tests) need the
//! same definitions.

use std::marker::PhantomData;
use std::sync::Arc;

use crate::backend::{
    eval_batch, par_eval_n, post_loop_par_eval_n, run_loop_with, BackendConf,
};
use crate::codec::Codec;
use crate::either::{partition_eithers, Either};
use crate::error::FlowError;
use crate::fabric::FabricSlot;
use crate::flow::{
    choose, eval_n, identity, lift, map_flow, try_lift, ExecCtx, Flow, FlowOp, NodeKind,
};
use crate::future::{get, put, Fut};
use crate::stream::{stage_edge, StreamReceiver, StreamSender};

// ----- list plumbing --------------------------------------------------------

/// Deals a list round-robin into `n` slices: slice `i` holds elements
/// `i, i+n, i+2n, …`. Always returns exactly `n` slices; with fewer
/// elements than slices the tail slices are empty.
///
/// # Panics
///
/// Panics if `n` is 0.
pub fn unshuffle<T>(n: usize, xs: Vec<T>) -> Vec<Vec<T>> {
    assert!(n >= 1, "unshuffle needs at least one slice");
    let mut slices: Vec<Vec<T>> = (0..n).map(|_| Vec::new()).collect();
    for (i, x) in xs.into_iter().enumerate() {
        slices[i % n].push(x);
    }
    slices
}

/// Inverse of [`unshuffle`]: interleaves slices column-major, ragged-aware —
/// one element from each non-exhausted slice per round.
/// `shuffle(unshuffle(n, xs)) == xs` for every `n ≥ 1`.
pub fn shuffle<T>(slices: Vec<Vec<T>>) -> Vec<T> {
    let mut iters: Vec<_> = slices.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::new();
    loop {
        let mut any = false;
        for it in &mut iters {
            if let Some(x) = it.next() {
                out.push(x);
                any = true;
            }
        }
        if !any {
            return out;
        }
    }
}

/// Every `n`-th element, starting with the first.
///
/// # Panics
///
/// Panics if `n` is 0.
pub fn take_each<T: Clone>(n: usize, xs: &[T]) -> Vec<T> {
    assert!(n >= 1, "take_each needs a positive stride");
    xs.iter().step_by(n).cloned().collect()
}

/// Moves the last element to the front; empty and singleton lists are
/// unchanged. The canonical inter-stage permutation for ring examples.
pub fn right_rotate<T>(mut xs: Vec<T>) -> Vec<T> {
    if xs.len() > 1 {
        xs.rotate_right(1);
    }
    xs
}

fn chunks_of<T>(size: usize, xs: Vec<T>) -> Vec<Vec<T>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(size.min(xs.len()));
    for x in xs {
        current.push(x);
        if current.len() == size {
            out.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

// ----- task-parallel skeletons ----------------------------------------------

/// [`par_eval_n`](crate::backend::par_eval_n) in chunks: flows and inputs
/// are cut into runs of `chunk_size`, each chunk is dispatched as one batch,
/// and at most one chunk's tasks are in flight at a time. Caps peak task
/// residency at the cost of a synchronization point per chunk.
///
/// # Panics
///
/// Panics if `chunk_size` is 0.
pub fn par_eval_n_lazy<A: Codec, B: Codec>(
    conf: &BackendConf,
    fs: Vec<Flow<A, B>>,
    chunk_size: usize,
) -> Flow<Vec<A>, Vec<B>> {
    assert!(chunk_size >= 1, "chunks must hold at least one task");
    let stages: Vec<Flow<Vec<A>, Vec<B>>> = fs
        .chunks(chunk_size)
        .map(|chunk| par_eval_n(conf, chunk.to_vec()))
        .collect();
    lift(move |xs: Vec<A>| chunks_of(chunk_size, xs))
        .then(eval_n(stages))
        .then(lift(|chunks: Vec<Vec<B>>| {
            chunks.into_iter().flatten().collect()
        }))
}

/// Evaluates two flows of different types in parallel over a pair.
///
/// Both sides are injected into one sum type so a homogeneous two-task
/// batch can carry them; the results are partitioned back out. This is the
/// bridge from list parallelism to heterogeneous combinators.
pub fn par_eval_2<A: Codec, B: Codec, C: Codec, D: Codec>(
    conf: &BackendConf,
    f: Flow<A, B>,
    g: Flow<C, D>,
) -> Flow<(A, C), (B, D)> {
    let tagged = choose(f, g);
    let stage = par_eval_n(conf, vec![tagged.clone(), tagged]);
    lift(|(a, c): (A, C)| vec![Either::Left(a), Either::Right(c)])
        .then(stage)
        .then(lift(|outs: Vec<Either<B, D>>| {
            let (mut bs, mut ds) = partition_eithers(outs);
            let b = bs.pop().expect("left task yields a left result");
            let d = ds.pop().expect("right task yields a right result");
            (b, d)
        }))
}

/// Parallel product with the default conf: `f` on the first element, `g` on
/// the second, both at once.
pub fn par_both<A: Codec, B: Codec, C: Codec, D: Codec>(
    f: Flow<A, B>,
    g: Flow<C, D>,
) -> Flow<(A, C), (B, D)> {
    par_eval_2(&BackendConf::default(), f, g)
}

/// Parallel fan-out with the default conf: duplicates the input and applies
/// `f` and `g` simultaneously.
pub fn par_fanout<A: Codec + Clone, B: Codec, C: Codec>(
    f: Flow<A, B>,
    g: Flow<A, C>,
) -> Flow<A, (B, C)> {
    lift(|a: A| (a.clone(), a)).then(par_both(f, g))
}

/// Applies one flow to every list element in parallel: one task per
/// element, length and order preserved.
pub fn par_map<A: Codec, B: Codec>(conf: &BackendConf, f: Flow<A, B>) -> Flow<Vec<A>, Vec<B>> {
    Flow::from_op(ParMapOp {
        conf: conf.clone(),
        f,
    })
}

struct ParMapOp<A, B> {
    conf: BackendConf,
    f: Flow<A, B>,
}

impl<A: Codec, B: Codec> FlowOp<Vec<A>, Vec<B>> for ParMapOp<A, B> {
    fn eval(&self, ctx: &ExecCtx<'_>, inputs: Vec<A>) -> Result<Vec<B>, FlowError> {
        let fs = vec![self.f.clone(); inputs.len()];
        eval_batch(ctx, &self.conf, &fs, inputs)
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Backend
    }

    fn sequentialized(&self) -> Option<Flow<Vec<A>, Vec<B>>> {
        Some(map_flow(self.f.sequentialize()))
    }
}

/// A task farm: deals the list round-robin onto `workers` mappers, maps
/// each slice in parallel, and reassembles the original order.
/// Coarser-grained than [`par_map`] — one task per worker instead of one
/// per element.
///
/// # Panics
///
/// Panics if `workers` is 0.
pub fn farm<A: Codec, B: Codec>(
    conf: &BackendConf,
    workers: usize,
    f: Flow<A, B>,
) -> Flow<Vec<A>, Vec<B>> {
    assert!(workers >= 1, "a farm needs at least one worker");
    let stage = par_eval_n(conf, vec![map_flow(f); workers]);
    lift(move |xs: Vec<A>| unshuffle(workers, xs))
        .then(stage)
        .then(lift(shuffle))
}

/// A farm dispatched in chunks of `chunk_size` slices at a time; see
/// [`par_eval_n_lazy`].
///
/// # Panics
///
/// Panics if `workers` or `chunk_size` is 0.
pub fn farm_chunk<A: Codec, B: Codec>(
    conf: &BackendConf,
    workers: usize,
    chunk_size: usize,
    f: Flow<A, B>,
) -> Flow<Vec<A>, Vec<B>> {
    assert!(workers >= 1, "a farm needs at least one worker");
    let stage = par_eval_n_lazy(conf, vec![map_flow(f); workers], chunk_size);
    lift(move |xs: Vec<A>| unshuffle(workers, xs))
        .then(stage)
        .then(lift(shuffle))
}

/// Pumps a stream through a flow with parallel chunks: reads up to
/// `chunk_size` elements, maps them with one [`par_map`] batch, forwards
/// the results, and repeats until end-of-stream, then closes `output`.
///
/// Chunking is invisible downstream — outputs arrive in input order, only
/// their grouping into batches differs. One fabric serves all chunks when
/// `conf` is distributed. Blocks the calling thread until the input ends or
/// a task/stream error surfaces (the output is closed on the error path
/// too, so downstream never hangs).
///
/// # Panics
///
/// Panics if `chunk_size` is 0.
pub fn par_map_stream<A: Codec, B: Codec>(
    conf: &BackendConf,
    f: Flow<A, B>,
    chunk_size: usize,
    input: &StreamReceiver<A>,
    output: &StreamSender<B>,
) -> Result<(), FlowError> {
    assert!(chunk_size >= 1, "chunks must hold at least one element");
    let stage = par_map(conf, f);
    let fabric = FabricSlot::new();
    let ctx = ExecCtx::new(&fabric);
    let result = (|| loop {
        let mut chunk = Vec::with_capacity(chunk_size);
        let mut eos = false;
        while chunk.len() < chunk_size {
            match input.recv()? {
                Some(v) => chunk.push(v),
                None => {
                    eos = true;
                    break;
                }
            }
        }
        if !chunk.is_empty() {
            for out in stage.op.eval(&ctx, chunk)? {
                output.send(out)?;
            }
        }
        if eos {
            return Ok(());
        }
    })();
    output.close();
    result
}

// ----- topological skeletons --------------------------------------------------

/// A process pipeline: every stage resides on its own worker, and each
/// intermediate value is handed to the next stage as a
/// [future](crate::future) over a stream — under the distributed backend
/// the payload moves directly between neighboring workers, bypassing the
/// master.
///
/// All stages share one type (`Flow<A, A>`); [`pipe2`] composes two stages
/// of different types. Computes `fs[n-1] ∘ … ∘ fs[0]`.
///
/// # Panics
///
/// Panics if `fs` is empty.
pub fn pipe<A: Codec>(conf: &BackendConf, fs: Vec<Flow<A, A>>) -> Flow<A, A> {
    assert!(!fs.is_empty(), "a pipe needs at least one stage");
    Flow::from_op(PipeOp {
        conf: conf.clone(),
        fs,
    })
}

struct PipeOp<A> {
    conf: BackendConf,
    fs: Vec<Flow<A, A>>,
}

impl<A: Codec> FlowOp<A, A> for PipeOp<A> {
    fn eval(&self, ctx: &ExecCtx<'_>, input: A) -> Result<A, FlowError> {
        let n = self.fs.len();
        if n == 1 {
            return self.fs[0].op.eval(ctx, input);
        }
        let conf = self.conf.clone();
        let stage_fs = self.fs.clone();

        let mut task_inputs: Vec<Option<A>> = Vec::with_capacity(n);
        task_inputs.push(Some(input));
        task_inputs.resize_with(n, || None);

        let mut outputs = run_loop_with(
            ctx,
            &self.conf,
            n,
            move |ids| {
                // Handle edges between consecutive stages.
                let mut to_next: Vec<Option<StreamSender<Fut<A>>>> =
                    (0..n).map(|_| None).collect();
                let mut from_prev: Vec<Option<StreamReceiver<Fut<A>>>> =
                    (0..n).map(|_| None).collect();
                for k in 0..n - 1 {
                    let (tx, rx) = stage_edge::<Fut<A>>(&conf, ids[k], ids[k + 1]);
                    to_next[k] = Some(tx);
                    from_prev[k + 1] = Some(rx);
                }

                stage_fs
                    .into_iter()
                    .enumerate()
                    .map(|(k, f)| {
                        // Entry: the head unwraps its direct input; later
                        // stages redeem the future handed down the stream.
                        let with_input: Flow<Option<A>, A> = match from_prev[k].take() {
                            None => try_lift(|_ctx, x: Option<A>| {
                                x.ok_or(FlowError::ChannelClosed {
                                    context: "pipe head input",
                                })
                            })
                            .then(f),
                            Some(rx) => try_lift(move |_ctx, _: Option<A>| {
                                rx.recv()?.ok_or(FlowError::ChannelClosed {
                                    context: "pipe stage input",
                                })
                            })
                            .then(get())
                            .then(f),
                        };
                        // Exit: intermediate stages publish and pass the
                        // handle on; the tail returns the value itself.
                        match to_next[k].take() {
                            Some(tx) => with_input.then(put(&conf)).then(try_lift(
                                move |_ctx, handle: Fut<A>| {
                                    tx.send(handle)?;
                                    tx.close();
                                    Ok(None)
                                },
                            )),
                            None => with_input.then(lift(Some)),
                        }
                    })
                    .collect()
            },
            task_inputs,
        )?;

        Ok(outputs
            .pop()
            .expect("a pipe has at least one stage")
            .expect("the pipe tail always yields a value"))
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Backend
    }

    fn sequentialized(&self) -> Option<Flow<A, A>> {
        let mut stages = self.fs.iter().map(Flow::sequentialize);
        let first = stages.next().expect("a pipe has at least one stage");
        Some(stages.fold(first, Flow::then))
    }
}

/// A two-stage pipeline over different types.
///
/// Both stages are unified over one compound carrier type so they can run
/// as a homogeneous [`pipe`]: the carrier holds pending inputs, mid values
/// and results, each stage consumes one compartment and fills the next, and
/// the value of interest rides through.
pub fn pipe2<A: Codec, B: Codec, C: Codec>(
    conf: &BackendConf,
    f: Flow<A, B>,
    g: Flow<B, C>,
) -> Flow<A, C> {
    type Carrier<A, B, C> = ((Vec<A>, Vec<B>), Vec<C>);
    let unified: Flow<Carrier<A, B, C>, Carrier<A, B, C>> =
        lift(|((pending, mids), _done): Carrier<A, B, C>| (pending, mids))
            .then(map_flow(f).both(map_flow(g)))
            .then(lift(|(mids, done): (Vec<B>, Vec<C>)| {
                ((Vec::new(), mids), done)
            }));
    lift(|a: A| ((vec![a], Vec::new()), Vec::new()))
        .then(pipe(conf, vec![unified.clone(), unified]))
        .then(lift(|((_, _), mut done): Carrier<A, B, C>| {
            done.pop().expect("two pipe passes complete the carrier")
        }))
}

/// [`pipe2`] with the default conf: parallel composition of two flows.
pub fn par_compose<A: Codec, B: Codec, C: Codec>(f: Flow<A, B>, g: Flow<B, C>) -> Flow<A, C> {
    pipe2(&BackendConf::default(), f, g)
}

/// A ring of communicating nodes.
///
/// Node `k` receives its list element as direct input, reads ring traffic
/// from node `k-1` and writes ring traffic to node `k+1` (indices mod the
/// ring size, so the last node feeds the first). The node function returns
/// the node's result; its outgoing stream is closed for it afterwards.
///
/// Progress rule for node functions: send before you receive — the `k`-th
/// send may depend on the direct input and on fewer than `k` receives.
/// Nodes that wait for traffic nobody has sent yet fail with
/// [`FlowError::DeadlockTimeout`]; their neighbors may then observe the
/// failed node's edge as closed. Either way a wedged ring returns an error
/// instead of hanging.
///
/// The ring size is the input length; one worker per node. An empty input
/// yields an empty output.
pub fn ring<I, O, T, F>(conf: &BackendConf, node: F) -> Flow<Vec<I>, Vec<O>>
where
    I: Codec,
    O: Codec,
    T: Codec,
    F: Fn(I, &StreamReceiver<T>, &StreamSender<T>) -> Result<O, FlowError>
        + Send
        + Sync
        + 'static,
{
    Flow::from_op(RingOp {
        conf: conf.clone(),
        node: Arc::new(node),
        _pd: PhantomData,
    })
}

struct RingOp<I, O, T, F> {
    conf: BackendConf,
    node: Arc<F>,
    #[allow(clippy::type_complexity)]
    _pd: PhantomData<fn(Vec<I>, T) -> Vec<O>>,
}

impl<I, O, T, F> FlowOp<Vec<I>, Vec<O>> for RingOp<I, O, T, F>
where
    I: Codec,
    O: Codec,
    T: Codec,
    F: Fn(I, &StreamReceiver<T>, &StreamSender<T>) -> Result<O, FlowError>
        + Send
        + Sync
        + 'static,
{
    fn eval(&self, ctx: &ExecCtx<'_>, inputs: Vec<I>) -> Result<Vec<O>, FlowError> {
        let n = inputs.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let conf = self.conf.clone();
        let node = Arc::clone(&self.node);

        let outputs = run_loop_with(
            ctx,
            &self.conf,
            n,
            move |ids| {
                let mut incoming: Vec<Option<StreamReceiver<T>>> = (0..n).map(|_| None).collect();
                let mut outgoing: Vec<Option<StreamSender<T>>> = (0..n).map(|_| None).collect();
                for k in 0..n {
                    let (tx, rx) = stage_edge::<T>(&conf, ids[k], ids[(k + 1) % n]);
                    outgoing[k] = Some(tx);
                    incoming[(k + 1) % n] = Some(rx);
                }
                (0..n)
                    .map(|k| {
                        let rx = incoming[k].take().expect("each node has one inbound edge");
                        let tx = outgoing[k].take().expect("each node has one outbound edge");
                        let node = Arc::clone(&node);
                        try_lift(move |_ctx, input: I| {
                            let output = node(input, &rx, &tx)?;
                            tx.close();
                            Ok(output)
                        })
                    })
                    .collect()
            },
            inputs,
        )?;

        // Rings stage their results through an after-loop pass.
        post_loop_par_eval_n(&self.conf, vec![identity::<O>(); n])
            .op
            .eval(ctx, outputs)
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Backend
    }

    fn sequentialized(&self) -> Option<Flow<Vec<I>, Vec<O>>> {
        Some(Flow::from_op(RingOp {
            conf: self.conf.to_sequential(),
            node: Arc::clone(&self.node),
            _pd: PhantomData,
        }))
    }
}

/// A square torus of communicating nodes.
///
/// The input is an `s × s` grid (row-major); node `(r, c)` receives element
/// `(r, c)` as direct input, reads horizontal traffic from `(r, c-1)` and
/// vertical traffic from `(r-1, c)`, and writes to `(r, c+1)` / `(r+1, c)`
/// (all mod `s`, so rows and columns wrap). Outputs come back as the same
/// grid shape. The node function receives
/// `(input, from_left, from_above, to_right, to_below)` and the same
/// send-before-receive progress rule as [`ring`] applies along both axes.
///
/// Fails with [`FlowError::NonSquareInput`] if any row's length differs
/// from the number of rows.
pub fn torus<I, O, TH, TV, F>(conf: &BackendConf, node: F) -> Flow<Vec<Vec<I>>, Vec<Vec<O>>>
where
    I: Codec,
    O: Codec,
    TH: Codec,
    TV: Codec,
    F: Fn(
            I,
            &StreamReceiver<TH>,
            &StreamReceiver<TV>,
            &StreamSender<TH>,
            &StreamSender<TV>,
        ) -> Result<O, FlowError>
        + Send
        + Sync
        + 'static,
{
    Flow::from_op(TorusOp {
        conf: conf.clone(),
        node: Arc::new(node),
        _pd: PhantomData,
    })
}

struct TorusOp<I, O, TH, TV, F> {
    conf: BackendConf,
    node: Arc<F>,
    #[allow(clippy::type_complexity)]
    _pd: PhantomData<fn(Vec<Vec<I>>, TH, TV) -> Vec<Vec<O>>>,
}

impl<I, O, TH, TV, F> FlowOp<Vec<Vec<I>>, Vec<Vec<O>>> for TorusOp<I, O, TH, TV, F>
where
    I: Codec,
    O: Codec,
    TH: Codec,
    TV: Codec,
    F: Fn(
            I,
            &StreamReceiver<TH>,
            &StreamReceiver<TV>,
            &StreamSender<TH>,
            &StreamSender<TV>,
        ) -> Result<O, FlowError>
        + Send
        + Sync
        + 'static,
{
    fn eval(&self, ctx: &ExecCtx<'_>, inputs: Vec<Vec<I>>) -> Result<Vec<Vec<O>>, FlowError> {
        let s = inputs.len();
        if s == 0 {
            return Ok(Vec::new());
        }
        for (r, row) in inputs.iter().enumerate() {
            if row.len() != s {
                return Err(FlowError::NonSquareInput {
                    rows: s,
                    bad_row: r,
                    bad_len: row.len(),
                });
            }
        }
        let total = s * s;

        // Flatten column-major — the shuffle order — so a round-robin
        // dispatch deals whole columns out evenly; position p holds node
        // (p mod s, p div s).
        let mut grid: Vec<Vec<Option<I>>> = inputs
            .into_iter()
            .map(|row| row.into_iter().map(Some).collect())
            .collect();
        let mut flat: Vec<I> = Vec::with_capacity(total);
        for c in 0..s {
            for row in grid.iter_mut() {
                flat.push(row[c].take().expect("each grid cell moves once"));
            }
        }

        let conf = self.conf.clone();
        let node = Arc::clone(&self.node);

        let outputs = run_loop_with(
            ctx,
            &self.conf,
            total,
            move |ids| {
                let pos = |r: usize, c: usize| c * s + r;
                let id_of = |r: usize, c: usize| ids[pos(r, c)];
                let mut in_h: Vec<Option<StreamReceiver<TH>>> =
                    (0..total).map(|_| None).collect();
                let mut in_v: Vec<Option<StreamReceiver<TV>>> =
                    (0..total).map(|_| None).collect();
                let mut out_h: Vec<Option<StreamSender<TH>>> =
                    (0..total).map(|_| None).collect();
                let mut out_v: Vec<Option<StreamSender<TV>>> =
                    (0..total).map(|_| None).collect();
                for r in 0..s {
                    for c in 0..s {
                        let (tx, rx) = stage_edge::<TH>(&conf, id_of(r, c), id_of(r, (c + 1) % s));
                        out_h[pos(r, c)] = Some(tx);
                        in_h[pos(r, (c + 1) % s)] = Some(rx);
                        let (tx, rx) = stage_edge::<TV>(&conf, id_of(r, c), id_of((r + 1) % s, c));
                        out_v[pos(r, c)] = Some(tx);
                        in_v[pos((r + 1) % s, c)] = Some(rx);
                    }
                }
                (0..total)
                    .map(|p| {
                        let rx_h = in_h[p].take().expect("one horizontal inbound per node");
                        let rx_v = in_v[p].take().expect("one vertical inbound per node");
                        let tx_h = out_h[p].take().expect("one horizontal outbound per node");
                        let tx_v = out_v[p].take().expect("one vertical outbound per node");
                        let node = Arc::clone(&node);
                        try_lift(move |_ctx, input: I| {
                            let output = node(input, &rx_h, &rx_v, &tx_h, &tx_v)?;
                            tx_h.close();
                            tx_v.close();
                            Ok(output)
                        })
                    })
                    .collect()
            },
            flat,
        )?;

        // After-loop staging, then back to row-major grid shape.
        let staged = post_loop_par_eval_n(&self.conf, vec![identity::<O>(); total])
            .op
            .eval(ctx, outputs)?;
        let mut rows: Vec<Vec<Option<O>>> = (0..s)
            .map(|_| (0..s).map(|_| None).collect())
            .collect();
        for (p, output) in staged.into_iter().enumerate() {
            rows[p % s][p / s] = Some(output);
        }
        Ok(rows
            .into_iter()
            .map(|row| {
                row.
                    into_iter()
                    .map(|cell| cell.expect("every node reports a result"))
                    .collect()
            })
            .collect())
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Backend
    }

    fn sequentialized(&self) -> Option<Flow<Vec<Vec<I>>, Vec<Vec<O>>>> {
        Some(Flow::from_op(TorusOp {
            conf: self.conf.to_sequential(),
            node: Arc::clone(&self.node),
            _pd: PhantomData,
        }))
    }
}
