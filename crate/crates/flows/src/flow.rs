//! The flow core: immutable, composable computation graphs.
//!
//! A [`Flow<A, B>`] describes a computation from `A` to `B` as an expression
//! graph built from a small combinator algebra:
//!
//! - [`lift`] embeds an opaque pure function as a leaf node;
//! - [`Flow::then`] composes two flows in sequence;
//! - [`Flow::first`] / [`Flow::second`] route a flow over one half of a pair;
//! - [`Flow::both`] / [`Flow::fanout`] build products;
//! - [`choose`] / [`fanin`] build sums over [`Either`];
//! - [`eval_n`] applies a list of flows to a list of inputs, element-wise
//!   and in order.
//!
//! Flows are descriptions, not running computations: building one performs no
//! work, cloning one is a cheap handle copy, and the same flow can be run any
//! number of times. Parallelism enters only through backend stages (see
//! [`backend`](crate::backend)); everything else evaluates strictly and in
//! order on the calling thread, which makes any flow its own executable
//! specification. [`Flow::sequentialize`] rebuilds a flow with every backend
//! stage replaced by its in-order equivalent, so a parallel flow can always
//! be checked against itself.

use std::marker::PhantomData;
use std::sync::Arc;

use crate::either::Either;
use crate::error::FlowError;
use crate::fabric::{Endpoint, FabricSlot};

/// The structural kind of a flow's outermost node.
///
/// Exposed for introspection and tests; evaluation never branches on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    /// An opaque lifted function.
    Lifted,
    /// Sequential composition.
    Compose,
    /// A flow routed over the first element of a pair.
    First,
    /// Product of two flows over a pair.
    Both,
    /// One input fanned out through two flows.
    Fanout,
    /// Choice over an [`Either`] input.
    Choose,
    /// Merge of an [`Either`] input into one output type.
    Fanin,
    /// Element-wise list application.
    EvalList,
    /// A backend-dispatched parallel stage.
    Backend,
}

/// Execution context threaded through every node evaluation.
///
/// Carries the lazily created communication fabric shared by all distributed
/// stages of one `run`, and — when evaluation happens inside a fabric worker —
/// that worker's endpoint. User code never constructs one; [`Flow::run`]
/// does.
pub struct ExecCtx<'a> {
    pub(crate) fabric: &'a FabricSlot,
    pub(crate) endpoint: Option<&'a Endpoint>,
}

impl<'a> ExecCtx<'a> {
    pub(crate) fn new(fabric: &'a FabricSlot) -> Self {
        ExecCtx {
            fabric,
            endpoint: None,
        }
    }

    pub(crate) fn with_endpoint(fabric: &'a FabricSlot, endpoint: &'a Endpoint) -> Self {
        ExecCtx {
            fabric,
            endpoint: Some(endpoint),
        }
    }
}

/// A node in the flow graph. Implementations are the combinators themselves;
/// the trait is crate-private so the node set stays closed.
pub(crate) trait FlowOp<A, B>: Send + Sync {
    /// Evaluates this node on one input.
    fn eval(&self, ctx: &ExecCtx<'_>, input: A) -> Result<B, FlowError>;

    /// Structural kind of this node.
    fn kind(&self) -> NodeKind;

    /// Rebuilds this subtree with every backend stage replaced by its
    /// in-order equivalent. Returns `None` when the subtree contains no
    /// backend stage, in which case the caller reuses the original node.
    fn sequentialized(&self) -> Option<Flow<A, B>>;
}

/// An immutable computation from `A` to `B`.
///
/// See the [module docs](self) for the combinator algebra. A `Flow` is a
/// cheap reference-counted handle; `clone` shares the underlying graph.
pub struct Flow<A, B> {
    pub(crate) op: Arc<dyn FlowOp<A, B>>,
}

impl<A, B> Clone for Flow<A, B> {
    fn clone(&self) -> Self {
        Flow {
            op: Arc::clone(&self.op),
        }
    }
}

impl<A, B> Flow<A, B> {
    pub(crate) fn from_op(op: impl FlowOp<A, B> + 'static) -> Self {
        Flow { op: Arc::new(op) }
    }

    /// Structural kind of the outermost node.
    pub fn kind(&self) -> NodeKind {
        self.op.kind()
    }

    /// Rebuilds this flow with every backend stage replaced by in-order
    /// evaluation on the calling thread.
    ///
    /// The result computes the same function (running it yields the same
    /// outputs, or an equal error) but distributes no work, which makes it
    /// the reference oracle for the parallel original.
    pub fn sequentialize(&self) -> Flow<A, B> {
        self.op.sequentialized().unwrap_or_else(|| self.clone())
    }
}

impl<A: 'static, B: 'static> Flow<A, B> {
    /// Runs the flow on one input.
    ///
    /// Evaluation is strict and happens on the calling thread except inside
    /// backend stages. All distributed stages of this run share one
    /// communication fabric, created on first use and torn down — workers
    /// joined, slot tables dropped — when `run` returns.
    pub fn run(&self, input: A) -> Result<B, FlowError> {
        let fabric = FabricSlot::new();
        let ctx = ExecCtx::new(&fabric);
        self.op.eval(&ctx, input)
        // `fabric` drops here, joining any workers it spawned.
    }

    /// Sequential composition: runs `self`, then feeds the result to `next`.
    pub fn then<C: 'static>(self, next: Flow<B, C>) -> Flow<A, C> {
        Flow::from_op(ComposeOp { f: self, g: next })
    }

    /// Routes this flow over the first element of a pair, passing the second
    /// element through untouched.
    pub fn first<C: 'static>(self) -> Flow<(A, C), (B, C)> {
        Flow::from_op(FirstOp {
            f: self,
            _pd: PhantomData,
        })
    }

    /// Routes this flow over the second element of a pair.
    ///
    /// Defined as `swap >>> first >>> swap`, so its graph is a composition.
    pub fn second<C: 'static>(self) -> Flow<(C, A), (C, B)> {
        lift(|(c, a): (C, A)| (a, c))
            .then(self.first())
            .then(lift(|(b, c): (B, C)| (c, b)))
    }

    /// Product: applies `self` to the first element of a pair and `other` to
    /// the second. At the core level both halves evaluate in order on the
    /// calling thread; see [`par_both`](crate::skeleton::par_both) for the
    /// parallel counterpart.
    pub fn both<C: 'static, D: 'static>(self, other: Flow<C, D>) -> Flow<(A, C), (B, D)> {
        Flow::from_op(BothOp {
            f: self,
            g: other,
        })
    }

    /// Fan-out: duplicates the input and applies `self` and `other` to the
    /// copies. Requires `A: Clone` because duplication is an honest copy.
    pub fn fanout<C: 'static>(self, other: Flow<A, C>) -> Flow<A, (B, C)>
    where
        A: Clone,
    {
        Flow::from_op(FanoutOp {
            f: self,
            g: other,
        })
    }
}

/// Embeds a pure function as a flow.
///
/// The function is opaque to the graph: no introspection, no rewriting.
/// It must be pure in the practical sense — deterministic and free of
/// observable side effects — because backends may re-evaluate or reorder
/// lifted work relative to its neighbors.
pub fn lift<A: 'static, B: 'static>(f: impl Fn(A) -> B + Send + Sync + 'static) -> Flow<A, B> {
    Flow::from_op(LiftOp { f })
}

/// The identity flow.
pub fn identity<A: 'static>() -> Flow<A, A> {
    lift(|x| x)
}

/// Embeds a fallible function as a flow. Crate-internal: public lifted
/// functions are total, but internal plumbing (stream sends, future fetches)
/// needs to surface `FlowError`s from inside a graph.
pub(crate) fn try_lift<A: 'static, B: 'static>(
    f: impl Fn(&ExecCtx<'_>, A) -> Result<B, FlowError> + Send + Sync + 'static,
) -> Flow<A, B> {
    Flow::from_op(TryLiftOp { f })
}

/// Choice: routes a `Left` input through `f` and a `Right` input through
/// `g`, re-tagging the result on the same side.
pub fn choose<A: 'static, B: 'static, C: 'static, D: 'static>(
    f: Flow<A, B>,
    g: Flow<C, D>,
) -> Flow<Either<A, C>, Either<B, D>> {
    Flow::from_op(ChooseOp { f, g })
}

/// Merge: routes a `Left` input through `f` and a `Right` input through `g`,
/// collapsing both sides into one output type.
pub fn fanin<A: 'static, B: 'static, C: 'static>(
    f: Flow<A, C>,
    g: Flow<B, C>,
) -> Flow<Either<A, B>, C> {
    Flow::from_op(FaninOp { f, g })
}

/// Applies a list of flows to a list of inputs element-wise: output `i` is
/// `fs[i]` applied to `input[i]`.
///
/// The result is truncated to the shorter of the two lists — extra flows
/// stay unevaluated and extra inputs are dropped. Evaluation is strict and
/// in order on the calling thread; this is the sequential semantics that
/// every backend's `par_eval_n` must reproduce.
pub fn eval_n<A: 'static, B: 'static>(fs: Vec<Flow<A, B>>) -> Flow<Vec<A>, Vec<B>> {
    Flow::from_op(EvalListOp { fs })
}

/// Applies one flow to every element of a list, preserving length and order.
/// This is [`eval_n`] with the same flow repeated as often as the input
/// demands.
pub fn map_flow<A: 'static, B: 'static>(f: Flow<A, B>) -> Flow<Vec<A>, Vec<B>> {
    Flow::from_op(MapListOp { f })
}

/// Zips two lists (truncating to the shorter) and maps a binary flow over
/// the pairs.
pub fn zip_with_flow<A: 'static, B: 'static, C: 'static>(
    f: Flow<(A, B), C>,
) -> Flow<(Vec<A>, Vec<B>), Vec<C>> {
    lift(|(xs, ys): (Vec<A>, Vec<B>)| xs.into_iter().zip(ys).collect::<Vec<(A, B)>>())
        .then(map_flow(f))
}

// ----- node implementations -------------------------------------------------

struct LiftOp<F> {
    f: F,
}

impl<A, B, F> FlowOp<A, B> for LiftOp<F>
where
    F: Fn(A) -> B + Send + Sync,
{
    fn eval(&self, _ctx: &ExecCtx<'_>, input: A) -> Result<B, FlowError> {
        Ok((self.f)(input))
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Lifted
    }

    fn sequentialized(&self) -> Option<Flow<A, B>> {
        None
    }
}

struct TryLiftOp<F> {
    f: F,
}

impl<A, B, F> FlowOp<A, B> for TryLiftOp<F>
where
    F: Fn(&ExecCtx<'_>, A) -> Result<B, FlowError> + Send + Sync,
{
    fn eval(&self, ctx: &ExecCtx<'_>, input: A) -> Result<B, FlowError> {
        (self.f)(ctx, input)
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Lifted
    }

    fn sequentialized(&self) -> Option<Flow<A, B>> {
        None
    }
}

struct ComposeOp<A, B, C> {
    f: Flow<A, B>,
    g: Flow<B, C>,
}

impl<A: 'static, B: 'static, C: 'static> FlowOp<A, C> for ComposeOp<A, B, C> {
    fn eval(&self, ctx: &ExecCtx<'_>, input: A) -> Result<C, FlowError> {
        let mid = self.f.op.eval(ctx, input)?;
        self.g.op.eval(ctx, mid)
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Compose
    }

    fn sequentialized(&self) -> Option<Flow<A, C>> {
        rebuild2(&self.f, &self.g, |f, g| f.then(g))
    }
}

struct FirstOp<A, B, C> {
    f: Flow<A, B>,
    _pd: PhantomData<fn(C) -> C>,
}

impl<A: 'static, B: 'static, C: 'static> FlowOp<(A, C), (B, C)> for FirstOp<A, B, C> {
    fn eval(&self, ctx: &ExecCtx<'_>, (a, c): (A, C)) -> Result<(B, C), FlowError> {
        Ok((self.f.op.eval(ctx, a)?, c))
    }

    fn kind(&self) -> NodeKind {
        NodeKind::First
    }

    fn sequentialized(&self) -> Option<Flow<(A, C), (B, C)>> {
        self.f.op.sequentialized().map(Flow::first)
    }
}

struct BothOp<A, B, C, D> {
    f: Flow<A, B>,
    g: Flow<C, D>,
}

impl<A: 'static, B: 'static, C: 'static, D: 'static> FlowOp<(A, C), (B, D)> for BothOp<A, B, C, D> {
    fn eval(&self, ctx: &ExecCtx<'_>, (a, c): (A, C)) -> Result<(B, D), FlowError> {
        let b = self.f.op.eval(ctx, a)?;
        let d = self.g.op.eval(ctx, c)?;
        Ok((b, d))
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Both
    }

    fn sequentialized(&self) -> Option<Flow<(A, C), (B, D)>> {
        rebuild2(&self.f, &self.g, |f, g| f.both(g))
    }
}

struct FanoutOp<A, B, C> {
    f: Flow<A, B>,
    g: Flow<A, C>,
}

impl<A: Clone + 'static, B: 'static, C: 'static> FlowOp<A, (B, C)> for FanoutOp<A, B, C> {
    fn eval(&self, ctx: &ExecCtx<'_>, input: A) -> Result<(B, C), FlowError> {
        let b = self.f.op.eval(ctx, input.clone())?;
        let c = self.g.op.eval(ctx, input)?;
        Ok((b, c))
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Fanout
    }

    fn sequentialized(&self) -> Option<Flow<A, (B, C)>> {
        rebuild2(&self.f, &self.g, |f, g| f.fanout(g))
    }
}

struct ChooseOp<A, B, C, D> {
    f: Flow<A, B>,
    g: Flow<C, D>,
}

impl<A: 'static, B: 'static, C: 'static, D: 'static> FlowOp<Either<A, C>, Either<B, D>>
    for ChooseOp<A, B, C, D>
{
    fn eval(
        &self,
        ctx: &ExecCtx<'_>,
        input: Either<A, C>,
    ) -> Result<Either<B, D>, FlowError> {
        match input {
            Either::Left(a) => Ok(Either::Left(self.f.op.eval(ctx, a)?)),
            Either::Right(c) => Ok(Either::Right(self.g.op.eval(ctx, c)?)),
        }
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Choose
    }

    fn sequentialized(&self) -> Option<Flow<Either<A, C>, Either<B, D>>> {
        rebuild2(&self.f, &self.g, choose)
    }
}

struct FaninOp<A, B, C> {
    f: Flow<A, C>,
    g: Flow<B, C>,
}

impl<A: 'static, B: 'static, C: 'static> FlowOp<Either<A, B>, C> for FaninOp<A, B, C> {
    fn eval(&self, ctx: &ExecCtx<'_>, input: Either<A, B>) -> Result<C, FlowError> {
        match input {
            Either::Left(a) => self.f.op.eval(ctx, a),
            Either::Right(b) => self.g.op.eval(ctx, b),
        }
    }

    fn kind(&self) -> NodeKind {
        NodeKind::Fanin
    }

    fn sequentialized(&self) -> Option<Flow<Either<A, B>, C>> {
        rebuild2(&self.f, &self.g, fanin)
    }
}

struct EvalListOp<A, B> {
    fs: Vec<Flow<A, B>>,
}

impl<A: 'static, B: 'static> FlowOp<Vec<A>, Vec<B>> for EvalListOp<A, B> {
    fn eval(&self, ctx: &ExecCtx<'_>, inputs: Vec<A>) -> Result<Vec<B>, FlowError> {
        let n = self.fs.len().min(inputs.len());
        let mut out = Vec::with_capacity(n);
        for (f, x) in self.fs.iter().zip(inputs) {
            out.push(f.op.eval(ctx, x)?);
        }
        Ok(out)
    }

    fn kind(&self) -> NodeKind {
        NodeKind::EvalList
    }

    fn sequentialized(&self) -> Option<Flow<Vec<A>, Vec<B>>> {
        rebuild_list(&self.fs).map(eval_n)
    }
}

struct MapListOp<A, B> {
    f: Flow<A, B>,
}

impl<A: 'static, B: 'static> FlowOp<Vec<A>, Vec<B>> for MapListOp<A, B> {
    fn eval(&self, ctx: &ExecCtx<'_>, inputs: Vec<A>) -> Result<Vec<B>, FlowError> {
        let mut out = Vec::with_capacity(inputs.len());
        for x in inputs {
            out.push(self.f.op.eval(ctx, x)?);
        }
        Ok(out)
    }

    fn kind(&self) -> NodeKind {
        NodeKind::EvalList
    }

    fn sequentialized(&self) -> Option<Flow<Vec<A>, Vec<B>>> {
        self.f.op.sequentialized().map(map_flow)
    }
}

/// Rebuilds a two-child node if either child contains a backend stage.
fn rebuild2<A, B, FA, FB>(
    f: &FA,
    g: &FB,
    make: impl FnOnce(FA, FB) -> Flow<A, B>,
) -> Option<Flow<A, B>>
where
    FA: Clone + Sequentialize,
    FB: Clone + Sequentialize,
{
    let f2 = f.seq_opt();
    let g2 = g.seq_opt();
    if f2.is_none() && g2.is_none() {
        return None;
    }
    Some(make(
        f2.unwrap_or_else(|| f.clone()),
        g2.unwrap_or_else(|| g.clone()),
    ))
}

/// Rebuilds a flow list if any element contains a backend stage.
pub(crate) fn rebuild_list<A: 'static, B: 'static>(
    fs: &[Flow<A, B>],
) -> Option<Vec<Flow<A, B>>> {
    let rebuilt: Vec<Option<Flow<A, B>>> = fs.iter().map(|f| f.op.sequentialized()).collect();
    if rebuilt.iter().all(Option::is_none) {
        return None;
    }
    Some(
        fs.iter()
            .zip(rebuilt)
            .map(|(f, r)| r.unwrap_or_else(|| f.clone()))
            .collect(),
    )
}

/// Helper trait so [`rebuild2`] can work over `Flow`s of different types.
trait Sequentialize: Sized {
    fn seq_opt(&self) -> Option<Self>;
}

impl<A: 'static, B: 'static> Sequentialize for Flow<A, B> {
    fn seq_opt(&self) -> Option<Self> {
        self.op.sequentialized()
    }
}
