//! A minimal sum type used by the choice combinators.
//!
//! [`Either`] is the input/output shape of [`choose`](crate::flow::choose)
//! and [`fanin`](crate::flow::fanin), and the tagging device behind
//! [`par_eval_2`](crate::skeleton::par_eval_2): heterogeneous pairs are
//! injected into a common sum type so a homogeneous task list can carry them.

/// A value of one of two types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Either<L, R> {
    /// The left alternative.
    Left(L),
    /// The right alternative.
    Right(R),
}

impl<L, R> Either<L, R> {
    /// Returns `true` if this is a `Left` value.
    pub fn is_left(&self) -> bool {
        matches!(self, Either::Left(_))
    }

    /// Returns `true` if this is a `Right` value.
    pub fn is_right(&self) -> bool {
        matches!(self, Either::Right(_))
    }

    /// Maps both alternatives into a common type.
    pub fn either<T>(self, left: impl FnOnce(L) -> T, right: impl FnOnce(R) -> T) -> T {
        match self {
            Either::Left(l) => left(l),
            Either::Right(r) => right(r),
        }
    }
}

/// Splits a sequence of sums into the lefts and the rights, preserving the
/// relative order within each side.
pub fn partition_eithers<L, R>(items: impl IntoIterator<Item = Either<L, R>>) -> (Vec<L>, Vec<R>) {
    let mut lefts = Vec::new();
    let mut rights = Vec::new();
    for item in items {
        match item {
            Either::Left(l) => lefts.push(l),
            Either::Right(r) => rights.push(r),
        }
    }
    (lefts, rights)
}
