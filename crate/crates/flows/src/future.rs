//! Remote-data futures: handles that stand in for values held by workers.
//!
//! Under the distributed backend, composing two parallel stages naively
//! drags every intermediate value through the master: stage one's workers
//! send results up, the master forwards them down to stage two's workers.
//! A [`Fut`] breaks that funnel. [`put`] publishes a value into the
//! *producing worker's* slot table and yields a constant-size handle; only
//! the handle travels through the master. [`get`] redeems a handle where
//! the value is actually needed — and if that is a different worker, the
//! payload travels directly from owner to consumer over the fabric, never
//! touching the master.
//!
//! One cross-worker redemption costs exactly two messages: a `fut.req` from
//! the consumer to the owner and a `fut.payload` back. A put/get roundtrip
//! between two workers therefore adds four messages per two cycles — two
//! requests, two payloads — while the values themselves stay off the master
//! entirely.
//!
//! The laws, on every backend: `put >>> get` is the identity, and a handle
//! can be redeemed any number of times (slot tables live until the run's
//! fabric is torn down). Outside a distributed worker — under Sequential or
//! Pool confs, or on the coordinating thread itself — `put` wraps the value
//! locally as [`Fut::Basic`] and `get` unwraps it; the coordinator never
//! owns remote slots, so no worker can ever block on fetching from a master
//! that is itself busy coordinating.

use crate::backend::BackendConf;
use crate::codec::{decode_from_slice, encode_to_vec, ByteReader, Codec};
use crate::error::{CodecError, FlowError};
use crate::flow::{try_lift, Flow};

/// A value, or a constant-size handle to a value owned by a worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Fut<T> {
    /// The value itself, carried inline.
    Basic(T),
    /// A reference to a value in worker `owner`'s slot table.
    Remote {
        /// Pid of the worker holding the value.
        owner: usize,
        /// Slot id within that worker's table; unique for the fabric's
        /// lifetime.
        slot: u64,
    },
}

impl<T> Fut<T> {
    /// True for a [`Fut::Remote`] handle.
    pub fn is_remote(&self) -> bool {
        matches!(self, Fut::Remote { .. })
    }
}

/// `Remote` handles encode to 17 bytes (tag + owner + slot) regardless of
/// the payload type — that is the whole point of a handle.
impl<T: Codec> Codec for Fut<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        match self {
            Fut::Basic(v) => {
                out.push(0);
                v.encode(out);
            }
            Fut::Remote { owner, slot } => {
                out.push(1);
                owner.encode(out);
                slot.encode(out);
            }
        }
    }

    fn decode(r: &mut ByteReader<'_>) -> Result<Self, CodecError> {
        match r.take(1, "Fut")?[0] {
            0 => Ok(Fut::Basic(T::decode(r)?)),
            1 => Ok(Fut::Remote {
                owner: usize::decode(r)?,
                slot: u64::decode(r)?,
            }),
            b => Err(CodecError {
                expected: "Fut",
                remaining: r.remaining(),
                detail: format!("invalid tag byte {b}"),
            }),
        }
    }
}

/// Publishes a value as a future.
///
/// Inside a distributed worker task (the conf is `Dist` and evaluation has
/// a fabric endpoint) the value is encoded into the worker's slot table and
/// a [`Fut::Remote`] handle comes back. Everywhere else the value is
/// wrapped inline as [`Fut::Basic`].
pub fn put<T: Codec>(conf: &BackendConf) -> Flow<T, Fut<T>> {
    let dist = matches!(conf, BackendConf::Dist(_));
    try_lift(move |ctx, value: T| {
        match ctx.endpoint {
            Some(endpoint) if dist => {
                let bytes = encode_to_vec(&value);
                let slot = endpoint.publish(bytes);
                Ok(Fut::Remote {
                    owner: endpoint.id(),
                    slot,
                })
            }
            _ => Ok(Fut::Basic(value)),
        }
    })
}

/// Redeems a future.
///
/// A `Basic` future unwraps in place. A `Remote` handle is read from the
/// owner's slot table: locally if the redeeming worker *is* the owner,
/// otherwise via a request/payload message pair straight between the two
/// workers. Redeeming the same handle repeatedly is allowed; the slot
/// survives until the fabric is torn down. Fails with
/// [`FlowError::UnknownSlot`] for a handle the owner never issued and
/// [`FlowError::ChannelClosed`] for a handle that outlived its run.
pub fn get<T: Codec>() -> Flow<Fut<T>, T> {
    try_lift(|ctx, fut: Fut<T>| match fut {
        Fut::Basic(value) => Ok(value),
        Fut::Remote { owner, slot } => {
            if let Some(endpoint) = ctx.endpoint {
                if endpoint.id() == owner {
                    let bytes = endpoint
                        .read_local(slot)
                        .ok_or(FlowError::UnknownSlot { owner, slot })?;
                    return Ok(decode_from_slice(&bytes)?);
                }
            }
            let fabric = ctx.fabric.get().ok_or(FlowError::ChannelClosed {
                context: "future redeemed outside its run",
            })?;
            let requester = ctx.endpoint.map(|e| e.id()).unwrap_or(crate::fabric::MASTER);
            let bytes = fabric.fetch(requester, owner, slot)?;
            Ok(decode_from_slice(&bytes)?)
        }
    })
}

/// Adapts a flow on values to a flow on futures: redeem, apply, republish.
pub fn lift_fut<A: Codec, B: Codec>(conf: &BackendConf, f: Flow<A, B>) -> Flow<Fut<A>, Fut<B>> {
    get().then(f).then(put(conf))
}

/// Adapts a flow on futures back to a flow on values: publish, apply,
/// redeem.
pub fn unlift_fut<A: Codec, B: Codec>(
    conf: &BackendConf,
    f: Flow<Fut<A>, Fut<B>>,
) -> Flow<A, B> {
    put(conf).then(f).then(get())
}
