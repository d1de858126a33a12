//! Bounded streams: the strict replacement for lazy lists.
//!
//! Loop skeletons ([`ring`](crate::skeleton::ring),
//! [`torus`](crate::skeleton::torus), [`pipe`](crate::skeleton::pipe)) couple
//! long-lived node computations through explicit channels instead of demand
//! on lazy structures. A stream is a bounded FIFO with an explicit
//! end-of-stream marker:
//!
//! - [`StreamSender::send`] blocks while the buffer is full (backpressure);
//! - [`StreamReceiver::recv`] yields `Ok(Some(v))` for an element,
//!   `Ok(None)` once the stream is closed *and drained*, and
//!   `Err(FlowError::DeadlockTimeout)` if nothing arrives within the
//!   configured timeout — a miswired loop surfaces as an error, not a hang;
//! - [`StreamSender::close`] is idempotent, and dropping a sender closes its
//!   stream.
//!
//! Progress discipline: inside a loop skeleton, a node must be able to
//! produce its `k`-th send from its direct input plus fewer than `k`
//! receives (send first, then receive). That is what lets every cycle of
//! nodes make progress within bounded buffers; nodes that violate it are
//! caught by the receive timeout.
//!
//! Under a distributed conf, the skeletons wire their nodes with
//! *serializing* streams: every element crosses the worker boundary as
//! encoded bytes and is recorded in the trace with tag `"stream"`. Streams
//! obtained from [`stream`] directly are plain in-memory queues for local
//! plumbing (feeding [`par_map_stream`](crate::skeleton::par_map_stream),
//! tests, generators).

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender};

use crate::backend::BackendConf;
use crate::codec::{decode_from_slice, encode_to_vec, Codec};
use crate::error::FlowError;
use crate::trace::{TraceLog, TAG_STREAM};

enum Msg<T> {
    Item(T),
    Eos,
}

/// How elements travel: as values, or as encoded bytes (worker-to-worker
/// edges under a distributed conf).
enum Transport<T> {
    Plain {
        tx: Sender<Msg<T>>,
    },
    Coded {
        tx: Sender<Msg<Vec<u8>>>,
        src: usize,
        dst: usize,
        trace: Option<Arc<TraceLog>>,
    },
}

/// The sending half of a stream.
pub struct StreamSender<T> {
    transport: Transport<T>,
    closed: AtomicBool,
}

/// The receiving half of a stream.
pub struct StreamReceiver<T> {
    rx: ReceiverKind<T>,
    timeout: Duration,
    done: AtomicBool,
}

enum ReceiverKind<T> {
    Plain(Receiver<Msg<T>>),
    Coded(Receiver<Msg<Vec<u8>>>),
}

/// Creates a bounded in-memory stream with capacity and receive timeout
/// taken from `conf`.
pub fn stream<T>(conf: &BackendConf) -> (StreamSender<T>, StreamReceiver<T>) {
    plain_pair(conf.channel_capacity(), conf.recv_timeout())
}

pub(crate) fn plain_pair<T>(
    capacity: usize,
    timeout: Duration,
) -> (StreamSender<T>, StreamReceiver<T>) {
    let (tx, rx) = bounded(capacity.max(1));
    (
        StreamSender {
            transport: Transport::Plain { tx },
            closed: AtomicBool::new(false),
        },
        StreamReceiver {
            rx: ReceiverKind::Plain(rx),
            timeout,
            done: AtomicBool::new(false),
        },
    )
}

/// The stream wiring loop skeletons use between two workers: serializing
/// (with trace) under a distributed conf, plain otherwise.
pub(crate) fn stage_edge<T: Codec>(
    conf: &BackendConf,
    src: usize,
    dst: usize,
) -> (StreamSender<T>, StreamReceiver<T>) {
    match conf {
        BackendConf::Dist(dc) => coded_pair(
            dc.channel_capacity,
            dc.recv_timeout,
            src,
            dst,
            dc.trace.clone(),
        ),
        _ => plain_pair(conf.channel_capacity(), conf.recv_timeout()),
    }
}

/// A stream whose elements are serialized on send and decoded on receive,
/// with each element recorded as a trace message from `src` to `dst`.
pub(crate) fn coded_pair<T: Codec>(
    capacity: usize,
    timeout: Duration,
    src: usize,
    dst: usize,
    trace: Option<Arc<TraceLog>>,
) -> (StreamSender<T>, StreamReceiver<T>) {
    let (tx, rx) = bounded(capacity.max(1));
    (
        StreamSender {
            transport: Transport::Coded {
                tx,
                src,
                dst,
                trace,
            },
            closed: AtomicBool::new(false),
        },
        StreamReceiver {
            rx: ReceiverKind::Coded(rx),
            timeout,
            done: AtomicBool::new(false),
        },
    )
}

impl<T> StreamSender<T> {
    /// Sends one element, blocking while the buffer is full.
    ///
    /// Fails with [`FlowError::ChannelClosed`] if this sender was closed or
    /// the receiver is gone.
    pub fn send(&self, value: T) -> Result<(), FlowError>
    where
        T: Codec,
    {
        if self.closed.load(Ordering::Relaxed) {
            return Err(FlowError::ChannelClosed {
                context: "send on closed stream",
            });
        }
        match &self.transport {
            Transport::Plain { tx } => {
                tx.send(Msg::Item(value)).map_err(|_| FlowError::ChannelClosed {
                    context: "stream send",
                })
            }
            Transport::Coded {
                tx,
                src,
                dst,
                trace,
            } => {
                let bytes = encode_to_vec(&value);
                if let Some(log) = trace {
                    log.message_sent(*src, *dst, bytes.len(), TAG_STREAM);
                }
                tx.send(Msg::Item(bytes)).map_err(|_| FlowError::ChannelClosed {
                    context: "stream send",
                })
            }
        }
    }

    /// Marks the end of the stream. The receiver drains buffered elements
    /// first, then sees end-of-stream. Idempotent; dropping the sender has
    /// the same effect.
    pub fn close(&self) {
        if self.closed.swap(true, Ordering::Relaxed) {
            return;
        }
        // A full buffer makes this block until the receiver drains, which is
        // the same backpressure `send` obeys. If the receiver is gone the
        // send fails, which is fine: nobody is left to care about EOS.
        match &self.transport {
            Transport::Plain { tx } => {
                let _ = tx.send(Msg::Eos);
            }
            Transport::Coded { tx, .. } => {
                let _ = tx.send(Msg::Eos);
            }
        }
    }

    /// True once [`close`](Self::close) has been called.
    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::Relaxed)
    }
}

impl<T> Drop for StreamSender<T> {
    fn drop(&mut self) {
        // Make drop-without-close equivalent to close: the channel
        // disconnects, and the receiver treats disconnection as EOS after
        // draining. No explicit EOS message is needed here (and sending one
        // could block).
        self.closed.store(true, Ordering::Relaxed);
    }
}

impl<T> StreamReceiver<T> {
    /// Receives the next element.
    ///
    /// Returns `Ok(Some(v))` for an element, `Ok(None)` at end-of-stream
    /// (after all buffered elements were drained), and
    /// `Err(FlowError::DeadlockTimeout)` if nothing arrives in time.
    pub fn recv(&self) -> Result<Option<T>, FlowError>
    where
        T: Codec,
    {
        if self.done.load(Ordering::Relaxed) {
            return Ok(None);
        }
        let msg: Msg<T> = match &self.rx {
            ReceiverKind::Plain(rx) => match rx.recv_timeout(self.timeout) {
                Ok(m) => m,
                Err(e) => return self.recv_error(e),
            },
            ReceiverKind::Coded(rx) => match rx.recv_timeout(self.timeout) {
                Ok(Msg::Item(bytes)) => Msg::Item(decode_from_slice(&bytes)?),
                Ok(Msg::Eos) => Msg::Eos,
                Err(e) => return self.recv_error(e),
            },
        };
        match msg {
            Msg::Item(v) => Ok(Some(v)),
            Msg::Eos => {
                self.done.store(true, Ordering::Relaxed);
                Ok(None)
            }
        }
    }

    /// Collects every remaining element until end-of-stream.
    pub fn drain(&self) -> Result<Vec<T>, FlowError>
    where
        T: Codec,
    {
        let mut out = Vec::new();
        while let Some(v) = self.recv()? {
            out.push(v);
        }
        Ok(out)
    }

    fn recv_error(&self, e: RecvTimeoutError) -> Result<Option<T>, FlowError> {
        match e {
            RecvTimeoutError::Timeout => Err(FlowError::DeadlockTimeout {
                waited_ms: self.timeout.as_millis() as u64,
                context: "stream recv",
            }),
            RecvTimeoutError::Disconnected => {
                // Sender dropped without an explicit close: same as EOS.
                self.done.store(true, Ordering::Relaxed);
                Ok(None)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_pair<T>() -> (StreamSender<T>, StreamReceiver<T>) {
        plain_pair(4, Duration::from_millis(100))
    }

    #[test]
    fn elements_arrive_in_order_then_eos() {
        let (tx, rx) = test_pair();
        tx.send(1u64).unwrap();
        tx.send(2u64).unwrap();
        tx.close();
        assert_eq!(rx.recv().unwrap(), Some(1));
        assert_eq!(rx.recv().unwrap(), Some(2));
        assert_eq!(rx.recv().unwrap(), None);
        // EOS is sticky.
        assert_eq!(rx.recv().unwrap(), None);
    }

    #[test]
    fn close_is_idempotent_and_rejects_later_sends() {
        let (tx, rx) = test_pair();
        tx.send(7u64).unwrap();
        tx.close();
        tx.close();
        assert!(matches!(
            tx.send(8),
            Err(FlowError::ChannelClosed { .. })
        ));
        assert_eq!(rx.drain().unwrap(), vec![7]);
    }

    #[test]
    fn dropping_the_sender_acts_as_close() {
        let (tx, rx) = test_pair();
        tx.send(5u64).unwrap();
        drop(tx);
        assert_eq!(rx.recv().unwrap(), Some(5));
        assert_eq!(rx.recv().unwrap(), None);
    }

    #[test]
    fn empty_timeout_is_a_deadlock_error_not_a_hang() {
        let (_tx, rx) = test_pair::<u64>();
        let err = rx.recv().unwrap_err();
        assert!(matches!(err, FlowError::DeadlockTimeout { .. }));
    }

    #[test]
    fn send_blocks_on_full_buffer_until_receiver_drains() {
        let (tx, rx) = plain_pair::<u64>(1, Duration::from_secs(2));
        tx.send(0).unwrap();
        let t = std::thread::spawn(move || {
            // Buffer is full; this blocks until the main thread receives.
            tx.send(1).unwrap();
            tx.close();
        });
        assert_eq!(rx.recv().unwrap(), Some(0));
        assert_eq!(rx.recv().unwrap(), Some(1));
        assert_eq!(rx.recv().unwrap(), None);
        t.join().unwrap();
    }

    #[test]
    fn coded_streams_roundtrip_and_trace() {
        let log = Arc::new(TraceLog::new());
        let (tx, rx) = coded_pair::<(u64, String)>(
            4,
            Duration::from_millis(100),
            3,
            5,
            Some(Arc::clone(&log)),
        );
        tx.send((9, "x".to_string())).unwrap();
        tx.close();
        assert_eq!(rx.recv().unwrap(), Some((9, "x".to_string())));
        assert_eq!(rx.recv().unwrap(), None);
        let events = log.snapshot();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].src, Some(3));
        assert_eq!(events[0].dst, Some(5));
        assert_eq!(events[0].tag.as_deref(), Some(TAG_STREAM));
    }
}
