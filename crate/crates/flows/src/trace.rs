//! Message and scheduling traces for distributed runs.
//!
//! When a distributed conf carries a [`TraceLog`], the backend records one
//! [`TraceEvent`] per observable action: every message (task dispatch, task
//! reply, future request, future payload, stream element) and every worker
//! state change. Events carry a monotonic nanosecond timestamp taken from a
//! single clock, so per-worker timestamps are non-decreasing.
//!
//! Traces serialize to JSON Lines — one event object per line, optional
//! fields omitted — and can be re-imported for offline analysis.
//! [`stats`] reduces an event list to message totals, per-link counts, and
//! the share of traffic that flows through the master (pid 0), which is the
//! number to watch when judging whether a pipeline actually communicates
//! peer-to-peer.

use std::collections::BTreeMap;
use std::io::{self, BufRead, Write};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Message tag: a task input dispatched by the master.
pub const TAG_TASK_IN: &str = "task.in";
/// Message tag: a task result returned to the master.
pub const TAG_TASK_OUT: &str = "task.out";
/// Message tag: a request for a remote future's payload.
pub const TAG_FUT_REQ: &str = "fut.req";
/// Message tag: a remote future's payload, owner to requester.
pub const TAG_FUT_PAYLOAD: &str = "fut.payload";
/// Message tag: one element of a worker-to-worker stream.
pub const TAG_STREAM: &str = "stream";

/// What kind of action an event records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceKind {
    /// A worker changed scheduling state.
    ProcessState,
    /// A message left its sender.
    MessageSent,
}

/// Scheduling states a worker moves through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProcState {
    /// Executing a task body.
    Running,
    /// Waiting on a receive.
    Blocked,
    /// Dequeued work, about to run.
    Runnable,
    /// No work on hand.
    Idle,
}

/// One recorded action.
///
/// `pid` is the emitting process: for messages it equals `src`. The master
/// (coordinating thread) is pid 0; workers are numbered from 1. Field order
/// here is the key order in exported JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    /// Nanoseconds since the log was created, from a monotonic clock.
    pub ts: u64,
    /// Event kind.
    pub kind: TraceKind,
    /// Emitting process id.
    pub pid: usize,
    /// New scheduling state (`ProcessState` events only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<ProcState>,
    /// Sending process id (`MessageSent` events only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub src: Option<usize>,
    /// Receiving process id (`MessageSent` events only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dst: Option<usize>,
    /// Payload size in bytes (`MessageSent` events only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bytes: Option<usize>,
    /// Message tag (`MessageSent` events only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
}

/// A shared, thread-safe event sink.
///
/// Cloneable by `Arc`; the backend and any instrumented streams append to
/// it concurrently. Timestamps come from one `Instant` captured at
/// construction.
pub struct TraceLog {
    start: Instant,
    events: Mutex<Vec<TraceEvent>>,
}

impl TraceLog {
    /// Creates an empty log; timestamps are measured from this moment.
    pub fn new() -> Self {
        TraceLog {
            start: Instant::now(),
            events: Mutex::new(Vec::new()),
        }
    }

    fn now_ns(&self) -> u64 {
        // Saturating: a trace longer than ~584 years is not our problem.
        u64::try_from(self.start.elapsed().as_nanos()).unwrap_or(u64::MAX)
    }

    /// Records a worker state change.
    pub fn process_state(&self, pid: usize, state: ProcState) {
        let ev = TraceEvent {
            ts: self.now_ns(),
            kind: TraceKind::ProcessState,
            pid,
            state: Some(state),
            src: None,
            dst: None,
            bytes: None,
            tag: None,
        };
        self.events.lock().unwrap().push(ev);
    }

    /// Records a message leaving `src` for `dst`. The emitting pid is `src`
    /// by definition.
    pub fn message_sent(&self, src: usize, dst: usize, bytes: usize, tag: &str) {
        let ev = TraceEvent {
            ts: self.now_ns(),
            kind: TraceKind::MessageSent,
            pid: src,
            state: None,
            src: Some(src),
            dst: Some(dst),
            bytes: Some(bytes),
            tag: Some(tag.to_string()),
        };
        self.events.lock().unwrap().push(ev);
    }

    /// Returns all events recorded so far, ordered by `(ts, pid)`.
    ///
    /// Events are appended live in arrival order; the deterministic ordering
    /// is finalized here (and therefore also at export).
    pub fn snapshot(&self) -> Vec<TraceEvent> {
        let mut events = self.events.lock().unwrap().clone();
        events.sort_by_key(|e| (e.ts, e.pid));
        events
    }

    /// Number of events recorded so far.
    pub fn len(&self) -> usize {
        self.events.lock().unwrap().len()
    }

    /// True if nothing has been recorded.
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes the log as JSON Lines, one event per line, ordered by
    /// `(ts, pid)`.
    pub fn export_jsonl(&self, mut w: impl Write) -> io::Result<()> {
        for ev in self.snapshot() {
            serde_json::to_writer(&mut w, &ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

impl Default for TraceLog {
    fn default() -> Self {
        TraceLog::new()
    }
}

/// A failure while reading a trace back in.
#[derive(Debug, Error)]
pub enum TraceImportError {
    /// The underlying reader failed.
    #[error("trace read failed: {0}")]
    Io(#[from] io::Error),
    /// A line was not a valid event object.
    #[error("trace line {line} is not a valid event: {source}")]
    Malformed {
        /// 1-based line number.
        line: usize,
        /// The JSON parser's complaint.
        source: serde_json::Error,
    },
}

/// Reads a JSON Lines trace produced by [`TraceLog::export_jsonl`].
/// Blank lines are skipped; event order is preserved as written.
pub fn import_jsonl(reader: impl BufRead) -> Result<Vec<TraceEvent>, TraceImportError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line)
            .map_err(|source| TraceImportError::Malformed { line: i + 1, source })?;
        events.push(ev);
    }
    Ok(events)
}

/// Aggregate message statistics over a trace.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceStats {
    /// Total `MessageSent` events; always the sum of `per_link_counts`.
    pub messages_total: u64,
    /// Messages with the master (pid 0) as source or destination.
    pub messages_via_master: u64,
    /// Payload bytes of those master-touching messages.
    pub bytes_via_master: u64,
    /// Message counts per `(src, dst)` link.
    pub per_link_counts: BTreeMap<(usize, usize), u64>,
    /// Message counts per tag.
    pub per_tag_counts: BTreeMap<String, u64>,
}

/// Reduces an event list to [`TraceStats`]. `ProcessState` events are
/// ignored; malformed message events (missing src/dst) are skipped rather
/// than guessed at.
pub fn stats(events: &[TraceEvent]) -> TraceStats {
    let mut per_link_counts: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut per_tag_counts: BTreeMap<String, u64> = BTreeMap::new();
    let mut messages_via_master = 0u64;
    let mut bytes_via_master = 0u64;
    for ev in events {
        if ev.kind != TraceKind::MessageSent {
            continue;
        }
        let (Some(src), Some(dst)) = (ev.src, ev.dst) else {
            continue;
        };
        *per_link_counts.entry((src, dst)).or_insert(0) += 1;
        if let Some(tag) = &ev.tag {
            *per_tag_counts.entry(tag.clone()).or_insert(0) += 1;
        }
        if src == 0 || dst == 0 {
            messages_via_master += 1;
            bytes_via_master += ev.bytes.unwrap_or(0) as u64;
        }
    }
    let messages_total = per_link_counts.values().sum();
    TraceStats {
        messages_total,
        messages_via_master,
        bytes_via_master,
        per_link_counts,
        per_tag_counts,
    }
}
