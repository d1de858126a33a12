//! The in-process message fabric behind the distributed backend.
//!
//! A [`Fabric`] is a set of worker processes simulated as threads that share
//! no mutable state with each other: every task input, task result, future
//! payload, and stream element crosses between them as a serialized byte
//! buffer over a bounded channel. The coordinating thread — the *master*,
//! pid 0 — dispatches work and collects replies; workers are numbered from 1.
//!
//! Each worker runs two threads over its own private state:
//!
//! - the *task thread* executes dispatched task bodies one at a time, in
//!   arrival order;
//! - the *service thread* answers future-payload requests from its worker's
//!   slot table, so a worker can serve remote reads even while its task
//!   thread is busy or blocked.
//!
//! The slot table (values published by `put`) is the one piece of state the
//! two threads of a worker share; it is never visible to any other worker.
//! Slot entries survive until the fabric is torn down, so a future can be
//! fetched any number of times.
//!
//! A fabric is created lazily by the first distributed stage of a
//! [`Flow::run`](crate::flow::Flow::run) and torn down when that run
//! returns: task threads are joined first (letting in-flight fetches
//! complete), then service threads.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, Weak};
use std::thread::JoinHandle;
use std::time::Duration;

use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender};

use crate::error::FlowError;
use crate::trace::{ProcState, TraceLog, TAG_FUT_PAYLOAD, TAG_FUT_REQ, TAG_TASK_IN, TAG_TASK_OUT};

/// Pid of the coordinating thread.
pub(crate) const MASTER: usize = 0;

/// A task body: decodes its input bytes, evaluates, encodes its output.
/// Runs on a worker's task thread with that worker's endpoint in scope.
pub(crate) type JobFn = Box<dyn FnOnce(&Endpoint, Vec<u8>) -> Result<Vec<u8>, FlowError> + Send>;

/// Outcome of one dispatched task, sent back to the dispatching thread.
pub(crate) enum Reply {
    Done { index: usize, bytes: Vec<u8> },
    Failed { index: usize, error: FlowError },
}

enum TaskMsg {
    Run {
        index: usize,
        bytes: Vec<u8>,
        job: JobFn,
        reply: Sender<Reply>,
        cancel: Arc<AtomicBool>,
    },
    Shutdown,
}

enum ServiceMsg {
    Fetch {
        slot: u64,
        reply: Sender<Result<Vec<u8>, FlowError>>,
        requester: usize,
    },
    Shutdown,
}

/// A worker's view of the fabric, available to task bodies while they run.
pub(crate) struct Endpoint {
    id: usize,
    slots: Arc<Mutex<HashMap<u64, Vec<u8>>>>,
    fabric: Weak<Fabric>,
}

impl Endpoint {
    /// This worker's pid.
    pub(crate) fn id(&self) -> usize {
        self.id
    }

    /// Upgrades to the owning fabric. Succeeds whenever a task is running,
    /// because the run that dispatched it holds the fabric alive.
    pub(crate) fn fabric(&self) -> Option<Arc<Fabric>> {
        self.fabric.upgrade()
    }

    /// Publishes encoded bytes into this worker's slot table, returning the
    /// slot id. Slot ids are unique for the lifetime of the fabric.
    pub(crate) fn publish(&self, bytes: Vec<u8>) -> u64 {
        let fabric = self
            .fabric
            .upgrade()
            .expect("publishing requires a live fabric");
        let slot = fabric.next_slot.fetch_add(1, Ordering::Relaxed);
        self.slots.lock().unwrap().insert(slot, bytes);
        slot
    }

    /// Reads a slot from this worker's own table without any messaging.
    pub(crate) fn read_local(&self, slot: u64) -> Option<Vec<u8>> {
        self.slots.lock().unwrap().get(&slot).cloned()
    }
}

struct WorkerHandle {
    id: usize,
    task_tx: Sender<TaskMsg>,
    service_tx: Sender<ServiceMsg>,
    task_join: Option<JoinHandle<()>>,
    service_join: Option<JoinHandle<()>>,
}

/// The shared fabric state. See the module docs.
pub(crate) struct Fabric {
    capacity: usize,
    timeout: Duration,
    trace: Option<Arc<TraceLog>>,
    /// All workers ever spawned, indexed by `id - 1`.
    workers: Mutex<Vec<WorkerHandle>>,
    next_slot: AtomicU64,
    torn_down: AtomicBool,
}

impl Fabric {
    fn new(capacity: usize, timeout: Duration, trace: Option<Arc<TraceLog>>) -> Arc<Fabric> {
        Arc::new(Fabric {
            capacity,
            timeout,
            trace,
            workers: Mutex::new(Vec::new()),
            next_slot: AtomicU64::new(0),
            torn_down: AtomicBool::new(false),
        })
    }

    /// Grows the worker set to at least `n` workers, so ids `1..=n` are all
    /// dispatchable.
    pub(crate) fn ensure_workers(self: &Arc<Self>, n: usize) {
        let mut workers = self.workers.lock().unwrap();
        while workers.len() < n {
            let id = workers.len() + 1;
            workers.push(self.spawn_worker(id));
        }
    }

    /// Spawns `n` fresh workers and returns their ids. Used by loop stages,
    /// which pin one long-lived worker per element; the new ids continue
    /// after every worker spawned so far, so a loop never shares a worker
    /// with concurrent work.
    pub(crate) fn spawn_dedicated(self: &Arc<Self>, n: usize) -> Vec<usize> {
        let mut workers = self.workers.lock().unwrap();
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let id = workers.len() + 1;
            workers.push(self.spawn_worker(id));
            ids.push(id);
        }
        ids
    }

    fn spawn_worker(self: &Arc<Self>, id: usize) -> WorkerHandle {
        let (task_tx, task_rx) = bounded::<TaskMsg>(self.capacity);
        let (service_tx, service_rx) = bounded::<ServiceMsg>(self.capacity);
        let slots: Arc<Mutex<HashMap<u64, Vec<u8>>>> = Arc::new(Mutex::new(HashMap::new()));

        let endpoint = Endpoint {
            id,
            slots: Arc::clone(&slots),
            fabric: Arc::downgrade(self),
        };
        let trace_task = self.trace.clone();
        let task_join = std::thread::Builder::new()
            .name(format!("fabric-worker-{id}"))
            .spawn(move || task_loop(endpoint, task_rx, trace_task))
            .expect("spawning a fabric worker thread");

        let trace_svc = self.trace.clone();
        let service_join = std::thread::Builder::new()
            .name(format!("fabric-service-{id}"))
            .spawn(move || service_loop(id, slots, service_rx, trace_svc))
            .expect("spawning a fabric service thread");

        WorkerHandle {
            id,
            task_tx,
            service_tx,
            task_join: Some(task_join),
            service_join: Some(service_join),
        }
    }

    fn task_tx_of(&self, id: usize) -> Option<Sender<TaskMsg>> {
        let workers = self.workers.lock().unwrap();
        workers.get(id.checked_sub(1)?).map(|w| {
            debug_assert_eq!(w.id, id);
            w.task_tx.clone()
        })
    }

    fn service_tx_of(&self, id: usize) -> Option<Sender<ServiceMsg>> {
        let workers = self.workers.lock().unwrap();
        workers.get(id.checked_sub(1)?).map(|w| w.service_tx.clone())
    }

    /// Sends one task to worker `dst`, recording the `task.in` message.
    /// `src` is the dispatching pid (the master, for every dispatch path in
    /// this crate).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn dispatch(
        &self,
        src: usize,
        dst: usize,
        index: usize,
        bytes: Vec<u8>,
        job: JobFn,
        reply: Sender<Reply>,
        cancel: Arc<AtomicBool>,
    ) -> Result<(), FlowError> {
        let tx = self.task_tx_of(dst).ok_or(FlowError::ChannelClosed {
            context: "task dispatch to unknown worker",
        })?;
        if let Some(log) = &self.trace {
            log.message_sent(src, dst, bytes.len(), TAG_TASK_IN);
        }
        tx.send(TaskMsg::Run {
            index,
            bytes,
            job,
            reply,
            cancel,
        })
        .map_err(|_| FlowError::ChannelClosed {
            context: "task dispatch to stopped worker",
        })
    }

    /// Fetches the payload of slot `slot` from worker `owner` on behalf of
    /// `requester`, recording the request and (on the owner's side) the
    /// payload message. Blocks up to the fabric timeout.
    pub(crate) fn fetch(
        &self,
        requester: usize,
        owner: usize,
        slot: u64,
    ) -> Result<Vec<u8>, FlowError> {
        let tx = self
            .service_tx_of(owner)
            .ok_or(FlowError::UnknownSlot { owner, slot })?;
        if let Some(log) = &self.trace {
            // The request message carries the slot id and the requester id.
            log.message_sent(requester, owner, 16, TAG_FUT_REQ);
            log.process_state(requester, ProcState::Blocked);
        }
        let (reply_tx, reply_rx) = bounded(1);
        tx.send(ServiceMsg::Fetch {
            slot,
            reply: reply_tx,
            requester,
        })
        .map_err(|_| FlowError::ChannelClosed {
            context: "future fetch from stopped worker",
        })?;
        let result = match reply_rx.recv_timeout(self.timeout) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(FlowError::DeadlockTimeout {
                waited_ms: self.timeout.as_millis() as u64,
                context: "future fetch",
            }),
            Err(RecvTimeoutError::Disconnected) => Err(FlowError::ChannelClosed {
                context: "future fetch reply",
            }),
        };
        if let Some(log) = &self.trace {
            log.process_state(requester, ProcState::Running);
        }
        result
    }

    /// Joins every worker. Task threads first, so in-flight fetches still
    /// find live service threads; then service threads.
    pub(crate) fn shutdown(&self) {
        if self.torn_down.swap(true, Ordering::SeqCst) {
            return;
        }
        let mut workers = self.workers.lock().unwrap();
        for w in workers.iter() {
            let _ = w.task_tx.send(TaskMsg::Shutdown);
        }
        for w in workers.iter_mut() {
            if let Some(j) = w.task_join.take() {
                let _ = j.join();
            }
        }
        for w in workers.iter() {
            let _ = w.service_tx.send(ServiceMsg::Shutdown);
        }
        for w in workers.iter_mut() {
            if let Some(j) = w.service_join.take() {
                let _ = j.join();
            }
        }
    }
}

fn task_loop(endpoint: Endpoint, rx: Receiver<TaskMsg>, trace: Option<Arc<TraceLog>>) {
    let id = endpoint.id;
    while let Ok(msg) = rx.recv() {
        match msg {
            TaskMsg::Shutdown => break,
            TaskMsg::Run {
                index,
                bytes,
                job,
                reply,
                cancel,
            } => {
                if cancel.load(Ordering::Relaxed) {
                    // The dispatching stage already failed; its collector is
                    // gone, so there is nobody to reply to.
                    continue;
                }
                if let Some(log) = &trace {
                    log.process_state(id, ProcState::Runnable);
                    log.process_state(id, ProcState::Running);
                }
                let outcome = catch_unwind(AssertUnwindSafe(|| job(&endpoint, bytes)));
                let msg = match outcome {
                    Ok(Ok(out)) => {
                        if let Some(log) = &trace {
                            log.message_sent(id, MASTER, out.len(), TAG_TASK_OUT);
                        }
                        Reply::Done { index, bytes: out }
                    }
                    Ok(Err(error)) => {
                        if let Some(log) = &trace {
                            log.message_sent(id, MASTER, 0, TAG_TASK_OUT);
                        }
                        Reply::Failed { index, error }
                    }
                    Err(payload) => {
                        if let Some(log) = &trace {
                            log.message_sent(id, MASTER, 0, TAG_TASK_OUT);
                        }
                        Reply::Failed {
                            index,
                            error: FlowError::TaskPanicked {
                                index,
                                message: panic_message(&*payload),
                            },
                        }
                    }
                };
                // The collector may have bailed on an earlier failure; a
                // closed reply channel is not this worker's problem.
                let _ = reply.send(msg);
                if let Some(log) = &trace {
                    log.process_state(id, ProcState::Idle);
                }
            }
        }
    }
}

fn service_loop(
    id: usize,
    slots: Arc<Mutex<HashMap<u64, Vec<u8>>>>,
    rx: Receiver<ServiceMsg>,
    trace: Option<Arc<TraceLog>>,
) {
    while let Ok(msg) = rx.recv() {
        match msg {
            ServiceMsg::Shutdown => break,
            ServiceMsg::Fetch {
                slot,
                reply,
                requester,
            } => {
                let entry = slots.lock().unwrap().get(&slot).cloned();
                let response = match entry {
                    Some(bytes) => {
                        if let Some(log) = &trace {
                            log.message_sent(id, requester, bytes.len(), TAG_FUT_PAYLOAD);
                        }
                        Ok(bytes)
                    }
                    None => Err(FlowError::UnknownSlot { owner: id, slot }),
                };
                let _ = reply.send(response);
            }
        }
    }
}

/// Renders a panic payload for error reporting.
pub(crate) fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "non-string panic payload".to_string()
    }
}

/// Holder for the fabric of one `run`. Created empty by
/// [`Flow::run`](crate::flow::Flow::run); the first distributed stage
/// populates it; dropping the run's holder tears the fabric down. Holders
/// adopted by worker tasks share the fabric without owning it.
pub(crate) struct FabricSlot {
    cell: OnceLock<Arc<Fabric>>,
    owns: bool,
}

impl FabricSlot {
    /// An empty, owning holder: the fabric it ends up with is torn down on
    /// drop.
    pub(crate) fn new() -> Self {
        FabricSlot {
            cell: OnceLock::new(),
            owns: true,
        }
    }

    /// A non-owning holder wrapping an existing fabric, for evaluation
    /// inside worker tasks.
    pub(crate) fn adopted(fabric: Arc<Fabric>) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(fabric);
        FabricSlot { cell, owns: false }
    }

    /// The fabric, if one has been created.
    pub(crate) fn get(&self) -> Option<&Arc<Fabric>> {
        self.cell.get()
    }

    /// The fabric, creating it on first use with the given parameters.
    /// Later callers get the existing fabric regardless of their own
    /// parameters (one run, one fabric).
    pub(crate) fn get_or_create(
        &self,
        capacity: usize,
        timeout: Duration,
        trace: Option<Arc<TraceLog>>,
    ) -> Arc<Fabric> {
        Arc::clone(
            self.cell
                .get_or_init(|| Fabric::new(capacity, timeout, trace)),
        )
    }
}

impl Drop for FabricSlot {
    fn drop(&mut self) {
        if self.owns {
            if let Some(fabric) = self.cell.get() {
                fabric.shutdown();
            }
        }
    }
}
