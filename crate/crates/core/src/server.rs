//! TCP node server. Hosts one [`AddressSpace`], answers browse/read/write/call
//! requests and pushes a `Notify` frame to every subscription whose node set
//! contains a variable whose value changed.
//!
//! All request handling, method calls and direct mutations through
//! [`ServerHandle::with_space`] run under one lock, so every request observes
//! the address space either before or after any other request's full effect.
//! Notifications for a request are queued on the session writers before its
//! response, so a self-subscribed client always sees `Notify` frames ahead of
//! the matching `WriteResp`/`CallResp`.
//!
//! Value changes that happen while no subscription covers the node are
//! dropped; there is no replay buffer.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Sender};
use std::sync::{Arc, Mutex, MutexGuard};
use std::thread::{self, JoinHandle};

use log::{debug, info, warn};
use thiserror::Error;

use crate::address_space::{AddressSpace, AddressSpaceError, NodeClass, NodeId, Value};
use crate::wire::{self, error_code, FrameReader, Message, PROTOCOL_VERSION};

/// Status codes carried by `WriteResp` and `CallResp`.
pub mod status {
    pub const GOOD: u8 = 0;
    pub const NO_SUCH_NODE: u8 = 1;
    pub const TYPE_MISMATCH: u8 = 2;
    pub const VALUE_OUT_OF_RANGE: u8 = 3;
    pub const HANDLER_FAULT: u8 = 4;
    pub const NOT_WRITABLE: u8 = 5;

    /// Unknown method on `CallResp`.
    pub const UNKNOWN_METHOD: u8 = NO_SUCH_NODE;
}

pub type MethodFn =
    Box<dyn FnMut(&mut AddressSpace, &[Value]) -> Result<Vec<Value>, String> + Send>;

/// Invoked after every successful write, whether or not the value changed.
pub type WriteHook = Box<dyn FnMut(&mut AddressSpace, &NodeId, &Value) + Send>;

pub struct MethodHandler {
    pub method: NodeId,
    pub handler: MethodFn,
}

impl MethodHandler {
    pub fn new(
        method: NodeId,
        handler: impl FnMut(&mut AddressSpace, &[Value]) -> Result<Vec<Value>, String> + Send + 'static,
    ) -> Self {
        MethodHandler {
            method,
            handler: Box::new(handler),
        }
    }
}

pub struct ServerOptions {
    pub name: String,
    pub methods: Vec<MethodHandler>,
    pub write_hook: Option<WriteHook>,
}

impl Default for ServerOptions {
    fn default() -> Self {
        ServerOptions {
            name: "uarl node server".to_string(),
            methods: Vec::new(),
            write_hook: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {endpoint}: {source}")]
    BindFailure {
        endpoint: String,
        source: std::io::Error,
    },
    #[error("method {0} is not a Method node in the address space")]
    BadMethod(NodeId),
}

struct Subscription {
    session: u64,
    nodes: BTreeSet<NodeId>,
    next_seq: u64,
}

struct SessionSlot {
    tx: Sender<Vec<u8>>,
    stream: TcpStream,
}

struct Core {
    space: AddressSpace,
    methods: HashMap<NodeId, MethodFn>,
    write_hook: Option<WriteHook>,
    changes: Arc<Mutex<Vec<(NodeId, Value)>>>,
    sessions: HashMap<u64, SessionSlot>,
    subscriptions: BTreeMap<u32, Subscription>,
    next_subscription: u32,
}

impl Core {
    /// Fans pending value changes out to subscriptions, in change order.
    fn dispatch_changes(&mut self) {
        let changes = std::mem::take(&mut *self.changes.lock().expect("change log poisoned"));
        for (node, value) in changes {
            for (&id, sub) in self.subscriptions.iter_mut() {
                if !sub.nodes.contains(&node) {
                    continue;
                }
                let seq = sub.next_seq;
                sub.next_seq += 1;
                let frame = wire::encode(
                    &Message::Notify {
                        subscription_id: id,
                        seq,
                        node: node.clone(),
                        value: value.clone(),
                    },
                    0,
                )
                .expect("notify frames are always encodable");
                if let Some(slot) = self.sessions.get(&sub.session) {
                    let _ = slot.tx.send(frame);
                }
            }
        }
    }

    fn handle_write(&mut self, node: &NodeId, value: Value) -> u8 {
        match self.space.set_value(node, value.clone()) {
            Ok(_) => {
                if let Some(hook) = self.write_hook.as_mut() {
                    hook(&mut self.space, node, &value);
                }
                status::GOOD
            }
            Err(e) => write_status(&e),
        }
    }

    fn handle_call(&mut self, method: &NodeId, args: &[Value]) -> (u8, Vec<Value>) {
        let Some(handler) = self.methods.get_mut(method) else {
            return (status::UNKNOWN_METHOD, Vec::new());
        };
        match handler(&mut self.space, args) {
            Ok(results) => (status::GOOD, results),
            Err(fault) => (status::HANDLER_FAULT, vec![Value::Text(fault)]),
        }
    }

    fn handle_subscribe(&mut self, session: u64, nodes: Vec<NodeId>) -> Message {
        for n in &nodes {
            match self.space.get(n) {
                Some(node) if node.node_class == NodeClass::Variable => {}
                _ => {
                    return Message::Error {
                        code: error_code::NO_SUCH_NODE,
                        text: format!("cannot subscribe to {n}"),
                    }
                }
            }
        }
        self.next_subscription += 1;
        let id = self.next_subscription;
        self.subscriptions.insert(
            id,
            Subscription {
                session,
                nodes: nodes.into_iter().collect(),
                next_seq: 1,
            },
        );
        Message::SubscribeResp {
            subscription_id: id,
        }
    }

    fn handle(&mut self, session: u64, request: Message) -> Message {
        match request {
            Message::BrowseReq { node } => match self.space.browse(&node) {
                Ok(entries) => Message::BrowseResp { entries },
                Err(e) => Message::Error {
                    code: error_code::NO_SUCH_NODE,
                    text: e.to_string(),
                },
            },
            Message::ReadReq { node } => match self.space.value(&node) {
                Ok(value) => Message::ReadResp {
                    value: value.clone(),
                },
                Err(AddressSpaceError::NoSuchNode(_)) => Message::Error {
                    code: error_code::NO_SUCH_NODE,
                    text: format!("no such node {node}"),
                },
                Err(e) => Message::Error {
                    code: error_code::NOT_READABLE,
                    text: e.to_string(),
                },
            },
            Message::WriteReq { node, value } => Message::WriteResp {
                status: self.handle_write(&node, value),
            },
            Message::CallReq { method, args } => {
                let (status, results) = self.handle_call(&method, &args);
                Message::CallResp { status, results }
            }
            Message::SubscribeReq { nodes } => self.handle_subscribe(session, nodes),
            other => Message::Error {
                code: error_code::UNEXPECTED_MESSAGE,
                text: format!("unexpected message type 0x{:02X}", other.msg_type()),
            },
        }
    }

    fn drop_session(&mut self, session: u64) {
        self.sessions.remove(&session);
        self.subscriptions.retain(|_, s| s.session != session);
    }
}

fn write_status(e: &AddressSpaceError) -> u8 {
    match e {
        AddressSpaceError::NoSuchNode(_) => status::NO_SUCH_NODE,
        AddressSpaceError::ValueOutOfRange { .. } => status::VALUE_OUT_OF_RANGE,
        AddressSpaceError::ReadOnly(_) => status::NOT_WRITABLE,
        _ => status::TYPE_MISMATCH,
    }
}

struct Shared {
    name: String,
    core: Mutex<Core>,
    stopping: AtomicBool,
    next_session: AtomicU64,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Core> {
        self.core.lock().expect("server state poisoned")
    }
}

/// A running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
}

impl std::fmt::Debug for ServerHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServerHandle")
            .field("addr", &self.addr)
            .finish()
    }
}

pub fn serve(
    endpoint: &str,
    space: AddressSpace,
    methods: Vec<MethodHandler>,
) -> Result<ServerHandle, ServerError> {
    serve_with(
        endpoint,
        space,
        ServerOptions {
            methods,
            ..ServerOptions::default()
        },
    )
}

pub fn serve_with(
    endpoint: &str,
    mut space: AddressSpace,
    options: ServerOptions,
) -> Result<ServerHandle, ServerError> {
    let mut methods = HashMap::new();
    for m in options.methods {
        match space.get(&m.method) {
            Some(n) if n.node_class == NodeClass::Method => {}
            _ => return Err(ServerError::BadMethod(m.method)),
        }
        methods.insert(m.method, m.handler);
    }
    let bind_err = |source| ServerError::BindFailure {
        endpoint: endpoint.to_string(),
        source,
    };
    let addrs: Vec<SocketAddr> = endpoint.to_socket_addrs().map_err(bind_err)?.collect();
    let listener = TcpListener::bind(&addrs[..]).map_err(bind_err)?;
    let addr = listener.local_addr().map_err(bind_err)?;

    let changes = Arc::new(Mutex::new(Vec::new()));
    let sink = changes.clone();
    space.add_change_listener(Box::new(move |id, v| {
        sink.lock()
            .expect("change log poisoned")
            .push((id.clone(), v.clone()))
    }));

    let shared = Arc::new(Shared {
        name: options.name,
        core: Mutex::new(Core {
            space,
            methods,
            write_hook: options.write_hook,
            changes,
            sessions: HashMap::new(),
            subscriptions: BTreeMap::new(),
            next_subscription: 0,
        }),
        stopping: AtomicBool::new(false),
        next_session: AtomicU64::new(1),
    });
    info!("{} listening on {addr}", shared.name);
    let acceptor = {
        let shared = shared.clone();
        thread::Builder::new()
            .name("uarl-accept".into())
            .spawn(move || accept_loop(listener, shared))
            .expect("spawn acceptor")
    };
    Ok(ServerHandle {
        addr,
        shared,
        acceptor: Some(acceptor),
    })
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// `host:port` string of the bound listener.
    pub fn endpoint(&self) -> String {
        self.addr.to_string()
    }

    /// Runs `f` inside the server's serialization domain. Value changes made
    /// by `f` are pushed to subscribers before this returns.
    pub fn with_space<R>(&self, f: impl FnOnce(&mut AddressSpace) -> R) -> R {
        let mut core = self.shared.lock();
        let out = f(&mut core.space);
        core.dispatch_changes();
        out
    }

    pub fn session_count(&self) -> usize {
        self.shared.lock().sessions.len()
    }

    /// Stops accepting, flushes queued notifications and closes all sessions.
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        let Some(acceptor) = self.acceptor.take() else {
            return;
        };
        self.shared.stopping.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        let _ = acceptor.join();
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    let mut sessions: Vec<JoinHandle<()>> = Vec::new();
    for stream in listener.incoming() {
        if shared.stopping.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let shared = shared.clone();
        sessions.retain(|h| !h.is_finished());
        sessions.push(
            thread::Builder::new()
                .name("uarl-session".into())
                .spawn(move || run_session(stream, shared))
                .expect("spawn session"),
        );
    }
    {
        let core = shared.lock();
        for slot in core.sessions.values() {
            let _ = slot.stream.shutdown(Shutdown::Read);
        }
    }
    for h in sessions {
        let _ = h.join();
    }
    debug!("{} stopped", shared.name);
}

fn run_session(stream: TcpStream, shared: Arc<Shared>) {
    let id = shared.next_session.fetch_add(1, Ordering::SeqCst);
    let peer = stream
        .peer_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "?".into());
    let _ = stream.set_nodelay(true);
    let (Ok(mut reader), Ok(writer), Ok(control)) =
        (stream.try_clone(), stream.try_clone(), stream.try_clone())
    else {
        warn!("session {id}: cannot clone stream");
        return;
    };
    let (tx, rx) = mpsc::channel::<Vec<u8>>();
    let writer_thread = thread::spawn(move || {
        let mut writer = writer;
        for frame in rx {
            if writer.write_all(&frame).is_err() {
                break;
            }
        }
        let _ = writer.flush();
        let _ = writer.shutdown(Shutdown::Write);
    });

    {
        let mut core = shared.lock();
        if shared.stopping.load(Ordering::SeqCst) {
            drop(core);
            drop(tx);
            let _ = writer_thread.join();
            return;
        }
        core.sessions.insert(
            id,
            SessionSlot {
                tx: tx.clone(),
                stream: control,
            },
        );
    }
    debug!("session {id} opened from {peer}");

    let send = |msg: &Message, request_id: u32| match wire::encode(msg, request_id) {
        Ok(frame) => {
            let _ = tx.send(frame);
        }
        Err(e) => warn!("session {id}: cannot encode response: {e}"),
    };

    let mut frames = FrameReader::new();
    let mut handshaken = false;
    loop {
        let (request, request_id) = match frames.read_from(&mut reader) {
            Ok(Some(frame)) => frame,
            Ok(None) => break,
            Err(e) => {
                debug!("session {id}: {e}");
                break;
            }
        };
        if !handshaken {
            match request {
                Message::Hello { version } if version == PROTOCOL_VERSION => {
                    handshaken = true;
                    send(
                        &Message::HelloAck {
                            server_name: shared.name.clone(),
                        },
                        request_id,
                    );
                    continue;
                }
                Message::Hello { version } => {
                    send(
                        &Message::Error {
                            code: error_code::BAD_VERSION,
                            text: format!("unsupported protocol version {version}"),
                        },
                        request_id,
                    );
                }
                _ => {
                    send(
                        &Message::Error {
                            code: error_code::HANDSHAKE_REQUIRED,
                            text: "Hello expected".into(),
                        },
                        request_id,
                    );
                }
            }
            break;
        }
        let mut core = shared.lock();
        let response = core.handle(id, request);
        core.dispatch_changes();
        send(&response, request_id);
    }

    shared.lock().drop_session(id);
    drop(tx);
    let _ = writer_thread.join();
    debug!("session {id} closed");
}
