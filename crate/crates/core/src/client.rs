//! Connecting side of the node protocol.
//!
//! Requests are synchronous and correlated by request id. A background reader
//! thread routes responses back to the caller and queues `Notify` frames in
//! arrival order; the queue is only ever drained by the session owner.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::io::Write;
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::debug;
use thiserror::Error;

use crate::address_space::{
    MarkerKind, NodeClass, NodeDescriptor, NodeId, ReferenceType, RlMarker, Value, OBJECTS_FOLDER,
};
use crate::wire::{self, FrameReader, Message, PROTOCOL_VERSION};

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("server error {code}: {text}")]
    Server { code: u16, text: String },
    #[error("no response within {0:?}")]
    Timeout(Duration),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Notification {
    pub subscription_id: u32,
    pub seq: u64,
    pub node: NodeId,
    pub value: Value,
}

#[derive(Default)]
struct QueueState {
    items: VecDeque<Notification>,
    closed: Option<String>,
}

#[derive(Default)]
struct NotificationQueue {
    state: Mutex<QueueState>,
    ready: Condvar,
}

impl NotificationQueue {
    fn push(&self, n: Notification) {
        self.state
            .lock()
            .expect("queue poisoned")
            .items
            .push_back(n);
        self.ready.notify_all();
    }

    fn close(&self, reason: String) {
        self.state
            .lock()
            .expect("queue poisoned")
            .closed
            .get_or_insert(reason);
        self.ready.notify_all();
    }

    fn pop(&self, timeout: Duration) -> Result<Option<Notification>, ClientError> {
        let deadline = Instant::now() + timeout;
        let mut state = self.state.lock().expect("queue poisoned");
        loop {
            if let Some(n) = state.items.pop_front() {
                return Ok(Some(n));
            }
            if let Some(reason) = &state.closed {
                return Err(ClientError::Transport(reason.clone()));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            state = self
                .ready
                .wait_timeout(state, deadline - now)
                .expect("queue poisoned")
                .0;
        }
    }
}

/// One node of a browsed address space.
#[derive(Debug, Clone, PartialEq)]
pub struct CatalogEntry {
    pub descriptor: NodeDescriptor,
    /// The node through which this one was first reached, with the reference type.
    pub parent: Option<(NodeId, ReferenceType)>,
    /// Marker resolved from the node's marker property.
    pub marker: Option<RlMarker>,
}

impl CatalogEntry {
    pub fn id(&self) -> &NodeId {
        &self.descriptor.id
    }

    pub fn browse_name(&self) -> &str {
        &self.descriptor.browse_name
    }
}

/// Client-side mirror of a server's address space, in node-id order.
#[derive(Debug, Clone, PartialEq)]
pub struct Catalog {
    pub server_name: String,
    pub entries: Vec<CatalogEntry>,
}

impl Catalog {
    pub fn get(&self, id: &NodeId) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| e.id() == id)
    }

    pub fn find_method(&self, browse_name: &str) -> Option<&CatalogEntry> {
        self.entries.iter().find(|e| {
            e.descriptor.node_class == NodeClass::Method && e.browse_name() == browse_name
        })
    }

    pub fn marked(&self) -> impl Iterator<Item = (&CatalogEntry, RlMarker)> {
        self.entries.iter().filter_map(|e| e.marker.map(|m| (e, m)))
    }
}

pub struct ClientSession {
    endpoint: String,
    server_name: String,
    stream: TcpStream,
    next_request_id: u32,
    responses: Receiver<(Message, u32)>,
    notifications: Arc<NotificationQueue>,
    reader: Option<JoinHandle<()>>,
    request_timeout: Duration,
}

impl std::fmt::Debug for ClientSession {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ClientSession")
            .field("endpoint", &self.endpoint)
            .field("server_name", &self.server_name)
            .finish()
    }
}

impl ClientSession {
    /// Connects and performs the Hello handshake.
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, ClientError> {
        let transport = |e: std::io::Error| ClientError::Transport(format!("{endpoint}: {e}"));
        let addrs: Vec<_> = endpoint.to_socket_addrs().map_err(transport)?.collect();
        let mut last = None;
        let mut stream = None;
        for addr in addrs {
            match TcpStream::connect_timeout(&addr, timeout) {
                Ok(s) => {
                    stream = Some(s);
                    break;
                }
                Err(e) => last = Some(e),
            }
        }
        let stream = match (stream, last) {
            (Some(s), _) => s,
            (None, Some(e)) => return Err(transport(e)),
            (None, None) => {
                return Err(ClientError::Transport(format!("{endpoint}: no addresses")))
            }
        };
        stream.set_nodelay(true).map_err(transport)?;
        let mut read_half = stream.try_clone().map_err(transport)?;

        let (tx, rx) = mpsc::channel();
        let notifications = Arc::new(NotificationQueue::default());
        let queue = notifications.clone();
        let reader = thread::Builder::new()
            .name("uarl-client-reader".into())
            .spawn(move || {
                let mut frames = FrameReader::new();
                let reason = loop {
                    match frames.read_from(&mut read_half) {
                        Ok(Some((
                            Message::Notify {
                                subscription_id,
                                seq,
                                node,
                                value,
                            },
                            _,
                        ))) => queue.push(Notification {
                            subscription_id,
                            seq,
                            node,
                            value,
                        }),
                        Ok(Some(frame)) => {
                            if tx.send(frame).is_err() {
                                break "session dropped".to_string();
                            }
                        }
                        Ok(None) => break "connection closed by server".to_string(),
                        Err(e) => break e.to_string(),
                    }
                };
                debug!("client reader exiting: {reason}");
                queue.close(reason);
            })
            .map_err(|e| ClientError::Transport(e.to_string()))?;

        let mut session = ClientSession {
            endpoint: endpoint.to_string(),
            server_name: String::new(),
            stream,
            next_request_id: 1,
            responses: rx,
            notifications,
            reader: Some(reader),
            request_timeout: timeout,
        };
        match session.request(Message::Hello {
            version: PROTOCOL_VERSION,
        })? {
            Message::HelloAck { server_name } => session.server_name = server_name,
            other => return Err(unexpected("HelloAck", &other)),
        }
        Ok(session)
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    pub fn server_name(&self) -> &str {
        &self.server_name
    }

    pub fn set_request_timeout(&mut self, timeout: Duration) {
        self.request_timeout = timeout;
    }

    fn request(&mut self, message: Message) -> Result<Message, ClientError> {
        let id = self.next_request_id;
        self.next_request_id = self.next_request_id.wrapping_add(1).max(1);
        let frame = wire::encode(&message, id).map_err(|e| ClientError::Protocol(e.to_string()))?;
        self.stream
            .write_all(&frame)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        match self.responses.recv_timeout(self.request_timeout) {
            Ok((Message::Error { code, text }, rid)) if rid == id => {
                Err(ClientError::Server { code, text })
            }
            Ok((response, rid)) if rid == id => Ok(response),
            Ok((_, rid)) => Err(ClientError::Protocol(format!(
                "response id {rid} does not match request {id}"
            ))),
            Err(RecvTimeoutError::Timeout) => Err(ClientError::Timeout(self.request_timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(ClientError::Transport("connection closed".to_string()))
            }
        }
    }

    pub fn browse(
        &mut self,
        node: &NodeId,
    ) -> Result<Vec<crate::address_space::BrowseEntry>, ClientError> {
        match self.request(Message::BrowseReq { node: node.clone() })? {
            Message::BrowseResp { entries } => Ok(entries),
            other => Err(unexpected("BrowseResp", &other)),
        }
    }

    pub fn read(&mut self, node: &NodeId) -> Result<Value, ClientError> {
        match self.request(Message::ReadReq { node: node.clone() })? {
            Message::ReadResp { value } => Ok(value),
            other => Err(unexpected("ReadResp", &other)),
        }
    }

    /// Returns the server's write status (0 = good).
    pub fn write(&mut self, node: &NodeId, value: Value) -> Result<u8, ClientError> {
        match self.request(Message::WriteReq {
            node: node.clone(),
            value,
        })? {
            Message::WriteResp { status } => Ok(status),
            other => Err(unexpected("WriteResp", &other)),
        }
    }

    pub fn call(
        &mut self,
        method: &NodeId,
        args: Vec<Value>,
    ) -> Result<(u8, Vec<Value>), ClientError> {
        match self.request(Message::CallReq {
            method: method.clone(),
            args,
        })? {
            Message::CallResp { status, results } => Ok((status, results)),
            other => Err(unexpected("CallResp", &other)),
        }
    }

    pub fn subscribe(&mut self, nodes: Vec<NodeId>) -> Result<u32, ClientError> {
        match self.request(Message::SubscribeReq { nodes })? {
            Message::SubscribeResp { subscription_id } => Ok(subscription_id),
            other => Err(unexpected("SubscribeResp", &other)),
        }
    }

    /// Oldest queued notification, waiting at most `timeout`.
    pub fn await_notification(
        &self,
        timeout: Duration,
    ) -> Result<Option<Notification>, ClientError> {
        self.notifications.pop(timeout)
    }

    /// Oldest queued notification without waiting.
    pub fn try_notification(&self) -> Result<Option<Notification>, ClientError> {
        self.notifications.pop(Duration::ZERO)
    }

    /// Breadth-first walk of all hierarchical references from `Objects`.
    /// Marker properties are read back component by component and must
    /// agree with the marker summary in the browse descriptor.
    pub fn browse_all(&mut self) -> Result<Catalog, ClientError> {
        let mut seen = HashSet::from([OBJECTS_FOLDER]);
        let mut entries: BTreeMap<NodeId, CatalogEntry> = BTreeMap::new();
        entries.insert(
            OBJECTS_FOLDER,
            CatalogEntry {
                descriptor: NodeDescriptor {
                    id: OBJECTS_FOLDER,
                    browse_name: "Objects".into(),
                    node_class: NodeClass::Object,
                    type_definition: None,
                    marker: None,
                },
                parent: None,
                marker: None,
            },
        );
        let mut queue = VecDeque::from([OBJECTS_FOLDER]);
        let mut properties: Vec<(NodeId, NodeId, MarkerKind)> = Vec::new();
        while let Some(id) = queue.pop_front() {
            for entry in self.browse(&id)? {
                if !entry.reference_type.is_hierarchical() {
                    continue;
                }
                if entry.reference_type == ReferenceType::HasProperty {
                    if let Some(kind) = entry
                        .target
                        .type_definition
                        .as_ref()
                        .and_then(MarkerKind::from_type_node_id)
                    {
                        properties.push((id.clone(), entry.target.id.clone(), kind));
                    }
                }
                if seen.insert(entry.target.id.clone()) {
                    queue.push_back(entry.target.id.clone());
                    entries.insert(
                        entry.target.id.clone(),
                        CatalogEntry {
                            descriptor: entry.target,
                            parent: Some((id.clone(), entry.reference_type)),
                            marker: None,
                        },
                    );
                }
            }
        }

        for (owner, prop, kind) in properties {
            let marker = self.read_marker_property(&prop, kind)?;
            let entry = entries.get_mut(&owner).expect("owner was browsed");
            if entry.marker.is_some() {
                return Err(ClientError::Protocol(format!(
                    "{owner} carries two markers"
                )));
            }
            if entry.descriptor.marker != Some(marker) {
                return Err(ClientError::Protocol(format!(
                    "marker property of {owner} disagrees with its descriptor"
                )));
            }
            entry.marker = Some(marker);
        }
        if let Some(e) = entries
            .values()
            .find(|e| e.descriptor.marker.is_some() && e.marker.is_none())
        {
            return Err(ClientError::Protocol(format!(
                "{} advertises a marker without a marker property",
                e.id()
            )));
        }

        Ok(Catalog {
            server_name: self.server_name.clone(),
            entries: entries.into_values().collect(),
        })
    }

    fn read_marker_property(
        &mut self,
        prop: &NodeId,
        kind: MarkerKind,
    ) -> Result<RlMarker, ClientError> {
        let mut min = None;
        let mut max = None;
        let mut step = None;
        for c in self.browse(prop)? {
            if c.reference_type != ReferenceType::HasComponent {
                continue;
            }
            let slot = match c.target.browse_name.as_str() {
                "min" => &mut min,
                "max" => &mut max,
                "step" => &mut step,
                _ => continue,
            };
            *slot = Some(self.read(&c.target.id)?);
        }
        match (min, max, step) {
            (Some(min), Some(max), Some(step)) => RlMarker::from_values(kind, &min, &max, &step)
                .map_err(|e| ClientError::Protocol(format!("{prop}: {e}"))),
            _ => Err(ClientError::Protocol(format!(
                "{prop}: marker property lacks min/max/step"
            ))),
        }
    }

    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(reader) = self.reader.take() {
            let _ = reader.join();
        }
    }
}

impl Drop for ClientSession {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn unexpected(expected: &str, got: &Message) -> ClientError {
    ClientError::Protocol(format!(
        "expected {expected}, got message type 0x{:02X}",
        got.msg_type()
    ))
}
