//! Binary frame codec for the node protocol.
//!
//! Every frame is a 13-byte header followed by the payload:
//!
//! ```text
//! magic "UABL" (4) | msg_type u8 | request_id u32 LE | payload_len u32 LE | payload
//! ```
//!
//! All integers are little-endian. See `protocol.md` at the repository root
//! for the payload layout of every message type.

use std::io::Read;

use thiserror::Error;

use crate::address_space::{
    BrowseEntry, Identifier, MarkerKind, NodeClass, NodeDescriptor, NodeId, ReferenceType,
    RlMarker, Value,
};

pub const MAGIC: [u8; 4] = *b"UABL";
pub const HEADER_LEN: usize = 13;
pub const PROTOCOL_VERSION: u16 = 1;
/// Largest payload accepted from the network.
pub const MAX_PAYLOAD: usize = 16 * 1024 * 1024;
/// Lists carry a u16 count.
pub const MAX_LIST: usize = u16::MAX as usize;

pub mod msg_type {
    pub const HELLO: u8 = 0x01;
    pub const HELLO_ACK: u8 = 0x02;
    pub const BROWSE_REQ: u8 = 0x10;
    pub const BROWSE_RESP: u8 = 0x11;
    pub const READ_REQ: u8 = 0x12;
    pub const READ_RESP: u8 = 0x13;
    pub const WRITE_REQ: u8 = 0x14;
    pub const WRITE_RESP: u8 = 0x15;
    pub const CALL_REQ: u8 = 0x16;
    pub const CALL_RESP: u8 = 0x17;
    pub const SUBSCRIBE_REQ: u8 = 0x18;
    pub const SUBSCRIBE_RESP: u8 = 0x19;
    pub const NOTIFY: u8 = 0x20;
    pub const ERROR: u8 = 0x7F;
}

/// Codes carried by [`Message::Error`].
pub mod error_code {
    pub const BAD_VERSION: u16 = 1;
    pub const NO_SUCH_NODE: u16 = 2;
    pub const NOT_READABLE: u16 = 3;
    pub const HANDSHAKE_REQUIRED: u16 = 4;
    pub const UNEXPECTED_MESSAGE: u16 = 5;
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Hello {
        version: u16,
    },
    HelloAck {
        server_name: String,
    },
    BrowseReq {
        node: NodeId,
    },
    BrowseResp {
        entries: Vec<BrowseEntry>,
    },
    ReadReq {
        node: NodeId,
    },
    ReadResp {
        value: Value,
    },
    WriteReq {
        node: NodeId,
        value: Value,
    },
    WriteResp {
        status: u8,
    },
    CallReq {
        method: NodeId,
        args: Vec<Value>,
    },
    CallResp {
        status: u8,
        results: Vec<Value>,
    },
    SubscribeReq {
        nodes: Vec<NodeId>,
    },
    SubscribeResp {
        subscription_id: u32,
    },
    Notify {
        subscription_id: u32,
        seq: u64,
        node: NodeId,
        value: Value,
    },
    Error {
        code: u16,
        text: String,
    },
}

impl Message {
    pub fn msg_type(&self) -> u8 {
        use msg_type::*;
        match self {
            Message::Hello { .. } => HELLO,
            Message::HelloAck { .. } => HELLO_ACK,
            Message::BrowseReq { .. } => BROWSE_REQ,
            Message::BrowseResp { .. } => BROWSE_RESP,
            Message::ReadReq { .. } => READ_REQ,
            Message::ReadResp { .. } => READ_RESP,
            Message::WriteReq { .. } => WRITE_REQ,
            Message::WriteResp { .. } => WRITE_RESP,
            Message::CallReq { .. } => CALL_REQ,
            Message::CallResp { .. } => CALL_RESP,
            Message::SubscribeReq { .. } => SUBSCRIBE_REQ,
            Message::SubscribeResp { .. } => SUBSCRIBE_RESP,
            Message::Notify { .. } => NOTIFY,
            Message::Error { .. } => ERROR,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{what} exceeds the protocol limit ({len} > {limit})")]
    Oversize {
        what: &'static str,
        len: usize,
        limit: usize,
    },
    #[error("value cannot be encoded: {0}")]
    InvalidValue(&'static str),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DecodeError {
    #[error("bad magic")]
    BadMagic,
    #[error("unknown message type 0x{0:02X}")]
    UnknownType(u8),
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} trailing bytes after message")]
    TrailingBytes(usize),
    #[error("invalid UTF-8 in text field")]
    BadUtf8,
    #[error("payload length {0} exceeds limit")]
    Oversize(usize),
    #[error("malformed payload: {0}")]
    Malformed(&'static str),
    #[error("stream poisoned by an earlier framing error")]
    Poisoned,
}

struct Encoder {
    buf: Vec<u8>,
}

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    fn text(&mut self, s: &str) -> Result<(), EncodeError> {
        if s.len() > MAX_PAYLOAD {
            return Err(EncodeError::Oversize {
                what: "text",
                len: s.len(),
                limit: MAX_PAYLOAD,
            });
        }
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
        Ok(())
    }

    fn list_len(&mut self, len: usize) -> Result<(), EncodeError> {
        if len > MAX_LIST {
            return Err(EncodeError::Oversize {
                what: "list",
                len,
                limit: MAX_LIST,
            });
        }
        self.u16(len as u16);
        Ok(())
    }

    fn node_id(&mut self, id: &NodeId) -> Result<(), EncodeError> {
        self.u16(id.namespace);
        match &id.identifier {
            Identifier::Numeric(n) => {
                self.u8(0);
                self.u32(*n);
            }
            Identifier::Text(s) => {
                if s.is_empty() {
                    return Err(EncodeError::InvalidValue("empty text node id"));
                }
                self.u8(1);
                self.text(s)?;
            }
        }
        Ok(())
    }

    fn value(&mut self, v: &Value) -> Result<(), EncodeError> {
        match v {
            Value::Bool(b) => {
                self.u8(0);
                self.u8(u8::from(*b));
            }
            Value::Int32(i) => {
                self.u8(1);
                self.buf.extend_from_slice(&i.to_le_bytes());
            }
            Value::Double(d) => {
                if !d.is_finite() {
                    return Err(EncodeError::InvalidValue("non-finite double"));
                }
                self.u8(2);
                self.buf.extend_from_slice(&d.to_le_bytes());
            }
            Value::Text(s) => {
                self.u8(3);
                self.text(s)?;
            }
        }
        Ok(())
    }

    fn values(&mut self, vs: &[Value]) -> Result<(), EncodeError> {
        self.list_len(vs.len())?;
        vs.iter().try_for_each(|v| self.value(v))
    }

    fn browse_entry(&mut self, e: &BrowseEntry) -> Result<(), EncodeError> {
        self.u8(reference_type_code(e.reference_type));
        let d = &e.target;
        self.node_id(&d.id)?;
        self.text(&d.browse_name)?;
        self.u8(node_class_code(d.node_class));
        match &d.type_definition {
            Some(t) => {
                self.u8(1);
                self.node_id(t)?;
            }
            None => self.u8(0),
        }
        match &d.marker {
            Some(m) => {
                self.u8(1);
                self.u8(marker_kind_code(m.kind()));
                let (min, max, step) = m.bounds();
                self.value(&min)?;
                self.value(&max)?;
                self.value(&step)?;
            }
            None => self.u8(0),
        }
        Ok(())
    }
}

fn reference_type_code(r: ReferenceType) -> u8 {
    match r {
        ReferenceType::Organizes => 0,
        ReferenceType::HasComponent => 1,
        ReferenceType::HasProperty => 2,
        ReferenceType::HasTypeDefinition => 3,
    }
}

fn node_class_code(c: NodeClass) -> u8 {
    match c {
        NodeClass::Object => 0,
        NodeClass::Variable => 1,
        NodeClass::Method => 2,
        NodeClass::ObjectType => 3,
        NodeClass::Property => 4,
    }
}

fn marker_kind_code(k: MarkerKind) -> u8 {
    match k {
        MarkerKind::IntAction => 0,
        MarkerKind::DoubleAction => 1,
        MarkerKind::IntObservation => 2,
        MarkerKind::DoubleObservation => 3,
    }
}

/// Encodes `m` as one frame tagged with `request_id`.
pub fn encode(m: &Message, request_id: u32) -> Result<Vec<u8>, EncodeError> {
    let mut e = Encoder { buf: Vec::new() };
    match m {
        Message::Hello { version } => e.u16(*version),
        Message::HelloAck { server_name } => e.text(server_name)?,
        Message::BrowseReq { node } | Message::ReadReq { node } => e.node_id(node)?,
        Message::BrowseResp { entries } => {
            e.list_len(entries.len())?;
            for entry in entries {
                e.browse_entry(entry)?;
            }
        }
        Message::ReadResp { value } => e.value(value)?,
        Message::WriteReq { node, value } => {
            e.node_id(node)?;
            e.value(value)?;
        }
        Message::WriteResp { status } => e.u8(*status),
        Message::CallReq { method, args } => {
            e.node_id(method)?;
            e.values(args)?;
        }
        Message::CallResp { status, results } => {
            e.u8(*status);
            e.values(results)?;
        }
        Message::SubscribeReq { nodes } => {
            e.list_len(nodes.len())?;
            for n in nodes {
                e.node_id(n)?;
            }
        }
        Message::SubscribeResp { subscription_id } => e.u32(*subscription_id),
        Message::Notify {
            subscription_id,
            seq,
            node,
            value,
        } => {
            e.u32(*subscription_id);
            e.u64(*seq);
            e.node_id(node)?;
            e.value(value)?;
        }
        Message::Error { code, text } => {
            e.u16(*code);
            e.text(text)?;
        }
    }
    let payload = e.buf;
    if payload.len() > MAX_PAYLOAD {
        return Err(EncodeError::Oversize {
            what: "payload",
            len: payload.len(),
            limit: MAX_PAYLOAD,
        });
    }
    let mut frame = Vec::with_capacity(HEADER_LEN + payload.len());
    frame.extend_from_slice(&MAGIC);
    frame.push(m.msg_type());
    frame.extend_from_slice(&request_id.to_le_bytes());
    frame.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    frame.extend_from_slice(&payload);
    Ok(frame)
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let available = self.buf.len() - self.pos;
        if n > available {
            return Err(DecodeError::Truncated {
                needed: n,
                available,
            });
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, DecodeError> {
        Ok(u16::from_le_bytes(self.array()?))
    }
    fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.array()?))
    }
    fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn text(&mut self) -> Result<String, DecodeError> {
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        std::str::from_utf8(bytes)
            .map(str::to_owned)
            .map_err(|_| DecodeError::BadUtf8)
    }

    fn flag(&mut self) -> Result<bool, DecodeError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(DecodeError::Malformed("flag byte must be 0 or 1")),
        }
    }

    fn list_len(&mut self) -> Result<usize, DecodeError> {
        Ok(self.u16()? as usize)
    }

    fn node_id(&mut self) -> Result<NodeId, DecodeError> {
        let namespace = self.u16()?;
        let identifier = match self.u8()? {
            0 => Identifier::Numeric(self.u32()?),
            1 => {
                let s = self.text()?;
                if s.is_empty() {
                    return Err(DecodeError::Malformed("empty text node id"));
                }
                Identifier::Text(s)
            }
            _ => return Err(DecodeError::Malformed("unknown node id tag")),
        };
        Ok(NodeId {
            namespace,
            identifier,
        })
    }

    fn value(&mut self) -> Result<Value, DecodeError> {
        match self.u8()? {
            0 => Ok(Value::Bool(self.flag()?)),
            1 => Ok(Value::Int32(i32::from_le_bytes(self.array()?))),
            2 => {
                let d = f64::from_le_bytes(self.array()?);
                if d.is_finite() {
                    Ok(Value::Double(d))
                } else {
                    Err(DecodeError::Malformed("non-finite double"))
                }
            }
            3 => Ok(Value::Text(self.text()?)),
            _ => Err(DecodeError::Malformed("unknown value tag")),
        }
    }

    fn values(&mut self) -> Result<Vec<Value>, DecodeError> {
        let n = self.list_len()?;
        (0..n).map(|_| self.value()).collect()
    }

    fn browse_entry(&mut self) -> Result<BrowseEntry, DecodeError> {
        let reference_type = match self.u8()? {
            0 => ReferenceType::Organizes,
            1 => ReferenceType::HasComponent,
            2 => ReferenceType::HasProperty,
            3 => ReferenceType::HasTypeDefinition,
            _ => return Err(DecodeError::Malformed("unknown reference type")),
        };
        let id = self.node_id()?;
        let browse_name = self.text()?;
        let node_class = match self.u8()? {
            0 => NodeClass::Object,
            1 => NodeClass::Variable,
            2 => NodeClass::Method,
            3 => NodeClass::ObjectType,
            4 => NodeClass::Property,
            _ => return Err(DecodeError::Malformed("unknown node class")),
        };
        let type_definition = if self.flag()? {
            Some(self.node_id()?)
        } else {
            None
        };
        let marker = if self.flag()? {
            let kind = match self.u8()? {
                0 => MarkerKind::IntAction,
                1 => MarkerKind::DoubleAction,
                2 => MarkerKind::IntObservation,
                3 => MarkerKind::DoubleObservation,
                _ => return Err(DecodeError::Malformed("unknown marker kind")),
            };
            let (min, max, step) = (self.value()?, self.value()?, self.value()?);
            Some(
                RlMarker::from_values(kind, &min, &max, &step)
                    .map_err(|_| DecodeError::Malformed("invalid marker"))?,
            )
        } else {
            None
        };
        Ok(BrowseEntry {
            reference_type,
            target: NodeDescriptor {
                id,
                browse_name,
                node_class,
                type_definition,
                marker,
            },
        })
    }
}

/// Validates the header prefix in `buf` and returns `(msg_type, request_id,
/// payload_len)` once all 13 header bytes are present.
fn parse_header(buf: &[u8]) -> Result<Option<(u8, u32, usize)>, DecodeError> {
    let magic_avail = buf.len().min(MAGIC.len());
    if buf[..magic_avail] != MAGIC[..magic_avail] {
        return Err(DecodeError::BadMagic);
    }
    if buf.len() < HEADER_LEN {
        return Ok(None);
    }
    let ty = buf[4];
    if !is_known_type(ty) {
        return Err(DecodeError::UnknownType(ty));
    }
    let request_id = u32::from_le_bytes(buf[5..9].try_into().expect("4 bytes"));
    let payload_len = u32::from_le_bytes(buf[9..13].try_into().expect("4 bytes")) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(DecodeError::Oversize(payload_len));
    }
    Ok(Some((ty, request_id, payload_len)))
}

fn is_known_type(ty: u8) -> bool {
    use msg_type::*;
    matches!(
        ty,
        HELLO
            | HELLO_ACK
            | BROWSE_REQ
            | BROWSE_RESP
            | READ_REQ
            | READ_RESP
            | WRITE_REQ
            | WRITE_RESP
            | CALL_REQ
            | CALL_RESP
            | SUBSCRIBE_REQ
            | SUBSCRIBE_RESP
            | NOTIFY
            | ERROR
    )
}

fn decode_payload(ty: u8, payload: &[u8]) -> Result<Message, DecodeError> {
    use msg_type::*;
    let mut d = Decoder {
        buf: payload,
        pos: 0,
    };
    let m = match ty {
        HELLO => Message::Hello { version: d.u16()? },
        HELLO_ACK => Message::HelloAck {
            server_name: d.text()?,
        },
        BROWSE_REQ => Message::BrowseReq { node: d.node_id()? },
        BROWSE_RESP => {
            let n = d.list_len()?;
            let entries = (0..n).map(|_| d.browse_entry()).collect::<Result<_, _>>()?;
            Message::BrowseResp { entries }
        }
        READ_REQ => Message::ReadReq { node: d.node_id()? },
        READ_RESP => Message::ReadResp { value: d.value()? },
        WRITE_REQ => Message::WriteReq {
            node: d.node_id()?,
            value: d.value()?,
        },
        WRITE_RESP => Message::WriteResp { status: d.u8()? },
        CALL_REQ => Message::CallReq {
            method: d.node_id()?,
            args: d.values()?,
        },
        CALL_RESP => Message::CallResp {
            status: d.u8()?,
            results: d.values()?,
        },
        SUBSCRIBE_REQ => {
            let n = d.list_len()?;
            let nodes = (0..n).map(|_| d.node_id()).collect::<Result<_, _>>()?;
            Message::SubscribeReq { nodes }
        }
        SUBSCRIBE_RESP => Message::SubscribeResp {
            subscription_id: d.u32()?,
        },
        NOTIFY => Message::Notify {
            subscription_id: d.u32()?,
            seq: d.u64()?,
            node: d.node_id()?,
            value: d.value()?,
        },
        ERROR => Message::Error {
            code: d.u16()?,
            text: d.text()?,
        },
        other => return Err(DecodeError::UnknownType(other)),
    };
    if d.pos != payload.len() {
        return Err(DecodeError::TrailingBytes(payload.len() - d.pos));
    }
    Ok(m)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode(bytes: &[u8]) -> Result<(Message, u32), DecodeError> {
    let (ty, request_id, payload_len) = parse_header(bytes)?.ok_or(DecodeError::Truncated {
        needed: HEADER_LEN,
        available: bytes.len(),
    })?;
    let available = bytes.len() - HEADER_LEN;
    if available < payload_len {
        return Err(DecodeError::Truncated {
            needed: payload_len,
            available,
        });
    }
    if available > payload_len {
        return Err(DecodeError::TrailingBytes(available - payload_len));
    }
    Ok((decode_payload(ty, &bytes[HEADER_LEN..])?, request_id))
}

/// Incremental deframer. Accepts arbitrary chunk boundaries; after the
/// first framing error every further call returns [`DecodeError::Poisoned`].
#[derive(Debug, Default)]
pub struct FrameReader {
    buf: Vec<u8>,
    poisoned: bool,
}

impl FrameReader {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, chunk: &[u8]) {
        self.buf.extend_from_slice(chunk);
    }

    pub fn is_poisoned(&self) -> bool {
        self.poisoned
    }

    /// Bytes buffered but not yet yielded.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    /// The next complete frame, or `None` if more bytes are needed.
    pub fn next_frame(&mut self) -> Result<Option<(Message, u32)>, DecodeError> {
        if self.poisoned {
            return Err(DecodeError::Poisoned);
        }
        match self.try_next() {
            Err(e) => {
                self.poisoned = true;
                self.buf.clear();
                Err(e)
            }
            ok => ok,
        }
    }

    fn try_next(&mut self) -> Result<Option<(Message, u32)>, DecodeError> {
        if self.buf.is_empty() {
            return Ok(None);
        }
        let Some((ty, request_id, payload_len)) = parse_header(&self.buf)? else {
            return Ok(None);
        };
        let total = HEADER_LEN + payload_len;
        if self.buf.len() < total {
            return Ok(None);
        }
        let message = decode_payload(ty, &self.buf[HEADER_LEN..total])?;
        self.buf.drain(..total);
        Ok(Some((message, request_id)))
    }

    /// Feeds `chunk` and returns every frame it completes, in order.
    pub fn feed(&mut self, chunk: &[u8]) -> Result<Vec<(Message, u32)>, DecodeError> {
        self.push(chunk);
        let mut out = Vec::new();
        while let Some(frame) = self.next_frame()? {
            out.push(frame);
        }
        Ok(out)
    }

    /// Blocks on `r` until a whole frame is available. `Ok(None)` means a
    /// clean end of stream on a frame boundary.
    pub fn read_from<R: Read>(&mut self, r: &mut R) -> Result<Option<(Message, u32)>, ReadError> {
        let mut chunk = [0u8; 4096];
        loop {
            if let Some(frame) = self.next_frame()? {
                return Ok(Some(frame));
            }
            let n = match r.read(&mut chunk) {
                Ok(n) => n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(ReadError::Io(e)),
            };
            if n == 0 {
                return if self.buf.is_empty() {
                    Ok(None)
                } else {
                    Err(ReadError::UnexpectedEof)
                };
            }
            self.push(&chunk[..n]);
        }
    }
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("connection closed mid-frame")]
    UnexpectedEof,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hex(bytes: &[u8]) -> String {
        bytes
            .iter()
            .map(|b| format!("{b:02X}"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    // Expected bytes below were written out by hand from the header and
    // payload layout, not produced by the encoder.

    #[test]
    fn hello_vector() {
        let bytes = encode(&Message::Hello { version: 1 }, 1).unwrap();
        assert_eq!(hex(&bytes), "55 41 42 4C 01 01 00 00 00 02 00 00 00 01 00");
        assert_eq!(decode(&bytes).unwrap(), (Message::Hello { version: 1 }, 1));
    }

    #[test]
    fn write_req_vector() {
        let m = Message::WriteReq {
            node: NodeId::numeric(1, 42),
            value: Value::Int32(1),
        };
        let bytes = encode(&m, 7).unwrap();
        assert_eq!(
            hex(&bytes[HEADER_LEN..]),
            "01 00 00 2A 00 00 00 01 01 00 00 00"
        );
        assert_eq!(&bytes[9..13], &[12, 0, 0, 0]);
        assert_eq!(decode(&bytes).unwrap(), (m, 7));
    }

    #[test]
    fn empty_error_vector() {
        let m = Message::Error {
            code: 0,
            text: String::new(),
        };
        let bytes = encode(&m, 0).unwrap();
        assert_eq!(hex(&bytes[HEADER_LEN..]), "00 00 00 00 00 00");
        assert_eq!(decode(&bytes).unwrap(), (m, 0));
    }

    #[test]
    fn text_node_id_and_double_layout() {
        let m = Message::ReadReq {
            node: NodeId::text(2, "ab").unwrap(),
        };
        let bytes = encode(&m, 0).unwrap();
        assert_eq!(hex(&bytes[HEADER_LEN..]), "02 00 01 02 00 00 00 61 62");
        let m = Message::ReadResp {
            value: Value::Double(1.0),
        };
        let bytes = encode(&m, 0).unwrap();
        assert_eq!(hex(&bytes[HEADER_LEN..]), "02 00 00 00 00 00 00 F0 3F");
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode(&Message::Hello { version: 1 }, 1).unwrap();
        bytes[0] = 0x00;
        assert_eq!(decode(&bytes), Err(DecodeError::BadMagic));
        assert_eq!(decode(&[0x56]), Err(DecodeError::BadMagic));
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = Vec::from(MAGIC);
        bytes.push(msg_type::ERROR);
        bytes.extend_from_slice(&0u32.to_le_bytes());
        bytes.extend_from_slice(&10u32.to_le_bytes());
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert_eq!(
            decode(&bytes),
            Err(DecodeError::Truncated {
                needed: 10,
                available: 4
            })
        );
        assert!(matches!(
            decode(&bytes[..6]),
            Err(DecodeError::Truncated { .. })
        ));
    }

    #[test]
    fn unknown_type_trailing_and_utf8() {
        let mut bytes = encode(&Message::Hello { version: 1 }, 1).unwrap();
        bytes[4] = 0x33;
        assert_eq!(decode(&bytes), Err(DecodeError::UnknownType(0x33)));

        let mut bytes = encode(&Message::Hello { version: 1 }, 1).unwrap();
        bytes.push(0);
        assert_eq!(decode(&bytes), Err(DecodeError::TrailingBytes(1)));

        // payload_len claims 3 but Hello only consumes 2
        let mut bytes = encode(&Message::Hello { version: 1 }, 1).unwrap();
        bytes[9] = 3;
        bytes.push(0);
        assert_eq!(decode(&bytes), Err(DecodeError::TrailingBytes(1)));

        let mut bytes = encode(
            &Message::HelloAck {
                server_name: "ok".into(),
            },
            1,
        )
        .unwrap();
        let n = bytes.len();
        bytes[n - 1] = 0xFF;
        assert_eq!(decode(&bytes), Err(DecodeError::BadUtf8));
    }

    #[test]
    fn oversize_list_rejected() {
        let m = Message::SubscribeReq {
            nodes: vec![NodeId::numeric(0, 1); MAX_LIST + 1],
        };
        assert!(matches!(encode(&m, 0), Err(EncodeError::Oversize { .. })));
    }

    #[test]
    fn frame_reader_fragmentation() {
        let bytes = encode(&Message::Hello { version: 1 }, 9).unwrap();
        let mut r = FrameReader::new();
        let mut got = Vec::new();
        for b in &bytes {
            got.extend(r.feed(std::slice::from_ref(b)).unwrap());
        }
        assert_eq!(got, vec![(Message::Hello { version: 1 }, 9)]);
        assert_eq!(r.pending(), 0);
    }

    #[test]
    fn frame_reader_coalescing() {
        let mut bytes = encode(&Message::Hello { version: 1 }, 1).unwrap();
        bytes.extend(encode(&Message::WriteResp { status: 0 }, 2).unwrap());
        let got = FrameReader::new().feed(&bytes).unwrap();
        assert_eq!(
            got,
            vec![
                (Message::Hello { version: 1 }, 1),
                (Message::WriteResp { status: 0 }, 2)
            ]
        );
    }

    #[test]
    fn frame_reader_poisoning() {
        let mut bytes = encode(&Message::Hello { version: 1 }, 1).unwrap();
        bytes.extend_from_slice(b"garbage");
        let mut r = FrameReader::new();
        r.push(&bytes);
        assert_eq!(
            r.next_frame().unwrap(),
            Some((Message::Hello { version: 1 }, 1))
        );
        assert_eq!(r.next_frame(), Err(DecodeError::BadMagic));
        assert!(r.is_poisoned());
        r.push(&encode(&Message::Hello { version: 1 }, 1).unwrap());
        assert_eq!(r.next_frame(), Err(DecodeError::Poisoned));
    }

    #[test]
    fn read_from_stream() {
        let mut bytes = encode(&Message::WriteResp { status: 3 }, 4).unwrap();
        bytes.extend(encode(&Message::SubscribeResp { subscription_id: 2 }, 5).unwrap());
        let mut cursor = std::io::Cursor::new(bytes.clone());
        let mut r = FrameReader::new();
        assert_eq!(
            r.read_from(&mut cursor).unwrap(),
            Some((Message::WriteResp { status: 3 }, 4))
        );
        assert!(r.read_from(&mut cursor).unwrap().is_some());
        assert!(r.read_from(&mut cursor).unwrap().is_none());

        let mut cut = std::io::Cursor::new(bytes[..bytes.len() - 1].to_vec());
        let mut r = FrameReader::new();
        r.read_from(&mut cut).unwrap();
        assert!(matches!(
            r.read_from(&mut cut),
            Err(ReadError::UnexpectedEof)
        ));
    }
}
