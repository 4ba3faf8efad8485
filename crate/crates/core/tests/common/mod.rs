#![allow(dead_code)]

use std::io::Write;
use std::net::TcpStream;
use std::time::Duration;

use uarl::address_space::{
    AddressSpace, Node, NodeId, ReferenceType, RlMarker, Value, OBJECTS_FOLDER,
};
use uarl::wire::{self, FrameReader, Message};

pub const TIMEOUT: Duration = Duration::from_secs(5);

/// A raw protocol connection, for asserting frame order byte by byte.
pub struct Raw {
    pub stream: TcpStream,
    reader: FrameReader,
    next_id: u32,
}

impl Raw {
    pub fn connect(addr: &str) -> Raw {
        let stream = TcpStream::connect(addr).unwrap();
        stream.set_read_timeout(Some(TIMEOUT)).unwrap();
        Raw {
            stream,
            reader: FrameReader::new(),
            next_id: 1,
        }
    }

    pub fn send(&mut self, m: &Message) -> u32 {
        let id = self.next_id;
        self.next_id += 1;
        self.stream
            .write_all(&wire::encode(m, id).unwrap())
            .unwrap();
        id
    }

    /// Next frame, or `None` once the server closed the connection.
    pub fn recv(&mut self) -> Option<(Message, u32)> {
        self.reader.read_from(&mut self.stream).unwrap()
    }

    pub fn handshake(addr: &str) -> Raw {
        let mut raw = Raw::connect(addr);
        raw.send(&Message::Hello { version: 1 });
        assert!(matches!(raw.recv(), Some((Message::HelloAck { .. }, 1))));
        raw
    }
}

pub fn nid(i: u32) -> NodeId {
    NodeId::numeric(1, i)
}

/// Objects / Machine(1) with Int32 variables Speed(2) and Level(3), Double
/// variable Temp(4), Method Stop(5). Speed carries an IntAction(0..3) marker.
pub fn machine_space() -> AddressSpace {
    let mut s = AddressSpace::new();
    s.add_child(
        &OBJECTS_FOLDER,
        ReferenceType::Organizes,
        Node::object(nid(1), "Machine"),
    )
    .unwrap();
    s.add_child(
        &nid(1),
        ReferenceType::HasComponent,
        Node::variable(nid(2), "Speed", Value::Int32(0)),
    )
    .unwrap();
    s.add_child(
        &nid(1),
        ReferenceType::HasComponent,
        Node::variable(nid(3), "Level", Value::Int32(0)),
    )
    .unwrap();
    s.add_child(
        &nid(1),
        ReferenceType::HasComponent,
        Node::variable(nid(4), "Temp", Value::Double(20.0)),
    )
    .unwrap();
    s.add_child(
        &nid(1),
        ReferenceType::HasComponent,
        Node::method(nid(5), "Stop"),
    )
    .unwrap();
    s.attach_marker(&nid(2), RlMarker::int_action(0, 3, 1).unwrap())
        .unwrap();
    s
}

/// A server whose only content is one `Int(0,1,1)` action node named
/// `name`, plus a `Reset` method and an observation node when `with_obs`.
pub fn switch_space(id: u32, name: &str, with_obs: bool) -> AddressSpace {
    let mut s = AddressSpace::new();
    s.add_child(
        &OBJECTS_FOLDER,
        ReferenceType::Organizes,
        Node::variable(nid(id), name, Value::Int32(0)),
    )
    .unwrap();
    s.attach_marker(&nid(id), RlMarker::int_action(0, 1, 1).unwrap())
        .unwrap();
    if with_obs {
        s.add_child(
            &OBJECTS_FOLDER,
            ReferenceType::Organizes,
            Node::variable(nid(id + 1), "Lamp", Value::Int32(0)),
        )
        .unwrap();
        s.attach_marker(&nid(id + 1), RlMarker::int_observation(0, 1, 1).unwrap())
            .unwrap();
    }
    s
}
