//! Nodes, packets and the abstract link layer.
//!
//! There is no MAC state machine. A radio transmission takes its
//! serialization time plus a contention penalty of one slot per concurrently
//! transmitting node inside the sender's interference range, then a fixed
//! processing delay at the receiver. Random loss is applied per hop.

use std::collections::VecDeque;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

use crate::mobility::{MotionState, Point};
use crate::sim::SimTime;

/// Bytes of TCP/IP header on every packet.
pub const HEADER_BYTES: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct NodeId(pub usize);

impl NodeId {
    pub fn idx(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct FlowId(pub usize);

impl fmt::Display for FlowId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NetSegment {
    Wired,
    Wireless,
    Manet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Plain,
    Mapn,
    Ibapn,
    HaFa,
    Cn,
    Mmn,
}

impl Role {
    fn bit(self) -> u8 {
        1 << self as u8
    }
}

/// Small set of node roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Roles(u8);

impl Roles {
    pub fn of(roles: &[Role]) -> Self {
        Self(roles.iter().fold(0, |acc, r| acc | r.bit()))
    }

    pub fn has(&self, role: Role) -> bool {
        self.0 & role.bit() != 0
    }

    pub fn insert(&mut self, role: Role) {
        self.0 |= role.bit();
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("node {0} is wired and has no radio")]
    NotRadio(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketKind {
    Data,
    Ack,
    Rreq,
    Rrep,
    Rerr,
    Signaling,
}

impl fmt::Display for PacketKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PacketKind::Data => "DATA",
            PacketKind::Ack => "ACK",
            PacketKind::Rreq => "RREQ",
            PacketKind::Rrep => "RREP",
            PacketKind::Rerr => "RERR",
            PacketKind::Signaling => "SIGNALING",
        })
    }
}

/// A packet in flight. Packets are source routed along `path`; `hop` is the
/// index of the node currently holding the packet.
#[derive(Debug, Clone)]
pub struct Packet {
    pub kind: PacketKind,
    pub flow: FlowId,
    pub seq: u64,
    pub length: u32,
    pub payload_len: u32,
    pub src: NodeId,
    pub dst: NodeId,
    pub sent_at: SimTime,
    pub hops: u32,
    pub sack_blocks: Vec<(u64, u64)>,
    pub path: Rc<[NodeId]>,
    pub hop: usize,
    pub route_id: Option<u64>,
    pub retransmission: bool,
}

impl Packet {
    pub fn data(flow: FlowId, seq: u64, payload_len: u32, path: Rc<[NodeId]>, sent_at: SimTime) -> Self {
        Self::new(PacketKind::Data, flow, seq, payload_len, path, sent_at)
    }

    pub fn control(kind: PacketKind, flow: FlowId, path: Rc<[NodeId]>, sent_at: SimTime) -> Self {
        Self::new(kind, flow, 0, 0, path, sent_at)
    }

    fn new(kind: PacketKind, flow: FlowId, seq: u64, payload_len: u32, path: Rc<[NodeId]>, sent_at: SimTime) -> Self {
        let src = *path.first().expect("nonempty path");
        let dst = *path.last().expect("nonempty path");
        Self {
            kind,
            flow,
            seq,
            length: payload_len + HEADER_BYTES,
            payload_len,
            src,
            dst,
            sent_at,
            hops: 0,
            sack_blocks: Vec::new(),
            path,
            hop: 0,
            route_id: None,
            retransmission: false,
        }
    }

    pub fn at(&self) -> NodeId {
        self.path[self.hop]
    }

    pub fn next_hop(&self) -> Option<NodeId> {
        self.path.get(self.hop + 1).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkModel {
    pub tx_range: f64,
    pub interference_range: f64,
    pub radio_bitrate: f64,
    pub wired_bitrate: f64,
    pub proc_delay: SimTime,
    pub p_loss: f64,
    pub contention_slot: SimTime,
}

impl Default for LinkModel {
    fn default() -> Self {
        Self {
            tx_range: 250.0,
            interference_range: 550.0,
            radio_bitrate: 2e6,
            wired_bitrate: 10e6,
            proc_delay: 1e-3,
            p_loss: 0.0,
            contention_slot: 0.5e-3,
        }
    }
}

impl LinkModel {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.tx_range > 0.0 && self.interference_range >= self.tx_range) {
            return Err("interference_range must be ≥ tx_range > 0".into());
        }
        if !(self.radio_bitrate > 0.0 && self.wired_bitrate > 0.0) {
            return Err("bitrates must be > 0".into());
        }
        if !(0.0..=1.0).contains(&self.p_loss) {
            return Err("p_loss must be in [0, 1]".into());
        }
        if !(self.proc_delay >= 0.0 && self.contention_slot >= 0.0) {
            return Err("delays must be ≥ 0".into());
        }
        Ok(())
    }

    pub fn points_in_range(&self, a: Point, b: Point) -> bool {
        a.distance_sq(&b) <= self.tx_range * self.tx_range
    }

    pub fn points_interfere(&self, a: Point, b: Point) -> bool {
        a.distance_sq(&b) <= self.interference_range * self.interference_range
    }

    /// Whether two radio nodes can hear each other at time `t`.
    pub fn in_range(&self, a: &Node, b: &Node, t: SimTime) -> Result<bool, NetError> {
        Ok(self.points_in_range(a.radio_position(t)?, b.radio_position(t)?))
    }

    pub fn interferes(&self, a: &Node, b: &Node, t: SimTime) -> Result<bool, NetError> {
        Ok(self.points_interfere(a.radio_position(t)?, b.radio_position(t)?))
    }

    /// Serialization time of `length` bytes.
    pub fn tx_time(&self, length: u32, wired: bool) -> SimTime {
        let rate = if wired { self.wired_bitrate } else { self.radio_bitrate };
        length as f64 * 8.0 / rate
    }

    /// Medium-access delay with `interferers` concurrent transmitters nearby.
    pub fn contention_penalty(&self, interferers: usize) -> SimTime {
        interferers as f64 * self.contention_slot
    }

    /// Time from transmission start until the next hop holds the packet.
    pub fn hop_delay(&self, length: u32, wired: bool, interferers: usize) -> SimTime {
        let penalty = if wired {
            0.0
        } else {
            self.contention_penalty(interferers)
        };
        self.tx_time(length, wired) + penalty + self.proc_delay
    }
}

/// Bounded FIFO with tail drop.
#[derive(Debug, Clone)]
pub struct DropTailQueue {
    capacity: usize,
    items: VecDeque<Packet>,
    drops: u64,
}

#[derive(Debug)]
pub enum Enqueue {
    Accepted,
    Dropped(Packet),
}

impl DropTailQueue {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: VecDeque::new(),
            drops: 0,
        }
    }

    pub fn enqueue(&mut self, pkt: Packet) -> Enqueue {
        if self.items.len() < self.capacity {
            self.items.push_back(pkt);
            Enqueue::Accepted
        } else {
            self.drops += 1;
            Enqueue::Dropped(pkt)
        }
    }

    pub fn dequeue(&mut self) -> Option<Packet> {
        self.items.pop_front()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn drops(&self) -> u64 {
        self.drops
    }

    pub fn iter(&self) -> impl Iterator<Item = &Packet> {
        self.items.iter()
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    pub id: NodeId,
    pub segment: NetSegment,
    pub roles: Roles,
    /// `None` for wired nodes.
    pub motion: Option<MotionState>,
    pub queue: DropTailQueue,
    /// End of the current transmission, if one is under way.
    pub busy_until: Option<SimTime>,
}

impl Node {
    pub fn new(id: NodeId, segment: NetSegment, roles: Roles, motion: Option<MotionState>, queue_cap: usize) -> Self {
        Self {
            id,
            segment,
            roles,
            motion,
            queue: DropTailQueue::new(queue_cap),
            busy_until: None,
        }
    }

    pub fn is_radio(&self) -> bool {
        self.motion.is_some()
    }

    pub fn radio_position(&self, t: SimTime) -> Result<Point, NetError> {
        self.motion
            .as_ref()
            .map(|m| m.position_at(t))
            .ok_or(NetError::NotRadio(self.id))
    }
}

/// One row of the optional packet trace: `time,event,pkt_kind,flow,seq,src,dst,hops`.
pub fn trace_row(time: SimTime, event: &str, pkt: &Packet) -> String {
    format!(
        "{time},{event},{},{},{},{},{},{}",
        pkt.kind, pkt.flow, pkt.seq, pkt.src, pkt.dst, pkt.hops
    )
}

pub const TRACE_HEADER: &str = "time,event,pkt_kind,flow,seq,src,dst,hops";

#[cfg(test)]
mod tests {
    use super::*;

    fn radio(id: usize, x: f64, y: f64) -> Node {
        Node::new(
            NodeId(id),
            NetSegment::Manet,
            Roles::of(&[Role::Plain]),
            Some(MotionState::stationary(Point::new(x, y))),
            50,
        )
    }

    fn pkt(len: u32) -> Packet {
        Packet::data(FlowId(0), 0, len, Rc::from(vec![NodeId(0), NodeId(1)]), 0.0)
    }

    #[test]
    fn range_boundaries() {
        let lm = LinkModel::default();
        let a = radio(0, 0.0, 0.0);
        assert!(lm.in_range(&a, &radio(1, 150.0, 200.0), 0.0).unwrap());
        assert!(lm.in_range(&a, &radio(1, 0.0, 0.0), 0.0).unwrap());
        let far = radio(1, 300.0, 400.0);
        assert!(!lm.in_range(&a, &far, 0.0).unwrap());
        assert!(lm.interferes(&a, &far, 0.0).unwrap());
        assert!(lm.interferes(&a, &radio(1, 550.0, 0.0), 0.0).unwrap());
        assert!(!lm.interferes(&a, &radio(1, 551.0, 0.0), 0.0).unwrap());
    }

    #[test]
    fn wired_nodes_have_no_range() {
        let lm = LinkModel::default();
        let w = Node::new(NodeId(9), NetSegment::Wired, Roles::of(&[Role::Cn]), None, 50);
        assert_eq!(
            lm.in_range(&w, &radio(1, 0.0, 0.0), 0.0),
            Err(NetError::NotRadio(NodeId(9)))
        );
    }

    #[test]
    fn hop_delay_arithmetic() {
        let lm = LinkModel::default();
        let p = pkt(1000);
        assert_eq!(p.length, 1040);
        let d = lm.hop_delay(p.length, false, 0);
        assert!((d - 0.00516).abs() < 1e-12, "{d}");
    }

    #[test]
    fn contention_is_linear() {
        let lm = LinkModel::default();
        assert_eq!(lm.contention_penalty(0), 0.0);
        assert!((lm.contention_penalty(3) - 1.5e-3).abs() < 1e-15);
        let slot = 0.25e-3;
        let lm = LinkModel {
            contention_slot: slot,
            ..lm
        };
        assert!((lm.contention_penalty(7) - 7.0 * slot).abs() < 1e-15);
    }

    #[test]
    fn drop_tail() {
        let mut q = DropTailQueue::new(50);
        for _ in 0..49 {
            assert!(matches!(q.enqueue(pkt(0)), Enqueue::Accepted));
        }
        assert!(matches!(q.enqueue(pkt(0)), Enqueue::Accepted));
        assert!(matches!(q.enqueue(pkt(0)), Enqueue::Dropped(_)));
        assert_eq!(q.drops(), 1);

        let mut zero = DropTailQueue::new(0);
        assert!(matches!(zero.enqueue(pkt(0)), Enqueue::Dropped(_)));
    }

    #[test]
    fn control_packets_are_header_only() {
        let c = Packet::control(PacketKind::Rreq, FlowId(1), Rc::from(vec![NodeId(2), NodeId(3)]), 1.0);
        assert_eq!(c.payload_len, 0);
        assert_eq!(c.length, HEADER_BYTES);
        assert_eq!((c.src, c.dst), (NodeId(2), NodeId(3)));
    }

    #[test]
    fn roles_set() {
        let mut r = Roles::of(&[Role::Mapn]);
        assert!(r.has(Role::Mapn) && !r.has(Role::Ibapn));
        r.insert(Role::Ibapn);
        assert!(r.has(Role::Ibapn));
    }
}
