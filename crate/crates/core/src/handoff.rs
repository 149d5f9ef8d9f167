//! Anchor-point connection setup and handoff signaling.
//!
//! A flow's signaling procedure is a fixed message sequence. Each message
//! travels one or more logical legs between roles; the caller supplies a
//! [`SignalTransport`] that resolves a leg to its latency or failure. The
//! procedure runs synchronously, accumulating latency, and reports either
//! completion time or when to retry.

use std::collections::HashMap;
use std::fmt;

use crate::net::NodeId;
use crate::sim::{quantize, SimTime};

pub const RETRY_INTERVAL: SimTime = 2.0;
pub const MAX_RETRIES: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HandoffRole {
    Mmn,
    Cmapn,
    Nmapn,
    Ibapn,
    HaFa,
    Cn,
}

impl fmt::Display for HandoffRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HandoffRole::Mmn => "MMN",
            HandoffRole::Cmapn => "CMAPN",
            HandoffRole::Nmapn => "NMAPN",
            HandoffRole::Ibapn => "IBAPN",
            HandoffRole::HaFa => "HA/FA",
            HandoffRole::Cn => "CN",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalKind {
    ReqConnSetup,
    CoordReq,
    ReplyConnSetup,
    FwdCoordReq,
    AcceptCoord,
    FwdInitSetup,
    AcceptFwdCoord,
    AcceptInitSetup,
    ReqJoin,
    Lcfm,
    Update,
    AckUpdate,
    NewConnSetup,
}

use HandoffRole as R;
use SignalKind as K;

impl SignalKind {
    /// The legal role chain for this message, sender first.
    pub fn route(self) -> &'static [HandoffRole] {
        match self {
            K::ReqConnSetup => &[R::Mmn, R::Cmapn],
            K::CoordReq => &[R::Cmapn, R::Ibapn],
            K::ReplyConnSetup => &[R::Cmapn, R::Mmn],
            K::FwdCoordReq => &[R::Ibapn, R::HaFa],
            K::AcceptCoord => &[R::HaFa, R::Ibapn, R::Cmapn],
            K::FwdInitSetup => &[R::HaFa, R::Cn],
            K::AcceptFwdCoord => &[R::HaFa, R::Ibapn],
            K::AcceptInitSetup => &[R::Cn, R::HaFa],
            K::ReqJoin => &[R::Mmn, R::Nmapn],
            K::Lcfm => &[R::Nmapn, R::Ibapn, R::HaFa, R::Cn],
            K::Update => &[R::Nmapn, R::Cmapn],
            K::AckUpdate => &[R::Cmapn, R::Nmapn],
            K::NewConnSetup => &[R::Cn, R::HaFa, R::Ibapn, R::Nmapn, R::Mmn],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            K::ReqConnSetup => "REQ_CONN_SETUP",
            K::CoordReq => "COORD_REQ",
            K::ReplyConnSetup => "REPLY_CONN_SETUP",
            K::FwdCoordReq => "FWD_COORD_REQ",
            K::AcceptCoord => "ACCEPT_COORD",
            K::FwdInitSetup => "FWD_INIT_SETUP",
            K::AcceptFwdCoord => "ACCEPT_FWD_COORD",
            K::AcceptInitSetup => "ACCEPT_INIT_SETUP",
            K::ReqJoin => "REQ_JOIN",
            K::Lcfm => "LCFM",
            K::Update => "UPDATE",
            K::AckUpdate => "ACK_UPDATE",
            K::NewConnSetup => "NEW_CONN_SETUP",
        }
    }

    pub fn is_legal(self, from: HandoffRole, to: HandoffRole) -> bool {
        let r = self.route();
        r.first() == Some(&from) && r.last() == Some(&to)
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

pub const SETUP_SEQUENCE: [SignalKind; 8] = [
    K::ReqConnSetup,
    K::CoordReq,
    K::ReplyConnSetup,
    K::FwdCoordReq,
    K::AcceptCoord,
    K::FwdInitSetup,
    K::AcceptFwdCoord,
    K::AcceptInitSetup,
];

pub const HANDOFF_SEQUENCE: [SignalKind; 5] = [K::ReqJoin, K::Lcfm, K::Update, K::AckUpdate, K::NewConnSetup];

#[derive(Debug, Clone, PartialEq)]
pub struct SignalMessage {
    pub kind: SignalKind,
    pub from: HandoffRole,
    pub to: HandoffRole,
    pub flow: usize,
    pub issued_at: SimTime,
    /// Reached its final recipient; false for attempts that were retried.
    pub delivered: bool,
}

pub const SIGNAL_TRACE_HEADER: &str = "time,kind,from,to,flow";

impl SignalMessage {
    pub fn trace_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.issued_at, self.kind, self.from, self.to, self.flow
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    SetupPending,
    Established,
    HandoffPending,
    ReEstablished,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Idle => "idle",
            Phase::SetupPending => "setup-pending",
            Phase::Established => "established",
            Phase::HandoffPending => "handoff-pending",
            Phase::ReEstablished => "re-established",
        })
    }
}

/// Result of attempting one logical leg.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LegOutcome {
    Delivered(SimTime),
    Lost,
    Unreachable,
}

/// Carries signaling between concrete nodes.
pub trait SignalTransport {
    fn leg(&mut self, from: NodeId, to: NodeId) -> LegOutcome;
}

/// Fixed nodes a flow's signaling refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Anchors {
    pub mmn: NodeId,
    pub ibapn: NodeId,
    pub hafa: NodeId,
    pub cn: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Progress {
    /// Nothing to do.
    Idle,
    /// Procedure finished; data may flow from this time.
    Done(SimTime),
    /// A leg failed; call again at this time.
    RetryAt(SimTime),
    /// Retries exhausted; the flow returns to idle.
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Procedure {
    Setup,
    Handoff,
}

#[derive(Debug, Clone)]
pub struct ConnectionPhase {
    pub flow: usize,
    anchors: Anchors,
    phase: Phase,
    current_mapn: Option<NodeId>,
    new_mapn: Option<NodeId>,
    procedure: Option<Procedure>,
    step: usize,
    retries: u32,
    usable_from: SimTime,
    pub trace: Vec<SignalMessage>,
    /// Individual leg transmissions, for the signaling traffic class.
    pub legs_sent: u64,
    pub handoffs_completed: u64,
    pub aborts: u64,
    /// Whether to keep `trace`; counters are kept either way.
    pub keep_trace: bool,
}

impl ConnectionPhase {
    pub fn new(flow: usize, anchors: Anchors) -> Self {
        Self {
            flow,
            anchors,
            phase: Phase::Idle,
            current_mapn: None,
            new_mapn: None,
            procedure: None,
            step: 0,
            retries: 0,
            usable_from: 0.0,
            trace: Vec::new(),
            legs_sent: 0,
            handoffs_completed: 0,
            aborts: 0,
            keep_trace: true,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn current_mapn(&self) -> Option<NodeId> {
        self.current_mapn
    }

    pub fn anchors(&self) -> &Anchors {
        &self.anchors
    }

    /// Whether DATA may be injected at `now`.
    pub fn data_allowed(&self, now: SimTime) -> bool {
        matches!(self.phase, Phase::Established | Phase::ReEstablished) && quantize(now) >= quantize(self.usable_from)
    }

    pub fn usable_from(&self) -> SimTime {
        self.usable_from
    }

    pub fn in_progress(&self) -> bool {
        self.procedure.is_some()
    }

    /// Starts connection setup through `cmapn`. No-op unless idle.
    pub fn initial_setup(&mut self, cmapn: NodeId, now: SimTime, net: &mut impl SignalTransport) -> Progress {
        if self.phase != Phase::Idle {
            return Progress::Idle;
        }
        self.phase = Phase::SetupPending;
        self.current_mapn = Some(cmapn);
        self.begin(Procedure::Setup);
        self.resume(now, net)
    }

    /// Starts a handoff to `nmapn`. No-op when `nmapn` is already current or
    /// the flow is not connected. During setup the target is switched and
    /// setup restarts.
    pub fn handoff(&mut self, nmapn: NodeId, now: SimTime, net: &mut impl SignalTransport) -> Progress {
        match self.phase {
            Phase::Idle => Progress::Idle,
            Phase::SetupPending => {
                if self.current_mapn == Some(nmapn) {
                    return Progress::Idle;
                }
                self.current_mapn = Some(nmapn);
                self.begin(Procedure::Setup);
                self.resume(now, net)
            }
            Phase::HandoffPending => {
                if self.new_mapn == Some(nmapn) {
                    return Progress::Idle;
                }
                if self.current_mapn == Some(nmapn) {
                    // Moved back before the handoff finished.
                    self.new_mapn = None;
                    self.procedure = None;
                    self.phase = Phase::ReEstablished;
                    self.usable_from = now;
                    return Progress::Done(now);
                }
                self.new_mapn = Some(nmapn);
                self.begin(Procedure::Handoff);
                self.resume(now, net)
            }
            Phase::Established | Phase::ReEstablished => {
                if self.current_mapn == Some(nmapn) {
                    return Progress::Idle;
                }
                self.phase = Phase::HandoffPending;
                self.new_mapn = Some(nmapn);
                self.begin(Procedure::Handoff);
                self.resume(now, net)
            }
        }
    }

    fn begin(&mut self, p: Procedure) {
        self.procedure = Some(p);
        self.step = 0;
        self.retries = 0;
    }

    fn node_of(&self, role: HandoffRole) -> Option<NodeId> {
        match role {
            R::Mmn => Some(self.anchors.mmn),
            R::Cmapn => self.current_mapn,
            R::Nmapn => self.new_mapn,
            R::Ibapn => Some(self.anchors.ibapn),
            R::HaFa => Some(self.anchors.hafa),
            R::Cn => Some(self.anchors.cn),
        }
    }

    /// Continues the active procedure from its pending message, typically
    /// when a retry timer fires.
    pub fn resume(&mut self, now: SimTime, net: &mut impl SignalTransport) -> Progress {
        let Some(proc_) = self.procedure else {
            return Progress::Idle;
        };
        let seq: &[SignalKind] = match proc_ {
            Procedure::Setup => &SETUP_SEQUENCE,
            Procedure::Handoff => &HANDOFF_SEQUENCE,
        };
        let mut t = now;
        while self.step < seq.len() {
            let kind = seq[self.step];
            let route = kind.route();
            if self.keep_trace {
                self.trace.push(SignalMessage {
                    kind,
                    from: route[0],
                    to: route[route.len() - 1],
                    flow: self.flow,
                    issued_at: t,
                    delivered: false,
                });
            }
            let mut ok = true;
            for w in route.windows(2) {
                let (Some(a), Some(b)) = (self.node_of(w[0]), self.node_of(w[1])) else {
                    ok = false;
                    break;
                };
                self.legs_sent += 1;
                match net.leg(a, b) {
                    LegOutcome::Delivered(dt) => t = quantize(t + dt),
                    LegOutcome::Lost | LegOutcome::Unreachable => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                self.retries += 1;
                if self.retries > MAX_RETRIES {
                    self.abort();
                    return Progress::Aborted;
                }
                return Progress::RetryAt(now + RETRY_INTERVAL);
            }
            if self.keep_trace {
                if let Some(m) = self.trace.last_mut() {
                    m.delivered = true;
                }
            }
            self.step += 1;
        }
        self.procedure = None;
        self.usable_from = t;
        match proc_ {
            Procedure::Setup => self.phase = Phase::Established,
            Procedure::Handoff => {
                self.current_mapn = self.new_mapn.take();
                self.phase = Phase::ReEstablished;
                self.handoffs_completed += 1;
            }
        }
        Progress::Done(t)
    }

    fn abort(&mut self) {
        self.procedure = None;
        self.phase = Phase::Idle;
        self.current_mapn = None;
        self.new_mapn = None;
        self.aborts += 1;
    }
}

/// Nearest MAPN by hop count, ties to the lowest id. `hops` maps reachable
/// nodes to their distance from the mobile node.
pub fn mapn_attachment(hops: &HashMap<NodeId, u32>, mapns: &[NodeId]) -> Option<NodeId> {
    mapns
        .iter()
        .filter_map(|m| hops.get(m).map(|h| (*h, *m)))
        .min()
        .map(|(_, m)| m)
}
