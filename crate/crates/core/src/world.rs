//! One simulation run: topology construction, the event loop, and the
//! accounting that feeds the run report.

use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

use thiserror::Error;

use crate::handoff::{mapn_attachment, Anchors, ConnectionPhase, LegOutcome, Phase, Progress, SignalTransport};
use crate::metrics::{summarize, FlowMetrics, RunReport};
use crate::mobility::{self, select_mobile, MotionState, Point};
use crate::net::{self, Enqueue, FlowId, LinkModel, NetSegment, Node, NodeId, Packet, PacketKind, Role, Roles};
use crate::routing::{
    adjacency, bfs_hops, discover_where, refresh_intrazone, zone_changes, Adjacency, ControlCounters, OverheadScope,
    RouteTable, ZoneTable,
};
use crate::scenario::Scenario;
use crate::sim::{self, Classify, EventKind, RandomSource, Scheduler, SimError, SimTime};
use crate::tcp::{self, Emission, TcpReceiver, TcpSender, Variant};

const STREAM_PLACEMENT: u64 = 1;
const STREAM_SELECTION: u64 = 2;
const STREAM_FLOWS: u64 = 3;
const STREAM_LOSS: u64 = 4;
const STREAM_NODE_BASE: u64 = 1 << 20;

/// Horizontal spacing of the infrastructure grid, and rows per column.
const GRID_STEP: f64 = 160.0;
const GRID_ROWS: usize = 5;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("conservation violated: {0}")]
    Conservation(String),
}

const DIGEST_SEED: u64 = 0xcbf2_9ce4_8422_2325;
const DIGEST_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Static layout of a scenario.
#[derive(Debug, Clone)]
pub struct Topology {
    pub nodes: Vec<Node>,
    /// MANET hosts (flow sources), ids `0..manet_nodes`.
    pub hosts: Vec<NodeId>,
    pub mapns: Vec<NodeId>,
    pub wireless: Vec<NodeId>,
    pub ibapn: NodeId,
    pub hafa: NodeId,
    pub routers: Vec<NodeId>,
    pub cn: NodeId,
    pub mobile: Vec<NodeId>,
    /// Fixed path from each MAPN (by index in `mapns`) to the CN.
    pub uplinks: Vec<Vec<NodeId>>,
    cables: Vec<(NodeId, NodeId)>,
    /// Adjacency over infrastructure radio links and cables.
    static_adj: Adjacency,
    /// Per-node mobility streams, positioned after the initial draws.
    motion_rngs: Vec<RandomSource>,
}

impl Topology {
    pub fn count_role(&self, role: Role) -> usize {
        self.nodes.iter().filter(|n| n.roles.has(role)).count()
    }

    pub fn is_cabled(&self, a: NodeId, b: NodeId) -> bool {
        self.cables
            .iter()
            .any(|&(x, y)| (x == a && y == b) || (x == b && y == a))
    }

    /// Nodes that take part in MANET routing: hosts and MAPNs.
    pub fn manet_members(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.hosts.iter().chain(self.mapns.iter()).copied()
    }

    fn mapn_index(&self, m: NodeId) -> usize {
        self.mapns.iter().position(|&x| x == m).expect("node is a MAPN")
    }
}

/// Builds the node set: MANET hosts uniform in the field, MAPNs on the
/// field's right edge, an infrastructure grid beyond it, then the IBAPN and
/// the wired chain HA/FA - routers - CN.
pub fn build_topology(sc: &Scenario, rng: &RandomSource) -> Result<Topology, RunError> {
    let mut place = rng.substream(STREAM_PLACEMENT);
    let mut select = rng.substream(STREAM_SELECTION);
    let mcfg = sc.mobility();
    let q = sc.queue_capacity;
    let mut nodes = Vec::new();
    let push = |nodes: &mut Vec<Node>, seg: NetSegment, roles: &[Role], motion: Option<MotionState>| {
        let id = NodeId(nodes.len());
        nodes.push(Node::new(id, seg, Roles::of(roles), motion, q));
        id
    };

    let mut positions = Vec::with_capacity(sc.manet_nodes);
    for _ in 0..sc.manet_nodes {
        let x = place
            .uniform(0.0, sc.field_width)
            .map_err(|e| RunError::Config(e.to_string()))?;
        let y = place
            .uniform(0.0, sc.field_height)
            .map_err(|e| RunError::Config(e.to_string()))?;
        positions.push(Point::new(x, y));
    }
    let host_ids: Vec<NodeId> = (0..sc.manet_nodes).map(NodeId).collect();
    let mobile = select_mobile(&host_ids, sc.mobility_ratio, &mut select);
    let mut hosts = Vec::new();
    let mut motion_rngs: Vec<RandomSource> = (0..sc.manet_nodes as u64)
        .map(|i| rng.substream(STREAM_NODE_BASE + i))
        .collect();
    for (i, p) in positions.into_iter().enumerate() {
        let motion = if mobile.contains(&NodeId(i)) {
            MotionState::mobile(p, 0.0, &mcfg, &mut motion_rngs[i])
        } else {
            MotionState::stationary(p)
        };
        hosts.push(push(&mut nodes, NetSegment::Manet, &[Role::Mmn], Some(motion)));
    }

    let w = sc.field_width;
    let h = sc.field_height;
    let mut mapns = Vec::new();
    for m in 0..sc.mapn_count {
        let y = h * (2 * m + 1) as f64 / (2 * sc.mapn_count) as f64;
        let motion = MotionState::stationary(Point::new(w, y));
        mapns.push(push(&mut nodes, NetSegment::Manet, &[Role::Mapn], Some(motion)));
    }
    let mut wireless = Vec::new();
    for i in 0..sc.wireless_nodes {
        let col = i / GRID_ROWS;
        let row = i % GRID_ROWS;
        let x = w + GRID_STEP * (col + 1) as f64;
        let y = h * (2 * row + 1) as f64 / (2 * GRID_ROWS) as f64;
        let motion = MotionState::stationary(Point::new(x, y));
        wireless.push(push(&mut nodes, NetSegment::Wireless, &[Role::Plain], Some(motion)));
    }
    let cols = sc.wireless_nodes.div_ceil(GRID_ROWS);
    let ib_pos = Point::new(w + GRID_STEP * (cols + 1) as f64, h / 2.0);
    let ibapn = push(
        &mut nodes,
        NetSegment::Wireless,
        &[Role::Ibapn],
        Some(MotionState::stationary(ib_pos)),
    );
    let hafa = push(&mut nodes, NetSegment::Wired, &[Role::HaFa], None);
    let routers: Vec<NodeId> = (1..sc.wired_hops)
        .map(|_| push(&mut nodes, NetSegment::Wired, &[Role::Plain], None))
        .collect();
    let cn = push(&mut nodes, NetSegment::Wired, &[Role::Cn], None);

    let mut chain = vec![ibapn, hafa];
    chain.extend(&routers);
    chain.push(cn);
    let cables: Vec<(NodeId, NodeId)> = chain.windows(2).map(|w| (w[0], w[1])).collect();

    let link = sc.link();
    let infra: Vec<NodeId> = mapns.iter().chain(wireless.iter()).copied().chain([ibapn]).collect();
    let pos = |n: NodeId| nodes[n.idx()].radio_position(0.0).expect("radio node");
    let mut static_adj = adjacency(nodes.len(), &infra, |a, b| {
        // MAPNs talk to the infrastructure, not to each other directly.
        !(nodes[a.idx()].roles.has(Role::Mapn) && nodes[b.idx()].roles.has(Role::Mapn))
            && link.points_in_range(pos(a), pos(b))
    });
    for &(a, b) in &cables {
        static_adj[a.idx()].push(b);
        static_adj[b.idx()].push(a);
    }
    for l in &mut static_adj {
        l.sort();
    }

    let mut uplinks = Vec::new();
    for &m in &mapns {
        let path = shortest_path(m, cn, &static_adj)
            .ok_or_else(|| RunError::Config(format!("MAPN {m} has no infrastructure path to the CN")))?;
        uplinks.push(path);
    }

    Ok(Topology {
        nodes,
        hosts,
        mapns,
        wireless,
        ibapn,
        hafa,
        routers,
        cn,
        mobile: mobile.into_iter().collect(),
        uplinks,
        cables,
        static_adj,
        motion_rngs,
    })
}

/// Breadth-first shortest path, lowest-id neighbors first.
fn shortest_path(src: NodeId, dst: NodeId, adj: &Adjacency) -> Option<Vec<NodeId>> {
    let mut parent: HashMap<NodeId, NodeId> = HashMap::from([(src, src)]);
    let mut queue = VecDeque::from([src]);
    while let Some(cur) = queue.pop_front() {
        if cur == dst {
            let mut path = vec![dst];
            let mut n = dst;
            while n != src {
                n = parent[&n];
                path.push(n);
            }
            path.reverse();
            return Some(path);
        }
        for &nb in &adj[cur.idx()] {
            if let std::collections::hash_map::Entry::Vacant(e) = parent.entry(nb) {
                e.insert(cur);
                queue.push_back(nb);
            }
        }
    }
    None
}

#[derive(Debug)]
enum Ev {
    Arrive(Packet),
    TxDone(NodeId),
    Move(NodeId),
    AppStart(usize),
    Rto(usize),
    RouteReady(usize, u64),
    RouteRetry(usize),
    SignalRetry(usize),
    Wake(usize),
    ZoneRefresh,
    Warmup,
}

impl Classify for Ev {
    fn kind(&self) -> EventKind {
        match self {
            Ev::Arrive(_) | Ev::TxDone(_) => EventKind::PacketArrival,
            Ev::Move(_) => EventKind::MobilityUpdate,
            Ev::AppStart(_) | Ev::Wake(_) => EventKind::AppSend,
            Ev::Rto(_) | Ev::RouteReady(..) | Ev::RouteRetry(_) | Ev::SignalRetry(_) | Ev::ZoneRefresh => {
                EventKind::TimerExpiry
            }
            Ev::Warmup => EventKind::MetricSample,
        }
    }
}

/// Per-flow packet accounting for one packet kind.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Conservation {
    pub originated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl Conservation {
    pub fn holds(&self) -> bool {
        self.originated == self.delivered + self.dropped + self.in_flight
    }
}

#[derive(Debug, Clone)]
struct ActiveRoute {
    id: u64,
    mapn: NodeId,
    data_path: Rc<[NodeId]>,
    ack_path: Rc<[NodeId]>,
    established: SimTime,
}

#[derive(Debug)]
struct Flow {
    src: NodeId,
    start: SimTime,
    started: bool,
    sender: TcpSender,
    receiver: TcpReceiver,
    conn: ConnectionPhase,
    route: Option<ActiveRoute>,
    discovering: bool,
    retry_scheduled: bool,
    signal_retry_scheduled: bool,
    pending_data: VecDeque<Packet>,
    pending_acks: VecDeque<Packet>,
    timer_at: Option<SimTime>,
    metrics: FlowMetrics,
    data: Conservation,
    acks: Conservation,
    unique_total: u64,
    warm_timeouts: u64,
    warm_retx: u64,
}

/// Optional CSV traces, one line per row without header.
#[derive(Debug, Default, Clone)]
pub struct Traces {
    pub packets: Vec<String>,
    pub cwnd: Vec<String>,
    pub mobility: Vec<String>,
    pub signaling: Vec<String>,
}

#[derive(Debug, Default, Clone)]
pub struct RunStats {
    pub events: u64,
    /// FNV-1a style hash over every dispatched (time, kind) pair.
    pub dispatch_digest: u64,
    /// Dispatched events whose time was below their predecessor's.
    pub clock_regressions: u64,
    pub signaling_sent: u64,
    pub handoffs: u64,
    pub setups_aborted: u64,
    pub window_violations: u64,
    pub protocol_violations: u64,
    /// Sender invariant failures observed after any event; first message kept.
    pub tcp_invariant_failures: u64,
    pub first_tcp_invariant_failure: Option<String>,
    /// DATA injected while the connection phase forbade it.
    pub gate_violations: u64,
    /// Vegas window reductions closer together than one smoothed RTT.
    pub vegas_double_cuts: u64,
    /// Receiver prefix disagreeing with the unique bytes delivered.
    pub stream_mismatches: u64,
    /// DATA hops started between radio nodes farther apart than the range.
    pub hop_violations: u64,
    pub queue_drops: u64,
    /// Queue drops per node id.
    pub queue_drops_by_node: Vec<u64>,
    pub link_drops: u64,
    pub loss_drops: u64,
    pub pending_drops: u64,
}

#[derive(Debug, Clone)]
pub struct FlowSummary {
    pub flow: usize,
    pub src: NodeId,
    pub mobile: bool,
    pub data: Conservation,
    pub acks: Conservation,
    pub final_phase: Phase,
    pub handoffs: u64,
    pub retransmissions: u64,
    pub timeouts: u64,
    pub signal_trace: Vec<crate::handoff::SignalMessage>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub flows: Vec<FlowMetrics>,
    pub summaries: Vec<FlowSummary>,
    pub counters: ControlCounters,
    pub broken_links: u64,
    pub stats: RunStats,
    pub traces: Traces,
}

impl RunOutput {
    pub fn conservation_holds(&self) -> bool {
        self.summaries.iter().all(|f| f.data.holds() && f.acks.holds())
    }
}

struct World {
    sc: Scenario,
    link: LinkModel,
    topo: Topology,
    mcfg: mobility::MobilityConfig,
    node_rng: Vec<RandomSource>,
    loss_rng: RandomSource,
    active_tx: Vec<(NodeId, SimTime)>,
    adj: Adjacency,
    adj_time: SimTime,
    zones: Vec<Option<ZoneTable>>,
    routes: RouteTable,
    flows: Vec<Flow>,
    warm: bool,
    warm_counters: ControlCounters,
    warm_broken: u64,
    stats: RunStats,
    traces: Traces,
    ctrl_radio: SimTime,
    ctrl_wired: SimTime,
}

/// Runs one scenario to its horizon.
pub fn run(sc: &Scenario) -> Result<RunOutput, RunError> {
    sc.validate().map_err(|e| RunError::Config(e.to_string()))?;
    let root = RandomSource::new(sc.seed);
    let mut topo = build_topology(sc, &root)?;
    let node_rng = std::mem::take(&mut topo.motion_rngs);
    let mut flow_rng = root.substream(STREAM_FLOWS);
    let n_nodes = topo.nodes.len();
    let tcp_cfg = sc.tcp();
    let anchors_base = (topo.ibapn, topo.hafa, topo.cn);

    let mut order: Vec<NodeId> = topo.hosts.clone();
    for i in 0..order.len() {
        let j = i + flow_rng.index(order.len() - i);
        order.swap(i, j);
    }
    let mut flows = Vec::with_capacity(sc.flows);
    for f in 0..sc.flows {
        let src = order[f % order.len()];
        let start = sc.flow_stagger * f as f64 / sc.flows as f64;
        let mut conn = ConnectionPhase::new(
            f,
            Anchors {
                mmn: src,
                ibapn: anchors_base.0,
                hafa: anchors_base.1,
                cn: anchors_base.2,
            },
        );
        conn.keep_trace = true;
        flows.push(Flow {
            src,
            start,
            started: false,
            sender: TcpSender::new(sc.variant, tcp_cfg.clone()),
            receiver: TcpReceiver::new(),
            conn,
            route: None,
            discovering: false,
            retry_scheduled: false,
            signal_retry_scheduled: false,
            pending_data: VecDeque::new(),
            pending_acks: VecDeque::new(),
            timer_at: None,
            metrics: FlowMetrics::new(f, sc.variant, sc.warmup, sc.sim_time),
            data: Conservation::default(),
            acks: Conservation::default(),
            unique_total: 0,
            warm_timeouts: 0,
            warm_retx: 0,
        });
    }

    let link = sc.link();
    let mut w = World {
        ctrl_radio: link.hop_delay(net::HEADER_BYTES, false, 0),
        ctrl_wired: link.hop_delay(net::HEADER_BYTES, true, 0),
        sc: sc.clone(),
        link,
        mcfg: sc.mobility(),
        node_rng,
        loss_rng: root.substream(STREAM_LOSS),
        active_tx: Vec::new(),
        adj: Vec::new(),
        adj_time: f64::NAN,
        zones: vec![None; n_nodes],
        routes: RouteTable::default(),
        flows,
        warm: sc.warmup <= 0.0,
        warm_counters: ControlCounters::default(),
        warm_broken: 0,
        stats: RunStats::default(),
        traces: Traces::default(),
        topo,
    };
    let mut sched: Scheduler<Ev> = Scheduler::new();
    for m in w.topo.mobile.clone() {
        if let Some(t) = w.topo.nodes[m.idx()]
            .motion
            .as_ref()
            .and_then(MotionState::next_transition)
        {
            if t <= sc.sim_time {
                sched.schedule(t, Ev::Move(m))?;
            }
        }
        if sc.trace_mobility {
            w.trace_motion(0.0, m);
        }
    }
    for f in 0..w.flows.len() {
        sched.schedule(w.flows[f].start, Ev::AppStart(f))?;
    }
    w.refresh_all_zones(0.0, true);
    sched.schedule(sc.zone_refresh, Ev::ZoneRefresh)?;
    if sc.warmup > 0.0 {
        sched.schedule(sc.warmup, Ev::Warmup)?;
    }

    let mut digest = DIGEST_SEED;
    let mut last = 0.0;
    let mut regressions = 0;
    let dispatched = sched.run_until(sc.sim_time, |s, ev| {
        if ev.time < last {
            regressions += 1;
        }
        last = ev.time;
        digest = (digest ^ ev.time.to_bits()).wrapping_mul(DIGEST_PRIME);
        digest = (digest ^ ev.payload.kind() as u64).wrapping_mul(DIGEST_PRIME);
        w.handle(s, ev.time, ev.payload)
    })?;
    w.stats.events = dispatched;
    w.stats.dispatch_digest = digest;
    w.stats.clock_regressions = regressions;
    w.finish(&sched)
}

impl World {
    fn handle(&mut self, s: &mut Scheduler<Ev>, now: SimTime, ev: Ev) -> Result<(), SimError> {
        match ev {
            Ev::Arrive(pkt) => self.on_arrive(s, now, pkt)?,
            Ev::TxDone(n) => {
                self.topo.nodes[n.idx()].busy_until = None;
                self.start_tx(s, now, n)?;
            }
            Ev::Move(n) => self.on_move(s, now, n)?,
            Ev::AppStart(f) => {
                self.flows[f].started = true;
                let out = self.flows[f].sender.send_window(now);
                self.after_sender(s, now, f, out)?;
                self.request_route(s, now, f)?;
            }
            Ev::Rto(f) => self.on_rto(s, now, f)?,
            Ev::RouteReady(f, id) => self.on_route_ready(s, now, f, id)?,
            Ev::RouteRetry(f) => {
                self.flows[f].retry_scheduled = false;
                if self.flows[f].route.is_none() {
                    self.request_route(s, now, f)?;
                }
            }
            Ev::SignalRetry(f) => {
                self.flows[f].signal_retry_scheduled = false;
                self.drive_signaling(s, now, f)?;
            }
            Ev::Wake(f) => {
                self.flush(s, now, f)?;
                let out = self.flows[f].sender.send_window(now);
                self.after_sender(s, now, f, out)?;
            }
            Ev::ZoneRefresh => {
                self.on_zone_refresh(s, now)?;
                s.schedule_in(self.sc.zone_refresh, Ev::ZoneRefresh)?;
            }
            Ev::Warmup => {
                self.warm = true;
                self.warm_counters = self.routes.counters;
                self.warm_broken = self.routes.broken_links;
                for f in &mut self.flows {
                    f.warm_timeouts = f.sender.timeouts();
                    f.warm_retx = f.sender.retransmissions();
                }
            }
        }
        Ok(())
    }

    // ---- mobility and topology ------------------------------------------

    fn on_move(&mut self, s: &mut Scheduler<Ev>, now: SimTime, n: NodeId) -> Result<(), SimError> {
        let node = &mut self.topo.nodes[n.idx()];
        let Some(m) = node.motion.as_ref() else { return Ok(()) };
        // The event time is quantized; catch up to the exact transition.
        let at = m
            .next_transition()
            .filter(|t| sim::quantize(*t) <= now)
            .map_or(now, |t| t.max(now));
        let next = m.advance(at, &self.mcfg, &mut self.node_rng[n.idx()]);
        let t = next.next_transition();
        node.motion = Some(next);
        if self.sc.trace_mobility {
            self.trace_motion(now, n);
        }
        if let Some(t) = t {
            if t <= self.sc.sim_time {
                s.schedule(t.max(now), Ev::Move(n))?;
            }
        }
        Ok(())
    }

    fn trace_motion(&mut self, now: SimTime, n: NodeId) {
        if let Some(m) = &self.topo.nodes[n.idx()].motion {
            let row = mobility::trace_row(now, n.0, m.position_at(now), m.phase());
            self.traces.mobility.push(row);
        }
    }

    fn pos(&self, n: NodeId, t: SimTime) -> Option<Point> {
        self.topo.nodes[n.idx()].motion.as_ref().map(|m| m.position_at(t))
    }

    fn is_mapn(&self, n: NodeId) -> bool {
        self.topo.nodes[n.idx()].roles.has(Role::Mapn)
    }

    fn radio_link(&self, a: NodeId, b: NodeId, t: SimTime) -> bool {
        match (self.pos(a, t), self.pos(b, t)) {
            (Some(pa), Some(pb)) => !(self.is_mapn(a) && self.is_mapn(b)) && self.link.points_in_range(pa, pb),
            _ => false,
        }
    }

    fn refresh_adj(&mut self, now: SimTime) {
        if self.adj_time == now {
            return;
        }
        let members: Vec<NodeId> = self.topo.manet_members().collect();
        let pts: Vec<Option<Point>> = (0..self.topo.nodes.len()).map(|i| self.pos(NodeId(i), now)).collect();
        let link = &self.link;
        let nodes = &self.topo.nodes;
        self.adj = adjacency(nodes.len(), &members, |a, b| {
            let both_mapn = nodes[a.idx()].roles.has(Role::Mapn) && nodes[b.idx()].roles.has(Role::Mapn);
            !both_mapn && link.points_in_range(pts[a.idx()].unwrap(), pts[b.idx()].unwrap())
        });
        self.adj_time = now;
    }

    fn refresh_zone(&mut self, n: NodeId) -> u64 {
        let prev = self.zones[n.idx()].take();
        let table = refresh_intrazone(n, self.sc.zone_radius, &self.adj, prev.as_ref());
        let cost = zone_changes(prev.as_ref(), &table);
        self.zones[n.idx()] = Some(table);
        cost
    }

    fn refresh_all_zones(&mut self, now: SimTime, initial: bool) {
        self.refresh_adj(now);
        let members: Vec<NodeId> = self.topo.manet_members().collect();
        let mut cost = 0;
        for n in members {
            cost += self.refresh_zone(n);
        }
        if !initial {
            self.routes.counters.proactive_sent += cost;
        }
    }

    fn on_zone_refresh(&mut self, s: &mut Scheduler<Ev>, now: SimTime) -> Result<(), SimError> {
        self.refresh_all_zones(now, false);
        self.routes.prune_invalid(|_| false);
        for f in 0..self.flows.len() {
            let flow = &self.flows[f];
            if !flow.started || flow.discovering {
                continue;
            }
            let Some(route) = &flow.route else { continue };
            let expired = now - route.established >= self.sc.route_lifetime;
            let hops = bfs_hops(flow.src, &self.adj);
            let nearest = mapn_attachment(&hops, &self.topo.mapns);
            let moved = nearest.is_some_and(|m| m != route.mapn);
            if expired || moved {
                let id = route.id;
                self.routes.retire(id);
                self.flows[f].route = None;
                self.request_route(s, now, f)?;
            }
        }
        Ok(())
    }

    // ---- routing ----------------------------------------------------------

    fn request_route(&mut self, s: &mut Scheduler<Ev>, now: SimTime, f: usize) -> Result<(), SimError> {
        let flow = &self.flows[f];
        if flow.discovering || flow.retry_scheduled || flow.route.is_some() {
            return Ok(());
        }
        let src = flow.src;
        let fallback = flow.conn.current_mapn().unwrap_or(self.topo.mapns[0]);
        self.refresh_adj(now);
        let hops = bfs_hops(src, &self.adj);
        let target = mapn_attachment(&hops, &self.topo.mapns).unwrap_or(fallback);
        let adj = &self.adj;
        let live = |a: NodeId, b: NodeId| adj[a.idx()].binary_search(&b).is_ok();
        match discover_where(src, target, &self.zones, self.sc.route_ttl, live) {
            Ok(d) => {
                self.routes.counters.rreq_sent += d.rreq_tx;
                self.routes.counters.rrep_sent += d.rrep_tx;
                let hops = d.path.len().saturating_sub(1) as f64;
                let latency = if d.rreq_tx == 0 {
                    0.0
                } else {
                    2.0 * hops * self.ctrl_radio
                };
                let mut full = d.path;
                let up = &self.topo.uplinks[self.topo.mapn_index(target)];
                full.extend_from_slice(&up[1..]);
                let id = self.routes.install(f, full, now);
                self.flows[f].discovering = true;
                s.schedule_in(latency, Ev::RouteReady(f, id))?;
            }
            Err(fail) => {
                self.routes.counters.rreq_sent += fail.rreq_tx;
                self.flows[f].retry_scheduled = true;
                s.schedule_timer(self.sc.route_retry, Ev::RouteRetry(f))?;
            }
        }
        Ok(())
    }

    fn on_route_ready(&mut self, s: &mut Scheduler<Ev>, now: SimTime, f: usize, id: u64) -> Result<(), SimError> {
        self.flows[f].discovering = false;
        if !self.routes.is_valid(id) {
            return self.request_route(s, now, f);
        }
        let path = self.routes.get(id).expect("valid route").path.clone();
        let mapn = *path.iter().find(|n| self.is_mapn(**n)).expect("route passes a MAPN");
        let ack: Vec<NodeId> = path.iter().rev().copied().collect();
        self.flows[f].route = Some(ActiveRoute {
            id,
            mapn,
            data_path: path.into(),
            ack_path: ack.into(),
            established: now,
        });
        self.drive_signaling(s, now, f)?;
        self.flush(s, now, f)
    }

    fn link_break(&mut self, s: &mut Scheduler<Ev>, now: SimTime, a: NodeId, b: NodeId) -> Result<(), SimError> {
        let hit = self.routes.on_link_break(a, b);
        self.refresh_adj(now);
        for n in [a, b] {
            if self.zones[n.idx()].is_some() {
                let cost = self.refresh_zone(n);
                self.routes.counters.proactive_sent += cost;
            }
        }
        for r in hit {
            let f = r.flow_id;
            if self.flows[f].route.as_ref().is_some_and(|ar| ar.id == r.id) {
                self.flows[f].route = None;
                self.request_route(s, now, f)?;
            }
        }
        Ok(())
    }

    // ---- signaling --------------------------------------------------------

    fn drive_signaling(&mut self, s: &mut Scheduler<Ev>, now: SimTime, f: usize) -> Result<(), SimError> {
        self.refresh_adj(now);
        let target = self.flows[f].route.as_ref().map(|r| r.mapn);
        let mut net = SignalNet {
            adj: &self.adj,
            static_adj: &self.topo.static_adj,
            cables: &self.topo.cables,
            hosts: self.topo.hosts.len(),
            ctrl_radio: self.ctrl_radio,
            ctrl_wired: self.ctrl_wired,
            p_loss: self.link.p_loss,
            rng: &mut self.loss_rng,
            sent: &mut self.stats.signaling_sent,
        };
        let flow = &mut self.flows[f];
        let before = flow.conn.trace.len();
        let progress = match target {
            Some(m) if flow.conn.phase() == Phase::Idle => flow.conn.initial_setup(m, now, &mut net),
            Some(m) => match flow.conn.handoff(m, now, &mut net) {
                Progress::Idle => flow.conn.resume(now, &mut net),
                p => p,
            },
            None => flow.conn.resume(now, &mut net),
        };
        if self.sc.trace_signaling {
            for m in &flow.conn.trace[before..] {
                self.traces.signaling.push(m.trace_row());
            }
        }
        match progress {
            Progress::Done(t) => {
                s.schedule(t.max(now), Ev::Wake(f))?;
            }
            Progress::RetryAt(t) => {
                if !flow.signal_retry_scheduled {
                    flow.signal_retry_scheduled = true;
                    s.schedule(t, Ev::SignalRetry(f))?;
                }
            }
            Progress::Aborted => {
                self.stats.setups_aborted += 1;
                if !flow.signal_retry_scheduled {
                    flow.signal_retry_scheduled = true;
                    s.schedule_timer(crate::handoff::RETRY_INTERVAL, Ev::SignalRetry(f))?;
                }
            }
            Progress::Idle => {}
        }
        Ok(())
    }

    // ---- TCP glue ---------------------------------------------------------

    fn after_sender(
        &mut self,
        s: &mut Scheduler<Ev>,
        now: SimTime,
        f: usize,
        out: Vec<Emission>,
    ) -> Result<(), SimError> {
        for e in out {
            let flow = &mut self.flows[f];
            let path: Rc<[NodeId]> = match &flow.route {
                Some(r) => r.data_path.clone(),
                None => Rc::from(vec![flow.src, self.topo.cn]),
            };
            let mut pkt = Packet::data(FlowId(f), e.seq, e.len as u32, path, now);
            pkt.retransmission = e.retransmission;
            flow.data.originated += 1;
            if self.warm {
                flow.metrics.packets_sent += 1;
            }
            self.send_data(s, now, f, pkt)?;
        }
        let flow = &mut self.flows[f];
        if let Err(msg) = flow.sender.check_invariants() {
            self.stats.tcp_invariant_failures += 1;
            self.stats.first_tcp_invariant_failure.get_or_insert(msg);
        }
        if self.sc.trace_cwnd {
            self.traces.cwnd.push(tcp::cwnd_trace_row(now, f, &flow.sender));
        }
        if let (_, Some(deadline)) = flow.sender.timer() {
            if flow.timer_at.is_none_or(|t| deadline < t) {
                let at = sim::quantize(deadline.max(now));
                flow.timer_at = Some(at);
                s.schedule(at, Ev::Rto(f))?;
            }
        }
        Ok(())
    }

    fn on_rto(&mut self, s: &mut Scheduler<Ev>, now: SimTime, f: usize) -> Result<(), SimError> {
        let flow = &mut self.flows[f];
        if flow.timer_at != Some(now) {
            return Ok(());
        }
        flow.timer_at = None;
        match flow.sender.timer() {
            (gen, Some(deadline)) if sim::quantize(deadline) <= now => {
                let out = flow.sender.on_timeout(gen, now);
                self.after_sender(s, now, f, out)
            }
            (_, Some(deadline)) => {
                let at = sim::quantize(deadline);
                flow.timer_at = Some(at);
                s.schedule(at, Ev::Rto(f))?;
                Ok(())
            }
            (_, None) => Ok(()),
        }
    }

    fn route_usable(&self, f: usize) -> bool {
        self.flows[f].route.as_ref().is_some_and(|r| self.routes.is_valid(r.id))
    }

    fn send_data(&mut self, s: &mut Scheduler<Ev>, now: SimTime, f: usize, pkt: Packet) -> Result<(), SimError> {
        let open =
            self.route_usable(f) && self.flows[f].conn.data_allowed(now) && self.flows[f].pending_data.is_empty();
        if open {
            self.inject(s, now, f, pkt)
        } else {
            self.hold(now, f, pkt, true);
            Ok(())
        }
    }

    fn hold(&mut self, now: SimTime, f: usize, pkt: Packet, data: bool) {
        let cap = self.sc.pending_capacity;
        let flow = &mut self.flows[f];
        let (q, cons) = if data {
            (&mut flow.pending_data, &mut flow.data)
        } else {
            (&mut flow.pending_acks, &mut flow.acks)
        };
        if q.len() >= cap {
            cons.dropped += 1;
            self.stats.pending_drops += 1;
            if self.sc.trace_packets {
                self.traces.packets.push(net::trace_row(now, "drop", &pkt));
            }
        } else {
            q.push_back(pkt);
        }
    }

    /// Puts a packet on its flow's current route at the packet's origin.
    fn inject(&mut self, s: &mut Scheduler<Ev>, now: SimTime, f: usize, mut pkt: Packet) -> Result<(), SimError> {
        let route = self.flows[f].route.as_ref().expect("route checked");
        let (path, id) = match pkt.kind {
            PacketKind::Data => {
                if !self.flows[f].conn.data_allowed(now) {
                    self.stats.gate_violations += 1;
                }
                (route.data_path.clone(), route.id)
            }
            _ => (route.ack_path.clone(), route.id),
        };
        pkt.src = path[0];
        pkt.dst = path[path.len() - 1];
        pkt.path = path;
        pkt.hop = 0;
        pkt.route_id = Some(id);
        if self.sc.trace_packets {
            self.traces.packets.push(net::trace_row(now, "send", &pkt));
        }
        self.enqueue(s, now, pkt)
    }

    fn flush(&mut self, s: &mut Scheduler<Ev>, now: SimTime, f: usize) -> Result<(), SimError> {
        if !self.route_usable(f) {
            return Ok(());
        }
        while let Some(pkt) = self.flows[f].pending_acks.pop_front() {
            self.inject(s, now, f, pkt)?;
        }
        if self.flows[f].conn.data_allowed(now) {
            while let Some(pkt) = self.flows[f].pending_data.pop_front() {
                self.inject(s, now, f, pkt)?;
                if !self.route_usable(f) {
                    break;
                }
            }
        }
        Ok(())
    }

    fn cons_mut(&mut self, pkt: &Packet) -> &mut Conservation {
        let flow = &mut self.flows[pkt.flow.0];
        if pkt.kind == PacketKind::Data {
            &mut flow.data
        } else {
            &mut flow.acks
        }
    }

    // ---- forwarding -------------------------------------------------------

    fn enqueue(&mut self, s: &mut Scheduler<Ev>, now: SimTime, pkt: Packet) -> Result<(), SimError> {
        let at = pkt.at();
        let node = &mut self.topo.nodes[at.idx()];
        match node.queue.enqueue(pkt) {
            Enqueue::Accepted => {
                if node.busy_until.is_none() {
                    self.start_tx(s, now, at)?;
                }
            }
            Enqueue::Dropped(pkt) => {
                self.stats.queue_drops += 1;
                if self.sc.trace_packets {
                    self.traces.packets.push(net::trace_row(now, "drop", &pkt));
                }
                self.cons_mut(&pkt).dropped += 1;
            }
        }
        Ok(())
    }

    fn interferers(&mut self, from: NodeId, now: SimTime) -> usize {
        self.active_tx.retain(|&(_, until)| until > now);
        let Some(p) = self.pos(from, now) else { return 0 };
        let mut k = 0;
        for &(n, _) in &self.active_tx {
            if n != from {
                if let Some(q) = self.pos(n, now) {
                    if self.link.points_interfere(p, q) {
                        k += 1;
                    }
                }
            }
        }
        k
    }

    fn start_tx(&mut self, s: &mut Scheduler<Ev>, now: SimTime, n: NodeId) -> Result<(), SimError> {
        if self.topo.nodes[n.idx()].busy_until.is_some() {
            return Ok(());
        }
        while let Some(mut pkt) = self.topo.nodes[n.idx()].queue.dequeue() {
            let Some(next) = pkt.next_hop() else {
                // Already at its destination; cannot happen for queued packets.
                self.cons_mut(&pkt).dropped += 1;
                continue;
            };
            let wired = self.topo.is_cabled(n, next);
            if !wired && !self.radio_link(n, next, now) {
                self.stats.link_drops += 1;
                if self.sc.trace_packets {
                    self.traces.packets.push(net::trace_row(now, "drop", &pkt));
                }
                self.cons_mut(&pkt).dropped += 1;
                self.link_break(s, now, n, next)?;
                continue;
            }
            if !wired && pkt.kind == PacketKind::Data {
                let (a, b) = (self.pos(n, now), self.pos(next, now));
                if !matches!((a, b), (Some(a), Some(b)) if a.distance(&b) <= self.link.tx_range) {
                    self.stats.hop_violations += 1;
                }
            }
            let k = if wired { 0 } else { self.interferers(n, now) };
            let busy = self.link.tx_time(pkt.length, wired) + if wired { 0.0 } else { self.link.contention_penalty(k) };
            let until = now + busy;
            self.topo.nodes[n.idx()].busy_until = Some(until);
            if !wired {
                self.active_tx.push((n, until));
            }
            s.schedule_in(busy, Ev::TxDone(n))?;
            if self.link.p_loss > 0.0 && self.loss_rng.chance(self.link.p_loss) {
                self.stats.loss_drops += 1;
                if self.sc.trace_packets {
                    self.traces.packets.push(net::trace_row(now, "drop", &pkt));
                }
                self.cons_mut(&pkt).dropped += 1;
                return Ok(());
            }
            pkt.hop += 1;
            pkt.hops += 1;
            s.schedule_in(busy + self.link.proc_delay, Ev::Arrive(pkt))?;
            return Ok(());
        }
        Ok(())
    }

    fn on_arrive(&mut self, s: &mut Scheduler<Ev>, now: SimTime, pkt: Packet) -> Result<(), SimError> {
        if pkt.hop + 1 < pkt.path.len() {
            return self.enqueue(s, now, pkt);
        }
        if self.sc.trace_packets {
            self.traces.packets.push(net::trace_row(now, "recv", &pkt));
        }
        let f = pkt.flow.0;
        match pkt.kind {
            PacketKind::Data => self.deliver_data(s, now, f, pkt),
            _ => self.deliver_ack(s, now, f, pkt),
        }
    }

    fn deliver_data(&mut self, s: &mut Scheduler<Ev>, now: SimTime, f: usize, pkt: Packet) -> Result<(), SimError> {
        let warm = self.warm;
        let sack = self.sc.variant == Variant::Sack;
        let flow = &mut self.flows[f];
        flow.data.delivered += 1;
        let info = flow.receiver.on_data(pkt.seq, pkt.payload_len as u64);
        if !info.duplicate {
            flow.unique_total += pkt.payload_len as u64;
        }
        if warm {
            self.routes.counters.data_delivered += 1;
            flow.metrics
                .record_delivery(pkt.payload_len as u64, !info.duplicate, now - pkt.sent_at);
            if !info.duplicate {
                flow.metrics.received += 1;
                if info.in_order {
                    flow.metrics.in_order += 1;
                }
            }
        }
        let path = match &flow.route {
            Some(r) => r.ack_path.clone(),
            None => pkt.path.iter().rev().copied().collect(),
        };
        let mut ack = Packet::control(PacketKind::Ack, FlowId(f), path, now);
        ack.seq = info.ack;
        if sack {
            ack.sack_blocks = info.sack_blocks;
        }
        flow.acks.originated += 1;
        if self.route_usable(f) && self.flows[f].pending_acks.is_empty() {
            self.inject(s, now, f, ack)
        } else {
            self.hold(now, f, ack, false);
            Ok(())
        }
    }

    fn deliver_ack(&mut self, s: &mut Scheduler<Ev>, now: SimTime, f: usize, pkt: Packet) -> Result<(), SimError> {
        let warm = self.warm;
        let flow = &mut self.flows[f];
        flow.acks.delivered += 1;
        let out = flow.sender.on_ack(pkt.seq, &pkt.sack_blocks, now);
        if warm {
            if let Some(rtt) = flow.sender.rtt().srtt() {
                flow.metrics.record_rtt(rtt);
            }
        }
        self.after_sender(s, now, f, out)
    }

    // ---- end of run -------------------------------------------------------

    fn finish(mut self, sched: &Scheduler<Ev>) -> Result<RunOutput, RunError> {
        let n = self.flows.len();
        let mut data_in = vec![0u64; n];
        let mut acks_in = vec![0u64; n];
        let mut count = |p: &Packet| {
            if p.kind == PacketKind::Data {
                data_in[p.flow.0] += 1;
            } else {
                acks_in[p.flow.0] += 1;
            }
        };
        for node in &self.topo.nodes {
            node.queue.iter().for_each(&mut count);
        }
        for flow in &self.flows {
            flow.pending_data.iter().for_each(&mut count);
            flow.pending_acks.iter().for_each(&mut count);
        }
        for ev in sched.pending() {
            if let Ev::Arrive(p) = ev {
                count(p);
            }
        }

        let mut problems = Vec::new();
        let mut summaries = Vec::with_capacity(n);
        for (f, flow) in self.flows.iter_mut().enumerate() {
            flow.data.in_flight = data_in[f];
            flow.acks.in_flight = acks_in[f];
            if !flow.data.holds() {
                problems.push(format!("flow {f} DATA {:?}", flow.data));
            }
            if !flow.acks.holds() {
                problems.push(format!("flow {f} ACK {:?}", flow.acks));
            }
            let rx = &flow.receiver;
            if flow.unique_total != rx.rcv_nxt() + rx.buffered().total() || rx.rcv_nxt() > flow.sender.snd_max() {
                self.stats.stream_mismatches += 1;
            }
            if flow.sender.variant() == Variant::Vegas {
                self.stats.vegas_double_cuts += flow.sender.cuts_within_rtt();
            }
            self.stats.window_violations += flow.sender.window_violations();
            self.stats.protocol_violations += flow.sender.protocol_violations();
            self.stats.handoffs += flow.conn.handoffs_completed;
            flow.metrics.timeouts = flow.sender.timeouts() - flow.warm_timeouts;
            flow.metrics.retransmissions = flow.sender.retransmissions() - flow.warm_retx;
            summaries.push(FlowSummary {
                flow: f,
                src: flow.src,
                mobile: self.topo.mobile.contains(&flow.src),
                data: flow.data,
                acks: flow.acks,
                final_phase: flow.conn.phase(),
                handoffs: flow.conn.handoffs_completed,
                retransmissions: flow.sender.retransmissions(),
                timeouts: flow.sender.timeouts(),
                signal_trace: std::mem::take(&mut flow.conn.trace),
            });
        }
        if !problems.is_empty() {
            return Err(RunError::Conservation(problems.join("; ")));
        }

        self.stats.queue_drops_by_node = self.topo.nodes.iter().map(|n| n.queue.drops()).collect();
        let counters = self.routes.counters.since(&self.warm_counters);
        let broken = self.routes.broken_links - self.warm_broken;
        let flows: Vec<FlowMetrics> = self.flows.iter().map(|f| f.metrics.clone()).collect();
        let t = summarize(&flows);
        let report = RunReport {
            scenario: self.sc.name.clone(),
            seed: self.sc.seed,
            variant: self.sc.variant,
            mobility_ratio: self.sc.mobility_ratio,
            v_max: self.sc.v_max,
            throughput_pkts: t.throughput_pkts,
            throughput_bytes: t.throughput_bytes,
            goodput_bytes: t.goodput_bytes,
            mean_delay_s: t.mean_delay_s,
            fairness_jain: t.fairness_jain,
            ctrl_overhead_reactive: counters.control_overhead(OverheadScope::Reactive),
            ctrl_overhead_all: counters.control_overhead(OverheadScope::All),
            broken_links: broken,
            in_order_ratio: t.in_order_ratio,
            timeouts: t.timeouts,
            retransmissions: t.retransmissions,
        };
        Ok(RunOutput {
            report,
            flows,
            summaries,
            counters,
            broken_links: broken,
            stats: self.stats,
            traces: self.traces,
        })
    }
}

/// Resolves signaling legs over the current MANET graph and the static
/// infrastructure.
struct SignalNet<'a> {
    adj: &'a Adjacency,
    static_adj: &'a Adjacency,
    cables: &'a [(NodeId, NodeId)],
    hosts: usize,
    ctrl_radio: SimTime,
    ctrl_wired: SimTime,
    p_loss: f64,
    rng: &'a mut RandomSource,
    sent: &'a mut u64,
}

impl SignalNet<'_> {
    fn hop_time(&self, a: NodeId, b: NodeId) -> SimTime {
        let wired = self
            .cables
            .iter()
            .any(|&(x, y)| (x == a && y == b) || (x == b && y == a));
        if wired {
            self.ctrl_wired
        } else {
            self.ctrl_radio
        }
    }
}

impl SignalTransport for SignalNet<'_> {
    fn leg(&mut self, from: NodeId, to: NodeId) -> LegOutcome {
        let manet = from.idx() < self.hosts || to.idx() < self.hosts;
        let graph = if manet { self.adj } else { self.static_adj };
        let Some(path) = shortest_path(from, to, graph) else {
            return LegOutcome::Unreachable;
        };
        let mut t = 0.0;
        for w in path.windows(2) {
            *self.sent += 1;
            if self.p_loss > 0.0 && self.rng.chance(self.p_loss) {
                return LegOutcome::Lost;
            }
            t += self.hop_time(w[0], w[1]);
        }
        LegOutcome::Delivered(t)
    }
}
