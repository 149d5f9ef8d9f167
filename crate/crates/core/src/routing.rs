//! Simplified Zone Routing Protocol.
//!
//! Each MANET node keeps a proactive table of every node within `radius`
//! hops (breadth-first over the radio graph at refresh time). Destinations
//! outside the zone are found by bordercasting a route request to peripheral
//! nodes, ring by ring, with per-node duplicate suppression. The first
//! bordercast recipient whose zone holds the destination relays the request
//! to it, and the destination replies along the reverse path.

use std::collections::{BTreeMap, HashMap, VecDeque};

use crate::net::NodeId;
use crate::sim::SimTime;

/// Neighbor lists indexed by node id. Nodes outside the MANET have no entries.
pub type Adjacency = Vec<Vec<NodeId>>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ZoneEntry {
    pub next_hop: NodeId,
    pub hops: u32,
    /// Predecessor on the shortest path from the owner.
    pub parent: NodeId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoneTable {
    pub owner: NodeId,
    pub radius: u32,
    /// Every node within `radius` hops except the owner.
    pub members: BTreeMap<NodeId, ZoneEntry>,
    pub version: u64,
}

impl ZoneTable {
    pub fn empty(owner: NodeId, radius: u32) -> Self {
        Self {
            owner,
            radius,
            members: BTreeMap::new(),
            version: 0,
        }
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node == self.owner || self.members.contains_key(&node)
    }

    pub fn hops_to(&self, node: NodeId) -> Option<u32> {
        if node == self.owner {
            Some(0)
        } else {
            self.members.get(&node).map(|e| e.hops)
        }
    }

    /// Nodes exactly `radius` hops away, in id order.
    pub fn peripheral(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.members
            .iter()
            .filter(move |(_, e)| e.hops == self.radius)
            .map(|(n, _)| *n)
    }

    /// Owner-to-`node` path through the zone, both ends included.
    pub fn path_to(&self, node: NodeId) -> Option<Vec<NodeId>> {
        if node == self.owner {
            return Some(vec![node]);
        }
        let mut path = vec![node];
        let mut cur = node;
        while cur != self.owner {
            cur = self.members.get(&cur)?.parent;
            path.push(cur);
        }
        path.reverse();
        Some(path)
    }
}

/// Rebuilds `owner`'s zone by breadth-first search over `adj`, bumping
/// `version` past `previous`.
pub fn refresh_intrazone(owner: NodeId, radius: u32, adj: &Adjacency, previous: Option<&ZoneTable>) -> ZoneTable {
    let mut table = ZoneTable::empty(owner, radius);
    table.version = previous.map_or(1, |p| p.version + 1);
    let mut queue = VecDeque::from([owner]);
    let mut seen = HashMap::from([(owner, 0u32)]);
    while let Some(cur) = queue.pop_front() {
        let d = seen[&cur];
        if d == radius {
            continue;
        }
        for &nb in adj.get(cur.idx()).map(Vec::as_slice).unwrap_or(&[]) {
            if seen.contains_key(&nb) {
                continue;
            }
            seen.insert(nb, d + 1);
            let next_hop = if cur == owner { nb } else { table.members[&cur].next_hop };
            table.members.insert(
                nb,
                ZoneEntry {
                    next_hop,
                    hops: d + 1,
                    parent: cur,
                },
            );
            queue.push_back(nb);
        }
    }
    table
}

/// Entries added, removed or changed between two versions of a zone; the
/// number of proactive updates a refresh costs.
pub fn zone_changes(old: Option<&ZoneTable>, new: &ZoneTable) -> u64 {
    let Some(old) = old else {
        return new.members.len() as u64;
    };
    let changed = new
        .members
        .iter()
        .filter(|(n, e)| old.members.get(n) != Some(e))
        .count();
    let removed = old.members.keys().filter(|n| !new.members.contains_key(n)).count();
    (changed + removed) as u64
}

/// Result of a successful discovery.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub path: Vec<NodeId>,
    pub rreq_tx: u64,
    pub rrep_tx: u64,
    /// Bordercast rings traversed before the destination was found.
    pub rings: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscoveryFailure {
    pub rreq_tx: u64,
}

/// Finds a route from `src` to `dst` using the (possibly stale) zone tables.
///
/// RREQ transmissions are counted once per transmitting node; RREP
/// transmissions once per hop of the returned path. A destination already in
/// `src`'s zone costs no reactive packets.
pub fn discover(
    src: NodeId,
    dst: NodeId,
    zones: &[Option<ZoneTable>],
    ttl: u32,
) -> Result<Discovery, DiscoveryFailure> {
    discover_where(src, dst, zones, ttl, |_, _| true)
}

/// Like [`discover`], but zone paths containing a hop for which `live`
/// returns false are unusable: requests cannot cross links that are down,
/// even if a stale zone table still lists them.
pub fn discover_where(
    src: NodeId,
    dst: NodeId,
    zones: &[Option<ZoneTable>],
    ttl: u32,
    live: impl Fn(NodeId, NodeId) -> bool,
) -> Result<Discovery, DiscoveryFailure> {
    let zone = |n: NodeId| zones.get(n.idx()).and_then(Option::as_ref);
    let usable = |p: &Vec<NodeId>| p.windows(2).all(|w| live(w[0], w[1]));
    if let Some(path) = zone(src).and_then(|z| z.path_to(dst)).filter(usable) {
        return Ok(Discovery {
            path,
            rreq_tx: 0,
            rrep_tx: 0,
            rings: 0,
        });
    }

    let mut transmitted = vec![false; zones.len()];
    let mut rreq_tx = 0u64;
    let mut reach: HashMap<NodeId, Vec<NodeId>> = HashMap::from([(src, vec![src])]);
    let mut frontier = vec![src];

    for ring in 0..=ttl {
        let mut next = Vec::new();
        for &n in &frontier {
            let Some(z) = zone(n) else { continue };
            if let Some(tail) = z.path_to(dst).filter(usable) {
                transmit(&tail, &mut transmitted, &mut rreq_tx);
                let mut path = reach[&n].clone();
                path.extend_from_slice(&tail[1..]);
                let path = remove_loops(path);
                let rrep_tx = path.len() as u64 - 1;
                return Ok(Discovery {
                    path,
                    rreq_tx,
                    rrep_tx,
                    rings: ring,
                });
            }
            if ring == ttl {
                continue;
            }
            for p in z.peripheral() {
                if reach.contains_key(&p) {
                    continue;
                }
                let Some(leg) = z.path_to(p).filter(usable) else {
                    continue;
                };
                transmit(&leg, &mut transmitted, &mut rreq_tx);
                let mut path = reach[&n].clone();
                path.extend_from_slice(&leg[1..]);
                reach.insert(p, path);
                next.push(p);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Err(DiscoveryFailure { rreq_tx })
}

/// Counts each node that forwards along `path` at most once.
fn transmit(path: &[NodeId], transmitted: &mut [bool], count: &mut u64) {
    for n in &path[..path.len() - 1] {
        if !transmitted[n.idx()] {
            transmitted[n.idx()] = true;
            *count += 1;
        }
    }
}

/// Shortcuts any revisit so the path is cycle-free.
pub fn remove_loops(path: Vec<NodeId>) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = Vec::with_capacity(path.len());
    for n in path {
        if let Some(pos) = out.iter().position(|&m| m == n) {
            out.truncate(pos + 1);
        } else {
            out.push(n);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub id: u64,
    pub flow_id: usize,
    pub path: Vec<NodeId>,
    pub established_at: SimTime,
    pub valid: bool,
}

impl Route {
    pub fn uses_hop(&self, a: NodeId, b: NodeId) -> bool {
        self.path
            .windows(2)
            .any(|w| (w[0] == a && w[1] == b) || (w[0] == b && w[1] == a))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ControlCounters {
    pub rreq_sent: u64,
    pub rrep_sent: u64,
    pub rerr_sent: u64,
    pub proactive_sent: u64,
    pub data_delivered: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverheadScope {
    /// RREQ + RREP + RERR only.
    Reactive,
    /// Reactive plus proactive zone refreshes.
    All,
}

impl ControlCounters {
    pub fn reactive(&self) -> u64 {
        self.rreq_sent + self.rrep_sent + self.rerr_sent
    }

    /// Control packets per delivered data packet; `None` when nothing was delivered.
    pub fn control_overhead(&self, scope: OverheadScope) -> Option<f64> {
        if self.data_delivered == 0 {
            return None;
        }
        let ctrl = match scope {
            OverheadScope::Reactive => self.reactive(),
            OverheadScope::All => self.reactive() + self.proactive_sent,
        };
        Some(ctrl as f64 / self.data_delivered as f64)
    }

    /// Counter growth since `earlier`.
    pub fn since(&self, earlier: &ControlCounters) -> ControlCounters {
        ControlCounters {
            rreq_sent: self.rreq_sent - earlier.rreq_sent,
            rrep_sent: self.rrep_sent - earlier.rrep_sent,
            rerr_sent: self.rerr_sent - earlier.rerr_sent,
            proactive_sent: self.proactive_sent - earlier.proactive_sent,
            data_delivered: self.data_delivered - earlier.data_delivered,
        }
    }
}

/// Active routes plus break and control accounting.
#[derive(Debug, Default, Clone)]
pub struct RouteTable {
    routes: BTreeMap<u64, Route>,
    next_id: u64,
    pub counters: ControlCounters,
    pub broken_links: u64,
}

impl RouteTable {
    pub fn install(&mut self, flow_id: usize, path: Vec<NodeId>, now: SimTime) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.routes.insert(
            id,
            Route {
                id,
                flow_id,
                path,
                established_at: now,
                valid: true,
            },
        );
        id
    }

    pub fn get(&self, id: u64) -> Option<&Route> {
        self.routes.get(&id)
    }

    pub fn is_valid(&self, id: u64) -> bool {
        self.routes.get(&id).is_some_and(|r| r.valid)
    }

    /// Drops a route without counting a break (cache expiry, replacement).
    pub fn retire(&mut self, id: u64) {
        self.routes.remove(&id);
    }

    /// Invalidates every valid route through the hop `a`–`b`. Each such route
    /// counts one broken link and one RERR. Returns the affected routes.
    pub fn on_link_break(&mut self, a: NodeId, b: NodeId) -> Vec<Route> {
        let mut hit = Vec::new();
        for r in self.routes.values_mut() {
            if r.valid && r.uses_hop(a, b) {
                r.valid = false;
                self.broken_links += 1;
                self.counters.rerr_sent += 1;
                hit.push(r.clone());
            }
        }
        hit
    }

    /// Forgets invalid routes no packet can still reference.
    pub fn prune_invalid(&mut self, keep: impl Fn(u64) -> bool) {
        self.routes.retain(|id, r| r.valid || keep(*id));
    }

    pub fn len(&self) -> usize {
        self.routes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.routes.is_empty()
    }
}

/// Builds neighbor lists from a connectivity predicate over `nodes`.
pub fn adjacency(n_total: usize, nodes: &[NodeId], linked: impl Fn(NodeId, NodeId) -> bool) -> Adjacency {
    let mut adj = vec![Vec::new(); n_total];
    for (i, &a) in nodes.iter().enumerate() {
        for &b in &nodes[i + 1..] {
            if linked(a, b) {
                adj[a.idx()].push(b);
                adj[b.idx()].push(a);
            }
        }
    }
    for list in &mut adj {
        list.sort();
    }
    adj
}

/// Hop distance from `src` to every reachable node.
pub fn bfs_hops(src: NodeId, adj: &Adjacency) -> HashMap<NodeId, u32> {
    let mut dist = HashMap::from([(src, 0)]);
    let mut queue = VecDeque::from([src]);
    while let Some(cur) = queue.pop_front() {
        let d = dist[&cur];
        for &nb in &adj[cur.idx()] {
            if let std::collections::hash_map::Entry::Vacant(e) = dist.entry(nb) {
                e.insert(d + 1);
                queue.push_back(nb);
            }
        }
    }
    dist
}
