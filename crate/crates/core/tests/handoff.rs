//! Signaling traces checked against a hand-written message table.

mod common;

use common::{owned, rows, HANDOFF, SETUP};
use hybridsim::handoff::{
    Anchors, ConnectionPhase, HandoffRole, LegOutcome, Phase, Progress, SignalKind, SignalMessage, SignalTransport,
};
use hybridsim::net::NodeId;
use hybridsim::scenario::Scenario;
use hybridsim::sim::RandomSource;
use hybridsim::tcp::Variant;
use hybridsim::world;
use proptest::prelude::*;

const ANCHORS: Anchors = Anchors {
    mmn: NodeId(1),
    ibapn: NodeId(20),
    hafa: NodeId(21),
    cn: NodeId(22),
};
const CMAPN: NodeId = NodeId(10);
const NMAPN: NodeId = NodeId(11);

/// Node-level hops each message takes, given the anchors above.
fn expected_hops(name: &str, cmapn: NodeId, nmapn: NodeId) -> Vec<(NodeId, NodeId)> {
    let (m, i, h, c) = (ANCHORS.mmn, ANCHORS.ibapn, ANCHORS.hafa, ANCHORS.cn);
    match name {
        "REQ_CONN_SETUP" => vec![(m, cmapn)],
        "COORD_REQ" => vec![(cmapn, i)],
        "REPLY_CONN_SETUP" => vec![(cmapn, m)],
        "FWD_COORD_REQ" => vec![(i, h)],
        "ACCEPT_COORD" => vec![(h, i), (i, cmapn)],
        "FWD_INIT_SETUP" => vec![(h, c)],
        "ACCEPT_FWD_COORD" => vec![(h, i)],
        "ACCEPT_INIT_SETUP" => vec![(c, h)],
        "REQ_JOIN" => vec![(m, nmapn)],
        "LCFM" => vec![(nmapn, i), (i, h), (h, c)],
        "UPDATE" => vec![(nmapn, cmapn)],
        "ACK_UPDATE" => vec![(cmapn, nmapn)],
        "NEW_CONN_SETUP" => vec![(c, h), (h, i), (i, nmapn), (nmapn, m)],
        other => panic!("unknown message {other}"),
    }
}

/// Delivers every leg after a fixed latency and records it.
struct Recorder {
    latency: f64,
    legs: Vec<(NodeId, NodeId)>,
}

impl SignalTransport for Recorder {
    fn leg(&mut self, from: NodeId, to: NodeId) -> LegOutcome {
        self.legs.push((from, to));
        LegOutcome::Delivered(self.latency)
    }
}

#[test]
fn setup_then_handoff_follow_the_table() {
    let mut net = Recorder {
        latency: 0.002,
        legs: Vec::new(),
    };
    let mut c = ConnectionPhase::new(4, ANCHORS);
    let Progress::Done(ready) = c.initial_setup(CMAPN, 3.0, &mut net) else {
        panic!()
    };
    assert_eq!(rows(&c.trace), owned(&SETUP));
    let want: Vec<_> = SETUP
        .iter()
        .flat_map(|(n, _, _)| expected_hops(n, CMAPN, NMAPN))
        .collect();
    assert_eq!(net.legs, want);
    assert!((ready - (3.0 + 0.002 * want.len() as f64)).abs() < 1e-9);
    assert!(!c.data_allowed(ready - 0.001));
    assert!(c.data_allowed(ready));

    c.trace.clear();
    net.legs.clear();
    let Progress::Done(back) = c.handoff(NMAPN, 50.0, &mut net) else {
        panic!()
    };
    assert_eq!(rows(&c.trace), owned(&HANDOFF));
    let want: Vec<_> = HANDOFF
        .iter()
        .flat_map(|(n, _, _)| expected_hops(n, CMAPN, NMAPN))
        .collect();
    assert_eq!(net.legs, want);
    assert!((back - (50.0 + 0.002 * want.len() as f64)).abs() < 1e-9);
    assert_eq!(c.phase(), Phase::ReEstablished);
    assert_eq!(c.current_mapn(), Some(NMAPN));
    // Issue times are non-decreasing and every message made it.
    assert!(c.trace.windows(2).all(|w| w[0].issued_at <= w[1].issued_at));
    assert!(c.trace.iter().all(|m| m.delivered));
}

#[test]
fn route_endpoints_match_table() {
    for (name, from, to) in SETUP.iter().chain(HANDOFF.iter()) {
        let kind = all_kinds().into_iter().find(|k| k.name() == *name).unwrap();
        let r = kind.route();
        assert_eq!(r[0].to_string(), *from);
        assert_eq!(r[r.len() - 1].to_string(), *to);
        assert!(kind.is_legal(r[0], r[r.len() - 1]));
        for bad in [HandoffRole::Mmn, HandoffRole::Cn] {
            if bad != r[r.len() - 1] {
                assert!(!kind.is_legal(r[0], bad), "{name} accepted {bad}");
            }
        }
    }
}

fn all_kinds() -> Vec<SignalKind> {
    use SignalKind::*;
    vec![
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
    ]
}

/// Loses each leg with a fixed probability.
struct Lossy {
    rng: RandomSource,
    p: f64,
}

impl SignalTransport for Lossy {
    fn leg(&mut self, _: NodeId, _: NodeId) -> LegOutcome {
        if self.rng.unit() < self.p {
            LegOutcome::Lost
        } else {
            LegOutcome::Delivered(0.001)
        }
    }
}

/// Checks that delivered messages spell out complete procedures: one setup
/// per connection, then handoffs, where an abort restarts from setup.
fn check_delivered_grammar(trace: &[SignalMessage], completed: u64) -> Result<(), TestCaseError> {
    let names: Vec<&str> = trace.iter().filter(|m| m.delivered).map(|m| m.kind.name()).collect();
    let setup: Vec<&str> = SETUP.iter().map(|r| r.0).collect();
    let handoff: Vec<&str> = HANDOFF.iter().map(|r| r.0).collect();
    let mut i = 0;
    let mut handoffs = 0;
    while i < names.len() {
        let rest = &names[i..];
        let proc_: &[&str] = if rest[0] == setup[0] { &setup } else { &handoff };
        let n = proc_.len().min(rest.len());
        // A procedure can be cut short only by an abort, after which the
        // next delivered message starts a new setup.
        let k = rest.iter().zip(proc_).take_while(|(a, b)| a == b).count();
        prop_assert!(k > 0, "unexpected {:?} at {}", rest[0], i);
        if k == proc_.len() && proc_ == handoff.as_slice() {
            handoffs += 1;
        }
        if k < n {
            prop_assert_eq!(rest[k], setup[0], "broken procedure at {}", i + k);
        }
        i += k;
    }
    prop_assert_eq!(handoffs, completed);
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lossy_signaling_keeps_order(seed in any::<u64>(), p in 0.0f64..0.5, moves in 1usize..8) {
        let mut net = Lossy { rng: RandomSource::new(seed), p };
        let mut c = ConnectionPhase::new(0, ANCHORS);
        let mut now = 0.0;
        let mut progress = c.initial_setup(CMAPN, now, &mut net);
        let mut targets = [NMAPN, CMAPN].into_iter().cycle();
        let mut pending_moves = moves;
        for _ in 0..200 {
            match progress {
                Progress::RetryAt(t) => {
                    prop_assert!(!c.data_allowed(t - 1e-3));
                    now = t;
                    progress = c.resume(now, &mut net);
                }
                Progress::Done(t) => {
                    prop_assert!(c.data_allowed(t));
                    if pending_moves == 0 {
                        break;
                    }
                    pending_moves -= 1;
                    now = t + 10.0;
                    let target = targets.next().unwrap();
                    progress = c.handoff(target, now, &mut net);
                }
                Progress::Aborted => {
                    prop_assert_eq!(c.phase(), Phase::Idle);
                    prop_assert!(!c.data_allowed(now + 100.0));
                    now += 2.0;
                    progress = c.initial_setup(CMAPN, now, &mut net);
                }
                Progress::Idle => {
                    if c.phase() == Phase::Idle {
                        progress = c.initial_setup(CMAPN, now, &mut net);
                    } else {
                        now += 10.0;
                        progress = c.handoff(targets.next().unwrap(), now, &mut net);
                    }
                }
            }
        }
        for m in &c.trace {
            let r = m.kind.route();
            prop_assert_eq!((m.from, m.to), (r[0], r[r.len() - 1]));
        }
        check_delivered_grammar(&c.trace, c.handoffs_completed)?;
    }
}

#[test]
fn run_traces_respect_gating() {
    let mut sc = Scenario::default();
    sc.seed = 9;
    sc.variant = Variant::NewReno;
    sc.sim_time = 60.0;
    sc.warmup = 5.0;
    sc.mobility_ratio = 0.5;
    sc.v_max = 10.0;
    sc.trace_packets = true;
    sc.trace_signaling = true;
    let out = world::run(&sc).unwrap();
    assert_eq!(out.stats.gate_violations, 0);

    let mut handoffs = 0;
    for s in &out.summaries {
        check_delivered_grammar(&s.signal_trace, s.handoffs).unwrap();
        handoffs += s.handoffs;
        // Data leaves the source only after its setup completed.
        let setup_done = s
            .signal_trace
            .iter()
            .find(|m| m.delivered && m.kind == SignalKind::AcceptInitSetup)
            .map(|m| m.issued_at);
        let first_send = out.traces.packets.iter().find_map(|r| {
            let c: Vec<&str> = r.split(',').collect();
            (c[1] == "send" && c[2] == "DATA" && c[3] == s.flow.to_string()).then(|| c[0].parse::<f64>().unwrap())
        });
        if let Some(t) = first_send {
            let done = setup_done.expect("data without setup");
            assert!(t > done, "flow {} sent at {t} before setup at {done}", s.flow);
        }
    }
    assert!(handoffs > 0, "no handoffs in a mobile run");

    // The exported rows carry legal endpoints only.
    for r in &out.traces.signaling {
        let c: Vec<&str> = r.split(',').collect();
        let entry = SETUP.iter().chain(HANDOFF.iter()).find(|e| e.0 == c[1]).unwrap();
        assert_eq!((entry.1, entry.2), (c[2], c[3]), "{r}");
    }
}
