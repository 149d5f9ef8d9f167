//! Oracles shared by the integration tests and the acceptance report.

#![allow(dead_code)]

use hybridsim::handoff::{SignalKind, SignalMessage};
use hybridsim::metrics::{goodput, throughput};
use hybridsim::mobility::{MobilityConfig, Point, MIN_SPEED};
use hybridsim::scenario::Scenario;
use hybridsim::sim::RandomSource;
use hybridsim::world::RunOutput;

/// Fixed-step reference integrator for random waypoint motion. It consumes
/// the random stream in the documented order (waypoint x, waypoint y, speed)
/// and splits a step whenever an arrival, window stop or pause end falls
/// inside it.
pub struct Stepper {
    cfg: MobilityConfig,
    rng: RandomSource,
    t: f64,
    pub pos: Point,
    wp: Point,
    speed: f64,
    paused: bool,
    at_waypoint: bool,
    pause_end: f64,
    moved: f64,
}

impl Stepper {
    pub fn new(start: Point, cfg: MobilityConfig, rng: RandomSource) -> Self {
        let mut s = Stepper {
            cfg,
            rng,
            t: 0.0,
            pos: start,
            wp: start,
            speed: 0.0,
            paused: false,
            at_waypoint: false,
            pause_end: 0.0,
            moved: 0.0,
        };
        s.new_leg();
        s
    }

    fn new_leg(&mut self) {
        loop {
            let x = self.cfg.field.width * self.rng.unit();
            let y = self.cfg.field.height * self.rng.unit();
            if x != self.pos.x || y != self.pos.y {
                self.wp = Point { x, y };
                break;
            }
        }
        loop {
            let v = self.cfg.v_min + (self.cfg.v_max - self.cfg.v_min) * self.rng.unit();
            if v >= MIN_SPEED {
                self.speed = v;
                break;
            }
        }
        self.paused = false;
        self.moved = 0.0;
    }

    pub fn step(&mut self, mut dt: f64) {
        while dt > 0.0 {
            if self.paused {
                let left = self.pause_end - self.t;
                if left > dt {
                    self.t += dt;
                    return;
                }
                self.t = self.pause_end;
                dt -= left;
                if self.at_waypoint {
                    self.new_leg();
                } else {
                    self.paused = false;
                    self.moved = 0.0;
                }
                continue;
            }
            let dx = self.wp.x - self.pos.x;
            let dy = self.wp.y - self.pos.y;
            let d = (dx * dx + dy * dy).sqrt();
            let to_arrive = d / self.speed;
            let to_window = self.cfg.move_window - self.moved;
            let to_stop = to_arrive.min(to_window);
            if to_stop > dt {
                self.pos.x += dx / d * self.speed * dt;
                self.pos.y += dy / d * self.speed * dt;
                self.moved += dt;
                self.t += dt;
                return;
            }
            if to_arrive <= to_window {
                self.pos = self.wp;
                self.at_waypoint = true;
            } else {
                self.pos.x += dx / d * self.speed * to_stop;
                self.pos.y += dy / d * self.speed * to_stop;
                self.at_waypoint = false;
            }
            self.t += to_stop;
            dt -= to_stop;
            self.paused = true;
            self.pause_end = self.t + self.cfg.pause_len;
        }
    }
}

/// Expected (name, sender, final recipient) for connection setup.
pub const SETUP: [(&str, &str, &str); 8] = [
    ("REQ_CONN_SETUP", "MMN", "CMAPN"),
    ("COORD_REQ", "CMAPN", "IBAPN"),
    ("REPLY_CONN_SETUP", "CMAPN", "MMN"),
    ("FWD_COORD_REQ", "IBAPN", "HA/FA"),
    ("ACCEPT_COORD", "HA/FA", "CMAPN"),
    ("FWD_INIT_SETUP", "HA/FA", "CN"),
    ("ACCEPT_FWD_COORD", "HA/FA", "IBAPN"),
    ("ACCEPT_INIT_SETUP", "CN", "HA/FA"),
];

pub const HANDOFF: [(&str, &str, &str); 5] = [
    ("REQ_JOIN", "MMN", "NMAPN"),
    ("LCFM", "NMAPN", "CN"),
    ("UPDATE", "NMAPN", "CMAPN"),
    ("ACK_UPDATE", "CMAPN", "NMAPN"),
    ("NEW_CONN_SETUP", "CN", "MMN"),
];

pub fn rows(trace: &[SignalMessage]) -> Vec<(String, String, String)> {
    trace
        .iter()
        .map(|m| (m.kind.to_string(), m.from.to_string(), m.to.to_string()))
        .collect()
}

pub fn owned(table: &[(&str, &str, &str)]) -> Vec<(String, String, String)> {
    table
        .iter()
        .map(|(a, b, c)| (a.to_string(), b.to_string(), c.to_string()))
        .collect()
}

/// Small scenario used by the randomized whole-run checks.
pub fn small(seed: u64, variant: hybridsim::tcp::Variant) -> Scenario {
    let mut sc = Scenario::default();
    sc.name = "small".into();
    sc.seed = seed;
    sc.variant = variant;
    sc.sim_time = 40.0;
    sc.warmup = 5.0;
    sc.manet_nodes = 24;
    sc.flows = 6;
    sc.flow_stagger = 4.0;
    sc.field_height = 800.0;
    sc
}

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

/// Whole-run invariants; returns the first violation.
pub fn check_run(out: &RunOutput) -> Result<(), String> {
    let st = &out.stats;
    ensure!(out.conservation_holds(), "conservation");
    for (name, v) in [
        ("clock regressions", st.clock_regressions),
        ("tcp invariant failures", st.tcp_invariant_failures),
        ("window violations", st.window_violations),
        ("protocol violations", st.protocol_violations),
        ("stream mismatches", st.stream_mismatches),
        ("gate violations", st.gate_violations),
        ("vegas double cuts", st.vegas_double_cuts),
        ("hop violations", st.hop_violations),
    ] {
        ensure!(v == 0, "{name}: {v} ({:?})", st.first_tcp_invariant_failure);
    }

    for fm in &out.flows {
        ensure!(
            fm.unique_bytes_delivered <= fm.bytes_delivered,
            "unique bytes exceed delivered"
        );
        if let (Some(g), Some(t)) = (goodput(fm), throughput(fm)) {
            ensure!(g <= t, "goodput {g} above throughput {t}");
        }
    }
    let r = &out.report;
    if let (Some(g), Some(t)) = (r.goodput_bytes, r.throughput_bytes) {
        ensure!(g <= t, "report goodput {g} above throughput {t}");
    }
    if let Some(j) = r.fairness_jain {
        ensure!(j > 0.0 && j <= 1.0 + 1e-12, "jain {j}");
    }

    // Signaling stays out of the routing tally.
    let c = &out.counters;
    if let Some(ovh) = r.ctrl_overhead_reactive {
        let reactive = (c.rreq_sent + c.rrep_sent + c.rerr_sent) as f64;
        ensure!(
            (ovh * c.data_delivered as f64 - reactive).abs() < 1e-6,
            "overhead {ovh}"
        );
    }
    // A partitioned static layout can leave every flow without a route, and
    // then nothing is signaled; but no flow delivers data without signaling.
    for s in &out.summaries {
        ensure!(
            s.data.delivered == 0 || !s.signal_trace.is_empty(),
            "flow {} delivered without signaling",
            s.flow
        );
    }
    let delivered: u64 = out.summaries.iter().map(|s| s.data.delivered).sum();
    ensure!(st.signaling_sent > 0 || delivered == 0, "data delivered with no signaling");

    // Each completed handoff delivered exactly one LCFM and then its NEW_CONN_SETUP.
    for s in &out.summaries {
        let mut lcfm = 0;
        let mut completed = 0;
        for kind in s.signal_trace.iter().filter(|m| m.delivered).map(|m| m.kind) {
            match kind {
                SignalKind::ReqJoin => lcfm = 0,
                SignalKind::Lcfm => lcfm += 1,
                SignalKind::NewConnSetup => {
                    ensure!(lcfm == 1, "flow {}: {lcfm} LCFM before NEW_CONN_SETUP", s.flow);
                    completed += 1;
                    lcfm = 0;
                }
                _ => {}
            }
        }
        ensure!(
            completed == s.handoffs,
            "flow {}: {completed} vs {} handoffs",
            s.flow,
            s.handoffs
        );
    }
    Ok(())
}
