//! Random Waypoint mobility.
//!
//! A mobile node travels in a straight line toward a uniformly drawn waypoint
//! at a speed drawn uniformly from `[v_min, v_max]`, pauses for `pause_len`
//! on arrival, then draws a new leg. Independently of arrivals, a node that
//! has travelled for `move_window` seconds without a pause stops mid-leg for
//! `pause_len` and then resumes the same leg.
//!
//! Positions are evaluated lazily from the current leg; only arrivals and
//! pause expiries need scheduling (see [`MotionState::next_transition`]).
//!
//! Draw order per leg is fixed: waypoint `x`, waypoint `y`, then speed
//! (repeated while below [`MIN_SPEED`]).

use std::collections::BTreeSet;
use std::fmt;

use crate::sim::{RandomSource, SimTime};

/// Speed draws below this are redrawn so a node never freezes mid-leg.
pub const MIN_SPEED: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_sq(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }
}

/// Axis-aligned rectangle anchored at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Field {
    pub width: f64,
    pub height: f64,
}

impl Field {
    pub fn contains(&self, p: &Point) -> bool {
        (0.0..=self.width).contains(&p.x) && (0.0..=self.height).contains(&p.y)
    }

    pub fn center(&self) -> Point {
        Point::new(self.width / 2.0, self.height / 2.0)
    }

    fn is_degenerate(&self) -> bool {
        self.width <= 0.0 && self.height <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MobilityConfig {
    pub field: Field,
    pub v_min: f64,
    pub v_max: f64,
    pub pause_len: SimTime,
    pub move_window: SimTime,
    pub mobility_ratio: f64,
}

impl MobilityConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.v_min >= 0.0 && self.v_max >= self.v_min) {
            return Err("v_max must be ≥ v_min ≥ 0".into());
        }
        if !(0.0..=1.0).contains(&self.mobility_ratio) {
            return Err("mobility_ratio must be in [0, 1]".into());
        }
        if !(self.pause_len >= 0.0) {
            return Err("pause_len must be ≥ 0".into());
        }
        if !(self.move_window > 0.0) {
            return Err("move_window must be > 0".into());
        }
        if !(self.field.width >= 0.0 && self.field.height >= 0.0) {
            return Err("field dimensions must be ≥ 0".into());
        }
        Ok(())
    }

    /// Whether mobile nodes can move at all under this configuration.
    pub fn allows_motion(&self) -> bool {
        self.v_max >= MIN_SPEED && !self.field.is_degenerate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Moving,
    Paused,
    Stationary,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Moving => "moving",
            Phase::Paused => "paused",
            Phase::Stationary => "stationary",
        })
    }
}

/// Motion of one node. While `Moving`, the position at time `t` is
/// `origin + dir * speed * (t - since)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionState {
    phase: Phase,
    origin: Point,
    since: SimTime,
    waypoint: Point,
    speed: f64,
    pause_until: SimTime,
    /// Travel time left before the next forced pause, measured from `since`.
    window_left: SimTime,
    /// True while paused at the waypoint (next leg is fresh); false while
    /// paused by the travel window (next leg resumes toward `waypoint`).
    at_waypoint: bool,
    legs: u64,
}

impl MotionState {
    /// A node that never moves.
    pub fn stationary(position: Point) -> Self {
        Self {
            phase: Phase::Stationary,
            origin: position,
            since: 0.0,
            waypoint: position,
            speed: 0.0,
            pause_until: 0.0,
            window_left: 0.0,
            at_waypoint: true,
            legs: 0,
        }
    }

    /// A mobile node that starts its first leg at `now`.
    pub fn mobile(position: Point, now: SimTime, cfg: &MobilityConfig, rng: &mut RandomSource) -> Self {
        if !cfg.allows_motion() {
            return Self::stationary(position);
        }
        let mut ms = Self::stationary(position);
        ms.window_left = cfg.move_window;
        ms.start_leg(now, cfg, rng);
        ms
    }

    /// A node moving from `origin` toward `waypoint` at `speed`, starting at `since`.
    /// Mostly useful for scripted scenarios.
    pub fn on_leg(origin: Point, waypoint: Point, speed: f64, since: SimTime, move_window: SimTime) -> Self {
        Self {
            phase: Phase::Moving,
            origin,
            since,
            waypoint,
            speed,
            pause_until: 0.0,
            window_left: move_window,
            at_waypoint: false,
            legs: 1,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn waypoint(&self) -> Point {
        self.waypoint
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn pause_until(&self) -> SimTime {
        self.pause_until
    }

    /// Number of fresh legs started so far.
    pub fn legs(&self) -> u64 {
        self.legs
    }

    pub fn is_mobile(&self) -> bool {
        self.phase != Phase::Stationary
    }

    /// Position as of the last update.
    pub fn position(&self) -> Point {
        self.position_at(self.since)
    }

    /// Position at `t`, which must not lie beyond [`Self::next_transition`].
    /// Times past the current leg's stop point are clamped to it.
    pub fn position_at(&self, t: SimTime) -> Point {
        match self.phase {
            Phase::Moving => {
                let total = self.origin.distance(&self.waypoint);
                let travelled = (self.speed * (t - self.since).max(0.0))
                    .min(self.speed * self.window_left)
                    .min(total);
                if travelled >= total {
                    return self.waypoint;
                }
                let f = travelled / total;
                Point::new(
                    self.origin.x + (self.waypoint.x - self.origin.x) * f,
                    self.origin.y + (self.waypoint.y - self.origin.y) * f,
                )
            }
            _ => self.origin,
        }
    }

    /// When the node next arrives, hits its travel window, or ends a pause.
    pub fn next_transition(&self) -> Option<SimTime> {
        match self.phase {
            Phase::Moving => Some(self.since + self.time_to_stop()),
            Phase::Paused => Some(self.pause_until),
            Phase::Stationary => None,
        }
    }

    fn time_to_stop(&self) -> SimTime {
        let arrive = self.origin.distance(&self.waypoint) / self.speed;
        arrive.min(self.window_left)
    }

    fn start_leg(&mut self, t: SimTime, cfg: &MobilityConfig, rng: &mut RandomSource) {
        let here = self.origin;
        let mut wp = pick_waypoint(rng, &cfg.field);
        while wp == here {
            wp = pick_waypoint(rng, &cfg.field);
        }
        self.waypoint = wp;
        self.speed = draw_speed(rng, cfg);
        self.phase = Phase::Moving;
        self.since = t;
        self.at_waypoint = false;
        self.legs += 1;
    }

    /// Advances the motion to `now`, performing every arrival, forced pause
    /// and pause expiry on the way. Stationary nodes are returned unchanged.
    pub fn advance(&self, now: SimTime, cfg: &MobilityConfig, rng: &mut RandomSource) -> MotionState {
        let mut ms = self.clone();
        loop {
            match ms.phase {
                Phase::Stationary => return ms,
                Phase::Paused => {
                    if now < ms.pause_until {
                        return ms;
                    }
                    let t = ms.pause_until;
                    ms.window_left = cfg.move_window;
                    if ms.at_waypoint {
                        ms.start_leg(t, cfg, rng);
                    } else {
                        ms.phase = Phase::Moving;
                        ms.since = t;
                    }
                }
                Phase::Moving => {
                    let dist = ms.origin.distance(&ms.waypoint);
                    let arrive = dist / ms.speed;
                    let stop = arrive.min(ms.window_left);
                    if ms.since + stop > now {
                        return ms;
                    }
                    let t = ms.since + stop;
                    if arrive <= ms.window_left {
                        ms.origin = ms.waypoint;
                        ms.at_waypoint = true;
                    } else {
                        ms.origin = ms.position_at(t);
                        ms.at_waypoint = false;
                    }
                    ms.since = t;
                    ms.phase = Phase::Paused;
                    ms.pause_until = t + cfg.pause_len;
                }
            }
        }
    }
}

/// Picks `round(n * ratio)` distinct nodes uniformly at random.
pub fn select_mobile<T: Copy + Ord>(nodes: &[T], ratio: f64, rng: &mut RandomSource) -> BTreeSet<T> {
    let ratio = ratio.clamp(0.0, 1.0);
    let k = (nodes.len() as f64 * ratio).round() as usize;
    let mut pool = nodes.to_vec();
    // Partial Fisher-Yates: the first k slots end up a uniform k-subset.
    for i in 0..k {
        let j = i + rng.index(pool.len() - i);
        pool.swap(i, j);
    }
    pool.into_iter().take(k).collect()
}

/// Uniform point over the field.
pub fn pick_waypoint(rng: &mut RandomSource, field: &Field) -> Point {
    let x = field.width * rng.unit();
    let y = field.height * rng.unit();
    Point::new(x, y)
}

/// Uniform speed over `[v_min, v_max]`, redrawn while below [`MIN_SPEED`].
pub fn draw_speed(rng: &mut RandomSource, cfg: &MobilityConfig) -> f64 {
    loop {
        let v = cfg.v_min + (cfg.v_max - cfg.v_min) * rng.unit();
        if v >= MIN_SPEED {
            return v;
        }
    }
}

/// One row of the optional mobility trace: `time,node_id,x,y,phase`.
pub fn trace_row(time: SimTime, node: usize, p: Point, phase: Phase) -> String {
    format!("{time},{node},{},{},{phase}", p.x, p.y)
}

pub const TRACE_HEADER: &str = "time,node_id,x,y,phase";
