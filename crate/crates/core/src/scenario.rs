//! Scenario files: `key = value` lines, `#` comments, every key optional.

use std::fmt;
use std::str::FromStr;

use crate::mobility::{Field, MobilityConfig};
use crate::net::LinkModel;
use crate::tcp::{TcpConfig, Variant};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioError {
    /// 1-based line number, or 0 for whole-scenario checks.
    pub line: usize,
    pub key: String,
    pub message: String,
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.line == 0 {
            write!(f, "scenario key '{}': {}", self.key, self.message)
        } else {
            write!(f, "line {}, key '{}': {}", self.line, self.key, self.message)
        }
    }
}

impl std::error::Error for ScenarioError {}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub sim_time: f64,
    pub warmup: f64,
    pub field_width: f64,
    pub field_height: f64,
    pub manet_nodes: usize,
    pub wireless_nodes: usize,
    pub wired_hops: usize,
    pub mapn_count: usize,
    pub flows: usize,
    /// Flow start times are spread evenly over `[0, flow_stagger)`.
    pub flow_stagger: f64,
    pub variant: Variant,
    pub mobility_ratio: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub pause_len: f64,
    pub move_window: f64,
    pub zone_radius: u32,
    pub zone_refresh: f64,
    pub route_ttl: u32,
    pub route_lifetime: f64,
    pub route_retry: f64,
    pub tx_range: f64,
    pub interference_range: f64,
    pub radio_bitrate: f64,
    pub wired_bitrate: f64,
    pub proc_delay: f64,
    pub p_loss: f64,
    pub contention_slot: f64,
    pub queue_capacity: usize,
    pub pending_capacity: usize,
    pub payload: u64,
    pub rwnd_segments: u64,
    pub trace_packets: bool,
    pub trace_cwnd: bool,
    pub trace_mobility: bool,
    pub trace_signaling: bool,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            seed: 1,
            sim_time: 300.0,
            warmup: 10.0,
            field_width: 600.0,
            field_height: 1200.0,
            manet_nodes: 40,
            wireless_nodes: 10,
            wired_hops: 3,
            mapn_count: 2,
            flows: 20,
            flow_stagger: 20.0,
            variant: Variant::Reno,
            mobility_ratio: 0.5,
            v_min: 0.0,
            v_max: 10.0,
            pause_len: 10.0,
            move_window: 50.0,
            zone_radius: 2,
            zone_refresh: 5.0,
            route_ttl: 10,
            route_lifetime: 30.0,
            route_retry: 1.0,
            tx_range: 250.0,
            interference_range: 550.0,
            radio_bitrate: 2e6,
            wired_bitrate: 10e6,
            proc_delay: 1e-3,
            p_loss: 0.0,
            contention_slot: 0.5e-3,
            queue_capacity: 50,
            pending_capacity: 64,
            payload: 1000,
            rwnd_segments: 64,
            trace_packets: false,
            trace_cwnd: false,
            trace_mobility: false,
            trace_signaling: false,
        }
    }
}

fn parse_value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T, ScenarioError> {
    raw.parse().map_err(|_| ScenarioError {
        line,
        key: key.into(),
        message: format!("cannot parse '{raw}' as {}", std::any::type_name::<T>()),
    })
}

impl FromStr for Scenario {
    type Err = ScenarioError;

    fn from_str(text: &str) -> Result<Self, Self::Err> {
        parse_scenario(text)
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::default();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(ScenarioError {
                line,
                key: content.into(),
                message: "expected 'key = value'".into(),
            });
        };
        let key = key.trim();
        let value = value.trim();
        sc.set(line, key, value)?;
    }
    sc.validate()?;
    Ok(sc)
}

impl Scenario {
    /// Sets one key from its textual value.
    pub fn set(&mut self, line: usize, key: &str, v: &str) -> Result<(), ScenarioError> {
        macro_rules! p {
            () => {
                parse_value(line, key, v)?
            };
        }
        match key {
            "name" => {
                if v.is_empty() || v.contains([',', '"', '\n']) {
                    return Err(ScenarioError {
                        line,
                        key: key.into(),
                        message: "name must be non-empty and free of commas and quotes".into(),
                    });
                }
                self.name = v.into()
            }
            "seed" => self.seed = p!(),
            "sim_time" => self.sim_time = p!(),
            "warmup" => self.warmup = p!(),
            "field_width" => self.field_width = p!(),
            "field_height" => self.field_height = p!(),
            "manet_nodes" => self.manet_nodes = p!(),
            "wireless_nodes" => self.wireless_nodes = p!(),
            "wired_hops" => self.wired_hops = p!(),
            "mapn_count" => self.mapn_count = p!(),
            "flows" => self.flows = p!(),
            "flow_stagger" => self.flow_stagger = p!(),
            "variant" => {
                self.variant = v.parse().map_err(|message| ScenarioError {
                    line,
                    key: key.into(),
                    message,
                })?
            }
            "mobility_ratio" => self.mobility_ratio = p!(),
            "v_min" => self.v_min = p!(),
            "v_max" => self.v_max = p!(),
            "pause_len" => self.pause_len = p!(),
            "move_window" => self.move_window = p!(),
            "zone_radius" => self.zone_radius = p!(),
            "zone_refresh" => self.zone_refresh = p!(),
            "route_ttl" => self.route_ttl = p!(),
            "route_lifetime" => self.route_lifetime = p!(),
            "route_retry" => self.route_retry = p!(),
            "tx_range" => self.tx_range = p!(),
            "interference_range" => self.interference_range = p!(),
            "radio_bitrate" => self.radio_bitrate = p!(),
            "wired_bitrate" => self.wired_bitrate = p!(),
            "proc_delay" => self.proc_delay = p!(),
            "p_loss" => self.p_loss = p!(),
            "contention_slot" => self.contention_slot = p!(),
            "queue_capacity" => self.queue_capacity = p!(),
            "pending_capacity" => self.pending_capacity = p!(),
            "payload" => self.payload = p!(),
            "rwnd_segments" => self.rwnd_segments = p!(),
            "trace_packets" => self.trace_packets = p!(),
            "trace_cwnd" => self.trace_cwnd = p!(),
            "trace_mobility" => self.trace_mobility = p!(),
            "trace_signaling" => self.trace_signaling = p!(),
            _ => {
                return Err(ScenarioError {
                    line,
                    key: key.into(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let fail = |key: &str, message: &str| {
            Err(ScenarioError {
                line: 0,
                key: key.into(),
                message: message.into(),
            })
        };
        let finite_pos = |x: f64| x.is_finite() && x > 0.0;
        if !finite_pos(self.sim_time) {
            return fail("sim_time", "must be positive");
        }
        if !(self.warmup.is_finite() && self.warmup >= 0.0 && self.warmup < self.sim_time) {
            return fail("warmup", "must be ≥ 0 and below sim_time");
        }
        if !finite_pos(self.field_width) || !finite_pos(self.field_height) {
            return fail("field_width", "field dimensions must be positive");
        }
        if self.manet_nodes == 0 {
            return fail("manet_nodes", "at least one MANET node is required");
        }
        if self.mapn_count == 0 {
            return fail("mapn_count", "at least one MAPN is required");
        }
        if self.wired_hops == 0 {
            return fail("wired_hops", "the wired chain needs at least one hop");
        }
        if !(self.flow_stagger.is_finite() && self.flow_stagger >= 0.0) {
            return fail("flow_stagger", "must be ≥ 0");
        }
        if let Err(msg) = self.mobility().validate() {
            let key = if msg.contains("v_max") {
                "v_max"
            } else {
                "mobility_ratio"
            };
            return fail(key, &msg);
        }
        if !(1..=4).contains(&self.zone_radius) {
            return fail("zone_radius", "must be between 1 and 4");
        }
        if !finite_pos(self.zone_refresh) {
            return fail("zone_refresh", "must be positive");
        }
        if self.route_ttl == 0 {
            return fail("route_ttl", "must be at least 1");
        }
        if !finite_pos(self.route_lifetime) || !finite_pos(self.route_retry) {
            return fail("route_lifetime", "route timers must be positive");
        }
        if let Err(msg) = self.link().validate() {
            let key = if msg.contains("range") { "tx_range" } else { "p_loss" };
            return fail(key, &msg);
        }
        if self.payload == 0 {
            return fail("payload", "must be positive");
        }
        if self.rwnd_segments == 0 {
            return fail("rwnd_segments", "must be positive");
        }
        Ok(())
    }

    pub fn field(&self) -> Field {
        Field {
            width: self.field_width,
            height: self.field_height,
        }
    }

    pub fn mobility(&self) -> MobilityConfig {
        MobilityConfig {
            field: self.field(),
            v_min: self.v_min,
            v_max: self.v_max,
            pause_len: self.pause_len,
            move_window: self.move_window,
            mobility_ratio: self.mobility_ratio,
        }
    }

    pub fn link(&self) -> LinkModel {
        LinkModel {
            tx_range: self.tx_range,
            interference_range: self.interference_range,
            radio_bitrate: self.radio_bitrate,
            wired_bitrate: self.wired_bitrate,
            proc_delay: self.proc_delay,
            p_loss: self.p_loss,
            contention_slot: self.contention_slot,
        }
    }

    pub fn tcp(&self) -> TcpConfig {
        TcpConfig {
            mss: self.payload,
            rwnd_segments: self.rwnd_segments,
            ..TcpConfig::default()
        }
    }

    /// Measurement window length after warm-up.
    pub fn measured_time(&self) -> f64 {
        self.sim_time - self.warmup
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        let sc = parse_scenario("").unwrap();
        assert_eq!(sc, Scenario::default());
        assert_eq!(sc.sim_time, 300.0);
        assert_eq!((sc.field_width, sc.field_height), (600.0, 1200.0));
        assert_eq!(sc.manet_nodes, 40);
        assert_eq!((sc.tx_range, sc.interference_range), (250.0, 550.0));
        assert_eq!(sc.payload + u64::from(crate::net::HEADER_BYTES), 1040);
        assert_eq!((sc.pause_len, sc.move_window), (10.0, 50.0));
        assert_eq!((sc.v_min, sc.flows), (0.0, 20));
    }

    #[test]
    fn comments_and_values() {
        let sc = parse_scenario("# header\nvariant = vegas  # trailing\n\n  v_max=5\n").unwrap();
        assert_eq!(sc.variant, Variant::Vegas);
        assert_eq!(sc.v_max, 5.0);
    }

    #[test]
    fn bad_speed() {
        let err = parse_scenario("v_max = -1").unwrap_err();
        assert_eq!(err.key, "v_max");
        assert!(err.message.contains("v_max must be ≥ v_min ≥ 0"), "{err}");
    }

    #[test]
    fn unknown_key_names_line() {
        let err = parse_scenario("flows = 3\nbogus = 1").unwrap_err();
        assert_eq!((err.line, err.key.as_str()), (2, "bogus"));
        assert!(err.to_string().starts_with("line 2"));
    }

    #[test]
    fn type_mismatch() {
        let err = parse_scenario("flows = many").unwrap_err();
        assert_eq!((err.line, err.key.as_str()), (1, "flows"));
    }

    #[test]
    fn malformed_line() {
        assert_eq!(parse_scenario("\nflows 3").unwrap_err().line, 2);
    }

    #[test]
    fn invariants_checked() {
        assert_eq!(parse_scenario("mapn_count = 0").unwrap_err().key, "mapn_count");
        assert_eq!(parse_scenario("warmup = 400").unwrap_err().key, "warmup");
        assert_eq!(parse_scenario("interference_range = 100").unwrap_err().key, "tx_range");
        assert!(parse_scenario("flows = 0").is_ok());
    }
}
