//! Reliable byte-stream sender/receiver with pluggable congestion control.
//!
//! The sender and receiver are pure state machines: they consume ACK, data
//! and timer inputs and return the segments to put on the wire. Timers are
//! reported as deadlines tagged with a generation number; a timer event whose
//! generation no longer matches is stale and ignored.

mod ranges;
mod receiver;
mod rtt;
mod sender;

use std::fmt;
use std::str::FromStr;

pub use ranges::RangeSet;
pub use receiver::{AckInfo, TcpReceiver};
pub use rtt::RttEstimator;
pub use sender::{vegas_diff, westwood_ssthresh, CutKind, CutRecord, Emission, TcpSender, VegasDecision};

use crate::sim::SimTime;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    Tahoe,
    Reno,
    NewReno,
    Sack,
    Vegas,
    Westwood,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Tahoe,
        Variant::Reno,
        Variant::NewReno,
        Variant::Sack,
        Variant::Vegas,
        Variant::Westwood,
    ];

    /// Duplicate ACKs that trigger loss recovery.
    pub fn dupack_threshold(self) -> u32 {
        match self {
            Variant::Vegas => 2,
            _ => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tahoe => "tahoe",
            Variant::Reno => "reno",
            Variant::NewReno => "newreno",
            Variant::Sack => "sack",
            Variant::Vegas => "vegas",
            Variant::Westwood => "westwood",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "tahoe" => Ok(Variant::Tahoe),
            "reno" => Ok(Variant::Reno),
            "newreno" => Ok(Variant::NewReno),
            "sack" => Ok(Variant::Sack),
            "vegas" => Ok(Variant::Vegas),
            "westwood" => Ok(Variant::Westwood),
            other => Err(format!("unknown TCP variant '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CcState {
    SlowStart,
    CongestionAvoidance,
    FastRecovery,
}

impl fmt::Display for CcState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CcState::SlowStart => "slow-start",
            CcState::CongestionAvoidance => "congestion-avoidance",
            CcState::FastRecovery => "fast-recovery",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TcpConfig {
    /// Payload bytes per full segment.
    pub mss: u64,
    pub initial_cwnd_segments: u64,
    pub initial_rto: SimTime,
    pub rto_min: SimTime,
    pub rto_max: SimTime,
    /// Receiver advertised window in segments.
    pub rwnd_segments: u64,
    pub vegas_alpha: f64,
    pub vegas_beta: f64,
    pub vegas_gamma: f64,
    pub westwood_gain: f64,
    /// Total application bytes; `None` for an unbounded bulk transfer.
    pub app_bytes: Option<u64>,
}

impl Default for TcpConfig {
    fn default() -> Self {
        Self {
            mss: 1000,
            initial_cwnd_segments: 2,
            initial_rto: 1.0,
            rto_min: 0.2,
            rto_max: 60.0,
            rwnd_segments: 64,
            vegas_alpha: 1.0,
            vegas_beta: 3.0,
            vegas_gamma: 1.0,
            westwood_gain: 0.19,
            app_bytes: None,
        }
    }
}

impl TcpConfig {
    pub fn rwnd(&self) -> u64 {
        self.rwnd_segments * self.mss
    }
}

/// One row of the optional cwnd trace: `time,flow,variant,cwnd,ssthresh,state`.
pub fn cwnd_trace_row(time: SimTime, flow: usize, s: &TcpSender) -> String {
    format!(
        "{time},{flow},{},{},{},{}",
        s.variant(),
        s.cwnd(),
        s.ssthresh(),
        s.state()
    )
}

pub const CWND_TRACE_HEADER: &str = "time,flow,variant,cwnd,ssthresh,state";

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_parse_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("New-Reno".parse::<Variant>().unwrap(), Variant::NewReno);
        assert!("cubic".parse::<Variant>().is_err());
    }

    #[test]
    fn thresholds() {
        for v in Variant::ALL {
            let want = if v == Variant::Vegas { 2 } else { 3 };
            assert_eq!(v.dupack_threshold(), want);
        }
    }
}
