//! Smoothed RTT and retransmission timeout, with Karn's rule.

use crate::sim::SimTime;

#[derive(Debug, Clone, PartialEq)]
pub struct RttEstimator {
    srtt: Option<SimTime>,
    rttvar: SimTime,
    rto: SimTime,
    rto_min: SimTime,
    rto_max: SimTime,
}

impl RttEstimator {
    pub fn new(initial_rto: SimTime, rto_min: SimTime, rto_max: SimTime) -> Self {
        Self {
            srtt: None,
            rttvar: 0.0,
            rto: initial_rto.clamp(rto_min, rto_max),
            rto_min,
            rto_max,
        }
    }

    pub fn srtt(&self) -> Option<SimTime> {
        self.srtt
    }

    pub fn rttvar(&self) -> SimTime {
        self.rttvar
    }

    pub fn rto(&self) -> SimTime {
        self.rto
    }

    /// Feeds one measurement. Samples taken from retransmitted segments are
    /// ambiguous and ignored.
    pub fn sample(&mut self, rtt: SimTime, from_retransmission: bool) {
        if from_retransmission || !(rtt >= 0.0) {
            return;
        }
        match self.srtt {
            None => {
                self.srtt = Some(rtt);
                self.rttvar = rtt / 2.0;
            }
            Some(srtt) => {
                self.rttvar = 0.75 * self.rttvar + 0.25 * (srtt - rtt).abs();
                self.srtt = Some(0.875 * srtt + 0.125 * rtt);
            }
        }
        let srtt = self.srtt.expect("set above");
        self.rto = (srtt + 4.0 * self.rttvar).clamp(self.rto_min, self.rto_max);
    }

    /// Exponential backoff after a timeout.
    pub fn backoff(&mut self) {
        self.rto = (self.rto * 2.0).min(self.rto_max);
    }

    /// Timeout without the coarse lower bound, `srtt + 4 rttvar`.
    pub fn fine_timeout(&self) -> SimTime {
        match self.srtt {
            Some(srtt) => srtt + 4.0 * self.rttvar,
            None => self.rto,
        }
    }
}
