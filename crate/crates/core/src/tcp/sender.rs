use std::collections::BTreeMap;

use super::{CcState, RangeSet, RttEstimator, TcpConfig, Variant};
use crate::sim::SimTime;

/// A segment the sender wants on the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emission {
    pub seq: u64,
    pub len: u64,
    pub retransmission: bool,
}

/// Why the window was reduced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutKind {
    FastRetransmit,
    Timeout,
    VegasAvoidance,
}

/// One logged window reduction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutRecord {
    pub at: SimTime,
    pub kind: CutKind,
    /// Smoothed RTT when the cut happened.
    pub srtt: Option<SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VegasDecision {
    Increase,
    Hold,
    Decrease,
}

/// Vegas queue estimate in segments: `(cwnd/base - cwnd/rtt) * base / mss`.
pub fn vegas_diff(cwnd: u64, base_rtt: SimTime, rtt: SimTime, mss: u64) -> f64 {
    let cwnd = cwnd as f64;
    (cwnd / base_rtt - cwnd / rtt) * base_rtt / mss as f64
}

/// Westwood post-loss threshold: the bandwidth-delay product rounded down to
/// whole segments, never below two.
pub fn westwood_ssthresh(bwe: f64, rtt_min: SimTime, mss: u64) -> u64 {
    let segs = (bwe * rtt_min / mss as f64 + 1e-9).floor() as u64;
    segs.max(2) * mss
}

#[derive(Debug, Clone, Copy)]
struct SegRecord {
    len: u64,
    sent_at: SimTime,
    retransmitted: bool,
}

#[derive(Debug, Clone, Default)]
struct VegasState {
    base_rtt: Option<SimTime>,
    latest_rtt: Option<SimTime>,
    epoch_min: Option<SimTime>,
    epoch_mark: u64,
    last_cut: Option<SimTime>,
    fine_checks: u8,
}

#[derive(Debug, Clone, Default)]
struct WestwoodState {
    bwe: Option<f64>,
    last_ack_at: Option<SimTime>,
    rtt_min: Option<SimTime>,
}

#[derive(Debug, Clone)]
pub struct TcpSender {
    cfg: TcpConfig,
    variant: Variant,
    cwnd: u64,
    ssthresh: u64,
    snd_una: u64,
    snd_nxt: u64,
    snd_max: u64,
    dupacks: u32,
    state: CcState,
    rtt: RttEstimator,
    recover: u64,
    recovery_started: SimTime,
    scoreboard: RangeSet,
    vegas: VegasState,
    westwood: WestwoodState,
    segs: BTreeMap<u64, SegRecord>,
    retx_count: u64,
    timeout_count: u64,
    protocol_violations: u64,
    window_violations: u64,
    timer_deadline: Option<SimTime>,
    timer_gen: u64,
    cuts: Vec<CutRecord>,
}

impl TcpSender {
    pub fn new(variant: Variant, cfg: TcpConfig) -> Self {
        let mss = cfg.mss;
        Self {
            cwnd: cfg.initial_cwnd_segments.max(1) * mss,
            ssthresh: cfg.rwnd().max(2 * mss),
            rtt: RttEstimator::new(cfg.initial_rto, cfg.rto_min, cfg.rto_max),
            cfg,
            variant,
            snd_una: 0,
            snd_nxt: 0,
            snd_max: 0,
            dupacks: 0,
            state: CcState::SlowStart,
            recover: 0,
            recovery_started: 0.0,
            scoreboard: RangeSet::new(),
            vegas: VegasState::default(),
            westwood: WestwoodState::default(),
            segs: BTreeMap::new(),
            retx_count: 0,
            timeout_count: 0,
            protocol_violations: 0,
            window_violations: 0,
            timer_deadline: None,
            timer_gen: 0,
            cuts: Vec::new(),
        }
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }
    pub fn config(&self) -> &TcpConfig {
        &self.cfg
    }
    pub fn cwnd(&self) -> u64 {
        self.cwnd
    }
    pub fn ssthresh(&self) -> u64 {
        self.ssthresh
    }
    pub fn snd_una(&self) -> u64 {
        self.snd_una
    }
    pub fn snd_nxt(&self) -> u64 {
        self.snd_nxt
    }
    pub fn snd_max(&self) -> u64 {
        self.snd_max
    }
    pub fn dupacks(&self) -> u32 {
        self.dupacks
    }
    pub fn state(&self) -> CcState {
        self.state
    }
    pub fn rtt(&self) -> &RttEstimator {
        &self.rtt
    }
    pub fn recover_mark(&self) -> u64 {
        self.recover
    }
    pub fn retransmissions(&self) -> u64 {
        self.retx_count
    }
    pub fn timeouts(&self) -> u64 {
        self.timeout_count
    }
    pub fn protocol_violations(&self) -> u64 {
        self.protocol_violations
    }
    /// New-data emissions that would have exceeded the window. Always zero
    /// unless the window logic is broken.
    pub fn window_violations(&self) -> u64 {
        self.window_violations
    }
    pub fn base_rtt(&self) -> Option<SimTime> {
        self.vegas.base_rtt
    }
    pub fn bwe(&self) -> Option<f64> {
        self.westwood.bwe
    }
    pub fn rtt_min(&self) -> Option<SimTime> {
        self.westwood.rtt_min
    }
    pub fn scoreboard(&self) -> &RangeSet {
        &self.scoreboard
    }
    /// Every window reduction so far, with its time.
    pub fn cuts(&self) -> &[CutRecord] {
        &self.cuts
    }

    /// Pairs of consecutive congestion-signalled reductions (timeouts
    /// excluded) closer together than the smoothed RTT at the later one.
    pub fn cuts_within_rtt(&self) -> u64 {
        let mut last: Option<SimTime> = None;
        let mut n = 0;
        for c in self.cuts.iter().filter(|c| c.kind != CutKind::Timeout) {
            if let (Some(prev), Some(srtt)) = (last, c.srtt) {
                if c.at - prev < srtt {
                    n += 1;
                }
            }
            last = Some(c.at);
        }
        n
    }

    /// Bytes sent and not yet cumulatively acknowledged.
    pub fn flight(&self) -> u64 {
        self.snd_nxt - self.snd_una
    }

    /// Retransmission timer as `(generation, deadline)`.
    pub fn timer(&self) -> (u64, Option<SimTime>) {
        (self.timer_gen, self.timer_deadline)
    }

    /// Current RTO, used for RTT estimation tests and the timer.
    pub fn rto(&self) -> SimTime {
        self.rtt.rto()
    }

    /// Forces congestion state; intended for tests and scripted scenarios.
    pub fn set_window(&mut self, cwnd: u64, ssthresh: u64, state: CcState) {
        self.cwnd = cwnd;
        self.ssthresh = ssthresh;
        self.state = state;
    }

    /// Seeds the Westwood estimator; intended for tests.
    pub fn set_westwood_estimate(&mut self, bwe: f64, rtt_min: SimTime) {
        self.westwood.bwe = Some(bwe);
        self.westwood.rtt_min = Some(rtt_min);
    }

    /// Seeds the Vegas RTT state; intended for tests.
    pub fn set_vegas_rtts(&mut self, base_rtt: SimTime, rtt: SimTime) {
        self.vegas.base_rtt = Some(base_rtt);
        self.vegas.latest_rtt = Some(rtt);
        self.vegas.epoch_min = Some(rtt);
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        let mss = self.cfg.mss;
        if self.cwnd < mss {
            return Err(format!("cwnd {} < 1 MSS", self.cwnd));
        }
        if self.ssthresh < 2 * mss {
            return Err(format!("ssthresh {} < 2 MSS", self.ssthresh));
        }
        if !(self.snd_una <= self.snd_nxt && self.snd_nxt <= self.snd_max) {
            return Err(format!(
                "sequence order broken: una {} nxt {} max {}",
                self.snd_una, self.snd_nxt, self.snd_max
            ));
        }
        if self.rtt.rto() < self.cfg.rto_min {
            return Err(format!("rto {} below minimum", self.rtt.rto()));
        }
        if self.variant == Variant::Tahoe && self.state == CcState::FastRecovery {
            return Err("Tahoe in fast recovery".into());
        }
        Ok(())
    }

    fn new_len(&self, seq: u64) -> Option<u64> {
        match self.cfg.app_bytes {
            Some(total) if seq >= total => None,
            Some(total) => Some((total - seq).min(self.cfg.mss)),
            None => Some(self.cfg.mss),
        }
    }

    fn seg_len(&self, seq: u64) -> Option<u64> {
        self.segs.get(&seq).map(|r| r.len).or_else(|| self.new_len(seq))
    }

    fn arm_timer(&mut self, now: SimTime) {
        self.timer_gen += 1;
        self.timer_deadline = Some(now + self.rtt.rto());
    }

    fn stop_timer(&mut self) {
        if self.timer_deadline.is_some() {
            self.timer_gen += 1;
            self.timer_deadline = None;
        }
    }

    fn send_segment(&mut self, seq: u64, now: SimTime, out: &mut Vec<Emission>) {
        let Some(len) = self.seg_len(seq) else { return };
        let retransmission = seq < self.snd_max;
        self.segs.insert(
            seq,
            SegRecord {
                len,
                sent_at: now,
                retransmitted: retransmission,
            },
        );
        if retransmission {
            self.retx_count += 1;
        } else {
            let limit = if self.variant == Variant::Sack && self.state == CcState::FastRecovery {
                self.cfg.rwnd()
            } else {
                self.usable_window()
            };
            if self.flight() + len > limit {
                self.window_violations += 1;
            }
        }
        if seq == self.snd_nxt {
            self.snd_nxt += len;
        }
        self.snd_max = self.snd_max.max(seq + len);
        if self.timer_deadline.is_none() {
            self.arm_timer(now);
        }
        out.push(Emission {
            seq,
            len,
            retransmission,
        });
    }

    fn usable_window(&self) -> u64 {
        self.cwnd.min(self.cfg.rwnd())
    }

    /// Emits new segments while they fit under `min(cwnd, rwnd)`.
    pub fn send_window(&mut self, now: SimTime) -> Vec<Emission> {
        let mut out = Vec::new();
        self.fill(now, &mut out);
        out
    }

    fn fill(&mut self, now: SimTime, out: &mut Vec<Emission>) {
        if self.variant == Variant::Sack && self.state == CcState::FastRecovery {
            self.sack_fill(now, out);
            return;
        }
        loop {
            let seq = self.snd_nxt;
            let Some(len) = self.seg_len(seq) else { break };
            if self.flight() + len > self.usable_window() {
                break;
            }
            self.send_segment(seq, now, out);
        }
    }

    /// Bytes believed to be in the network during SACK recovery.
    fn pipe(&self) -> u64 {
        let highest = self.scoreboard.highest().unwrap_or(self.snd_una);
        self.segs
            .range(self.snd_una..self.snd_nxt)
            .filter(|(s, r)| !self.scoreboard.contains(**s, **s + r.len))
            .filter(|(s, r)| {
                let lost = **s + r.len <= highest;
                !lost || (r.retransmitted && r.sent_at >= self.recovery_started)
            })
            .map(|(_, r)| r.len)
            .sum()
    }

    fn next_hole(&self, now: SimTime) -> Option<u64> {
        let highest = self.scoreboard.highest()?;
        let srtt = self.rtt.srtt().unwrap_or(self.rtt.rto());
        self.segs
            .range(self.snd_una..self.snd_nxt)
            .find(|(s, r)| {
                let end = **s + r.len;
                end <= highest
                    && !self.scoreboard.contains(**s, end)
                    && (!(r.retransmitted && r.sent_at >= self.recovery_started) || now - r.sent_at > srtt)
            })
            .map(|(s, _)| *s)
    }

    fn sack_fill(&mut self, now: SimTime, out: &mut Vec<Emission>) {
        let mss = self.cfg.mss;
        loop {
            if self.pipe() + mss > self.cwnd {
                break;
            }
            if let Some(seq) = self.next_hole(now) {
                self.send_segment(seq, now, out);
                continue;
            }
            let seq = self.snd_nxt;
            let Some(len) = self.seg_len(seq) else { break };
            if self.flight() + len > self.cfg.rwnd() {
                break;
            }
            self.send_segment(seq, now, out);
        }
    }

    /// Merges SACK blocks into the scoreboard and returns the holes below
    /// the highest SACKed byte.
    pub fn sack_update(&mut self, blocks: &[(u64, u64)]) -> Vec<(u64, u64)> {
        for &(a, b) in blocks {
            if b > self.snd_una && b <= self.snd_max {
                self.scoreboard.insert(a.max(self.snd_una), b);
            }
        }
        self.scoreboard.remove_below(self.snd_una);
        self.scoreboard.holes(self.snd_una)
    }

    /// Low-pass bandwidth filter fed by every ACK.
    pub fn westwood_bwe_update(&mut self, acked_bytes: u64, now: SimTime) -> Option<f64> {
        let w = &mut self.westwood;
        if let Some(last) = w.last_ack_at {
            let gap = now - last;
            if gap > 0.0 {
                let sample = acked_bytes as f64 / gap;
                let g = self.cfg.westwood_gain;
                w.bwe = Some(match w.bwe {
                    None => sample,
                    Some(bwe) => (1.0 - g) * bwe + g * sample,
                });
                w.last_ack_at = Some(now);
            }
        } else {
            w.last_ack_at = Some(now);
        }
        w.bwe
    }

    fn on_rtt_sample(&mut self, sample: SimTime, retransmitted: bool) {
        self.rtt.sample(sample, retransmitted);
        if retransmitted {
            return;
        }
        let min = |a: Option<f64>| Some(a.map_or(sample, |m: f64| m.min(sample)));
        self.vegas.base_rtt = min(self.vegas.base_rtt);
        self.vegas.epoch_min = min(self.vegas.epoch_min);
        self.vegas.latest_rtt = Some(sample);
        self.westwood.rtt_min = min(self.westwood.rtt_min);
    }

    /// Processes a cumulative ACK with optional SACK blocks.
    pub fn on_ack(&mut self, ack: u64, sack_blocks: &[(u64, u64)], now: SimTime) -> Vec<Emission> {
        let mut out = Vec::new();
        if ack > self.snd_max {
            self.protocol_violations += 1;
            return out;
        }
        if self.variant == Variant::Sack {
            self.scoreboard.remove_below(ack.max(self.snd_una));
            self.sack_update(sack_blocks);
        }
        if ack > self.snd_una {
            self.on_new_ack(ack, now, &mut out);
        } else if ack == self.snd_una && self.snd_max > self.snd_una {
            self.on_dupack(now, &mut out);
        }
        self.fill(now, &mut out);
        out
    }

    fn on_new_ack(&mut self, ack: u64, now: SimTime, out: &mut Vec<Emission>) {
        let mss = self.cfg.mss;
        let acked = ack - self.snd_una;

        let sample = self
            .segs
            .range(..ack)
            .rev()
            .find(|(s, r)| **s + r.len <= ack)
            .map(|(_, r)| (now - r.sent_at, r.retransmitted));
        let covered: Vec<u64> = self.segs.range(..ack).map(|(s, _)| *s).collect();
        for s in covered {
            self.segs.remove(&s);
        }
        self.snd_una = ack;
        self.snd_nxt = self.snd_nxt.max(ack);
        if let Some((rtt, retx)) = sample {
            self.on_rtt_sample(rtt, retx);
        }
        self.westwood_bwe_update(acked, now);
        self.dupacks = 0;

        match self.state {
            CcState::FastRecovery => {
                let partial = ack < self.recover && matches!(self.variant, Variant::NewReno | Variant::Sack);
                if partial {
                    if self.variant == Variant::NewReno {
                        self.cwnd = (self.cwnd.saturating_sub(acked) + mss).max(mss);
                        self.send_segment(self.snd_una, now, out);
                    }
                } else {
                    self.cwnd = self.ssthresh;
                    self.state = CcState::CongestionAvoidance;
                }
            }
            CcState::SlowStart => {
                self.cwnd += mss;
                if self.cwnd >= self.ssthresh {
                    self.state = CcState::CongestionAvoidance;
                }
            }
            CcState::CongestionAvoidance => {
                if self.variant != Variant::Vegas {
                    self.cwnd += (mss * mss / self.cwnd).max(1);
                }
            }
        }

        if self.variant == Variant::Vegas {
            self.vegas_on_new_ack(ack, now, out);
        }

        if self.snd_una >= self.snd_max {
            self.stop_timer();
        } else {
            self.arm_timer(now);
        }
    }

    fn vegas_on_new_ack(&mut self, ack: u64, now: SimTime, out: &mut Vec<Emission>) {
        if ack >= self.vegas.epoch_mark {
            if self.state != CcState::FastRecovery {
                self.vegas_cwnd_adjust(now);
            }
            self.vegas.epoch_mark = self.snd_nxt;
            self.vegas.epoch_min = None;
        }
        if self.vegas.fine_checks > 0 {
            self.vegas.fine_checks -= 1;
            if let Some(r) = self.segs.get(&self.snd_una) {
                if now - r.sent_at > self.rtt.fine_timeout() {
                    self.send_segment(self.snd_una, now, out);
                }
            }
        }
    }

    /// Once-per-RTT Vegas window adjustment from the expected/actual
    /// throughput gap. Returns the decision taken, if RTT data was available.
    pub fn vegas_cwnd_adjust(&mut self, now: SimTime) -> Option<VegasDecision> {
        let mss = self.cfg.mss;
        let base = self.vegas.base_rtt?;
        let rtt = self.vegas.epoch_min.or(self.vegas.latest_rtt)?;
        let diff = vegas_diff(self.cwnd, base, rtt, mss);
        match self.state {
            CcState::SlowStart => {
                if diff > self.cfg.vegas_gamma {
                    self.ssthresh = self.cwnd.max(2 * mss);
                    self.state = CcState::CongestionAvoidance;
                }
                Some(VegasDecision::Hold)
            }
            CcState::CongestionAvoidance => {
                if diff < self.cfg.vegas_alpha {
                    self.cwnd += mss;
                    Some(VegasDecision::Increase)
                } else if diff > self.cfg.vegas_beta {
                    if self.cwnd > 2 * mss && !self.vegas_cut_recent(now) {
                        self.cwnd -= mss;
                        self.vegas.last_cut = Some(now);
                        self.log_cut(now, CutKind::VegasAvoidance);
                    }
                    Some(VegasDecision::Decrease)
                } else {
                    Some(VegasDecision::Hold)
                }
            }
            CcState::FastRecovery => None,
        }
    }

    fn vegas_cut_recent(&self, now: SimTime) -> bool {
        let window = self.rtt.srtt().unwrap_or(0.0);
        self.vegas.last_cut.is_some_and(|t| now - t < window)
    }

    fn on_dupack(&mut self, now: SimTime, out: &mut Vec<Emission>) {
        let mss = self.cfg.mss;
        self.dupacks += 1;
        self.westwood_bwe_update(mss, now);
        if self.state == CcState::FastRecovery {
            if self.variant != Variant::Sack {
                self.cwnd += mss;
            }
            return;
        }
        let fire = match self.variant {
            Variant::Vegas => {
                self.dupacks >= 2
                    && (self.dupacks >= 3
                        || self
                            .segs
                            .get(&self.snd_una)
                            .is_some_and(|r| now - r.sent_at > self.rtt.fine_timeout()))
            }
            _ => self.dupacks == 3,
        };
        if fire {
            self.fast_retransmit(now, out);
        }
    }

    /// Loss recovery on the variant's duplicate-ACK threshold.
    pub fn fast_retransmit(&mut self, now: SimTime, out: &mut Vec<Emission>) {
        let mss = self.cfg.mss;
        let half = (self.flight() / 2).max(2 * mss);
        match self.variant {
            Variant::Reno | Variant::NewReno | Variant::Sack => {
                self.ssthresh = half;
                self.cwnd = self.ssthresh + 3 * mss;
                self.enter_recovery(now);
                self.log_cut(now, CutKind::FastRetransmit);
            }
            Variant::Tahoe => {
                self.ssthresh = half;
                self.cwnd = mss;
                self.state = CcState::SlowStart;
                self.log_cut(now, CutKind::FastRetransmit);
            }
            Variant::Westwood => {
                self.ssthresh = match (self.westwood.bwe, self.westwood.rtt_min) {
                    (Some(bwe), Some(rtt_min)) => westwood_ssthresh(bwe, rtt_min, mss),
                    _ => half,
                };
                self.cwnd = self.cwnd.min(self.ssthresh);
                self.enter_recovery(now);
                self.log_cut(now, CutKind::FastRetransmit);
            }
            Variant::Vegas => {
                if !self.vegas_cut_recent(now) {
                    self.cwnd = (self.cwnd * 3 / 4).max(2 * mss);
                    self.vegas.last_cut = Some(now);
                    self.log_cut(now, CutKind::FastRetransmit);
                }
                self.ssthresh = self.cwnd.max(2 * mss);
                self.enter_recovery(now);
                self.vegas.fine_checks = 2;
            }
        }
        self.send_segment(self.snd_una, now, out);
    }

    fn log_cut(&mut self, at: SimTime, kind: CutKind) {
        self.cuts.push(CutRecord {
            at,
            kind,
            srtt: self.rtt.srtt(),
        });
    }

    fn enter_recovery(&mut self, now: SimTime) {
        self.state = CcState::FastRecovery;
        self.recover = self.snd_max;
        self.recovery_started = now;
    }

    /// Retransmission timer expiry. Stale generations are ignored.
    pub fn on_timeout(&mut self, gen: u64, now: SimTime) -> Vec<Emission> {
        let mut out = Vec::new();
        if gen != self.timer_gen || self.timer_deadline.is_none() || self.snd_una >= self.snd_max {
            return out;
        }
        let mss = self.cfg.mss;
        self.ssthresh = (self.flight() / 2).max(2 * mss);
        self.cwnd = mss;
        self.state = CcState::SlowStart;
        self.dupacks = 0;
        self.timeout_count += 1;
        self.log_cut(now, CutKind::Timeout);
        self.rtt.backoff();
        self.scoreboard.clear();
        self.recover = self.snd_max;
        if self.variant == Variant::Vegas {
            self.vegas.base_rtt = None;
            self.vegas.epoch_min = None;
            self.vegas.fine_checks = 2;
        }
        self.snd_nxt = self.snd_una;
        self.send_segment(self.snd_una, now, &mut out);
        self.arm_timer(now);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MSS: u64 = 1000;

    fn sender(v: Variant) -> TcpSender {
        TcpSender::new(v, TcpConfig::default())
    }

    /// Puts `n` segments in flight with the window opened enough to send them.
    fn with_flight(v: Variant, n: u64) -> TcpSender {
        let mut s = sender(v);
        s.set_window(n * MSS, 64 * MSS, CcState::CongestionAvoidance);
        let out = s.send_window(0.0);
        assert_eq!(out.len() as u64, n);
        s
    }

    fn dupacks(s: &mut TcpSender, n: u32, now: f64) -> Vec<Emission> {
        let mut all = Vec::new();
        for _ in 0..n {
            all.extend(s.on_ack(s.snd_una(), &[], now));
        }
        all
    }

    #[test]
    fn initial_window_two_segments() {
        let mut s = sender(Variant::Reno);
        let out = s.send_window(0.0);
        assert_eq!(out.len(), 2);
        assert_eq!(
            out[1],
            Emission {
                seq: 1000,
                len: 1000,
                retransmission: false
            }
        );
    }

    #[test]
    fn full_window_sends_nothing() {
        let mut s = with_flight(Variant::Reno, 8);
        assert!(s.send_window(0.0).is_empty());
    }

    #[test]
    fn receiver_limited() {
        let cfg = TcpConfig {
            rwnd_segments: 1,
            ..TcpConfig::default()
        };
        let mut s = TcpSender::new(Variant::Reno, cfg);
        s.set_window(8 * MSS, 64 * MSS, CcState::CongestionAvoidance);
        assert_eq!(s.send_window(0.0).len(), 1);
    }

    #[test]
    fn tail_segment_shorter() {
        let cfg = TcpConfig {
            app_bytes: Some(2500),
            ..TcpConfig::default()
        };
        let mut s = TcpSender::new(Variant::Reno, cfg);
        s.set_window(8 * MSS, 64 * MSS, CcState::CongestionAvoidance);
        let out = s.send_window(0.0);
        assert_eq!(out.iter().map(|e| e.len).collect::<Vec<_>>(), vec![1000, 1000, 500]);
    }

    #[test]
    fn slow_start_growth() {
        let mut s = TcpSender::new(
            Variant::Reno,
            TcpConfig {
                initial_cwnd_segments: 1,
                ..TcpConfig::default()
            },
        );
        s.send_window(0.0);
        s.on_ack(1000, &[], 0.1);
        assert_eq!(s.cwnd(), 2 * MSS);
    }

    #[test]
    fn congestion_avoidance_growth() {
        let mut s = with_flight(Variant::Reno, 4);
        s.on_ack(1000, &[], 0.1);
        assert_eq!(s.cwnd(), 4250);
    }

    #[test]
    fn reno_fast_retransmit() {
        let mut s = with_flight(Variant::Reno, 8);
        let out = dupacks(&mut s, 3, 0.1);
        assert_eq!(s.ssthresh(), 4000);
        assert_eq!(s.cwnd(), 7000);
        assert_eq!(s.state(), CcState::FastRecovery);
        assert_eq!(
            out[0],
            Emission {
                seq: 0,
                len: 1000,
                retransmission: true
            }
        );
        // Inflation, then deflation on the full ACK.
        dupacks(&mut s, 1, 0.11);
        assert_eq!(s.cwnd(), 8000);
        s.on_ack(8000, &[], 0.2);
        assert_eq!(s.cwnd(), 4000);
        assert_eq!(s.state(), CcState::CongestionAvoidance);
    }

    #[test]
    fn tahoe_fast_retransmit() {
        let mut s = with_flight(Variant::Tahoe, 8);
        dupacks(&mut s, 3, 0.1);
        assert_eq!(s.ssthresh(), 4000);
        assert_eq!(s.cwnd(), 1000);
        assert_eq!(s.state(), CcState::SlowStart);
        // No refire on later dupacks.
        dupacks(&mut s, 3, 0.1);
        assert_eq!(s.retransmissions(), 1);
    }

    #[test]
    fn westwood_fast_retransmit() {
        let mut s = with_flight(Variant::Westwood, 12);
        s.set_westwood_estimate(100_000.0, 0.1);
        // Dupacks feed the filter; pin the estimate right before the third.
        dupacks(&mut s, 2, 0.1);
        s.set_westwood_estimate(100_000.0, 0.1);
        let mut out = Vec::new();
        s.fast_retransmit(0.1, &mut out);
        assert_eq!(s.ssthresh(), 10_000);
        assert_eq!(s.cwnd(), 10_000);
        assert_eq!(westwood_ssthresh(100_000.0, 0.1, MSS), 10 * MSS);
    }

    #[test]
    fn vegas_fires_on_second_dupack_when_overdue() {
        let mut s = with_flight(Variant::Vegas, 8);
        s.rtt.sample(0.05, false);
        // fine timeout = 0.05 + 4 * 0.025 = 0.15
        dupacks(&mut s, 2, 0.2);
        assert_eq!(s.retransmissions(), 1);
        assert_eq!(s.cwnd(), 6000);
        assert_eq!(s.state(), CcState::FastRecovery);
    }

    #[test]
    fn vegas_waits_for_third_when_not_overdue() {
        let mut s = with_flight(Variant::Vegas, 8);
        s.rtt.sample(0.05, false);
        dupacks(&mut s, 2, 0.1);
        assert_eq!(s.retransmissions(), 0);
        dupacks(&mut s, 1, 0.1);
        assert_eq!(s.retransmissions(), 1);
    }

    #[test]
    fn vegas_adjust_examples() {
        assert!((vegas_diff(10 * MSS, 0.1, 0.125, MSS) - 2.0).abs() < 1e-12);
        assert_eq!(vegas_diff(10 * MSS, 0.1, 0.1, MSS), 0.0);
        assert!((vegas_diff(10 * MSS, 0.1, 0.2, MSS) - 5.0).abs() < 1e-12);

        let mut s = sender(Variant::Vegas);
        s.set_window(10 * MSS, 64 * MSS, CcState::CongestionAvoidance);
        s.set_vegas_rtts(0.1, 0.125);
        assert_eq!(s.vegas_cwnd_adjust(1.0), Some(VegasDecision::Hold));
        assert_eq!(s.cwnd(), 10 * MSS);

        s.set_vegas_rtts(0.1, 0.1);
        assert_eq!(s.vegas_cwnd_adjust(2.0), Some(VegasDecision::Increase));
        assert_eq!(s.cwnd(), 11 * MSS);

        s.set_window(10 * MSS, 64 * MSS, CcState::CongestionAvoidance);
        s.set_vegas_rtts(0.1, 0.2);
        assert_eq!(s.vegas_cwnd_adjust(3.0), Some(VegasDecision::Decrease));
        assert_eq!(s.cwnd(), 9 * MSS);
    }

    #[test]
    fn westwood_filter() {
        let mut s = TcpSender::new(
            Variant::Westwood,
            TcpConfig {
                westwood_gain: 1.0,
                ..TcpConfig::default()
            },
        );
        s.westwood_bwe_update(1000, 0.0);
        assert_eq!(s.bwe(), None);
        s.westwood_bwe_update(1000, 0.01);
        assert!((s.bwe().unwrap() - 100_000.0).abs() < 1e-6);
        for i in 2..20 {
            s.westwood_bwe_update(1000, i as f64 * 0.01);
        }
        assert!((s.bwe().unwrap() - 100_000.0).abs() < 1e-6);
        // Zero gap is skipped.
        s.westwood_bwe_update(5000, 0.19);
        assert!((s.bwe().unwrap() - 100_000.0).abs() < 1e-6);

        let mut frozen = TcpSender::new(
            Variant::Westwood,
            TcpConfig {
                westwood_gain: 0.0,
                ..TcpConfig::default()
            },
        );
        frozen.westwood_bwe_update(1000, 0.0);
        frozen.westwood_bwe_update(1000, 0.01);
        let first = frozen.bwe().unwrap();
        frozen.westwood_bwe_update(1000, 0.011);
        assert_eq!(frozen.bwe().unwrap(), first);
    }

    #[test]
    fn timeout_resets_and_backs_off() {
        for v in Variant::ALL {
            let mut s = with_flight(v, 8);
            let (gen, deadline) = s.timer();
            assert_eq!(deadline, Some(1.0));
            let out = s.on_timeout(gen, 1.0);
            assert_eq!(
                out,
                vec![Emission {
                    seq: 0,
                    len: 1000,
                    retransmission: true
                }]
            );
            assert_eq!((s.ssthresh(), s.cwnd()), (4000, 1000), "{v}");
            assert_eq!(s.state(), CcState::SlowStart);
            assert_eq!(s.rto(), 2.0);
            let (gen, _) = s.timer();
            s.on_timeout(gen, 3.0);
            assert_eq!(s.rto(), 4.0);
            assert_eq!(s.timeouts(), 2);
        }
    }

    #[test]
    fn stale_timer_ignored() {
        let mut s = with_flight(Variant::Reno, 4);
        let (gen, _) = s.timer();
        s.on_ack(1000, &[], 0.1);
        assert!(s.on_timeout(gen, 1.0).is_empty());
        assert_eq!(s.timeouts(), 0);
    }

    #[test]
    fn newreno_partial_ack() {
        let mut s = with_flight(Variant::NewReno, 8);
        dupacks(&mut s, 3, 0.1);
        assert_eq!(s.recover_mark(), 8000);
        let out = s.on_ack(3000, &[], 0.2);
        assert_eq!(s.state(), CcState::FastRecovery);
        assert!(out.contains(&Emission {
            seq: 3000,
            len: 1000,
            retransmission: true
        }));
        s.on_ack(8000, &[], 0.3);
        assert_eq!(s.state(), CcState::CongestionAvoidance);
        assert_eq!(s.cwnd(), s.ssthresh());
    }

    #[test]
    fn reno_exits_on_partial_ack() {
        let mut s = with_flight(Variant::Reno, 8);
        dupacks(&mut s, 3, 0.1);
        s.on_ack(3000, &[], 0.2);
        assert_eq!(s.state(), CcState::CongestionAvoidance);
    }

    #[test]
    fn sack_scoreboard_holes() {
        let mut s = with_flight(Variant::Sack, 4);
        s.on_ack(1000, &[], 0.05);
        let holes = s.sack_update(&[(2000, 3000)]);
        assert_eq!(holes, vec![(1000, 2000)]);
        s.sack_update(&[(3000, 4000)]);
        assert_eq!(s.scoreboard().ranges(), &[(2000, 4000)]);
        s.sack_update(&[(2000, 4000), (2000, 3000)]);
        assert_eq!(s.scoreboard().ranges(), &[(2000, 4000)]);
        assert!(s.sack_update(&[]).len() == 1);
    }

    #[test]
    fn sack_recovery_retransmits_each_hole_once() {
        let mut s = with_flight(Variant::Sack, 8);
        // Segments 0 and 2 lost; the rest SACKed.
        let mut retx = Vec::new();
        for blocks in [
            vec![(1000, 2000)],
            vec![(1000, 2000), (3000, 4000)],
            vec![(1000, 2000), (3000, 5000)],
        ] {
            retx.extend(s.on_ack(0, &blocks, 0.1).into_iter().filter(|e| e.retransmission));
        }
        assert_eq!(s.state(), CcState::FastRecovery);
        assert!(retx.iter().any(|e| e.seq == 0));
        assert!(retx.iter().any(|e| e.seq == 2000));
        let mut seqs: Vec<u64> = retx.iter().map(|e| e.seq).collect();
        seqs.dedup();
        assert_eq!(seqs.len(), retx.len());
    }

    #[test]
    fn ack_beyond_sent_is_violation() {
        let mut s = with_flight(Variant::Reno, 2);
        assert!(s.on_ack(99_000, &[], 0.1).is_empty());
        assert_eq!(s.protocol_violations(), 1);
        assert_eq!(s.snd_una(), 0);
    }

    #[test]
    fn karn_no_sample_from_retransmission() {
        let mut s = with_flight(Variant::Reno, 1);
        let (gen, _) = s.timer();
        s.on_timeout(gen, 1.0);
        s.on_ack(1000, &[], 1.05);
        assert_eq!(s.rtt().srtt(), None);
    }
}
