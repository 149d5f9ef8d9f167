//! Per-flow accumulators and the per-run report row.

use std::fmt::Write as _;

use crate::sim::SimTime;
use crate::tcp::Variant;

#[derive(Debug, Clone, PartialEq)]
pub struct FlowMetrics {
    pub flow: usize,
    pub variant: Variant,
    /// Payload bytes of every delivered DATA packet, duplicates included.
    pub bytes_delivered: u64,
    /// Payload bytes delivered for the first time.
    pub unique_bytes_delivered: u64,
    pub packets_delivered: u64,
    pub packets_sent: u64,
    pub retransmissions: u64,
    pub timeouts: u64,
    pub delay_sum: f64,
    pub delay_count: u64,
    pub rtt_sum: f64,
    pub rtt_count: u64,
    pub in_order: u64,
    pub received: u64,
    pub start: SimTime,
    pub end: SimTime,
}

impl FlowMetrics {
    pub fn new(flow: usize, variant: Variant, start: SimTime, end: SimTime) -> Self {
        Self {
            flow,
            variant,
            bytes_delivered: 0,
            unique_bytes_delivered: 0,
            packets_delivered: 0,
            packets_sent: 0,
            retransmissions: 0,
            timeouts: 0,
            delay_sum: 0.0,
            delay_count: 0,
            rtt_sum: 0.0,
            rtt_count: 0,
            in_order: 0,
            received: 0,
            start,
            end,
        }
    }

    /// Records a DATA delivery; `unique` is false for bytes already received.
    pub fn record_delivery(&mut self, payload: u64, unique: bool, delay: SimTime) {
        self.bytes_delivered += payload;
        if unique {
            self.unique_bytes_delivered += payload;
        }
        self.packets_delivered += 1;
        self.delay_sum += delay;
        self.delay_count += 1;
    }

    pub fn record_rtt(&mut self, rtt: SimTime) {
        self.rtt_sum += rtt;
        self.rtt_count += 1;
    }

    fn duration(&self) -> Option<f64> {
        let d = self.end - self.start;
        (d > 0.0).then_some(d)
    }

    pub fn mean_rtt(&self) -> Option<f64> {
        (self.rtt_count > 0).then(|| self.rtt_sum / self.rtt_count as f64)
    }
}

/// Delivered payload bytes per second, duplicates included.
pub fn throughput(fm: &FlowMetrics) -> Option<f64> {
    fm.duration().map(|d| fm.bytes_delivered as f64 / d)
}

/// Delivered DATA packets per second, duplicates included.
pub fn packet_rate(fm: &FlowMetrics) -> Option<f64> {
    fm.duration().map(|d| fm.packets_delivered as f64 / d)
}

/// First-delivery payload bytes per second.
pub fn goodput(fm: &FlowMetrics) -> Option<f64> {
    fm.duration().map(|d| fm.unique_bytes_delivered as f64 / d)
}

pub fn mean_e2e_delay(fm: &FlowMetrics) -> Option<f64> {
    (fm.delay_count > 0).then(|| fm.delay_sum / fm.delay_count as f64)
}

/// Jain's fairness index; `None` for no samples or all zeros.
pub fn jain_index(xs: &[f64]) -> Option<f64> {
    let sum: f64 = xs.iter().sum();
    let sq: f64 = xs.iter().map(|x| x * x).sum();
    if xs.is_empty() || sq == 0.0 {
        return None;
    }
    Some(sum * sum / (xs.len() as f64 * sq))
}

pub fn in_order_ratio(in_order: u64, total: u64) -> Option<f64> {
    (total > 0).then(|| in_order as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RttBucket {
    pub lo: f64,
    pub hi: f64,
    pub flows: usize,
    pub mean_throughput: f64,
}

/// (mean RTT, throughput) of every flow that has both.
pub fn rtt_points(flows: &[FlowMetrics]) -> Vec<(f64, f64)> {
    flows
        .iter()
        .filter_map(|f| Some((f.mean_rtt()?, throughput(f)?)))
        .collect()
}

/// Groups (RTT, throughput) points into `n` equal-width RTT buckets and
/// averages the throughput in each. Empty buckets are omitted.
pub fn rtt_buckets(points: &[(f64, f64)], n: usize) -> Vec<RttBucket> {
    if points.is_empty() || n == 0 {
        return Vec::new();
    }
    let lo = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let width = ((hi - lo) / n as f64).max(f64::MIN_POSITIVE);
    let mut acc = vec![(0usize, 0.0f64); n];
    for &(rtt, tp) in points {
        let i = (((rtt - lo) / width) as usize).min(n - 1);
        acc[i].0 += 1;
        acc[i].1 += tp;
    }
    acc.into_iter()
        .enumerate()
        .filter(|(_, (c, _))| *c > 0)
        .map(|(i, (c, s))| RttBucket {
            lo: lo + width * i as f64,
            hi: lo + width * (i + 1) as f64,
            flows: c,
            mean_throughput: s / c as f64,
        })
        .collect()
}

/// Per-flow companion of `metrics.csv`, used for the RTT-bucketed view.
pub const FLOWS_HEADER: &str =
    "scenario,seed,variant,mobility_ratio,v_max,flow,mean_rtt_s,throughput_pkts,throughput_bytes";

pub const METRICS_HEADER: &str = "scenario,seed,variant,mobility_ratio,v_max,throughput_pkts,throughput_bytes,goodput_bytes,mean_delay_s,fairness_jain,ctrl_overhead_reactive,ctrl_overhead_all,broken_links,in_order_ratio,timeouts,retransmissions";

/// One row of `metrics.csv`. `None` means undefined and is written as `NA`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub variant: Variant,
    pub mobility_ratio: f64,
    pub v_max: f64,
    pub throughput_pkts: Option<f64>,
    pub throughput_bytes: Option<f64>,
    pub goodput_bytes: Option<f64>,
    pub mean_delay_s: Option<f64>,
    pub fairness_jain: Option<f64>,
    pub ctrl_overhead_reactive: Option<f64>,
    pub ctrl_overhead_all: Option<f64>,
    pub broken_links: u64,
    pub in_order_ratio: Option<f64>,
    pub timeouts: u64,
    pub retransmissions: u64,
}

/// Run-level traffic figures aggregated over flows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficSummary {
    pub throughput_pkts: Option<f64>,
    pub throughput_bytes: Option<f64>,
    pub goodput_bytes: Option<f64>,
    pub mean_delay_s: Option<f64>,
    pub fairness_jain: Option<f64>,
    pub in_order_ratio: Option<f64>,
    pub timeouts: u64,
    pub retransmissions: u64,
}

/// Sums flows over the shared measurement window. With no flows every rate
/// is undefined.
pub fn summarize(flows: &[FlowMetrics]) -> TrafficSummary {
    let duration = flows.first().map(|f| f.end - f.start).filter(|d| *d > 0.0);
    let rate = |x: u64| duration.map(|d| x as f64 / d);
    let delays: (f64, u64) = flows
        .iter()
        .fold((0.0, 0), |a, f| (a.0 + f.delay_sum, a.1 + f.delay_count));
    let per_flow: Vec<f64> = flows.iter().filter_map(throughput).collect();
    TrafficSummary {
        throughput_pkts: rate(flows.iter().map(|f| f.packets_delivered).sum()),
        throughput_bytes: rate(flows.iter().map(|f| f.bytes_delivered).sum()),
        goodput_bytes: rate(flows.iter().map(|f| f.unique_bytes_delivered).sum()),
        mean_delay_s: (delays.1 > 0).then(|| delays.0 / delays.1 as f64),
        fairness_jain: jain_index(&per_flow),
        in_order_ratio: in_order_ratio(
            flows.iter().map(|f| f.in_order).sum(),
            flows.iter().map(|f| f.received).sum(),
        ),
        timeouts: flows.iter().map(|f| f.timeouts).sum(),
        retransmissions: flows.iter().map(|f| f.retransmissions).sum(),
    }
}

fn push_opt(out: &mut String, v: Option<f64>) {
    match v {
        Some(x) if x.is_finite() => write!(out, ",{x}").unwrap(),
        _ => out.push_str(",NA"),
    }
}

impl RunReport {
    pub fn csv_row(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{}",
            self.scenario, self.seed, self.variant, self.mobility_ratio, self.v_max
        );
        push_opt(&mut s, self.throughput_pkts);
        push_opt(&mut s, self.throughput_bytes);
        push_opt(&mut s, self.goodput_bytes);
        push_opt(&mut s, self.mean_delay_s);
        push_opt(&mut s, self.fairness_jain);
        push_opt(&mut s, self.ctrl_overhead_reactive);
        push_opt(&mut s, self.ctrl_overhead_all);
        write!(s, ",{}", self.broken_links).unwrap();
        push_opt(&mut s, self.in_order_ratio);
        write!(s, ",{},{}", self.timeouts, self.retransmissions).unwrap();
        s
    }

    /// One `flows.csv` row per flow, keyed like the run's own row.
    pub fn flow_rows(&self, flows: &[FlowMetrics]) -> Vec<String> {
        flows
            .iter()
            .map(|f| {
                let mut s = format!(
                    "{},{},{},{},{},{}",
                    self.scenario, self.seed, self.variant, self.mobility_ratio, self.v_max, f.flow
                );
                push_opt(&mut s, f.mean_rtt());
                push_opt(&mut s, packet_rate(f));
                push_opt(&mut s, throughput(f));
                s
            })
            .collect()
    }

    /// Throughput in delivered packets over the whole window.
    pub fn packets_delivered(&self, window: f64) -> Option<f64> {
        self.throughput_pkts.map(|r| r * window)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fm(bytes: u64, unique: u64, start: f64, end: f64) -> FlowMetrics {
        let mut f = FlowMetrics::new(0, Variant::Reno, start, end);
        f.bytes_delivered = bytes;
        f.unique_bytes_delivered = unique;
        f
    }

    #[test]
    fn throughput_examples() {
        assert_eq!(throughput(&fm(600_000, 600_000, 0.0, 300.0)), Some(2000.0));
        assert_eq!(throughput(&fm(0, 0, 0.0, 300.0)), Some(0.0));
        assert_eq!(throughput(&fm(10, 10, 5.0, 5.0)), None);
    }

    #[test]
    fn goodput_vs_throughput() {
        let mut f = FlowMetrics::new(0, Variant::Reno, 0.0, 12.0);
        for i in 0..12 {
            f.record_delivery(1000, i < 10, 0.01);
        }
        assert_eq!(throughput(&f), Some(1000.0));
        assert_eq!(goodput(&f), Some(10_000.0 / 12.0));
    }

    #[test]
    fn delay_mean() {
        let mut f = FlowMetrics::new(0, Variant::Reno, 0.0, 1.0);
        assert_eq!(mean_e2e_delay(&f), None);
        for d in [0.010, 0.020, 0.030] {
            f.record_delivery(1000, true, d);
        }
        assert!((mean_e2e_delay(&f).unwrap() - 0.020).abs() < 1e-15);
    }

    #[test]
    fn jain_examples() {
        assert_eq!(jain_index(&[3.0, 3.0, 3.0]), Some(1.0));
        assert_eq!(jain_index(&[5.0, 0.0]), Some(0.5));
        assert!((jain_index(&[2.0, 1.0, 1.0]).unwrap() - 16.0 / 18.0).abs() < 1e-15);
        assert_eq!(jain_index(&[0.0, 0.0]), None);
        assert_eq!(jain_index(&[]), None);
    }

    #[test]
    fn in_order_examples() {
        assert_eq!(in_order_ratio(4, 4), Some(1.0));
        assert_eq!(in_order_ratio(2, 4), Some(0.5));
        assert_eq!(in_order_ratio(0, 0), None);
    }

    #[test]
    fn buckets() {
        let mut a = fm(1000, 1000, 0.0, 1.0);
        a.record_rtt(0.1);
        let mut b = fm(3000, 3000, 0.0, 1.0);
        b.record_rtt(0.3);
        let mut c = fm(5000, 5000, 0.0, 1.0);
        c.record_rtt(0.3);
        let out = rtt_buckets(&rtt_points(&[a, b, c]), 2);
        assert_eq!(out.len(), 2);
        assert_eq!((out[0].flows, out[0].mean_throughput), (1, 1000.0));
        assert_eq!((out[1].flows, out[1].mean_throughput), (2, 4000.0));
    }

    #[test]
    fn row_format() {
        let r = RunReport {
            scenario: "s".into(),
            seed: 3,
            variant: Variant::Vegas,
            mobility_ratio: 0.05,
            v_max: 10.0,
            throughput_pkts: Some(12.5),
            throughput_bytes: Some(12500.0),
            goodput_bytes: Some(12000.0),
            mean_delay_s: Some(0.1),
            fairness_jain: None,
            ctrl_overhead_reactive: Some(0.25),
            ctrl_overhead_all: None,
            broken_links: 7,
            in_order_ratio: Some(1.0),
            timeouts: 2,
            retransmissions: 9,
        };
        assert_eq!(METRICS_HEADER.split(',').count(), r.csv_row().split(',').count());
        assert_eq!(r.csv_row(), "s,3,vegas,0.05,10,12.5,12500,12000,0.1,NA,0.25,NA,7,1,2,9");

        let mut f = fm(20_000, 20_000, 0.0, 10.0);
        f.flow = 4;
        f.packets_delivered = 20;
        f.record_rtt(0.2);
        f.record_rtt(0.4);
        let idle = FlowMetrics::new(5, Variant::Vegas, 0.0, 10.0);
        let rows = r.flow_rows(&[f, idle]);
        assert_eq!(rows[0], "s,3,vegas,0.05,10,4,0.30000000000000004,2,2000");
        assert_eq!(rows[1], "s,3,vegas,0.05,10,5,NA,0,0");
        assert_eq!(FLOWS_HEADER.split(',').count(), rows[0].split(',').count());
    }

    #[test]
    fn empty_summary_undefined() {
        let s = summarize(&[]);
        assert_eq!(s.throughput_pkts, None);
        assert_eq!(s.mean_delay_s, None);
        assert_eq!(s.fairness_jain, None);
    }
}
