//! Batch runs over variants, mobility ratios, speeds and seeds, plus the
//! per-figure aggregation of their `metrics.csv` rows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Read;

use rayon::prelude::*;
use thiserror::Error;

use crate::metrics::{rtt_buckets, FLOWS_HEADER, METRICS_HEADER};
use crate::scenario::Scenario;
use crate::tcp::Variant;
use crate::world::{self, RunError};

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("empty {0} list")]
    Empty(&'static str),
    #[error("invalid range: {0}")]
    Range(String),
    #[error("scenario: {0}")]
    Config(String),
    #[error("metrics input: {0}")]
    Input(String),
    #[error("unknown figure {0}; expected 3 to 9")]
    Figure(u32),
}

/// One point of the run matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuple {
    pub variant: Variant,
    pub ratio: f64,
    pub v_max: f64,
    pub seed: u64,
}

impl Tuple {
    pub fn scenario(&self, base: &Scenario) -> Scenario {
        let mut sc = base.clone();
        sc.variant = self.variant;
        sc.mobility_ratio = self.ratio;
        sc.v_max = self.v_max;
        sc.seed = self.seed;
        sc
    }
}

/// Result of one matrix entry.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub tuple: Tuple,
    pub line: String,
    /// Set when the run failed its conservation check.
    pub diagnostic: Option<String>,
    /// `flows.csv` rows; empty for diagnostic rows.
    pub flow_lines: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
}

impl SweepOutput {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.diagnostic.is_some()).count()
    }

    /// The full `metrics.csv` text, header included.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.rows.len() * 120);
        out.push_str(METRICS_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.line);
            out.push('\n');
        }
        out
    }

    /// The full `flows.csv` text, header included.
    pub fn flows_csv(&self) -> String {
        let mut out = String::from(FLOWS_HEADER);
        out.push('\n');
        for line in self.rows.iter().flat_map(|r| &r.flow_lines) {
            out.push_str(line);
            out.push('\n');
        }
        out
    }
}

/// Matrix entries in output order: variant, then ratio, then speed, then seed.
pub fn tuples(variants: &[Variant], ratios: &[f64], speeds: &[f64], seeds: &[u64]) -> Result<Vec<Tuple>, SweepError> {
    for (name, empty) in [
        ("variant", variants.is_empty()),
        ("ratio", ratios.is_empty()),
        ("speed", speeds.is_empty()),
        ("seed", seeds.is_empty()),
    ] {
        if empty {
            return Err(SweepError::Empty(name));
        }
    }
    let mut out = Vec::with_capacity(variants.len() * ratios.len() * speeds.len() * seeds.len());
    for &variant in variants {
        for &ratio in ratios {
            for &v_max in speeds {
                for &seed in seeds {
                    out.push(Tuple {
                        variant,
                        ratio,
                        v_max,
                        seed,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Runs every tuple (in parallel) and collects rows in tuple order.
pub fn run_matrix(
    base: &Scenario,
    variants: &[Variant],
    ratios: &[f64],
    speeds: &[f64],
    seeds: &[u64],
) -> Result<SweepOutput, SweepError> {
    let list = tuples(variants, ratios, speeds, seeds)?;
    for t in &list {
        t.scenario(base)
            .validate()
            .map_err(|e| SweepError::Config(e.to_string()))?;
    }
    let results: Vec<Result<SweepRow, SweepError>> = list.par_iter().map(|t| run_one(base, *t)).collect();
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    Ok(SweepOutput { rows })
}

fn run_one(base: &Scenario, t: Tuple) -> Result<SweepRow, SweepError> {
    let sc = t.scenario(base);
    match world::run(&sc) {
        Ok(out) => Ok(SweepRow {
            tuple: t,
            line: out.report.csv_row(),
            diagnostic: None,
            flow_lines: out.report.flow_rows(&out.flows),
        }),
        Err(RunError::Conservation(msg)) => Ok(SweepRow {
            tuple: t,
            line: diagnostic_row(&sc, &msg),
            diagnostic: Some(msg),
            flow_lines: Vec::new(),
        }),
        Err(e) => Err(SweepError::Config(e.to_string())),
    }
}

/// A row with the key columns filled and every metric `NA`, except the last
/// column, which carries the failure reason.
fn diagnostic_row(sc: &Scenario, msg: &str) -> String {
    let cleaned: String = msg
        .chars()
        .map(|c| if c == ',' || c == '\n' { ';' } else { c })
        .collect();
    let mut row = format!(
        "{},{},{},{},{}",
        sc.name, sc.seed, sc.variant, sc.mobility_ratio, sc.v_max
    );
    for _ in 0..10 {
        row.push_str(",NA");
    }
    row.push_str(",CONSERVATION_FAILURE: ");
    row.push_str(&cleaned);
    row
}

/// Inclusive arithmetic range `lo, lo+step, ..., hi`, rounded to 1e-9 so that
/// printed values stay short.
pub fn stepped(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>, SweepError> {
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || step <= 0.0 || hi < lo {
        return Err(SweepError::Range(format!("{lo}:{hi}:{step}")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|i| ((lo + i as f64 * step) * 1e9).round() / 1e9).collect())
}

/// Parses `lo:hi:step`.
pub fn parse_stepped(text: &str) -> Result<Vec<f64>, SweepError> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || SweepError::Range(text.to_string());
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<Vec<_>, _>>()?;
    stepped(nums[0], nums[1], nums[2])
}

/// Parses `a..b` (inclusive) or a comma list of seeds.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, SweepError> {
    let bad = || SweepError::Range(text.to_string());
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

// ---- plot data ------------------------------------------------------------

/// The metrics columns the figures need, read back from `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub variant: String,
    pub mobility_ratio: f64,
    pub v_max: f64,
    pub throughput_pkts: Option<f64>,
    pub mean_delay_s: Option<f64>,
    pub fairness_jain: Option<f64>,
    pub ctrl_overhead_reactive: Option<f64>,
    pub broken_links: Option<f64>,
}

pub fn read_metrics<R: Read>(input: R) -> Result<Vec<MetricsRecord>, SweepError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| SweepError::Input(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SweepError::Input(format!("missing column {name}")))
    };
    let variant = col("variant")?;
    let ratio = col("mobility_ratio")?;
    let vmax = col("v_max")?;
    let thr = col("throughput_pkts")?;
    let delay = col("mean_delay_s")?;
    let jain = col("fairness_jain")?;
    let ovh = col("ctrl_overhead_reactive")?;
    let broken = col("broken_links")?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SweepError::Input(e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        let opt = |c: usize| -> Option<f64> { field(c).parse().ok() };
        let req = |c: usize| -> Result<f64, SweepError> {
            field(c)
                .parse()
                .map_err(|_| SweepError::Input(format!("row {}: bad number {:?}", i + 2, field(c))))
        };
        out.push(MetricsRecord {
            variant: field(variant).to_string(),
            mobility_ratio: req(ratio)?,
            v_max: req(vmax)?,
            throughput_pkts: opt(thr),
            mean_delay_s: opt(delay),
            fairness_jain: opt(jain),
            ctrl_overhead_reactive: opt(ovh),
            broken_links: opt(broken),
        });
    }
    Ok(out)
}

/// Per-flow columns read back from `flows.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowRecord {
    pub variant: String,
    pub v_max: f64,
    pub mean_rtt_s: Option<f64>,
    pub throughput_pkts: Option<f64>,
}

/// Whether a CSV header line is the per-flow schema.
pub fn is_flows_header(line: &str) -> bool {
    line.trim_end() == FLOWS_HEADER
}

pub fn read_flows<R: Read>(input: R) -> Result<Vec<FlowRecord>, SweepError> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(|e| SweepError::Input(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| SweepError::Input(format!("missing column {name}")))
    };
    let (variant, vmax, rtt, thr) = (
        col("variant")?,
        col("v_max")?,
        col("mean_rtt_s")?,
        col("throughput_pkts")?,
    );
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| SweepError::Input(e.to_string()))?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        out.push(FlowRecord {
            variant: field(variant).to_string(),
            v_max: field(vmax)
                .parse()
                .map_err(|_| SweepError::Input(format!("row {}: bad v_max {:?}", i + 2, field(vmax))))?,
            mean_rtt_s: field(rtt).parse().ok(),
            throughput_pkts: field(thr).parse().ok(),
        });
    }
    Ok(out)
}

/// RTT buckets per variant for the fairness figure.
pub const RTT_BUCKETS: usize = 5;

/// Per-variant throughput by RTT bucket at 10 m/s. Bucket edges are shared
/// across variants so rows line up.
pub fn rtt_plot_data(records: &[FlowRecord]) -> String {
    let pts: Vec<(&str, f64, f64)> = records
        .iter()
        .filter(|r| is(r.v_max, 10.0))
        .filter_map(|r| Some((r.variant.as_str(), r.mean_rtt_s?, r.throughput_pkts?)))
        .collect();
    let mut out = String::from("variant,rtt_lo_s,rtt_hi_s,throughput_pkts,flows\n");
    let all: Vec<(f64, f64)> = pts.iter().map(|p| (p.1, p.2)).collect();
    let Some(edges) = rtt_buckets(&all, RTT_BUCKETS).first().map(|b| (b.lo, b.hi - b.lo)) else {
        return out;
    };
    let (lo, width) = edges;
    let mut groups: BTreeMap<(&str, usize), Mean> = BTreeMap::new();
    for (variant, rtt, tp) in pts {
        let i = (((rtt - lo) / width) as usize).min(RTT_BUCKETS - 1);
        groups.entry((variant, i)).or_default().push(Some(tp));
    }
    for ((variant, i), m) in groups {
        let a = lo + width * i as f64;
        out.push_str(&format!("{variant},{a},{},{},{}\n", a + width, m.cell(), m.n));
    }
    out
}

/// Which figure a plot-data table mirrors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Figure {
    /// Throughput vs mobility ratio at 5 m/s.
    ThroughputSlow,
    /// Throughput vs mobility ratio at 10 m/s.
    ThroughputFast,
    /// Fairness per variant at 10 m/s.
    Fairness,
    /// Delay per variant at 5 m/s.
    DelaySlow,
    /// Delay per variant at 10 m/s.
    DelayFast,
    /// Control overhead vs mobility ratio per speed.
    Overhead,
    /// Broken links per variant and speed at ratio 0.5.
    BrokenLinks,
}

impl Figure {
    pub fn from_number(n: u32) -> Result<Self, SweepError> {
        Ok(match n {
            3 => Figure::ThroughputSlow,
            4 => Figure::ThroughputFast,
            5 => Figure::Fairness,
            6 => Figure::DelaySlow,
            7 => Figure::DelayFast,
            8 => Figure::Overhead,
            9 => Figure::BrokenLinks,
            _ => return Err(SweepError::Figure(n)),
        })
    }
}

impl fmt::Display for Figure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            Figure::ThroughputSlow => 3,
            Figure::ThroughputFast => 4,
            Figure::Fairness => 5,
            Figure::DelaySlow => 6,
            Figure::DelayFast => 7,
            Figure::Overhead => 8,
            Figure::BrokenLinks => 9,
        };
        write!(f, "figure {n}")
    }
}

#[derive(Default)]
struct Mean {
    sum: f64,
    n: usize,
}

impl Mean {
    fn push(&mut self, v: Option<f64>) {
        if let Some(v) = v.filter(|v| v.is_finite()) {
            self.sum += v;
            self.n += 1;
        }
    }

    fn cell(&self) -> String {
        if self.n == 0 {
            "NA".to_string()
        } else {
            (self.sum / self.n as f64).to_string()
        }
    }
}

/// Key ordering floats by their bit pattern is wrong for negatives, but every
/// key here is a nonnegative ratio or speed.
fn key(x: f64) -> u64 {
    x.to_bits()
}

fn is(x: f64, target: f64) -> bool {
    (x - target).abs() < 1e-9
}

/// Aggregates metrics rows into the series of one figure (means over seeds).
pub fn plot_data(records: &[MetricsRecord], figure: Figure) -> String {
    let mut out = String::new();
    match figure {
        Figure::ThroughputSlow | Figure::ThroughputFast | Figure::DelaySlow | Figure::DelayFast => {
            let speed = if matches!(figure, Figure::ThroughputSlow | Figure::DelaySlow) {
                5.0
            } else {
                10.0
            };
            let throughput = matches!(figure, Figure::ThroughputSlow | Figure::ThroughputFast);
            let mut groups: BTreeMap<(String, u64), (f64, Mean)> = BTreeMap::new();
            for r in records.iter().filter(|r| is(r.v_max, speed)) {
                let g = groups
                    .entry((r.variant.clone(), key(r.mobility_ratio)))
                    .or_insert((r.mobility_ratio, Mean::default()));
                g.1.push(if throughput { r.throughput_pkts } else { r.mean_delay_s });
            }
            let col = if throughput { "throughput_pkts" } else { "mean_delay_s" };
            out.push_str(&format!("variant,mobility_ratio,{col},runs\n"));
            for ((variant, _), (ratio, m)) in groups {
                out.push_str(&format!("{variant},{ratio},{},{}\n", m.cell(), m.n));
            }
        }
        Figure::Fairness => {
            let mut groups: BTreeMap<String, (Mean, Mean)> = BTreeMap::new();
            for r in records.iter().filter(|r| is(r.v_max, 10.0)) {
                let g = groups.entry(r.variant.clone()).or_default();
                g.0.push(r.fairness_jain);
                g.1.push(r.throughput_pkts);
            }
            out.push_str("variant,fairness_jain,throughput_pkts,runs\n");
            for (variant, (j, t)) in groups {
                out.push_str(&format!("{variant},{},{},{}\n", j.cell(), t.cell(), t.n));
            }
        }
        Figure::Overhead => {
            let mut groups: BTreeMap<(u64, u64), (f64, f64, Mean)> = BTreeMap::new();
            for r in records {
                let g = groups.entry((key(r.v_max), key(r.mobility_ratio))).or_insert((
                    r.v_max,
                    r.mobility_ratio,
                    Mean::default(),
                ));
                g.2.push(r.ctrl_overhead_reactive);
            }
            out.push_str("v_max,mobility_ratio,ctrl_overhead_reactive,runs\n");
            for (_, (v, ratio, m)) in groups {
                out.push_str(&format!("{v},{ratio},{},{}\n", m.cell(), m.n));
            }
        }
        Figure::BrokenLinks => {
            let mut groups: BTreeMap<(String, u64), (f64, Mean)> = BTreeMap::new();
            for r in records.iter().filter(|r| is(r.mobility_ratio, 0.5)) {
                let g = groups
                    .entry((r.variant.clone(), key(r.v_max)))
                    .or_insert((r.v_max, Mean::default()));
                g.1.push(r.broken_links);
            }
            out.push_str("variant,v_max,broken_links,runs\n");
            for ((variant, _), (v, m)) in groups {
                out.push_str(&format!("{variant},{v},{},{}\n", m.cell(), m.n));
            }
        }
    }
    out
}
