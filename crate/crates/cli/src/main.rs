use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use hybridsim::metrics::{FLOWS_HEADER, METRICS_HEADER};
use hybridsim::scenario::{parse_scenario, Scenario};
use hybridsim::sweep::{self, Figure};
use hybridsim::tcp::{Variant, CWND_TRACE_HEADER};
use hybridsim::world::{self, RunError, RunOutput};
use hybridsim::{handoff, mobility, net};

#[derive(Parser)]
#[command(
    name = "hybridsim",
    version,
    about = "TCP variants over a hybrid wired/wireless/MANET network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write metrics.csv, flows.csv and any enabled traces.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, env = "HYBRIDSIM_OUT", default_value = ".")]
        out: PathBuf,
    },
    /// Run every combination of variant, mobility ratio, speed and seed.
    Sweep {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma list, or `all`.
        #[arg(long, default_value = "all")]
        variants: String,
        /// `lo:hi:step`
        #[arg(long, default_value = "0.05:0.50:0.05")]
        ratios: String,
        /// Comma list of maximum speeds in m/s.
        #[arg(long, default_value = "5,10")]
        speeds: String,
        /// `a..b` or a comma list.
        #[arg(long, default_value = "1..5")]
        seeds: String,
        #[arg(long, env = "HYBRIDSIM_OUT", default_value = ".")]
        out: PathBuf,
    },
    /// Aggregate a metrics.csv into the series of one figure. Figure 5 also
    /// accepts a flows.csv and then buckets throughput by RTT.
    Plotdata {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u32).range(3..=9))]
        figure: u32,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Config(anyhow::Error),
    Diagnostic(String),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Config(e)
    }
}

fn main() -> ExitCode {
    // Usage errors are configuration errors; exit code 2 is reserved.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Run { scenario, seed, out } => cmd_run(&scenario, seed, &out),
        Command::Sweep {
            scenario,
            variants,
            ratios,
            speeds,
            seeds,
            out,
        } => cmd_sweep(&scenario, &variants, &ratios, &speeds, &seeds, &out),
        Command::Plotdata { input, figure, out } => cmd_plotdata(&input, figure, &out).map_err(Failure::from),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Diagnostic(msg)) => {
            eprintln!("diagnostic: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_scenario(&text).with_context(|| format!("in {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn with_header(header: &str, rows: &[String]) -> String {
    let mut s = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>() + 1);
    s.push_str(header);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

fn cmd_run(path: &Path, seed: Option<u64>, out: &Path) -> Result<(), Failure> {
    let mut sc = load_scenario(path)?;
    if let Some(seed) = seed {
        sc.seed = seed;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let output = match world::run(&sc) {
        Ok(o) => o,
        Err(RunError::Conservation(msg)) => return Err(Failure::Diagnostic(msg)),
        Err(e) => return Err(Failure::Config(e.into())),
    };
    write(
        &out.join("metrics.csv"),
        &with_header(METRICS_HEADER, &[output.report.csv_row()]),
    )?;
    write(
        &out.join("flows.csv"),
        &with_header(FLOWS_HEADER, &output.report.flow_rows(&output.flows)),
    )?;
    write_traces(&sc, &output, out)?;
    Ok(())
}

fn write_traces(sc: &Scenario, output: &RunOutput, out: &Path) -> Result<()> {
    let t = &output.traces;
    let files = [
        (sc.trace_packets, "packets.csv", net::TRACE_HEADER, &t.packets),
        (sc.trace_cwnd, "cwnd.csv", CWND_TRACE_HEADER, &t.cwnd),
        (sc.trace_mobility, "mobility.csv", mobility::TRACE_HEADER, &t.mobility),
        (
            sc.trace_signaling,
            "signaling.csv",
            handoff::SIGNAL_TRACE_HEADER,
            &t.signaling,
        ),
    ];
    for (enabled, name, header, rows) in files {
        if enabled {
            write(&out.join(name), &with_header(header, rows))?;
        }
    }
    Ok(())
}

fn parse_variants(text: &str) -> Result<Vec<Variant>> {
    if text.trim() == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    text.split(',')
        .map(|v| v.trim().parse::<Variant>().map_err(anyhow::Error::msg))
        .collect()
}

fn parse_speeds(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad speed {v:?}")))
        .collect()
}

fn cmd_sweep(path: &Path, variants: &str, ratios: &str, speeds: &str, seeds: &str, out: &Path) -> Result<(), Failure> {
    let base = load_scenario(path)?;
    let variants = parse_variants(variants)?;
    let ratios = sweep::parse_stepped(ratios).map_err(anyhow::Error::from)?;
    let speeds = parse_speeds(speeds)?;
    let seeds = sweep::parse_seeds(seeds).map_err(anyhow::Error::from)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let result = sweep::run_matrix(&base, &variants, &ratios, &speeds, &seeds).map_err(anyhow::Error::from)?;
    write(&out.join("metrics.csv"), &result.to_csv())?;
    write(&out.join("flows.csv"), &result.flows_csv())?;
    let failures = result.failures();
    if failures > 0 {
        return Err(Failure::Diagnostic(format!(
            "{failures} run(s) failed the conservation check"
        )));
    }
    Ok(())
}

fn cmd_plotdata(input: &Path, figure: u32, out: &Path) -> Result<()> {
    let figure = Figure::from_number(figure)?;
    let text = fs::read_to_string(input).with_context(|| format!("opening {}", input.display()))?;
    let per_flow = text.lines().next().is_some_and(sweep::is_flows_header);
    let table = match (per_flow, figure) {
        (true, Figure::Fairness) => sweep::rtt_plot_data(&sweep::read_flows(text.as_bytes())?),
        (true, _) => anyhow::bail!("per-flow input only supports figure 5"),
        (false, _) => sweep::plot_data(&sweep::read_metrics(text.as_bytes())?, figure),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write(out, &table)
}
