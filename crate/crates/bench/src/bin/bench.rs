use std::path::PathBuf;
use std::process::ExitCode;

use bmpc::models::{IntersectionSpec, LatencySpec, ScenarioConfig};
use bmpc_bench::{run_experiment, scan_timing, verify, write_csv, BenchError, RunConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bench", about = "Branch MPC solver experiments and oracle checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scenario {
    Intersection,
    Latency,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep from a JSON config and write one CSV row per run.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Skip the scan-vs-sequential timing line.
        #[arg(long)]
        no_scan_report: bool,
    },
    /// Run oracle-equivalence suites; `--suite none` selects nothing.
    Verify {
        #[arg(long = "suite")]
        suites: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replace the backward combination by a wrong-signed one.
        #[arg(long)]
        mutate: bool,
        #[arg(long)]
        json: bool,
    },
    /// Write a generated problem instance as JSON.
    Gen {
        #[arg(long, value_enum)]
        scenario: Scenario,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        horizon: Option<usize>,
        /// Intersection only.
        #[arg(long)]
        leaves: Option<usize>,
        /// Latency only.
        #[arg(long)]
        t_sh1: Option<f64>,
    },
}

fn fail(e: BenchError) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        BenchError::Config(_) => ExitCode::from(2),
        _ => ExitCode::FAILURE,
    }
}

fn cmd_run(config: PathBuf, output: Option<PathBuf>, no_scan_report: bool) -> Result<(), BenchError> {
    let text = std::fs::read_to_string(&config)?;
    let mut cfg = RunConfig::from_json(&text)?;
    if output.is_some() {
        cfg.output = output;
    }
    let records = run_experiment(&cfg)?;
    for r in &records {
        println!(
            "{} {} N={} leaves={} rep={} iters={} cost={:.6e} violation={:.2e} total={:.1}ms {}",
            r.experiment, r.solver, r.horizon, r.leaves, r.rep, r.iters, r.cost, r.violation, r.t_total_ms, r.status
        );
        if !r.consistent && r.status != "error" {
            eprintln!("warning: report consistency check failed for N={} leaves={}", r.horizon, r.leaves);
        }
    }
    if let Some(path) = cfg.output_path() {
        write_csv(&records, &path)?;
        println!("wrote {}", path.display());
    }
    if !no_scan_report {
        let t = scan_timing(511, cfg.seed, 5)?;
        println!(
            "backward pass at N={}: scan {:.3} ms, sequential {:.3} ms ({} threads)",
            t.horizon,
            t.scan_ms,
            t.sequential_ms,
            rayon::current_num_threads()
        );
    }
    Ok(())
}

fn cmd_gen(
    scenario: Scenario,
    out: PathBuf,
    horizon: Option<usize>,
    leaves: Option<usize>,
    t_sh1: Option<f64>,
) -> Result<(), BenchError> {
    let cfg = match scenario {
        Scenario::Intersection => {
            let mut s = IntersectionSpec::default();
            if let Some(l) = leaves {
                (s.v1_count, s.v2_count) =
                    IntersectionSpec::counts_for_leaves(l).map_err(|e| BenchError::Config(e.to_string()))?;
            }
            s.horizon = horizon.unwrap_or(s.horizon);
            ScenarioConfig::Intersection(s)
        }
        Scenario::Latency => {
            let mut s = LatencySpec::default();
            s.horizon = horizon.unwrap_or(s.horizon);
            s.shared_time1 = t_sh1.unwrap_or(s.shared_time1);
            ScenarioConfig::Latency(s)
        }
    };
    let problem = cfg.build().map_err(|e| BenchError::Config(e.to_string()))?;
    let doc = serde_json::json!({ "config": cfg, "problem": problem });
    std::fs::write(&out, serde_json::to_string_pretty(&doc).expect("serializable"))?;
    println!("wrote {} ({} nodes)", out.display(), problem.topology.node_count());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            output,
            no_scan_report,
        } => match cmd_run(config, output, no_scan_report) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(e),
        },
        Command::Verify {
            suites,
            seed,
            mutate,
            json,
        } => {
            let selection: Option<Vec<String>> = match suites.as_slice() {
                [] => None,
                [only] if only == "none" => Some(Vec::new()),
                _ => Some(suites),
            };
            let report = match verify(selection.as_deref(), seed, mutate) {
                Ok(r) => r,
                Err(msg) => {
                    eprintln!("error: {msg}");
                    return ExitCode::from(2);
                }
            };
            if json {
                println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
            } else {
                for c in &report.checks {
                    let verdict = if c.pass { "PASS" } else { "FAIL" };
                    println!("{verdict} {}: max error {:.2e} (tol {:.0e})", c.suite, c.max_error, c.tolerance);
                }
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Command::Gen {
            scenario,
            out,
            horizon,
            leaves,
            t_sh1,
        } => match cmd_gen(scenario, out, horizon, leaves, t_sh1) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => fail(e),
        },
    }
}
