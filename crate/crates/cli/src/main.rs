use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};
use wccp_sim::sim::SimTime;
use wccp_sim::{export_csv, run, scenario, RunConfig, SimError, SimParams, Transport};

#[derive(Parser, Debug)]
#[command(name = "wccpsim", version, about = "802.11 multihop chain simulator: WCCP vs TCP Reno")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one scenario and write flows.csv, busyness.csv and summary.csv.
    Run(RunArgs),
    /// Run every scenario × transport × seed combination, each into its own
    /// subdirectory of --out.
    Sweep(SweepArgs),
}

#[derive(Args, Debug)]
struct Common {
    /// Simulated seconds.
    #[arg(long, default_value_t = 110.0)]
    duration: f64,
    /// Seconds excluded from statistics.
    #[arg(long, default_value_t = 10.0)]
    warmup: f64,
    #[arg(long)]
    out: PathBuf,
    /// key=value parameter overrides.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    transport: String,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[command(flatten)]
    common: Common,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "s1,s2,s3")]
    scenarios: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "tcp,wccp")]
    transports: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[command(flatten)]
    common: Common,
}

enum Failure {
    Usage(String),
    Invariant(String),
    Other(anyhow::Error),
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Invariant { .. } => Failure::Invariant(e.to_string()),
            SimError::Config(_) | SimError::UnknownScenario(_) => Failure::Usage(e.to_string()),
            other => Failure::Other(other.into()),
        }
    }
}

fn secs(label: &str, v: f64) -> Result<SimTime, Failure> {
    if !v.is_finite() || v < 0.0 {
        return Err(Failure::Usage(format!("--{label} must be a non-negative number of seconds")));
    }
    Ok(SimTime::from_secs_f64(v))
}

fn base_config(c: &Common) -> Result<RunConfig, Failure> {
    let params = match &c.config {
        Some(path) => SimParams::from_file(path)?,
        None => SimParams::default(),
    };
    let cfg = RunConfig {
        seed: 0,
        duration: secs("duration", c.duration)?,
        warmup: secs("warmup", c.warmup)?,
        params,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn run_one(name: &str, transport: &str, seed: u64, base: &RunConfig, out: &Path) -> Result<(), Failure> {
    let t: Transport = transport.parse()?;
    let mut spec = scenario(name)?.with_transport(t);
    let stagger = base.params.flow_stagger.as_micros();
    for (i, f) in spec.flows.iter_mut().enumerate() {
        f.start = SimTime::from_micros(stagger * i as u64);
    }
    let cfg = RunConfig { seed, ..base.clone() };
    let metrics = run(&spec, &cfg)?;
    export_csv(&metrics, out)?;
    println!(
        "{name} {t} seed={seed}: aggregate {:.1} B/s, jain {:.4} -> {}",
        metrics.aggregate_throughput,
        metrics.jain_index,
        out.display()
    );
    Ok(())
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let base = base_config(&args.common)?;
    // Validate the whole grid before launching anything.
    for s in &args.scenarios {
        scenario(s)?;
    }
    for t in &args.transports {
        t.parse::<Transport>()?;
    }
    let jobs: Vec<(String, String, u64)> = args
        .scenarios
        .iter()
        .flat_map(|s| {
            args.transports
                .iter()
                .flat_map(move |t| args.seeds.iter().map(move |&seed| (s.clone(), t.clone(), seed)))
        })
        .collect();
    let next = AtomicUsize::new(0);
    let failures: Mutex<Vec<Failure>> = Mutex::new(Vec::new());
    let workers = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
        .min(jobs.len().max(1));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some((s, t, seed)) = jobs.get(i) else { break };
                let dir = args.common.out.join(format!("{s}-{t}-seed{seed}"));
                if let Err(e) = run_one(s, t, *seed, &base, &dir) {
                    failures.lock().expect("poisoned").push(e);
                }
            });
        }
    });
    let mut failures = failures.into_inner().expect("poisoned");
    // Report invariant violations ahead of other errors.
    failures.sort_by_key(|f| match f {
        Failure::Invariant(_) => 0,
        Failure::Usage(_) => 1,
        Failure::Other(_) => 2,
    });
    match failures.into_iter().next() {
        None => Ok(()),
        Some(f) => Err(f),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::Run(a) => base_config(&a.common)
            .and_then(|base| run_one(&a.scenario, &a.transport, a.seed, &base, &a.common.out)),
        Command::Sweep(a) => sweep(a),
    };
    if let Err(f) = &result {
        match f {
            Failure::Usage(msg) | Failure::Invariant(msg) => eprintln!("error: {msg}"),
            Failure::Other(e) => eprintln!("error: {e:#}"),
        }
    }
    ExitCode::from(exit_code(&result))
}

fn exit_code(result: &Result<(), Failure>) -> u8 {
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(_) | Failure::Other(_)) => 1,
        Err(Failure::Invariant(_)) => 2,
    }
}
