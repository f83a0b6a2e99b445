use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use rulebench::corpus::{generate_corpus, write_corpus, CorpusSpec};
use rulebench::dsl::RuleType;
use rulebench::engine::ExecutionStatus;
use rulebench::experiment::{run_experiment, ExperimentConfig};
use rulebench::service::{http, RulesService};
use rulebench::testgen::{
    run_tool, write_run, Budget, Clock, EndpointFocus, HttpTransport, InProcess, RunConfig, ToolId, ToolRun, Transport,
    LOGICAL_REQUESTS_PER_SECOND,
};
use rulebench::{parse_rule_set, RuleSetVersion};

#[derive(Parser)]
#[command(name = "rulebench", version, about = "Rule-service test generation bench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one test generator against a rule set.
    Fuzz(FuzzArgs),
    /// Run a tool × version × repetition grid.
    Experiment {
        #[command(subcommand)]
        command: ExperimentCommand,
    },
    /// Work with the synthetic rule-set corpus.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Serve a rule set over HTTP until interrupted.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum ExperimentCommand {
    Run {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Write v1..v10 and the production profile fixture.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Target guard satisfaction probability.
        #[arg(long, default_value_t = 0.1)]
        guard_p: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ClockArg {
    Logical,
    Wall,
}

#[derive(Args)]
struct FuzzArgs {
    #[arg(long)]
    tool: ToolId,
    /// Rule-set file in the rule language.
    #[arg(long)]
    rules: PathBuf,
    /// Search budget: requests (`500req`) or time (`60s`, `10m`, `1h`).
    #[arg(long)]
    budget: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// How time budgets are measured.
    #[arg(long, value_enum, default_value = "logical")]
    clock: ClockArg,
    /// Requests per simulated second under the logical clock.
    #[arg(long, default_value_t = LOGICAL_REQUESTS_PER_SECOND)]
    requests_per_second: f64,
    /// Probability that a sampled leaf value is well-formed.
    #[arg(long, default_value_t = 0.9)]
    valid_bias: f64,
    /// Add per-rule outcome targets to the white-box search.
    #[arg(long)]
    domain_objectives: bool,
    /// Generate requests for every endpoint, not just the rule-handling ones.
    #[arg(long)]
    all_endpoints: bool,
    /// Talk to the service over a local HTTP socket instead of in-process.
    #[arg(long)]
    http: bool,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    rules: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
}

fn load_rules(path: &Path) -> Result<RuleSetVersion> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_rule_set(&text).with_context(|| format!("{}", path.display()))
}

fn print_summary(run: &ToolRun, rs: &RuleSetVersion) -> Result<()> {
    let cov = run.coverage_metrics()?;
    let err = run.error_metrics();
    let status = run.status_metrics(rs)?;
    println!("{} seed {} budget {}: {} requests", run.tool, run.seed, run.budget, run.requests);
    println!(
        "coverage: line {:.2}%  branch {:.2}%  method {:.2}%",
        cov.line_pct, cov.branch_pct, cov.method_pct
    );
    println!(
        "errors: {} unique, {} failure points ({} in the engine)",
        err.unique_errors.all, err.unique_failure_points.all, err.unique_library_failure_points.all
    );
    for ty in RuleType::ALL {
        let c = status.for_type(ty);
        let parts: Vec<String> = ExecutionStatus::ALL
            .iter()
            .map(|&s| format!("{} {}", s.name(), c.get(s)))
            .collect();
        println!("{} rules: {} ({:.1}% applied)", ty.name(), parts.join(", "), c.pct(ExecutionStatus::Applied));
    }
    Ok(())
}

fn fuzz(args: FuzzArgs) -> Result<()> {
    let rs = load_rules(&args.rules)?;
    let clock = match args.clock {
        ClockArg::Logical => Clock::Logical {
            rate: args.requests_per_second,
        },
        ClockArg::Wall => Clock::Wall,
    };
    let budget = Budget::parse(&args.budget, clock)?;
    if !(0.0..=1.0).contains(&args.valid_bias) {
        bail!("--valid-bias must lie in [0, 1]");
    }
    let mut config = RunConfig::new(args.tool, args.seed, budget);
    config.valid_bias = args.valid_bias;
    config.domain_objectives = args.domain_objectives;
    if args.all_endpoints {
        config.endpoints = EndpointFocus::All;
    }
    let service = Arc::new(RulesService::new(rs.clone()));
    let run = if args.http {
        let server = http::serve(service, ([127, 0, 0, 1], 0).into()).context("cannot start the service")?;
        log::info!("service listening on {}", server.base_url());
        let t = HttpTransport::new(server.base_url());
        run_with(&t, &config)?
    } else {
        run_with(&InProcess(service), &config)?
    };
    write_run(&run, &args.out).with_context(|| format!("cannot write {}", args.out.display()))?;
    print_summary(&run, &rs)?;
    println!("artifacts written to {}", args.out.display());
    Ok(())
}

fn run_with(t: &dyn Transport, config: &RunConfig) -> Result<ToolRun> {
    Ok(run_tool(t, config)?)
}

fn experiment(config: &Path) -> Result<()> {
    let config = ExperimentConfig::load(config)?;
    let report = run_experiment(&config)?;
    let failed = report.failed().count();
    println!(
        "{} trials, {} failed; tables written to {}",
        report.trials.len(),
        failed,
        config.out_dir.display()
    );
    for t in report.failed() {
        println!("  failed: {} on {} (repetition {})", t.trial.tool, t.trial.version, t.trial.repetition + 1);
    }
    Ok(())
}

fn corpus(out: &Path, seed: u64, guard_p: f64) -> Result<()> {
    let versions = generate_corpus(&CorpusSpec::with_guard_p(guard_p), seed)?;
    write_corpus(out, &versions)?;
    for v in &versions {
        println!(
            "{} ({}): {} validation, {} aggregation",
            v.version_id,
            v.date.map(|d| d.to_string()).unwrap_or_default(),
            v.validation_rules.len(),
            v.aggregation_rules.len()
        );
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let rs = load_rules(&args.rules)?;
    let server = http::serve(Arc::new(RulesService::new(rs)), args.addr)
        .with_context(|| format!("cannot bind {}", args.addr))?;
    println!("serving on {}", server.base_url());
    server.wait();
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Fuzz(args) => fuzz(args),
        Command::Experiment {
            command: ExperimentCommand::Run { config },
        } => experiment(&config),
        Command::Corpus {
            command: CorpusCommand::Generate { out, seed, guard_p },
        } => corpus(&out, seed, guard_p),
        Command::Serve(args) => serve(args),
    }
}
