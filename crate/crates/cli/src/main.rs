use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use nnfuzz_client::Client;
use nnfuzz_core::api::{CampaignRequest, CampaignResult, CoverageRequest, FixturesRequest, JobState};
use nnfuzz_core::campaign::{Arm, CampaignConfig};
use nnfuzz_core::coverage::Criterion;
use nnfuzz_core::fixtures::FixtureSpec;
use serde::Serialize;

/// Coverage-guided fuzzing of small CNN classifiers.
///
/// Every command except `serve` is a request to the service: the one at
/// `--server`, or a private one started in-process for the call.
#[derive(Parser)]
#[command(name = "fuzz", version)]
struct Cli {
    /// Base URL of a running service, e.g. http://127.0.0.1:7878.
    #[arg(long, global = true, env = "NNFUZZ_SERVER")]
    server: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service in the foreground.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: SocketAddr,
    },
    /// Tree-search campaign.
    Run(CampaignArgs),
    /// Random-mutation baseline with the same budget.
    Baseline(CampaignArgs),
    /// Coverage of a dataset from scratch.
    Coverage {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// nc, nc:<threshold>, kmn, kmn:<k>, nbc, snac, tfc:<lenet1|lenet4|lenet5|cifar|threshold>
        #[arg(long)]
        criterion: String,
        /// Training set for the neuron profile (kmn, nbc, snac).
        #[arg(long)]
        train: Option<PathBuf>,
    },
    /// Print a campaign's report (or repeat summary).
    Report {
        #[arg(long)]
        campaign: PathBuf,
    },
    /// Re-check a campaign's corpus; exits 1 when anything fails.
    Replay {
        #[arg(long)]
        campaign: PathBuf,
    },
    /// Write a fixture model and datasets.
    Fixtures {
        /// JSON fixture spec.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct CampaignArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run N campaigns with seeds seed..seed+N into run_<r> subdirectories.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

async fn connect(server: Option<String>) -> anyhow::Result<Client> {
    let base = match server {
        Some(url) => url,
        None => {
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await?;
            let addr = listener.local_addr()?;
            nnfuzz_server::spawn(listener);
            format!("http://{addr}")
        }
    };
    Ok(Client::new(base))
}

fn summarise(result: &CampaignResult) {
    match result {
        CampaignResult::Single { report } => eprintln!(
            "coverage {:.6} -> {:.6} (+{:.6}), {} new inputs in {} batches, {} adversarial ({:.2}%)",
            report.initial_coverage,
            report.final_coverage,
            report.coverage_increase,
            report.new_inputs,
            report.committed_batches,
            report.adversarial.count,
            report.adversarial.percent,
        ),
        CampaignResult::Repeated { summary } => eprintln!(
            "{} runs: coverage increase {:.6} ± {:.6}, new inputs {:.1} ± {:.1}, adversarial {:.2}% ± {:.2}",
            summary.runs.len(),
            summary.coverage_increase.mean,
            summary.coverage_increase.std,
            summary.new_inputs.mean,
            summary.new_inputs.std,
            summary.adversarial_percent.mean,
            summary.adversarial_percent.std,
        ),
    }
}

async fn campaign(client: &Client, args: CampaignArgs, arm: Arm) -> anyhow::Result<ExitCode> {
    let config = CampaignConfig::load(absolute(&args.config)?)?;
    let job = client
        .submit_campaign(&CampaignRequest {
            config,
            arm,
            seed: args.seed,
            repeat: Some(args.repeat),
        })
        .await?;
    eprintln!("campaign {} writing to {}", job.id, job.output_dir.display());
    let done = client.wait_campaign(&job.id, Duration::from_millis(200)).await?;
    match (done.state, done.result) {
        (JobState::Succeeded, Some(result)) => {
            summarise(&result);
            print_json(&result)?;
            Ok(ExitCode::SUCCESS)
        }
        _ => bail!("campaign failed: {}", done.error.unwrap_or_else(|| "unknown error".into())),
    }
}

async fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Command::Serve { addr } = cli.command {
        nnfuzz_server::serve(addr).await?;
        return Ok(ExitCode::SUCCESS);
    }
    let client = connect(cli.server).await?;
    match cli.command {
        Command::Serve { .. } => unreachable!(),
        Command::Run(args) => campaign(&client, args, Arm::Mcts).await,
        Command::Baseline(args) => campaign(&client, args, Arm::Random).await,
        Command::Coverage {
            model,
            dataset,
            criterion,
            train,
        } => {
            let req = CoverageRequest {
                model: absolute(&model)?,
                dataset: absolute(&dataset)?,
                train: train.as_deref().map(absolute).transpose()?,
                criterion: Criterion::parse(&criterion)?,
            };
            print_json(&client.coverage(&req).await?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Report { campaign } => {
            let result = client.report(absolute(&campaign)?).await?;
            summarise(&result);
            print_json(&result)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { campaign } => {
            let r = client.replay(absolute(&campaign)?).await?;
            print_json(&r)?;
            if r.ok {
                eprintln!("replay ok: {} inputs", r.inputs);
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!(
                    "replay FAILED: {} mismatches, {} distance violations, coverage {} vs reported {}",
                    r.replay_mismatches.len(),
                    r.distance_violations.len(),
                    r.recomputed_coverage,
                    r.reported_coverage
                );
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Fixtures { spec, out } => {
            let text = std::fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let spec: FixtureSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
            let manifest = client
                .fixtures(&FixturesRequest {
                    spec,
                    out: absolute(&out)?,
                })
                .await?;
            print_json(&manifest)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_default_env())
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match dispatch(cli).await {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
