use std::fs;
use std::net::IpAddr;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use oocran_core::sim::{run_scenario, Scenario};
use serde_json::{json, Value};

use crate::client::ApiClient;
use crate::server::{self, ServeConfig};

#[derive(Parser, Debug)]
#[command(
    name = "oocran",
    version,
    about = "Orchestrate simulated C-RAN network services"
)]
pub struct Cli {
    /// Server base URL for client subcommands.
    #[arg(
        long,
        global = true,
        env = "OOCRAN_URL",
        default_value = "http://127.0.0.1:8080"
    )]
    pub url: String,
    /// Shared bearer and webhook token.
    #[arg(long, global = true, env = "OOCRAN_TOKEN", default_value = oocran_core::fixtures::DEMO_TOKEN)]
    pub token: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the REST service.
    Serve(ServeArgs),
    /// VNF descriptors.
    Vnfd {
        #[command(subcommand)]
        op: DescriptorOp,
    },
    /// NS descriptors.
    Nsd {
        #[command(subcommand)]
        op: DescriptorOp,
    },
    /// Network service instances.
    Ns {
        #[command(subcommand)]
        op: NsOp,
    },
    /// Carrier assignments per band.
    Spectrum,
    /// Compute capacity per node.
    Infra,
    /// Task records.
    Tasks {
        #[arg(long)]
        ns_id: Option<String>,
    },
    /// Scenario runs and clock control.
    Sim {
        #[command(subcommand)]
        op: SimOp,
    },
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long, env = "OOCRAN_PORT", default_value_t = 8080)]
    pub port: u16,
    #[arg(long, env = "OOCRAN_HOST", default_value = "127.0.0.1")]
    pub host: IpAddr,
    /// Directory for the catalog and the shutdown snapshot.
    #[arg(long, env = "OOCRAN_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Inventory JSON (compute nodes, RF frontends, bands).
    #[arg(long, env = "OOCRAN_INVENTORY")]
    pub inventory: Option<PathBuf>,
    /// Milliseconds of wall time per simulated second; 0 for manual stepping.
    #[arg(long, env = "OOCRAN_TICK_MS", default_value_t = 1000)]
    pub tick_ms: u64,
    /// Start without stock descriptors and alarm rule.
    #[arg(long)]
    pub empty_catalog: bool,
}

#[derive(Subcommand, Debug)]
pub enum DescriptorOp {
    /// Store a descriptor from a JSON file.
    Add { file: PathBuf },
    /// Print all stored descriptors.
    List,
}

#[derive(Subcommand, Debug)]
pub enum NsOp {
    /// Instantiate an NSD; prints the new ns_id.
    Deploy {
        #[arg(long)]
        nsd: String,
    },
    /// Print every NS instance.
    List,
    /// Print one NS instance.
    Show { ns_id: String },
    /// Stop and redeploy an NS from another NSD.
    Reconfigure {
        ns_id: String,
        #[arg(long)]
        nsd: String,
    },
    /// Tear an NS down and release its resources.
    Terminate { ns_id: String },
}

#[derive(Subcommand, Debug)]
pub enum SimOp {
    /// Run a scenario locally, without a server.
    Run {
        scenario: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Load a scenario into the running server.
    Load { scenario: PathBuf },
    /// Print a built-in scenario (demo, baseline).
    Example { name: String },
    /// Advance the server clock by n ticks.
    Tick {
        #[arg(long, default_value_t = 1)]
        n: u64,
    },
}

fn print(v: &Value) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn read_json(path: &PathBuf) -> anyhow::Result<Value> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not valid JSON", path.display()))
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    let api = || ApiClient::new(&cli.url, &cli.token);
    match cli.command {
        Command::Serve(a) => {
            let cfg = ServeConfig {
                host: a.host,
                port: a.port,
                data_dir: a.data_dir,
                inventory: a.inventory,
                token: cli.token.clone(),
                tick_ms: a.tick_ms,
                empty_catalog: a.empty_catalog,
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(server::serve(cfg))
        }
        Command::Vnfd { op } => descriptor(&api(), "/vnfds", op),
        Command::Nsd { op } => descriptor(&api(), "/nsds", op),
        Command::Ns { op } => {
            let c = api();
            match op {
                NsOp::Deploy { nsd } => {
                    let v = c.post("/ns", &json!({ "nsd": nsd }))?;
                    println!("{}", v["ns_id"].as_str().unwrap_or_default());
                    Ok(())
                }
                NsOp::List => print(&c.get("/ns")?),
                NsOp::Show { ns_id } => print(&c.get(&format!("/ns/{ns_id}"))?),
                NsOp::Reconfigure { ns_id, nsd } => {
                    print(&c.post(&format!("/ns/{ns_id}/reconfigure"), &json!({ "nsd": nsd }))?)
                }
                NsOp::Terminate { ns_id } => print(&c.delete(&format!("/ns/{ns_id}"))?),
            }
        }
        Command::Spectrum => print(&api().get("/spectrum")?),
        Command::Infra => print(&api().get("/infra")?),
        Command::Tasks { ns_id } => {
            let path = match ns_id {
                Some(id) => format!("/tasks?ns_id={id}"),
                None => "/tasks".to_string(),
            };
            print(&api().get(&path)?)
        }
        Command::Sim { op } => match op {
            SimOp::Run { scenario, report } => sim_run(&scenario, report.as_ref()),
            SimOp::Load { scenario } => {
                print(&api().post("/sim/scenario", &read_json(&scenario)?)?)
            }
            SimOp::Example { name } => {
                let s = match name.as_str() {
                    "demo" => Scenario::demo(),
                    "baseline" => Scenario::baseline(),
                    other => anyhow::bail!("unknown example {other:?}; try demo or baseline"),
                };
                print(&serde_json::to_value(s)?)
            }
            SimOp::Tick { n } => print(&api().post(&format!("/sim/tick?n={n}"), &json!({}))?),
        },
    }
}

fn descriptor(c: &ApiClient, path: &str, op: DescriptorOp) -> anyhow::Result<()> {
    match op {
        DescriptorOp::Add { file } => print(&c.post(path, &read_json(&file)?)?),
        DescriptorOp::List => print(&c.get(path)?),
    }
}

fn sim_run(path: &PathBuf, out: Option<&PathBuf>) -> anyhow::Result<()> {
    let text =
        fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let scenario: Scenario = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a valid scenario", path.display()))?;
    let started = Instant::now();
    let report = run_scenario(&scenario)?;
    let json = serde_json::to_string_pretty(&report)?;
    match out {
        Some(p) => {
            fs::write(p, json).with_context(|| format!("cannot write {}", p.display()))?;
            eprintln!(
                "{} events, {} series, {} decisions in {:.0} ms -> {}",
                report.events.len(),
                report.traces.len(),
                report.decisions.len(),
                started.elapsed().as_secs_f64() * 1e3,
                p.display()
            );
        }
        None => println!("{json}"),
    }
    Ok(())
}
