//! `modjoint` command-line interface.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use modjoint::bpd_pricing::{optimize_batch_prices, BatchPricingInstance, RequestSide};
use modjoint::network::RoadNetwork;
use modjoint::simulator::config::write_theta_csv;
use modjoint::simulator::demand::{load_demand_csv, write_demand_csv};
use modjoint::simulator::experiments::{
    calibrate_price_multiplier, default_sweep_grid, run_cost_convergence, sweep_retrospective_multiplier,
};
use modjoint::simulator::report::write_series_csv;
use modjoint::simulator::{
    load_network, DemandSource, NetworkSource, Policy, Scenario, SimConfig, SimOptions,
    SimReport,
};
use modjoint::spd_pricing::{spd_optimal_prices, SpdInstance};

#[derive(Parser)]
#[command(name = "modjoint", version, about = "Joint pricing and dispatching for a mixed exclusive/shared fleet")]
struct Cli {
    /// Flat `key = value` config file; defaults apply when absent.
    #[arg(long, global = true, env = "MODJOINT_CONFIG")]
    config: Option<PathBuf>,

    /// Worker threads for graph building and pricing (results do not depend on it).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and print its report as JSON.
    Simulate(SimulateArgs),
    /// Sequential optimal prices for one request.
    PriceQuote(PriceQuoteArgs),
    /// Joint prices for a pooled pair of requests.
    BatchQuote(BatchQuoteArgs),
    /// Pick the price-sensitivity multiplier matching the static fare level.
    CalibrateMultiplier(CalibrateArgs),
    /// Profit against the retrospective-cost multiplier.
    SweepRetrospective(SweepArgs),
    /// Learn the expected shared-cost table over repeated days.
    CostConverge(ConvergeArgs),
    /// Write synthetic demand as CSV.
    GenDemand(GenDemandArgs),
    /// Check that the network and demand load cleanly.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// spd, bpd, seq-static or batch-static.
    #[arg(long)]
    policy: Option<Policy>,
    #[arg(long)]
    seed: Option<u64>,
    /// Demand CSV overriding the config.
    #[arg(long)]
    demand: Option<PathBuf>,
    /// Per-period time series as CSV.
    #[arg(long)]
    series_out: Option<PathBuf>,
    /// Write RV and ESV graphs of each batch into this directory.
    #[arg(long)]
    dump_graphs: Option<PathBuf>,
    /// Write each batch's assignment problem and solution into this directory.
    #[arg(long)]
    dump_ilp: Option<PathBuf>,
    /// Batches to dump (0 = all).
    #[arg(long, default_value_t = 20)]
    dump_limit: usize,
    /// Also write the manifest, with wall-clock timings, to this file.
    #[arg(long)]
    manifest_out: Option<PathBuf>,
    /// Re-run the configuration and policy recorded in a manifest or report.
    #[arg(long, conflicts_with_all = ["policy", "seed", "demand"])]
    from_manifest: Option<PathBuf>,
}

#[derive(Args)]
struct PriceQuoteArgs {
    #[arg(long, allow_hyphen_values = true)]
    u_e: f64,
    #[arg(long, allow_hyphen_values = true)]
    u_s: f64,
    #[arg(long, allow_hyphen_values = true)]
    u_o: f64,
    #[arg(long, allow_hyphen_values = true)]
    c_e: f64,
    #[arg(long, allow_hyphen_values = true)]
    c_s: f64,
    /// Negative price coefficient.
    #[arg(long, allow_hyphen_values = true)]
    beta_p: f64,
}

#[derive(Args)]
struct BatchQuoteArgs {
    /// Request 1 as `c_e,c_s,u_e,u_s,u_o`.
    #[arg(long, allow_hyphen_values = true)]
    r1: String,
    /// Request 2 as `c_e,c_s,u_e,u_s,u_o`.
    #[arg(long, allow_hyphen_values = true)]
    r2: String,
    /// Cost of the pooled trip.
    #[arg(long, allow_hyphen_values = true)]
    c_ss: f64,
    #[arg(long, allow_hyphen_values = true)]
    beta_p: f64,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long, default_value = "spd")]
    policy: Policy,
    #[arg(long, value_delimiter = ',', default_value = "1.2,1.4,1.6,1.8,2.0")]
    candidates: Vec<f64>,
}

#[derive(Args)]
struct SweepArgs {
    /// Multipliers; defaults to 0.0, 0.1, ..., 1.0.
    #[arg(long, value_delimiter = ',')]
    grid: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "spd,bpd")]
    policies: Vec<Policy>,
}

#[derive(Args)]
struct ConvergeArgs {
    #[arg(long, default_value_t = 7)]
    days: usize,
    #[arg(long, default_value = "seq-static")]
    policy: Policy,
    /// Replay the same demand every day instead of reseeding.
    #[arg(long)]
    identical: bool,
    /// Learned expected-cost table as CSV.
    #[arg(long)]
    table_out: Option<PathBuf>,
    /// Observed sharing probabilities as CSV.
    #[arg(long)]
    theta_out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDemandArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ValidateArgs {
    /// Demand CSV overriding the config.
    #[arg(long)]
    demand: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct InputHash {
    path: String,
    sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Timing {
    started_unix_s: u64,
    elapsed_s: f64,
}

/// Everything needed to reproduce a report.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct RunManifest {
    artifact: String,
    version: String,
    policy: Policy,
    seed: u64,
    /// Resolved configuration in config-file syntax.
    config: String,
    inputs: Vec<InputHash>,
    #[serde(skip_serializing_if = "Option::is_none")]
    timing: Option<Timing>,
}

#[derive(Serialize, Deserialize)]
struct Output {
    manifest: RunManifest,
    report: SimReport,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load_config(path: Option<&Path>) -> anyhow::Result<SimConfig> {
    match path {
        Some(p) => {
            let p = std::fs::canonicalize(p).with_context(|| format!("config {}", p.display()))?;
            Ok(SimConfig::from_file(&p)?)
        }
        None => Ok(SimConfig::default()),
    }
}

fn hash_file(path: &Path) -> anyhow::Result<InputHash> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(InputHash { path: path.display().to_string(), sha256: hex::encode(Sha256::digest(&bytes)) })
}

fn input_hashes(config_path: Option<&Path>, cfg: &SimConfig) -> anyhow::Result<Vec<InputHash>> {
    let mut paths: Vec<PathBuf> = config_path.map(Path::to_path_buf).into_iter().collect();
    if let NetworkSource::Files { nodes, edges } = &cfg.network {
        paths.extend([nodes.clone(), edges.clone()]);
    }
    if let DemandSource::File(p) = &cfg.demand {
        paths.push(p.clone());
    }
    paths.extend(cfg.expected_costs.iter().cloned());
    paths.extend(cfg.theta_file.iter().cloned());
    paths.iter().map(|p| hash_file(p)).collect()
}

fn print_json<T: Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string(value)?);
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config_path = cli.config.as_deref();
    match cli.command {
        Command::Simulate(a) => simulate(config_path, a),
        Command::PriceQuote(a) => {
            let inst = SpdInstance { u_e: a.u_e, u_s: a.u_s, u_o: a.u_o, c_e: a.c_e, c_s: a.c_s, beta_p: a.beta_p };
            print_json(&spd_optimal_prices(&inst)?)
        }
        Command::BatchQuote(a) => {
            let inst = BatchPricingInstance {
                requests: [parse_side(&a.r1)?, parse_side(&a.r2)?],
                c_ss: a.c_ss,
                beta_p: a.beta_p,
            };
            print_json(&optimize_batch_prices(&inst)?)
        }
        Command::CalibrateMultiplier(a) => {
            let sc = Scenario::load(load_config(config_path)?)?;
            print_json(&calibrate_price_multiplier(&sc, a.policy, &a.candidates)?)
        }
        Command::SweepRetrospective(a) => {
            let sc = Scenario::load(load_config(config_path)?)?;
            let grid = a.grid.unwrap_or_else(default_sweep_grid);
            print_json(&sweep_retrospective_multiplier(&sc, &grid, &a.policies)?)
        }
        Command::CostConverge(a) => {
            let sc = Scenario::load(load_config(config_path)?)?;
            let c = run_cost_convergence(&sc, a.days, a.policy, a.identical)?;
            if let Some(p) = &a.table_out {
                c.table.write_csv(p)?;
            }
            if let Some(p) = &a.theta_out {
                write_theta_csv(&c.theta, p)?;
            }
            #[derive(Serialize)]
            struct Out {
                days: usize,
                policy: Policy,
                mad: Vec<f64>,
            }
            print_json(&Out { days: a.days, policy: a.policy, mad: c.mad })
        }
        Command::GenDemand(a) => {
            let mut cfg = load_config(config_path)?;
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if !matches!(cfg.demand, DemandSource::Synthetic(_)) {
                bail!("gen-demand needs a synthetic demand config (no demand_file)");
            }
            let sc = Scenario::load(cfg)?;
            write_demand_csv(&sc.net, &sc.demand, &a.out)?;
            eprintln!("wrote {} requests to {}", sc.demand.len(), a.out.display());
            Ok(())
        }
        Command::Validate(a) => {
            let cfg = load_config(config_path)?;
            let net = load_network(&cfg.network)?;
            let all: Vec<usize> = (0..net.len()).collect();
            net.check_strongly_connected(&all)?;
            let demand_path = a.demand.or(match &cfg.demand {
                DemandSource::File(p) => Some(p.clone()),
                DemandSource::Synthetic(_) => None,
            });
            let demand = match &demand_path {
                Some(p) => format!("{} requests", load_demand_csv(&net, p)?.len()),
                None => "synthetic demand".to_string(),
            };
            summarize(&net, &demand);
            Ok(())
        }
    }
}

fn summarize(net: &RoadNetwork, demand: &str) {
    eprintln!("ok: {} nodes, {} edges, {demand}", net.len(), net.edge_count());
}

fn parse_side(s: &str) -> anyhow::Result<RequestSide> {
    let v: Vec<f64> = s.split(',').map(|x| x.trim().parse::<f64>()).collect::<Result<_, _>>()?;
    let [c_e, c_s, u_e, u_s, u_o] = v[..] else {
        bail!("expected five comma-separated numbers c_e,c_s,u_e,u_s,u_o, got {s:?}");
    };
    Ok(RequestSide { c_e, c_s, u_e, u_s, u_o })
}

fn simulate(config_path: Option<&Path>, a: SimulateArgs) -> anyhow::Result<()> {
    let started = SystemTime::now();
    let clock = Instant::now();
    let (mut cfg, policy, config_file, recorded) = match &a.from_manifest {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            let m: RunManifest = match serde_json::from_str::<Output>(&text) {
                Ok(o) => o.manifest,
                Err(_) => serde_json::from_str(&text).context("not a manifest or report")?,
            };
            for input in &m.inputs {
                let now = hash_file(Path::new(&input.path))?;
                if now.sha256 != input.sha256 {
                    bail!("input {} changed since the manifest was written", input.path);
                }
            }
            (SimConfig::parse_str(&m.config, Path::new("/"))?, m.policy, None, Some(m.inputs))
        }
        None => {
            let cfg = load_config(config_path)?;
            let path = config_path.map(std::fs::canonicalize).transpose()?;
            (cfg, a.policy.unwrap_or(Policy::Spd), path, None)
        }
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(d) = &a.demand {
        cfg.demand = DemandSource::File(std::fs::canonicalize(d).with_context(|| format!("demand {}", d.display()))?);
    }
    let sc = Scenario::load(cfg)?;
    let options = SimOptions { graphs_dir: a.dump_graphs.clone(), ilp_dir: a.dump_ilp.clone(), dump_limit: a.dump_limit };
    let out = sc.run_with(policy, &options)?;
    if let Some(p) = &a.series_out {
        write_series_csv(&out.series, p)?;
    }
    let mut manifest = RunManifest {
        artifact: "modjoint".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        policy,
        seed: sc.config.seed,
        config: sc.config.to_kv(),
        inputs: match recorded {
            Some(inputs) => inputs,
            None => input_hashes(config_file.as_deref(), &sc.config)?,
        },
        timing: None,
    };
    print_json(&Output { manifest: manifest.clone(), report: out.report })?;
    if let Some(p) = &a.manifest_out {
        manifest.timing = Some(Timing {
            started_unix_s: started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            elapsed_s: clock.elapsed().as_secs_f64(),
        });
        std::fs::write(p, serde_json::to_string_pretty(&manifest)?)?;
    }
    Ok(())
}
