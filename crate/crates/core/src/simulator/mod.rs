//! Event-driven simulation of the mixed fleet under the four policies.

pub mod config;
pub mod demand;
mod engine;
pub mod experiments;
pub mod fleet;
pub mod report;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{DemandSource, NetworkSource, SimConfig, StaticPricingParams, SyntheticDemand};
pub use demand::DemandRecord;
pub use engine::{resolve_overbooking, Acceptance, Assigned, OverbookingOutcome};
pub use report::{DayStats, IntervalStats, ModeStats, SimReport};

use crate::costs::{CellState, ExpectedCostTable, OdPair};
use crate::error::{Error, Result};
use crate::matching::Request;
use crate::network::{kmeans_cluster, ClusterMap, RoadNetwork, METERS_PER_MILE};

/// Named random substreams of the run seed.
pub const STREAM_DEMAND: u64 = 1;
pub const STREAM_CHOICE: u64 = 2;
pub const STREAM_FLEET: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Policy {
    Spd,
    Bpd,
    SeqStatic,
    BatchStatic,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Spd, Policy::Bpd, Policy::SeqStatic, Policy::BatchStatic];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Spd => "spd",
            Policy::Bpd => "bpd",
            Policy::SeqStatic => "seq-static",
            Policy::BatchStatic => "batch-static",
        }
    }

    pub fn is_batched(self) -> bool {
        matches!(self, Policy::Bpd | Policy::BatchStatic)
    }

    pub fn is_static(self) -> bool {
        matches!(self, Policy::SeqStatic | Policy::BatchStatic)
    }
}

impl FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Policy::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy {s:?} (spd, bpd, seq-static, batch-static)")))
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `max(f_min, f_base + f_t t + f_d d)` on the request's direct trip.
pub fn static_price(params: &StaticPricingParams, r: &Request) -> f64 {
    let miles = r.direct_length / METERS_PER_MILE;
    params.f_min.max(params.f_base + params.f_t * r.direct_time + params.f_d * miles)
}

/// `(1 - discount * theta + surcharge) * p_e` with the pair's sharing probability.
pub fn static_shared_price(params: &StaticPricingParams, p_e: f64, od: OdPair) -> f64 {
    let theta = params.theta.get(&od).copied().unwrap_or(params.theta_default);
    (1.0 - params.kappa_discount * theta + params.kappa_surcharge) * p_e
}

/// Uniform draw deciding request `request`'s choice. Each request owns a fixed
/// position in the choice substream, so policies see common random numbers.
pub fn choice_draw(seed: u64, request: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_CHOICE);
    rng.set_word_pos(request as u128 * 2);
    rng.gen()
}

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn load_network(source: &NetworkSource) -> Result<RoadNetwork> {
    match source {
        NetworkSource::Files { nodes, edges } => RoadNetwork::from_csv(nodes, edges),
        NetworkSource::Grid { rows, cols, spacing_m, speed_mps } => {
            RoadNetwork::grid(*rows, *cols, *spacing_m, *speed_mps)
        }
    }
}

/// Everything a run needs, loaded once and shared by repeated runs.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: SimConfig,
    pub net: Arc<RoadNetwork>,
    pub clusters: Arc<ClusterMap>,
    /// Sorted by time, within the horizon.
    pub demand: Vec<DemandRecord>,
    pub cost_table: Option<ExpectedCostTable>,
}

impl Scenario {
    pub fn load(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let net = load_network(&config.network)?;
        let clusters = kmeans_cluster(&net, config.clusters.min(net.len()), config.cluster_seed)?;
        let cost_table = config.expected_costs.as_deref().map(ExpectedCostTable::read_csv).transpose()?;
        let mut sc = Self { config, net: Arc::new(net), clusters: Arc::new(clusters), demand: Vec::new(), cost_table };
        sc.demand = sc.demand_for_seed(sc.config.seed)?;
        Ok(sc)
    }

    /// The configured demand; synthetic demand is drawn from `seed`'s demand substream.
    pub fn demand_for_seed(&self, seed: u64) -> Result<Vec<DemandRecord>> {
        let mut d = match &self.config.demand {
            DemandSource::File(p) => demand::load_demand_csv(&self.net, p)?,
            DemandSource::Synthetic(spec) => {
                demand::generate_demand(spec, &self.clusters, self.config.horizon_s, &mut substream(seed, STREAM_DEMAND))?
            }
        };
        d.retain(|r| r.time < self.config.horizon_s);
        Ok(d)
    }

    pub fn run(&self, policy: Policy) -> Result<SimOutcome> {
        self.run_with(policy, &SimOptions::default())
    }

    pub fn run_with(&self, policy: Policy, options: &SimOptions) -> Result<SimOutcome> {
        engine::Engine::new(self, policy, options)?.run()
    }
}

/// Optional artifacts written during batched runs.
#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    /// RV and ESV graphs as CSV, one pair of files per batch.
    pub graphs_dir: Option<PathBuf>,
    /// Assignment problems and solutions as JSON.
    pub ilp_dir: Option<PathBuf>,
    /// Batches to dump; zero means all.
    pub dump_limit: usize,
}

/// Fleet state measured in one cluster at the start of a rate period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSnapshot {
    pub interval: usize,
    pub cluster: usize,
    pub state: CellState,
    pub zeta_s: f64,
    pub rate_e: f64,
    pub rate_s: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub report: SimReport,
    pub series: Vec<IntervalStats>,
    /// Realized operational cost of each first shared rider, by O-D cluster pair.
    pub shared_costs: Vec<(OdPair, f64)>,
    /// Served shared riders per O-D cluster pair: (pooled, total).
    pub sharing: BTreeMap<OdPair, (u64, u64)>,
    pub cells: Vec<CellSnapshot>,
}

impl SimOutcome {
    /// Observed sharing probability per O-D cluster pair.
    pub fn theta(&self) -> BTreeMap<OdPair, f64> {
        self.sharing.iter().filter(|(_, (_, n))| *n > 0).map(|(od, (p, n))| (*od, *p as f64 / *n as f64)).collect()
    }
}

pub fn run_simulation(config: &SimConfig, policy: Policy) -> Result<SimReport> {
    Ok(Scenario::load(config.clone())?.run(policy)?.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(net: &RoadNetwork, o: usize, d: usize) -> Request {
        Request::new(net, 0, o, d, 0.0, 300.0, 600.0).unwrap()
    }

    #[test]
    fn static_fares() {
        let p = StaticPricingParams::default();
        let net = RoadNetwork::grid(1, 2, 2.0 * METERS_PER_MILE, 2.0 * METERS_PER_MILE / 600.0).unwrap();
        assert!((static_price(&p, &req(&net, 0, 1)) - 9.0).abs() < 1e-12);
        let short = RoadNetwork::grid(1, 2, 10.0, 10.0).unwrap();
        assert_eq!(static_price(&p, &req(&short, 0, 1)), 5.0);
        let zero = StaticPricingParams { f_min: 0.0, ..p.clone() };
        let r = Request { direct_time: 0.0, direct_length: 0.0, ..req(&short, 0, 1) };
        assert_eq!(static_price(&zero, &r), 2.0);

        let mut p = p;
        assert!((static_shared_price(&p, 10.0, (0, 0)) - 12.0).abs() < 1e-12);
        p.theta.insert((0, 1), 1.0);
        p.theta.insert((1, 0), 0.5);
        assert!((static_shared_price(&p, 10.0, (0, 1)) - 9.0).abs() < 1e-12);
        assert!((static_shared_price(&p, 10.0, (1, 0)) - 10.5).abs() < 1e-12);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in Policy::ALL {
            assert_eq!(p.as_str().parse::<Policy>().unwrap(), p);
        }
        assert!("greedy".parse::<Policy>().is_err());
    }

    #[test]
    fn choice_draws_are_positional() {
        let a = choice_draw(5, 10);
        assert_eq!(a, choice_draw(5, 10));
        assert_ne!(a, choice_draw(5, 11));
        assert_ne!(a, choice_draw(6, 10));
        assert!((0.0..1.0).contains(&a));
    }
}
