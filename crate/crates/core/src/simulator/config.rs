//! Flat `key = value` configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::choice::ChoiceParams;
use crate::costs::OdPair;
use crate::error::{Error, Result};

/// Benchmark fare `max(f_min, f_base + f_t t + f_d d)` and its shared split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticPricingParams {
    pub f_min: f64,
    pub f_base: f64,
    /// Per second.
    pub f_t: f64,
    /// Per mile.
    pub f_d: f64,
    /// Shared price is `(1 - discount * theta + surcharge) * p_e`.
    pub kappa_discount: f64,
    pub kappa_surcharge: f64,
    /// Sharing probability for O-D pairs missing from `theta`.
    pub theta_default: f64,
    pub theta: BTreeMap<OdPair, f64>,
}

impl Default for StaticPricingParams {
    fn default() -> Self {
        Self {
            f_min: 5.0,
            f_base: 2.0,
            f_t: 0.35 / 60.0,
            f_d: 1.75,
            kappa_discount: 0.3,
            kappa_surcharge: 0.2,
            theta_default: 0.0,
            theta: BTreeMap::new(),
        }
    }
}

impl StaticPricingParams {
    pub fn validate(&self) -> Result<()> {
        let fares = [self.f_min, self.f_base, self.f_t, self.f_d];
        if fares.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config("static fares must be finite and nonnegative".into()));
        }
        if self.theta.values().chain([&self.theta_default]).any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("theta values must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum NetworkSource {
    Files { nodes: PathBuf, edges: PathBuf },
    Grid { rows: usize, cols: usize, spacing_m: f64, speed_mps: f64 },
}

/// Time-inhomogeneous Poisson demand with a two-peak daily profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDemand {
    pub requests_per_day: f64,
    /// Peak centers, hours of the day.
    pub peak1_h: f64,
    pub peak2_h: f64,
    pub peak_width_h: f64,
    /// Share of daily demand carried by the two peaks together.
    pub peak_share: f64,
    /// Relative origin and destination weights per cluster; empty means uniform.
    pub origin_weights: Vec<f64>,
    pub dest_weights: Vec<f64>,
}

impl Default for SyntheticDemand {
    fn default() -> Self {
        Self {
            requests_per_day: 2000.0,
            peak1_h: 8.5,
            peak2_h: 18.0,
            peak_width_h: 1.5,
            peak_share: 0.5,
            origin_weights: Vec::new(),
            dest_weights: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DemandSource {
    File(PathBuf),
    Synthetic(SyntheticDemand),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub seed: u64,
    pub horizon_s: f64,
    pub n_exclusive: usize,
    pub n_shared: usize,
    pub batch_window_s: f64,
    pub max_wait_s: f64,
    pub max_delay_s: f64,
    /// Length of the profit-rate periods.
    pub interval_s: f64,
    pub choice: ChoiceParams,
    pub per_mile_cost: f64,
    pub c_p: f64,
    pub retrospective_multiplier: f64,
    pub static_pricing: StaticPricingParams,
    /// Outside option: price is this factor times the static fare.
    pub outside_price_factor: f64,
    pub outside_wait_s: f64,
    /// Wait-function constants `eta = a / sqrt(open)` per service.
    pub wait_a_e: f64,
    pub wait_a_s: f64,
    pub network: NetworkSource,
    pub clusters: usize,
    pub cluster_seed: u64,
    pub demand: DemandSource,
    pub expected_costs: Option<PathBuf>,
    /// Source of `static_pricing.theta`, if any.
    pub theta_file: Option<PathBuf>,
    /// `None` uses the policy default (on for batched, off for sequential).
    pub rebalance: Option<bool>,
    pub rebalance_idle_s: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            horizon_s: 86_400.0,
            n_exclusive: 50,
            n_shared: 25,
            batch_window_s: 30.0,
            max_wait_s: 300.0,
            max_delay_s: 600.0,
            interval_s: 1200.0,
            choice: ChoiceParams { price_multiplier: 1.8, ..ChoiceParams::default() },
            per_mile_cost: 0.1458,
            c_p: 5.0,
            retrospective_multiplier: 0.0,
            static_pricing: StaticPricingParams::default(),
            outside_price_factor: 1.0,
            outside_wait_s: 180.0,
            wait_a_e: 300.0,
            wait_a_s: 300.0,
            network: NetworkSource::Grid { rows: 16, cols: 16, spacing_m: 500.0, speed_mps: 8.0 },
            clusters: 25,
            cluster_seed: 0,
            demand: DemandSource::Synthetic(SyntheticDemand::default()),
            expected_costs: None,
            theta_file: None,
            rebalance: None,
            rebalance_idle_s: 300.0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("line {line}: cannot parse {key} = {value:?}")))
}

fn parse_list(key: &str, value: &str, line: usize) -> Result<Vec<f64>> {
    if value.is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim(), line)).collect()
}

fn parse_bool(key: &str, value: &str, line: usize) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("line {line}: {key} expects a boolean, got {value:?}"))),
    }
}

/// Reads a `o_cluster,d_cluster,theta` CSV.
pub fn read_theta_csv(path: &Path) -> Result<BTreeMap<OdPair, f64>> {
    #[derive(Deserialize)]
    struct Row {
        o_cluster: usize,
        d_cluster: usize,
        theta: f64,
    }
    let mut out = BTreeMap::new();
    let mut rdr = csv::Reader::from_path(path)?;
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let r = row.map_err(|e| Error::load(path, i as u64 + 2, e.to_string()))?;
        if !(0.0..=1.0).contains(&r.theta) {
            return Err(Error::load(path, i as u64 + 2, "theta outside [0, 1]"));
        }
        out.insert((r.o_cluster, r.d_cluster), r.theta);
    }
    Ok(out)
}

pub fn write_theta_csv(theta: &BTreeMap<OdPair, f64>, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["o_cluster", "d_cluster", "theta"])?;
    for ((o, d), t) in theta {
        w.write_record([o.to_string(), d.to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

impl SimConfig {
    /// Parses config text. Relative paths resolve against `base`.
    pub fn parse_str(text: &str, base: &Path) -> Result<Self> {
        let mut c = SimConfig::default();
        let mut grid = (16usize, 16usize, 500.0f64, 8.0f64);
        let mut nodes: Option<PathBuf> = None;
        let mut edges: Option<PathBuf> = None;
        let mut synth = SyntheticDemand::default();
        let mut demand_file: Option<PathBuf> = None;
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() { p } else { base.join(p) }
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(Error::Config(format!("line {line}: expected key = value")));
            };
            let (k, v) = (k.trim(), v.trim());
            match k {
                "seed" => c.seed = parse(k, v, line)?,
                "horizon_s" => c.horizon_s = parse(k, v, line)?,
                "n_exclusive" => c.n_exclusive = parse(k, v, line)?,
                "n_shared" => c.n_shared = parse(k, v, line)?,
                "batch_window_s" => c.batch_window_s = parse(k, v, line)?,
                "max_wait_s" => c.max_wait_s = parse(k, v, line)?,
                "max_delay_s" => c.max_delay_s = parse(k, v, line)?,
                "interval_s" => c.interval_s = parse(k, v, line)?,
                "beta_p" => c.choice.beta_p = parse(k, v, line)?,
                "beta_w" => c.choice.beta_w = parse(k, v, line)?,
                "beta_t" => c.choice.beta_t = parse(k, v, line)?,
                "price_multiplier" => c.choice.price_multiplier = parse(k, v, line)?,
                "asc_e" => c.choice.asc_e = parse(k, v, line)?,
                "asc_s" => c.choice.asc_s = parse(k, v, line)?,
                "asc_o" => c.choice.asc_o = parse(k, v, line)?,
                "per_mile_cost" => c.per_mile_cost = parse(k, v, line)?,
                "c_p" => c.c_p = parse(k, v, line)?,
                "retrospective_multiplier" => c.retrospective_multiplier = parse(k, v, line)?,
                "f_min" => c.static_pricing.f_min = parse(k, v, line)?,
                "f_base" => c.static_pricing.f_base = parse(k, v, line)?,
                "f_t" => c.static_pricing.f_t = parse(k, v, line)?,
                "f_d" => c.static_pricing.f_d = parse(k, v, line)?,
                "kappa_discount" => c.static_pricing.kappa_discount = parse(k, v, line)?,
                "kappa_surcharge" => c.static_pricing.kappa_surcharge = parse(k, v, line)?,
                "theta_default" => c.static_pricing.theta_default = parse(k, v, line)?,
                "theta_file" => c.theta_file = Some(resolve(v)),
                "outside_price_factor" => c.outside_price_factor = parse(k, v, line)?,
                "outside_wait_s" => c.outside_wait_s = parse(k, v, line)?,
                "wait_a_e" => c.wait_a_e = parse(k, v, line)?,
                "wait_a_s" => c.wait_a_s = parse(k, v, line)?,
                "network_nodes" => nodes = Some(resolve(v)),
                "network_edges" => edges = Some(resolve(v)),
                "grid_rows" => grid.0 = parse(k, v, line)?,
                "grid_cols" => grid.1 = parse(k, v, line)?,
                "grid_spacing_m" => grid.2 = parse(k, v, line)?,
                "grid_speed_mps" => grid.3 = parse(k, v, line)?,
                "clusters" => c.clusters = parse(k, v, line)?,
                "cluster_seed" => c.cluster_seed = parse(k, v, line)?,
                "demand_file" => demand_file = Some(resolve(v)),
                "requests_per_day" => synth.requests_per_day = parse(k, v, line)?,
                "peak1_h" => synth.peak1_h = parse(k, v, line)?,
                "peak2_h" => synth.peak2_h = parse(k, v, line)?,
                "peak_width_h" => synth.peak_width_h = parse(k, v, line)?,
                "peak_share" => synth.peak_share = parse(k, v, line)?,
                "origin_weights" => synth.origin_weights = parse_list(k, v, line)?,
                "dest_weights" => synth.dest_weights = parse_list(k, v, line)?,
                "expected_costs" => c.expected_costs = Some(resolve(v)),
                "rebalance" => c.rebalance = Some(parse_bool(k, v, line)?),
                "rebalance_idle_s" => c.rebalance_idle_s = parse(k, v, line)?,
                _ => return Err(Error::Config(format!("line {line}: unknown key {k:?}"))),
            }
        }
        c.network = match (nodes, edges) {
            (Some(nodes), Some(edges)) => NetworkSource::Files { nodes, edges },
            (None, None) => NetworkSource::Grid { rows: grid.0, cols: grid.1, spacing_m: grid.2, speed_mps: grid.3 },
            _ => return Err(Error::Config("network_nodes and network_edges must be given together".into())),
        };
        c.demand = match demand_file {
            Some(p) => DemandSource::File(p),
            None => DemandSource::Synthetic(synth),
        };
        if let Some(p) = &c.theta_file {
            c.static_pricing.theta = read_theta_csv(p)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse_str(&text, base)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_window_s.is_nan() || self.batch_window_s <= 0.0 {
            return Err(Error::Config("batch_window_s must be positive".into()));
        }
        if !(self.max_wait_s > 0.0 && self.max_delay_s > 0.0) {
            return Err(Error::Config("max_wait_s and max_delay_s must be positive".into()));
        }
        if !(self.horizon_s > 0.0 && self.interval_s > 0.0) {
            return Err(Error::Config("horizon_s and interval_s must be positive".into()));
        }
        if self.clusters == 0 {
            return Err(Error::Config("clusters must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.retrospective_multiplier) {
            return Err(Error::Config("retrospective_multiplier must lie in [0, 1]".into()));
        }
        if !(self.wait_a_e > 0.0 && self.wait_a_s > 0.0) {
            return Err(Error::Config("wait_a_e and wait_a_s must be positive".into()));
        }
        self.choice.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.static_pricing.validate()
    }

    /// Resolved configuration as `key = value` lines, parseable by
    /// [`SimConfig::parse_str`].
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("horizon_s", self.horizon_s.to_string());
        kv("n_exclusive", self.n_exclusive.to_string());
        kv("n_shared", self.n_shared.to_string());
        kv("batch_window_s", self.batch_window_s.to_string());
        kv("max_wait_s", self.max_wait_s.to_string());
        kv("max_delay_s", self.max_delay_s.to_string());
        kv("interval_s", self.interval_s.to_string());
        kv("beta_p", self.choice.beta_p.to_string());
        kv("beta_w", self.choice.beta_w.to_string());
        kv("beta_t", self.choice.beta_t.to_string());
        kv("price_multiplier", self.choice.price_multiplier.to_string());
        kv("asc_e", self.choice.asc_e.to_string());
        kv("asc_s", self.choice.asc_s.to_string());
        kv("asc_o", self.choice.asc_o.to_string());
        kv("per_mile_cost", self.per_mile_cost.to_string());
        kv("c_p", self.c_p.to_string());
        kv("retrospective_multiplier", self.retrospective_multiplier.to_string());
        let sp = &self.static_pricing;
        kv("f_min", sp.f_min.to_string());
        kv("f_base", sp.f_base.to_string());
        kv("f_t", sp.f_t.to_string());
        kv("f_d", sp.f_d.to_string());
        kv("kappa_discount", sp.kappa_discount.to_string());
        kv("kappa_surcharge", sp.kappa_surcharge.to_string());
        kv("theta_default", sp.theta_default.to_string());
        kv("outside_price_factor", self.outside_price_factor.to_string());
        kv("outside_wait_s", self.outside_wait_s.to_string());
        kv("wait_a_e", self.wait_a_e.to_string());
        kv("wait_a_s", self.wait_a_s.to_string());
        match &self.network {
            NetworkSource::Files { nodes, edges } => {
                kv("network_nodes", nodes.display().to_string());
                kv("network_edges", edges.display().to_string());
            }
            NetworkSource::Grid { rows, cols, spacing_m, speed_mps } => {
                kv("grid_rows", rows.to_string());
                kv("grid_cols", cols.to_string());
                kv("grid_spacing_m", spacing_m.to_string());
                kv("grid_speed_mps", speed_mps.to_string());
            }
        }
        kv("clusters", self.clusters.to_string());
        kv("cluster_seed", self.cluster_seed.to_string());
        match &self.demand {
            DemandSource::File(p) => kv("demand_file", p.display().to_string()),
            DemandSource::Synthetic(d) => {
                kv("requests_per_day", d.requests_per_day.to_string());
                kv("peak1_h", d.peak1_h.to_string());
                kv("peak2_h", d.peak2_h.to_string());
                kv("peak_width_h", d.peak_width_h.to_string());
                kv("peak_share", d.peak_share.to_string());
                let list = |w: &[f64]| w.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
                kv("origin_weights", list(&d.origin_weights));
                kv("dest_weights", list(&d.dest_weights));
            }
        }
        if let Some(p) = &self.expected_costs {
            kv("expected_costs", p.display().to_string());
        }
        if let Some(p) = &self.theta_file {
            kv("theta_file", p.display().to_string());
        }
        if let Some(b) = self.rebalance {
            kv("rebalance", b.to_string());
        }
        kv("rebalance_idle_s", self.rebalance_idle_s.to_string());
        s
    }
}
