//! Operational and retrospective cost machinery.
//!
//! * expected shared operational cost of a request that may be pooled later,
//! * steady-state fleet flow per (cluster, interval) cell and the resulting
//!   throughputs,
//! * regional profit rates and the retrospective cost built from them,
//! * the three-state occupancy chain giving mean shared-vehicle utilization,
//! * the day-over-day O-D expected-cost table and its convergence diagnostic.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::choice::Service;
use crate::error::{Error, Result};

/// Ordered (origin cluster, destination cluster).
pub type OdPair = (usize, usize);

/// One possible future co-rider of a shared request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEntry {
    /// Probability the co-rider is matched, given the request chose shared.
    pub alpha: f64,
    /// Added route cost of serving the co-rider as well.
    pub marginal_cost: f64,
    /// Shared price paid by the co-rider.
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCell {
    pub expected_cost: f64,
    pub samples: u64,
}

/// Learned expected shared operational cost per O-D cluster pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExpectedCostTable {
    cells: BTreeMap<OdPair, CostCell>,
}

#[derive(Debug, Deserialize)]
struct CostRow {
    o_cluster: usize,
    d_cluster: usize,
    expected_cost: f64,
    samples: u64,
}

impl ExpectedCostTable {
    /// Every O-D pair of `k` clusters initialized to zero cost.
    pub fn zeros(k: usize) -> Self {
        let mut cells = BTreeMap::new();
        for o in 0..k {
            for d in 0..k {
                cells.insert((o, d), CostCell { expected_cost: 0.0, samples: 0 });
            }
        }
        Self { cells }
    }

    pub fn get(&self, od: OdPair) -> Option<f64> {
        self.cells.get(&od).map(|c| c.expected_cost)
    }

    pub fn cell(&self, od: OdPair) -> Option<&CostCell> {
        self.cells.get(&od)
    }

    pub fn set(&mut self, od: OdPair, expected_cost: f64, samples: u64) {
        self.cells.insert(od, CostCell { expected_cost, samples });
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&OdPair, &CostCell)> {
        self.cells.iter()
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut cells = BTreeMap::new();
        for (i, row) in rdr.deserialize::<CostRow>().enumerate() {
            let row = row.map_err(|e| Error::load(path, i as u64 + 2, e.to_string()))?;
            if !row.expected_cost.is_finite() {
                return Err(Error::load(path, i as u64 + 2, "expected_cost must be finite"));
            }
            cells.insert(
                (row.o_cluster, row.d_cluster),
                CostCell { expected_cost: row.expected_cost, samples: row.samples },
            );
        }
        Ok(Self { cells })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["o_cluster", "d_cluster", "expected_cost", "samples"])?;
        for ((o, d), c) in &self.cells {
            w.write_record([o.to_string(), d.to_string(), c.expected_cost.to_string(), c.samples.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Folds one simulated day of realized shared operational costs into the table.
///
/// Each observed cell becomes the running mean over every trip seen so far
/// (weighted by the stored sample counts). Returns the mean absolute change
/// over cells that were both present before and observed today; zero when
/// nothing was observed.
pub fn update_expected_costs(table: &mut ExpectedCostTable, realized: &[(OdPair, f64)]) -> f64 {
    let mut sums: BTreeMap<OdPair, (f64, u64)> = BTreeMap::new();
    for &(od, cost) in realized {
        let e = sums.entry(od).or_insert((0.0, 0));
        e.0 += cost;
        e.1 += 1;
    }
    let mut diff = 0.0;
    let mut compared = 0usize;
    for (od, (sum, n)) in sums {
        let (mean, total) = match table.cell(od) {
            Some(prev) => {
                let total = prev.samples + n;
                let mean = (prev.expected_cost * prev.samples as f64 + sum) / total as f64;
                diff += (mean - prev.expected_cost).abs();
                compared += 1;
                (mean, total)
            }
            None => (sum / n as f64, n),
        };
        table.set(od, mean, total);
    }
    if compared == 0 {
        0.0
    } else {
        diff / compared as f64
    }
}

/// Cost inputs shared by every pricing routine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Unmatched-ride operational cost per O-D pair.
    pub c0: BTreeMap<OdPair, f64>,
    /// Used when an O-D pair has no `c0` entry.
    pub default_c0: f64,
    pub per_mile_cost: f64,
    pub alpha_table: BTreeMap<OdPair, Vec<AlphaEntry>>,
    pub od_expected_cost: ExpectedCostTable,
    /// Penalty per lost request.
    pub c_p: f64,
    /// Scale on retrospective costs, in [0, 1].
    pub retrospective_multiplier: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            c0: BTreeMap::new(),
            default_c0: 0.0,
            per_mile_cost: 0.1458,
            alpha_table: BTreeMap::new(),
            od_expected_cost: ExpectedCostTable::default(),
            c_p: 5.0,
            retrospective_multiplier: 0.0,
        }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.retrospective_multiplier) {
            return Err(Error::Param(format!(
                "retrospective multiplier {} outside [0, 1]",
                self.retrospective_multiplier
            )));
        }
        if !self.per_mile_cost.is_finite() || !self.c_p.is_finite() || !self.default_c0.is_finite() {
            return Err(Error::Param("costs must be finite".into()));
        }
        for (od, row) in &self.alpha_table {
            let total: f64 = row.iter().map(|a| a.alpha).sum();
            if total > 1.0 + 1e-12 || row.iter().any(|a| !(0.0..=1.0).contains(&a.alpha)) {
                return Err(Error::Param(format!("alpha row {od:?} is not a sub-probability vector")));
            }
            if row.iter().any(|a| !a.marginal_cost.is_finite() || !a.price.is_finite()) {
                return Err(Error::Param(format!("alpha row {od:?} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn cost_of_meters(&self, meters: f64) -> f64 {
        self.per_mile_cost * meters / crate::network::METERS_PER_MILE
    }

    /// Expected operational cost of a shared request that may be joined later,
    /// using the tabulated `c0` for the pair.
    pub fn expected_shared_operational_cost(&self, od: OdPair) -> f64 {
        let c0 = self.c0.get(&od).copied().unwrap_or(self.default_c0);
        self.expected_shared_cost_with_c0(od, c0)
    }

    /// Same expectation with an explicit solo-ride cost.
    pub fn expected_shared_cost_with_c0(&self, od: OdPair, c0: f64) -> f64 {
        let row = self.alpha_table.get(&od).map(Vec::as_slice).unwrap_or(&[]);
        let matched: f64 = row.iter().map(|a| a.alpha).sum();
        let correction: f64 = row.iter().map(|a| a.alpha * (a.marginal_cost - a.price)).sum();
        (1.0 - matched) * c0 + correction
    }
}

/// Waiting time as a function of open vehicles, `eta = a / sqrt(open)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaitFunction {
    pub a: f64,
}

impl WaitFunction {
    pub fn eval(&self, open: f64) -> Result<f64> {
        if open <= 0.0 {
            return Err(Error::EmptySupply);
        }
        Ok(self.a / open.sqrt())
    }
}

/// Fleet state of one (cluster, interval) cell.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CellState {
    pub l_e: f64,
    pub l_s: f64,
    pub o_e: f64,
    pub o_s: f64,
    /// Mean trip durations in seconds.
    pub t_e: f64,
    pub t_s: f64,
}

impl CellState {
    pub fn total_vehicles(&self) -> f64 {
        self.l_e + self.l_s
    }

    fn vehicles(&self, service: Service) -> (f64, f64, f64) {
        match service {
            Service::Exclusive => (self.l_e, self.o_e, self.t_e),
            Service::Shared => (self.l_s, self.o_s, self.t_s),
        }
    }
}

/// Per-cell steady-state fleet flow model on an `N clusters x M intervals` grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateModel {
    pub clusters: usize,
    pub intervals: usize,
    cells: Vec<CellState>,
    pub wait_e: WaitFunction,
    pub wait_s: WaitFunction,
    /// Mean shared-vehicle utilization, in (0, 2].
    pub zeta_s: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct CellRow {
    cluster: usize,
    interval: usize,
    l_e: f64,
    l_s: f64,
    o_e: f64,
    o_s: f64,
    t_e: f64,
    t_s: f64,
}

impl SteadyStateModel {
    pub fn new(clusters: usize, intervals: usize, wait_e: WaitFunction, wait_s: WaitFunction, zeta_s: f64) -> Result<Self> {
        if !(zeta_s > 0.0 && zeta_s <= 2.0) {
            return Err(Error::Param(format!("zeta_s = {zeta_s} outside (0, 2]")));
        }
        Ok(Self {
            clusters,
            intervals,
            cells: vec![CellState::default(); clusters * intervals],
            wait_e,
            wait_s,
            zeta_s,
        })
    }

    pub fn cell(&self, cluster: usize, interval: usize) -> &CellState {
        &self.cells[cluster * self.intervals + interval]
    }

    pub fn set_cell(&mut self, cluster: usize, interval: usize, state: CellState) -> Result<()> {
        if state.o_e > state.l_e || state.o_s > state.l_s || state.o_e < 0.0 || state.o_s < 0.0 {
            return Err(Error::Param(format!("cell ({cluster}, {interval}): open vehicles exceed fleet")));
        }
        self.cells[cluster * self.intervals + interval] = state;
        Ok(())
    }

    fn wait_fn(&self, service: Service) -> &WaitFunction {
        match service {
            Service::Exclusive => &self.wait_e,
            Service::Shared => &self.wait_s,
        }
    }

    /// Trips per second leaving the cell for one service type.
    pub fn throughput(&self, cluster: usize, interval: usize, service: Service) -> Result<f64> {
        let (l, o, t) = self.cell(cluster, interval).vehicles(service);
        let eta = self.wait_fn(service).eval(o)?;
        let busy = (l - o).max(0.0);
        Ok(match service {
            Service::Exclusive => busy / (eta + t),
            Service::Shared => self.zeta_s * busy / (eta + t),
        })
    }

    /// `L - (O + eta*Y + T*Y)` (shared terms divided by `zeta_s`); zero for a
    /// consistent cell.
    pub fn flow_residual(&self, cluster: usize, interval: usize, service: Service) -> Result<f64> {
        let (l, o, t) = self.cell(cluster, interval).vehicles(service);
        let eta = self.wait_fn(service).eval(o)?;
        let y = self.throughput(cluster, interval, service)?;
        let scale = match service {
            Service::Exclusive => 1.0,
            Service::Shared => self.zeta_s,
        };
        Ok(l - (o + eta * y / scale + t * y / scale))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for cluster in 0..self.clusters {
            for interval in 0..self.intervals {
                let c = self.cell(cluster, interval);
                w.serialize(CellRow {
                    cluster,
                    interval,
                    l_e: c.l_e,
                    l_s: c.l_s,
                    o_e: c.o_e,
                    o_s: c.o_s,
                    t_e: c.t_e,
                    t_s: c.t_s,
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Loads cells into an already dimensioned model.
    pub fn read_cells_csv(&mut self, path: &Path) -> Result<()> {
        let mut rdr = csv::Reader::from_path(path)?;
        for (i, row) in rdr.deserialize::<CellRow>().enumerate() {
            let line = i as u64 + 2;
            let r = row.map_err(|e| Error::load(path, line, e.to_string()))?;
            if r.cluster >= self.clusters || r.interval >= self.intervals {
                return Err(Error::load(path, line, "cell outside the model grid"));
            }
            let state = CellState { l_e: r.l_e, l_s: r.l_s, o_e: r.o_e, o_s: r.o_s, t_e: r.t_e, t_s: r.t_s };
            self.set_cell(r.cluster, r.interval, state).map_err(|e| Error::load(path, line, e.to_string()))?;
        }
        Ok(())
    }
}

/// Listed price and per-trip operational cost per service in one cell.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellPrices {
    pub price_e: f64,
    pub price_s: f64,
    pub cost_e: f64,
    pub cost_s: f64,
}

/// Average profit per second per vehicle, per (cluster, interval, service).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProfitRates {
    pub clusters: usize,
    pub intervals: usize,
    rates: Vec<[f64; 2]>,
}

impl RegionProfitRates {
    pub fn zeros(clusters: usize, intervals: usize) -> Self {
        Self { clusters, intervals, rates: vec![[0.0; 2]; clusters * intervals] }
    }

    pub fn get(&self, cluster: usize, interval: usize, service: Service) -> f64 {
        self.rates[cluster * self.intervals + interval][service.index()]
    }

    /// Stores a rate, clamped at zero.
    pub fn set(&mut self, cluster: usize, interval: usize, service: Service, rate: f64) {
        let v = if rate.is_finite() { rate.max(0.0) } else { 0.0 };
        self.rates[cluster * self.intervals + interval][service.index()] = v;
    }
}

/// Per-vehicle profit rate `Y * margin / L` for one service in one cell.
pub fn profit_rate(throughput: f64, margin: f64, vehicles: f64) -> f64 {
    if vehicles <= 0.0 || throughput <= 0.0 {
        return 0.0;
    }
    (throughput * margin / vehicles).max(0.0)
}

/// Combines solved throughputs with listed prices into per-vehicle profit rates.
///
/// `prices` is indexed like the model cells (`cluster * intervals + interval`).
/// Cells whose wait function is singular get a zero rate.
pub fn region_profit_rates(model: &SteadyStateModel, prices: &[CellPrices]) -> Result<RegionProfitRates> {
    if prices.len() != model.clusters * model.intervals {
        return Err(Error::Param("price table does not match the model grid".into()));
    }
    let mut rates = RegionProfitRates::zeros(model.clusters, model.intervals);
    for cluster in 0..model.clusters {
        for interval in 0..model.intervals {
            let cell = model.cell(cluster, interval);
            let p = &prices[cluster * model.intervals + interval];
            for service in Service::ALL {
                let y = match model.throughput(cluster, interval, service) {
                    Ok(y) => y,
                    Err(Error::EmptySupply) => 0.0,
                    Err(e) => return Err(e),
                };
                let (l, margin) = match service {
                    Service::Exclusive => (cell.l_e, p.price_e - p.cost_e),
                    Service::Shared => (cell.l_s, p.price_s - p.cost_s),
                };
                rates.set(cluster, interval, service, profit_rate(y, margin, l));
            }
        }
    }
    Ok(rates)
}

/// Profit forgone by committing a vehicle to a trip from `origin` to `dest`:
/// `multiplier * (eps_o * t_r + (eps_o - eps_d) * t_r_prime)`.
pub fn retrospective_cost(eps_origin: f64, eps_dest: f64, t_r: f64, t_r_prime: f64, multiplier: f64) -> f64 {
    multiplier * (eps_origin * t_r + (eps_origin - eps_dest) * t_r_prime)
}

/// [`retrospective_cost`] with rates looked up in a table.
#[allow(clippy::too_many_arguments)]
pub fn retrospective_cost_for(
    rates: &RegionProfitRates,
    service: Service,
    interval: usize,
    origin: usize,
    dest: usize,
    t_r: f64,
    t_r_prime: f64,
    multiplier: f64,
) -> f64 {
    if multiplier == 0.0 {
        return 0.0;
    }
    retrospective_cost(
        rates.get(origin, interval, service),
        rates.get(dest, interval, service),
        t_r,
        t_r_prime,
        multiplier,
    )
}

/// Inputs of the shared-vehicle occupancy chain. Primed fields describe
/// vehicles carrying one customer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilizationInputs {
    pub l_s: f64,
    pub o_s: f64,
    pub eta_s: f64,
    pub t_s: f64,
    pub o_s1: f64,
    pub eta_s1: f64,
    pub t_s1: f64,
    /// 1 -> 0 transition rate; defaults to `1 / t_s`.
    pub p10: Option<f64>,
    /// 2 -> 1 transition rate; defaults to `1 / t_s1`.
    pub p21: Option<f64>,
}

/// Solved occupancy chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilizationModel {
    pub n0: f64,
    pub n1: f64,
    pub n2: f64,
    pub l_s: f64,
    pub y_s: f64,
    pub y_s1: f64,
    pub p01: f64,
    pub p10: f64,
    pub p12: f64,
    pub p21: f64,
    pub zeta_s: f64,
}

/// `(N1 + 2 N2) / L_s` with `L_s = N0 + N1 + N2`.
pub fn zeta_from_counts(n0: f64, n1: f64, n2: f64) -> Result<f64> {
    let l = n0 + n1 + n2;
    if l <= 0.0 {
        return Err(Error::Param("no shared vehicles".into()));
    }
    Ok((n1 + 2.0 * n2) / l)
}

/// Calibrates the throughputs `Y_s`, `Y_s'` of the occupancy chain.
///
/// With `P01 = P12` the two detailed-balance equations reduce to
/// `N1^2 P10 = N0 N2 P21`; together with `N0 + N1 + N2 = L_s` this pins
/// `(Y_s, Y_s')` on a segment, searched by bisection for the root closest
/// to `Y_s = 0`.
pub fn solve_utilization(inp: &UtilizationInputs) -> Result<UtilizationModel> {
    if inp.l_s <= 0.0 {
        return Err(Error::Param("L_s must be positive".into()));
    }
    if inp.t_s <= 0.0 || inp.t_s1 <= 0.0 || inp.eta_s < 0.0 || inp.eta_s1 < 0.0 {
        return Err(Error::Param("trip durations must be positive and waits nonnegative".into()));
    }
    let p10 = inp.p10.unwrap_or(1.0 / inp.t_s);
    let p21 = inp.p21.unwrap_or(1.0 / inp.t_s1);
    let a = inp.eta_s + inp.t_s;
    let b = inp.eta_s1 + inp.t_s1;
    let room = inp.l_s - inp.o_s - inp.o_s1;
    if room < -1e-12 {
        return Err(Error::Calibration("open vehicles exceed the shared fleet".into()));
    }
    let room = room.max(0.0);

    let counts = |s: f64| {
        let y_s = s * room / a;
        let y_s1 = (1.0 - s) * room / b;
        let n0 = inp.o_s + inp.eta_s * y_s;
        let n1 = inp.o_s1 + inp.eta_s1 * y_s1 + inp.t_s * y_s;
        let n2 = inp.t_s1 * y_s1;
        (y_s, y_s1, n0, n1, n2)
    };
    let imbalance = |s: f64| {
        let (_, _, n0, n1, n2) = counts(s);
        n1 * n1 * p10 - n0 * n2 * p21
    };

    let root = if room == 0.0 {
        if imbalance(0.0).abs() > 1e-12 {
            return Err(Error::Calibration("no throughput can balance the chain".into()));
        }
        0.0
    } else {
        const SCAN: usize = 256;
        let mut lo = 0.0;
        let mut f_lo = imbalance(lo);
        let mut bracket = None;
        if f_lo == 0.0 {
            bracket = Some((0.0, 0.0));
        }
        for i in 1..=SCAN {
            if bracket.is_some() {
                break;
            }
            let hi = i as f64 / SCAN as f64;
            let f_hi = imbalance(hi);
            if f_hi == 0.0 {
                bracket = Some((hi, hi));
            } else if f_lo.signum() != f_hi.signum() {
                bracket = Some((lo, hi));
            }
            lo = hi;
            f_lo = f_hi;
        }
        let (mut lo, mut hi) =
            bracket.ok_or_else(|| Error::Calibration("detailed balance has no nonnegative solution".into()))?;
        let f_lo0 = imbalance(lo);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if imbalance(mid).signum() == f_lo0.signum() {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if imbalance(lo).abs() <= imbalance(hi).abs() { lo } else { hi }
    };

    let (y_s, y_s1, n0, n1, _) = counts(root);
    let n2 = close_headcount(n0, n1, inp.l_s);
    if n0 <= 0.0 {
        return Err(Error::Calibration("no empty shared vehicles; P01 undefined".into()));
    }
    let p01 = n1 * p10 / n0;
    Ok(UtilizationModel {
        n0,
        n1,
        n2,
        l_s: inp.l_s,
        y_s,
        y_s1,
        p01,
        p10,
        p12: p01,
        p21,
        zeta_s: (n1 + 2.0 * n2) / inp.l_s,
    })
}

/// `N2` such that `N0 + N1 + N2` evaluates to exactly `L_s` in floating point.
fn close_headcount(n0: f64, n1: f64, l_s: f64) -> f64 {
    let partial = n0 + n1;
    let mut n2 = l_s - partial;
    for _ in 0..4 {
        let sum = partial + n2;
        if sum == l_s {
            break;
        }
        n2 = if sum < l_s { n2.next_up() } else { n2.next_down() };
    }
    n2.max(0.0)
}
