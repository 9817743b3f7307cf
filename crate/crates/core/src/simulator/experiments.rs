//! Calibration and sensitivity loops built on repeated runs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Policy, Scenario};
use crate::costs::{update_expected_costs, ExpectedCostTable, OdPair};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationRow {
    pub multiplier: f64,
    pub mean_quoted_price: f64,
    pub mean_static_price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub rows: Vec<CalibrationRow>,
    pub chosen: f64,
}

/// Runs each candidate multiplier and keeps the one whose mean quoted
/// exclusive price is closest to the static fare on the same requests
/// (earliest candidate on ties).
pub fn calibrate_price_multiplier(sc: &Scenario, policy: Policy, candidates: &[f64]) -> Result<Calibration> {
    if candidates.is_empty() {
        return Err(Error::Config("no candidate multipliers".into()));
    }
    let rows: Vec<CalibrationRow> = candidates
        .par_iter()
        .map(|&m| {
            let mut s = sc.clone();
            s.config.choice = s.config.choice.with_multiplier(m);
            let r = s.run(policy)?.report;
            Ok(CalibrationRow {
                multiplier: m,
                mean_quoted_price: r.mean_quoted_exclusive_price,
                mean_static_price: r.mean_static_exclusive_price,
            })
        })
        .collect::<Result<_>>()?;
    let gap = |r: &CalibrationRow| (r.mean_quoted_price - r.mean_static_price).abs();
    let chosen = rows
        .iter()
        .reduce(|best, r| if gap(r) < gap(best) { r } else { best })
        .expect("nonempty")
        .multiplier;
    Ok(Calibration { rows, chosen })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub policy: Policy,
    pub multiplier: f64,
    pub profit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub rows: Vec<SweepRow>,
    /// Profit-maximizing multiplier per policy (smallest on ties).
    pub argmax: BTreeMap<Policy, f64>,
}

/// `0.0, 0.1, ..., 1.0`.
pub fn default_sweep_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// One run per (policy, multiplier).
pub fn sweep_retrospective_multiplier(sc: &Scenario, grid: &[f64], policies: &[Policy]) -> Result<Sweep> {
    let jobs: Vec<(Policy, f64)> = policies.iter().flat_map(|&p| grid.iter().map(move |&m| (p, m))).collect();
    let rows: Vec<SweepRow> = jobs
        .par_iter()
        .map(|&(policy, multiplier)| {
            let mut s = sc.clone();
            s.config.retrospective_multiplier = multiplier;
            s.config.validate()?;
            Ok(SweepRow { policy, multiplier, profit: s.run(policy)?.report.total_profit })
        })
        .collect::<Result<_>>()?;
    let mut argmax: BTreeMap<Policy, (f64, f64)> = BTreeMap::new();
    for r in &rows {
        let e = argmax.entry(r.policy).or_insert((r.multiplier, r.profit));
        if r.profit > e.1 {
            *e = (r.multiplier, r.profit);
        }
    }
    Ok(Sweep { rows, argmax: argmax.into_iter().map(|(p, (m, _))| (p, m)).collect() })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    /// Mean absolute change of the table after days 2, 3, ...
    pub mad: Vec<f64>,
    pub table: ExpectedCostTable,
    /// Observed sharing probability per O-D cluster pair over all days.
    pub theta: BTreeMap<OdPair, f64>,
}

/// Simulates `n_days` days, folding each day's realized first-rider costs
/// into the expected-cost table, which starts at zero. With `identical`
/// every day replays the scenario's demand and choice draws; otherwise day
/// `d` reseeds both from `seed + d`.
pub fn run_cost_convergence(sc: &Scenario, n_days: usize, policy: Policy, identical: bool) -> Result<Convergence> {
    if n_days < 2 {
        return Err(Error::Config("cost convergence needs at least two days".into()));
    }
    let mut table = ExpectedCostTable::zeros(sc.clusters.k());
    let mut mad = Vec::with_capacity(n_days - 1);
    let mut sharing: BTreeMap<OdPair, (u64, u64)> = BTreeMap::new();
    for day in 0..n_days {
        let mut s = sc.clone();
        if !identical && day > 0 {
            s.config.seed = sc.config.seed + day as u64;
            s.demand = s.demand_for_seed(s.config.seed)?;
        }
        s.cost_table = Some(table.clone());
        let out = s.run(policy)?;
        let change = update_expected_costs(&mut table, &out.shared_costs);
        if day > 0 {
            mad.push(change);
        }
        for (od, (p, n)) in out.sharing {
            let e = sharing.entry(od).or_insert((0, 0));
            e.0 += p;
            e.1 += n;
        }
    }
    let theta = sharing.into_iter().filter(|(_, (_, n))| *n > 0).map(|(od, (p, n))| (od, p as f64 / n as f64)).collect();
    Ok(Convergence { mad, table, theta })
}
