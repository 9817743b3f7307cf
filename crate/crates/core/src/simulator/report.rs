//! Run reports and time series.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeStats {
    pub served: u64,
    pub fares: f64,
    pub mean_price: f64,
    pub mean_wait: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DayStats {
    pub day: u64,
    pub requests: u64,
    pub served: u64,
    pub lost: u64,
    pub declined: u64,
    pub fares: f64,
    pub operational_cost: f64,
    pub penalties: f64,
    pub profit: f64,
}

/// Activity within one profit-rate period.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub interval: u64,
    pub start_s: f64,
    pub requests: u64,
    pub served: u64,
    pub lost: u64,
    pub declined: u64,
    pub fares: f64,
    pub distance_m: f64,
    pub penalties: f64,
    /// Fleet-mean regional profit rate in force, per vehicle-second.
    pub mean_rate_e: f64,
    pub mean_rate_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub policy: String,
    pub seed: u64,
    pub requests_total: u64,
    pub requests_served: u64,
    pub requests_lost: u64,
    /// Chose the outside option or received no offer.
    pub requests_declined: u64,
    pub requests_no_offer: u64,
    pub pooled_riders: u64,
    pub total_profit: f64,
    pub fares: f64,
    pub operational_cost: f64,
    pub penalties: f64,
    /// Served over all requests.
    pub market_share: f64,
    pub market_share_denominator: String,
    pub mean_price: f64,
    pub mean_wait: f64,
    /// Mean quoted exclusive price and the benchmark fare on the same requests.
    pub mean_quoted_exclusive_price: f64,
    pub mean_static_exclusive_price: f64,
    pub exclusive: ModeStats,
    pub shared: ModeStats,
    /// Served trips whose realized wait or delay broke its limit.
    pub window_violations: u64,
    pub per_day: Vec<DayStats>,
}

impl SimReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

pub fn write_series_csv(series: &[IntervalStats], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in series {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
