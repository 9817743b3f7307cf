//! Trip requests: CSV loading and the synthetic two-peak generator.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use super::config::SyntheticDemand;
use crate::error::{Error, Result};
use crate::network::{ClusterMap, RoadNetwork};

/// One request before feasibility windows are attached. Nodes are network indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemandRecord {
    pub time: f64,
    pub origin: usize,
    pub dest: usize,
}

#[derive(Debug, Deserialize)]
struct Row {
    request_time_s: f64,
    origin_node: u64,
    dest_node: u64,
}

/// Reads `request_time_s,origin_node,dest_node`, sorted by time (stable).
/// Unknown nodes, bad rows and unreachable pairs are reported with their line.
pub fn load_demand_csv(net: &RoadNetwork, path: &Path) -> Result<Vec<DemandRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    for h in ["request_time_s", "origin_node", "dest_node"] {
        if !headers.iter().any(|x| x == h) {
            return Err(Error::load(path, 1, format!("missing column {h}")));
        }
    }
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let line = i as u64 + 2;
        let r = row.map_err(|e| Error::load(path, line, e.to_string()))?;
        if !r.request_time_s.is_finite() || r.request_time_s < 0.0 {
            return Err(Error::load(path, line, "request time must be finite and nonnegative"));
        }
        let origin = net.index_of(r.origin_node).map_err(|e| Error::load(path, line, e.to_string()))?;
        let dest = net.index_of(r.dest_node).map_err(|e| Error::load(path, line, e.to_string()))?;
        net.leg(origin, dest).map_err(|e| Error::load(path, line, e.to_string()))?;
        out.push(DemandRecord { time: r.request_time_s, origin, dest });
    }
    out.sort_by(|a, b| a.time.total_cmp(&b.time));
    Ok(out)
}

pub fn write_demand_csv(net: &RoadNetwork, demand: &[DemandRecord], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["request_time_s", "origin_node", "dest_node"])?;
    for d in demand {
        w.write_record([
            format!("{:.3}", d.time),
            net.node_id(d.origin).to_string(),
            net.node_id(d.dest).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

const DAY: f64 = 86_400.0;

fn gauss(x: f64, mu: f64, sigma: f64) -> f64 {
    (-0.5 * ((x - mu) / sigma).powi(2)).exp()
}

/// Arrival rate per second at time `t` (daily periodic).
fn rate(spec: &SyntheticDemand, t: f64) -> f64 {
    let h = (t % DAY) / 3600.0;
    let w = spec.peak_width_h;
    // wrap the peaks around midnight
    let bump = |mu: f64| gauss(h, mu, w) + gauss(h, mu - 24.0, w) + gauss(h, mu + 24.0, w);
    let peak_area = 2.0 * w * (2.0 * std::f64::consts::PI).sqrt();
    let base = (1.0 - spec.peak_share) / 24.0;
    let peaks = spec.peak_share * (bump(spec.peak1_h) + bump(spec.peak2_h)) / peak_area;
    spec.requests_per_day * (base + peaks) / 3600.0
}

fn pick_weighted<R: Rng>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn cluster_weights(spec: &[f64], k: usize) -> Result<Vec<f64>> {
    if spec.is_empty() {
        return Ok(vec![1.0; k]);
    }
    if spec.len() != k || spec.iter().any(|w| !w.is_finite() || *w < 0.0) || spec.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Config(format!("cluster weights need {k} nonnegative entries with a positive sum")));
    }
    Ok(spec.to_vec())
}

/// Thinned Poisson arrivals over `[0, horizon)`. Origin and destination
/// clusters are drawn from the configured weights and nodes uniformly within
/// them; a trip never starts and ends at the same node.
pub fn generate_demand(
    spec: &SyntheticDemand,
    clusters: &ClusterMap,
    horizon: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<DemandRecord>> {
    if !(spec.requests_per_day >= 0.0 && spec.peak_width_h > 0.0 && (0.0..=1.0).contains(&spec.peak_share)) {
        return Err(Error::Config("invalid synthetic demand parameters".into()));
    }
    let k = clusters.k();
    let ow = cluster_weights(&spec.origin_weights, k)?;
    let dw = cluster_weights(&spec.dest_weights, k)?;
    let members: Vec<Vec<usize>> = (0..k).map(|c| clusters.members(c)).collect();
    let n_nodes = clusters.assignment().len();
    if n_nodes < 2 || spec.requests_per_day == 0.0 {
        return Ok(Vec::new());
    }
    let peak_max = spec.peak_share * 2.0 / (spec.peak_width_h * (2.0 * std::f64::consts::PI).sqrt());
    let lambda_max = spec.requests_per_day * ((1.0 - spec.peak_share) / 24.0 + peak_max) / 3600.0;
    let mut out = Vec::new();
    let mut t = 0.0;
    loop {
        t += -(1.0 - rng.gen::<f64>()).ln() / lambda_max;
        if t >= horizon {
            break;
        }
        if rng.gen::<f64>() * lambda_max > rate(spec, t) {
            continue;
        }
        let oc = pick_weighted(&ow, rng);
        let origin = members[oc][rng.gen_range(0..members[oc].len())];
        let dest = loop {
            let dc = pick_weighted(&dw, rng);
            let d = members[dc][rng.gen_range(0..members[dc].len())];
            if d != origin {
                break d;
            }
        };
        out.push(DemandRecord { time: t, origin, dest });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::kmeans_cluster;
    use rand::SeedableRng;

    #[test]
    fn rate_integrates_to_daily_volume() {
        let spec = SyntheticDemand::default();
        let n = 86_400;
        let total: f64 = (0..n).map(|s| rate(&spec, s as f64 + 0.5)).sum();
        assert!((total - spec.requests_per_day).abs() < 1.0, "{total}");
        let peak_max = spec.peak_share * 2.0 / (spec.peak_width_h * (2.0 * std::f64::consts::PI).sqrt());
        let bound = spec.requests_per_day * ((1.0 - spec.peak_share) / 24.0 + peak_max) / 3600.0;
        assert!((0..n).all(|s| rate(&spec, s as f64) <= bound));
    }

    #[test]
    fn generator_is_deterministic_and_sized() {
        let net = RoadNetwork::grid(6, 6, 400.0, 8.0).unwrap();
        let cl = kmeans_cluster(&net, 4, 0).unwrap();
        let spec = SyntheticDemand::default();
        let gen = |seed| generate_demand(&spec, &cl, 86_400.0, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let a = gen(3);
        assert_eq!(a, gen(3));
        // Poisson(2000): six standard deviations
        assert!((a.len() as f64 - 2000.0).abs() < 6.0 * 2000f64.sqrt(), "{}", a.len());
        assert!(a.windows(2).all(|w| w[0].time <= w[1].time));
        assert!(a.iter().all(|d| d.origin != d.dest));
    }

    #[test]
    fn weights_steer_origins() {
        let net = RoadNetwork::grid(6, 6, 400.0, 8.0).unwrap();
        let cl = kmeans_cluster(&net, 2, 0).unwrap();
        let spec = SyntheticDemand { origin_weights: vec![1.0, 0.0], ..Default::default() };
        let d = generate_demand(&spec, &cl, 86_400.0, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(d.iter().all(|r| cl.cluster_of(r.origin) == 0));
        let bad = SyntheticDemand { origin_weights: vec![1.0], ..Default::default() };
        assert!(generate_demand(&bad, &cl, 10.0, &mut ChaCha8Rng::seed_from_u64(1)).is_err());
    }

    #[test]
    fn csv_round_trip_and_line_numbers() {
        let net = RoadNetwork::grid(3, 3, 100.0, 10.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let recs = vec![DemandRecord { time: 1.5, origin: 0, dest: 8 }, DemandRecord { time: 9.0, origin: 4, dest: 2 }];
        write_demand_csv(&net, &recs, &p).unwrap();
        assert_eq!(load_demand_csv(&net, &p).unwrap(), recs);

        std::fs::write(&p, "request_time_s,origin_node,dest_node\n0,0,1\n5,0,77\n").unwrap();
        match load_demand_csv(&net, &p) {
            Err(Error::Load { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
