//! Shareability: insertion feasibility, the request-vehicle graph and the
//! exclusive-sharing-vehicle matchings built from it.
//!
//! Shared vehicles carry at most two riders, so trips are single requests or
//! pairs and no general clique search is needed.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bpd_pricing::BatchQuote;
use crate::choice::Service;
use crate::error::{Error, Result};
use crate::network::RoadNetwork;
use crate::spd_pricing::PriceQuote;

/// Slack on time-window comparisons, seconds.
pub const TIME_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    /// Network node indices.
    pub origin: usize,
    pub dest: usize,
    pub request_time: f64,
    /// Shortest travel time and its length, origin to destination.
    pub direct_time: f64,
    pub direct_length: f64,
    /// Maximum wait, measured from `request_time`.
    pub max_wait: f64,
    /// Maximum delay past the earliest possible arrival.
    pub max_delay: f64,
}

impl Request {
    pub fn new(
        net: &RoadNetwork,
        id: u64,
        origin: usize,
        dest: usize,
        request_time: f64,
        max_wait: f64,
        max_delay: f64,
    ) -> Result<Self> {
        if !(max_wait > 0.0 && max_delay > 0.0) {
            return Err(Error::Param(format!("request {id}: max wait and delay must be positive")));
        }
        let leg = net.leg(origin, dest)?;
        Ok(Self {
            id,
            origin,
            dest,
            request_time,
            direct_time: leg.time,
            direct_length: leg.length,
            max_wait,
            max_delay,
        })
    }

    pub fn pickup_deadline(&self) -> f64 {
        self.request_time + self.max_wait
    }

    pub fn dropoff_deadline(&self) -> f64 {
        self.request_time + self.direct_time + self.max_delay
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StopKind {
    Pickup,
    Dropoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub node: usize,
    pub request: u64,
    pub kind: StopKind,
    /// Latest allowed arrival.
    pub deadline: f64,
}

impl Stop {
    pub fn pickup(r: &Request) -> Self {
        Self { node: r.origin, request: r.id, kind: StopKind::Pickup, deadline: r.pickup_deadline() }
    }

    pub fn dropoff(r: &Request) -> Self {
        Self { node: r.dest, request: r.id, kind: StopKind::Dropoff, deadline: r.dropoff_deadline() }
    }
}

/// A vehicle as seen by the matcher: where it will next be free to change
/// plans (`node` at `time`), how many riders it holds there, and the stops it
/// has committed to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: usize,
    pub service: Service,
    pub node: usize,
    pub time: f64,
    pub onboard: usize,
    pub stops: Vec<Stop>,
}

impl VehicleState {
    pub fn idle(id: usize, service: Service, node: usize, time: f64) -> Self {
        Self { id, service, node, time, onboard: 0, stops: Vec::new() }
    }

    pub fn capacity(&self) -> usize {
        self.service.capacity()
    }

    pub fn is_idle(&self) -> bool {
        self.stops.is_empty() && self.onboard == 0
    }

    pub fn start_time(&self, now: f64) -> f64 {
        self.time.max(now)
    }

    /// Planned route of the current commitments.
    pub fn current_route(&self, net: &RoadNetwork, now: f64) -> Option<Route> {
        evaluate_route(net, self.node, self.start_time(now), self.capacity(), self.onboard, &self.stops)
    }
}

/// A timed stop sequence from a start node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub start_node: usize,
    pub start_time: f64,
    pub stops: Vec<Stop>,
    /// Arrival time at each stop.
    pub times: Vec<f64>,
    /// Meters driven from the start through the last stop.
    pub distance: f64,
}

impl Route {
    /// Pickup and dropoff times of a request on this route.
    pub fn times_of(&self, request: u64) -> Option<(f64, f64)> {
        let find = |kind| {
            self.stops
                .iter()
                .position(|s| s.request == request && s.kind == kind)
                .map(|i| self.times[i])
        };
        Some((find(StopKind::Pickup)?, find(StopKind::Dropoff)?))
    }

    pub fn end_time(&self) -> f64 {
        self.times.last().copied().unwrap_or(self.start_time)
    }

    pub fn end_node(&self) -> usize {
        self.stops.last().map_or(self.start_node, |s| s.node)
    }
}

/// Times a stop sequence and checks deadlines and capacity; `None` if any fails.
pub fn evaluate_route(
    net: &RoadNetwork,
    start_node: usize,
    start_time: f64,
    capacity: usize,
    onboard: usize,
    stops: &[Stop],
) -> Option<Route> {
    if onboard > capacity {
        return None;
    }
    let mut t = start_time;
    let mut node = start_node;
    let mut load = onboard;
    let mut distance = 0.0;
    let mut times = Vec::with_capacity(stops.len());
    for s in stops {
        let leg = net.leg(node, s.node).ok()?;
        t += leg.time;
        distance += leg.length;
        if t > s.deadline + TIME_EPS {
            return None;
        }
        match s.kind {
            StopKind::Pickup => {
                load += 1;
                if load > capacity {
                    return None;
                }
            }
            StopKind::Dropoff => load = load.checked_sub(1)?,
        }
        times.push(t);
        node = s.node;
    }
    Some(Route { start_node, start_time, stops: stops.to_vec(), times, distance })
}

/// A feasible schedule for a vehicle after adding one or two requests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub vehicle: usize,
    pub route: Route,
    /// Extra meters relative to the vehicle's current plan.
    pub added_distance: f64,
}

/// Every way to place `r`'s pickup and dropoff into `stops`, existing order kept.
fn insertions(stops: &[Stop], r: &Request) -> Vec<Vec<Stop>> {
    let n = stops.len();
    let mut out = Vec::with_capacity((n + 1) * (n + 2) / 2);
    for i in 0..=n {
        for j in i..=n {
            let mut v = Vec::with_capacity(n + 2);
            v.extend_from_slice(&stops[..i]);
            v.push(Stop::pickup(r));
            v.extend_from_slice(&stops[i..j]);
            v.push(Stop::dropoff(r));
            v.extend_from_slice(&stops[j..]);
            out.push(v);
        }
    }
    out
}

fn best_of(net: &RoadNetwork, v: &VehicleState, now: f64, candidates: Vec<Vec<Stop>>) -> Option<Insertion> {
    let base = v.current_route(net, now).map_or(0.0, |r| r.distance);
    let start = v.start_time(now);
    let mut best: Option<Route> = None;
    for stops in candidates {
        if let Some(route) = evaluate_route(net, v.node, start, v.capacity(), v.onboard, &stops) {
            if best.as_ref().is_none_or(|b| route.distance < b.distance) {
                best = Some(route);
            }
        }
    }
    best.map(|route| Insertion { vehicle: v.id, added_distance: route.distance - base, route })
}

fn can_reach(net: &RoadNetwork, v: &VehicleState, r: &Request, now: f64) -> bool {
    match net.travel_time(v.node, r.origin) {
        Ok(t) => v.start_time(now) + t <= r.pickup_deadline() + TIME_EPS,
        Err(_) => false,
    }
}

/// Cheapest feasible insertion of `r` into `v`'s schedule, if any.
pub fn feasible_vehicle_request(net: &RoadNetwork, v: &VehicleState, r: &Request, now: f64) -> Option<Insertion> {
    if !can_reach(net, v, r, now) {
        return None;
    }
    best_of(net, v, now, insertions(&v.stops, r))
}

/// Cheapest feasible insertion of both requests into `v`'s schedule.
pub fn feasible_vehicle_pair(
    net: &RoadNetwork,
    v: &VehicleState,
    r1: &Request,
    r2: &Request,
    now: f64,
) -> Option<Insertion> {
    if !can_reach(net, v, r1, now) || !can_reach(net, v, r2, now) {
        return None;
    }
    let candidates = insertions(&v.stops, r1).iter().flat_map(|s| insertions(s, r2)).collect();
    best_of(net, v, now, candidates)
}

/// Cheapest route of a capacity-2 vehicle standing at `r1`'s origin when the
/// later of the two requests arrives, serving both.
pub fn pair_route(net: &RoadNetwork, r1: &Request, r2: &Request) -> Option<Route> {
    let start = r1.request_time.max(r2.request_time);
    let virt = VehicleState::idle(usize::MAX, Service::Shared, r1.origin, start);
    feasible_vehicle_pair(net, &virt, r1, r2, start).map(|i| i.route)
}

pub fn feasible_pair(net: &RoadNetwork, r1: &Request, r2: &Request) -> bool {
    pair_route(net, r1, r2).is_some()
}

/// Edges of the request-vehicle graph.
#[derive(Debug, Clone, Default)]
pub struct RvGraph {
    /// Shareable request pairs `(lo id, hi id)`, sorted.
    pub request_pairs: Vec<(u64, u64)>,
    /// Feasible request-vehicle insertions, sorted by (request id, vehicle id).
    pub request_vehicle: Vec<(u64, Insertion)>,
}

impl RvGraph {
    pub fn vehicles_for(&self, request: u64) -> impl Iterator<Item = &Insertion> {
        self.request_vehicle.iter().filter(move |(r, _)| *r == request).map(|(_, i)| i)
    }

    /// Adjacency lists, one line per node: `kind,id,neighbors` with
    /// neighbors separated by spaces.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut adj: BTreeMap<u64, (Vec<u64>, Vec<usize>)> = BTreeMap::new();
        for &(a, b) in &self.request_pairs {
            adj.entry(a).or_default().0.push(b);
            adj.entry(b).or_default().0.push(a);
        }
        for (r, ins) in &self.request_vehicle {
            adj.entry(*r).or_default().1.push(ins.vehicle);
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "request,requests,vehicles")?;
        for (r, (mut rs, vs)) in adj {
            rs.sort_unstable();
            let join = |v: Vec<String>| v.join(" ");
            writeln!(
                f,
                "{r},{},{}",
                join(rs.iter().map(u64::to_string).collect()),
                join(vs.iter().map(usize::to_string).collect())
            )?;
        }
        Ok(())
    }
}

/// Shareability edges among `requests` and feasible insertions into `vehicles`.
/// A request pair is shareable if a virtual vehicle at either origin serves both.
pub fn build_rv_graph(net: &RoadNetwork, requests: &[Request], vehicles: &[VehicleState], now: f64) -> RvGraph {
    let mut reqs: Vec<&Request> = requests.iter().collect();
    reqs.sort_by_key(|r| r.id);
    let mut vehs: Vec<&VehicleState> = vehicles.iter().collect();
    vehs.sort_by_key(|v| v.id);

    let request_pairs = (0..reqs.len())
        .into_par_iter()
        .flat_map_iter(|a| {
            let reqs = &reqs;
            (a + 1..reqs.len()).filter_map(move |b| {
                let (r1, r2) = (reqs[a], reqs[b]);
                (feasible_pair(net, r1, r2) || feasible_pair(net, r2, r1)).then_some((r1.id, r2.id))
            })
        })
        .collect();
    let request_vehicle = reqs
        .par_iter()
        .flat_map_iter(|r| {
            vehs.iter().filter_map(move |v| feasible_vehicle_request(net, v, r, now).map(|i| (r.id, i)))
        })
        .collect();
    RvGraph { request_pairs, request_vehicle }
}

/// Prices slot costs for the matcher. Costs may include more than driving
/// (for example a retrospective term), so the simulator supplies its own.
pub trait SlotCosts: Sync {
    /// Cost of serving `r` exclusively with this insertion.
    fn exclusive(&self, r: &Request, v: &VehicleState, ins: &Insertion) -> f64;
    /// Expected cost of serving `r` alone on a shared vehicle.
    fn shared(&self, r: &Request, v: &VehicleState, ins: &Insertion) -> f64;
    /// Cost of serving both requests in one shared trip.
    fn pooled(&self, r1: &Request, r2: &Request, v: &VehicleState, ins: &Insertion) -> f64;
}

/// Driving cost only: per-mile cost times added distance.
#[derive(Debug, Clone, Copy)]
pub struct DrivingCosts {
    pub per_mile_cost: f64,
}

impl DrivingCosts {
    fn of(&self, ins: &Insertion) -> f64 {
        self.per_mile_cost * ins.added_distance / crate::network::METERS_PER_MILE
    }
}

impl SlotCosts for DrivingCosts {
    fn exclusive(&self, _: &Request, _: &VehicleState, ins: &Insertion) -> f64 {
        self.of(ins)
    }
    fn shared(&self, _: &Request, _: &VehicleState, ins: &Insertion) -> f64 {
        self.of(ins)
    }
    fn pooled(&self, _: &Request, _: &Request, _: &VehicleState, ins: &Insertion) -> f64 {
        self.of(ins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Slot {
    pub vehicle: usize,
    pub insertion: Insertion,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MatchingQuote {
    Single(PriceQuote),
    Pair(BatchQuote),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsvMatching {
    pub id: usize,
    /// One or two request ids, ascending.
    pub requests: Vec<u64>,
    /// One request: the solo shared ride. Two requests: the pooled trip.
    pub shared: Option<Slot>,
    /// Expected solo shared cost of each request on the pooled vehicle
    /// (two-request matchings only).
    pub solo_shared_costs: Vec<f64>,
    /// Best exclusive vehicle per request, aligned with `requests`.
    pub exclusive: Vec<Option<Slot>>,
    /// Expected profit, set by pricing.
    pub u: f64,
    pub quote: Option<MatchingQuote>,
    /// Usage probability per involved vehicle, ascending by vehicle id.
    pub gamma: Vec<(usize, f64)>,
}

impl EsvMatching {
    pub fn vehicles(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.exclusive.iter().flatten().map(|s| s.vehicle).collect();
        if let Some(s) = &self.shared {
            v.push(s.vehicle);
        }
        v.sort_unstable();
        v.dedup();
        v
    }

    /// `c_1s + c_2s - c_ss` for a pair.
    pub fn savings(&self) -> Option<f64> {
        match (&self.shared, self.solo_shared_costs.as_slice()) {
            (Some(s), [a, b]) => Some(a + b - s.cost),
            _ => None,
        }
    }
}

fn best_slot(slots: impl Iterator<Item = Slot>) -> Option<Slot> {
    slots.min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.vehicle.cmp(&b.vehicle)))
}

/// ESV matchings from an RV graph.
///
/// A one-request matching holds the cheapest feasible exclusive and shared
/// vehicle. A two-request matching exists for a shareable pair when some
/// shared vehicle can serve both, both requests have an exclusive vehicle,
/// and pooling saves cost; it holds the cheapest such shared vehicle. Output
/// is sorted by request ids and numbered in that order.
pub fn build_esv_graph(
    net: &RoadNetwork,
    rv: &RvGraph,
    requests: &[Request],
    vehicles: &[VehicleState],
    costs: &dyn SlotCosts,
    now: f64,
) -> Vec<EsvMatching> {
    let req_by_id: BTreeMap<u64, &Request> = requests.iter().map(|r| (r.id, r)).collect();
    let veh_by_id: BTreeMap<usize, &VehicleState> = vehicles.iter().map(|v| (v.id, v)).collect();

    let slot_for = |r: &Request, service: Service| {
        best_slot(rv.vehicles_for(r.id).filter_map(|ins| {
            let v = veh_by_id[&ins.vehicle];
            (v.service == service).then(|| {
                let cost = match service {
                    Service::Exclusive => costs.exclusive(r, v, ins),
                    Service::Shared => costs.shared(r, v, ins),
                };
                Slot { vehicle: v.id, insertion: ins.clone(), cost }
            })
        }))
    };

    let singles: Vec<EsvMatching> = req_by_id
        .values()
        .collect::<Vec<_>>()
        .par_iter()
        .filter_map(|r| {
            let e = slot_for(r, Service::Exclusive);
            let s = slot_for(r, Service::Shared);
            (e.is_some() || s.is_some()).then(|| EsvMatching {
                id: 0,
                requests: vec![r.id],
                shared: s,
                solo_shared_costs: Vec::new(),
                exclusive: vec![e],
                u: 0.0,
                quote: None,
                gamma: Vec::new(),
            })
        })
        .collect();

    let pairs: Vec<EsvMatching> = rv
        .request_pairs
        .par_iter()
        .filter_map(|&(a, b)| {
            let (r1, r2) = (*req_by_id.get(&a)?, *req_by_id.get(&b)?);
            let e1 = slot_for(r1, Service::Exclusive)?;
            let e2 = slot_for(r2, Service::Exclusive)?;
            let solo1: BTreeMap<usize, &Insertion> = rv.vehicles_for(a).map(|i| (i.vehicle, i)).collect();
            let mut best: Option<(Slot, Vec<f64>)> = None;
            for i2 in rv.vehicles_for(b) {
                let v = veh_by_id[&i2.vehicle];
                let Some(i1) = solo1.get(&v.id) else { continue };
                if v.service != Service::Shared {
                    continue;
                }
                let Some(joint) = feasible_vehicle_pair(net, v, r1, r2, now) else { continue };
                let cost = costs.pooled(r1, r2, v, &joint);
                let solo = vec![costs.shared(r1, v, i1), costs.shared(r2, v, i2)];
                if solo[0] + solo[1] - cost < 0.0 {
                    continue;
                }
                let slot = Slot { vehicle: v.id, insertion: joint, cost };
                let better = best
                    .as_ref()
                    .is_none_or(|(s, _)| cost < s.cost || (cost == s.cost && v.id < s.vehicle));
                if better {
                    best = Some((slot, solo));
                }
            }
            let (slot, solo) = best?;
            Some(EsvMatching {
                id: 0,
                requests: vec![a, b],
                shared: Some(slot),
                solo_shared_costs: solo,
                exclusive: vec![Some(e1), Some(e2)],
                u: 0.0,
                quote: None,
                gamma: Vec::new(),
            })
        })
        .collect();

    let mut all: Vec<EsvMatching> = singles.into_iter().chain(pairs).collect();
    all.sort_by(|x, y| x.requests.cmp(&y.requests));
    for (i, m) in all.iter_mut().enumerate() {
        m.id = i;
    }
    all
}

/// One line per matching: `matching,requests,shared_vehicle,exclusive_vehicles,u`.
pub fn write_esv_csv(matchings: &[EsvMatching], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "matching,requests,shared_vehicle,exclusive_vehicles,u")?;
    for m in matchings {
        let reqs: Vec<String> = m.requests.iter().map(u64::to_string).collect();
        let excl: Vec<String> =
            m.exclusive.iter().map(|s| s.as_ref().map_or("-".into(), |s| s.vehicle.to_string())).collect();
        let shared = m.shared.as_ref().map_or("-".into(), |s| s.vehicle.to_string());
        writeln!(f, "{},{},{},{},{}", m.id, reqs.join(" "), shared, excl.join(" "), m.u)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Five nodes on a line, 100 m and 10 s apart, both directions.
    fn line() -> RoadNetwork {
        let nodes: Vec<(u64, f64, f64)> = (0..5).map(|i| (i, i as f64 * 100.0, 0.0)).collect();
        let mut edges = Vec::new();
        for i in 0..4u64 {
            edges.push((i, i + 1, 10.0, 100.0));
            edges.push((i + 1, i, 10.0, 100.0));
        }
        RoadNetwork::new(&nodes, &edges).unwrap()
    }

    fn req(net: &RoadNetwork, id: u64, o: usize, d: usize, t: f64, wait: f64, delay: f64) -> Request {
        Request::new(net, id, o, d, t, wait, delay).unwrap()
    }

    #[test]
    fn colocated_idle_vehicle() {
        let net = line();
        let r = req(&net, 1, 0, 3, 0.0, 60.0, 60.0);
        let v = VehicleState::idle(0, Service::Exclusive, 0, 0.0);
        let ins = feasible_vehicle_request(&net, &v, &r, 0.0).unwrap();
        let (pick, drop) = ins.route.times_of(1).unwrap();
        assert_eq!(pick, 0.0);
        assert_eq!(drop, r.direct_time);
        assert_eq!(ins.added_distance, 300.0);
    }

    #[test]
    fn pickup_beyond_max_wait() {
        let net = line();
        let r = req(&net, 1, 4, 3, 0.0, 30.0, 60.0);
        let v = VehicleState::idle(0, Service::Exclusive, 0, 0.0);
        assert!(feasible_vehicle_request(&net, &v, &r, 0.0).is_none());
        let r = req(&net, 1, 4, 3, 0.0, 40.0, 60.0);
        assert!(feasible_vehicle_request(&net, &v, &r, 0.0).is_some());
    }

    #[test]
    fn detour_breaks_first_riders_delay() {
        let net = line();
        // rider 1 on board heading 1 -> 2; rider 2 wants 0 -> 4
        let r1 = req(&net, 1, 1, 2, 0.0, 60.0, 15.0);
        let mut v = VehicleState::idle(0, Service::Shared, 1, 0.0);
        v.onboard = 1;
        v.stops = vec![Stop::dropoff(&r1)];
        let r2 = req(&net, 2, 0, 4, 0.0, 60.0, 300.0);
        // any order either detours rider 1 by 20 s or fits
        let ins = feasible_vehicle_request(&net, &v, &r2, 0.0).unwrap();
        let (_, d1) = ins.route.times_of(1).map_or((0.0, ins.route.times[0]), |x| x);
        assert!(d1 <= r1.dropoff_deadline() + TIME_EPS);

        // tighter delay: going back to 0 first makes rider 1 late
        let r1 = req(&net, 1, 1, 2, 0.0, 60.0, 5.0);
        v.stops = vec![Stop::dropoff(&r1)];
        let r3 = req(&net, 3, 0, 1, 0.0, 15.0, 300.0);
        assert!(feasible_vehicle_request(&net, &v, &r3, 0.0).is_none());
    }

    #[test]
    fn capacity_respected() {
        let net = line();
        let r1 = req(&net, 1, 0, 4, 0.0, 60.0, 600.0);
        let mut v = VehicleState::idle(0, Service::Exclusive, 0, 0.0);
        v.stops = vec![Stop::pickup(&r1), Stop::dropoff(&r1)];
        let r2 = req(&net, 2, 1, 3, 0.0, 600.0, 600.0);
        let ins = feasible_vehicle_request(&net, &v, &r2, 0.0).unwrap();
        // exclusive: the second ride has to follow the first
        assert_eq!(ins.route.stops[1].request, 1);
        assert_eq!(ins.route.stops[1].kind, StopKind::Dropoff);
    }

    #[test]
    fn pair_examples() {
        let net = line();
        let a = req(&net, 1, 0, 4, 0.0, 60.0, 60.0);
        let b = req(&net, 2, 0, 4, 0.0, 60.0, 60.0);
        assert!(feasible_pair(&net, &a, &b));
        let a = req(&net, 1, 0, 4, 0.0, 30.0, 60.0);
        let c = req(&net, 3, 4, 0, 0.0, 60.0, 20.0);
        assert!(!feasible_pair(&net, &a, &c));
        assert!(!feasible_pair(&net, &c, &a));
        let late = req(&net, 4, 0, 4, 100.0, 60.0, 60.0);
        assert!(!feasible_pair(&net, &a, &late));
    }

    #[test]
    fn rv_graph_small_cases() {
        let net = line();
        let r = req(&net, 1, 0, 2, 0.0, 60.0, 60.0);
        let s = req(&net, 2, 0, 2, 0.0, 60.0, 60.0);
        let g = build_rv_graph(&net, &[s, r], &[], 0.0);
        assert_eq!(g.request_pairs, vec![(1, 2)]);
        assert!(g.request_vehicle.is_empty());
        let v = VehicleState::idle(7, Service::Exclusive, 1, 0.0);
        let g = build_rv_graph(&net, &[r], &[v], 0.0);
        assert_eq!(g.request_vehicle.len(), 1);
        assert_eq!(g.request_vehicle[0].1.vehicle, 7);
    }

    #[test]
    fn esv_composition() {
        let net = line();
        let costs = DrivingCosts { per_mile_cost: 1.0 };
        let r1 = req(&net, 1, 0, 4, 0.0, 60.0, 120.0);
        let r2 = req(&net, 2, 1, 3, 0.0, 60.0, 120.0);
        let e_only = [VehicleState::idle(0, Service::Exclusive, 0, 0.0)];
        let rv = build_rv_graph(&net, &[r1], &e_only, 0.0);
        let m = build_esv_graph(&net, &rv, &[r1], &e_only, &costs, 0.0);
        assert_eq!(m.len(), 1);
        assert!(m[0].shared.is_none() && m[0].exclusive[0].is_some());

        let fleet = [
            VehicleState::idle(0, Service::Exclusive, 0, 0.0),
            VehicleState::idle(1, Service::Exclusive, 1, 0.0),
            VehicleState::idle(2, Service::Shared, 0, 0.0),
        ];
        let rv = build_rv_graph(&net, &[r1, r2], &fleet, 0.0);
        let m = build_esv_graph(&net, &rv, &[r1, r2], &fleet, &costs, 0.0);
        let pair = m.iter().find(|m| m.requests.len() == 2).unwrap();
        assert_eq!(pair.vehicles(), vec![0, 1, 2]);
        assert!(pair.savings().unwrap() >= 0.0);
        assert_eq!(m.iter().map(|m| m.id).collect::<Vec<_>>(), (0..m.len()).collect::<Vec<_>>());

        // opposite directions with a tight delay cannot pool
        let r3 = req(&net, 3, 4, 0, 0.0, 60.0, 10.0);
        let rv = build_rv_graph(&net, &[r1, r3], &fleet, 0.0);
        let m = build_esv_graph(&net, &rv, &[r1, r3], &fleet, &costs, 0.0);
        assert!(m.iter().all(|m| m.requests.len() == 1));
    }

    #[test]
    fn rejects_bad_windows() {
        let net = line();
        assert!(Request::new(&net, 1, 0, 1, 0.0, 0.0, 10.0).is_err());
        assert!(Request::new(&net, 1, 0, 1, 0.0, 10.0, -1.0).is_err());
    }
}
