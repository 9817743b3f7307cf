//! The event loop.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::fleet::{StopEvent, Vehicle};
use super::report::{DayStats, IntervalStats, ModeStats, SimReport};
use super::{
    choice_draw, static_price, static_shared_price, substream, CellSnapshot, Policy, Scenario, SimConfig,
    SimOptions, SimOutcome, STREAM_FLEET,
};
use crate::assignment::{self, AssignmentProblem};
use crate::bpd_pricing::{
    batched_expected_profit, optimize_batch_prices, price_to_prob, BatchPricingInstance, BatchQuote, RequestSide,
};
use crate::choice::{choice_probabilities, ChoiceParams, Mode, ModeOffer, Service};
use crate::costs::{
    region_profit_rates, retrospective_cost_for, zeta_from_counts, CellPrices, CellState, ExpectedCostTable, OdPair,
    RegionProfitRates, SteadyStateModel, WaitFunction,
};
use crate::error::Result;
use crate::matching::{
    build_esv_graph, build_rv_graph, feasible_vehicle_request, write_esv_csv, EsvMatching, Insertion,
    MatchingQuote, Request, Route, SlotCosts, StopKind, VehicleState, TIME_EPS,
};
use crate::network::{ClusterMap, RoadNetwork, METERS_PER_MILE};
use crate::spd_pricing::{spd_handle_request, Candidate, PriceQuote, QuoteDecision};

type PricedMatching = (f64, MatchingQuote, Vec<(usize, f64)>);

/// A customer who accepted an offer from a batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Acceptance {
    pub request: Request,
    pub service: Service,
    /// Vehicle named in the selected matching.
    pub vehicle: usize,
    pub price: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assigned {
    pub request: u64,
    pub vehicle: usize,
    pub added_distance: f64,
    /// The vehicle had no riders and no stops before this request.
    pub vehicle_was_empty: bool,
    /// Served by a vehicle other than the intended one.
    pub reassigned: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OverbookingOutcome {
    pub assigned: Vec<Assigned>,
    /// Accepted requests no vehicle could take.
    pub lost: Vec<u64>,
}

/// Commits accepted customers first come first served (request time, then
/// id). A customer whose vehicle can no longer take them moves to the
/// feasible vehicle of the chosen type with the least added distance, or is
/// lost.
pub fn resolve_overbooking(
    net: &RoadNetwork,
    fleet: &mut [Vehicle],
    accepted: &[Acceptance],
    now: f64,
) -> OverbookingOutcome {
    let mut order: Vec<&Acceptance> = accepted.iter().collect();
    order.sort_by(|a, b| {
        a.request.request_time.total_cmp(&b.request.request_time).then(a.request.id.cmp(&b.request.id))
    });
    let mut out = OverbookingOutcome::default();
    for a in order {
        let r = &a.request;
        let intended = fleet.iter().position(|v| v.id == a.vehicle);
        let mut pick = intended
            .and_then(|i| feasible_vehicle_request(net, &fleet[i].view(now), r, now).map(|ins| (i, ins, false)));
        if pick.is_none() {
            pick = fleet
                .iter()
                .enumerate()
                .filter(|(i, v)| v.service == a.service && Some(*i) != intended)
                .filter_map(|(i, v)| feasible_vehicle_request(net, &v.view(now), r, now).map(|ins| (i, ins, true)))
                .min_by(|x, y| {
                    x.1.added_distance.total_cmp(&y.1.added_distance).then(fleet[x.0].id.cmp(&fleet[y.0].id))
                });
        }
        match pick {
            Some((i, ins, reassigned)) => {
                let view = fleet[i].view(now);
                let empty = view.stops.is_empty() && view.onboard == 0;
                fleet[i].commit(net, &ins.route);
                out.assigned.push(Assigned {
                    request: r.id,
                    vehicle: fleet[i].id,
                    added_distance: ins.added_distance,
                    vehicle_was_empty: empty,
                    reassigned,
                });
            }
            None => out.lost.push(r.id),
        }
    }
    out
}

fn miles_cost(per_mile: f64, meters: f64) -> f64 {
    per_mile * meters / METERS_PER_MILE
}

/// Slot costs at one decision time: driving cost, the learned expected cost
/// of a first shared rider, and the scaled retrospective cost.
struct Pricer<'a> {
    clusters: &'a ClusterMap,
    table: Option<&'a ExpectedCostTable>,
    rates: &'a RegionProfitRates,
    per_mile: f64,
    multiplier: f64,
    interval: usize,
    remaining: f64,
}

impl Pricer<'_> {
    fn retro(&self, service: Service, origin: usize, dest: usize, t_r: f64) -> f64 {
        retrospective_cost_for(
            self.rates,
            service,
            self.interval,
            self.clusters.cluster_of(origin),
            self.clusters.cluster_of(dest),
            t_r,
            self.remaining,
            self.multiplier,
        )
    }

    fn expected_shared(&self, r: &Request) -> f64 {
        let od = (self.clusters.cluster_of(r.origin), self.clusters.cluster_of(r.dest));
        let c0 = miles_cost(self.per_mile, r.direct_length);
        self.table.and_then(|t| t.cell(od)).filter(|c| c.samples > 0).map_or(c0, |c| c.expected_cost)
    }
}

fn ride_time(route: &Route, id: u64) -> f64 {
    route.times_of(id).map_or(0.0, |(p, d)| d - p)
}

impl SlotCosts for Pricer<'_> {
    fn exclusive(&self, r: &Request, v: &VehicleState, ins: &Insertion) -> f64 {
        miles_cost(self.per_mile, ins.added_distance)
            + self.retro(v.service, r.origin, r.dest, ride_time(&ins.route, r.id))
    }

    fn shared(&self, r: &Request, v: &VehicleState, ins: &Insertion) -> f64 {
        let base = if v.stops.is_empty() && v.onboard == 0 {
            miles_cost(self.per_mile, ins.route.distance - r.direct_length) + self.expected_shared(r)
        } else {
            miles_cost(self.per_mile, ins.added_distance)
        };
        base + self.retro(v.service, r.origin, r.dest, ride_time(&ins.route, r.id))
    }

    fn pooled(&self, r1: &Request, r2: &Request, v: &VehicleState, ins: &Insertion) -> f64 {
        let ours: Vec<(usize, f64)> = ins
            .route
            .stops
            .iter()
            .zip(&ins.route.times)
            .filter(|(s, _)| s.request == r1.id || s.request == r2.id)
            .map(|(s, t)| (s.node, *t))
            .collect();
        let (first, last) = (ours[0], ours[ours.len() - 1]);
        miles_cost(self.per_mile, ins.added_distance) + self.retro(v.service, first.0, last.0, last.1 - first.1)
    }
}

struct Trip {
    request: Request,
    service: Service,
    fare: f64,
    pickup: Option<f64>,
    pooled: bool,
}

struct TripObs {
    cluster: usize,
    service: Service,
    margin: f64,
    duration: f64,
}

struct FirstRider {
    request: u64,
    od: OdPair,
    cost: f64,
}

#[derive(Default)]
struct Tally {
    lost: u64,
    declined: u64,
    no_offer: u64,
    violations: u64,
    quoted_e: f64,
    static_e: f64,
    quoted_n: u64,
    wait: [f64; 2],
    picked: [u64; 2],
}

/// One priced menu for a single request.
struct Menu {
    quote: PriceQuote,
    exclusive: Option<usize>,
    shared: Option<usize>,
}

pub(super) struct Engine<'a> {
    sc: &'a Scenario,
    cfg: &'a SimConfig,
    net: &'a RoadNetwork,
    clusters: &'a ClusterMap,
    policy: Policy,
    options: &'a SimOptions,
    choice: ChoiceParams,
    beta: f64,
    rebalance: bool,
    fleet: Vec<Vehicle>,
    rates: RegionProfitRates,
    n_intervals: usize,
    next_boundary: usize,
    odometer_mark: f64,
    trips: Vec<TripObs>,
    records: BTreeMap<u64, Trip>,
    riders: BTreeMap<usize, Vec<u64>>,
    first_rider: BTreeMap<usize, FirstRider>,
    series: Vec<IntervalStats>,
    cells: Vec<CellSnapshot>,
    shared_costs: Vec<(OdPair, f64)>,
    sharing: BTreeMap<OdPair, (u64, u64)>,
    tally: Tally,
    batches_dumped: usize,
    /// Open vehicles per cluster and service at the last rate refresh,
    /// adjusted by rebalancing moves since.
    open: Vec<[f64; 2]>,
}

impl<'a> Engine<'a> {
    pub(super) fn new(sc: &'a Scenario, policy: Policy, options: &'a SimOptions) -> Result<Self> {
        use rand::Rng;
        let cfg = &sc.config;
        let net = &*sc.net;
        let mut rng = substream(cfg.seed, STREAM_FLEET);
        let fleet: Vec<Vehicle> = (0..cfg.n_exclusive + cfg.n_shared)
            .map(|id| {
                let service = if id < cfg.n_exclusive { Service::Exclusive } else { Service::Shared };
                Vehicle::new(id, service, rng.gen_range(0..net.len()))
            })
            .collect();
        let n_intervals = ((cfg.horizon_s / cfg.interval_s).ceil() as usize).max(1);
        let series = (0..n_intervals)
            .map(|i| IntervalStats { interval: i as u64, start_s: i as f64 * cfg.interval_s, ..Default::default() })
            .collect();
        Ok(Self {
            sc,
            cfg,
            net,
            clusters: &sc.clusters,
            policy,
            options,
            choice: cfg.choice,
            beta: cfg.choice.effective_beta_p(),
            rebalance: cfg.rebalance.unwrap_or(policy.is_batched()),
            fleet,
            rates: RegionProfitRates::zeros(sc.clusters.k(), n_intervals),
            n_intervals,
            next_boundary: 0,
            odometer_mark: 0.0,
            trips: Vec::new(),
            records: BTreeMap::new(),
            riders: BTreeMap::new(),
            first_rider: BTreeMap::new(),
            series,
            cells: Vec::new(),
            shared_costs: Vec::new(),
            sharing: BTreeMap::new(),
            tally: Tally::default(),
            batches_dumped: 0,
            open: vec![[0.0; 2]; sc.clusters.k()],
        })
    }

    fn interval_of(&self, t: f64) -> usize {
        ((t / self.cfg.interval_s).floor().max(0.0) as usize).min(self.n_intervals - 1)
    }

    fn od(&self, r: &Request) -> OdPair {
        (self.clusters.cluster_of(r.origin), self.clusters.cluster_of(r.dest))
    }

    fn cost(&self, meters: f64) -> f64 {
        miles_cost(self.cfg.per_mile_cost, meters)
    }

    pub(super) fn run(mut self) -> Result<SimOutcome> {
        let requests: Vec<Request> = self
            .sc
            .demand
            .iter()
            .enumerate()
            .map(|(i, d)| {
                Request::new(self.net, i as u64, d.origin, d.dest, d.time, self.cfg.max_wait_s, self.cfg.max_delay_s)
            })
            .collect::<Result<_>>()?;
        for r in &requests {
            let i = self.interval_of(r.request_time);
            self.series[i].requests += 1;
        }
        if self.policy.is_batched() {
            self.run_batched(&requests)?;
        } else {
            for r in &requests {
                self.advance_to(r.request_time)?;
                if self.rebalance {
                    self.rebalance_idle(r.request_time);
                }
                self.handle_sequential(r)?;
            }
        }
        self.advance_to(self.cfg.horizon_s)?;
        let mut events: Vec<StopEvent> = self.fleet.iter_mut().flat_map(|v| v.drain()).collect();
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.vehicle.cmp(&b.vehicle)));
        self.process(events);
        let total = self.odometer();
        self.series[self.n_intervals - 1].distance_m += total - self.odometer_mark;
        Ok(self.finish(requests.len() as u64))
    }

    fn odometer(&self) -> f64 {
        self.fleet.iter().map(|v| v.odometer).sum()
    }

    fn advance_fleet(&mut self, now: f64) {
        let mut events: Vec<StopEvent> = self.fleet.iter_mut().flat_map(|v| v.advance(now)).collect();
        events.sort_by(|a, b| a.time.total_cmp(&b.time).then(a.vehicle.cmp(&b.vehicle)));
        self.process(events);
    }

    /// Moves the clock to `now`, refreshing profit rates at each period start passed.
    fn advance_to(&mut self, now: f64) -> Result<()> {
        while self.next_boundary < self.n_intervals && self.next_boundary as f64 * self.cfg.interval_s <= now {
            let b = self.next_boundary;
            self.advance_fleet(b as f64 * self.cfg.interval_s);
            self.refresh_rates(b)?;
            self.next_boundary += 1;
        }
        self.advance_fleet(now);
        Ok(())
    }

    fn process(&mut self, events: Vec<StopEvent>) {
        for e in events {
            let id = e.stop.request;
            let Some(trip) = self.records.get_mut(&id) else { continue };
            let m = trip.service.index();
            match e.stop.kind {
                StopKind::Pickup => {
                    trip.pickup = Some(e.time);
                    self.tally.wait[m] += e.time - trip.request.request_time;
                    self.tally.picked[m] += 1;
                    if trip.service == Service::Shared {
                        let aboard = self.riders.entry(e.vehicle).or_default();
                        aboard.push(id);
                        if aboard.len() >= 2 {
                            for other in aboard.clone() {
                                if let Some(t) = self.records.get_mut(&other) {
                                    t.pooled = true;
                                }
                            }
                        }
                    }
                }
                StopKind::Dropoff => {
                    let pickup = trip.pickup.unwrap_or(e.time);
                    let r = trip.request;
                    if pickup > r.pickup_deadline() + TIME_EPS || e.time > r.dropoff_deadline() + TIME_EPS {
                        self.tally.violations += 1;
                    }
                    let (service, fare, pooled) = (trip.service, trip.fare, trip.pooled);
                    let margin = fare - self.cost(r.direct_length);
                    let od = self.od(&r);
                    self.trips.push(TripObs { cluster: od.0, service, margin, duration: e.time - pickup });
                    if service == Service::Shared {
                        if let Some(aboard) = self.riders.get_mut(&e.vehicle) {
                            aboard.retain(|&x| x != id);
                        }
                        let s = self.sharing.entry(od).or_insert((0, 0));
                        s.0 += pooled as u64;
                        s.1 += 1;
                        if self.first_rider.get(&e.vehicle).is_some_and(|f| f.request == id) {
                            let f = self.first_rider.remove(&e.vehicle).expect("checked");
                            self.shared_costs.push((f.od, f.cost));
                        }
                    }
                }
            }
        }
    }

    /// Calibrates one steady-state cell per cluster from the current fleet
    /// and the trips completed in the previous period.
    fn refresh_rates(&mut self, b: usize) -> Result<()> {
        let odo = self.odometer();
        if b > 0 {
            self.series[b - 1].distance_m += odo - self.odometer_mark;
        }
        self.odometer_mark = odo;

        let k = self.clusters.k();
        let mut states = vec![CellState::default(); k];
        let mut occupancy = [0.0f64; 3];
        for v in &self.fleet {
            let c = self.clusters.cluster_of(v.position());
            let open = !v.has_work() as u8 as f64;
            let s = &mut states[c];
            match v.service {
                Service::Exclusive => {
                    s.l_e += 1.0;
                    s.o_e += open;
                }
                Service::Shared => {
                    s.l_s += 1.0;
                    s.o_s += open;
                    occupancy[v.onboard().min(2)] += 1.0;
                }
            }
        }
        let mean = |xs: &mut dyn Iterator<Item = f64>| {
            let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
            (n > 0).then(|| s / n as f64)
        };
        let all_t = mean(&mut self.trips.iter().map(|t| t.duration)).unwrap_or(600.0);
        let t_of = |m: Service| {
            mean(&mut self.trips.iter().filter(|t| t.service == m).map(|t| t.duration)).unwrap_or(all_t)
        };
        let (t_e, t_s) = (t_of(Service::Exclusive), t_of(Service::Shared));
        let margin_of = |c: Option<usize>, m: Service| {
            mean(&mut self.trips.iter().filter(|t| t.service == m && c.is_none_or(|c| t.cluster == c)).map(|t| t.margin))
        };
        let fleet_margin = [margin_of(None, Service::Exclusive).unwrap_or(0.0), margin_of(None, Service::Shared).unwrap_or(0.0)];
        let zeta = if occupancy.iter().sum::<f64>() > 0.0 {
            zeta_from_counts(occupancy[0], occupancy[1], occupancy[2])?.clamp(1e-6, 2.0)
        } else {
            1.0
        };
        let mut model = SteadyStateModel::new(
            k,
            1,
            WaitFunction { a: self.cfg.wait_a_e },
            WaitFunction { a: self.cfg.wait_a_s },
            zeta,
        )?;
        let mut prices = Vec::with_capacity(k);
        for (c, s) in states.iter_mut().enumerate() {
            s.t_e = t_e;
            s.t_s = t_s;
            model.set_cell(c, 0, *s)?;
            prices.push(CellPrices {
                price_e: margin_of(Some(c), Service::Exclusive).unwrap_or(fleet_margin[0]),
                price_s: margin_of(Some(c), Service::Shared).unwrap_or(fleet_margin[1]),
                cost_e: 0.0,
                cost_s: 0.0,
            });
        }
        let rates = region_profit_rates(&model, &prices)?;
        let (mut sum_e, mut sum_s) = (0.0, 0.0);
        for (c, s) in states.iter().enumerate() {
            let (re, rs) = (rates.get(c, 0, Service::Exclusive), rates.get(c, 0, Service::Shared));
            self.rates.set(c, b, Service::Exclusive, re);
            self.rates.set(c, b, Service::Shared, rs);
            sum_e += re;
            sum_s += rs;
            self.cells.push(CellSnapshot { interval: b, cluster: c, state: *s, zeta_s: zeta, rate_e: re, rate_s: rs });
        }
        self.series[b].mean_rate_e = sum_e / k as f64;
        self.series[b].mean_rate_s = sum_s / k as f64;
        self.open = states.iter().map(|s| [s.o_e, s.o_s]).collect();
        self.trips.clear();
        Ok(())
    }

    /// Sends vehicles idle for long enough toward the nearest cluster with a
    /// higher profit rate, as long as that cluster keeps fewer open vehicles
    /// than the one left behind.
    fn rebalance_idle(&mut self, now: f64) {
        let interval = self.interval_of(now);
        for i in 0..self.fleet.len() {
            let v = &self.fleet[i];
            if v.is_moving() || now - v.idle_since < self.cfg.rebalance_idle_s {
                continue;
            }
            let (service, m) = (v.service, v.service.index());
            let c = self.clusters.cluster_of(v.position());
            let here = self.rates.get(c, interval, service);
            let target = (0..self.clusters.k())
                .filter(|&d| self.rates.get(d, interval, service) > here && self.open[d][m] + 1.0 < self.open[c][m])
                .min_by(|&x, &y| {
                    let tt = |d| self.clusters.centroid_travel_time(c, d);
                    tt(x).total_cmp(&tt(y)).then(x.cmp(&y))
                });
            if let Some(t) = target {
                let node = self.clusters.anchor(t);
                if node != v.position() {
                    self.fleet[i].reposition(self.net, node, now);
                    self.open[c][m] -= 1.0;
                    self.open[t][m] += 1.0;
                }
            }
        }
    }

    fn pricer(&self, now: f64) -> Pricer<'_> {
        let interval = self.interval_of(now);
        Pricer {
            clusters: self.clusters,
            table: self.sc.cost_table.as_ref(),
            rates: &self.rates,
            per_mile: self.cfg.per_mile_cost,
            multiplier: self.cfg.retrospective_multiplier,
            interval,
            remaining: ((interval + 1) as f64 * self.cfg.interval_s - now).max(0.0),
        }
    }

    fn outside_utility(&self, r: &Request) -> f64 {
        let offer = ModeOffer {
            price: static_price(&self.cfg.static_pricing, r) * self.cfg.outside_price_factor,
            wait: self.cfg.outside_wait_s,
            travel: r.direct_time,
        };
        self.choice.utility_parts(Mode::Outside, &offer).total()
    }

    fn ride_utility(&self, r: &Request, route: &Route, mode: Mode) -> f64 {
        let (p, d) = route.times_of(r.id).expect("route serves the request");
        self.choice.assignment_utility(mode, p - r.request_time, d - p)
    }

    fn static_prices(&self, r: &Request) -> (f64, f64) {
        let p_e = static_price(&self.cfg.static_pricing, r);
        (p_e, static_shared_price(&self.cfg.static_pricing, p_e, self.od(r)))
    }

    /// Static fares on the offered services, with the implied choice
    /// probabilities and expected profit. Offers are `(cost, utility)`.
    fn static_quote(&self, r: &Request, e: Option<(f64, f64)>, s: Option<(f64, f64)>) -> PriceQuote {
        let (pe, ps) = self.static_prices(r);
        let ue = e.map_or(f64::NEG_INFINITY, |(_, u)| u + self.beta * pe);
        let us = s.map_or(f64::NEG_INFINITY, |(_, u)| u + self.beta * ps);
        let probabilities = choice_probabilities(ue, us, self.outside_utility(r));
        let expected_profit = e.map_or(0.0, |(c, _)| probabilities.p_e * (pe - c))
            + s.map_or(0.0, |(c, _)| probabilities.p_s * (ps - c));
        PriceQuote {
            p_e: if e.is_some() { pe } else { f64::INFINITY },
            p_s: if s.is_some() { ps } else { f64::INFINITY },
            expected_profit,
            probabilities,
        }
    }

    fn note_quote(&mut self, r: &Request, quote: &PriceQuote) {
        if quote.p_e.is_finite() {
            self.tally.quoted_e += quote.p_e;
            self.tally.static_e += static_price(&self.cfg.static_pricing, r);
            self.tally.quoted_n += 1;
        }
    }

    fn decline(&mut self, r: &Request, no_offer: bool) {
        self.tally.declined += 1;
        self.tally.no_offer += no_offer as u64;
        let i = self.interval_of(r.request_time);
        self.series[i].declined += 1;
    }

    fn lose(&mut self, r: &Request) {
        self.tally.lost += 1;
        let i = self.interval_of(r.request_time);
        self.series[i].lost += 1;
        self.series[i].penalties += self.cfg.c_p;
    }

    fn serve(&mut self, r: &Request, service: Service, vehicle: usize, fare: f64, added: f64, was_empty: bool) {
        self.records.insert(r.id, Trip { request: *r, service, fare, pickup: None, pooled: false });
        let i = self.interval_of(r.request_time);
        self.series[i].served += 1;
        self.series[i].fares += fare;
        if service == Service::Shared {
            if was_empty {
                let od = self.od(r);
                self.first_rider.insert(vehicle, FirstRider { request: r.id, od, cost: self.cost(r.direct_length) });
            } else if let Some(f) = self.first_rider.get_mut(&vehicle) {
                f.cost += miles_cost(self.cfg.per_mile_cost, added) - fare;
            }
        }
    }

    fn handle_sequential(&mut self, r: &Request) -> Result<()> {
        let now = r.request_time;
        let views: Vec<VehicleState> = self.fleet.iter().map(|v| v.view(now)).collect();
        let net = self.net;
        let options: Vec<Option<Insertion>> =
            views.par_iter().map(|v| feasible_vehicle_request(net, v, r, now)).collect();
        let menu = {
            let pricer = self.pricer(now);
            let mut by_service: [Vec<Candidate>; 2] = [Vec::new(), Vec::new()];
            let mut pickup: [Vec<(f64, usize)>; 2] = [Vec::new(), Vec::new()];
            for (v, ins) in views.iter().zip(&options) {
                let Some(ins) = ins else { continue };
                let (cost, mode) = match v.service {
                    Service::Exclusive => (pricer.exclusive(r, v, ins), Mode::Exclusive),
                    Service::Shared => (pricer.shared(r, v, ins), Mode::Shared),
                };
                let m = v.service.index();
                by_service[m].push(Candidate { vehicle: v.id, cost, utility: self.ride_utility(r, &ins.route, mode) });
                pickup[m].push((ins.route.times_of(r.id).expect("served").0, v.id));
            }
            match self.policy {
                Policy::SeqStatic => {
                    let nearest = |m: usize| {
                        pickup[m]
                            .iter()
                            .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                            .map(|&(_, id)| *by_service[m].iter().find(|c| c.vehicle == id).expect("listed"))
                    };
                    let (e, s) = (nearest(0), nearest(1));
                    if e.is_none() && s.is_none() {
                        None
                    } else {
                        let quote = self.static_quote(r, e.map(|c| (c.cost, c.utility)), s.map(|c| (c.cost, c.utility)));
                        Some(Menu { quote, exclusive: e.map(|c| c.vehicle), shared: s.map(|c| c.vehicle) })
                    }
                }
                _ => match spd_handle_request(&by_service[0], &by_service[1], self.outside_utility(r), self.beta)? {
                    QuoteDecision::NoOffer => None,
                    QuoteDecision::Offer { quote, exclusive, shared } => {
                        Some(Menu { quote, exclusive: exclusive.map(|c| c.vehicle), shared: shared.map(|c| c.vehicle) })
                    }
                },
            }
        };
        let Some(menu) = menu else {
            self.decline(r, true);
            return Ok(());
        };
        self.note_quote(r, &menu.quote);
        let (service, vehicle, fare) = match menu.quote.probabilities.pick(choice_draw(self.cfg.seed, r.id)) {
            Mode::Exclusive => (Service::Exclusive, menu.exclusive, menu.quote.p_e),
            Mode::Shared => (Service::Shared, menu.shared, menu.quote.p_s),
            Mode::Outside => (Service::Exclusive, None, 0.0),
        };
        let Some(vehicle) = vehicle else {
            self.decline(r, false);
            return Ok(());
        };
        let ins = options[vehicle].as_ref().expect("candidate is feasible");
        let view = &views[vehicle];
        let empty = view.stops.is_empty() && view.onboard == 0;
        self.fleet[vehicle].commit(self.net, &ins.route);
        self.serve(r, service, vehicle, fare, ins.added_distance, empty);
        Ok(())
    }

    fn run_batched(&mut self, requests: &[Request]) -> Result<()> {
        let w = self.cfg.batch_window_s;
        let mut pending: Vec<Request> = Vec::new();
        let mut next = 0;
        let mut k = 1u64;
        loop {
            let now = k as f64 * w;
            while next < requests.len() && requests[next].request_time <= now {
                pending.push(requests[next]);
                next += 1;
            }
            self.advance_to(now)?;
            let (live, expired): (Vec<Request>, Vec<Request>) =
                pending.into_iter().partition(|r| r.pickup_deadline() >= now - TIME_EPS);
            for r in &expired {
                self.decline(r, true);
            }
            pending = if live.is_empty() { live } else { self.handle_batch(live, now)? };
            if self.rebalance {
                self.rebalance_idle(now);
            }
            if now >= self.cfg.horizon_s && next >= requests.len() {
                for r in &pending {
                    self.decline(r, true);
                }
                return Ok(());
            }
            k += 1;
        }
    }

    /// Prices one matching. Returns its expected profit, quote and vehicle
    /// usage probabilities.
    fn price_matching(
        &self,
        m: &EsvMatching,
        reqs: &BTreeMap<u64, Request>,
    ) -> Option<PricedMatching> {
        let mut usage: BTreeMap<usize, f64> = BTreeMap::new();
        let mut use_vehicle = |v: usize, p: f64| {
            let q = usage.entry(v).or_insert(1.0);
            *q *= 1.0 - p;
        };
        let quote = if let [id] = m.requests[..] {
            let r = &reqs[&id];
            let e = m.exclusive[0].as_ref().map(|s| (s.cost, self.ride_utility(r, &s.insertion.route, Mode::Exclusive)));
            let s = m.shared.as_ref().map(|s| (s.cost, self.ride_utility(r, &s.insertion.route, Mode::Shared)));
            let quote = if self.policy.is_static() {
                self.static_quote(r, e, s)
            } else {
                let cand = |slot: &Option<(f64, f64)>, v: Option<usize>| -> Vec<Candidate> {
                    slot.iter().map(|&(cost, utility)| Candidate { vehicle: v.unwrap_or(0), cost, utility }).collect()
                };
                let ce = cand(&e, m.exclusive[0].as_ref().map(|s| s.vehicle));
                let cs = cand(&s, m.shared.as_ref().map(|s| s.vehicle));
                match spd_handle_request(&ce, &cs, self.outside_utility(r), self.beta).ok()? {
                    QuoteDecision::Offer { quote, .. } => quote,
                    QuoteDecision::NoOffer => return None,
                }
            };
            if let Some(slot) = &m.exclusive[0] {
                use_vehicle(slot.vehicle, quote.probabilities.p_e);
            }
            if let Some(slot) = &m.shared {
                use_vehicle(slot.vehicle, quote.probabilities.p_s);
            }
            MatchingQuote::Single(quote)
        } else {
            let shared = m.shared.as_ref()?;
            let side = |i: usize| -> Option<RequestSide> {
                let r = &reqs[&m.requests[i]];
                let e = m.exclusive[i].as_ref()?;
                Some(RequestSide {
                    c_e: e.cost,
                    c_s: m.solo_shared_costs[i],
                    u_e: self.ride_utility(r, &e.insertion.route, Mode::Exclusive),
                    u_s: self.ride_utility(r, &shared.insertion.route, Mode::Shared),
                    u_o: self.outside_utility(r),
                })
            };
            let inst = BatchPricingInstance { requests: [side(0)?, side(1)?], c_ss: shared.cost, beta_p: self.beta };
            let quote = if self.policy.is_static() {
                let (pe1, ps1) = self.static_prices(&reqs[&m.requests[0]]);
                let (pe2, ps2) = self.static_prices(&reqs[&m.requests[1]]);
                let prices = [ps1, pe1, ps2, pe2];
                BatchQuote {
                    prices,
                    probabilities: price_to_prob(&inst, &prices),
                    expected_profit: batched_expected_profit(&inst, &prices),
                }
            } else {
                optimize_batch_prices(&inst).ok()?
            };
            let p = quote.probabilities;
            for i in 0..2 {
                use_vehicle(m.exclusive[i].as_ref()?.vehicle, p[2 * i + 1]);
                use_vehicle(shared.vehicle, p[2 * i]);
            }
            MatchingQuote::Pair(quote)
        };
        let u = match &quote {
            MatchingQuote::Single(q) => q.expected_profit,
            MatchingQuote::Pair(q) => q.expected_profit,
        };
        if !u.is_finite() {
            return None;
        }
        let gamma = usage.into_iter().map(|(v, q)| (v, (1.0 - q).clamp(0.0, 1.0))).collect();
        Some((u, quote, gamma))
    }

    /// Matches, prices and selects one batch. Returns requests carried over.
    fn handle_batch(&mut self, pending: Vec<Request>, now: f64) -> Result<Vec<Request>> {
        let views: Vec<VehicleState> = self.fleet.iter().map(|v| v.view(now)).collect();
        let rv = build_rv_graph(self.net, &pending, &views, now);
        let mut esv = build_esv_graph(self.net, &rv, &pending, &views, &self.pricer(now), now);
        let reqs: BTreeMap<u64, Request> = pending.iter().map(|r| (r.id, *r)).collect();
        let priced: Vec<_> = esv.par_iter().map(|m| self.price_matching(m, &reqs)).collect();
        let mut candidates = Vec::new();
        for (m, p) in esv.iter_mut().zip(priced) {
            if let Some((u, quote, gamma)) = p {
                m.u = u;
                m.quote = Some(quote);
                m.gamma = gamma.clone();
                candidates.push(assignment::Candidate { id: m.id, u, requests: m.requests.clone(), gamma });
            }
        }
        let problem = AssignmentProblem::new(candidates, self.cfg.c_p)?;
        let solution = assignment::solve_assignment(&problem);
        self.dump(&rv, &esv, &problem, &solution)?;

        let mut decided = BTreeSet::new();
        let mut accepted = Vec::new();
        for &id in &solution.selected {
            let m = &esv[id];
            for (i, rid) in m.requests.iter().enumerate() {
                let r = reqs[rid];
                decided.insert(r.id);
                let (quote, e_vehicle, s_vehicle) = match m.quote.as_ref().expect("priced") {
                    MatchingQuote::Single(q) => (*q, m.exclusive[0].as_ref().map(|s| s.vehicle), m.shared.as_ref().map(|s| s.vehicle)),
                    MatchingQuote::Pair(q) => {
                        let (pr, pp) = (q.prices, q.probabilities);
                        let probabilities = crate::choice::ChoiceProbabilities {
                            p_e: pp[2 * i + 1],
                            p_s: pp[2 * i],
                            p_o: (1.0 - pp[2 * i] - pp[2 * i + 1]).max(0.0),
                        };
                        let quote = PriceQuote { p_e: pr[2 * i + 1], p_s: pr[2 * i], expected_profit: q.expected_profit, probabilities };
                        (quote, m.exclusive[i].as_ref().map(|s| s.vehicle), m.shared.as_ref().map(|s| s.vehicle))
                    }
                };
                self.note_quote(&r, &quote);
                let pick = match quote.probabilities.pick(choice_draw(self.cfg.seed, r.id)) {
                    Mode::Exclusive => e_vehicle.map(|v| (Service::Exclusive, v, quote.p_e)),
                    Mode::Shared => s_vehicle.map(|v| (Service::Shared, v, quote.p_s)),
                    Mode::Outside => None,
                };
                match pick {
                    Some((service, vehicle, price)) => accepted.push(Acceptance { request: r, service, vehicle, price }),
                    None => self.decline(&r, false),
                }
            }
        }
        let outcome = resolve_overbooking(self.net, &mut self.fleet, &accepted, now);
        let by_id: BTreeMap<u64, &Acceptance> = accepted.iter().map(|a| (a.request.id, a)).collect();
        for a in &outcome.assigned {
            let acc = by_id[&a.request];
            self.serve(&acc.request, acc.service, a.vehicle, acc.price, a.added_distance, a.vehicle_was_empty);
        }
        for id in &outcome.lost {
            self.lose(&reqs[id]);
        }
        Ok(pending.into_iter().filter(|r| !decided.contains(&r.id)).collect())
    }

    fn dump(
        &mut self,
        rv: &crate::matching::RvGraph,
        esv: &[EsvMatching],
        problem: &AssignmentProblem,
        solution: &assignment::AssignmentSolution,
    ) -> Result<()> {
        if self.options.graphs_dir.is_none() && self.options.ilp_dir.is_none() {
            return Ok(());
        }
        if self.options.dump_limit > 0 && self.batches_dumped >= self.options.dump_limit {
            return Ok(());
        }
        let n = self.batches_dumped;
        self.batches_dumped += 1;
        if let Some(dir) = &self.options.graphs_dir {
            std::fs::create_dir_all(dir)?;
            rv.write_csv(&dir.join(format!("rv_{n:05}.csv")))?;
            write_esv_csv(esv, &dir.join(format!("esv_{n:05}.csv")))?;
        }
        if let Some(dir) = &self.options.ilp_dir {
            std::fs::create_dir_all(dir)?;
            problem.write_json(solution, &dir.join(format!("ilp_{n:05}.json")))?;
        }
        Ok(())
    }

    fn finish(self, total: u64) -> SimOutcome {
        let cfg = self.cfg;
        let mut modes = [ModeStats::default(), ModeStats::default()];
        for t in self.records.values() {
            let m = &mut modes[t.service.index()];
            m.served += 1;
            m.fares += t.fare;
        }
        for (i, m) in modes.iter_mut().enumerate() {
            if m.served > 0 {
                m.mean_price = m.fares / m.served as f64;
            }
            if self.tally.picked[i] > 0 {
                m.mean_wait = self.tally.wait[i] / self.tally.picked[i] as f64;
            }
        }
        let served = self.records.len() as u64;
        let fares: f64 = self.records.values().map(|t| t.fare).sum();
        let operational_cost = self.cost(self.odometer());
        let penalties = cfg.c_p * self.tally.lost as f64;
        let picked: u64 = self.tally.picked.iter().sum();

        let mut per_day: BTreeMap<u64, DayStats> = BTreeMap::new();
        for s in &self.series {
            let day = (s.start_s / 86_400.0).floor() as u64;
            let d = per_day.entry(day).or_insert_with(|| DayStats { day, ..Default::default() });
            d.requests += s.requests;
            d.served += s.served;
            d.lost += s.lost;
            d.declined += s.declined;
            d.fares += s.fares;
            d.operational_cost += self.cost(s.distance_m);
            d.penalties += s.penalties;
        }
        for d in per_day.values_mut() {
            d.profit = d.fares - d.operational_cost - d.penalties;
        }
        let ratio = |a: f64, n: u64| if n > 0 { a / n as f64 } else { 0.0 };
        let report = SimReport {
            policy: self.policy.as_str().to_string(),
            seed: cfg.seed,
            requests_total: total,
            requests_served: served,
            requests_lost: self.tally.lost,
            requests_declined: self.tally.declined,
            requests_no_offer: self.tally.no_offer,
            pooled_riders: self.records.values().filter(|t| t.pooled).count() as u64,
            total_profit: fares - operational_cost - penalties,
            fares,
            operational_cost,
            penalties,
            market_share: ratio(served as f64, total),
            market_share_denominator: "all_requests".to_string(),
            mean_price: ratio(fares, served),
            mean_wait: ratio(self.tally.wait.iter().sum(), picked),
            mean_quoted_exclusive_price: ratio(self.tally.quoted_e, self.tally.quoted_n),
            mean_static_exclusive_price: ratio(self.tally.static_e, self.tally.quoted_n),
            exclusive: modes[0].clone(),
            shared: modes[1].clone(),
            window_violations: self.tally.violations,
            per_day: per_day.into_values().collect(),
        };
        SimOutcome {
            report,
            series: self.series,
            shared_costs: self.shared_costs,
            sharing: self.sharing,
            cells: self.cells,
        }
    }
}
