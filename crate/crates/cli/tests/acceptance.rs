//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modjoint::assignment::{brute_force_assignment, solve_assignment, AssignmentProblem, Candidate};
use modjoint::bpd_pricing::{concavity_certificate, hessian_at, optimize_batch_prices, BatchPricingInstance, RequestSide};
use modjoint::choice::Service;
use modjoint::costs::{solve_utilization, SteadyStateModel, UtilizationInputs, WaitFunction};
use modjoint::matching::{
    build_esv_graph, build_rv_graph, feasible_vehicle_request, DrivingCosts, Request, Route, Stop, StopKind, VehicleState,
    TIME_EPS,
};
use modjoint::network::RoadNetwork;
use modjoint::simulator::experiments::{default_sweep_grid, run_cost_convergence, sweep_retrospective_multiplier};
use modjoint::simulator::{Policy, Scenario, SimConfig};
use modjoint::spd_pricing::{lambert_w, spd_optimal_prices, SpdInstance};

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Compass search from `x`, halving the step until it drops below `tol`.
fn compass<const N: usize>(f: impl Fn(&[f64; N]) -> f64, mut x: [f64; N], mut step: f64, tol: f64) -> ([f64; N], f64) {
    let mut best = f(&x);
    while step > tol {
        let mut improved = false;
        for k in 0..N {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[k] += dir * step;
                let v = f(&y);
                if v > best {
                    best = v;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, best)
}

// ---------------------------------------------------------------- 1

fn spd_profit(inst: &SpdInstance, p_e: f64, p_s: f64) -> f64 {
    let a = inst.beta_p * p_e + inst.u_e;
    let b = inst.beta_p * p_s + inst.u_s;
    let z = log_sum_exp(&[a, b, inst.u_o]);
    (a - z).exp() * (p_e - inst.c_e) + (b - z).exp() * (p_s - inst.c_s)
}

fn random_spd(rng: &mut ChaCha8Rng) -> SpdInstance {
    let c_e = rng.gen_range(0.0..20.0);
    SpdInstance {
        u_e: rng.gen_range(-2.0..2.0),
        u_s: rng.gen_range(-2.0..2.0),
        u_o: rng.gen_range(-2.0..2.0),
        c_e,
        c_s: c_e * rng.gen_range(0.0..1.0),
        beta_p: rng.gen_range(-0.6..-0.03),
    }
}

fn criterion_1() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst_price, mut worst_profit, mut worst_gap) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..200 {
        let inst = random_spd(&mut rng);
        let q = spd_optimal_prices(&inst).map_err(|e| e.to_string())?;
        // grid over markups, then compass refinement
        let scale = 1.0 / -inst.beta_p;
        let f = |m: &[f64; 2]| spd_profit(&inst, inst.c_e + m[0], inst.c_s + m[1]);
        let n = 200;
        let (lo, hi) = (-2.0 * scale, 30.0 * scale);
        let h = (hi - lo) / n as f64;
        let mut start = [0.0; 2];
        let mut best = f64::NEG_INFINITY;
        for i in 0..=n {
            for j in 0..=n {
                let m = [lo + i as f64 * h, lo + j as f64 * h];
                let v = f(&m);
                if v > best {
                    best = v;
                    start = m;
                }
            }
        }
        let (m, v) = compass(f, start, h, 1e-11 * scale);
        worst_price = worst_price.max((q.p_e - inst.c_e - m[0]).abs()).max((q.p_s - inst.c_s - m[1]).abs());
        worst_profit = worst_profit.max((q.expected_profit - v).abs());
        worst_gap = worst_gap.max(((q.p_e - q.p_s) - (inst.c_e - inst.c_s)).abs());
    }
    let secs = clock.elapsed().as_secs_f64();
    check(
        worst_price <= 1e-3 && worst_profit <= 1e-6 && worst_gap <= 1e-9 && secs < 10.0,
        format!("max |dp| {worst_price:.2e}, max |dprofit| {worst_profit:.2e}, max gap error {worst_gap:.2e}, {secs:.2}s"),
    )
}

// ---------------------------------------------------------------- 2

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    for k in 0..=2000 {
        let x = if k == 0 { 0.0 } else { 10f64.powf(-12.0 + 20.0 * k as f64 / 2000.0) };
        let w = lambert_w(x).map_err(|e| e.to_string())?;
        worst = worst.max((w * w.exp() - x).abs() / x.max(1.0));
    }
    let w0 = lambert_w(0.0).map_err(|e| e.to_string())?;
    let we = lambert_w(std::f64::consts::E).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-12 && w0.abs() <= 1e-12 && (we - 1.0).abs() <= 1e-12,
        format!("max scaled residual {worst:.2e}, W(0) = {w0}, W(e) - 1 = {:.1e}", we - 1.0),
    )
}

// ---------------------------------------------------------------- 3, 4

fn side(rng: &mut ChaCha8Rng, max_cost: f64) -> RequestSide {
    let c_e = rng.gen_range(0.0..max_cost);
    RequestSide {
        c_e,
        c_s: c_e * rng.gen_range(0.3..1.0),
        u_e: rng.gen_range(-1.5..1.5),
        u_s: rng.gen_range(-1.5..1.5),
        u_o: rng.gen_range(-1.5..1.5),
    }
}

/// A pooled instance whose pooled trip costs at least either exclusive ride
/// and which satisfies the concavity certificate.
fn certified_batch(rng: &mut ChaCha8Rng) -> BatchPricingInstance {
    loop {
        let beta_p = rng.gen_range(-0.5..-0.05);
        let reqs = [side(rng, 2.0 / -beta_p), side(rng, 2.0 / -beta_p)];
        let lo = reqs[0].c_e.max(reqs[1].c_e);
        let hi = reqs[0].c_s + reqs[1].c_s;
        if lo >= hi {
            continue;
        }
        let inst = BatchPricingInstance { requests: reqs, c_ss: rng.gen_range(lo..hi), beta_p };
        if concavity_certificate(&inst) {
            return inst;
        }
    }
}

/// `beta * profit` in probability coordinates `(P_1s, P_1e, P_2s, P_2e)`.
fn batch_gradient(inst: &BatchPricingInstance, p: &[f64; 4]) -> [f64; 4] {
    let b = inst.beta_p;
    let c = inst.requests[0].c_s + inst.requests[1].c_s - inst.c_ss;
    let mut g = [0.0; 4];
    for (i, r) in inst.requests.iter().enumerate() {
        let phi = 1.0 - p[2 * i] - p[2 * i + 1];
        g[2 * i] = r.u_o + p[2 * i].ln() - phi.ln() + 1.0 / phi - r.u_s - b * r.c_s;
        g[2 * i + 1] = r.u_o + p[2 * i + 1].ln() - phi.ln() + 1.0 / phi - r.u_e - b * r.c_e;
    }
    g[0] += b * c * p[2];
    g[2] += b * c * p[0];
    g
}

fn random_interior(rng: &mut ChaCha8Rng) -> [f64; 4] {
    let mut p = [0.0; 4];
    for i in 0..2 {
        let e: [f64; 3] = std::array::from_fn(|_| -rng.gen_range(1e-3f64..1.0).ln());
        let t: f64 = e.iter().sum();
        p[2 * i] = e[0] / t;
        p[2 * i + 1] = e[1] / t;
    }
    p
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut min_eig, mut worst_rel) = (f64::INFINITY, 0.0f64);
    for _ in 0..100 {
        let inst = certified_batch(&mut rng);
        for _ in 0..100 {
            let p = random_interior(&mut rng);
            let h = hessian_at(&inst, &p).map_err(|e| e.to_string())?;
            min_eig = min_eig.min(h.symmetric_eigenvalues().min());
            for k in 0..4 {
                let step = 1e-4 * p[k].min(1.0 - p[2 * (k / 2)] - p[2 * (k / 2) + 1]);
                let (mut up, mut down) = (p, p);
                up[k] += step;
                down[k] -= step;
                let (gu, gd) = (batch_gradient(&inst, &up), batch_gradient(&inst, &down));
                for j in 0..4 {
                    let fd = (gu[j] - gd[j]) / (2.0 * step);
                    worst_rel = worst_rel.max((fd - h[(j, k)]).abs() / h[(j, k)].abs().max(1.0));
                }
            }
        }
    }
    check(min_eig >= -1e-8 && worst_rel <= 1e-5, format!("min eigenvalue {min_eig:.3e}, max relative FD error {worst_rel:.2e}"))
}

/// Expected profit at interior probabilities, prices recovered by inverting the logit.
fn batch_profit_of_probs(inst: &BatchPricingInstance, p: &[f64; 4]) -> f64 {
    let c = inst.requests[0].c_s + inst.requests[1].c_s - inst.c_ss;
    let mut total = 0.0;
    for (i, r) in inst.requests.iter().enumerate() {
        let (ps, pe) = (p[2 * i], p[2 * i + 1]);
        let phi = 1.0 - ps - pe;
        if ps <= 0.0 || pe <= 0.0 || phi <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let price = |q: f64, u: f64| (r.u_o + q.ln() - phi.ln() - u) / inst.beta_p;
        total += ps * (price(ps, r.u_s) - r.c_s) + pe * (price(pe, r.u_e) - r.c_e);
    }
    total + p[0] * p[2] * c
}

fn grid_batch_oracle(inst: &BatchPricingInstance) -> f64 {
    let n = 40;
    let h = 1.0 / n as f64;
    let mut cells = Vec::new();
    for a in 1..n {
        for b in 1..n - a {
            cells.push((a as f64 * h, b as f64 * h));
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut start = [0.0; 4];
    for &(s1, e1) in &cells {
        for &(s2, e2) in &cells {
            let x = [s1, e1, s2, e2];
            let v = batch_profit_of_probs(inst, &x);
            if v > best {
                best = v;
                start = x;
            }
        }
    }
    compass(|x| batch_profit_of_probs(inst, x), start, h, 1e-12).1
}

fn criterion_4() -> Outcome {
    let clock = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let mut worst_profit = 0.0f64;
    for _ in 0..30 {
        let inst = certified_batch(&mut rng);
        let q = optimize_batch_prices(&inst).map_err(|e| e.to_string())?;
        worst_profit = worst_profit.max((q.expected_profit - grid_batch_oracle(&inst)).abs());
    }
    let mut worst_price = 0.0f64;
    for _ in 0..200 {
        let beta_p = rng.gen_range(-0.5..-0.05);
        let requests = [side(&mut rng, 10.0), side(&mut rng, 10.0)];
        let inst = BatchPricingInstance { requests, c_ss: requests[0].c_s + requests[1].c_s, beta_p };
        let q = optimize_batch_prices(&inst).map_err(|e| e.to_string())?;
        for i in 0..2 {
            let s = spd_optimal_prices(&inst.spd_instance(i)).map_err(|e| e.to_string())?;
            worst_price = worst_price.max((q.prices[2 * i] - s.p_s).abs()).max((q.prices[2 * i + 1] - s.p_e).abs());
        }
    }
    let secs = clock.elapsed().as_secs_f64();
    check(
        worst_profit <= 1e-3 && worst_price <= 1e-6 && secs < 60.0,
        format!("max |dprofit| vs grid {worst_profit:.2e}, max |dp| vs closed form at C=0 {worst_price:.2e}, {secs:.2}s"),
    )
}

// ---------------------------------------------------------------- 5

fn random_assignment(rng: &mut ChaCha8Rng) -> AssignmentProblem {
    let n = rng.gen_range(0..=12);
    let matchings = (0..n)
        .map(|id| {
            let mut requests: Vec<u64> = (0..rng.gen_range(1..=2)).map(|_| rng.gen_range(0..8)).collect();
            requests.sort_unstable();
            requests.dedup();
            let mut vehicles: Vec<usize> = (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(0..5)).collect();
            vehicles.sort_unstable();
            vehicles.dedup();
            Candidate {
                id: id * 3 + 1,
                u: rng.gen_range(-5.0..20.0),
                requests,
                gamma: vehicles.into_iter().map(|v| (v, rng.gen_range(0.0..=1.0))).collect(),
            }
        })
        .collect();
    AssignmentProblem::new(matchings, rng.gen_range(0.0..10.0)).expect("valid instance")
}

/// `w_j` of a selection from first principles, for every vehicle of the
/// problem (a vehicle with negative weight is penalized for going unused).
fn penalties(prob: &AssignmentProblem, selected: &[usize]) -> BTreeMap<usize, f64> {
    let mut eps: BTreeMap<usize, (f64, f64)> = BTreeMap::new();
    for m in &prob.matchings {
        for &(v, _) in &m.gamma {
            let e = eps.entry(v).or_default();
            e.0 += m.u;
            e.1 += 1.0;
        }
    }
    let mut load: BTreeMap<usize, f64> = eps.keys().map(|&v| (v, 0.0)).collect();
    for m in prob.matchings.iter().filter(|m| selected.contains(&m.id)) {
        for &(v, g) in &m.gamma {
            *load.entry(v).or_default() += g;
        }
    }
    load.into_iter().map(|(v, l)| (v, ((prob.c_p + eps[&v].0 / eps[&v].1) * (l - 1.0)).max(0.0))).collect()
}

fn exhaustive(prob: &AssignmentProblem) -> f64 {
    let n = prob.matchings.len();
    let mut best = f64::NEG_INFINITY;
    for mask in 0u32..(1 << n) {
        let chosen: Vec<&Candidate> = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| &prob.matchings[i]).collect();
        let mut seen = BTreeSet::new();
        if !chosen.iter().flat_map(|m| &m.requests).all(|r| seen.insert(*r)) {
            continue;
        }
        let ids: Vec<usize> = chosen.iter().map(|m| m.id).collect();
        let value = chosen.iter().map(|m| m.u).sum::<f64>() - penalties(prob, &ids).values().sum::<f64>();
        best = best.max(value);
    }
    best
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let (mut worst_obj, mut worst_w, mut overlaps) = (0.0f64, 0.0f64, 0);
    for _ in 0..500 {
        let prob = random_assignment(&mut rng);
        let sol = solve_assignment(&prob);
        let brute = brute_force_assignment(&prob).map_err(|e| e.to_string())?;
        worst_obj = worst_obj.max((sol.objective - exhaustive(&prob)).abs()).max((sol.objective - brute.objective).abs());
        let mut seen = BTreeSet::new();
        for m in prob.matchings.iter().filter(|m| sol.selected.contains(&m.id)) {
            overlaps += m.requests.iter().filter(|r| !seen.insert(**r)).count();
        }
        for (v, w) in penalties(&prob, &sol.selected) {
            worst_w = worst_w.max((sol.penalties.get(&v).copied().unwrap_or(0.0) - w).abs());
        }
    }
    check(
        worst_obj <= 1e-9 && worst_w <= 1e-12 && overlaps == 0,
        format!("max |dobjective| {worst_obj:.2e}, max |dw| {worst_w:.2e}, doubly covered requests {overlaps}"),
    )
}

// ---------------------------------------------------------------- 6

fn random_network(rng: &mut ChaCha8Rng) -> RoadNetwork {
    let (rows, cols) = (3, 3);
    let nodes: Vec<(u64, f64, f64)> =
        (0..rows * cols).map(|i| (i as u64, (i % cols) as f64 * 500.0, (i / cols) as f64 * 500.0)).collect();
    let mut edges = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let i = (r * cols + c) as u64;
            let mut link = |j: u64| {
                for (a, b) in [(i, j), (j, i)] {
                    let t = rng.gen_range(30.0..120.0);
                    edges.push((a, b, t, t * 8.0));
                }
            };
            if c + 1 < cols {
                link(i + 1);
            }
            if r + 1 < rows {
                link(i + cols as u64);
            }
        }
    }
    RoadNetwork::new(&nodes, &edges).expect("connected grid")
}

/// Times `stops` from `(node, time)`; true if every deadline and the capacity hold.
fn route_ok(net: &RoadNetwork, node: usize, time: f64, capacity: usize, onboard: usize, stops: &[Stop]) -> bool {
    let (mut node, mut t, mut load) = (node, time, onboard as i64);
    for s in stops {
        t += net.travel_time(node, s.node).expect("connected");
        node = s.node;
        load += if s.kind == StopKind::Pickup { 1 } else { -1 };
        if t > s.deadline + TIME_EPS || load > capacity as i64 || load < 0 {
            return false;
        }
    }
    true
}

fn permutations(items: &[Stop]) -> Vec<Vec<Stop>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Every pickup precedes its dropoff, and `fixed` appears in its given order.
fn respects_order(seq: &[Stop], fixed: &[Stop]) -> bool {
    let pos = |s: &Stop| seq.iter().position(|x| x == s);
    let pickups_first = seq.iter().enumerate().all(|(i, s)| {
        s.kind == StopKind::Pickup
            || seq.iter().position(|x| x.request == s.request && x.kind == StopKind::Pickup).is_none_or(|p| p < i)
    });
    pickups_first && fixed.windows(2).all(|w| pos(&w[0]) < pos(&w[1]))
}

fn brute_feasible(net: &RoadNetwork, node: usize, time: f64, capacity: usize, onboard: usize, fixed: &[Stop], new: &[Stop]) -> bool {
    let all: Vec<Stop> = fixed.iter().chain(new).copied().collect();
    permutations(&all).iter().any(|seq| respects_order(seq, fixed) && route_ok(net, node, time, capacity, onboard, seq))
}

fn random_request(net: &RoadNetwork, rng: &mut ChaCha8Rng, id: u64) -> Request {
    let o = rng.gen_range(0..net.len());
    let d = (o + rng.gen_range(1..net.len())) % net.len();
    Request::new(net, id, o, d, rng.gen_range(0.0..60.0), rng.gen_range(90.0..300.0), rng.gen_range(90.0..400.0))
        .expect("valid request")
}

fn random_fleet(net: &RoadNetwork, rng: &mut ChaCha8Rng, now: f64) -> Vec<VehicleState> {
    (0..5)
        .map(|id| {
            let service = if rng.gen_bool(0.5) { Service::Shared } else { Service::Exclusive };
            let mut v = VehicleState::idle(id, service, rng.gen_range(0..net.len()), now + rng.gen_range(0.0..60.0));
            match rng.gen_range(0..3) {
                // a committed but unpicked customer
                1 => {
                    let r = random_request(net, rng, 100 + id as u64);
                    if let Some(ins) = feasible_vehicle_request(net, &v, &Request { request_time: now, ..r }, now) {
                        v.stops = ins.route.stops;
                    }
                }
                // a customer on board
                2 => {
                    let mut r = random_request(net, rng, 100 + id as u64);
                    r.origin = v.node;
                    r.request_time = now;
                    r.max_delay += 600.0;
                    if r.dest != v.node {
                        v.onboard = 1;
                        v.stops = vec![Stop::dropoff(&r)];
                    }
                }
                _ => {}
            }
            v
        })
        .collect()
}

fn route_revalidates(net: &RoadNetwork, v: &VehicleState, route: &Route, requests: &[&Request], now: f64) -> bool {
    let start = v.time.max(now);
    let served = requests.iter().all(|r| {
        route.stops.contains(&Stop::pickup(r)) && route.stops.contains(&Stop::dropoff(r))
    });
    let keeps_commitments = respects_order(&route.stops, &v.stops) && v.stops.iter().all(|s| route.stops.contains(s));
    let windows = requests.iter().all(|r| {
        let at = |s: Stop| route.times[route.stops.iter().position(|x| *x == s).expect("present")];
        at(Stop::pickup(r)) <= r.request_time + r.max_wait + TIME_EPS
            && at(Stop::dropoff(r)) <= r.request_time + r.direct_time + r.max_delay + TIME_EPS
    });
    served
        && keeps_commitments
        && windows
        && route.stops.len() == v.stops.len() + 2 * requests.len()
        && route_ok(net, v.node, start, v.capacity(), v.onboard, &route.stops)
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let now = 60.0;
    let (mut rv_mismatch, mut pair_mismatch, mut bad_routes, mut matchings) = (0, 0, 0, 0);
    for _ in 0..100 {
        let net = random_network(&mut rng);
        let requests: Vec<Request> = (0..rng.gen_range(2..=5)).map(|id| random_request(&net, &mut rng, id)).collect();
        let fleet = random_fleet(&net, &mut rng, now);
        let rv = build_rv_graph(&net, &requests, &fleet, now);

        let got: BTreeSet<(u64, usize)> = rv.request_vehicle.iter().map(|(r, i)| (*r, i.vehicle)).collect();
        for r in &requests {
            for v in &fleet {
                let expect = brute_feasible(&net, v.node, v.time.max(now), v.capacity(), v.onboard, &v.stops, &[Stop::pickup(r), Stop::dropoff(r)]);
                rv_mismatch += usize::from(expect != got.contains(&(r.id, v.id)));
            }
        }
        let pairs: BTreeSet<(u64, u64)> = rv.request_pairs.iter().copied().collect();
        for (a, r1) in requests.iter().enumerate() {
            for r2 in &requests[a + 1..] {
                let new = [Stop::pickup(r1), Stop::dropoff(r1), Stop::pickup(r2), Stop::dropoff(r2)];
                let start = r1.request_time.max(r2.request_time);
                let expect = [r1.origin, r2.origin].iter().any(|&o| brute_feasible(&net, o, start, 2, 0, &[], &new));
                pair_mismatch += usize::from(expect != pairs.contains(&(r1.id.min(r2.id), r1.id.max(r2.id))));
            }
        }

        let esv = build_esv_graph(&net, &rv, &requests, &fleet, &DrivingCosts { per_mile_cost: 0.5 }, now);
        for m in &esv {
            matchings += 1;
            let reqs: Vec<&Request> = m.requests.iter().map(|id| requests.iter().find(|r| r.id == *id).expect("known")).collect();
            if let Some(s) = &m.shared {
                let v = &fleet[s.vehicle];
                bad_routes += usize::from(v.service != Service::Shared || !route_revalidates(&net, v, &s.insertion.route, &reqs, now));
            }
            for (r, slot) in reqs.iter().zip(&m.exclusive) {
                if let Some(s) = slot {
                    let v = &fleet[s.vehicle];
                    bad_routes += usize::from(v.service != Service::Exclusive || !route_revalidates(&net, v, &s.insertion.route, &[r], now));
                }
            }
        }
    }
    check(
        rv_mismatch == 0 && pair_mismatch == 0 && bad_routes == 0,
        format!("RV mismatches {rv_mismatch}, pair mismatches {pair_mismatch}, invalid routes {bad_routes} over {matchings} matchings"),
    )
}

// ---------------------------------------------------------------- 7

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst_flow = 0.0f64;
    let mut cells_checked = 0;

    // cells measured by a simulation run, plus random ones
    let cfg = SimConfig::from_file(&fixtures().join("benchmark/benchmark.conf")).map_err(|e| e.to_string())?;
    let (wait_e, wait_s) = (WaitFunction { a: cfg.wait_a_e }, WaitFunction { a: cfg.wait_a_s });
    let sc = Scenario::load(SimConfig { horizon_s: 6.0 * 3600.0, ..cfg }).map_err(|e| e.to_string())?;
    let mut cells: Vec<(modjoint::costs::CellState, f64)> =
        sc.run(Policy::Spd).map_err(|e| e.to_string())?.cells.iter().map(|c| (c.state, c.zeta_s)).collect();
    for _ in 0..200 {
        let l_e = rng.gen_range(1.0..40.0);
        let l_s = rng.gen_range(1.0..40.0);
        let state = modjoint::costs::CellState {
            l_e,
            l_s,
            o_e: l_e * rng.gen_range(0.01..1.0),
            o_s: l_s * rng.gen_range(0.01..1.0),
            t_e: rng.gen_range(60.0..1800.0),
            t_s: rng.gen_range(60.0..1800.0),
        };
        cells.push((state, rng.gen_range(0.05..2.0)));
    }
    for (state, zeta) in cells {
        let mut m = SteadyStateModel::new(1, 1, wait_e, wait_s, zeta).map_err(|e| e.to_string())?;
        m.set_cell(0, 0, state).map_err(|e| e.to_string())?;
        for (service, l, o, t, w, z) in [
            (Service::Exclusive, state.l_e, state.o_e, state.t_e, wait_e, 1.0),
            (Service::Shared, state.l_s, state.o_s, state.t_s, wait_s, zeta),
        ] {
            if o <= 0.0 {
                continue;
            }
            let y = m.throughput(0, 0, service).map_err(|e| e.to_string())?;
            let eta = w.a / o.sqrt();
            worst_flow = worst_flow.max((l - (o + eta * y / z + t * y / z)).abs());
            cells_checked += 1;
        }
    }

    let (mut worst_balance, mut zeta_exact, mut solved) = (0.0f64, true, 0);
    for _ in 0..300 {
        let l_s = rng.gen_range(2.0..60.0);
        let o_s = l_s * rng.gen_range(0.0..0.4);
        let o_s1 = l_s * rng.gen_range(0.0..0.3);
        let inp = UtilizationInputs {
            l_s,
            o_s,
            eta_s: rng.gen_range(10.0..300.0),
            t_s: rng.gen_range(120.0..1800.0),
            o_s1,
            eta_s1: rng.gen_range(10.0..300.0),
            t_s1: rng.gen_range(120.0..1800.0),
            p10: None,
            p21: None,
        };
        let Ok(u) = solve_utilization(&inp) else { continue };
        solved += 1;
        worst_balance = worst_balance
            .max((u.n0 * u.p01 - u.n1 * u.p10).abs())
            .max((u.n1 * u.p12 - u.n2 * u.p21).abs())
            .max((u.n0 + u.n1 + u.n2 - l_s).abs());
        zeta_exact &= u.zeta_s == (u.n1 + 2.0 * u.n2) / u.l_s;
    }
    check(
        worst_flow <= 1e-9 && worst_balance <= 1e-9 && zeta_exact && solved >= 100,
        format!(
            "max flow residual {worst_flow:.2e} over {cells_checked} cells, max balance residual {worst_balance:.2e} over {solved} chains, zeta exact: {zeta_exact}"
        ),
    )
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Outcome {
    let clock = Instant::now();
    let mut cfg = SimConfig::from_file(&fixtures().join("benchmark/benchmark.conf")).map_err(|e| e.to_string())?;
    cfg.expected_costs = None;
    let sc = Scenario::load(cfg).map_err(|e| e.to_string())?;
    let fresh = run_cost_convergence(&sc, 7, Policy::SeqStatic, false).map_err(|e| e.to_string())?;
    let same = run_cost_convergence(&sc, 7, Policy::SeqStatic, true).map_err(|e| e.to_string())?;
    let secs = clock.elapsed().as_secs_f64();
    let (first, last) = (fresh.mad[0], *fresh.mad.last().expect("six values"));
    // mad[k] is the change after day k + 2
    let by_day_3 = same.mad[1];
    check(
        last < first && by_day_3 < 1e-9 && secs < 120.0,
        format!("MAD {:?}, identical-day MAD at day 3 {by_day_3:.1e}, {secs:.2}s", fresh.mad.iter().map(|m| (m * 1e3).round() / 1e3).collect::<Vec<_>>()),
    )
}

// ---------------------------------------------------------------- 9

fn criterion_9() -> Outcome {
    let clock = Instant::now();
    let base = SimConfig::from_file(&fixtures().join("benchmark/benchmark.conf")).map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    let mut all_positive = true;
    let (mut seq_gain, mut batch_gain, mut bpd_over_spd) = (0.0, 0.0, 0.0);
    for seed in 1..=5u64 {
        let sc = Scenario::load(SimConfig { seed, ..base.clone() }).map_err(|e| e.to_string())?;
        let profit = |p: Policy| sc.run(p).map(|o| o.report.total_profit).map_err(|e| e.to_string());
        let (spd, seq, bpd, batch) =
            (profit(Policy::Spd)?, profit(Policy::SeqStatic)?, profit(Policy::Bpd)?, profit(Policy::BatchStatic)?);
        all_positive &= spd > seq && bpd > batch;
        seq_gain += (spd / seq - 1.0) / 5.0;
        batch_gain += (bpd / batch - 1.0) / 5.0;
        bpd_over_spd += (bpd / spd - 1.0) / 5.0;
        lines.push(format!("seed {seed}: spd-seq {:+.1} bpd-batch {:+.1}", spd - seq, bpd - batch));
    }
    let secs = clock.elapsed().as_secs_f64();
    check(
        all_positive && secs < 300.0,
        format!(
            "{}; mean gains SPD/seq-static {:+.1}% (published 39.1%), BPD/batch-static {:+.1}% (published 23.6%), BPD/SPD {:+.1}% (published 3.6%); {secs:.1}s",
            lines.join(", "),
            100.0 * seq_gain,
            100.0 * batch_gain,
            100.0 * bpd_over_spd
        ),
    )
}

// ---------------------------------------------------------------- 10

fn criterion_10() -> Outcome {
    let cfg = SimConfig::from_file(&fixtures().join("asymmetric/asymmetric.conf")).map_err(|e| e.to_string())?;
    let sc = Scenario::load(SimConfig { retrospective_multiplier: 0.0, ..cfg }).map_err(|e| e.to_string())?;
    let policies = [Policy::Spd, Policy::Bpd];
    let sweep = sweep_retrospective_multiplier(&sc, &default_sweep_grid(), &policies).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut notes = Vec::new();
    for p in policies {
        let curve: Vec<f64> = sweep.rows.iter().filter(|r| r.policy == p).map(|r| r.profit).collect();
        let baseline = sc.run(p).map_err(|e| e.to_string())?.report;
        let at_zero = sweep.rows.iter().find(|r| r.policy == p && r.multiplier == 0.0).expect("grid has 0").profit;
        let mut again = sc.clone();
        again.config.retrospective_multiplier = 0.0;
        let same = again.run(p).map_err(|e| e.to_string())?.report == baseline && at_zero.to_bits() == baseline.total_profit.to_bits();
        let varies = curve.iter().any(|v| *v != curve[0]);
        ok &= same && varies;
        notes.push(format!("{p}: argmax {} (published 0.2/0.3), non-constant {varies}, zero reproduces baseline {same}", sweep.argmax[&p]));
    }
    check(ok, notes.join("; "))
}

// ---------------------------------------------------------------- 11

fn simulate_stdout(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_modjoint")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    Ok(out.stdout)
}

fn criterion_11() -> Outcome {
    let mut compared = 0;
    for conf in ["tiny/tiny.conf", "asymmetric/asymmetric.conf", "benchmark/benchmark.conf"] {
        let conf = fixtures().join(conf);
        let conf = conf.to_str().expect("utf-8 path");
        for policy in ["spd", "bpd", "seq-static", "batch-static"] {
            let run = |threads: &str| simulate_stdout(&["--config", conf, "--threads", threads, "simulate", "--policy", policy, "--seed", "3"]);
            let first = run("1")?;
            for threads in ["1", "4", "8"] {
                if run(threads)? != first {
                    return Err(format!("{conf} {policy}: output differs with {threads} threads"));
                }
                compared += 1;
            }
        }
    }
    Ok(format!("{compared} repeated simulate invocations byte-identical (1, 4 and 8 threads)"))
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 11] = [
        ("closed-form SPD prices vs grid oracle", criterion_1),
        ("Lambert W accuracy", criterion_2),
        ("concavity certificate and Hessian", criterion_3),
        ("batched pricing optimizer", criterion_4),
        ("assignment exactness", criterion_5),
        ("shareability graphs", criterion_6),
        ("steady-state conservation", criterion_7),
        ("expected-cost convergence", criterion_8),
        ("dynamic vs static pricing on the benchmark", criterion_9),
        ("retrospective multiplier sweep", criterion_10),
        ("determinism", criterion_11),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {detail}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
