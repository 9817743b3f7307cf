//! Vehicle movement along shortest paths, node by node.

use std::collections::VecDeque;

use crate::choice::Service;
use crate::matching::{Route, Stop, StopKind, VehicleState};
use crate::network::RoadNetwork;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Waypoint {
    node: usize,
    time: f64,
    /// Meters of the edge ending here.
    length: f64,
    stop: Option<Stop>,
}

/// Something that happened while a vehicle advanced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopEvent {
    pub vehicle: usize,
    pub stop: Stop,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: usize,
    pub service: Service,
    /// Last node reached and when.
    node: usize,
    time: f64,
    onboard: usize,
    plan: VecDeque<Waypoint>,
    /// Meters driven so far.
    pub odometer: f64,
    /// When the vehicle last ran out of work.
    pub idle_since: f64,
    pub rebalancing: bool,
}

impl Vehicle {
    pub fn new(id: usize, service: Service, node: usize) -> Self {
        Self {
            id,
            service,
            node,
            time: 0.0,
            onboard: 0,
            plan: VecDeque::new(),
            odometer: 0.0,
            idle_since: 0.0,
            rebalancing: false,
        }
    }

    pub fn onboard(&self) -> usize {
        self.onboard
    }

    /// Committed stops in order.
    pub fn stops(&self) -> Vec<Stop> {
        self.plan.iter().filter_map(|w| w.stop).collect()
    }

    pub fn has_work(&self) -> bool {
        self.plan.iter().any(|w| w.stop.is_some())
    }

    pub fn is_moving(&self) -> bool {
        !self.plan.is_empty()
    }

    /// Node where the vehicle is, or the next node it will reach.
    pub fn position(&self) -> usize {
        self.plan.front().map_or(self.node, |w| w.node)
    }

    /// Moves along the plan up to `now`, returning pickups and dropoffs passed.
    pub fn advance(&mut self, now: f64) -> Vec<StopEvent> {
        let mut events = Vec::new();
        while let Some(w) = self.plan.front() {
            if w.time > now {
                break;
            }
            let w = self.plan.pop_front().expect("front exists");
            self.node = w.node;
            self.time = w.time;
            self.odometer += w.length;
            if let Some(stop) = w.stop {
                match stop.kind {
                    StopKind::Pickup => self.onboard += 1,
                    StopKind::Dropoff => self.onboard -= 1,
                }
                events.push(StopEvent { vehicle: self.id, stop, time: w.time });
            }
            if self.plan.is_empty() {
                self.idle_since = w.time;
                self.rebalancing = false;
            }
        }
        events
    }

    /// Completes every remaining waypoint.
    pub fn drain(&mut self) -> Vec<StopEvent> {
        self.advance(f64::INFINITY)
    }

    /// The matcher's view at `now`: the next node the vehicle can replan
    /// from, with the stops still ahead.
    pub fn view(&self, now: f64) -> VehicleState {
        match self.plan.front() {
            Some(w) => {
                let onboard = self.onboard;
                VehicleState {
                    id: self.id,
                    service: self.service,
                    node: w.node,
                    time: w.time.max(now),
                    onboard,
                    stops: self.stops(),
                }
            }
            None => VehicleState::idle(self.id, self.service, self.node, now.max(self.time)),
        }
    }

    /// Replaces the plan with `route`, which must start from [`Vehicle::view`].
    pub fn commit(&mut self, net: &RoadNetwork, route: &Route) {
        let mut plan = VecDeque::new();
        // an edge in progress is finished first
        if let Some(front) = self.plan.front() {
            plan.push_back(Waypoint { stop: None, ..*front });
        }
        let (mut node, mut t) = (route.start_node, route.start_time);
        for s in &route.stops {
            append_path(net, &mut plan, node, &mut t, s.node);
            match plan.back_mut() {
                Some(w) if w.node == s.node && w.stop.is_none() && node != s.node => w.stop = Some(*s),
                _ => plan.push_back(Waypoint { node: s.node, time: t, length: 0.0, stop: Some(*s) }),
            }
            node = s.node;
        }
        self.plan = plan;
        self.rebalancing = false;
    }

    /// Sends an idle vehicle toward `target` without stops.
    pub fn reposition(&mut self, net: &RoadNetwork, target: usize, now: f64) {
        debug_assert!(self.plan.is_empty());
        let mut t = now.max(self.time);
        let mut plan = VecDeque::new();
        append_path(net, &mut plan, self.node, &mut t, target);
        if !plan.is_empty() {
            self.plan = plan;
            self.rebalancing = true;
        }
    }
}

fn append_path(net: &RoadNetwork, plan: &mut VecDeque<Waypoint>, from: usize, t: &mut f64, to: usize) {
    if from == to {
        return;
    }
    let nodes = net.path(from, to).expect("route legs are reachable");
    for pair in nodes.windows(2) {
        let edge = net
            .edges_from(pair[0])
            .iter()
            .filter(|e| e.to == pair[1])
            .min_by(|a, b| a.travel_time.total_cmp(&b.travel_time).then(a.length.total_cmp(&b.length)))
            .expect("path edges exist");
        *t += edge.travel_time;
        plan.push_back(Waypoint { node: pair[1], time: *t, length: edge.length, stop: None });
    }
}
