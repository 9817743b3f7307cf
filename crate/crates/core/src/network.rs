//! Road network, shortest travel times and spatial clustering.
//!
//! Nodes carry an external id (as found in input files) and a dense internal
//! index. Every query below works on internal indices; use
//! [`RoadNetwork::index_of`] to translate.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::error::{Error, Result};

pub const METERS_PER_MILE: f64 = 1609.344;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub to: usize,
    /// Seconds, strictly positive.
    pub travel_time: f64,
    /// Meters, nonnegative.
    pub length: f64,
}

/// Travel time and distance of a shortest path.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Leg {
    pub time: f64,
    pub length: f64,
}

#[derive(Debug)]
struct PathTree {
    time: Vec<f64>,
    length: Vec<f64>,
    pred: Vec<usize>,
}

/// Directed road graph with static travel times.
///
/// Single-source shortest-path trees are computed on first use and memoized
/// per source node, so the network can be shared across threads.
#[derive(Debug)]
pub struct RoadNetwork {
    ids: Vec<u64>,
    index: HashMap<u64, usize>,
    coords: Vec<[f64; 2]>,
    out: Vec<Vec<Edge>>,
    reverse: Vec<Vec<usize>>,
    trees: Vec<OnceLock<Arc<PathTree>>>,
}

#[derive(Debug, Deserialize)]
struct NodeRow {
    node_id: u64,
    x: f64,
    y: f64,
}

#[derive(Debug, Deserialize)]
struct EdgeRow {
    src: u64,
    dst: u64,
    travel_time_s: f64,
    length_m: f64,
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem {
    time: f64,
    length: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed for a min-heap
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.length.total_cmp(&self.length))
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl RoadNetwork {
    /// Builds a network from `(id, x, y)` nodes and `(src, dst, travel_time_s, length_m)` edges.
    pub fn new(nodes: &[(u64, f64, f64)], edges: &[(u64, u64, f64, f64)]) -> Result<Self> {
        let mut ids = Vec::with_capacity(nodes.len());
        let mut index = HashMap::with_capacity(nodes.len());
        let mut coords = Vec::with_capacity(nodes.len());
        for &(id, x, y) in nodes {
            if !x.is_finite() || !y.is_finite() {
                return Err(Error::Param(format!("node {id} has non-finite coordinates")));
            }
            if index.insert(id, ids.len()).is_some() {
                return Err(Error::Param(format!("duplicate node id {id}")));
            }
            ids.push(id);
            coords.push([x, y]);
        }
        let mut out = vec![Vec::new(); ids.len()];
        let mut reverse = vec![Vec::new(); ids.len()];
        for &(src, dst, time, length) in edges {
            let from = *index.get(&src).ok_or(Error::UnknownNode(src))?;
            let to = *index.get(&dst).ok_or(Error::UnknownNode(dst))?;
            if !(time > 0.0 && time.is_finite()) {
                return Err(Error::Param(format!("edge {src}->{dst}: travel time must be positive")));
            }
            if !(length >= 0.0 && length.is_finite()) {
                return Err(Error::Param(format!("edge {src}->{dst}: length must be nonnegative")));
            }
            out[from].push(Edge { to, travel_time: time, length });
            reverse[to].push(from);
        }
        let trees = (0..ids.len()).map(|_| OnceLock::new()).collect();
        Ok(Self { ids, index, coords, out, reverse, trees })
    }

    /// Reads `node_id,x,y` and `src,dst,travel_time_s,length_m` CSV files.
    pub fn from_csv(nodes_path: &Path, edges_path: &Path) -> Result<Self> {
        let mut nodes = Vec::new();
        let mut rdr = csv::Reader::from_path(nodes_path)?;
        for (i, row) in rdr.deserialize::<NodeRow>().enumerate() {
            let row = row.map_err(|e| Error::load(nodes_path, i as u64 + 2, e.to_string()))?;
            nodes.push((row.node_id, row.x, row.y));
        }
        let mut edges = Vec::new();
        let mut rdr = csv::Reader::from_path(edges_path)?;
        for (i, row) in rdr.deserialize::<EdgeRow>().enumerate() {
            let line = i as u64 + 2;
            let row = row.map_err(|e| Error::load(edges_path, line, e.to_string()))?;
            edges.push((row.src, row.dst, row.travel_time_s, row.length_m));
        }
        Self::new(&nodes, &edges).map_err(|e| match e {
            Error::Load { .. } => e,
            other => Error::load(edges_path, 0, other.to_string()),
        })
    }

    pub fn write_csv(&self, nodes_path: &Path, edges_path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(nodes_path)?;
        w.write_record(["node_id", "x", "y"])?;
        for (i, id) in self.ids.iter().enumerate() {
            let [x, y] = self.coords[i];
            w.write_record([id.to_string(), x.to_string(), y.to_string()])?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(edges_path)?;
        w.write_record(["src", "dst", "travel_time_s", "length_m"])?;
        for (from, edges) in self.out.iter().enumerate() {
            for e in edges {
                w.write_record([
                    self.ids[from].to_string(),
                    self.ids[e.to].to_string(),
                    e.travel_time.to_string(),
                    e.length.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Bidirectional `rows x cols` grid; node ids are `row * cols + col`,
    /// coordinates are in meters.
    pub fn grid(rows: usize, cols: usize, spacing_m: f64, speed_mps: f64) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Param("grid needs at least one row and column".into()));
        }
        let mut nodes = Vec::with_capacity(rows * cols);
        let mut edges = Vec::new();
        let time = spacing_m / speed_mps;
        for r in 0..rows {
            for c in 0..cols {
                let id = (r * cols + c) as u64;
                nodes.push((id, c as f64 * spacing_m, r as f64 * spacing_m));
                if c + 1 < cols {
                    edges.push((id, id + 1, time, spacing_m));
                    edges.push((id + 1, id, time, spacing_m));
                }
                if r + 1 < rows {
                    let below = id + cols as u64;
                    edges.push((id, below, time, spacing_m));
                    edges.push((below, id, time, spacing_m));
                }
            }
        }
        Self::new(&nodes, &edges)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn edge_count(&self) -> usize {
        self.out.iter().map(Vec::len).sum()
    }

    pub fn node_id(&self, idx: usize) -> u64 {
        self.ids[idx]
    }

    pub fn index_of(&self, id: u64) -> Result<usize> {
        self.index.get(&id).copied().ok_or(Error::UnknownNode(id))
    }

    pub fn coords(&self, idx: usize) -> [f64; 2] {
        self.coords[idx]
    }

    pub fn edges_from(&self, idx: usize) -> &[Edge] {
        &self.out[idx]
    }

    fn tree(&self, source: usize) -> &PathTree {
        self.trees[source].get_or_init(|| Arc::new(self.dijkstra(source)))
    }

    fn dijkstra(&self, source: usize) -> PathTree {
        let n = self.len();
        let mut time = vec![f64::INFINITY; n];
        let mut length = vec![f64::INFINITY; n];
        let mut pred = vec![usize::MAX; n];
        let mut heap = BinaryHeap::new();
        time[source] = 0.0;
        length[source] = 0.0;
        heap.push(HeapItem { time: 0.0, length: 0.0, node: source });
        while let Some(HeapItem { time: t, length: l, node }) = heap.pop() {
            if t > time[node] || (t == time[node] && l > length[node]) {
                continue;
            }
            for e in &self.out[node] {
                let nt = t + e.travel_time;
                let nl = l + e.length;
                if nt < time[e.to] || (nt == time[e.to] && nl < length[e.to]) {
                    time[e.to] = nt;
                    length[e.to] = nl;
                    pred[e.to] = node;
                    heap.push(HeapItem { time: nt, length: nl, node: e.to });
                }
            }
        }
        PathTree { time, length, pred }
    }

    /// Minimum travel time and the length of that path (ties broken by length).
    pub fn leg(&self, from: usize, to: usize) -> Result<Leg> {
        let tree = self.tree(from);
        let time = tree.time[to];
        if time.is_finite() {
            Ok(Leg { time, length: tree.length[to] })
        } else {
            Err(Error::NoPath { from: self.ids[from], to: self.ids[to] })
        }
    }

    pub fn travel_time(&self, from: usize, to: usize) -> Result<f64> {
        self.leg(from, to).map(|l| l.time)
    }

    pub fn path_length(&self, from: usize, to: usize) -> Result<f64> {
        self.leg(from, to).map(|l| l.length)
    }

    /// Node sequence of the shortest path, both endpoints included.
    pub fn path(&self, from: usize, to: usize) -> Result<Vec<usize>> {
        self.leg(from, to)?;
        let tree = self.tree(from);
        let mut nodes = vec![to];
        let mut cur = to;
        while cur != from {
            cur = tree.pred[cur];
            nodes.push(cur);
        }
        nodes.reverse();
        Ok(nodes)
    }

    /// Fails unless every node of `subset` reaches and is reached by every other.
    pub fn check_strongly_connected(&self, subset: &[usize]) -> Result<()> {
        let Some(&root) = subset.first() else { return Ok(()) };
        let forward = self.reachable(root, |n| self.out[n].iter().map(|e| e.to).collect());
        let backward = self.reachable(root, |n| self.reverse[n].clone());
        for &n in subset {
            if !forward[n] {
                return Err(Error::NoPath { from: self.ids[root], to: self.ids[n] });
            }
            if !backward[n] {
                return Err(Error::NoPath { from: self.ids[n], to: self.ids[root] });
            }
        }
        Ok(())
    }

    fn reachable(&self, root: usize, next: impl Fn(usize) -> Vec<usize>) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(n) = stack.pop() {
            for m in next(n) {
                if !seen[m] {
                    seen[m] = true;
                    stack.push(m);
                }
            }
        }
        seen
    }
}

/// Shortest travel time in seconds between two nodes given by external id.
pub fn shortest_travel_time(net: &RoadNetwork, origin: u64, dest: u64) -> Result<f64> {
    net.travel_time(net.index_of(origin)?, net.index_of(dest)?)
}

/// Length in meters of the minimum-travel-time path between two external ids.
pub fn shortest_path_length(net: &RoadNetwork, origin: u64, dest: u64) -> Result<f64> {
    net.path_length(net.index_of(origin)?, net.index_of(dest)?)
}

/// Partition of the network nodes into spatial clusters.
#[derive(Debug, Clone)]
pub struct ClusterMap {
    k: usize,
    assignment: Vec<usize>,
    centroids: Vec<[f64; 2]>,
    /// Node closest to each centroid, used for cluster-level travel times.
    anchors: Vec<usize>,
    /// Row-major `k x k` anchor-to-anchor travel times.
    centroid_times: Vec<f64>,
}

impl ClusterMap {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn cluster_of(&self, node: usize) -> usize {
        self.assignment[node]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn centroid(&self, cluster: usize) -> [f64; 2] {
        self.centroids[cluster]
    }

    pub fn anchor(&self, cluster: usize) -> usize {
        self.anchors[cluster]
    }

    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&n| self.assignment[n] == cluster).collect()
    }

    /// Cached travel time between cluster anchors; infinite if unreachable.
    pub fn centroid_travel_time(&self, from: usize, to: usize) -> f64 {
        self.centroid_times[from * self.k + to]
    }

    /// Single-cluster map, useful for tests and tiny networks.
    pub fn single(net: &RoadNetwork) -> Result<Self> {
        kmeans_cluster(net, 1, 0)
    }
}

/// Lloyd's k-means on node coordinates with k-means++ seeding.
pub fn kmeans_cluster(net: &RoadNetwork, k: usize, seed: u64) -> Result<ClusterMap> {
    let points: Vec<[f64; 2]> = (0..net.len()).map(|i| net.coords(i)).collect();
    let (assignment, centroids) = kmeans(&points, k, seed)?;
    let anchors: Vec<usize> = centroids
        .iter()
        .enumerate()
        .map(|(c, centroid)| {
            (0..points.len())
                .filter(|&n| assignment[n] == c)
                .min_by(|&a, &b| sq_dist(&points[a], centroid).total_cmp(&sq_dist(&points[b], centroid)))
                .expect("clusters are nonempty")
        })
        .collect();
    let mut centroid_times = vec![f64::INFINITY; k * k];
    for a in 0..k {
        for b in 0..k {
            if let Ok(t) = net.travel_time(anchors[a], anchors[b]) {
                centroid_times[a * k + b] = t;
            }
        }
    }
    Ok(ClusterMap { k, assignment, centroids, anchors, centroid_times })
}

fn sq_dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

const KMEANS_MAX_ITER: usize = 100;

/// Returns `(assignment, centroids)`; every cluster is nonempty.
pub fn kmeans(points: &[[f64; 2]], k: usize, seed: u64) -> Result<(Vec<usize>, Vec<[f64; 2]>)> {
    if k == 0 || k > points.len() {
        return Err(Error::Param(format!("k = {k} must be in 1..={}", points.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centroids = Vec::with_capacity(k);
    let mut chosen = vec![false; points.len()];
    let first = rng.gen_range(0..points.len());
    chosen[first] = true;
    centroids.push(points[first]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                if chosen[i] || w <= 0.0 {
                    continue;
                }
                pick = Some(i);
                if target < w {
                    break;
                }
                target -= w;
            }
            pick
        } else {
            None
        };
        // coincident points: fall back to the first unchosen point
        let pick = pick.unwrap_or_else(|| chosen.iter().position(|c| !c).expect("k <= n"));
        chosen[pick] = true;
        centroids.push(points[pick]);
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &points[pick]));
        }
    }

    let nearest = |p: &[f64; 2], cs: &[[f64; 2]]| -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (c, centroid) in cs.iter().enumerate() {
            let d = sq_dist(p, centroid);
            if d < best_d {
                best_d = d;
                best = c;
            }
        }
        best
    };

    let mut assignment: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..KMEANS_MAX_ITER {
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assignment) {
            sums[c][0] += p[0];
            sums[c][1] += p[1];
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            }
        }
        repair_empty(points, &mut assignment, &mut centroids, &mut counts);
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == assignment {
            break;
        }
        assignment = next;
    }
    let mut counts = vec![0usize; k];
    for &c in &assignment {
        counts[c] += 1;
    }
    repair_empty(points, &mut assignment, &mut centroids, &mut counts);
    Ok((assignment, centroids))
}

/// Moves the point farthest from its centroid into each empty cluster.
fn repair_empty(
    points: &[[f64; 2]],
    assignment: &mut [usize],
    centroids: &mut [[f64; 2]],
    counts: &mut [usize],
) {
    for c in 0..centroids.len() {
        if counts[c] > 0 {
            continue;
        }
        let donor = (0..points.len())
            .filter(|&i| counts[assignment[i]] > 1)
            .max_by(|&a, &b| {
                sq_dist(&points[a], &centroids[assignment[a]])
                    .total_cmp(&sq_dist(&points[b], &centroids[assignment[b]]))
                    .then(b.cmp(&a))
            })
            .expect("k <= n guarantees a donor");
        counts[assignment[donor]] -= 1;
        assignment[donor] = c;
        counts[c] = 1;
        centroids[c] = points[donor];
    }
}
