//! Matching selection with overbooking.
//!
//! Choose binary `y_i` to maximize `sum u_i y_i - sum_j w_j` subject to each
//! request appearing in at most one selected matching, where for vehicle `j`
//!
//! ```text
//! w_j = max(0, (c_p + eps_j) (sum_{i in I_j} gamma_ij y_i - 1))
//! ```
//!
//! For fixed `y` the penalties are closed form, so the search is over `y`
//! only, by depth-first branch and bound.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size limit of the exhaustive oracle.
pub const BRUTE_FORCE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub u: f64,
    pub requests: Vec<u64>,
    /// `(vehicle, gamma)` pairs.
    pub gamma: Vec<(usize, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentProblem {
    pub matchings: Vec<Candidate>,
    /// Mean `u` over the matchings each vehicle appears in.
    pub vehicle_eps: BTreeMap<usize, f64>,
    pub c_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssignmentSolution {
    /// Selected matching ids, ascending.
    pub selected: Vec<usize>,
    /// Penalty per vehicle in the selection; zero penalties are omitted.
    pub penalties: BTreeMap<usize, f64>,
    pub objective: f64,
}

impl AssignmentSolution {
    pub fn empty() -> Self {
        Self { selected: Vec::new(), penalties: BTreeMap::new(), objective: 0.0 }
    }
}

impl AssignmentProblem {
    /// Builds a problem, computing each vehicle's mean profit across the
    /// matchings it appears in.
    pub fn new(matchings: Vec<Candidate>, c_p: f64) -> Result<Self> {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for m in &matchings {
            for &(v, _) in &m.gamma {
                let e = sums.entry(v).or_insert((0.0, 0));
                e.0 += m.u;
                e.1 += 1;
            }
        }
        let vehicle_eps = sums.into_iter().map(|(v, (s, n))| (v, s / n as f64)).collect();
        let prob = Self { matchings, vehicle_eps, c_p };
        prob.validate()?;
        Ok(prob)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.c_p.is_finite() {
            return Err(Error::Param("c_p must be finite".into()));
        }
        let mut ids = BTreeSet::new();
        for m in &self.matchings {
            if !ids.insert(m.id) {
                return Err(Error::Param(format!("duplicate matching id {}", m.id)));
            }
            if !m.u.is_finite() {
                return Err(Error::Param(format!("matching {} has non-finite u", m.id)));
            }
            for &(v, g) in &m.gamma {
                if !(0.0..=1.0).contains(&g) {
                    return Err(Error::Param(format!("matching {}: gamma {g} outside [0, 1]", m.id)));
                }
                if !self.vehicle_eps.contains_key(&v) {
                    return Err(Error::Param(format!("matching {} references unknown vehicle {v}", m.id)));
                }
            }
        }
        Ok(())
    }

    fn weight(&self, vehicle: usize) -> f64 {
        self.c_p + self.vehicle_eps[&vehicle]
    }

    /// Penalties of a selection, given by matching positions.
    fn penalties_of(&self, chosen: &[usize]) -> BTreeMap<usize, f64> {
        let mut load: BTreeMap<usize, f64> = self.vehicle_eps.keys().map(|&v| (v, 0.0)).collect();
        for &i in chosen {
            for &(v, g) in &self.matchings[i].gamma {
                *load.get_mut(&v).expect("validated") += g;
            }
        }
        load.into_iter()
            .map(|(v, l)| (v, (self.weight(v) * (l - 1.0)).max(0.0)))
            .filter(|&(_, w)| w > 0.0)
            .collect()
    }

    fn solution_of(&self, chosen: &[usize]) -> AssignmentSolution {
        let penalties = self.penalties_of(chosen);
        let gain: f64 = chosen.iter().map(|&i| self.matchings[i].u).sum();
        let objective = gain - penalties.values().sum::<f64>();
        let mut selected: Vec<usize> = chosen.iter().map(|&i| self.matchings[i].id).collect();
        selected.sort_unstable();
        AssignmentSolution { selected, penalties, objective }
    }

    /// Objective and penalties of an arbitrary selection of matching ids.
    pub fn evaluate(&self, selected: &[usize]) -> AssignmentSolution {
        let pos: Vec<usize> = selected
            .iter()
            .filter_map(|id| self.matchings.iter().position(|m| m.id == *id))
            .collect();
        self.solution_of(&pos)
    }

    /// True iff no request is covered twice.
    pub fn is_packing(&self, selected: &[usize]) -> bool {
        let mut seen = BTreeSet::new();
        for id in selected {
            let Some(m) = self.matchings.iter().find(|m| m.id == *id) else { return false };
            for r in &m.requests {
                if !seen.insert(*r) {
                    return false;
                }
            }
        }
        true
    }

    pub fn write_json(&self, solution: &AssignmentSolution, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Dump<'a> {
            problem: &'a AssignmentProblem,
            solution: &'a AssignmentSolution,
        }
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &Dump { problem: self, solution })?;
        Ok(())
    }
}

struct Search<'a> {
    prob: &'a AssignmentProblem,
    order: Vec<usize>,
    /// Sum of positive `u` from position k of `order` onward.
    tail: Vec<f64>,
    vehicle_slot: BTreeMap<usize, usize>,
    weights: Vec<f64>,
    load: Vec<f64>,
    taken: BTreeSet<u64>,
    chosen: Vec<usize>,
    best: f64,
    best_set: Vec<usize>,
}

impl Search<'_> {
    /// Current penalty on vehicles whose penalty can only grow.
    fn monotone_penalty(&self) -> f64 {
        self.weights
            .iter()
            .zip(&self.load)
            .filter(|(w, _)| **w >= 0.0)
            .map(|(w, l)| (w * (l - 1.0)).max(0.0))
            .sum()
    }

    fn penalty(&self) -> f64 {
        self.weights.iter().zip(&self.load).map(|(w, l)| (w * (l - 1.0)).max(0.0)).sum()
    }

    fn run(&mut self, k: usize, gain: f64) {
        if k == self.order.len() {
            let obj = gain - self.penalty();
            if obj > self.best {
                self.best = obj;
                self.best_set = self.chosen.clone();
            }
            return;
        }
        if gain + self.tail[k] - self.monotone_penalty() <= self.best {
            return;
        }
        let i = self.order[k];
        let m = &self.prob.matchings[i];
        if m.requests.iter().all(|r| !self.taken.contains(r)) {
            for r in &m.requests {
                self.taken.insert(*r);
            }
            for &(v, g) in &m.gamma {
                self.load[self.vehicle_slot[&v]] += g;
            }
            self.chosen.push(i);
            self.run(k + 1, gain + m.u);
            self.chosen.pop();
            for &(v, g) in &m.gamma {
                self.load[self.vehicle_slot[&v]] -= g;
            }
            for r in &m.requests {
                self.taken.remove(r);
            }
        }
        self.run(k + 1, gain);
    }
}

/// Exact optimum by branch and bound, branching on matchings in order of
/// descending `u` (then id), selection first.
pub fn solve_assignment(prob: &AssignmentProblem) -> AssignmentSolution {
    if prob.matchings.is_empty() {
        return prob.solution_of(&[]);
    }
    let mut order: Vec<usize> = (0..prob.matchings.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&prob.matchings[a], &prob.matchings[b]);
        y.u.total_cmp(&x.u).then(x.id.cmp(&y.id))
    });
    let mut tail = vec![0.0; order.len() + 1];
    for k in (0..order.len()).rev() {
        tail[k] = tail[k + 1] + prob.matchings[order[k]].u.max(0.0);
    }
    let vehicle_slot: BTreeMap<usize, usize> = prob.vehicle_eps.keys().enumerate().map(|(i, &v)| (v, i)).collect();
    let weights = prob.vehicle_eps.keys().map(|&v| prob.weight(v)).collect();
    let mut s = Search {
        prob,
        order,
        tail,
        load: vec![0.0; vehicle_slot.len()],
        vehicle_slot,
        weights,
        taken: BTreeSet::new(),
        chosen: Vec::new(),
        best: f64::NEG_INFINITY,
        best_set: Vec::new(),
    };
    s.run(0, 0.0);
    prob.solution_of(&s.best_set)
}

/// Exhaustive enumeration over all packings; test oracle.
pub fn brute_force_assignment(prob: &AssignmentProblem) -> Result<AssignmentSolution> {
    let n = prob.matchings.len();
    if n > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge { size: n, limit: BRUTE_FORCE_LIMIT });
    }
    let mut best: Option<AssignmentSolution> = None;
    for mask in 0u32..(1u32 << n) {
        let chosen: Vec<usize> = (0..n).filter(|i| mask & (1 << i) != 0).collect();
        let mut seen = BTreeSet::new();
        if !chosen.iter().all(|&i| prob.matchings[i].requests.iter().all(|r| seen.insert(*r))) {
            continue;
        }
        let sol = prob.solution_of(&chosen);
        if best.as_ref().is_none_or(|b| sol.objective > b.objective) {
            best = Some(sol);
        }
    }
    Ok(best.expect("the empty selection is a packing"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cand(id: usize, u: f64, requests: &[u64], gamma: &[(usize, f64)]) -> Candidate {
        Candidate { id, u, requests: requests.to_vec(), gamma: gamma.to_vec() }
    }

    #[test]
    fn empty_problem() {
        let p = AssignmentProblem::new(vec![], 5.0).unwrap();
        let s = solve_assignment(&p);
        assert_eq!(s.objective, 0.0);
        assert!(s.selected.is_empty());
        assert_eq!(brute_force_assignment(&p).unwrap().objective, 0.0);
    }

    #[test]
    fn single_matching() {
        let p = AssignmentProblem::new(vec![cand(0, 5.0, &[1], &[(0, 0.6)])], 5.0).unwrap();
        let s = solve_assignment(&p);
        assert_eq!(s.selected, vec![0]);
        assert_eq!(s.objective, 5.0);
        assert!(s.penalties.is_empty());

        let p = AssignmentProblem::new(vec![cand(0, -1.0, &[1], &[(0, 0.6)])], 5.0).unwrap();
        let s = solve_assignment(&p);
        assert!(s.selected.is_empty());
        assert_eq!(s.objective, 0.0);
    }

    #[test]
    fn overbooking_tradeoff() {
        // c_p + eps = 7 + 5 = 12
        let ms = vec![cand(0, 5.0, &[1], &[(0, 1.0)]), cand(1, 5.0, &[2], &[(0, 1.0)])];
        let p = AssignmentProblem::new(ms, 7.0).unwrap();
        let s = solve_assignment(&p);
        assert_eq!(s.selected.len(), 1);
        assert_eq!(s.objective, 5.0);
        assert_eq!(brute_force_assignment(&p).unwrap().objective, 5.0);

        // cheap overbooking: both selected
        let ms = vec![cand(0, 5.0, &[1], &[(0, 0.7)]), cand(1, 5.0, &[2], &[(0, 0.7)])];
        let p = AssignmentProblem::new(ms, 1.0).unwrap();
        let b = brute_force_assignment(&p).unwrap();
        assert_eq!(b.selected, vec![0, 1]);
        assert!((b.objective - (10.0 - 6.0 * 0.4)).abs() < 1e-12);
        assert!((solve_assignment(&p).objective - b.objective).abs() < 1e-12);
    }

    #[test]
    fn requests_covered_once() {
        let ms = vec![
            cand(0, 4.0, &[1], &[(0, 0.5)]),
            cand(1, 3.0, &[2], &[(1, 0.5)]),
            cand(2, 8.0, &[1, 2], &[(0, 0.5), (1, 0.5)]),
        ];
        let p = AssignmentProblem::new(ms, 5.0).unwrap();
        let s = solve_assignment(&p);
        assert_eq!(s.selected, vec![2]);
        assert!(p.is_packing(&s.selected));
        assert!(!p.is_packing(&[0, 2]));
    }

    #[test]
    fn eps_is_mean_profit() {
        let ms = vec![cand(0, 4.0, &[1], &[(3, 0.5)]), cand(1, 2.0, &[2], &[(3, 0.5), (4, 1.0)])];
        let p = AssignmentProblem::new(ms, 5.0).unwrap();
        assert_eq!(p.vehicle_eps[&3], 3.0);
        assert_eq!(p.vehicle_eps[&4], 2.0);
    }

    #[test]
    fn too_large_for_oracle() {
        let ms = (0..21).map(|i| cand(i, 1.0, &[i as u64], &[(0, 0.1)])).collect();
        let p = AssignmentProblem::new(ms, 1.0).unwrap();
        assert!(matches!(brute_force_assignment(&p), Err(Error::TooLarge { size: 21, .. })));
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(AssignmentProblem::new(vec![cand(0, 1.0, &[1], &[(0, 1.5)])], 1.0).is_err());
    }
}
