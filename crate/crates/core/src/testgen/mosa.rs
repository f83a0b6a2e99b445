use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::harness::{Cand, Dists, Harness};
use super::MosaGeneration;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct MosaParams {
    pub population: usize,
}

impl Default for MosaParams {
    fn default() -> Self {
        MosaParams { population: 50 }
    }
}

/// Whether `a` dominates `b`: no worse on every target and strictly better
/// on one. Vectors are sparse and sorted; absent entries are 1.
pub fn dominates(a: &[(u32, f64)], b: &[(u32, f64)]) -> bool {
    let (mut i, mut j) = (0, 0);
    let mut strict = false;
    while i < a.len() || j < b.len() {
        match (a.get(i), b.get(j)) {
            (Some(&(ta, da)), Some(&(tb, db))) if ta == tb => {
                if da > db {
                    return false;
                }
                strict |= da < db;
                i += 1;
                j += 1;
            }
            (Some(&(ta, _)), Some(&(tb, _))) if ta < tb => {
                strict = true; // a < 1 = b
                i += 1;
            }
            (Some(_), None) => {
                strict = true;
                i += 1;
            }
            _ => return false, // b < 1 = a on b's target
        }
    }
    strict
}

fn total(v: &[(u32, f64)]) -> f64 {
    // sum over present entries of (d - 1): lower is a smaller overall distance
    v.iter().map(|&(_, d)| d - 1.0).sum()
}

/// Preference criterion: for every target, the test closest to it (ties
/// broken by the smaller total distance, then by position).
pub fn preference_front(vectors: &[Dists]) -> Vec<usize> {
    let totals: Vec<f64> = vectors.iter().map(|v| total(v)).collect();
    let mut best: BTreeMap<u32, (usize, f64)> = BTreeMap::new();
    for (i, v) in vectors.iter().enumerate() {
        for &(t, d) in v {
            let better = match best.get(&t) {
                None => true,
                Some(&(j, dj)) => match d.total_cmp(&dj) {
                    Ordering::Less => true,
                    Ordering::Equal => totals[i] < totals[j],
                    Ordering::Greater => false,
                },
            };
            if better {
                best.insert(t, (i, d));
            }
        }
    }
    let mut front: Vec<usize> = best.values().map(|&(i, _)| i).collect();
    front.sort_unstable();
    front.dedup();
    front
}

/// NSGA-II crowding distance of each member of a front.
pub fn crowding_distances(front: &[&Dists]) -> Vec<f64> {
    let n = front.len();
    let mut crowd = vec![0.0; n];
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut per_target: BTreeMap<u32, Vec<(f64, usize)>> = BTreeMap::new();
    for (i, v) in front.iter().enumerate() {
        for &(t, d) in v.iter() {
            per_target.entry(t).or_default().push((d, i));
        }
    }
    for (_, mut entries) in per_target {
        entries.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut present = vec![false; n];
        for &(_, i) in &entries {
            present[i] = true;
        }
        // full order: entries ascending, then the absent members (value 1)
        let order: Vec<(f64, usize)> = entries
            .iter()
            .copied()
            .chain((0..n).filter(|&i| !present[i]).map(|i| (1.0, i)))
            .collect();
        let (lo, hi) = (order[0].0, order[n - 1].0);
        if hi <= lo {
            continue;
        }
        crowd[order[0].1] = f64::INFINITY;
        crowd[order[n - 1].1] = f64::INFINITY;
        let last_interior = entries.len().min(n - 2);
        for k in 1..=last_interior {
            crowd[order[k].1] += (order[k + 1].0 - order[k - 1].0) / (hi - lo);
        }
    }
    crowd
}

struct Ranking {
    selected: Vec<usize>,
    /// (rank, crowding) per selected member.
    fitness: Vec<(usize, f64)>,
    front0: usize,
    front0_dominated: usize,
}

fn take_by_crowding(members: &[usize], vectors: &[Dists], k: usize) -> Vec<(usize, f64)> {
    let refs: Vec<&Dists> = members.iter().map(|&i| &vectors[i]).collect();
    let crowd = crowding_distances(&refs);
    let mut order: Vec<(usize, f64)> = members.iter().copied().zip(crowd).collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.truncate(k);
    order
}

fn rank(vectors: &[Dists], n: usize) -> Ranking {
    let f0 = preference_front(vectors);
    let front0_dominated = f0
        .iter()
        .filter(|&&a| (0..vectors.len()).any(|b| b != a && dominates(&vectors[b], &vectors[a])))
        .count();
    let mut selected = Vec::new();
    let mut fitness = Vec::new();
    let mut push = |chosen: Vec<(usize, f64)>, r: usize, sel: &mut Vec<usize>| {
        for (i, c) in chosen {
            sel.push(i);
            fitness.push((r, c));
        }
    };
    push(take_by_crowding(&f0, vectors, n), 0, &mut selected);

    let mut rest: Vec<usize> = (0..vectors.len()).filter(|i| f0.binary_search(i).is_err()).collect();
    let mut r = 1;
    while selected.len() < n && !rest.is_empty() {
        let front: Vec<usize> = rest
            .iter()
            .copied()
            .filter(|&a| !rest.iter().any(|&b| b != a && dominates(&vectors[b], &vectors[a])))
            .collect();
        rest.retain(|i| front.binary_search(i).is_err());
        let room = n - selected.len();
        push(take_by_crowding(&front, vectors, room), r, &mut selected);
        r += 1;
    }
    Ranking {
        selected,
        fitness,
        front0: f0.len(),
        front0_dominated,
    }
}

fn live_vector(h: &Harness<'_>, c: &Cand) -> Dists {
    c.dists.iter().copied().filter(|&(t, _)| h.targets.is_live(t)).collect()
}

fn tournament(h: &mut Harness<'_>, fitness: &[(usize, f64)]) -> usize {
    let a = h.rng.gen_range(0..fitness.len());
    let b = h.rng.gen_range(0..fitness.len());
    let (fa, fb) = (fitness[a], fitness[b]);
    if fb.0 < fa.0 || (fb.0 == fa.0 && fb.1 > fa.1) {
        b
    } else {
        a
    }
}

pub(super) fn run(h: &mut Harness<'_>, p: &MosaParams) {
    let n = p.population.max(2);
    let mut pop: Vec<Cand> = Vec::with_capacity(n);
    while pop.len() < n && !h.exhausted() {
        let t = h.sample();
        pop.push(Rc::new(h.execute(t)));
    }
    if pop.is_empty() {
        return;
    }
    let vectors: Vec<Dists> = pop.iter().map(|c| live_vector(h, c)).collect();
    let initial = rank(&vectors, n);
    pop = initial.selected.iter().map(|&i| Rc::clone(&pop[i])).collect();
    let mut fitness = initial.fitness;
    let mut generation = 0u64;
    while !h.exhausted() {
        let mut union = pop.clone();
        for _ in 0..n {
            if h.exhausted() {
                break;
            }
            let child = if h.targets.live_count() == 0 {
                h.sample()
            } else {
                let parent = Rc::clone(&pop[tournament(h, &fitness)]);
                h.mutate(&parent.test)
            };
            union.push(Rc::new(h.execute(child)));
        }
        let vectors: Vec<Dists> = union.iter().map(|c| live_vector(h, c)).collect();
        let ranking = rank(&vectors, n);
        h.trace.mosa.push(MosaGeneration {
            generation,
            uncovered: h.targets.live_count(),
            front0: ranking.front0,
            front0_dominated: ranking.front0_dominated,
        });
        pop = ranking.selected.iter().map(|&i| Rc::clone(&union[i])).collect();
        fitness = ranking.fitness;
        generation += 1;
    }
}
