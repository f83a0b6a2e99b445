use std::collections::BTreeMap;
use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::harness::{Cand, Harness};
use super::MioStep;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct MioParams {
    /// Per-target population cap before the focus point.
    pub population_cap: usize,
    pub p_random_start: f64,
    /// Budget fraction at which random sampling stops and caps shrink.
    pub focus: f64,
    pub focused_cap: usize,
}

impl Default for MioParams {
    fn default() -> Self {
        MioParams {
            population_cap: 10,
            p_random_start: 0.5,
            focus: 0.5,
            focused_cap: 1,
        }
    }
}

impl MioParams {
    /// Random-sampling probability at budget fraction `t`.
    pub fn p_random(&self, t: f64) -> f64 {
        if t >= self.focus {
            0.0
        } else {
            self.p_random_start * (1.0 - t / self.focus)
        }
    }
}

/// Tests kept for one uncovered target, each with its distance to it.
#[derive(Debug, Clone)]
pub struct Population<T> {
    members: Vec<(T, f64)>,
    /// Times this population was sampled since its best distance last improved.
    pub counter: u64,
}

impl<T> Default for Population<T> {
    fn default() -> Self {
        Population {
            members: Vec::new(),
            counter: 0,
        }
    }
}

impl<T> Population<T> {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn best(&self) -> f64 {
        self.members.iter().map(|m| m.1).fold(1.0, f64::min)
    }

    pub fn distances(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.1).collect()
    }

    pub fn member(&self, i: usize) -> &T {
        &self.members[i].0
    }

    /// Add below the cap; at the cap, replace the worst member if `d` is
    /// strictly better. Returns whether the best distance improved.
    pub fn insert(&mut self, item: T, d: f64, cap: usize) -> bool {
        let before = self.best();
        if self.members.len() < cap {
            self.members.push((item, d));
        } else {
            let Some(worst) = (0..self.members.len()).max_by(|&a, &b| self.members[a].1.total_cmp(&self.members[b].1))
            else {
                return false;
            };
            if d >= self.members[worst].1 {
                return false;
            }
            self.members[worst] = (item, d);
        }
        let improved = d < before;
        if improved {
            self.counter = 0;
        }
        improved
    }

    /// Keep the `cap` best members.
    pub fn shrink(&mut self, cap: usize) {
        self.members.sort_by(|a, b| a.1.total_cmp(&b.1));
        self.members.truncate(cap);
    }
}

pub(super) fn run(h: &mut Harness<'_>, p: &MioParams) {
    let mut pops: BTreeMap<u32, Population<Cand>> = BTreeMap::new();
    let mut shrunk = false;
    let mut step = 0u64;
    while !h.exhausted() {
        let t = h.progress();
        let focused = t >= p.focus;
        let p_random = p.p_random(t);
        let cap = if focused { p.focused_cap } else { p.population_cap };
        if focused && !shrunk {
            for pop in pops.values_mut() {
                pop.shrink(cap);
            }
            shrunk = true;
        }
        let sampled = pops.is_empty() || h.rng.gen::<f64>() < p_random;
        let test = if sampled {
            h.sample()
        } else {
            let (&target, _) = pops
                .iter()
                .min_by_key(|(t, pop)| (pop.counter, **t))
                .expect("non-empty populations");
            let pop = pops.get_mut(&target).expect("present");
            pop.counter += 1;
            let i = h.rng.gen_range(0..pop.len());
            let parent = Rc::clone(pop.member(i));
            h.mutate(&parent.test)
        };
        let ev = Rc::new(h.execute(test));
        for &(t, d) in &ev.dists {
            if h.targets.is_live(t) {
                pops.entry(t).or_default().insert(Rc::clone(&ev), d, cap);
            } else {
                pops.remove(&t);
            }
        }
        h.trace.mio.push(MioStep {
            step,
            p_random,
            cap,
            max_population: pops.values().map(Population::len).max().unwrap_or(0),
            focused,
            sampled,
        });
        step += 1;
    }
}
