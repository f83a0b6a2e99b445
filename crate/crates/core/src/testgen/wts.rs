use std::rc::Rc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::harness::{Cand, Dists, Harness};
use super::WtsGeneration;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct WtsParams {
    pub population: usize,
    pub max_suite: usize,
    pub elites: usize,
    pub crossover: f64,
    pub add_test: f64,
    pub remove_test: f64,
}

impl Default for WtsParams {
    fn default() -> Self {
        WtsParams {
            population: 30,
            max_suite: 20,
            elites: 2,
            crossover: 0.75,
            add_test: 1.0 / 3.0,
            remove_test: 1.0 / 3.0,
        }
    }
}

/// Reusable buffer for suite fitness over targets `0..n`.
struct Scratch {
    best: Vec<f64>,
    touched: Vec<u32>,
}

impl Scratch {
    fn new(n: u32) -> Self {
        Scratch {
            best: vec![1.0; n as usize],
            touched: Vec::new(),
        }
    }

    fn fitness<'a>(&mut self, tests: impl IntoIterator<Item = &'a Dists>) -> f64 {
        let n = self.best.len();
        for d in tests {
            for &(t, v) in d {
                let Some(slot) = self.best.get_mut(t as usize) else { continue };
                if *slot == 1.0 && v < 1.0 {
                    self.touched.push(t);
                }
                if v < *slot {
                    *slot = v;
                }
            }
        }
        let mut gain = 0.0;
        for &t in &self.touched {
            gain += 1.0 - self.best[t as usize];
            self.best[t as usize] = 1.0;
        }
        self.touched.clear();
        n as f64 - gain
    }
}

/// Sum over targets `0..n_targets` of the smallest distance any test of the
/// suite achieves (absent entries are 1).
pub fn suite_fitness(tests: &[Dists], n_targets: u32) -> f64 {
    Scratch::new(n_targets).fitness(tests)
}

#[derive(Clone)]
struct Suite {
    tests: Vec<Cand>,
    fitness: f64,
}

fn evaluate(scratch: &mut Scratch, tests: Vec<Cand>) -> Suite {
    let fitness = scratch.fitness(tests.iter().map(|c| &c.dists));
    Suite { tests, fitness }
}

fn tournament<'s>(h: &mut Harness<'_>, suites: &'s [Suite]) -> &'s Suite {
    let a = &suites[h.rng.gen_range(0..suites.len())];
    let b = &suites[h.rng.gen_range(0..suites.len())];
    if b.fitness < a.fitness {
        b
    } else {
        a
    }
}

fn crossover(h: &mut Harness<'_>, a: &Suite, b: &Suite, max: usize) -> (Vec<Cand>, Vec<Cand>) {
    let alpha: f64 = h.rng.gen();
    let i = (alpha * a.tests.len() as f64).round() as usize;
    let j = (alpha * b.tests.len() as f64).round() as usize;
    let join = |x: &[Cand], y: &[Cand], fallback: &Cand| {
        let mut v: Vec<Cand> = x.iter().chain(y).cloned().take(max).collect();
        if v.is_empty() {
            v.push(Rc::clone(fallback));
        }
        v
    };
    (
        join(&a.tests[..i], &b.tests[j..], &a.tests[0]),
        join(&b.tests[..j], &a.tests[i..], &b.tests[0]),
    )
}

fn mutate_suite(h: &mut Harness<'_>, tests: &mut Vec<Cand>, p: &WtsParams) {
    let len = tests.len();
    for k in 0..len {
        if h.rng.gen_bool(1.0 / len as f64) && !h.exhausted() {
            let child = h.mutate(&tests[k].test);
            tests[k] = Rc::new(h.execute(child));
        }
    }
    if h.rng.gen_bool(p.add_test) && tests.len() < p.max_suite && !h.exhausted() {
        let t = h.sample();
        tests.push(Rc::new(h.execute(t)));
    }
    if h.rng.gen_bool(p.remove_test) && tests.len() > 1 {
        let k = h.rng.gen_range(0..tests.len());
        tests.remove(k);
    }
}

pub(super) fn run(h: &mut Harness<'_>, p: &WtsParams) {
    let n = p.population.max(2);
    let max = p.max_suite.max(1);
    let mut scratch = Scratch::new(h.targets.fixed_len());
    let mut suites: Vec<Suite> = Vec::with_capacity(n);
    while suites.len() < n && !h.exhausted() {
        let size = h.rng.gen_range(1..=max);
        let mut tests = Vec::with_capacity(size);
        while tests.len() < size && !h.exhausted() {
            let t = h.sample();
            tests.push(Rc::new(h.execute(t)));
        }
        suites.push(evaluate(&mut scratch, tests));
    }
    suites.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
    let mut generation = 0u64;
    while !h.exhausted() && !suites.is_empty() {
        let mut next: Vec<Suite> = suites.iter().take(p.elites.min(n)).cloned().collect();
        while next.len() < n && !h.exhausted() {
            let (a, b) = (tournament(h, &suites).clone(), tournament(h, &suites).clone());
            let (mut c1, mut c2) = if h.rng.gen_bool(p.crossover) {
                crossover(h, &a, &b, max)
            } else {
                (a.tests, b.tests)
            };
            mutate_suite(h, &mut c1, p);
            next.push(evaluate(&mut scratch, c1));
            if next.len() < n {
                mutate_suite(h, &mut c2, p);
                next.push(evaluate(&mut scratch, c2));
            }
        }
        next.sort_by(|a, b| a.fitness.total_cmp(&b.fitness));
        suites = next;
        h.trace.wts.push(WtsGeneration {
            generation,
            best_fitness: suites[0].fitness,
        });
        generation += 1;
    }
}
