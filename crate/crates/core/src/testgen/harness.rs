//! State shared by all tools: budget, target universe, archive, run log and
//! the mapping from service feedback to target distances.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::rc::Rc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use super::targets::{
    endpoint_target, fault_target, status_target, ObjectiveFactory, ObjectiveRegistry, Observation, RuleInfo,
    RuleOutcomeObjectives,
};
use super::{
    fnv1a, mutate, HttpResponse, LogRecord, Observed, RunConfig, RunError, SearchTrace, TestCase, ToolRun, Transport,
    FNV_OFFSET,
};
use crate::engine::{ExecutionResult, ExecutionStatus, ProbeCatalog, RuleExecution};
use crate::metrics::ObservedError;
use crate::service::{ApiSchema, ErrorSignature, HeuristicsReport, RuleTally};

use super::sampler::Sampler;

/// Sparse distances of one test, sorted by target index; absent means 1.
pub(crate) type Dists = Vec<(u32, f64)>;

#[derive(Debug)]
pub(crate) struct Evaluated {
    pub test: TestCase,
    pub dists: Dists,
}

pub(crate) type Cand = Rc<Evaluated>;

const STATUS_CLASSES: [&str; 3] = ["2xx", "4xx", "5xx"];

#[derive(Default)]
pub(crate) struct TargetSet {
    ids: Vec<String>,
    index: HashMap<String, u32>,
    covered: Vec<bool>,
    /// Targets at or above this index are faults, discovered during the run.
    fixed: u32,
    covered_fixed: u32,
}

impl TargetSet {
    fn add(&mut self, id: String) -> Result<u32, String> {
        if self.index.contains_key(&id) {
            return Err(id);
        }
        let t = self.ids.len() as u32;
        self.index.insert(id.clone(), t);
        self.ids.push(id);
        self.covered.push(false);
        Ok(t)
    }

    fn fault(&mut self, id: String) -> u32 {
        match self.index.get(&id) {
            Some(&t) => t,
            None => self.add(id).expect("checked absent"),
        }
    }

    pub fn fixed_len(&self) -> u32 {
        self.fixed
    }

    /// Uncovered and part of the fixed (non-fault) universe.
    pub fn is_live(&self, t: u32) -> bool {
        t < self.fixed && !self.covered[t as usize]
    }

    pub fn live_count(&self) -> usize {
        (self.fixed - self.covered_fixed) as usize
    }
}

struct Budget {
    limit: Option<u64>,
    secs: f64,
    start: Instant,
}

impl Budget {
    fn exhausted(&self, used: u64) -> bool {
        match self.limit {
            Some(n) => used >= n,
            None => self.start.elapsed().as_secs_f64() >= self.secs,
        }
    }

    fn progress(&self, used: u64) -> f64 {
        let p = match self.limit {
            Some(n) => used as f64 / n as f64,
            None => self.start.elapsed().as_secs_f64() / self.secs,
        };
        p.min(1.0)
    }
}

struct WhiteBox {
    line_base: u32,
    lines: u32,
    branch_base: u32,
    branches: u32,
    method_base: u32,
    methods: u32,
    domain_base: u32,
    registry: ObjectiveRegistry,
}

pub(crate) struct Harness<'t> {
    transport: &'t dyn Transport,
    config: RunConfig,
    pub rng: ChaCha8Rng,
    pub sampler: Sampler,
    budget: Budget,
    pub targets: TargetSet,
    endpoints: HashMap<String, (u32, u32)>,
    white_box: Option<WhiteBox>,
    requests: u64,
    digest: u64,
    log: Vec<LogRecord>,
    archive: BTreeMap<String, TestCase>,
    errors: BTreeSet<ObservedError>,
    pub trace: SearchTrace,
}

fn get_json<T: DeserializeOwned>(t: &dyn Transport, path: &str, step: &'static str) -> Result<T, RunError> {
    let r = t
        .send("GET", path, None)
        .map_err(|source| RunError::Transport { step, source })?;
    if r.status != 200 {
        return Err(RunError::Protocol {
            step,
            detail: format!("status {}", r.status),
        });
    }
    serde_json::from_value(r.body).map_err(|e| RunError::Protocol {
        step,
        detail: e.to_string(),
    })
}

pub(crate) fn reset(t: &dyn Transport) -> Result<(), RunError> {
    let step = "coverage reset";
    let r = t
        .send("POST", "/internal/coverage/reset", None)
        .map_err(|source| RunError::Transport { step, source })?;
    if r.status != 200 {
        return Err(RunError::Protocol {
            step,
            detail: format!("status {}", r.status),
        });
    }
    Ok(())
}

fn outcome_char(e: &RuleExecution) -> char {
    match (e.status, e.result) {
        (ExecutionStatus::Applied, ExecutionResult::Pass) => 'P',
        (ExecutionStatus::Applied, ExecutionResult::Fail) => 'F',
        (ExecutionStatus::Applied, ExecutionResult::Warning) => 'W',
        _ => 'n',
    }
}

fn executions(r: &HttpResponse) -> Vec<RuleExecution> {
    let v = match r.body.get("executions") {
        Some(v) => v,
        None => match r.body.get("partialExecutions") {
            Some(v) => v,
            None => return Vec::new(),
        },
    };
    Vec::<RuleExecution>::deserialize(v).unwrap_or_default()
}

/// Error signature (for 500s) and outcome string of a response.
pub(crate) fn read_response(endpoint_key: &str, r: &HttpResponse) -> (Option<ErrorSignature>, String) {
    let sig = (r.status == 500).then(|| {
        r.body
            .get("error")
            .and_then(|e| ErrorSignature::deserialize(e).ok())
            .unwrap_or_else(|| {
                let path = endpoint_key.split_once(' ').map_or(endpoint_key, |(_, p)| p);
                ErrorSignature::new(path, "unknown", vec!["service::unknown".into()])
            })
    });
    let outcomes = executions(r).iter().map(outcome_char).collect();
    (sig, outcomes)
}

impl<'t> Harness<'t> {
    pub fn start(
        transport: &'t dyn Transport,
        config: &RunConfig,
        extra: Vec<Box<dyn ObjectiveFactory>>,
    ) -> Result<Self, RunError> {
        reset(transport)?;
        let schema: ApiSchema = get_json(transport, "/api/schema", "api schema")?;
        let sampler = Sampler::focused(&schema, config.valid_bias, config.endpoints);
        let mut targets = TargetSet::default();
        let dup = |id: String| super::ObjectiveError::Duplicate(id);
        let mut endpoints = HashMap::new();
        for e in sampler.endpoints() {
            let key = e.key();
            let ep = targets.add(endpoint_target(&key)).map_err(dup)?;
            let st = targets.add(status_target(&key, STATUS_CLASSES[0])).map_err(dup)?;
            for class in &STATUS_CLASSES[1..] {
                targets.add(status_target(&key, class)).map_err(dup)?;
            }
            endpoints.insert(key, (ep, st));
        }
        let white_box = if config.tool.is_white_box() {
            let catalog: ProbeCatalog = get_json(transport, "/internal/probes", "probe catalog")?;
            let rules: Vec<RuleTally> = get_json(transport, "/internal/executions", "rule listing")?;
            let mut add_all = |prefix: &str, ids: &[String]| -> Result<(u32, u32), RunError> {
                let base = targets.ids.len() as u32;
                for id in ids {
                    targets.add(format!("{prefix}:{id}")).map_err(dup)?;
                }
                Ok((base, ids.len() as u32))
            };
            let (line_base, lines) = add_all("line", &catalog.statements)?;
            let (branch_base, branches) = add_all("branch", &catalog.decisions)?;
            let (method_base, methods) = add_all("method", &catalog.entries)?;
            let mut registry = ObjectiveRegistry::new(
                rules
                    .into_iter()
                    .map(|r| RuleInfo {
                        id: r.rule_id,
                        rule_type: r.rule_type,
                    })
                    .collect(),
            );
            if config.domain_objectives {
                registry.register(&RuleOutcomeObjectives::all())?;
            }
            for f in &extra {
                registry.register(f.as_ref())?;
            }
            let domain_base = targets.ids.len() as u32;
            for id in registry.ids() {
                targets.add(id.to_string()).map_err(dup)?;
            }
            Some(WhiteBox {
                line_base,
                lines,
                branch_base,
                branches,
                method_base,
                methods,
                domain_base,
                registry,
            })
        } else {
            None
        };
        targets.fixed = targets.ids.len() as u32;
        let budget = Budget {
            limit: config.budget.request_limit(),
            secs: match config.budget {
                super::Budget::Seconds { secs, .. } => secs,
                super::Budget::Requests(_) => f64::INFINITY,
            },
            start: Instant::now(),
        };
        Ok(Harness {
            transport,
            config: config.clone(),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            sampler,
            budget,
            targets,
            endpoints,
            white_box,
            requests: 0,
            digest: FNV_OFFSET,
            log: Vec::new(),
            archive: BTreeMap::new(),
            errors: BTreeSet::new(),
            trace: SearchTrace::default(),
        })
    }

    pub fn exhausted(&self) -> bool {
        self.budget.exhausted(self.requests)
    }

    /// Fraction of the budget spent, in [0, 1].
    pub fn progress(&self) -> f64 {
        self.budget.progress(self.requests)
    }

    pub fn sample(&mut self) -> TestCase {
        TestCase::new(self.sampler.sample(&mut self.rng), "sample")
    }

    pub fn mutate(&mut self, tc: &TestCase) -> TestCase {
        mutate(tc, &self.sampler, &mut self.rng)
    }

    /// Send a test (one unit of budget), score it against every target,
    /// archive first coverers and log the exchange.
    pub fn execute(&mut self, mut test: TestCase) -> Evaluated {
        let key = test.request.endpoint_key();
        let req = &test.request;
        let resp = self.transport.send(&req.method, &req.path, req.body.as_ref());
        self.requests += 1;
        let mut dists: Dists = Vec::new();
        let mut error = None;
        let (status, sig, outcomes) = match resp {
            Ok(r) => {
                let (sig, outcomes) = read_response(&key, &r);
                if let Some(&(ep, st)) = self.endpoints.get(&key) {
                    dists.push((ep, 0.0));
                    let class = match r.status {
                        200..=299 => Some(0),
                        400..=499 => Some(1),
                        500..=599 => Some(2),
                        _ => None,
                    };
                    if let Some(c) = class {
                        dists.push((st + c, 0.0));
                    }
                }
                if let Some(s) = &sig {
                    dists.push((self.targets.fault(fault_target(s)), 0.0));
                    error = Some(ObservedError::Service { signature: s.clone() });
                }
                if self.white_box.is_some() {
                    match self.transport.heuristics() {
                        Ok(h) => self.white_box_dists(&h, &r, &mut dists),
                        Err(e) => {
                            self.errors.insert(ObservedError::Tool {
                                trace: vec![format!("harness::heuristics[{}]", e.stage), "harness::execute".into()],
                            });
                        }
                    }
                }
                (Some(r.status), sig, outcomes)
            }
            Err(e) => {
                error = Some(ObservedError::Io {
                    trace: vec![format!("transport::{}", e.stage), "harness::execute".into()],
                });
                (None, None, String::new())
            }
        };
        dists.sort_unstable_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)));
        dists.dedup_by_key(|e| e.0);

        let mut covered = Vec::new();
        for &(t, d) in &dists {
            if d == 0.0 && !self.targets.covered[t as usize] {
                self.targets.covered[t as usize] = true;
                if t < self.targets.fixed {
                    self.targets.covered_fixed += 1;
                }
                covered.push(self.targets.ids[t as usize].clone());
            }
        }
        test.observed = Some(Observed {
            status,
            error: sig,
            outcomes,
            covered,
        });
        for id in &test.observed.as_ref().expect("just set").covered {
            self.archive.insert(id.clone(), test.clone());
        }
        if let Some(e) = &error {
            self.errors.insert(e.clone());
        }
        let record = LogRecord {
            index: self.requests - 1,
            test,
            error,
        };
        let bytes = serde_json::to_vec(&record).expect("log records serialize");
        self.digest = fnv1a(&bytes, self.digest);
        self.digest = fnv1a(b"\n", self.digest);
        let test = if self.config.keep_log {
            let t = record.test.clone();
            self.log.push(record);
            t
        } else {
            record.test
        };
        Evaluated { test, dists }
    }

    fn white_box_dists(&self, h: &HeuristicsReport, r: &HttpResponse, dists: &mut Dists) {
        let wb = self.white_box.as_ref().expect("white-box run");
        let within = |i: usize, n: u32| (i as u64) < u64::from(n);
        dists.extend(h.statements.iter().filter(|&&s| within(s, wb.lines)).map(|&s| (wb.line_base + s as u32, 0.0)));
        dists.extend(h.entries.iter().filter(|&&e| within(e, wb.methods)).map(|&e| (wb.method_base + e as u32, 0.0)));
        dists.extend(
            h.decisions
                .iter()
                .filter(|&&(i, d)| within(i, wb.branches) && d < 1.0)
                .map(|&(i, d)| (wb.branch_base + i as u32, d)),
        );
        if !wb.registry.is_empty() {
            let execs = executions(r);
            let by_rule: BTreeMap<&str, &RuleExecution> = execs.iter().map(|e| (e.rule_id.as_str(), e)).collect();
            let obs = Observation::new(r.status, h, &by_rule);
            dists.extend(
                wb.registry
                    .evaluate(&obs)
                    .filter(|&(_, d)| d < 1.0)
                    .map(|(i, d)| (wb.domain_base + i as u32, d)),
            );
        }
    }

    pub fn finish(self) -> Result<ToolRun, RunError> {
        let tallies: Vec<RuleTally> = get_json(self.transport, "/internal/executions", "execution tallies")?;
        let coverage = get_json(self.transport, "/internal/coverage", "coverage snapshot")?;
        let catalog = get_json(self.transport, "/internal/probes", "probe catalog")?;
        Ok(ToolRun {
            tool: self.config.tool,
            seed: self.config.seed,
            budget: self.config.budget,
            requests: self.requests,
            log_digest: self.digest,
            log: self.log,
            archive: self.archive,
            targets_total: self.targets.ids.len(),
            errors: self.errors.into_iter().collect(),
            executions: tallies.into_iter().map(|t| (t.rule_id, t.tally)).collect(),
            coverage,
            catalog,
            trace: self.trace,
        })
    }
}
