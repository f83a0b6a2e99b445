use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Probe kinds: statement ("line"), decision outcome ("branch"), entry ("method").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Statement,
    Decision,
    Entry,
}

/// Key of a decision probe outcome as it appears in snapshots.
pub fn decision_key(predicate: &str, outcome: bool) -> String {
    format!("{predicate}:{outcome}")
}

#[derive(Debug, Default)]
struct Counters {
    ids: Vec<Arc<str>>,
    hits: Vec<AtomicU64>,
    index: HashMap<Arc<str>, usize>,
}

impl Counters {
    fn register(&mut self, id: String) -> usize {
        if let Some(&i) = self.index.get(id.as_str()) {
            return i;
        }
        let id: Arc<str> = id.into();
        let i = self.ids.len();
        self.ids.push(id.clone());
        self.hits.push(AtomicU64::new(0));
        self.index.insert(id, i);
        i
    }

    fn snapshot(&self) -> BTreeMap<String, u64> {
        self.ids
            .iter()
            .zip(&self.hits)
            .map(|(id, h)| (id.to_string(), h.load(Ordering::Relaxed)))
            .collect()
    }

    fn reset(&self) {
        for h in &self.hits {
            h.store(0, Ordering::Relaxed);
        }
    }
}

/// Shared registry of instrumentation counters. Probes are registered while
/// the engine is built; afterwards only the counters change, through atomic
/// increments, so the registry can be shared across request handlers.
#[derive(Debug, Default)]
pub struct ProbeRegistry {
    statements: Counters,
    decisions: Counters,
    entries: Counters,
}

impl ProbeRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_statement(&mut self, id: impl Into<String>) -> usize {
        self.statements.register(id.into())
    }

    /// Registers both outcomes of a predicate; returns the index of the
    /// `false` outcome, the `true` outcome is the next index.
    pub fn register_decision(&mut self, predicate: &str) -> usize {
        let f = self.decisions.register(decision_key(predicate, false));
        let t = self.decisions.register(decision_key(predicate, true));
        debug_assert_eq!(t, f + 1);
        f
    }

    pub fn register_entry(&mut self, id: impl Into<String>) -> usize {
        self.entries.register(id.into())
    }

    pub fn entry_index(&self, id: &str) -> Option<usize> {
        self.entries.index.get(id).copied()
    }

    #[inline]
    pub fn hit(&self, kind: ProbeKind, index: usize) {
        self.counters(kind).hits[index].fetch_add(1, Ordering::Relaxed);
    }

    pub fn id(&self, kind: ProbeKind, index: usize) -> &Arc<str> {
        &self.counters(kind).ids[index]
    }

    pub fn len(&self, kind: ProbeKind) -> usize {
        self.counters(kind).ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.statements.ids.is_empty() && self.decisions.ids.is_empty() && self.entries.ids.is_empty()
    }

    fn counters(&self, kind: ProbeKind) -> &Counters {
        match kind {
            ProbeKind::Statement => &self.statements,
            ProbeKind::Decision => &self.decisions,
            ProbeKind::Entry => &self.entries,
        }
    }

    /// Point-in-time copy of all counters, zeros included.
    pub fn snapshot(&self) -> CoverageSnapshot {
        CoverageSnapshot {
            statement_probes: self.statements.snapshot(),
            decision_probes: self.decisions.snapshot(),
            entry_probes: self.entries.snapshot(),
        }
    }

    pub fn reset(&self) {
        self.statements.reset();
        self.decisions.reset();
        self.entries.reset();
    }

    pub fn catalog(&self) -> ProbeCatalog {
        let ids = |c: &Counters| c.ids.iter().map(|s| s.to_string()).collect();
        ProbeCatalog {
            statements: ids(&self.statements),
            decisions: ids(&self.decisions),
            entries: ids(&self.entries),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CoverageSnapshot {
    pub statement_probes: BTreeMap<String, u64>,
    pub decision_probes: BTreeMap<String, u64>,
    pub entry_probes: BTreeMap<String, u64>,
}

impl CoverageSnapshot {
    pub fn probes(&self, kind: ProbeKind) -> &BTreeMap<String, u64> {
        match kind {
            ProbeKind::Statement => &self.statement_probes,
            ProbeKind::Decision => &self.decision_probes,
            ProbeKind::Entry => &self.entry_probes,
        }
    }

    pub fn catalog(&self) -> ProbeCatalog {
        ProbeCatalog {
            statements: self.statement_probes.keys().cloned().collect(),
            decisions: self.decision_probes.keys().cloned().collect(),
            entries: self.entry_probes.keys().cloned().collect(),
        }
    }
}

/// Every registered probe id, by kind.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeCatalog {
    pub statements: Vec<String>,
    pub decisions: Vec<String>,
    pub entries: Vec<String>,
}

impl ProbeCatalog {
    pub fn ids(&self, kind: ProbeKind) -> &[String] {
        match kind {
            ProbeKind::Statement => &self.statements,
            ProbeKind::Decision => &self.decisions,
            ProbeKind::Entry => &self.entries,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.statements.is_empty() && self.decisions.is_empty() && self.entries.is_empty()
    }
}
