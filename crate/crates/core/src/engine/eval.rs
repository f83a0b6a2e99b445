use std::sync::Arc;

use crate::dsl::{CmpOp, Expr, RuleSetVersion, RuleType, VariableValue};

use super::distance::{arith, cmp_distance, normalize, raw_distance, ArithFault, Bindings, UNBOUND};
use super::probes::{ProbeKind, ProbeRegistry};
use super::value::{cmp_holds, in_set};
use super::*;

#[derive(Debug)]
struct NodeSlot {
    id: Arc<str>,
    frame: String,
    stmt: usize,
    /// Index of the `false` outcome counter for predicate nodes.
    decision: Option<usize>,
}

impl NodeSlot {
    fn register(reg: &mut ProbeRegistry, id: String, predicate: bool) -> NodeSlot {
        let stmt = reg.register_statement(id.clone());
        let decision = predicate.then(|| reg.register_decision(&id));
        NodeSlot {
            frame: format!("{ENGINE_FRAME_PREFIX}rule {id}"),
            id: id.into(),
            stmt,
            decision,
        }
    }
}

#[derive(Debug)]
struct ValidationLayout {
    frame: String,
    scope: NodeSlot,
    /// Guard nodes in preorder, followed by check nodes in preorder.
    nodes: Vec<NodeSlot>,
}

#[derive(Debug)]
struct AggregationLayout {
    input: NodeSlot,
    cases: Vec<NodeSlot>,
    default: NodeSlot,
    dubious: Vec<NodeSlot>,
}

#[derive(Debug, Clone, Copy)]
struct Entries {
    evaluate_validation: usize,
    evaluate_aggregation: usize,
    validate_message: usize,
    aggregate_case: usize,
}

/// Instrumented evaluator for one rule-set version.
#[derive(Debug)]
pub struct Engine {
    rules: Arc<RuleSetVersion>,
    probes: Arc<ProbeRegistry>,
    validation: Vec<ValidationLayout>,
    aggregation: Vec<AggregationLayout>,
    entries: Entries,
}

fn register_expr(reg: &mut ProbeRegistry, rule: &str, e: &Expr, next: &mut usize, out: &mut Vec<NodeSlot>) {
    let predicate = matches!(e, Expr::Cmp { .. } | Expr::InSet { .. });
    out.push(NodeSlot::register(reg, format!("{rule}/n{next}"), predicate));
    *next += 1;
    for c in e.children() {
        register_expr(reg, rule, c, next, out);
    }
}

impl Engine {
    pub fn new(rules: RuleSetVersion) -> Engine {
        Engine::with_registry(rules, ProbeRegistry::new())
    }

    /// Builds the engine, adding its probes to `registry` (which may already
    /// hold probes of the embedding service).
    pub fn with_registry(rules: RuleSetVersion, mut registry: ProbeRegistry) -> Engine {
        let entries = Entries {
            evaluate_validation: registry.register_entry(ENTRY_EVALUATE_VALIDATION),
            evaluate_aggregation: registry.register_entry(ENTRY_EVALUATE_AGGREGATION),
            validate_message: registry.register_entry(ENTRY_VALIDATE_MESSAGE),
            aggregate_case: registry.register_entry(ENTRY_AGGREGATE_CASE),
        };
        let validation = rules
            .validation_rules
            .iter()
            .map(|r| {
                let scope = NodeSlot::register(&mut registry, format!("{}/scope", r.id), true);
                let mut nodes = Vec::new();
                let mut next = 0;
                register_expr(&mut registry, &r.id, &r.guard, &mut next, &mut nodes);
                register_expr(&mut registry, &r.id, &r.check, &mut next, &mut nodes);
                ValidationLayout {
                    frame: format!("{ENGINE_FRAME_PREFIX}rule {}", r.id),
                    scope,
                    nodes,
                }
            })
            .collect();
        let aggregation = rules
            .aggregation_rules
            .iter()
            .map(|r| AggregationLayout {
                input: NodeSlot::register(&mut registry, format!("{}/input", r.id), false),
                cases: (0..r.cases.len())
                    .map(|i| NodeSlot::register(&mut registry, format!("{}/case{i}", r.id), true))
                    .collect(),
                default: NodeSlot::register(&mut registry, format!("{}/default", r.id), false),
                dubious: (0..r.dubious_sets.len())
                    .map(|i| NodeSlot::register(&mut registry, format!("{}/dubious{i}", r.id), true))
                    .collect(),
            })
            .collect();
        Engine {
            rules: Arc::new(rules),
            probes: Arc::new(registry),
            validation,
            aggregation,
            entries,
        }
    }

    pub fn rules(&self) -> &RuleSetVersion {
        &self.rules
    }

    pub fn probes(&self) -> &Arc<ProbeRegistry> {
        &self.probes
    }

    fn enter(&self, index: usize, fb: &mut Feedback) {
        self.probes.hit(ProbeKind::Entry, index);
        fb.entries.insert(index);
    }

    pub fn evaluate_validation(
        &self,
        index: usize,
        msg: &CancerMessage,
        fb: &mut Feedback,
    ) -> Result<RuleExecution, EvalError> {
        self.enter(self.entries.evaluate_validation, fb);
        let rule = &self.rules.validation_rules[index];
        let layout = &self.validation[index];
        let mut ctx = Ctx {
            probes: &self.probes,
            fb,
            nodes: &layout.nodes,
            bindings: &msg.variables,
            path: Vec::new(),
            stack: Vec::new(),
            rule_id: &rule.id,
            rule_frame: &layout.frame,
        };

        // scope filter on the message type
        ctx.visit(&layout.scope);
        let message_type = msg.get("messageType");
        let scope_raw = if message_type.is_null() {
            UNBOUND
        } else {
            let mt = message_type.to_string();
            rule.message_types
                .iter()
                .map(|t| strsim::levenshtein(&mt, t) as f64)
                .fold(UNBOUND, f64::min)
        };
        let in_scope = scope_raw == 0.0;
        ctx.decide(&layout.scope, in_scope, normalize(scope_raw), if in_scope { 0.5 } else { 0.0 });
        if !in_scope {
            let guard_raw = raw_distance(&rule.guard, &msg.variables, true);
            ctx.fb.rule(&rule.id, RuleHeuristic { guard: normalize(scope_raw + guard_raw), check_pass: 1.0, check_fail: 1.0 });
            let trace = ctx.path;
            return Ok(RuleExecution::not_applied(&rule.id, RuleType::Validation, trace));
        }

        let guard = ctx.eval_bool(&rule.guard, 0).map_err(|e| e.within(ENTRY_EVALUATE_VALIDATION))?;
        if !guard {
            let guard_raw = raw_distance(&rule.guard, &msg.variables, true);
            ctx.fb.rule(&rule.id, RuleHeuristic { guard: normalize(guard_raw), check_pass: 1.0, check_fail: 1.0 });
            let trace = ctx.path;
            return Ok(RuleExecution::not_applied(&rule.id, RuleType::Validation, trace));
        }
        let check = ctx
            .eval_bool(&rule.check, rule.guard.size())
            .map_err(|e| e.within(ENTRY_EVALUATE_VALIDATION))?;
        ctx.fb.rule(
            &rule.id,
            RuleHeuristic {
                guard: 0.0,
                check_pass: normalize(raw_distance(&rule.check, &msg.variables, true)),
                check_fail: normalize(raw_distance(&rule.check, &msg.variables, false)),
            },
        );
        let result = match (check, rule.severity) {
            (true, _) => ExecutionResult::Pass,
            (false, crate::dsl::Severity::Fail) => ExecutionResult::Fail,
            (false, crate::dsl::Severity::Warning) => ExecutionResult::Warning,
        };
        Ok(RuleExecution::applied(&rule.id, RuleType::Validation, result, ctx.path))
    }

    /// Evaluate one decision table. The input value is taken from the latest
    /// message that carries it, else from the draft case.
    pub fn evaluate_aggregation(
        &self,
        index: usize,
        draft: &CancerCase,
        msgs: &[CancerMessage],
        fb: &mut Feedback,
    ) -> Result<(RuleExecution, VariableValue), EvalError> {
        self.enter(self.entries.evaluate_aggregation, fb);
        let rule = &self.rules.aggregation_rules[index];
        let layout = &self.aggregation[index];
        let mut path = Vec::with_capacity(rule.cases.len() + 2);

        let visit = |slot: &NodeSlot, fb: &mut Feedback, path: &mut Vec<Arc<str>>| {
            self.probes.hit(ProbeKind::Statement, slot.stmt);
            fb.statements.insert(slot.stmt);
            path.push(slot.id.clone());
        };
        visit(&layout.input, fb, &mut path);

        let value = msgs
            .iter()
            .rev()
            .map(|m| m.get(&rule.input_var))
            .find(|v| !v.is_null())
            .or_else(|| draft.aggregated_fields.get(&rule.input_var))
            .cloned()
            .unwrap_or(VariableValue::Null);

        let admitted = value.is_null()
            || self
                .rules
                .variable(&rule.input_var)
                .is_none_or(|decl| decl.admits(&value));
        if !admitted {
            let exec = RuleExecution::applied(&rule.id, RuleType::Aggregation, ExecutionResult::Fail, path);
            return Ok((exec, VariableValue::Null));
        }

        let decide = |slot: &NodeSlot, set: &[VariableValue], fb: &mut Feedback| -> bool {
            let member = in_set(&value, set);
            let d_true = if value.is_null() {
                if member { 0.0 } else { 1.0 }
            } else {
                normalize(set.iter().map(|m| cmp_distance(CmpOp::Eq, &value, m)).fold(UNBOUND, f64::min))
            };
            let d_false = if member { 0.5 } else { 0.0 };
            let base = slot.decision.expect("case slots carry decisions");
            self.probes.hit(ProbeKind::Decision, base + usize::from(member));
            fb.decision(base, d_false);
            fb.decision(base + 1, d_true);
            member
        };

        let mut output = None;
        for (case, slot) in rule.cases.iter().zip(&layout.cases) {
            visit(slot, fb, &mut path);
            if decide(slot, &case.values, fb) {
                output = Some(case.output.clone());
                break;
            }
        }
        let output = match output {
            Some(o) => o,
            None => {
                visit(&layout.default, fb, &mut path);
                rule.default.clone()
            }
        };
        let mut result = ExecutionResult::Pass;
        for (set, slot) in rule.dubious_sets.iter().zip(&layout.dubious) {
            visit(slot, fb, &mut path);
            if decide(slot, set, fb) {
                result = ExecutionResult::Warning;
                break;
            }
        }
        Ok((RuleExecution::applied(&rule.id, RuleType::Aggregation, result, path), output))
    }

    /// One execution per validation rule, in rule-set order.
    pub fn validate_message(&self, msg: &CancerMessage, fb: &mut Feedback) -> Result<Vec<RuleExecution>, EngineFailure> {
        self.enter(self.entries.validate_message, fb);
        let mut out = Vec::with_capacity(self.rules.validation_rules.len());
        for i in 0..self.rules.validation_rules.len() {
            match self.evaluate_validation(i, msg, fb) {
                Ok(exec) => out.push(exec),
                Err(e) => {
                    return Err(EngineFailure {
                        error: e.within(ENTRY_VALIDATE_MESSAGE),
                        partial: out,
                    })
                }
            }
        }
        Ok(out)
    }

    /// Aggregate messages into a case. Assignments overwrite fields of the
    /// previous case; the result carries every target field.
    pub fn aggregate_case(
        &self,
        previous: Option<&CancerCase>,
        msgs: &[CancerMessage],
        fb: &mut Feedback,
    ) -> Result<(CancerCase, Vec<RuleExecution>), AggregateError> {
        self.enter(self.entries.aggregate_case, fb);
        if msgs.is_empty() {
            return Err(AggregateError::NoMessages);
        }
        let draft = previous.cloned().unwrap_or_default();
        let mut case = draft.clone();
        case.source_message_count = draft.source_message_count + msgs.len() as u64;
        let mut out = Vec::with_capacity(self.rules.aggregation_rules.len());
        for i in 0..self.rules.aggregation_rules.len() {
            match self.evaluate_aggregation(i, &draft, msgs, fb) {
                Ok((exec, value)) => {
                    case.aggregated_fields
                        .insert(self.rules.aggregation_rules[i].target_field.clone(), value);
                    out.push(exec);
                }
                Err(e) => {
                    return Err(AggregateError::Engine(EngineFailure {
                        error: e.within(ENTRY_AGGREGATE_CASE),
                        partial: out,
                    }))
                }
            }
        }
        Ok((case, out))
    }

    pub fn validation_index(&self, id: &str) -> Option<usize> {
        self.rules.validation_rules.iter().position(|r| r.id == id)
    }

    pub fn aggregation_index(&self, id: &str) -> Option<usize> {
        self.rules.aggregation_rules.iter().position(|r| r.id == id)
    }
}

impl EvalError {
    /// Append an enclosing frame.
    pub fn within(mut self, frame: &str) -> EvalError {
        self.frames.push(frame.to_string());
        self
    }
}

struct Ctx<'a> {
    probes: &'a ProbeRegistry,
    fb: &'a mut Feedback,
    nodes: &'a [NodeSlot],
    bindings: &'a Bindings,
    path: Vec<Arc<str>>,
    stack: Vec<usize>,
    rule_id: &'a str,
    rule_frame: &'a str,
}

impl Ctx<'_> {
    fn visit(&mut self, slot: &NodeSlot) {
        self.probes.hit(ProbeKind::Statement, slot.stmt);
        self.fb.statements.insert(slot.stmt);
        self.path.push(slot.id.clone());
    }

    fn decide(&mut self, slot: &NodeSlot, outcome: bool, d_true: f64, d_false: f64) {
        if let Some(base) = slot.decision {
            self.probes.hit(ProbeKind::Decision, base + usize::from(outcome));
            self.fb.decision(base, d_false);
            self.fb.decision(base + 1, d_true);
        }
    }

    fn fault(&self, idx: usize, fault: ArithFault) -> EvalError {
        let mut frames: Vec<String> = vec![self.nodes[idx].frame.clone()];
        frames.extend(self.stack.iter().rev().filter(|&&i| i != idx).map(|&i| self.nodes[i].frame.clone()));
        frames.push(self.rule_frame.to_string());
        EvalError {
            kind: EvalErrorKind::RuleParse,
            rule_id: self.rule_id.to_string(),
            detail: match fault {
                ArithFault::DivisionByZero => "division by zero".into(),
                ArithFault::Overflow => "arithmetic overflow".into(),
            },
            frames,
        }
    }

    fn eval_bool(&mut self, e: &Expr, idx: usize) -> Result<bool, EvalError> {
        let slot = &self.nodes[idx];
        self.visit(slot);
        self.stack.push(idx);
        let value = match e {
            Expr::Bool(b) => *b,
            Expr::Cmp { op, lhs, rhs } => {
                let a = self.eval_operand(lhs, idx + 1)?;
                let b = self.eval_operand(rhs, idx + 1 + lhs.size())?;
                let holds = cmp_holds(*op, &a, &b);
                let d_true = normalize(cmp_distance(*op, &a, &b));
                let d_false = normalize(cmp_distance(op.negate(), &a, &b));
                self.decide(&self.nodes[idx], holds, d_true, d_false);
                holds
            }
            Expr::InSet { operand, set } => {
                let v = self.eval_operand(operand, idx + 1)?;
                let member = in_set(&v, set);
                let d_true = if v.is_null() {
                    if member { 0.0 } else { 1.0 }
                } else {
                    normalize(set.iter().map(|m| cmp_distance(CmpOp::Eq, &v, m)).fold(UNBOUND, f64::min))
                };
                let d_false = if member { 0.5 } else { 0.0 };
                self.decide(&self.nodes[idx], member, d_true, d_false);
                member
            }
            Expr::And(xs) => {
                let mut child = idx + 1;
                let mut all = true;
                for x in xs {
                    if !self.eval_bool(x, child)? {
                        all = false;
                        break;
                    }
                    child += x.size();
                }
                all
            }
            Expr::Or(xs) => {
                let mut child = idx + 1;
                let mut any = false;
                for x in xs {
                    if self.eval_bool(x, child)? {
                        any = true;
                        break;
                    }
                    child += x.size();
                }
                any
            }
            Expr::Not(x) => !self.eval_bool(x, idx + 1)?,
            Expr::Implies(a, b) => {
                if self.eval_bool(a, idx + 1)? {
                    self.eval_bool(b, idx + 1 + a.size())?
                } else {
                    true
                }
            }
            Expr::Const(_) | Expr::Var(_) | Expr::Arith { .. } => {
                unreachable!("parser guarantees boolean positions hold boolean nodes")
            }
        };
        self.stack.pop();
        Ok(value)
    }

    fn eval_operand(&mut self, e: &Expr, idx: usize) -> Result<VariableValue, EvalError> {
        let slot = &self.nodes[idx];
        self.visit(slot);
        self.stack.push(idx);
        let value = match e {
            Expr::Const(v) => v.clone(),
            Expr::Var(name) => self.bindings.get(name).cloned().unwrap_or(VariableValue::Null),
            Expr::Arith { op, lhs, rhs } => {
                let a = self.eval_operand(lhs, idx + 1)?;
                let b = self.eval_operand(rhs, idx + 1 + lhs.size())?;
                match (a.as_integer(), b.as_integer()) {
                    (Some(x), Some(y)) => match arith(*op, x, y) {
                        Ok(v) => VariableValue::Integer(v),
                        Err(fault) => return Err(self.fault(idx, fault)),
                    },
                    _ => VariableValue::Null,
                }
            }
            _ => unreachable!("parser guarantees operand positions hold operands"),
        };
        self.stack.pop();
        Ok(value)
    }
}
