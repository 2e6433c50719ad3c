//! Rule validation and forward-chaining inference.
//!
//! Base facts are evaluated first, then rules in dependency order. A rule's
//! derived facts take the value of its condition, so a derived fact is false
//! whenever its rule does not fire. Derived-fact dependencies must be acyclic,
//! which makes the result a unique fixed point and independent of the order in
//! which rules were declared.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::ast::Expr;
use super::eval::{evaluate_bool, type_of, Bindings, EvalError, Ty};
use crate::graph::{find_cycle, topo_order};

#[derive(Debug, Clone, PartialEq)]
pub struct Fact {
    pub name: String,
    pub expr: Expr,
}

impl Fact {
    pub fn new(name: impl Into<String>, expr: Expr) -> Self {
        Fact { name: name.into(), expr }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub condition: Expr,
    /// Publishers selected when the condition holds.
    pub actions: Vec<String>,
    pub derived_facts: Vec<String>,
}

impl Rule {
    pub fn new(name: impl Into<String>, condition: Expr) -> Self {
        Rule { name: name.into(), condition, actions: Vec::new(), derived_facts: Vec::new() }
    }

    pub fn publish(mut self, publisher: impl Into<String>) -> Self {
        self.actions.push(publisher.into());
        self
    }

    pub fn derive(mut self, fact: impl Into<String>) -> Self {
        self.derived_facts.push(fact.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ValidationError {
    #[error("dependency cycle: {}", path.join(" -> "))]
    CyclicDependency { path: Vec<String> },
    #[error("`{referrer}` references undefined fact `{fact}`")]
    UndefinedFact { referrer: String, fact: String },
    #[error("name `{name}` is defined more than once")]
    DuplicateName { name: String },
    #[error("fact `{fact}` is not boolean-valued ({found})")]
    NotBoolean { fact: String, found: String },
    #[error("type error in `{owner}`: {message}")]
    Type { owner: String, message: String },
    #[error("rule `{rule}` condition references product `{product}`; rules may only use facts")]
    ProductInRule { rule: String, product: String },
    #[error("base fact `{fact}` references derived fact `{derived}`")]
    BaseFactUsesDerived { fact: String, derived: String },
}

/// Topologically ordered evaluation plan.
#[derive(Debug, Clone, PartialEq)]
pub struct DependencyPlan {
    facts: Vec<Fact>,
    rules: Vec<Rule>,
}

impl DependencyPlan {
    pub fn facts(&self) -> &[Fact] {
        &self.facts
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn rule_order(&self) -> Vec<&str> {
        self.rules.iter().map(|r| r.name.as_str()).collect()
    }

    /// Every product read by a fact expression.
    pub fn product_refs(&self) -> BTreeSet<String> {
        self.facts.iter().flat_map(|f| f.expr.product_refs()).collect()
    }

    /// Every publisher a rule may select.
    pub fn publishers(&self) -> BTreeSet<String> {
        self.rules.iter().flat_map(|r| r.actions.iter().cloned()).collect()
    }

    pub fn derived_facts(&self) -> BTreeSet<String> {
        self.rules.iter().flat_map(|r| r.derived_facts.iter().cloned()).collect()
    }
}

/// Build the evaluation plan for a channel's facts and rules.
///
/// Collects every problem it can find instead of stopping at the first one.
pub fn validate(facts: &[Fact], rules: &[Rule]) -> Result<DependencyPlan, Vec<ValidationError>> {
    let mut errors = Vec::new();
    let mut names: BTreeMap<&str, usize> = BTreeMap::new();
    for n in facts
        .iter()
        .map(|f| f.name.as_str())
        .chain(rules.iter().flat_map(|r| r.derived_facts.iter().map(String::as_str)))
    {
        *names.entry(n).or_default() += 1;
    }
    let mut rule_names: BTreeMap<&str, usize> = BTreeMap::new();
    for r in rules {
        *rule_names.entry(r.name.as_str()).or_default() += 1;
    }
    for (n, c) in names.iter().chain(rule_names.iter()) {
        if *c > 1 {
            errors.push(ValidationError::DuplicateName { name: n.to_string() });
        }
    }

    let base: BTreeSet<&str> = facts.iter().map(|f| f.name.as_str()).collect();
    // derived fact -> rule that derives it
    let mut deriver: BTreeMap<&str, &str> = BTreeMap::new();
    for r in rules {
        for d in &r.derived_facts {
            deriver.entry(d.as_str()).or_insert(r.name.as_str());
        }
    }

    let mut fact_deps: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for f in facts {
        match type_of(&f.expr) {
            Ok(Ty::Bool | Ty::Any) => {}
            Ok(t) => errors.push(ValidationError::NotBoolean { fact: f.name.clone(), found: format!("{t:?}") }),
            Err(message) => errors.push(ValidationError::Type { owner: f.name.clone(), message }),
        }
        let mut ds = BTreeSet::new();
        for r in f.expr.fact_refs() {
            if base.contains(r.as_str()) {
                ds.insert(r);
            } else if deriver.contains_key(r.as_str()) {
                errors.push(ValidationError::BaseFactUsesDerived { fact: f.name.clone(), derived: r });
            } else {
                errors.push(ValidationError::UndefinedFact { referrer: f.name.clone(), fact: r });
            }
        }
        fact_deps.entry(f.name.clone()).or_default().extend(ds);
    }

    let mut rule_deps: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for r in rules {
        match type_of(&r.condition) {
            Ok(Ty::Bool | Ty::Any) => {}
            Ok(t) => errors.push(ValidationError::Type {
                owner: r.name.clone(),
                message: format!("condition is {t:?}, not boolean"),
            }),
            Err(message) => errors.push(ValidationError::Type { owner: r.name.clone(), message }),
        }
        for p in r.condition.product_refs() {
            errors.push(ValidationError::ProductInRule { rule: r.name.clone(), product: p });
        }
        let mut ds = BTreeSet::new();
        for f in r.condition.fact_refs() {
            if let Some(src) = deriver.get(f.as_str()) {
                ds.insert(src.to_string());
            } else if !base.contains(f.as_str()) {
                errors.push(ValidationError::UndefinedFact { referrer: r.name.clone(), fact: f });
            }
        }
        rule_deps.entry(r.name.clone()).or_default().extend(ds);
    }

    let fact_order = topo_order(&fact_deps).map_err(|stuck| find_cycle(&fact_deps, &stuck));
    let rule_order = topo_order(&rule_deps).map_err(|stuck| {
        // Spell the cycle out as rule -> fact -> rule.
        let cyc = find_cycle(&rule_deps, &stuck);
        let mut path = Vec::new();
        for pair in cyc.windows(2) {
            let (from, to) = (&pair[0], &pair[1]);
            path.push(from.clone());
            let via = rules
                .iter()
                .find(|r| &r.name == from)
                .and_then(|r| {
                    r.condition.fact_refs().into_iter().find(|f| deriver.get(f.as_str()) == Some(&to.as_str()))
                })
                .unwrap_or_default();
            path.push(via);
        }
        path.push(cyc.last().cloned().unwrap_or_default());
        path
    });
    if let Err(path) = &fact_order {
        errors.push(ValidationError::CyclicDependency { path: path.clone() });
    }
    if let Err(path) = &rule_order {
        errors.push(ValidationError::CyclicDependency { path: path.clone() });
    }

    if !errors.is_empty() {
        errors.sort_by_key(|e| e.to_string());
        errors.dedup();
        return Err(errors);
    }

    let by_fact: BTreeMap<&str, &Fact> = facts.iter().map(|f| (f.name.as_str(), f)).collect();
    let by_rule: BTreeMap<&str, &Rule> = rules.iter().map(|r| (r.name.as_str(), r)).collect();
    Ok(DependencyPlan {
        facts: fact_order.expect("checked").iter().map(|n| by_fact[n.as_str()].clone()).collect(),
        rules: rule_order.expect("checked").iter().map(|n| by_rule[n.as_str()].clone()).collect(),
    })
}

/// Outcome of one inference pass.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct InferenceResult {
    pub fact_values: BTreeMap<String, bool>,
    pub fired_rules: Vec<String>,
    pub publishers_to_run: BTreeSet<String>,
}

impl InferenceResult {
    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("inference results serialize")
    }

    pub fn from_value(v: &Value) -> Result<Self, serde_json::Error> {
        serde_json::from_value(v.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferenceError {
    #[error("missing product `{product}` (needed by fact `{fact}`)")]
    MissingProduct { product: String, fact: String },
    #[error("evaluation of `{owner}` failed: {message}")]
    Evaluation { owner: String, message: String },
}

struct Layered<'p, 'f> {
    products: &'p dyn Fn(&str) -> Option<&'p Value>,
    facts: &'f BTreeMap<String, bool>,
}

impl Bindings for Layered<'_, '_> {
    fn product(&self, name: &str) -> Option<&Value> {
        (self.products)(name)
    }

    fn fact(&self, name: &str) -> Option<bool> {
        self.facts.get(name).copied()
    }
}

/// Evaluate all facts, then all rules, against the given products.
pub fn infer<'a>(
    plan: &DependencyPlan,
    products: &'a dyn Fn(&str) -> Option<&'a Value>,
) -> Result<InferenceResult, InferenceError> {
    for f in &plan.facts {
        if let Some(p) = f.expr.product_refs().into_iter().find(|p| products(p).is_none()) {
            return Err(InferenceError::MissingProduct { product: p, fact: f.name.clone() });
        }
    }
    let mut values: BTreeMap<String, bool> = BTreeMap::new();
    let mut fired = Vec::new();
    let mut publishers = BTreeSet::new();

    for f in &plan.facts {
        let v = {
            let env = Layered { products, facts: &values };
            evaluate_bool(&f.expr, &env).map_err(|e| eval_failure(&f.name, e))?
        };
        values.insert(f.name.clone(), v);
    }
    for r in &plan.rules {
        let v = {
            let env = Layered { products, facts: &values };
            evaluate_bool(&r.condition, &env).map_err(|e| eval_failure(&r.name, e))?
        };
        for d in &r.derived_facts {
            values.insert(d.clone(), v);
        }
        if v {
            fired.push(r.name.clone());
            publishers.extend(r.actions.iter().cloned());
        }
    }
    Ok(InferenceResult { fact_values: values, fired_rules: fired, publishers_to_run: publishers })
}

fn eval_failure(owner: &str, e: EvalError) -> InferenceError {
    match e {
        EvalError::MissingProduct(p) => InferenceError::MissingProduct { product: p, fact: owner.to_string() },
        other => InferenceError::Evaluation { owner: owner.to_string(), message: other.to_string() },
    }
}

/// Convenience wrapper over [`infer`] for a plain product map.
pub fn infer_from_map(
    plan: &DependencyPlan,
    products: &BTreeMap<String, Value>,
) -> Result<InferenceResult, InferenceError> {
    let lookup = |n: &str| products.get(n);
    infer(plan, &lookup)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::logic::parser::parse_expression;
    use serde_json::json;

    fn p(s: &str) -> Expr {
        parse_expression(s).unwrap()
    }

    fn idle_channel() -> (Vec<Fact>, Vec<Rule>) {
        (
            vec![Fact::new("has_idle", p(r#"count(product("idle_jobs")) > 0"#))],
            vec![Rule::new("provision", p(r#"fact("has_idle")"#)).publish("provisioner")],
        )
    }

    #[test]
    fn single_chain_fires_with_idle_jobs() {
        let (facts, rules) = idle_channel();
        let plan = validate(&facts, &rules).unwrap();
        let products = BTreeMap::from([("idle_jobs".to_string(), json!([1, 2, 3]))]);
        let r = infer_from_map(&plan, &products).unwrap();
        assert_eq!(r.publishers_to_run, BTreeSet::from(["provisioner".to_string()]));
        assert_eq!(r.fired_rules, vec!["provision"]);

        let products = BTreeMap::from([("idle_jobs".to_string(), json!([]))]);
        let r = infer_from_map(&plan, &products).unwrap();
        assert!(r.publishers_to_run.is_empty());
        assert!(r.fired_rules.is_empty());
    }

    #[test]
    fn chained_rules_order_by_dependency() {
        let facts = vec![Fact::new("A", p("true"))];
        let rules =
            vec![Rule::new("R2", p(r#"fact("B")"#)).publish("P"), Rule::new("R1", p(r#"fact("A")"#)).derive("B")];
        let plan = validate(&facts, &rules).unwrap();
        assert_eq!(plan.rule_order(), vec!["R1", "R2"]);
        let r = infer_from_map(&plan, &BTreeMap::new()).unwrap();
        assert!(r.publishers_to_run.contains("P"));
        assert!(r.fact_values["B"]);
    }

    #[test]
    fn two_cycle_rejected_with_path() {
        let facts = vec![];
        let rules =
            vec![Rule::new("R1", p(r#"fact("F1")"#)).derive("F2"), Rule::new("R2", p(r#"fact("F2")"#)).derive("F1")];
        let errs = validate(&facts, &rules).unwrap_err();
        assert_eq!(
            errs,
            vec![ValidationError::CyclicDependency {
                path: vec!["R1".into(), "F1".into(), "R2".into(), "F2".into(), "R1".into()]
            }]
        );
    }

    #[test]
    fn empty_rule_set_is_valid() {
        let plan = validate(&[], &[]).unwrap();
        assert!(plan.rules().is_empty());
        assert_eq!(infer_from_map(&plan, &BTreeMap::new()).unwrap(), InferenceResult::default());
    }

    #[test]
    fn structural_errors_are_all_reported() {
        let facts = vec![Fact::new("a", p("1 + 1")), Fact::new("a", p("true")), Fact::new("b", p(r#"fact("d")"#))];
        let rules = vec![
            Rule::new("r", p(r#"fact("nope") and product("x").y > 1"#)).derive("d"),
            Rule::new("s", p(r#"fact("s_self")"#)).derive("s_self"),
        ];
        let errs = validate(&facts, &rules).unwrap_err();
        let has = |pred: &dyn Fn(&ValidationError) -> bool| errs.iter().any(pred);
        assert!(has(&|e| matches!(e, ValidationError::DuplicateName { name } if name == "a")));
        assert!(has(&|e| matches!(e, ValidationError::NotBoolean { .. })));
        assert!(has(&|e| matches!(e, ValidationError::BaseFactUsesDerived { .. })));
        assert!(has(&|e| matches!(e, ValidationError::UndefinedFact { fact, .. } if fact == "nope")));
        assert!(has(&|e| matches!(e, ValidationError::ProductInRule { .. })));
        assert!(has(&|e| matches!(e, ValidationError::CyclicDependency { path } if path[0] == "s")));
    }

    #[test]
    fn base_facts_may_chain_among_themselves() {
        let facts = vec![Fact::new("b", p(r#"not fact("a")"#)), Fact::new("a", p("false"))];
        let plan = validate(&facts, &[]).unwrap();
        let r = infer_from_map(&plan, &BTreeMap::new()).unwrap();
        assert!(r.fact_values["b"]);
        let errs = validate(&[Fact::new("x", p(r#"fact("y")"#)), Fact::new("y", p(r#"fact("x")"#))], &[]).unwrap_err();
        assert!(matches!(&errs[0], ValidationError::CyclicDependency { path } if path.len() == 3));
    }

    #[test]
    fn missing_product_and_eval_errors() {
        let (facts, rules) = idle_channel();
        let plan = validate(&facts, &rules).unwrap();
        assert_eq!(
            infer_from_map(&plan, &BTreeMap::new()).unwrap_err(),
            InferenceError::MissingProduct { product: "idle_jobs".into(), fact: "has_idle".into() }
        );
        let plan = validate(&[Fact::new("z", p(r#"product("n") / 0 > 1"#))], &[]).unwrap();
        let products = BTreeMap::from([("n".to_string(), json!(1))]);
        assert!(matches!(infer_from_map(&plan, &products), Err(InferenceError::Evaluation { .. })));
        let plan = validate(&[Fact::new("z", p(r#"product("n")"#))], &[]).unwrap();
        assert!(matches!(infer_from_map(&plan, &products), Err(InferenceError::Evaluation { .. })));
    }

    #[test]
    fn unfired_rule_derives_false() {
        let facts = vec![Fact::new("A", p("false"))];
        let rules = vec![Rule::new("R1", p(r#"fact("A")"#)).derive("B")];
        let plan = validate(&facts, &rules).unwrap();
        let r = infer_from_map(&plan, &BTreeMap::new()).unwrap();
        assert!(!r.fact_values["B"]);
    }
}
