//! Domain types: meta-domains, domains, tasks, policies, plans, validation
//! outcomes and engine configuration.
//!
//! Every type here is plain data. Construction helpers check invariants; the
//! canonical text form is compact JSON with declaration-order fields and
//! sorted maps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lang;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("duplicate api {app}.{api} in catalog")]
    DuplicateApi { app: String, api: String },
    #[error("api {app}.{api} has an empty description")]
    EmptyDescription { app: String, api: String },
    #[error("domain {0} has no tasks")]
    EmptyDomain(String),
    #[error("duplicate task id {task} in domain {domain}")]
    DuplicateTask { domain: String, task: String },
    #[error("task {0} has an empty instruction")]
    EmptyInstruction(String),
    #[error("task {0} has no goal tests")]
    NoGoalTests(String),
    #[error("duplicate parameter {0} in signature")]
    DuplicateParam(String),
    #[error("invalid signature text: {0}")]
    BadSignature(String),
    #[error("policy source does not parse: {0}")]
    PolicyParse(String),
    #[error("policy signature {expected} does not match source header {found}")]
    SignatureDrift { expected: String, found: String },
    #[error("referenced component {0} is never called in the policy source")]
    UncalledComponent(String),
    #[error("passed outcome for {0} carries failures")]
    InconsistentOutcome(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("canonical decode failed: {0}")]
    Decode(String),
}

/// Canonical text serialization shared by every persisted type.
pub trait Canonical: Serialize + DeserializeOwned {
    fn to_canonical(&self) -> String {
        serde_json::to_string(self).expect("model types always serialize")
    }

    fn to_canonical_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("model types always serialize")
    }

    fn from_canonical(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Decode(e.to_string()))
    }
}

impl<T: Serialize + DeserializeOwned> Canonical for T {}

/// Dynamic value flowing through API arguments and responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Null,
    Bool(bool),
    Num(f64),
    Str(String),
    List(Vec<Value>),
    Record(BTreeMap<String, Value>),
}

impl Value {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "boolean",
            Value::Num(_) => "number",
            Value::Str(_) => "string",
            Value::List(_) => "list",
            Value::Record(_) => "record",
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_num(&self) -> Option<f64> {
        match self {
            Value::Num(n) => Some(*n),
            _ => None,
        }
    }

    pub fn record(fields: impl IntoIterator<Item = (impl Into<String>, Value)>) -> Value {
        Value::Record(fields.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::Num(n)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<&Literal> for Value {
    fn from(lit: &Literal) -> Self {
        match lit {
            Literal::Str(s) => Value::Str(s.clone()),
            Literal::Num(n) => Value::Num(*n),
            Literal::Bool(b) => Value::Bool(*b),
            Literal::StrList(items) => Value::List(items.iter().map(|s| Value::Str(s.clone())).collect()),
        }
    }
}

/// Semantic type tag of a policy parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamType {
    String,
    Number,
    Boolean,
    #[serde(rename = "list")]
    ListOfString,
}

impl ParamType {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamType::String => "string",
            ParamType::Number => "number",
            ParamType::Boolean => "boolean",
            ParamType::ListOfString => "list",
        }
    }
}

impl fmt::Display for ParamType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ParamType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "string" | "str" | "date" => Ok(ParamType::String),
            "number" | "num" => Ok(ParamType::Number),
            "boolean" | "bool" => Ok(ParamType::Boolean),
            "list" | "list<string>" | "list-of-string" => Ok(ParamType::ListOfString),
            other => Err(ModelError::BadSignature(format!("unknown parameter type `{other}`"))),
        }
    }
}

/// Parameter literal bound into a plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Literal {
    Bool(bool),
    Num(f64),
    Str(String),
    StrList(Vec<String>),
}

impl Literal {
    pub fn kind(&self) -> ParamType {
        match self {
            Literal::Str(_) => ParamType::String,
            Literal::Num(_) => ParamType::Number,
            Literal::Bool(_) => ParamType::Boolean,
            Literal::StrList(_) => ParamType::ListOfString,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiParam {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApiDoc {
    pub app: String,
    pub api: String,
    pub params: Vec<ApiParam>,
    pub description: String,
    /// Whether the call requires a logged-in session.
    #[serde(default)]
    pub protected: bool,
}

impl ApiDoc {
    pub fn qualified_name(&self) -> String {
        format!("{}.{}", self.app, self.api)
    }

    /// One-line rendering used in prompts and as embedding text.
    pub fn summary_line(&self) -> String {
        let params = self
            .params
            .iter()
            .map(|p| format!("{}: {}", p.name, p.ty))
            .collect::<Vec<_>>()
            .join(", ");
        format!("{}.{}({}) - {}", self.app, self.api, params, self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaDomainDescriptor {
    pub name: String,
    pub api_catalog: Vec<ApiDoc>,
}

impl MetaDomainDescriptor {
    pub fn new(name: impl Into<String>, api_catalog: Vec<ApiDoc>) -> Result<Self, ModelError> {
        let md = Self { name: name.into(), api_catalog };
        md.validate()?;
        Ok(md)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let mut seen = BTreeSet::new();
        for doc in &self.api_catalog {
            if !seen.insert((doc.app.as_str(), doc.api.as_str())) {
                return Err(ModelError::DuplicateApi { app: doc.app.clone(), api: doc.api.clone() });
            }
            if doc.description.trim().is_empty() {
                return Err(ModelError::EmptyDescription { app: doc.app.clone(), api: doc.api.clone() });
            }
        }
        Ok(())
    }

    pub fn lookup(&self, app: &str, api: &str) -> Option<&ApiDoc> {
        self.api_catalog.iter().find(|d| d.app == app && d.api == api)
    }
}

/// Check performed on the final world state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum StatePredicate {
    /// Some record of `kind` in `app` has every listed field equal.
    RecordExists { app: String, kind: String, fields: BTreeMap<String, Value> },
    /// No record of `kind` in `app` matches the listed fields.
    RecordAbsent { app: String, kind: String, fields: BTreeMap<String, Value> },
    /// Exactly `count` records of `kind` match.
    RecordCount { app: String, kind: String, fields: BTreeMap<String, Value>, count: usize },
    /// Record `id` has `field` equal to `value`.
    FieldEquals { app: String, id: String, field: String, value: Value },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalTest {
    pub name: String,
    pub predicate: StatePredicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub id: String,
    pub instruction: String,
    /// Opaque to the engine; only the validator interprets it.
    pub initial_state_seed: String,
    pub goal_tests: Vec<GoalTest>,
}

impl TaskInstance {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.instruction.trim().is_empty() {
            return Err(ModelError::EmptyInstruction(self.id.clone()));
        }
        if self.goal_tests.is_empty() {
            return Err(ModelError::NoGoalTests(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub id: String,
    pub tasks: Vec<TaskInstance>,
}

impl Domain {
    pub fn new(id: impl Into<String>, tasks: Vec<TaskInstance>) -> Result<Self, ModelError> {
        let d = Self { id: id.into(), tasks };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.tasks.is_empty() {
            return Err(ModelError::EmptyDomain(self.id.clone()));
        }
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if !seen.insert(t.id.as_str()) {
                return Err(ModelError::DuplicateTask { domain: self.id.clone(), task: t.id.clone() });
            }
            t.validate()?;
        }
        Ok(())
    }

    pub fn task(&self, id: &str) -> Option<&TaskInstance> {
        self.tasks.iter().find(|t| t.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignatureParam {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
}

/// Name and typed parameter list of a policy or component.
///
/// Canonical text form: `name(a: string, b: number)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolicySignature {
    pub name: String,
    pub params: Vec<SignatureParam>,
}

impl PolicySignature {
    pub fn new(name: impl Into<String>, params: Vec<(&str, ParamType)>) -> Result<Self, ModelError> {
        let sig = Self {
            name: name.into(),
            params: params.into_iter().map(|(n, ty)| SignatureParam { name: n.to_string(), ty }).collect(),
        };
        sig.validate()?;
        Ok(sig)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !lang::is_identifier(&self.name) {
            return Err(ModelError::BadSignature(format!("`{}` is not an identifier", self.name)));
        }
        let mut seen = BTreeSet::new();
        for p in &self.params {
            if !lang::is_identifier(&p.name) {
                return Err(ModelError::BadSignature(format!("`{}` is not an identifier", p.name)));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(ModelError::DuplicateParam(p.name.clone()));
            }
        }
        Ok(())
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn param_type(&self, name: &str) -> Option<ParamType> {
        self.params.iter().find(|p| p.name == name).map(|p| p.ty)
    }
}

impl fmt::Display for PolicySignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.name)?;
        for (i, p) in self.params.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{}: {}", p.name, p.ty)?;
        }
        f.write_str(")")
    }
}

impl FromStr for PolicySignature {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let open = s.find('(').ok_or_else(|| ModelError::BadSignature(format!("missing `(` in `{s}`")))?;
        if !s.ends_with(')') {
            return Err(ModelError::BadSignature(format!("missing `)` in `{s}`")));
        }
        let name = s[..open].trim().to_string();
        let inner = s[open + 1..s.len() - 1].trim();
        let mut params = Vec::new();
        if !inner.is_empty() {
            for part in inner.split(',') {
                let (pname, ty) = part
                    .split_once(':')
                    .ok_or_else(|| ModelError::BadSignature(format!("parameter `{}` lacks a type", part.trim())))?;
                params.push(SignatureParam { name: pname.trim().to_string(), ty: ty.parse()? });
            }
        }
        let sig = PolicySignature { name, params };
        sig.validate()?;
        Ok(sig)
    }
}

/// Parameterized program for a whole domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub signature: PolicySignature,
    pub source: String,
    pub referenced_components: Vec<ComponentId>,
}

impl Policy {
    /// Builds a policy, checking that the source parses, its header matches
    /// the signature, and every referenced component is actually called.
    ///
    /// `component_names` maps each referenced id to the name used at call sites.
    pub fn new(
        signature: PolicySignature,
        source: impl Into<String>,
        referenced: Vec<(ComponentId, String)>,
    ) -> Result<Self, ModelError> {
        let source = source.into();
        let ast = lang::parse(&source).map_err(|e| ModelError::PolicyParse(e.to_string()))?;
        let header: Vec<&str> = ast.root.params.iter().map(String::as_str).collect();
        if ast.root.name != signature.name || header != signature.param_names() {
            return Err(ModelError::SignatureDrift {
                expected: signature.to_string(),
                found: format!("{}({})", ast.root.name, header.join(", ")),
            });
        }
        let called = ast.component_calls();
        for (id, name) in &referenced {
            if !called.contains(name.as_str()) {
                return Err(ModelError::UncalledComponent(id.to_string()));
            }
        }
        Ok(Self { signature, source, referenced_components: referenced.into_iter().map(|(id, _)| id).collect() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterBinding {
    pub task_id: String,
    pub values: BTreeMap<String, Literal>,
}

/// A policy with every parameter bound, ready for the validator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub task_id: String,
    pub instantiated_source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallOutcome {
    Ok(Value),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiCallRecord {
    pub app: String,
    pub api: String,
    pub args: BTreeMap<String, Value>,
    pub outcome: CallOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutcome {
    pub task_id: String,
    pub passed: bool,
    pub failed_tests: Vec<String>,
    pub error: Option<String>,
    pub trace: Vec<ApiCallRecord>,
}

impl ValidationOutcome {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.passed && (!self.failed_tests.is_empty() || self.error.is_some()) {
            return Err(ModelError::InconsistentOutcome(self.task_id.clone()));
        }
        Ok(())
    }
}

/// Identifier of a stored component.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(pub String);

impl ComponentId {
    pub fn from_ordinal(n: u64) -> Self {
        ComponentId(format!("cmp-{n:04}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ComponentId {
    fn from(s: &str) -> Self {
        ComponentId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub retrieval_k: usize,
    pub cluster_threshold: f64,
    pub debug_budget: usize,
    pub generalization_trigger: usize,
    pub price_per_m_input: f64,
    pub price_per_m_output: f64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            retrieval_k: 20,
            cluster_threshold: 0.85,
            debug_budget: 3,
            generalization_trigger: 20,
            price_per_m_input: 3.0,
            price_per_m_output: 15.0,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.retrieval_k == 0 {
            return Err(ModelError::Config("retrieval_k must be positive".into()));
        }
        if !(self.cluster_threshold > 0.0 && self.cluster_threshold <= 1.0) {
            return Err(ModelError::Config("cluster_threshold must lie in (0, 1]".into()));
        }
        if self.debug_budget == 0 {
            return Err(ModelError::Config("debug_budget must be positive".into()));
        }
        if self.generalization_trigger == 0 {
            return Err(ModelError::Config("generalization_trigger must be positive".into()));
        }
        if !(self.price_per_m_input > 0.0 && self.price_per_m_output > 0.0) {
            return Err(ModelError::Config("prices must be positive".into()));
        }
        Ok(())
    }
}

/// Names that failed to line up between a signature and a binding.
#[derive(Debug, Clone, Default, PartialEq, Eq, Error)]
#[error("binding mismatch: missing {missing:?}, extra {extra:?}, type {type_mismatch:?}")]
pub struct BindingMismatch {
    pub missing: Vec<String>,
    pub extra: Vec<String>,
    pub type_mismatch: Vec<String>,
}

impl BindingMismatch {
    pub fn is_empty(&self) -> bool {
        self.missing.is_empty() && self.extra.is_empty() && self.type_mismatch.is_empty()
    }
}

pub fn check_binding(signature: &PolicySignature, binding: &ParameterBinding) -> Result<(), BindingMismatch> {
    let mut report = BindingMismatch::default();
    for p in &signature.params {
        match binding.values.get(&p.name) {
            None => report.missing.push(p.name.clone()),
            Some(lit) if lit.kind() != p.ty => report.type_mismatch.push(p.name.clone()),
            Some(_) => {}
        }
    }
    for name in binding.values.keys() {
        if signature.param_type(name).is_none() {
            report.extra.push(name.clone());
        }
    }
    if report.is_empty() {
        Ok(())
    } else {
        Err(report)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn binding(values: Vec<(&str, Literal)>) -> ParameterBinding {
        ParameterBinding {
            task_id: "t".into(),
            values: values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    #[test]
    fn empty_signature_accepts_empty_binding() {
        let sig = PolicySignature::new("p", vec![]).unwrap();
        assert!(check_binding(&sig, &binding(vec![])).is_ok());
    }

    #[test]
    fn kind_mismatch_is_reported() {
        let sig = PolicySignature::new("p", vec![("amount", ParamType::Number)]).unwrap();
        let err = check_binding(&sig, &binding(vec![("amount", Literal::Str("x".into()))])).unwrap_err();
        assert_eq!(err.type_mismatch, vec!["amount".to_string()]);
        assert!(err.missing.is_empty() && err.extra.is_empty());
    }

    #[test]
    fn missing_and_extra_are_set_differences() {
        let sig = PolicySignature::new("p", vec![("a", ParamType::Number), ("b", ParamType::Number)]).unwrap();
        let err = check_binding(&sig, &binding(vec![("a", Literal::Num(1.0))])).unwrap_err();
        assert_eq!(err.missing, vec!["b".to_string()]);
        let err = check_binding(
            &sig,
            &binding(vec![("a", Literal::Num(1.0)), ("b", Literal::Num(2.0)), ("c", Literal::Bool(true))]),
        )
        .unwrap_err();
        assert_eq!(err.extra, vec!["c".to_string()]);
    }

    #[test]
    fn signature_text_round_trip() {
        let sig: PolicySignature = "pay(recipient: string, amount: number, tags: list)".parse().unwrap();
        assert_eq!(sig.to_string(), "pay(recipient: string, amount: number, tags: list)");
        assert_eq!("p()".parse::<PolicySignature>().unwrap().params.len(), 0);
        assert!(matches!("p(a: string, a: number)".parse::<PolicySignature>(), Err(ModelError::DuplicateParam(_))));
        assert!("p(a)".parse::<PolicySignature>().is_err());
    }

    #[test]
    fn catalog_invariants() {
        let doc = |app: &str, api: &str, d: &str| ApiDoc {
            app: app.into(),
            api: api.into(),
            params: vec![],
            description: d.into(),
            protected: false,
        };
        assert!(MetaDomainDescriptor::new("m", vec![doc("a", "x", "d"), doc("a", "y", "d")]).is_ok());
        assert!(matches!(
            MetaDomainDescriptor::new("m", vec![doc("a", "x", "d"), doc("a", "x", "e")]),
            Err(ModelError::DuplicateApi { .. })
        ));
        assert!(matches!(
            MetaDomainDescriptor::new("m", vec![doc("a", "x", " ")]),
            Err(ModelError::EmptyDescription { .. })
        ));
    }

    #[test]
    fn domain_and_task_invariants() {
        let task = |id: &str, instr: &str, tests: usize| TaskInstance {
            id: id.into(),
            instruction: instr.into(),
            initial_state_seed: "s".into(),
            goal_tests: (0..tests)
                .map(|i| GoalTest {
                    name: format!("g{i}"),
                    predicate: StatePredicate::RecordExists {
                        app: "a".into(),
                        kind: "k".into(),
                        fields: BTreeMap::new(),
                    },
                })
                .collect(),
        };
        assert!(Domain::new("d", vec![task("t1", "do", 1)]).is_ok());
        assert!(matches!(Domain::new("d", vec![]), Err(ModelError::EmptyDomain(_))));
        assert!(matches!(
            Domain::new("d", vec![task("t1", "do", 1), task("t1", "do", 1)]),
            Err(ModelError::DuplicateTask { .. })
        ));
        assert!(matches!(Domain::new("d", vec![task("t1", "", 1)]), Err(ModelError::EmptyInstruction(_))));
        assert!(matches!(Domain::new("d", vec![task("t1", "x", 0)]), Err(ModelError::NoGoalTests(_))));
    }

    #[test]
    fn policy_checks_header_and_calls() {
        let sig = PolicySignature::new("p", vec![("x", ParamType::Number)]).unwrap();
        assert!(Policy::new(sig.clone(), "fn p(x) { return x }", vec![]).is_ok());
        assert!(matches!(
            Policy::new(sig.clone(), "fn q(x) { return x }", vec![]),
            Err(ModelError::SignatureDrift { .. })
        ));
        assert!(matches!(
            Policy::new(sig.clone(), "fn p(x) { return x }", vec![("cmp-0001".into(), "helper".into())]),
            Err(ModelError::UncalledComponent(_))
        ));
        assert!(Policy::new(sig, "fn p(x) { helper(x) }", vec![("cmp-0001".into(), "helper".into())]).is_ok());
    }

    #[test]
    fn config_defaults() {
        let c = EngineConfig::default();
        assert_eq!((c.retrieval_k, c.debug_budget, c.generalization_trigger), (20, 3, 20));
        assert_eq!(c.cluster_threshold, 0.85);
        assert_eq!((c.price_per_m_input, c.price_per_m_output), (3.0, 15.0));
        assert!(c.validate().is_ok());
        assert!(EngineConfig { cluster_threshold: 1.5, ..c.clone() }.validate().is_err());
        assert!(EngineConfig { debug_budget: 0, ..c }.validate().is_err());
    }

    fn literal() -> impl Strategy<Value = Literal> {
        prop_oneof![
            any::<bool>().prop_map(Literal::Bool),
            (-1.0e9f64..1.0e9).prop_map(Literal::Num),
            "[a-z@. ]{0,12}".prop_map(Literal::Str),
            proptest::collection::vec("[a-z]{0,6}", 0..4).prop_map(Literal::StrList),
        ]
    }

    fn value() -> impl Strategy<Value = Value> {
        let leaf = prop_oneof![
            Just(Value::Null),
            any::<bool>().prop_map(Value::Bool),
            (-1.0e6f64..1.0e6).prop_map(Value::Num),
            "[a-z0-9]{0,8}".prop_map(Value::Str),
        ];
        leaf.prop_recursive(3, 16, 4, |inner| {
            prop_oneof![
                proptest::collection::vec(inner.clone(), 0..4).prop_map(Value::List),
                proptest::collection::btree_map("[a-z]{1,5}", inner, 0..4).prop_map(Value::Record),
            ]
        })
    }

    proptest! {
        #[test]
        fn binding_round_trip(values in proptest::collection::btree_map("[a-z]{1,6}", literal(), 0..5)) {
            let b = ParameterBinding { task_id: "t1".into(), values };
            prop_assert_eq!(ParameterBinding::from_canonical(&b.to_canonical()).unwrap(), b);
        }

        #[test]
        fn outcome_round_trip(args in proptest::collection::btree_map("[a-z]{1,4}", value(), 0..3), resp in value(), ok in any::<bool>()) {
            let outcome = ValidationOutcome {
                task_id: "t".into(),
                passed: false,
                failed_tests: vec!["g".into()],
                error: Some("boom".into()),
                trace: vec![ApiCallRecord {
                    app: "pay".into(),
                    api: "transfer".into(),
                    args,
                    outcome: if ok { CallOutcome::Ok(resp) } else { CallOutcome::Error("e".into()) },
                }],
            };
            prop_assert_eq!(ValidationOutcome::from_canonical(&outcome.to_canonical()).unwrap(), outcome);
        }

        #[test]
        fn accepted_bindings_instantiate(n in 0usize..4, kinds in proptest::collection::vec(0u8..4, 4)) {
            let tys = [ParamType::String, ParamType::Number, ParamType::Boolean, ParamType::ListOfString];
            let names = ["a", "b", "c", "d"];
            let params: Vec<(&str, ParamType)> = (0..n).map(|i| (names[i], tys[kinds[i] as usize])).collect();
            let sig = PolicySignature::new("p", params.clone()).unwrap();
            let values = params.iter().map(|(name, ty)| {
                let lit = match ty {
                    ParamType::String => Literal::Str("s".into()),
                    ParamType::Number => Literal::Num(2.0),
                    ParamType::Boolean => Literal::Bool(true),
                    ParamType::ListOfString => Literal::StrList(vec!["x".into()]),
                };
                (name.to_string(), lit)
            }).collect();
            let b = ParameterBinding { task_id: "t".into(), values };
            prop_assert!(check_binding(&sig, &b).is_ok());
            let body = names[..n].iter().map(|p| format!("let v_{p} = {p}\n")).collect::<String>();
            let src = format!("fn p({}) {{\n{body}}}", names[..n].join(", "));
            let policy = Policy::new(sig, src, vec![]).unwrap();
            prop_assert!(lang::instantiate(&policy, &b).is_ok());
        }
    }

    #[test]
    fn signature_and_task_round_trip() {
        let sig: PolicySignature = "p(a: string, b: list)".parse().unwrap();
        assert_eq!(PolicySignature::from_canonical(&sig.to_canonical()).unwrap(), sig);
        let task = TaskInstance {
            id: "t".into(),
            instruction: "do it".into(),
            initial_state_seed: "seed".into(),
            goal_tests: vec![GoalTest {
                name: "sent".into(),
                predicate: StatePredicate::FieldEquals {
                    app: "mail".into(),
                    id: "m1".into(),
                    field: "to".into(),
                    value: "a@x".into(),
                },
            }],
        };
        assert_eq!(TaskInstance::from_canonical(&task.to_canonical()).unwrap(), task);
        let cfg = EngineConfig::default();
        assert_eq!(EngineConfig::from_canonical(&cfg.to_canonical()).unwrap(), cfg);
    }
}
