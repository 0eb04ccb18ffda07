//! The LLM-facing agents: prompt construction from templates and strict
//! parsing of fenced-block replies.
//!
//! Every agent is a pure function of its template, inputs and the backend's
//! reply. Prompts never carry component bodies, except for the
//! generalization agent, whose job is to rewrite them.

mod envelope;
mod templates;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

pub use envelope::{list_items, Block, Envelope};
pub use templates::{render, Templates, TEMPLATE_FILES};

use crate::gateway::{CompletionRequest, Gateway, GatewayError, RequestMeta};
use crate::lang;
use crate::model::{
    check_binding, ApiCallRecord, ApiDoc, CallOutcome, Canonical, ComponentId, Domain, ParameterBinding, Policy,
    PolicySignature, ValidationOutcome,
};
use crate::repository::{Component, ComponentDraft};
use crate::retrieval::{Embedder, EntryKind, VectorIndex};

/// Trace records kept per failed task in debug prompts.
pub const TRACE_TAIL: usize = 20;
/// Longest rendering of a single trace record.
const RECORD_CHARS: usize = 300;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("{agent} reply: {message}")]
    Malformed { agent: String, message: String },
    #[error("{agent} reply is missing the `{tag}` block")]
    MissingBlock { agent: String, tag: String },
    #[error("bad `{tag}` block: {message}\n--- block ---\n{block}")]
    BadBlock { tag: String, message: String, block: String },
    #[error("bindings do not match the tasks: {0}")]
    Bindings(String),
    #[error("signature mismatch: expected {expected}, found {found}")]
    SignatureMismatch { expected: String, found: String },
    #[error("call to unknown component `{0}`")]
    UnknownComponent(String),
    #[error("replaced id `{0}` is not a member of the cluster")]
    NotMember(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("template: {0}")]
    Template(String),
}

pub const AGENT_ABSTRACTION: &str = "abstraction";
pub const AGENT_GENERATE: &str = "generate";
pub const AGENT_DEBUG: &str = "debug";
pub const AGENT_DECOMPOSE: &str = "decompose";
pub const AGENT_GENERALIZE: &str = "generalize";

/// Shared structure induced from a domain's tasks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbstractionResult {
    pub high_level_steps: Vec<String>,
    pub signature: PolicySignature,
    /// One per task, in task order.
    pub bindings: Vec<ParameterBinding>,
}

impl AbstractionResult {
    /// Text embedded for component and api retrieval.
    pub fn query_text(&self) -> String {
        self.high_level_steps.join(" ")
    }

    fn steps_block(&self) -> String {
        self.high_level_steps.iter().enumerate().map(|(i, s)| format!("{}. {s}", i + 1)).collect::<Vec<_>>().join("\n")
    }

    fn bindings_block(&self) -> String {
        self.bindings.iter().map(Canonical::to_canonical).collect::<Vec<_>>().join("\n")
    }
}

/// What the policy generator sees besides the abstraction.
#[derive(Debug, Clone, Default)]
pub struct GenerationContext {
    /// `summaries_for_prompt` blocks of the retrieved components.
    pub component_summaries: Vec<String>,
    /// Callable components by name.
    pub components: BTreeMap<String, ComponentId>,
    pub api_docs: Vec<ApiDoc>,
}

/// Components factored out of a validated policy, not yet stored.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub components: Vec<ComponentDraft>,
    /// Updated policy source; same header as the original.
    pub policy_source: String,
}

impl Decomposition {
    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// A domain policy the generalization agent may rewrite.
#[derive(Debug, Clone, PartialEq)]
pub struct AffectedPolicy {
    pub domain: String,
    pub policy: Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneralizationProposal {
    pub cluster: usize,
    pub components: Vec<ComponentDraft>,
    /// domain id -> revised policy source
    pub updated_policies: BTreeMap<String, String>,
    pub replaced: Vec<ComponentId>,
}

impl GeneralizationProposal {
    pub fn keeps_all(&self) -> bool {
        self.components.is_empty() && self.replaced.is_empty() && self.updated_policies.is_empty()
    }
}

/// Top-`k` component ids for an abstraction; api-doc entries are skipped.
pub fn search_components(
    abstraction: &AbstractionResult,
    index: &VectorIndex<f64>,
    embedder: &dyn Embedder<f64>,
    k: usize,
) -> Vec<ComponentId> {
    if index.is_empty() || k == 0 {
        return Vec::new();
    }
    let Ok(query) = embedder.embed(&abstraction.query_text()) else {
        return Vec::new();
    };
    index
        .search_filtered(&query, k, |e| e.kind == EntryKind::Component)
        .unwrap_or_default()
        .into_iter()
        .map(|(id, _)| ComponentId(id))
        .collect()
}

/// Top-`k` api docs for an abstraction, from an index of api-doc entries
/// keyed by qualified name.
pub fn search_api_docs(
    abstraction: &AbstractionResult,
    index: &VectorIndex<f64>,
    embedder: &dyn Embedder<f64>,
    docs: &[ApiDoc],
    k: usize,
) -> Vec<ApiDoc> {
    let Ok(query) = embedder.embed(&abstraction.query_text()) else {
        return Vec::new();
    };
    let by_name: BTreeMap<String, &ApiDoc> = docs.iter().map(|d| (d.qualified_name(), d)).collect();
    index
        .search_filtered(&query, k, |e| e.kind == EntryKind::ApiDoc)
        .unwrap_or_default()
        .into_iter()
        .filter_map(|(id, _)| by_name.get(&id).map(|d| (*d).clone()))
        .collect()
}

fn bullet_list(items: &[String]) -> String {
    if items.is_empty() {
        "(none)".into()
    } else {
        items.join("\n")
    }
}

fn indent(text: &str) -> String {
    text.trim_end().lines().map(|l| format!("    {l}")).collect::<Vec<_>>().join("\n")
}

fn render_record(r: &ApiCallRecord) -> String {
    let args: Vec<String> =
        r.args.iter().map(|(k, v)| format!("{k}: {}", serde_json::to_string(v).unwrap_or_default())).collect();
    let outcome = match &r.outcome {
        CallOutcome::Ok(v) => format!("ok {}", serde_json::to_string(v).unwrap_or_default()),
        CallOutcome::Error(e) => format!("error {e}"),
    };
    let mut line = format!("{}.{}({}) -> {outcome}", r.app, r.api, args.join(", "));
    if line.chars().count() > RECORD_CHARS {
        line = line.chars().take(RECORD_CHARS).collect::<String>() + "…";
    }
    line
}

/// Feedback for one failed task: error, failing goal tests, trace tail.
pub fn failure_report(outcome: &ValidationOutcome) -> String {
    let mut out = format!("task {}:\n", outcome.task_id);
    if let Some(e) = &outcome.error {
        out.push_str(&format!("  error: {e}\n"));
    }
    if !outcome.failed_tests.is_empty() {
        out.push_str(&format!("  failed goal tests: {}\n", outcome.failed_tests.join(", ")));
    }
    let skip = outcome.trace.len().saturating_sub(TRACE_TAIL);
    if skip > 0 {
        out.push_str(&format!("  trace (last {TRACE_TAIL} of {} calls):\n", outcome.trace.len()));
    } else {
        out.push_str(&format!("  trace ({} calls):\n", outcome.trace.len()));
    }
    for r in &outcome.trace[skip..] {
        out.push_str(&format!("    {}\n", render_record(r)));
    }
    out
}

fn parse_signature(tag: &str, text: &str) -> Result<PolicySignature, AgentError> {
    text.trim().parse().map_err(|e: crate::model::ModelError| AgentError::BadBlock {
        tag: tag.into(),
        message: e.to_string(),
        block: text.into(),
    })
}

#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct UsageNote {
    name: String,
    signature: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    usage: String,
}

/// The agents over one gateway and template set.
#[derive(Debug, Clone)]
pub struct Agents {
    gateway: Gateway,
    templates: Templates,
}

impl Agents {
    pub fn new(gateway: Gateway, templates: Templates) -> Self {
        Self { gateway, templates }
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn templates(&self) -> &Templates {
        &self.templates
    }

    fn ask(&self, agent: &str, domain: &str, prompt: String) -> Result<Envelope, AgentError> {
        let meta = RequestMeta { agent: agent.into(), domain: domain.into() };
        let reply = self.gateway.complete(CompletionRequest::user(prompt, meta))?;
        Envelope::parse(&reply.text).map_err(|message| AgentError::Malformed { agent: agent.into(), message })
    }

    fn require<'a>(agent: &str, env: &'a Envelope, tag: &str) -> Result<&'a Block, AgentError> {
        env.first(tag).ok_or_else(|| AgentError::MissingBlock { agent: agent.into(), tag: tag.into() })
    }

    // ---- abstraction ----

    pub fn abstraction_prompt(&self, domain: &Domain) -> Result<String, AgentError> {
        let tasks: Vec<String> = domain.tasks.iter().map(|t| format!("- [{}] {}", t.id, t.instruction)).collect();
        render(&self.templates.abstraction, &[("domain_id", &domain.id), ("tasks", &tasks.join("\n"))])
    }

    pub fn abstract_domain(&self, domain: &Domain) -> Result<AbstractionResult, AgentError> {
        if domain.tasks.is_empty() {
            return Err(AgentError::Precondition(format!("domain {} has no tasks", domain.id)));
        }
        let env = self.ask(AGENT_ABSTRACTION, &domain.id, self.abstraction_prompt(domain)?)?;
        parse_abstraction(&env, domain)
    }

    // ---- policy generation ----

    fn context_vars(ctx: &GenerationContext) -> (String, String) {
        let apis: Vec<String> = ctx.api_docs.iter().map(|d| format!("- {}", d.summary_line())).collect();
        (bullet_list(&ctx.component_summaries), bullet_list(&apis))
    }

    pub fn generate_prompt(&self, domain_id: &str, abstraction: &AbstractionResult, ctx: &GenerationContext) -> Result<String, AgentError> {
        let (components, apis) = Self::context_vars(ctx);
        render(
            &self.templates.generate,
            &[
                ("domain_id", domain_id),
                ("steps", &abstraction.steps_block()),
                ("signature", &abstraction.signature.to_string()),
                ("bindings", &abstraction.bindings_block()),
                ("components", &components),
                ("apis", &apis),
                ("language", self.templates.language.trim_end()),
            ],
        )
    }

    pub fn generate_policy(
        &self,
        domain_id: &str,
        abstraction: &AbstractionResult,
        ctx: &GenerationContext,
    ) -> Result<Policy, AgentError> {
        let env = self.ask(AGENT_GENERATE, domain_id, self.generate_prompt(domain_id, abstraction, ctx)?)?;
        parse_policy_reply(AGENT_GENERATE, &env, &abstraction.signature, &ctx.components)
    }

    // ---- debugging ----

    pub fn debug_prompt(
        &self,
        domain_id: &str,
        abstraction: &AbstractionResult,
        ctx: &GenerationContext,
        policy: &Policy,
        outcomes: &[ValidationOutcome],
        revision: usize,
    ) -> Result<String, AgentError> {
        let failures: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(failure_report).collect();
        if failures.is_empty() {
            return Err(AgentError::Precondition("debugging needs at least one failed task".into()));
        }
        let (components, apis) = Self::context_vars(ctx);
        render(
            &self.templates.debug,
            &[
                ("domain_id", domain_id),
                ("revision", &revision.to_string()),
                ("steps", &abstraction.steps_block()),
                ("signature", &abstraction.signature.to_string()),
                ("bindings", &abstraction.bindings_block()),
                ("components", &components),
                ("apis", &apis),
                ("policy", &indent(&policy.source)),
                ("failures", failures.join("\n").trim_end()),
                ("language", self.templates.language.trim_end()),
            ],
        )
    }

    /// Asks for a revision of `policy` given its failed outcomes. `revision`
    /// numbers the debugging round, starting at 1.
    pub fn debug_policy(
        &self,
        domain_id: &str,
        abstraction: &AbstractionResult,
        ctx: &GenerationContext,
        policy: &Policy,
        outcomes: &[ValidationOutcome],
        revision: usize,
    ) -> Result<Policy, AgentError> {
        let prompt = self.debug_prompt(domain_id, abstraction, ctx, policy, outcomes, revision)?;
        let env = self.ask(AGENT_DEBUG, domain_id, prompt)?;
        parse_policy_reply(AGENT_DEBUG, &env, &abstraction.signature, &ctx.components)
    }

    // ---- decomposition ----

    pub fn decompose_prompt(
        &self,
        domain_id: &str,
        policy: &Policy,
        existing: &[String],
        feedback: Option<&str>,
    ) -> Result<String, AgentError> {
        let feedback = match feedback {
            Some(f) => format!("The previous decomposition broke the policy:\n{}", f.trim_end()),
            None => String::new(),
        };
        render(
            &self.templates.decompose,
            &[
                ("domain_id", domain_id),
                ("signature", &policy.signature.to_string()),
                ("policy", &indent(&policy.source)),
                ("components", &bullet_list(existing)),
                ("feedback", &feedback),
                ("language", self.templates.language.trim_end()),
            ],
        )
    }

    /// Factors components out of a validated policy. `existing` are summary
    /// blocks of components the result may call; `callable` their names.
    pub fn decompose_policy(
        &self,
        domain_id: &str,
        policy: &Policy,
        existing: &[String],
        callable: &BTreeSet<String>,
        feedback: Option<&str>,
    ) -> Result<Decomposition, AgentError> {
        let env = self.ask(AGENT_DECOMPOSE, domain_id, self.decompose_prompt(domain_id, policy, existing, feedback)?)?;
        parse_decomposition(&env, policy, callable)
    }

    // ---- generalization ----

    pub fn generalize_prompt(
        &self,
        cluster: usize,
        members: &[Component],
        affected: &[AffectedPolicy],
        attempt: usize,
        feedback: Option<&str>,
    ) -> Result<String, AgentError> {
        let members: Vec<String> = members
            .iter()
            .map(|c| format!("[{}] {}\n  usage: {}\n{}", c.id, c.signature, c.usage_info, indent(&c.body)))
            .collect();
        let policies: Vec<String> =
            affected.iter().map(|a| format!("[{}]\n{}", a.domain, indent(&a.policy.source))).collect();
        let feedback = match feedback {
            Some(f) => format!("The previous proposal was rejected:\n{}", f.trim_end()),
            None => String::new(),
        };
        render(
            &self.templates.generalize,
            &[
                ("cluster_id", &cluster.to_string()),
                ("attempt", &attempt.to_string()),
                ("members", &members.join("\n\n")),
                ("policies", &bullet_list(&policies)),
                ("feedback", &feedback),
                ("language", self.templates.language.trim_end()),
            ],
        )
    }

    pub fn generalize_dedup(
        &self,
        cluster: usize,
        members: &[Component],
        affected: &[AffectedPolicy],
        attempt: usize,
        feedback: Option<&str>,
    ) -> Result<GeneralizationProposal, AgentError> {
        if members.is_empty() {
            return Err(AgentError::Precondition("cluster has no members".into()));
        }
        let prompt = self.generalize_prompt(cluster, members, affected, attempt, feedback)?;
        let domain = affected.first().map(|a| a.domain.as_str()).unwrap_or("");
        let env = self.ask(AGENT_GENERALIZE, domain, prompt)?;
        parse_generalization(&env, cluster, members, affected)
    }
}

// ---- reply parsing; public so replies can be checked offline ----

pub fn parse_abstraction(env: &Envelope, domain: &Domain) -> Result<AbstractionResult, AgentError> {
    let steps_block = Agents::require(AGENT_ABSTRACTION, env, "steps")?;
    let sig_block = Agents::require(AGENT_ABSTRACTION, env, "signature")?;
    let bind_block = Agents::require(AGENT_ABSTRACTION, env, "bindings")?;
    let steps = list_items(&steps_block.body);
    if steps.is_empty() {
        return Err(AgentError::BadBlock { tag: "steps".into(), message: "no steps".into(), block: steps_block.body.clone() });
    }
    let signature = parse_signature("signature", &sig_block.body)?;
    let mut by_task: BTreeMap<String, ParameterBinding> = BTreeMap::new();
    for line in bind_block.body.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let b: ParameterBinding = serde_json::from_str(line).map_err(|e| AgentError::BadBlock {
            tag: "bindings".into(),
            message: e.to_string(),
            block: bind_block.body.clone(),
        })?;
        if domain.task(&b.task_id).is_none() {
            return Err(AgentError::Bindings(format!("unknown task `{}`", b.task_id)));
        }
        check_binding(&signature, &b).map_err(|m| AgentError::Bindings(format!("task `{}`: {m}", b.task_id)))?;
        if by_task.insert(b.task_id.clone(), b).is_some() {
            return Err(AgentError::Bindings("a task is bound twice".into()));
        }
    }
    let mut bindings = Vec::with_capacity(domain.tasks.len());
    for t in &domain.tasks {
        bindings.push(by_task.remove(&t.id).ok_or_else(|| AgentError::Bindings(format!("no binding for task `{}`", t.id)))?);
    }
    Ok(AbstractionResult { high_level_steps: steps, signature, bindings })
}

/// Parses a source block as a policy for `signature`, resolving component
/// calls against `components`.
pub fn policy_from_source(
    tag: &str,
    source: &str,
    signature: &PolicySignature,
    components: &BTreeMap<String, ComponentId>,
) -> Result<Policy, AgentError> {
    let ast = lang::parse(source).map_err(|e| AgentError::BadBlock {
        tag: tag.into(),
        message: e.to_string(),
        block: source.into(),
    })?;
    let header: Vec<&str> = ast.root.params.iter().map(String::as_str).collect();
    if ast.root.name != signature.name || header != signature.param_names() {
        return Err(AgentError::SignatureMismatch {
            expected: signature.to_string(),
            found: format!("{}({})", ast.root.name, header.join(", ")),
        });
    }
    let mut referenced = Vec::new();
    for name in ast.component_calls() {
        let id = components.get(name).ok_or_else(|| AgentError::UnknownComponent(name.to_string()))?;
        referenced.push((id.clone(), name.to_string()));
    }
    let mut source = source.trim_end().to_string();
    source.push('\n');
    Policy::new(signature.clone(), source, referenced).map_err(|e| AgentError::BadBlock {
        tag: tag.into(),
        message: e.to_string(),
        block: String::new(),
    })
}

fn parse_policy_reply(
    agent: &str,
    env: &Envelope,
    signature: &PolicySignature,
    components: &BTreeMap<String, ComponentId>,
) -> Result<Policy, AgentError> {
    let block = Agents::require(agent, env, "policy")?;
    policy_from_source("policy", &block.body, signature, components)
}

/// Component drafts from a `components` block plus its `usage-notes`.
fn parse_components(env: &Envelope) -> Result<Vec<ComponentDraft>, AgentError> {
    let Some(block) = env.first("components") else {
        return Ok(Vec::new());
    };
    if block.body.trim().is_empty() {
        return Ok(Vec::new());
    }
    let functions = lang::parse_functions(&block.body).map_err(|e| AgentError::BadBlock {
        tag: "components".into(),
        message: e.to_string(),
        block: block.body.clone(),
    })?;
    let mut notes: BTreeMap<String, UsageNote> = BTreeMap::new();
    if let Some(nb) = env.first("usage-notes") {
        for line in nb.body.lines().map(str::trim).filter(|l| l.starts_with('{')) {
            let n: UsageNote = serde_json::from_str(line).map_err(|e| AgentError::BadBlock {
                tag: "usage-notes".into(),
                message: e.to_string(),
                block: nb.body.clone(),
            })?;
            notes.insert(n.name.clone(), n);
        }
    }
    let mut drafts = Vec::new();
    for f in functions {
        let name = f.def.name.clone();
        let note = notes.remove(&name).ok_or_else(|| AgentError::BadBlock {
            tag: "usage-notes".into(),
            message: format!("no usage note for component `{name}`"),
            block: String::new(),
        })?;
        let signature = parse_signature("usage-notes", &note.signature)?;
        let draft = ComponentDraft {
            name,
            signature,
            body: f.source.trim_end().to_string(),
            description: note.description,
            usage_info: note.usage,
        };
        draft.check().map_err(|e| AgentError::BadBlock {
            tag: "components".into(),
            message: e.to_string(),
            block: draft.body.clone(),
        })?;
        drafts.push(draft);
    }
    if let Some(extra) = notes.keys().next() {
        return Err(AgentError::BadBlock {
            tag: "usage-notes".into(),
            message: format!("usage note for undefined component `{extra}`"),
            block: String::new(),
        });
    }
    Ok(drafts)
}

/// Checks that every component call in `source` names something callable.
fn check_calls(source: &str, callable: &BTreeSet<String>) -> Result<(), AgentError> {
    let ast = lang::parse(source).map_err(|e| AgentError::BadBlock {
        tag: "policy".into(),
        message: e.to_string(),
        block: source.into(),
    })?;
    let unknown = ast.component_calls().into_iter().find(|c| !callable.contains(*c)).map(str::to_string);
    match unknown {
        Some(c) => Err(AgentError::UnknownComponent(c)),
        None => Ok(()),
    }
}

fn check_header(source: &str, signature: &PolicySignature) -> Result<(), AgentError> {
    let ast = lang::parse(source).map_err(|e| AgentError::BadBlock {
        tag: "policy".into(),
        message: e.to_string(),
        block: source.into(),
    })?;
    let header: Vec<&str> = ast.root.params.iter().map(String::as_str).collect();
    if ast.root.name != signature.name || header != signature.param_names() {
        return Err(AgentError::SignatureMismatch {
            expected: signature.to_string(),
            found: format!("{}({})", ast.root.name, header.join(", ")),
        });
    }
    Ok(())
}

pub fn parse_decomposition(env: &Envelope, policy: &Policy, callable: &BTreeSet<String>) -> Result<Decomposition, AgentError> {
    let components = parse_components(env)?;
    if components.is_empty() {
        // Nothing factored out; any policy block is ignored.
        return Ok(Decomposition { components, policy_source: policy.source.clone() });
    }
    let block = Agents::require(AGENT_DECOMPOSE, env, "policy")?;
    let source = format!("{}\n", block.body.trim_end());
    check_header(&source, &policy.signature)?;
    let mut names = callable.clone();
    for c in &components {
        if callable.contains(&c.name) {
            return Err(AgentError::BadBlock {
                tag: "components".into(),
                message: format!("`{}` redefines an existing component", c.name),
                block: c.body.clone(),
            });
        }
        names.insert(c.name.clone());
    }
    for c in &components {
        check_calls(&c.body, &names)?;
    }
    check_calls(&source, &names)?;
    Ok(Decomposition { components, policy_source: source })
}

pub fn parse_generalization(
    env: &Envelope,
    cluster: usize,
    members: &[Component],
    affected: &[AffectedPolicy],
) -> Result<GeneralizationProposal, AgentError> {
    let components = parse_components(env)?;
    let member_ids: BTreeSet<&str> = members.iter().map(|c| c.id.as_str()).collect();
    let mut replaced = Vec::new();
    // The replaced block is mandatory, so a reply without blocks is not
    // mistaken for "keep as-is".
    {
        let b = Agents::require(AGENT_GENERALIZE, env, "replaced")?;
        for item in list_items(&b.body) {
            if item.eq_ignore_ascii_case("none") {
                continue;
            }
            // Members may be named by id or, when unambiguous, by name.
            let id = if member_ids.contains(item.as_str()) {
                ComponentId(item)
            } else {
                let named: Vec<&Component> = members.iter().filter(|c| c.name == item).collect();
                match named.as_slice() {
                    [one] => one.id.clone(),
                    _ => return Err(AgentError::NotMember(item)),
                }
            };
            if !replaced.contains(&id) {
                replaced.push(id);
            }
        }
    }
    let mut updated_policies = BTreeMap::new();
    for b in env.all("policy") {
        let a = affected.iter().find(|a| a.domain == b.arg).ok_or_else(|| AgentError::BadBlock {
            tag: "policy".into(),
            message: format!("`{}` is not an affected domain", b.arg),
            block: b.body.clone(),
        })?;
        let source = format!("{}\n", b.body.trim_end());
        check_header(&source, &a.policy.signature)?;
        updated_policies.insert(a.domain.clone(), source);
    }
    Ok(GeneralizationProposal { cluster, components, updated_policies, replaced })
}
