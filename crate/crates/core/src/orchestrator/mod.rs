//! The policy-learning loop: abstraction, retrieval, generation with a
//! validation-debug cycle, component learning, and periodic generalization.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agents::{self, AbstractionResult, Agents, GenerationContext};
use crate::cluster::{run_generalization, GeneralizationReport};
use crate::gateway::Usage;
use crate::lang::{instantiate, FnDef};
use crate::model::{ApiDoc, ComponentId, Domain, EngineConfig, Policy, ValidationOutcome};
use crate::repository::{ArchivedPolicy, RepoMode, Repository};
use crate::retrieval::{index_api_docs, Embedder, VectorIndex};
use crate::validator::Validator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Policy synthesis alone: no component retrieval, learning or generalization.
    Gp,
    HclGp,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gp" => Ok(Mode::Gp),
            "hclgp" => Ok(Mode::HclGp),
            _ => Err(format!("unknown mode `{s}` (expected gp or hclgp)")),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Gp => "gp",
            Mode::HclGp => "hclgp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    DebugIteration,
    GeneralizationPass,
    DomainSolved,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunEvent {
    pub ordinal: u64,
    pub kind: EventKind,
    pub domain: String,
    /// Global debugging-iteration counter after this event.
    pub iteration: u64,
    /// Cumulative tokens of the run so far.
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl RunEvent {
    pub fn usage(&self) -> Usage {
        Usage::new(self.input_tokens, self.output_tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainStatus {
    Solved,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainResult {
    pub domain: String,
    pub status: DomainStatus,
    /// task id -> passed, under the final policy
    pub tasks: BTreeMap<String, bool>,
    /// Validation rounds of policy generation: the initial policy plus revisions.
    pub iterations: usize,
    pub usage: Usage,
    pub final_policy: Option<Policy>,
    pub components_learned: Vec<ComponentId>,
    /// Why the domain failed before any policy could be validated, if it did.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl DomainResult {
    pub fn solved(&self) -> bool {
        self.status == DomainStatus::Solved
    }

    pub fn passed_tasks(&self) -> usize {
        self.tasks.values().filter(|p| **p).count()
    }
}

/// One agent operation, for auditing which stages ran.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallRecord {
    pub domain: String,
    pub op: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub results: Vec<DomainResult>,
    pub generalizations: Vec<GeneralizationReport>,
}

impl SuiteReport {
    pub fn all_solved(&self) -> bool {
        self.results.iter().all(DomainResult::solved)
    }
}

pub struct Engine {
    config: EngineConfig,
    agents: Agents,
    validator: Arc<dyn Validator>,
    repo: Repository,
    api_docs: Vec<ApiDoc>,
    api_index: VectorIndex<f64>,
    events: Vec<RunEvent>,
    calls: Vec<CallRecord>,
    iterations: u64,
    /// Ledger totals when the engine was created.
    baseline: Usage,
}

impl Engine {
    pub fn new(config: EngineConfig, agents: Agents, validator: Arc<dyn Validator>, repo: Repository) -> Self {
        let api_docs = validator.api_docs();
        let embedder = *repo.embedder();
        let mut api_index = VectorIndex::new(embedder.dim);
        index_api_docs(&mut api_index, &embedder as &dyn Embedder<f64>, &api_docs).expect("api docs index cleanly");
        let baseline = agents.gateway().ledger().totals();
        Self {
            config,
            agents,
            validator,
            repo,
            api_docs,
            api_index,
            events: Vec::new(),
            calls: Vec::new(),
            iterations: 0,
            baseline,
        }
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn agents(&self) -> &Agents {
        &self.agents
    }

    pub fn repository(&self) -> &Repository {
        &self.repo
    }

    pub fn repository_mut(&mut self) -> &mut Repository {
        &mut self.repo
    }

    pub fn into_repository(self) -> Repository {
        self.repo
    }

    pub fn events(&self) -> &[RunEvent] {
        &self.events
    }

    pub fn calls(&self) -> &[CallRecord] {
        &self.calls
    }

    /// Global debugging-iteration counter.
    pub fn iterations(&self) -> u64 {
        self.iterations
    }

    /// Tokens spent since the engine was created.
    pub fn usage(&self) -> Usage {
        let t = self.agents.gateway().ledger().totals();
        Usage::new(t.input_tokens - self.baseline.input_tokens, t.output_tokens - self.baseline.output_tokens)
    }

    fn log(&mut self, domain: &str, op: &str) {
        self.calls.push(CallRecord { domain: domain.into(), op: op.into() });
    }

    fn emit(&mut self, kind: EventKind, domain: &str) {
        let usage = self.usage();
        self.events.push(RunEvent {
            ordinal: self.events.len() as u64 + 1,
            kind,
            domain: domain.into(),
            iteration: self.iterations,
            input_tokens: usage.input_tokens,
            output_tokens: usage.output_tokens,
        });
    }

    fn validate_all(&self, policy: &Policy, abstraction: &AbstractionResult, domain: &Domain, resolver: &BTreeMap<String, FnDef>) -> Vec<ValidationOutcome> {
        domain
            .tasks
            .iter()
            .zip(&abstraction.bindings)
            .map(|(task, binding)| match instantiate(policy, binding) {
                Ok(plan) => self.validator.validate(&plan, task, resolver),
                Err(e) => ValidationOutcome {
                    task_id: task.id.clone(),
                    passed: false,
                    failed_tests: task.goal_tests.iter().map(|g| g.name.clone()).collect(),
                    error: Some(e.to_string()),
                    trace: Vec::new(),
                },
            })
            .collect()
    }

    fn context(&mut self, domain: &Domain, abstraction: &AbstractionResult, mode: Mode) -> GenerationContext {
        if mode == Mode::HclGp {
            self.log(&domain.id, "search");
        }
        self.generation_context(abstraction, mode)
    }

    /// What the generation agent would see: retrieved api docs and, in
    /// HCL-GP mode, retrieved components.
    pub fn generation_context(&self, abstraction: &AbstractionResult, mode: Mode) -> GenerationContext {
        let embedder = *self.repo.embedder();
        let k = self.config.retrieval_k;
        let api_docs = agents::search_api_docs(abstraction, &self.api_index, &embedder, &self.api_docs, k);
        if mode == Mode::Gp {
            return GenerationContext { api_docs, ..Default::default() };
        }
        let ids = agents::search_components(abstraction, self.repo.index(), &embedder, k);
        GenerationContext {
            component_summaries: self.repo.summaries_for_prompt(&ids),
            components: ids.iter().filter_map(|id| self.repo.get(id).map(|c| (c.name.clone(), id.clone()))).collect(),
            api_docs,
        }
    }

    /// Solves one domain: abstract, (retrieve), generate, then validate and
    /// debug for at most `debug_budget` revisions. In HCL-GP mode a solved
    /// policy is decomposed into learned components.
    pub fn solve_domain(&mut self, domain: &Domain, mode: Mode) -> DomainResult {
        let start = self.usage();
        let mut result = DomainResult {
            domain: domain.id.clone(),
            status: DomainStatus::Failed,
            tasks: domain.tasks.iter().map(|t| (t.id.clone(), false)).collect(),
            iterations: 0,
            usage: Usage::default(),
            final_policy: None,
            components_learned: Vec::new(),
            error: None,
        };
        self.log(&domain.id, "abstract");
        let abstraction = match self.agents.abstract_domain(domain) {
            Ok(a) => a,
            Err(e) => {
                result.error = Some(e.to_string());
                result.usage = usage_since(self.usage(), start);
                return result;
            }
        };
        let ctx = self.context(domain, &abstraction, mode);
        let resolver = self.repo.resolver_for(&ctx.components.values().cloned().collect::<Vec<_>>());

        let mut current: Option<(Policy, Vec<ValidationOutcome>)> = None;
        let mut last_error = None;
        for round in 0..=self.config.debug_budget {
            let reply = match &current {
                Some((policy, outcomes)) => {
                    self.log(&domain.id, "debug");
                    self.agents.debug_policy(&domain.id, &abstraction, &ctx, policy, outcomes, round)
                }
                None => {
                    self.log(&domain.id, "generate");
                    self.agents.generate_policy(&domain.id, &abstraction, &ctx)
                }
            };
            self.iterations += 1;
            result.iterations += 1;
            match reply {
                Ok(policy) => {
                    let outcomes = self.validate_all(&policy, &abstraction, domain, &resolver);
                    let solved = outcomes.iter().all(|o| o.passed);
                    current = Some((policy, outcomes));
                    self.emit(EventKind::DebugIteration, &domain.id);
                    if solved {
                        break;
                    }
                }
                Err(e) => {
                    // The previous policy, if any, stays current.
                    last_error = Some(e.to_string());
                    self.emit(EventKind::DebugIteration, &domain.id);
                }
            }
        }

        let Some((policy, outcomes)) = current else {
            result.error = last_error;
            result.usage = usage_since(self.usage(), start);
            return result;
        };
        for o in &outcomes {
            result.tasks.insert(o.task_id.clone(), o.passed);
        }
        if outcomes.iter().all(|o| o.passed) {
            result.status = DomainStatus::Solved;
            self.emit(EventKind::DomainSolved, &domain.id);
            self.repo.record_usage(&domain.id, &policy.referenced_components, self.iterations);
            let archived = if mode == Mode::HclGp {
                let (archived, learned) = self.learn(domain, &abstraction, &ctx, &policy);
                result.components_learned = learned;
                archived
            } else {
                policy.clone()
            };
            self.repo.archive_policy(ArchivedPolicy {
                domain: domain.clone(),
                policy: archived,
                bindings: abstraction.bindings.clone(),
            });
        }
        result.final_policy = Some(policy);
        result.usage = usage_since(self.usage(), start);
        result
    }

    /// Decomposes a solved policy and keeps the components only if the
    /// updated policy still solves every task. Returns the policy to archive
    /// and the learned component ids.
    fn learn(
        &mut self,
        domain: &Domain,
        abstraction: &AbstractionResult,
        ctx: &GenerationContext,
        policy: &Policy,
    ) -> (Policy, Vec<ComponentId>) {
        let callable: BTreeSet<String> = ctx.components.keys().cloned().collect();
        let base = self.repo.resolver_for(&ctx.components.values().cloned().collect::<Vec<_>>());
        let mut feedback: Option<String> = None;
        for _ in 0..=self.config.debug_budget {
            self.log(&domain.id, "decompose");
            let d = match self.agents.decompose_policy(&domain.id, policy, &ctx.component_summaries, &callable, feedback.as_deref()) {
                Ok(d) => d,
                Err(e) => {
                    feedback = Some(e.to_string());
                    continue;
                }
            };
            if d.is_empty() {
                return (policy.clone(), Vec::new());
            }
            let mut overlay = base.clone();
            for c in &d.components {
                overlay.insert(c.name.clone(), c.check().expect("drafts are checked when parsed"));
            }
            let names: BTreeMap<String, ComponentId> = ctx.components.clone();
            // Placeholder ids let the updated policy be built before storing.
            let mut provisional = names.clone();
            for c in &d.components {
                provisional.insert(c.name.clone(), ComponentId(format!("new:{}", c.name)));
            }
            let updated = match agents::policy_from_source("policy", &d.policy_source, &policy.signature, &provisional) {
                Ok(p) => p,
                Err(e) => {
                    feedback = Some(e.to_string());
                    continue;
                }
            };
            let outcomes = self.validate_all(&updated, abstraction, domain, &overlay);
            if !outcomes.iter().all(|o| o.passed) {
                let f: Vec<String> = outcomes.iter().filter(|o| !o.passed).map(agents::failure_report).collect();
                feedback = Some(f.join("\n"));
                continue;
            }
            let ids = match self.repo.add_learned_batch(d.components.clone(), &domain.id) {
                Ok(ids) => ids,
                Err(e) => {
                    feedback = Some(e.to_string());
                    continue;
                }
            };
            let mut resolved = names;
            for (c, id) in d.components.iter().zip(&ids) {
                resolved.insert(c.name.clone(), id.clone());
            }
            let stored = agents::policy_from_source("policy", &d.policy_source, &policy.signature, &resolved)
                .expect("validated above with the same names");
            return (stored, ids);
        }
        (policy.clone(), Vec::new())
    }

    /// One generalization pass over the whole repository.
    pub fn generalize(&mut self, domain: &str) -> GeneralizationReport {
        self.log(domain, "generalize");
        let report = run_generalization(&mut self.repo, &self.agents, self.validator.as_ref(), &self.config);
        self.emit(EventKind::GeneralizationPass, domain);
        report
    }

    /// Solves `domains` in order. In HCL-GP mode a generalization pass runs
    /// after any domain whose iterations cross a multiple of the trigger,
    /// one pass per multiple crossed.
    pub fn run_suite(&mut self, domains: &[Domain], mode: Mode) -> SuiteReport {
        let trigger = self.config.generalization_trigger as u64;
        let mut report = SuiteReport::default();
        for d in domains {
            let before = self.iterations;
            report.results.push(self.solve_domain(d, mode));
            if mode == Mode::HclGp {
                for _ in before / trigger..self.iterations / trigger {
                    report.generalizations.push(self.generalize(&d.id));
                }
            }
        }
        report
    }

    /// Builds a seed library: an HCL-GP run over the training domains, then
    /// two full generalization passes. Components created here are marked
    /// as seed.
    pub fn seed_repository(&mut self, training: &[Domain]) -> SuiteReport {
        let previous = self.repo.mode();
        self.repo.set_mode(RepoMode::Seeding);
        let mut report = self.run_suite(training, Mode::HclGp);
        for _ in 0..2 {
            report.generalizations.push(self.generalize(""));
        }
        self.repo.set_mode(previous);
        report
    }
}

fn usage_since(now: Usage, start: Usage) -> Usage {
    Usage::new(now.input_tokens - start.input_tokens, now.output_tokens - start.output_tokens)
}

#[cfg(test)]
mod tests;
