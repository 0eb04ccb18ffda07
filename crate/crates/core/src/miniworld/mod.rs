//! Miniworld: a small deterministic simulated meta-domain with its own
//! scenario pack and validator, so the whole pipeline runs offline.

mod apps;
mod state;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use apps::{apply_api, catalog, ApiError, APPS};
pub use state::{AppStore, Record, SeedRecord, WorldState};

use crate::lang::{self, ApiExecutor, ComponentResolver};
use crate::model::{
    ApiCallRecord, ApiDoc, Canonical, Domain, MetaDomainDescriptor, ModelError, ParameterBinding, Plan, Policy,
    PolicySignature, TaskInstance, ValidationOutcome, Value,
};
use crate::validator::Validator;

const BUNDLED_PACK: &str = include_str!("../../data/pack.json");

#[derive(Debug, Error)]
pub enum MiniWorldError {
    #[error("unknown initial-state seed `{0}`")]
    UnknownSeed(String),
    #[error("invalid scenario pack: {0}")]
    Pack(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("reading scenario pack: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Train,
    Test,
}

/// Known-good policy shipped with a domain; proves the domain solvable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    pub signature: PolicySignature,
    pub source: String,
    pub bindings: Vec<ParameterBinding>,
}

impl ReferencePolicy {
    pub fn policy(&self) -> Result<Policy, ModelError> {
        Policy::new(self.signature.clone(), self.source.clone(), Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioDomain {
    pub domain: Domain,
    pub phase: Phase,
    /// Uses only apps that no training domain touches.
    pub challenge: bool,
    pub reference: ReferencePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPack {
    pub name: String,
    pub base_state: Vec<SeedRecord>,
    /// seed id -> records layered over the base state
    pub seeds: BTreeMap<String, Vec<SeedRecord>>,
    pub domains: Vec<ScenarioDomain>,
}

impl ScenarioPack {
    pub fn bundled() -> Self {
        Self::from_canonical(BUNDLED_PACK).expect("bundled scenario pack decodes")
    }

    pub fn load(path: &Path) -> Result<Self, MiniWorldError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::from_canonical(&text)?)
    }

    pub fn domains_in(&self, phase: Phase) -> Vec<&Domain> {
        self.domains.iter().filter(|d| d.phase == phase).map(|d| &d.domain).collect()
    }

    pub fn scenario(&self, domain_id: &str) -> Option<&ScenarioDomain> {
        self.domains.iter().find(|d| d.domain.id == domain_id)
    }

    pub fn check(&self) -> Result<(), MiniWorldError> {
        let bad = |m: String| Err(MiniWorldError::Pack(m));
        let mut ids = std::collections::BTreeSet::new();
        for sd in &self.domains {
            sd.domain.validate()?;
            if !ids.insert(sd.domain.id.as_str()) {
                return bad(format!("duplicate domain `{}`", sd.domain.id));
            }
            for t in &sd.domain.tasks {
                if !self.seeds.contains_key(&t.initial_state_seed) {
                    return bad(format!("task `{}` uses unknown seed `{}`", t.id, t.initial_state_seed));
                }
            }
            let task_ids: Vec<&str> = sd.domain.tasks.iter().map(|t| t.id.as_str()).collect();
            let bound: Vec<&str> = sd.reference.bindings.iter().map(|b| b.task_id.as_str()).collect();
            if task_ids != bound {
                return bad(format!("reference bindings of `{}` do not follow its tasks", sd.domain.id));
            }
            sd.reference.policy()?;
        }
        Ok(())
    }
}

/// The miniworld validator.
#[derive(Debug, Clone)]
pub struct MiniWorld {
    pack: ScenarioPack,
}

struct Session {
    state: WorldState,
}

impl ApiExecutor for Session {
    fn call(&mut self, app: &str, api: &str, args: &BTreeMap<String, Value>) -> Result<Value, String> {
        let (next, response) = apply_api(&self.state, app, api, args).map_err(|e| e.to_string())?;
        self.state = next;
        Ok(response)
    }
}

impl MiniWorld {
    pub fn new(pack: ScenarioPack) -> Result<Self, MiniWorldError> {
        pack.check()?;
        Ok(Self { pack })
    }

    pub fn bundled() -> Self {
        Self::new(ScenarioPack::bundled()).expect("bundled pack is valid")
    }

    pub fn pack(&self) -> &ScenarioPack {
        &self.pack
    }

    pub fn descriptor(&self) -> MetaDomainDescriptor {
        MetaDomainDescriptor::new("miniworld", catalog()).expect("catalog is well-formed")
    }

    /// Initial state s0 of a task.
    pub fn reset(&self, task: &TaskInstance) -> Result<WorldState, MiniWorldError> {
        let overlay = self
            .pack
            .seeds
            .get(&task.initial_state_seed)
            .ok_or_else(|| MiniWorldError::UnknownSeed(task.initial_state_seed.clone()))?;
        Ok(WorldState::from_seed_records(self.pack.base_state.iter().chain(overlay)))
    }

    /// Executes a plan from the task's initial state, returning the trace
    /// and the final state.
    pub fn run(
        &self,
        plan: &Plan,
        task: &TaskInstance,
        components: &dyn ComponentResolver,
    ) -> Result<(lang::ExecutionTrace, WorldState), MiniWorldError> {
        let mut session = Session { state: self.reset(task)? };
        let trace = lang::execute(plan, &mut session, components);
        Ok((trace, session.state))
    }

    /// Human-readable listing of apps, apis and scenarios.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let docs = catalog();
        let _ = writeln!(out, "meta-domain: miniworld ({} apps, {} apis)", APPS.len(), docs.len());
        for app in APPS {
            let _ = writeln!(out, "\n[{app}]");
            for d in docs.iter().filter(|d| d.app == app) {
                let lock = if d.protected { " (login)" } else { "" };
                let _ = writeln!(out, "  {}{lock}", d.summary_line());
            }
        }
        let _ = writeln!(out, "\nscenario pack: {}", self.pack.name);
        for sd in &self.pack.domains {
            let phase = match sd.phase {
                Phase::Train => "train",
                Phase::Test => "test",
            };
            let tag = if sd.challenge { ", challenge" } else { "" };
            let _ = writeln!(out, "  {} [{phase}{tag}] {} tasks", sd.domain.id, sd.domain.tasks.len());
            for t in &sd.domain.tasks {
                let _ = writeln!(out, "    {}: {}", t.id, t.instruction);
            }
        }
        out
    }
}

impl Validator for MiniWorld {
    fn validate(&self, plan: &Plan, task: &TaskInstance, components: &dyn ComponentResolver) -> ValidationOutcome {
        let all_tests = || task.goal_tests.iter().map(|g| g.name.clone()).collect();
        let (trace, state) = match self.run(plan, task, components) {
            Ok(r) => r,
            Err(e) => {
                return ValidationOutcome {
                    task_id: task.id.clone(),
                    passed: false,
                    failed_tests: all_tests(),
                    error: Some(e.to_string()),
                    trace: Vec::new(),
                }
            }
        };
        let failed_tests: Vec<String> =
            task.goal_tests.iter().filter(|g| !state.check(&g.predicate)).map(|g| g.name.clone()).collect();
        let error = trace.error_message().map(str::to_string);
        ValidationOutcome {
            task_id: task.id.clone(),
            passed: error.is_none() && failed_tests.is_empty(),
            failed_tests,
            error,
            trace: trace.records,
        }
    }

    fn api_docs(&self) -> Vec<ApiDoc> {
        catalog()
    }
}

/// Replays recorded successful calls from `start`; used to check that a
/// trace fully determines the final state.
pub fn replay(start: &WorldState, records: &[ApiCallRecord]) -> Result<WorldState, ApiError> {
    let mut state = start.clone();
    for r in records {
        if let crate::model::CallOutcome::Ok(_) = r.outcome {
            state = apply_api(&state, &r.app, &r.api, &r.args)?.0;
        }
    }
    Ok(state)
}
