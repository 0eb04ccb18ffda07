//! Similarity clustering of components and the generalize/deduplicate pass.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::agents::{policy_from_source, AffectedPolicy, Agents, GeneralizationProposal};
use crate::lang::instantiate;
use crate::model::{ComponentId, EngineConfig, Policy};
use crate::num::Real;
use crate::repository::{ArchivedPolicy, Component, Repository, StoreKind};
use crate::retrieval::{EmbeddingVector, Embedder};
use crate::validator::Validator;

#[derive(Debug, Clone, PartialEq)]
pub struct Cluster<T: Real> {
    pub id: usize,
    pub seed: ComponentId,
    /// Seed first, then the rest in scan order.
    pub members: Vec<ComponentId>,
    pub seed_vector: EmbeddingVector<T>,
}

/// Greedy seed-similarity clustering. Items are scanned in the given
/// (created-at) order; each joins the first cluster whose seed is at least
/// `tau` similar, or founds a new one.
pub fn greedy_cluster<T: Real>(items: &[(ComponentId, EmbeddingVector<T>)], tau: T) -> Vec<Cluster<T>> {
    let mut clusters: Vec<Cluster<T>> = Vec::new();
    for (id, v) in items {
        match clusters.iter_mut().find(|c| c.seed_vector.cosine(v) >= tau) {
            Some(c) => c.members.push(id.clone()),
            None => clusters.push(Cluster {
                id: clusters.len(),
                seed: id.clone(),
                members: vec![id.clone()],
                seed_vector: v.clone(),
            }),
        }
    }
    clusters
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub cluster: usize,
    pub members: Vec<ComponentId>,
    pub accepted: bool,
    /// Agent calls spent, including unparseable replies.
    pub attempts: usize,
    pub generalized: Vec<ComponentId>,
    pub replaced: Vec<ComponentId>,
    pub updated_domains: Vec<String>,
    /// Feedback of the last failed attempt, if any.
    pub last_failure: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationReport {
    pub clusters: Vec<ClusterReport>,
    pub accepted: usize,
    pub rejected: usize,
    /// Components replaced by merges.
    pub merged: usize,
    /// Total agent calls.
    pub iterations: usize,
}

/// Domains whose archived policy reaches any of `ids`.
pub fn affected_domains(repo: &Repository, ids: &[ComponentId]) -> Vec<String> {
    let ids: BTreeSet<&ComponentId> = ids.iter().collect();
    repo.archive()
        .iter()
        .filter(|(_, a)| repo.closure(&a.policy.referenced_components).iter().any(|c| ids.contains(c)))
        .map(|(d, _)| d.clone())
        .collect()
}

/// Applies a proposal to a copy of `repo` and re-validates every affected
/// domain on all of its original bindings. Returns the updated copy or the
/// feedback explaining the failure.
fn trial(
    repo: &Repository,
    cluster: &Cluster<impl Real>,
    proposal: &GeneralizationProposal,
    affected: &[String],
    validator: &dyn Validator,
) -> Result<(Repository, Vec<ComponentId>), String> {
    let mut next = repo.clone();
    let replaced: BTreeSet<&ComponentId> = proposal.replaced.iter().collect();
    let keep: Vec<ComponentId> = cluster
        .members
        .iter()
        .filter(|id| !replaced.contains(id) && repo.stored(id).is_some_and(|s| s.store == StoreKind::Learned))
        .cloned()
        .collect();
    let new_ids = next.promote(proposal.components.clone(), &keep, &proposal.replaced).map_err(|e| e.to_string())?;
    let new_by_name: BTreeMap<&str, &ComponentId> =
        proposal.components.iter().map(|d| d.name.as_str()).zip(&new_ids).collect();

    let mut failures = Vec::new();
    for domain in affected {
        let old = repo.archived(domain).expect("affected domains are archived");
        let source = proposal.updated_policies.get(domain).unwrap_or(&old.policy.source);
        // Call sites keep their old ids unless replaced; new names map to
        // the generalized components, anything else to the validated store.
        let old_names: BTreeMap<String, ComponentId> = old
            .policy
            .referenced_components
            .iter()
            .filter(|id| !replaced.contains(id))
            .filter_map(|id| next.get(id).map(|c| (c.name.clone(), id.clone())))
            .collect();
        let mut callable: BTreeMap<String, ComponentId> =
            next.validated().into_iter().map(|c| (c.name.clone(), c.id.clone())).collect();
        callable.extend(old_names);
        callable.extend(new_by_name.iter().map(|(n, id)| (n.to_string(), (*id).clone())));
        let policy = match policy_from_source("policy", source, &old.policy.signature, &callable) {
            Ok(p) => p,
            Err(e) => {
                failures.push(format!("domain {domain}: {e}"));
                continue;
            }
        };
        let reach = next.closure(&policy.referenced_components);
        if let Some(dead) = reach.iter().find(|id| replaced.contains(id)) {
            failures.push(format!("domain {domain}: still calls replaced component {dead}"));
            continue;
        }
        let resolver = next.resolver_for(&policy.referenced_components);
        for (task, binding) in old.domain.tasks.iter().zip(&old.bindings) {
            let outcome = match instantiate(&policy, binding) {
                Ok(plan) => validator.validate(&plan, task, &resolver),
                Err(e) => {
                    failures.push(format!("domain {domain}, task {}: {e}", task.id));
                    continue;
                }
            };
            if !outcome.passed {
                failures.push(crate::agents::failure_report(&outcome).trim_end().to_string());
            }
        }
        next.archive_policy(ArchivedPolicy { domain: old.domain.clone(), policy, bindings: old.bindings.clone() });
    }
    if failures.is_empty() {
        Ok((next, new_ids))
    } else {
        Err(failures.join("\n"))
    }
}

/// Runs the generalization agent on one cluster with up to `budget`
/// retries after the first attempt. Accepted proposals replace `repo`
/// wholesale; rejected ones leave it untouched.
pub fn generalize_cluster<T: Real>(
    repo: &mut Repository,
    cluster: &Cluster<T>,
    agents: &Agents,
    validator: &dyn Validator,
    budget: usize,
) -> ClusterReport {
    let members: Vec<Component> = cluster.members.iter().filter_map(|id| repo.get(id).cloned()).collect();
    let affected = affected_domains(repo, &cluster.members);
    let affected_policies: Vec<AffectedPolicy> = affected
        .iter()
        .map(|d| AffectedPolicy { domain: d.clone(), policy: repo.archived(d).expect("archived").policy.clone() })
        .collect();
    let mut report = ClusterReport {
        cluster: cluster.id,
        members: cluster.members.clone(),
        accepted: false,
        attempts: 0,
        generalized: Vec::new(),
        replaced: Vec::new(),
        updated_domains: Vec::new(),
        last_failure: None,
    };
    let mut feedback: Option<String> = None;
    for attempt in 1..=budget + 1 {
        report.attempts = attempt;
        let proposal = match agents.generalize_dedup(cluster.id, &members, &affected_policies, attempt, feedback.as_deref()) {
            Ok(p) => p,
            Err(e) => {
                feedback = Some(e.to_string());
                continue;
            }
        };
        match trial(repo, cluster, &proposal, &affected, validator) {
            Ok((next, new_ids)) => {
                *repo = next;
                report.accepted = true;
                report.generalized = new_ids;
                report.replaced = proposal.replaced.clone();
                report.updated_domains = proposal.updated_policies.keys().cloned().collect();
                report.last_failure = None;
                return report;
            }
            Err(f) => feedback = Some(f),
        }
    }
    report.last_failure = feedback;
    report
}

/// Clusters every live component, learned and validated, and runs the
/// generalization agent on each cluster in order.
pub fn run_generalization(
    repo: &mut Repository,
    agents: &Agents,
    validator: &dyn Validator,
    config: &EngineConfig,
) -> GeneralizationReport {
    let embedder = *repo.embedder();
    let mut items: Vec<(ComponentId, EmbeddingVector<f64>)> = Vec::new();
    let mut live = repo.live_components();
    live.sort_by_key(|c| c.created_at);
    for c in live {
        let v = Embedder::<f64>::embed(&embedder, &c.embedding_text()).expect("component texts are never empty");
        items.push((c.id.clone(), v));
    }
    let clusters = greedy_cluster(&items, config.cluster_threshold);
    let mut report = GeneralizationReport::default();
    for c in &clusters {
        let r = generalize_cluster(repo, c, agents, validator, config.debug_budget);
        report.iterations += r.attempts;
        if r.accepted {
            report.accepted += 1;
            report.merged += r.replaced.len();
        } else {
            report.rejected += 1;
        }
        report.clusters.push(r);
    }
    report
}

/// Checks that every archived policy still solves all of its tasks.
pub fn archive_validates(repo: &Repository, validator: &dyn Validator, domains: &[String]) -> Result<(), String> {
    for d in domains {
        let a = repo.archived(d).ok_or_else(|| format!("domain {d} is not archived"))?;
        check_policy(repo, validator, a, &a.policy)?;
    }
    Ok(())
}

fn check_policy(repo: &Repository, validator: &dyn Validator, a: &ArchivedPolicy, policy: &Policy) -> Result<(), String> {
    let resolver = repo.resolver_for(&policy.referenced_components);
    for (task, binding) in a.domain.tasks.iter().zip(&a.bindings) {
        let plan = instantiate(policy, binding).map_err(|e| format!("{}: {e}", task.id))?;
        let o = validator.validate(&plan, task, &resolver);
        if !o.passed {
            return Err(format!("{} fails: {:?} {:?}", task.id, o.error, o.failed_tests));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests;
