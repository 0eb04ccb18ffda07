use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{Provenance, RepoError, UsageMode, UsageRecord};
use crate::model::ComponentId;
use crate::num::Scalar;

/// Which usage records count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UsageFilter {
    Direct,
    #[default]
    Any,
}

/// Usage analytics of one provenance class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UsageStats<S> {
    pub available: usize,
    pub total_used: usize,
    /// used / available, in percent
    pub utilization_pct: S,
    /// mean number of distinct used components per scenario
    pub per_scenario_mean: S,
    /// mean number of scenarios per used component
    pub reuse_rate: S,
    /// share of used components seen in two or more scenarios, in percent
    pub multi_use_pct: S,
}

/// Per-provenance usage statistics.
///
/// `available` lists every component that could have been used with its
/// provenance; records of components outside that list are ignored.
pub fn usage_stats<S: Scalar>(
    available: &[(ComponentId, Provenance)],
    records: &[UsageRecord],
    scenario_count: usize,
    filter: UsageFilter,
) -> Result<BTreeMap<Provenance, UsageStats<S>>, RepoError> {
    if scenario_count == 0 {
        return Err(RepoError::NoScenarios);
    }
    let provenance: BTreeMap<&ComponentId, Provenance> = available.iter().map(|(id, p)| (id, *p)).collect();
    // component -> distinct scenarios
    let mut scenarios: BTreeMap<&ComponentId, BTreeSet<&str>> = BTreeMap::new();
    for r in records {
        if filter == UsageFilter::Direct && r.mode != UsageMode::Direct {
            continue;
        }
        if provenance.contains_key(&r.component) {
            scenarios.entry(&r.component).or_default().insert(&r.domain);
        }
    }
    let hundred = S::from_count(100);
    let mut out = BTreeMap::new();
    for p in Provenance::ALL {
        let available = provenance.values().filter(|q| **q == p).count();
        let used: Vec<usize> =
            scenarios.iter().filter(|(id, _)| provenance[**id] == p).map(|(_, s)| s.len()).collect();
        let pairs: usize = used.iter().sum();
        let multi = used.iter().filter(|n| **n >= 2).count();
        let frac = |num: usize, den: usize| if den == 0 { S::zero() } else { S::ratio(num, den) };
        out.insert(
            p,
            UsageStats {
                available,
                total_used: used.len(),
                utilization_pct: frac(used.len(), available) * hundred.clone(),
                per_scenario_mean: S::ratio(pairs, scenario_count),
                reuse_rate: frac(pairs, used.len()),
                multi_use_pct: frac(multi, used.len()) * hundred.clone(),
            },
        );
    }
    Ok(out)
}

/// Whole-repository counts plus usage analytics over every domain that has
/// an archived policy or usage records.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepoReport {
    pub validated: usize,
    pub learned: usize,
    pub tombstoned: usize,
    pub archived_domains: usize,
    /// live components per provenance
    pub provenance: BTreeMap<Provenance, usize>,
    pub usage: BTreeMap<Provenance, UsageStats<f64>>,
}

impl super::Repository {
    pub fn report(&self) -> RepoReport {
        let live = self.live_components();
        let mut provenance: BTreeMap<Provenance, usize> = Provenance::ALL.iter().map(|p| (*p, 0)).collect();
        for c in &live {
            *provenance.entry(c.provenance).or_default() += 1;
        }
        let available: Vec<(ComponentId, Provenance)> = live.iter().map(|c| (c.id.clone(), c.provenance)).collect();
        let scenarios: BTreeSet<&str> =
            self.archive().keys().map(String::as_str).chain(self.usage().iter().map(|u| u.domain.as_str())).collect();
        RepoReport {
            validated: self.validated().len(),
            learned: self.learned().len(),
            tombstoned: self.all().iter().filter(|s| s.tombstoned).count(),
            archived_domains: self.archive().len(),
            provenance,
            usage: usage_stats(&available, self.usage(), scenarios.len(), UsageFilter::Any).unwrap_or_default(),
        }
    }
}
