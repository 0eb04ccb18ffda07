//! Evaluation layer: goal completion, anytime and cost curves, component
//! usage tables and report files.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::GeneralizationReport;
use crate::gateway::{PriceTable, Usage};
use crate::model::{Canonical, ComponentId, EngineConfig};
use crate::num::Scalar;
use crate::orchestrator::{DomainResult, Engine, EventKind, Mode, RunEvent, SuiteReport};
use crate::repository::{usage_stats, Provenance, Repository, UsageFilter, UsageRecord, UsageStats};

pub const SUMMARY_JSON: &str = "summary.json";
pub const SUMMARY_TXT: &str = "summary.txt";
pub const DOMAINS_CSV: &str = "domains.csv";
pub const ANYTIME_CSV: &str = "anytime.csv";
pub const COST_CSV: &str = "cost.csv";
pub const USAGE_CSV: &str = "usage.csv";
pub const EVENTS_JSONL: &str = "events.jsonl";
pub const RUN_JSON: &str = "run.json";

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no domain results")]
    Empty,
    #[error("no price table configured")]
    NoPricing,
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// Task- and scenario-level goal completion, in percent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GoalCompletion<S> {
    pub tgc: S,
    pub sgc: S,
    pub tasks_passed: usize,
    pub tasks_total: usize,
    pub domains_solved: usize,
    pub domains_total: usize,
}

pub fn tgc_sgc<S: Scalar>(results: &[DomainResult]) -> Result<GoalCompletion<S>, MetricsError> {
    if results.is_empty() {
        return Err(MetricsError::Empty);
    }
    let tasks_total: usize = results.iter().map(|r| r.tasks.len()).sum();
    let tasks_passed: usize = results.iter().map(DomainResult::passed_tasks).sum();
    let domains_solved = results.iter().filter(|r| r.solved()).count();
    let hundred = S::from_count(100);
    let tgc = if tasks_total == 0 { S::zero() } else { S::ratio(tasks_passed, tasks_total) * hundred.clone() };
    Ok(GoalCompletion {
        tgc,
        sgc: S::ratio(domains_solved, results.len()) * hundred,
        tasks_passed,
        tasks_total,
        domains_solved,
        domains_total: results.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint<S> {
    pub x: S,
    /// Fraction of the suite's domains solved so far.
    pub y: S,
}

/// One point per debugging iteration: x is the global iteration counter,
/// y the fraction of `total_domains` solved by the end of that iteration.
pub fn anytime_curve<S: Scalar>(events: &[RunEvent], total_domains: usize) -> Vec<CurvePoint<S>> {
    replay(events, total_domains).into_iter().map(|(e, y)| CurvePoint { x: S::from_count(e.iteration as usize), y }).collect()
}

/// The anytime curve with x replaced by the priced cumulative tokens.
/// x never decreases and rises whenever the token counters do.
pub fn cost_curve<S: Scalar>(
    events: &[RunEvent],
    total_domains: usize,
    prices: Option<&PriceTable<S>>,
) -> Result<Vec<CurvePoint<S>>, MetricsError> {
    let prices = prices.ok_or(MetricsError::NoPricing)?;
    Ok(replay(events, total_domains).into_iter().map(|(e, y)| CurvePoint { x: prices.price(&e.usage()), y }).collect())
}

/// Debug-iteration events paired with the solved fraction after them.
/// A domain-solved event updates the point of the iteration it closes.
fn replay<S: Scalar>(events: &[RunEvent], total_domains: usize) -> Vec<(&RunEvent, S)> {
    let mut solved = 0usize;
    let frac = |n: usize| if total_domains == 0 { S::zero() } else { S::ratio(n, total_domains) };
    let mut points: Vec<(&RunEvent, S)> = Vec::new();
    for e in events {
        match e.kind {
            EventKind::DebugIteration => points.push((e, frac(solved))),
            EventKind::DomainSolved => {
                solved += 1;
                if let Some(last) = points.last_mut() {
                    last.1 = frac(solved);
                }
            }
            EventKind::GeneralizationPass => {}
        }
    }
    points
}

/// Which components a run could use, and who used them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UsageLog {
    pub available: Vec<(ComponentId, Provenance)>,
    pub records: Vec<UsageRecord>,
}

/// Repository state before a run, to separate the run's usage from
/// earlier history.
#[derive(Debug, Clone)]
pub struct RepoSnapshot {
    live: BTreeSet<ComponentId>,
    known: BTreeSet<ComponentId>,
    usage_len: usize,
}

impl RepoSnapshot {
    pub fn of(repo: &Repository) -> Self {
        Self {
            live: repo.live_components().into_iter().map(|c| c.id.clone()).collect(),
            known: repo.all().iter().map(|s| s.component.id.clone()).collect(),
            usage_len: repo.usage().len(),
        }
    }

    /// Components live at the start or created since, with their current
    /// provenance, and the usage recorded since.
    pub fn usage_since(&self, repo: &Repository) -> UsageLog {
        let available = repo
            .all()
            .iter()
            .map(|s| &s.component)
            .filter(|c| self.live.contains(&c.id) || !self.known.contains(&c.id))
            .map(|c| (c.id.clone(), c.provenance))
            .collect();
        UsageLog { available, records: repo.usage()[self.usage_len.min(repo.usage().len())..].to_vec() }
    }
}

/// Everything a report is rendered from; saved as `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    pub backend: String,
    pub scenarios: String,
    pub config: EngineConfig,
    pub results: Vec<DomainResult>,
    pub generalizations: Vec<GeneralizationReport>,
    pub events: Vec<RunEvent>,
    /// All tokens of the run, including any spent after the last event.
    pub tokens: Usage,
    pub usage: UsageLog,
}

impl RunRecord {
    /// Captures a finished run of `engine`.
    pub fn capture(engine: &Engine, mode: Mode, backend: &str, scenarios: &str, suite: SuiteReport, before: &RepoSnapshot) -> Self {
        Self {
            mode,
            backend: backend.into(),
            scenarios: scenarios.into(),
            config: engine.config().clone(),
            results: suite.results,
            generalizations: suite.generalizations,
            events: engine.events().to_vec(),
            tokens: engine.usage(),
            usage: before.usage_since(engine.repository()),
        }
    }

    pub fn load(path: &Path) -> Result<Self, MetricsError> {
        let text = fs::read_to_string(path).map_err(|source| MetricsError::Io { path: path.into(), source })?;
        Self::from_canonical(&text).map_err(|e| MetricsError::Format { path: path.into(), message: e.to_string() })
    }

    pub fn iterations(&self) -> u64 {
        self.results.iter().map(|r| r.iterations as u64).sum()
    }

    pub fn prices(&self) -> PriceTable<f64> {
        PriceTable::from_config(&self.config)
    }

    pub fn usage_stats(&self) -> Option<std::collections::BTreeMap<Provenance, UsageStats<f64>>> {
        usage_stats(&self.usage.available, &self.usage.records, self.results.len(), UsageFilter::Any).ok()
    }
}

#[derive(Debug, Serialize)]
struct Summary<'a> {
    mode: Mode,
    backend: &'a str,
    scenarios: &'a str,
    config: &'a EngineConfig,
    domains: usize,
    domains_solved: usize,
    tasks: usize,
    tasks_passed: usize,
    tgc_pct: Option<f64>,
    sgc_pct: Option<f64>,
    debugging_iterations: u64,
    generalization_passes: usize,
    components_merged: usize,
    components_learned: usize,
    input_tokens: u64,
    output_tokens: u64,
    cost: f64,
}

fn f(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes every report file into `dir`, creating it if needed. Output is a
/// pure function of `run`.
pub fn emit_reports(dir: &Path, run: &RunRecord) -> Result<Vec<PathBuf>, MetricsError> {
    fs::create_dir_all(dir).map_err(|source| MetricsError::Io { path: dir.into(), source })?;
    let gc = tgc_sgc::<f64>(&run.results).ok();
    let usage = run.tokens;
    let prices = run.prices();
    let total = run.results.len();
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<(), MetricsError> {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| MetricsError::Io { path: path.clone(), source })?;
        written.push(path);
        Ok(())
    };

    let summary = Summary {
        mode: run.mode,
        backend: &run.backend,
        scenarios: &run.scenarios,
        config: &run.config,
        domains: total,
        domains_solved: gc.as_ref().map_or(0, |g| g.domains_solved),
        tasks: gc.as_ref().map_or(0, |g| g.tasks_total),
        tasks_passed: gc.as_ref().map_or(0, |g| g.tasks_passed),
        tgc_pct: gc.as_ref().map(|g| g.tgc),
        sgc_pct: gc.as_ref().map(|g| g.sgc),
        debugging_iterations: run.iterations(),
        generalization_passes: run.generalizations.len(),
        components_merged: run.generalizations.iter().map(|g| g.merged).sum(),
        components_learned: run.results.iter().map(|r| r.components_learned.len()).sum(),
        input_tokens: usage.input_tokens,
        output_tokens: usage.output_tokens,
        cost: prices.price(&usage),
    };
    put(SUMMARY_JSON, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;

    put(
        DOMAINS_CSV,
        csv_text(
            &["domain", "status", "tasks_passed", "tasks_total", "iterations", "input_tokens", "output_tokens", "components_learned", "error"],
            run.results.iter().map(|r| {
                vec![
                    r.domain.clone(),
                    if r.solved() { "solved" } else { "failed" }.to_string(),
                    r.passed_tasks().to_string(),
                    r.tasks.len().to_string(),
                    r.iterations.to_string(),
                    r.usage.input_tokens.to_string(),
                    r.usage.output_tokens.to_string(),
                    r.components_learned.iter().map(|c| c.as_str()).collect::<Vec<_>>().join(" "),
                    r.error.clone().unwrap_or_default(),
                ]
            }),
        ),
    )?;

    let anytime = anytime_curve::<f64>(&run.events, total);
    put(ANYTIME_CSV, csv_text(&["iteration", "sgc"], anytime.iter().map(|p| vec![format!("{}", p.x as u64), f(p.y)])))?;
    let cost = cost_curve::<f64>(&run.events, total, Some(&prices))?;
    put(COST_CSV, csv_text(&["cost", "sgc"], cost.iter().map(|p| vec![f(p.x), f(p.y)])))?;

    let stats = run.usage_stats();
    put(
        USAGE_CSV,
        csv_text(
            &["provenance", "available", "used", "utilization_pct", "per_scenario_mean", "reuse_rate", "multi_use_pct"],
            stats.iter().flatten().map(|(p, s)| {
                vec![
                    p.as_str().to_string(),
                    s.available.to_string(),
                    s.total_used.to_string(),
                    f(s.utilization_pct),
                    f(s.per_scenario_mean),
                    f(s.reuse_rate),
                    f(s.multi_use_pct),
                ]
            }),
        ),
    )?;

    let mut events = String::new();
    for e in &run.events {
        events.push_str(&e.to_canonical());
        events.push('\n');
    }
    put(EVENTS_JSONL, events)?;
    put(SUMMARY_TXT, summary_text(run, &summary))?;
    put(RUN_JSON, run.to_canonical_pretty() + "\n")?;
    Ok(written)
}

fn csv_text(header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    String::from_utf8(w.into_inner().expect("flushing to memory")).expect("csv of utf-8 fields")
}

fn summary_text(run: &RunRecord, s: &Summary) -> String {
    let pct = |x: Option<f64>| x.map_or("n/a".to_string(), |v| format!("{v:.1}%"));
    let mut out = String::new();
    let _ = writeln!(out, "mode: {}  backend: {}  scenarios: {}", run.mode, run.backend, run.scenarios);
    let _ = writeln!(out, "domains solved: {}/{}  tasks passed: {}/{}", s.domains_solved, s.domains, s.tasks_passed, s.tasks);
    let _ = writeln!(out, "TGC: {}  SGC: {}", pct(s.tgc_pct), pct(s.sgc_pct));
    let _ = writeln!(out, "debugging iterations: {}  generalization passes: {}", s.debugging_iterations, s.generalization_passes);
    let _ = writeln!(out, "components learned: {}  merged: {}", s.components_learned, s.components_merged);
    let _ = writeln!(out, "tokens: {} in, {} out  cost: ${:.6}", s.input_tokens, s.output_tokens, s.cost);
    if !run.results.is_empty() {
        let width = run.results.iter().map(|r| r.domain.len()).max().unwrap_or(0).max("domain".len());
        let _ = writeln!(out, "\n{:width$}  status  tasks  iterations", "domain");
        for r in &run.results {
            let status = if r.solved() { "solved" } else { "failed" };
            let tasks = format!("{}/{}", r.passed_tasks(), r.tasks.len());
            let _ = writeln!(out, "{:width$}  {status:6}  {tasks:5}  {}", r.domain, r.iterations);
        }
    }
    out
}
