//! Learned and validated component stores, the policy archive, usage
//! records and the Table-2 style usage analytics.

mod stats;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use stats::{usage_stats, RepoReport, UsageFilter, UsageStats};

use crate::lang::{self, FnDef};
use crate::model::{Canonical, ComponentId, Domain, ModelError, ParameterBinding, Policy, PolicySignature};
use crate::retrieval::{EmbedError, Embedder, EntryKind, IndexError, NgramEmbedder, VectorIndex};

#[derive(Debug, Error)]
pub enum RepoError {
    #[error("component `{name}` does not parse: {message}")]
    Parse { name: String, message: String },
    #[error("component body defines `{found}` but is named `{expected}`")]
    NameMismatch { expected: String, found: String },
    #[error("component `{0}` header does not match its signature")]
    SignatureMismatch(String),
    #[error("component `{0}` already exists in the validated store")]
    NameCollision(String),
    #[error("component `{component}` calls unknown component `{callee}`")]
    UnknownCallee { component: String, callee: String },
    #[error("unknown component id `{0}`")]
    UnknownId(ComponentId),
    #[error("component `{0}` is tombstoned")]
    Tombstoned(ComponentId),
    #[error("live component `{dependent}` still calls replaced `{replaced}`")]
    DanglingDependent { dependent: String, replaced: String },
    #[error("component call cycle: {0}")]
    Cycle(String),
    #[error("scenario count must be positive")]
    NoScenarios,
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    SeedUnchanged,
    SeedModified,
    Learned,
}

impl Provenance {
    pub const ALL: [Provenance; 3] = [Provenance::SeedUnchanged, Provenance::SeedModified, Provenance::Learned];

    pub fn is_seed(self) -> bool {
        self != Provenance::Learned
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::SeedUnchanged => "seed-unchanged",
            Provenance::SeedModified => "seed-modified",
            Provenance::Learned => "learned",
        }
    }
}

/// A component as proposed by an agent, before it gets an id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDraft {
    pub name: String,
    pub signature: PolicySignature,
    pub body: String,
    pub description: String,
    pub usage_info: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub id: ComponentId,
    pub name: String,
    pub signature: PolicySignature,
    pub body: String,
    pub description: String,
    pub usage_info: String,
    pub provenance: Provenance,
    pub origin_domains: Vec<String>,
    pub created_at: u64,
    /// Components called from the body, resolved when stored.
    pub depends_on: Vec<ComponentId>,
}

impl Component {
    pub fn fn_def(&self) -> FnDef {
        parse_body(&self.name, &self.body).expect("stored bodies parse")
    }

    /// Text embedded for retrieval and clustering.
    pub fn embedding_text(&self) -> String {
        component_text(&self.signature, &self.description)
    }
}

/// The signature already carries the name.
pub fn component_text(signature: &PolicySignature, description: &str) -> String {
    format!("{signature} {description}")
}

fn parse_body(name: &str, body: &str) -> Result<FnDef, RepoError> {
    let ast = lang::parse(body).map_err(|e| RepoError::Parse { name: name.into(), message: e.to_string() })?;
    if ast.root.name != name {
        return Err(RepoError::NameMismatch { expected: name.into(), found: ast.root.name.clone() });
    }
    Ok(ast.root)
}

impl ComponentDraft {
    pub fn check(&self) -> Result<FnDef, RepoError> {
        let def = parse_body(&self.name, &self.body)?;
        if def.params != self.signature.param_names() || self.signature.name != self.name {
            return Err(RepoError::SignatureMismatch(self.name.clone()));
        }
        Ok(def)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StoreKind {
    Learned,
    Validated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredComponent {
    #[serde(flatten)]
    pub component: Component,
    pub store: StoreKind,
    pub tombstoned: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UsageMode {
    Direct,
    Indirect,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub component: ComponentId,
    pub domain: String,
    pub mode: UsageMode,
    pub iteration: u64,
}

/// The policy that currently stands for a solved domain, with everything
/// needed to re-validate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchivedPolicy {
    pub domain: Domain,
    pub policy: Policy,
    pub bindings: Vec<ParameterBinding>,
}

/// Who creates components right now: seeding stamps new components as seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RepoMode {
    Seeding,
    #[default]
    Evaluation,
}

#[derive(Debug, Clone)]
pub struct Repository {
    components: Vec<StoredComponent>,
    usage: Vec<UsageRecord>,
    archive: BTreeMap<String, ArchivedPolicy>,
    index: VectorIndex<f64>,
    embedder: NgramEmbedder,
    mode: RepoMode,
}

impl Default for Repository {
    fn default() -> Self {
        Self::new()
    }
}

/// Candidate component bodies layered over the repository for validation.
pub type Overlay = BTreeMap<String, FnDef>;

impl Repository {
    pub fn new() -> Self {
        let embedder = NgramEmbedder::default();
        Self {
            components: Vec::new(),
            usage: Vec::new(),
            archive: BTreeMap::new(),
            index: VectorIndex::new(embedder.dim),
            embedder,
            mode: RepoMode::Evaluation,
        }
    }

    pub fn set_mode(&mut self, mode: RepoMode) {
        self.mode = mode;
    }

    pub fn mode(&self) -> RepoMode {
        self.mode
    }

    pub fn embedder(&self) -> &NgramEmbedder {
        &self.embedder
    }

    /// Index over live validated components.
    pub fn index(&self) -> &VectorIndex<f64> {
        &self.index
    }

    pub fn all(&self) -> &[StoredComponent] {
        &self.components
    }

    pub fn get(&self, id: &ComponentId) -> Option<&Component> {
        self.stored(id).map(|s| &s.component)
    }

    pub fn stored(&self, id: &ComponentId) -> Option<&StoredComponent> {
        self.components.iter().find(|s| &s.component.id == id)
    }

    fn live(&self, store: StoreKind) -> impl Iterator<Item = &Component> {
        self.components.iter().filter(move |s| !s.tombstoned && s.store == store).map(|s| &s.component)
    }

    pub fn learned(&self) -> Vec<&Component> {
        self.live(StoreKind::Learned).collect()
    }

    pub fn validated(&self) -> Vec<&Component> {
        self.live(StoreKind::Validated).collect()
    }

    pub fn live_components(&self) -> Vec<&Component> {
        self.components.iter().filter(|s| !s.tombstoned).map(|s| &s.component).collect()
    }

    pub fn validated_by_name(&self, name: &str) -> Option<&Component> {
        self.live(StoreKind::Validated).find(|c| c.name == name)
    }

    pub fn usage(&self) -> &[UsageRecord] {
        &self.usage
    }

    pub fn archive(&self) -> &BTreeMap<String, ArchivedPolicy> {
        &self.archive
    }

    pub fn archived(&self, domain: &str) -> Option<&ArchivedPolicy> {
        self.archive.get(domain)
    }

    pub fn archive_policy(&mut self, entry: ArchivedPolicy) {
        self.archive.insert(entry.domain.id.clone(), entry);
    }

    fn next_ordinal(&self) -> u64 {
        self.components.iter().map(|s| s.component.created_at + 1).max().unwrap_or(1)
    }

    fn new_provenance(&self) -> Provenance {
        match self.mode {
            RepoMode::Seeding => Provenance::SeedUnchanged,
            RepoMode::Evaluation => Provenance::Learned,
        }
    }

    /// Resolves the component names called by each draft: other drafts of
    /// the same batch first, then `visible`.
    fn resolve_batch(
        drafts: &[ComponentDraft],
        visible: &BTreeMap<String, ComponentId>,
        batch_ids: &[ComponentId],
    ) -> Result<Vec<Vec<ComponentId>>, RepoError> {
        let batch: BTreeMap<&str, &ComponentId> = drafts.iter().map(|d| d.name.as_str()).zip(batch_ids).collect();
        let mut all_defs: BTreeMap<String, FnDef> = BTreeMap::new();
        let mut deps = Vec::new();
        for d in drafts {
            let def = d.check()?;
            let mut mine = Vec::new();
            for callee in def.component_calls() {
                let id = batch
                    .get(callee)
                    .map(|id| (*id).clone())
                    .or_else(|| visible.get(callee).cloned())
                    .ok_or_else(|| RepoError::UnknownCallee { component: d.name.clone(), callee: callee.to_string() })?;
                mine.push(id);
            }
            all_defs.insert(d.name.clone(), def);
            deps.push(mine);
        }
        for d in drafts {
            if let Some(cycle) = lang::component_cycle(&all_defs[&d.name], &all_defs) {
                return Err(RepoError::Cycle(cycle.join(" -> ")));
            }
        }
        Ok(deps)
    }

    fn visible_validated(&self, excluding: &BTreeSet<ComponentId>) -> BTreeMap<String, ComponentId> {
        self.live(StoreKind::Validated)
            .filter(|c| !excluding.contains(&c.id))
            .map(|c| (c.name.clone(), c.id.clone()))
            .collect()
    }

    /// Appends components to the learned store. Calls resolve within the
    /// batch, then against live validated components. All or nothing.
    pub fn add_learned_batch(&mut self, drafts: Vec<ComponentDraft>, origin_domain: &str) -> Result<Vec<ComponentId>, RepoError> {
        let first = self.next_ordinal();
        let ids: Vec<ComponentId> = (0..drafts.len() as u64).map(|i| ComponentId::from_ordinal(first + i)).collect();
        let deps = Self::resolve_batch(&drafts, &self.visible_validated(&BTreeSet::new()), &ids)?;
        let provenance = self.new_provenance();
        for (i, (d, depends_on)) in drafts.into_iter().zip(deps).enumerate() {
            self.components.push(StoredComponent {
                component: Component {
                    id: ids[i].clone(),
                    name: d.name,
                    signature: d.signature,
                    body: d.body,
                    description: d.description,
                    usage_info: d.usage_info,
                    provenance,
                    origin_domains: vec![origin_domain.to_string()],
                    created_at: first + i as u64,
                    depends_on,
                },
                store: StoreKind::Learned,
                tombstoned: false,
            });
        }
        Ok(ids)
    }

    pub fn add_learned(&mut self, draft: ComponentDraft, origin_domain: &str) -> Result<ComponentId, RepoError> {
        Ok(self.add_learned_batch(vec![draft], origin_domain)?.remove(0))
    }

    /// Moves components into the validated store, in one step:
    /// `new` drafts become fresh validated components, `keep` ids (learned)
    /// move over unchanged, `replacing` ids are tombstoned.
    ///
    /// Fails without touching anything on a name collision with a live
    /// validated component that is not being replaced, or when a surviving
    /// component still calls a replaced one.
    pub fn promote(
        &mut self,
        new: Vec<ComponentDraft>,
        keep: &[ComponentId],
        replacing: &[ComponentId],
    ) -> Result<Vec<ComponentId>, RepoError> {
        let replaced: BTreeSet<ComponentId> = replacing.iter().cloned().collect();
        for id in keep.iter().chain(replacing) {
            match self.stored(id) {
                None => return Err(RepoError::UnknownId(id.clone())),
                Some(s) if s.tombstoned => return Err(RepoError::Tombstoned(id.clone())),
                Some(_) => {}
            }
        }
        // Names that will be live in the validated store afterwards.
        let mut names: BTreeSet<String> = self
            .live(StoreKind::Validated)
            .filter(|c| !replaced.contains(&c.id) && !keep.contains(&c.id))
            .map(|c| c.name.clone())
            .collect();
        for name in keep.iter().map(|id| self.get(id).expect("checked").name.clone()).chain(new.iter().map(|d| d.name.clone())) {
            if !names.insert(name.clone()) {
                return Err(RepoError::NameCollision(name));
            }
        }
        // Nothing that survives may call a replaced component.
        for s in self.components.iter().filter(|s| !s.tombstoned && !replaced.contains(&s.component.id)) {
            if let Some(r) = s.component.depends_on.iter().find(|d| replaced.contains(*d)) {
                return Err(RepoError::DanglingDependent {
                    dependent: s.component.name.clone(),
                    replaced: self.get(r).map(|c| c.name.clone()).unwrap_or_else(|| r.to_string()),
                });
            }
        }
        let first = self.next_ordinal();
        let ids: Vec<ComponentId> = (0..new.len() as u64).map(|i| ComponentId::from_ordinal(first + i)).collect();
        let mut visible = self.visible_validated(&replaced);
        for id in keep {
            let c = self.get(id).expect("checked");
            visible.insert(c.name.clone(), c.id.clone());
        }
        let deps = Self::resolve_batch(&new, &visible, &ids)?;

        let replaced_comps: Vec<&Component> = replacing.iter().map(|id| self.get(id).expect("checked")).collect();
        let provenance = match self.mode {
            RepoMode::Seeding => Provenance::SeedUnchanged,
            RepoMode::Evaluation if replaced_comps.iter().any(|c| c.provenance.is_seed()) => Provenance::SeedModified,
            RepoMode::Evaluation => Provenance::Learned,
        };
        let mut origins: Vec<String> = replaced_comps.iter().flat_map(|c| c.origin_domains.iter().cloned()).collect();
        origins.sort();
        origins.dedup();

        for s in self.components.iter_mut() {
            if replaced.contains(&s.component.id) {
                s.tombstoned = true;
            } else if keep.contains(&s.component.id) {
                s.store = StoreKind::Validated;
            }
        }
        for (i, (d, depends_on)) in new.into_iter().zip(deps).enumerate() {
            self.components.push(StoredComponent {
                component: Component {
                    id: ids[i].clone(),
                    name: d.name,
                    signature: d.signature,
                    body: d.body,
                    description: d.description,
                    usage_info: d.usage_info,
                    provenance,
                    origin_domains: origins.clone(),
                    created_at: first + i as u64,
                    depends_on,
                },
                store: StoreKind::Validated,
                tombstoned: false,
            });
        }
        self.refresh_index()?;
        Ok(ids)
    }

    /// Rebuilds the index over live validated components in created-at order.
    pub fn refresh_index(&mut self) -> Result<(), RepoError> {
        let mut index = VectorIndex::new(self.embedder.dim);
        for c in self.live(StoreKind::Validated) {
            index.add_text(&self.embedder as &dyn Embedder<f64>, c.id.as_str(), EntryKind::Component, c.embedding_text())?;
        }
        self.index = index;
        Ok(())
    }

    /// Ids reachable from `roots` through `depends_on`, roots included.
    pub fn closure(&self, roots: &[ComponentId]) -> Vec<ComponentId> {
        let mut seen: BTreeSet<ComponentId> = BTreeSet::new();
        let mut order = Vec::new();
        let mut stack: Vec<ComponentId> = roots.iter().rev().cloned().collect();
        while let Some(id) = stack.pop() {
            if seen.insert(id.clone()) {
                if let Some(c) = self.get(&id) {
                    stack.extend(c.depends_on.iter().rev().cloned());
                }
                order.push(id);
            }
        }
        order
    }

    /// Name -> body map for executing a policy that references `roots`.
    pub fn resolver_for(&self, roots: &[ComponentId]) -> Overlay {
        self.closure(roots).iter().filter_map(|id| self.get(id)).map(|c| (c.name.clone(), c.fn_def())).collect()
    }

    /// Records direct use of `direct` and indirect use of everything they
    /// reach, once per (component, domain, mode).
    pub fn record_usage(&mut self, domain: &str, direct: &[ComponentId], iteration: u64) {
        let direct_set: BTreeSet<&ComponentId> = direct.iter().collect();
        let add = |usage: &mut Vec<UsageRecord>, id: &ComponentId, mode: UsageMode| {
            if !usage.iter().any(|u| &u.component == id && u.domain == domain && u.mode == mode) {
                usage.push(UsageRecord { component: id.clone(), domain: domain.into(), mode, iteration });
            }
        };
        for id in direct {
            add(&mut self.usage, id, UsageMode::Direct);
        }
        for id in self.closure(direct) {
            if !direct_set.contains(&id) {
                add(&mut self.usage, &id, UsageMode::Indirect);
            }
        }
    }

    /// Prompt blocks for `ids`, in the given order: name, signature and
    /// usage notes only, never bodies.
    pub fn summaries_for_prompt(&self, ids: &[ComponentId]) -> Vec<String> {
        ids.iter()
            .filter_map(|id| self.stored(id).filter(|s| !s.tombstoned))
            .map(|s| summary_block(&s.component))
            .collect()
    }

    /// Top-k validated components for a query text, best first.
    pub fn search(&self, query: &str, k: usize) -> Result<Vec<(ComponentId, f64)>, RepoError> {
        if self.index.is_empty() || query.trim().is_empty() {
            return Ok(Vec::new());
        }
        let q = Embedder::<f64>::embed(&self.embedder, query)?;
        Ok(self.index.search(&q, k)?.into_iter().map(|(id, s)| (ComponentId(id), s)).collect())
    }

    /// sha256 over the canonical form of every store, record and index id.
    pub fn state_hash(&self) -> String {
        let mut h = Sha256::new();
        for s in &self.components {
            h.update(s.to_canonical());
            h.update(b"\n");
        }
        for u in &self.usage {
            h.update(u.to_canonical());
            h.update(b"\n");
        }
        for a in self.archive.values() {
            h.update(a.to_canonical());
            h.update(b"\n");
        }
        for id in self.index.ids() {
            h.update(id);
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<(), RepoError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| RepoError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        write_lines(&dir.join(COMPONENTS_FILE), self.components.iter().map(Canonical::to_canonical))?;
        write_lines(&dir.join(USAGE_FILE), self.usage.iter().map(Canonical::to_canonical))?;
        write_lines(&dir.join(ARCHIVE_FILE), self.archive.values().map(Canonical::to_canonical))?;
        let index_path = dir.join(INDEX_FILE);
        fs::write(&index_path, self.index.to_canonical() + "\n").map_err(io(&index_path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RepoError> {
        let mut repo = Repository::new();
        repo.components = read_lines(&dir.join(COMPONENTS_FILE))?;
        repo.usage = read_lines(&dir.join(USAGE_FILE))?;
        repo.archive = read_lines::<ArchivedPolicy>(&dir.join(ARCHIVE_FILE))?
            .into_iter()
            .map(|a| (a.domain.id.clone(), a))
            .collect();
        let index_path = dir.join(INDEX_FILE);
        let text = fs::read_to_string(&index_path)
            .map_err(|source| RepoError::Io { path: index_path.display().to_string(), source })?;
        repo.index = VectorIndex::from_canonical(&text)?;
        for s in &repo.components {
            s.component.fn_def_checked()?;
        }
        Ok(repo)
    }

    pub fn exists(dir: &Path) -> bool {
        dir.join(COMPONENTS_FILE).is_file()
    }
}

impl Component {
    fn fn_def_checked(&self) -> Result<FnDef, RepoError> {
        parse_body(&self.name, &self.body)
    }
}

pub const COMPONENTS_FILE: &str = "components.jsonl";
pub const USAGE_FILE: &str = "usage.jsonl";
pub const ARCHIVE_FILE: &str = "archive.jsonl";
pub const INDEX_FILE: &str = "index.json";

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<(), RepoError> {
    let err = |source| RepoError::Io { path: path.display().to_string(), source };
    let mut f = std::io::BufWriter::new(fs::File::create(path).map_err(err)?);
    for line in lines {
        writeln!(f, "{line}").map_err(err)?;
    }
    f.flush().map_err(err)
}

fn read_lines<T: Canonical>(path: &Path) -> Result<Vec<T>, RepoError> {
    let text = fs::read_to_string(path).map_err(|source| RepoError::Io { path: path.display().to_string(), source })?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(T::from_canonical(l)?)).collect()
}

pub fn summary_block(c: &Component) -> String {
    format!("- {}\n  usage: {}", c.signature, c.usage_info.trim())
}

#[cfg(test)]
mod tests;
