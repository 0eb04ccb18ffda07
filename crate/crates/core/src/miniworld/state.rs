use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{StatePredicate, Value};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub kind: String,
    pub fields: BTreeMap<String, Value>,
}

impl Record {
    pub fn get(&self, field: &str) -> Option<&Value> {
        self.fields.get(field)
    }

    pub fn get_str(&self, field: &str) -> Option<&str> {
        self.fields.get(field).and_then(Value::as_str)
    }

    fn matches(&self, kind: &str, filter: &BTreeMap<String, Value>) -> bool {
        self.kind == kind && filter.iter().all(|(k, v)| self.fields.get(k) == Some(v))
    }

    /// Response rendering: the fields plus the record id.
    pub fn to_value(&self, id: &str) -> Value {
        let mut fields = self.fields.clone();
        fields.insert("id".into(), Value::Str(id.to_string()));
        Value::Record(fields)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AppStore {
    pub records: BTreeMap<String, Record>,
    pub next_id: u64,
}

/// Whole simulated world: one record store per app plus the login sessions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub apps: BTreeMap<String, AppStore>,
    /// app -> logged-in username
    pub sessions: BTreeMap<String, String>,
}

/// A record placed into the initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub app: String,
    pub id: String,
    pub kind: String,
    pub fields: BTreeMap<String, Value>,
}

impl WorldState {
    pub fn from_seed_records<'a>(records: impl IntoIterator<Item = &'a SeedRecord>) -> Self {
        let mut state = WorldState::default();
        for r in records {
            state
                .apps
                .entry(r.app.clone())
                .or_default()
                .records
                .insert(r.id.clone(), Record { kind: r.kind.clone(), fields: r.fields.clone() });
        }
        state
    }

    pub fn store(&self, app: &str) -> Option<&AppStore> {
        self.apps.get(app)
    }

    pub fn records_of<'a>(&'a self, app: &str, kind: &'a str) -> impl Iterator<Item = (&'a String, &'a Record)> + 'a {
        self.apps.get(app).into_iter().flat_map(move |s| s.records.iter().filter(move |(_, r)| r.kind == kind))
    }

    /// Allocates a fresh record id in `app`.
    pub(crate) fn fresh_id(&mut self, app: &str, kind: &str) -> String {
        let store = self.apps.entry(app.to_string()).or_default();
        loop {
            store.next_id += 1;
            let id = format!("{kind}-{}", store.next_id);
            if !store.records.contains_key(&id) {
                return id;
            }
        }
    }

    pub(crate) fn insert(&mut self, app: &str, id: String, record: Record) {
        self.apps.entry(app.to_string()).or_default().records.insert(id, record);
    }

    pub fn check(&self, predicate: &StatePredicate) -> bool {
        let count = |app: &str, kind: &str, fields: &BTreeMap<String, Value>| {
            self.apps
                .get(app)
                .map(|s| s.records.values().filter(|r| r.matches(kind, fields)).count())
                .unwrap_or(0)
        };
        match predicate {
            StatePredicate::RecordExists { app, kind, fields } => count(app, kind, fields) > 0,
            StatePredicate::RecordAbsent { app, kind, fields } => count(app, kind, fields) == 0,
            StatePredicate::RecordCount { app, kind, fields, count: n } => count(app, kind, fields) == *n,
            StatePredicate::FieldEquals { app, id, field, value } => self
                .apps
                .get(app)
                .and_then(|s| s.records.get(id))
                .and_then(|r| r.fields.get(field))
                .is_some_and(|v| v == value),
        }
    }
}
