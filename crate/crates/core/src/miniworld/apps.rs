//! Api catalog and transition function of the simulated apps.

use std::collections::BTreeMap;

use thiserror::Error;

use super::state::{Record, WorldState};
use crate::model::{ApiDoc, ApiParam, ParamType, Value};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ApiError {
    #[error("unknown api {0}.{1}")]
    UnknownApi(String, String),
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("not logged in")]
    NotLoggedIn,
    #[error("{0}")]
    Domain(String),
}

fn domain_err(msg: impl Into<String>) -> ApiError {
    ApiError::Domain(msg.into())
}

pub const APPS: [&str; 7] = ["profile", "mail", "pay", "music", "contacts", "shop", "chat"];

fn doc(app: &str, api: &str, params: &[(&str, ParamType)], protected: bool, description: &str) -> ApiDoc {
    ApiDoc {
        app: app.into(),
        api: api.into(),
        params: params.iter().map(|(n, ty)| ApiParam { name: n.to_string(), ty: *ty }).collect(),
        description: description.into(),
        protected,
    }
}

fn login_doc(app: &str, what: &str) -> ApiDoc {
    doc(
        app,
        "login",
        &[("username", ParamType::String), ("password", ParamType::String)],
        false,
        &format!("Log in to the {what} app with a username and password; later {app} calls act as that account."),
    )
}

/// Every api of every app, in a fixed order.
pub fn catalog() -> Vec<ApiDoc> {
    use ParamType::{Number as N, String as S};
    vec![
        doc("profile", "credentials", &[("app", S)], false, "Return the supervisor's saved username and password for the named app."),
        doc("profile", "whoami", &[], false, "Return the supervisor's name and primary email address."),
        doc("profile", "list_apps", &[], false, "List the apps the supervisor has saved credentials for."),
        doc("profile", "address", &[], false, "Return the supervisor's home address."),
        login_doc("mail", "email"),
        doc("mail", "send", &[("to", S), ("subject", S), ("body", S)], true, "Send an email from the logged-in account to an email address; returns the message id."),
        doc("mail", "inbox", &[], true, "List the messages received by the logged-in account."),
        doc("mail", "get", &[("id", S)], true, "Fetch one message of the logged-in account by id."),
        doc("mail", "delete", &[("id", S)], true, "Delete a message of the logged-in account."),
        login_doc("pay", "payments"),
        doc("pay", "balance", &[], true, "Return the wallet balance of the logged-in account."),
        doc("pay", "transfer", &[("to", S), ("amount", N), ("note", S)], true, "Send money from the logged-in wallet to another user's email; fails on insufficient funds."),
        doc("pay", "transactions", &[], true, "List payment transactions sent or received by the logged-in account."),
        doc("pay", "get", &[("id", S)], true, "Fetch one payment transaction by id."),
        login_doc("music", "music streaming"),
        doc("music", "search", &[("query", S)], true, "Search the song catalog by title; returns songs with id, title and artist."),
        doc("music", "playlists", &[], true, "List the playlists owned by the logged-in account."),
        doc("music", "create_playlist", &[("name", S)], true, "Create an empty playlist; returns its id."),
        doc("music", "add_song", &[("playlist_id", S), ("song_id", S)], true, "Add a song to one of the logged-in account's playlists."),
        doc("music", "delete_playlist", &[("id", S)], true, "Delete a playlist owned by the logged-in account."),
        login_doc("contacts", "address book"),
        doc("contacts", "search", &[("query", S)], true, "Search the logged-in account's contacts by name; returns id, name, email and phone."),
        doc("contacts", "add", &[("name", S), ("email", S)], true, "Add a contact with a name and email address; returns its id."),
        doc("contacts", "get", &[("id", S)], true, "Fetch a contact by id."),
        doc("contacts", "delete", &[("id", S)], true, "Remove a contact."),
        login_doc("shop", "online shopping"),
        doc("shop", "search", &[("query", S)], true, "Search products by name; returns id, name and price."),
        doc("shop", "add_to_cart", &[("product_id", S), ("quantity", N)], true, "Put a quantity of a product into the cart."),
        doc("shop", "checkout", &[], true, "Place an order for everything in the cart and empty it; returns the order id."),
        doc("shop", "orders", &[], true, "List past orders of the logged-in account."),
        login_doc("chat", "messaging"),
        doc("chat", "send", &[("to", S), ("text", S)], true, "Send a chat message to another user by handle; returns the message id."),
        doc("chat", "messages", &[], true, "List chat messages received by the logged-in account."),
        doc("chat", "get", &[("id", S)], true, "Fetch a chat message by id."),
        doc("chat", "delete", &[("id", S)], true, "Delete a chat message sent or received by the logged-in account."),
    ]
}

fn check_args(doc: &ApiDoc, args: &BTreeMap<String, Value>) -> Result<(), ApiError> {
    for p in &doc.params {
        let v = args.get(&p.name).ok_or_else(|| ApiError::BadArgs(format!("missing argument `{}`", p.name)))?;
        let ok = matches!(
            (p.ty, v),
            (ParamType::String, Value::Str(_))
                | (ParamType::Number, Value::Num(_))
                | (ParamType::Boolean, Value::Bool(_))
                | (ParamType::ListOfString, Value::List(_))
        );
        if !ok {
            return Err(ApiError::BadArgs(format!("argument `{}` must be a {}, got {}", p.name, p.ty, v.kind_name())));
        }
    }
    if let Some(extra) = args.keys().find(|k| !doc.params.iter().any(|p| &p.name == *k)) {
        return Err(ApiError::BadArgs(format!("unexpected argument `{extra}`")));
    }
    Ok(())
}

struct Call<'a> {
    state: WorldState,
    app: &'a str,
    args: &'a BTreeMap<String, Value>,
}

impl Call<'_> {
    fn s(&self, name: &str) -> &str {
        self.args[name].as_str().expect("checked")
    }

    fn n(&self, name: &str) -> f64 {
        self.args[name].as_num().expect("checked")
    }

    fn user(&self) -> Result<String, ApiError> {
        self.state.sessions.get(self.app).cloned().ok_or(ApiError::NotLoggedIn)
    }

    fn user_exists(&self, app: &str, username: &str) -> bool {
        self.state.records_of(app, "user").any(|(_, r)| r.get_str("username") == Some(username))
    }

    fn record(&self, id: &str) -> Result<&Record, ApiError> {
        self.state
            .store(self.app)
            .and_then(|s| s.records.get(id))
            .ok_or_else(|| domain_err(format!("missing record `{id}`")))
    }

    fn list(&self, kind: &str, keep: impl Fn(&Record) -> bool) -> Value {
        Value::List(self.state.records_of(self.app, kind).filter(|(_, r)| keep(r)).map(|(id, r)| r.to_value(id)).collect())
    }

    fn create(&mut self, kind: &str, fields: Vec<(&str, Value)>) -> String {
        let id = self.state.fresh_id(self.app, kind);
        let record = Record { kind: kind.into(), fields: fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect() };
        self.state.insert(self.app, id.clone(), record);
        id
    }

    fn owned(&self, id: &str, kind: &str, owner_fields: &[&str], user: &str) -> Result<Record, ApiError> {
        let r = self.record(id)?;
        if r.kind != kind || !owner_fields.iter().any(|f| r.get_str(f) == Some(user)) {
            return Err(domain_err(format!("missing record `{id}`")));
        }
        Ok(r.clone())
    }

    fn remove(&mut self, id: &str) {
        if let Some(store) = self.state.apps.get_mut(self.app) {
            store.records.remove(id);
        }
    }

    fn login(&mut self) -> Result<Value, ApiError> {
        let (u, p) = (self.s("username").to_string(), self.s("password").to_string());
        let ok = self
            .state
            .records_of(self.app, "user")
            .any(|(_, r)| r.get_str("username") == Some(&u) && r.get_str("password") == Some(&p));
        if !ok {
            return Err(domain_err("invalid credentials"));
        }
        self.state.sessions.insert(self.app.to_string(), u.clone());
        Ok(Value::record([("ok", Value::Bool(true)), ("username", Value::Str(u))]))
    }
}

fn id_value(id: String) -> Value {
    Value::record([("id", Value::Str(id))])
}

/// Applies one api call to a copy of `state`. The input is never modified;
/// on error no new state is produced.
pub fn apply_api(
    state: &WorldState,
    app: &str,
    api: &str,
    args: &BTreeMap<String, Value>,
) -> Result<(WorldState, Value), ApiError> {
    let docs = catalog();
    let doc = docs
        .iter()
        .find(|d| d.app == app && d.api == api)
        .ok_or_else(|| ApiError::UnknownApi(app.into(), api.into()))?;
    check_args(doc, args)?;
    let mut c = Call { state: state.clone(), app, args };
    if api == "login" {
        let v = c.login()?;
        return Ok((c.state, v));
    }
    let user = if doc.protected { c.user()? } else { String::new() };
    let response = match (app, api) {
        ("profile", "credentials") => {
            let target = c.s("app");
            let (_, r) = c
                .state
                .records_of("profile", "credential")
                .find(|(_, r)| r.get_str("app") == Some(target))
                .ok_or_else(|| domain_err(format!("no saved credentials for app `{target}`")))?;
            Value::record([
                ("username", r.get("username").cloned().unwrap_or(Value::Null)),
                ("password", r.get("password").cloned().unwrap_or(Value::Null)),
            ])
        }
        ("profile", "whoami") => {
            let (id, r) = c.state.records_of("profile", "owner").next().ok_or_else(|| domain_err("no owner profile"))?;
            r.to_value(id)
        }
        ("profile", "list_apps") => Value::List(
            c.state.records_of("profile", "credential").filter_map(|(_, r)| r.get("app").cloned()).collect(),
        ),
        ("profile", "address") => {
            let (_, r) = c.state.records_of("profile", "owner").next().ok_or_else(|| domain_err("no owner profile"))?;
            r.get("address").cloned().unwrap_or(Value::Null)
        }
        ("mail", "send") => {
            let to = c.s("to").to_string();
            if !c.user_exists("mail", &to) {
                return Err(domain_err(format!("unknown recipient `{to}`")));
            }
            let (subject, body) = (c.args["subject"].clone(), c.args["body"].clone());
            id_value(c.create("message", vec![("from", user.into()), ("to", to.into()), ("subject", subject), ("body", body)]))
        }
        ("mail", "inbox") => c.list("message", |r| r.get_str("to") == Some(&user)),
        ("mail", "get") => c.owned(c.s("id"), "message", &["to", "from"], &user)?.to_value(c.s("id")),
        ("mail", "delete") => {
            let id = c.s("id").to_string();
            c.owned(&id, "message", &["to", "from"], &user)?;
            c.remove(&id);
            Value::Bool(true)
        }
        ("pay", "balance") => {
            let (_, r) = c
                .state
                .records_of("pay", "user")
                .find(|(_, r)| r.get_str("username") == Some(&user))
                .ok_or_else(|| domain_err("account vanished"))?;
            Value::record([("balance", r.get("balance").cloned().unwrap_or(Value::Num(0.0)))])
        }
        ("pay", "transfer") => {
            let (to, amount, note) = (c.s("to").to_string(), c.n("amount"), c.args["note"].clone());
            if amount <= 0.0 {
                return Err(domain_err("amount must be positive"));
            }
            if to == user {
                return Err(domain_err("cannot transfer to yourself"));
            }
            let find = |c: &Call, name: &str| {
                c.state
                    .records_of("pay", "user")
                    .find(|(_, r)| r.get_str("username") == Some(name))
                    .map(|(id, r)| (id.clone(), r.get("balance").and_then(Value::as_num).unwrap_or(0.0)))
            };
            let (from_id, from_bal) = find(&c, &user).ok_or_else(|| domain_err("account vanished"))?;
            let (to_id, to_bal) = find(&c, &to).ok_or_else(|| domain_err(format!("unknown recipient `{to}`")))?;
            if amount > from_bal {
                return Err(domain_err("insufficient funds"));
            }
            let store = c.state.apps.get_mut("pay").expect("pay exists");
            store.records.get_mut(&from_id).expect("found").fields.insert("balance".into(), Value::Num(from_bal - amount));
            store.records.get_mut(&to_id).expect("found").fields.insert("balance".into(), Value::Num(to_bal + amount));
            let id = c.create(
                "transaction",
                vec![("from", user.into()), ("to", to.into()), ("amount", Value::Num(amount)), ("note", note)],
            );
            Value::record([("id", Value::Str(id)), ("balance", Value::Num(from_bal - amount))])
        }
        ("pay", "transactions") => {
            c.list("transaction", |r| r.get_str("from") == Some(&user) || r.get_str("to") == Some(&user))
        }
        ("pay", "get") => c.owned(c.s("id"), "transaction", &["from", "to"], &user)?.to_value(c.s("id")),
        ("music", "search") => {
            let q = c.s("query").to_lowercase();
            c.list("song", |r| r.get_str("title").is_some_and(|t| t.to_lowercase().contains(&q)))
        }
        ("music", "playlists") => c.list("playlist", |r| r.get_str("owner") == Some(&user)),
        ("music", "create_playlist") => {
            let name = c.args["name"].clone();
            id_value(c.create("playlist", vec![("owner", user.into()), ("name", name)]))
        }
        ("music", "add_song") => {
            let (pid, sid) = (c.s("playlist_id").to_string(), c.s("song_id").to_string());
            let playlist = c.owned(&pid, "playlist", &["owner"], &user)?;
            let song = c.record(&sid)?.clone();
            if song.kind != "song" {
                return Err(domain_err(format!("missing record `{sid}`")));
            }
            let fields = vec![
                ("playlist", Value::Str(pid)),
                ("playlist_name", playlist.get("name").cloned().unwrap_or(Value::Null)),
                ("song", Value::Str(sid)),
                ("song_title", song.get("title").cloned().unwrap_or(Value::Null)),
                ("owner", Value::Str(user)),
            ];
            id_value(c.create("entry", fields))
        }
        ("music", "delete_playlist") => {
            let id = c.s("id").to_string();
            c.owned(&id, "playlist", &["owner"], &user)?;
            c.remove(&id);
            Value::Bool(true)
        }
        ("contacts", "search") => {
            let q = c.s("query").to_lowercase();
            c.list("contact", |r| {
                r.get_str("owner") == Some(&user) && r.get_str("name").is_some_and(|n| n.to_lowercase().contains(&q))
            })
        }
        ("contacts", "add") => {
            let (name, email) = (c.args["name"].clone(), c.args["email"].clone());
            id_value(c.create("contact", vec![("owner", user.into()), ("name", name), ("email", email)]))
        }
        ("contacts", "get") => c.owned(c.s("id"), "contact", &["owner"], &user)?.to_value(c.s("id")),
        ("contacts", "delete") => {
            let id = c.s("id").to_string();
            c.owned(&id, "contact", &["owner"], &user)?;
            c.remove(&id);
            Value::Bool(true)
        }
        ("shop", "search") => {
            let q = c.s("query").to_lowercase();
            c.list("product", |r| r.get_str("name").is_some_and(|n| n.to_lowercase().contains(&q)))
        }
        ("shop", "add_to_cart") => {
            let (pid, qty) = (c.s("product_id").to_string(), c.n("quantity"));
            if qty < 1.0 || qty.fract() != 0.0 {
                return Err(domain_err("quantity must be a positive whole number"));
            }
            let product = c.record(&pid)?.clone();
            if product.kind != "product" {
                return Err(domain_err(format!("missing record `{pid}`")));
            }
            let fields = vec![
                ("owner", Value::Str(user)),
                ("product", Value::Str(pid)),
                ("product_name", product.get("name").cloned().unwrap_or(Value::Null)),
                ("quantity", Value::Num(qty)),
            ];
            id_value(c.create("cart_item", fields))
        }
        ("shop", "checkout") => {
            let items: Vec<(String, Record)> = c
                .state
                .records_of("shop", "cart_item")
                .filter(|(_, r)| r.get_str("owner") == Some(&user))
                .map(|(id, r)| (id.clone(), r.clone()))
                .collect();
            if items.is_empty() {
                return Err(domain_err("cart is empty"));
            }
            let order = c.create("order", vec![("owner", user.clone().into()), ("lines", Value::Num(items.len() as f64))]);
            for (id, item) in items {
                c.remove(&id);
                let mut fields = item.fields;
                fields.insert("order".into(), Value::Str(order.clone()));
                let line_id = c.state.fresh_id("shop", "order_item");
                c.state.insert("shop", line_id, Record { kind: "order_item".into(), fields });
            }
            id_value(order)
        }
        ("shop", "orders") => c.list("order", |r| r.get_str("owner") == Some(&user)),
        ("chat", "send") => {
            let to = c.s("to").to_string();
            if !c.user_exists("chat", &to) {
                return Err(domain_err(format!("unknown recipient `{to}`")));
            }
            let text = c.args["text"].clone();
            id_value(c.create("chat_message", vec![("from", user.into()), ("to", to.into()), ("text", text)]))
        }
        ("chat", "messages") => c.list("chat_message", |r| r.get_str("to") == Some(&user)),
        ("chat", "get") => c.owned(c.s("id"), "chat_message", &["to", "from"], &user)?.to_value(c.s("id")),
        ("chat", "delete") => {
            let id = c.s("id").to_string();
            c.owned(&id, "chat_message", &["to", "from"], &user)?;
            c.remove(&id);
            Value::Bool(true)
        }
        _ => unreachable!("every catalog entry has a handler"),
    };
    Ok((c.state, response))
}
