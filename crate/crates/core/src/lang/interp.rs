use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::ast::*;
use crate::model::{ApiCallRecord, CallOutcome, Value};

/// Executes api-calls against some world.
pub trait ApiExecutor {
    fn call(&mut self, app: &str, api: &str, args: &BTreeMap<String, Value>) -> Result<Value, String>;
}

/// Looks up component bodies by the name used at call sites.
pub trait ComponentResolver {
    fn resolve(&self, name: &str) -> Option<FnDef>;
}

/// Resolver that knows no components.
pub struct NoComponents;

impl ComponentResolver for NoComponents {
    fn resolve(&self, _name: &str) -> Option<FnDef> {
        None
    }
}

impl ComponentResolver for BTreeMap<String, FnDef> {
    fn resolve(&self, name: &str) -> Option<FnDef> {
        self.get(name).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TerminalStatus {
    Completed,
    RuntimeError { message: String, statement: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub records: Vec<ApiCallRecord>,
    pub status: TerminalStatus,
}

impl ExecutionTrace {
    pub fn completed(&self) -> bool {
        self.status == TerminalStatus::Completed
    }

    pub fn error_message(&self) -> Option<&str> {
        match &self.status {
            TerminalStatus::Completed => None,
            TerminalStatus::RuntimeError { message, .. } => Some(message),
        }
    }
}

enum Flow {
    Normal,
    Return(Value),
}

struct Interp<'a> {
    executor: &'a mut dyn ApiExecutor,
    resolver: &'a dyn ComponentResolver,
    records: Vec<ApiCallRecord>,
}

type Scope = Vec<Vec<(String, Value)>>;

impl Interp<'_> {
    fn lookup<'s>(scope: &'s Scope, name: &str) -> Option<&'s Value> {
        scope.iter().rev().flat_map(|s| s.iter().rev()).find(|(n, _)| n == name).map(|(_, v)| v)
    }

    fn block(&mut self, body: &[Stmt], scope: &mut Scope) -> Result<Flow, String> {
        scope.push(Vec::new());
        let mut flow = Ok(Flow::Normal);
        for stmt in body {
            match self.stmt(stmt, scope) {
                Ok(Flow::Normal) => {}
                other => {
                    flow = other;
                    break;
                }
            }
        }
        scope.pop();
        flow
    }

    fn stmt(&mut self, stmt: &Stmt, scope: &mut Scope) -> Result<Flow, String> {
        match stmt {
            Stmt::Let { name, value } => {
                let v = self.expr(value, scope)?;
                scope.last_mut().expect("scope open").push((name.clone(), v));
                Ok(Flow::Normal)
            }
            Stmt::Call(e) => {
                self.expr(e, scope)?;
                Ok(Flow::Normal)
            }
            Stmt::Return(e) => Ok(Flow::Return(self.expr(e, scope)?)),
            Stmt::If { cond, then, otherwise } => {
                let l = self.expr(&cond.lhs, scope)?;
                let r = self.expr(&cond.rhs, scope)?;
                if compare(&l, cond.op, &r)? {
                    self.block(then, scope)
                } else {
                    self.block(otherwise, scope)
                }
            }
            Stmt::For { var, iter, body } => {
                let items = match self.expr(iter, scope)? {
                    Value::List(items) => items,
                    other => return Err(format!("cannot iterate over {}", other.kind_name())),
                };
                for item in items {
                    scope.push(vec![(var.clone(), item)]);
                    let flow = self.block(body, scope);
                    scope.pop();
                    match flow? {
                        Flow::Normal => {}
                        ret => return Ok(ret),
                    }
                }
                Ok(Flow::Normal)
            }
        }
    }

    fn expr(&mut self, e: &Expr, scope: &mut Scope) -> Result<Value, String> {
        Ok(match e {
            Expr::Null => Value::Null,
            Expr::Bool(b) => Value::Bool(*b),
            Expr::Num(n) => Value::Num(*n),
            Expr::Str(s) => Value::Str(s.clone()),
            Expr::List(items) => {
                let mut out = Vec::with_capacity(items.len());
                for i in items {
                    out.push(self.expr(i, scope)?);
                }
                Value::List(out)
            }
            Expr::Var(name) => {
                Self::lookup(scope, name).cloned().ok_or_else(|| format!("unbound parameter `{name}`"))?
            }
            Expr::Field(base, field) => match self.expr(base, scope)? {
                Value::Record(mut fields) => {
                    fields.remove(field).ok_or_else(|| format!("record has no field `{field}`"))?
                }
                other => return Err(format!("cannot read field `{field}` of {}", other.kind_name())),
            },
            Expr::Binary(op, l, r) => {
                let l = self.expr(l, scope)?;
                let r = self.expr(r, scope)?;
                arith(*op, l, r)?
            }
            Expr::ApiCall { app, api, args } => {
                let app = match app {
                    AppRef::Static(name) => name.clone(),
                    AppRef::Dynamic(e) => match self.expr(e, scope)? {
                        Value::Str(s) => s,
                        other => return Err(format!("app name must be a string, found {}", other.kind_name())),
                    },
                };
                let mut evaluated = BTreeMap::new();
                for (name, a) in args {
                    evaluated.insert(name.clone(), self.expr(a, scope)?);
                }
                let result = self.executor.call(&app, api, &evaluated);
                let outcome = match &result {
                    Ok(v) => CallOutcome::Ok(v.clone()),
                    Err(msg) => CallOutcome::Error(msg.clone()),
                };
                self.records.push(ApiCallRecord { app: app.clone(), api: api.clone(), args: evaluated, outcome });
                result.map_err(|msg| format!("{app}.{api}: {msg}"))?
            }
            Expr::ComponentCall { name, args } => {
                let def = self.resolver.resolve(name).ok_or_else(|| format!("unknown component `{name}`"))?;
                if def.params.len() != args.len() {
                    return Err(format!(
                        "component `{name}` expects {} arguments, got {}",
                        def.params.len(),
                        args.len()
                    ));
                }
                let mut frame = Vec::with_capacity(args.len());
                for (p, a) in def.params.iter().zip(args) {
                    frame.push((p.clone(), self.expr(a, scope)?));
                }
                let mut inner: Scope = vec![frame];
                match self.block(&def.body, &mut inner)? {
                    Flow::Return(v) => v,
                    Flow::Normal => Value::Null,
                }
            }
        })
    }
}

fn compare(l: &Value, op: CmpOp, r: &Value) -> Result<bool, String> {
    use std::cmp::Ordering;
    let ord: Option<Ordering> = match (l, r) {
        (Value::Num(a), Value::Num(b)) => a.partial_cmp(b),
        (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
        (Value::Bool(a), Value::Bool(b)) if matches!(op, CmpOp::Eq | CmpOp::Ne) => Some(a.cmp(b)),
        (Value::Null, Value::Null) if matches!(op, CmpOp::Eq | CmpOp::Ne) => Some(Ordering::Equal),
        // null compares unequal to any other scalar, which lets policies test for missing lookups.
        (Value::Null, Value::Str(_) | Value::Num(_) | Value::Bool(_))
        | (Value::Str(_) | Value::Num(_) | Value::Bool(_), Value::Null)
            if matches!(op, CmpOp::Eq | CmpOp::Ne) =>
        {
            return Ok(op == CmpOp::Ne);
        }
        _ => {
            return Err(format!("cannot compare {} {} {}", l.kind_name(), op.symbol(), r.kind_name()));
        }
    };
    let ord = ord.ok_or_else(|| "comparison with NaN".to_string())?;
    Ok(match op {
        CmpOp::Eq => ord == Ordering::Equal,
        CmpOp::Ne => ord != Ordering::Equal,
        CmpOp::Lt => ord == Ordering::Less,
        CmpOp::Le => ord != Ordering::Greater,
        CmpOp::Gt => ord == Ordering::Greater,
        CmpOp::Ge => ord != Ordering::Less,
    })
}

fn arith(op: BinOp, l: Value, r: Value) -> Result<Value, String> {
    match (op, l, r) {
        (BinOp::Add, Value::Num(a), Value::Num(b)) => Ok(Value::Num(a + b)),
        (BinOp::Sub, Value::Num(a), Value::Num(b)) => Ok(Value::Num(a - b)),
        (BinOp::Mul, Value::Num(a), Value::Num(b)) => Ok(Value::Num(a * b)),
        (BinOp::Add, Value::Str(a), Value::Str(b)) => Ok(Value::Str(a + &b)),
        (BinOp::Add, Value::Str(a), Value::Num(b)) => Ok(Value::Str(a + &super::format_number(b))),
        (BinOp::Add, Value::List(mut a), Value::List(b)) => {
            a.extend(b);
            Ok(Value::List(a))
        }
        (op, l, r) => Err(format!("unsupported operands for {op:?}: {} and {}", l.kind_name(), r.kind_name())),
    }
}

/// Detects a cycle in the component call graph reachable from `root`.
pub(crate) fn find_cycle(root: &FnDef, resolver: &dyn ComponentResolver) -> Option<Vec<String>> {
    fn visit(
        name: &str,
        def: &FnDef,
        resolver: &dyn ComponentResolver,
        path: &mut Vec<String>,
        done: &mut BTreeSet<String>,
    ) -> Option<Vec<String>> {
        path.push(name.to_string());
        for callee in def.component_calls() {
            if let Some(pos) = path.iter().position(|p| p == callee) {
                let mut cycle = path[pos..].to_vec();
                cycle.push(callee.to_string());
                return Some(cycle);
            }
            if done.contains(callee) {
                continue;
            }
            if let Some(sub) = resolver.resolve(callee) {
                if let Some(c) = visit(callee, &sub, resolver, path, done) {
                    return Some(c);
                }
            }
        }
        path.pop();
        done.insert(name.to_string());
        None
    }
    // The root policy is not itself callable, so start from its callees.
    let mut done = BTreeSet::new();
    for callee in root.component_calls() {
        if let Some(def) = resolver.resolve(callee) {
            let mut path = Vec::new();
            if let Some(c) = visit(callee, &def, resolver, &mut path, &mut done) {
                return Some(c);
            }
        }
    }
    None
}

pub(crate) fn run(root: &FnDef, executor: &mut dyn ApiExecutor, resolver: &dyn ComponentResolver) -> ExecutionTrace {
    if let Some(cycle) = find_cycle(root, resolver) {
        return ExecutionTrace {
            records: Vec::new(),
            status: TerminalStatus::RuntimeError {
                message: format!("component call cycle: {}", cycle.join(" -> ")),
                statement: 0,
            },
        };
    }
    if let Some(p) = root.params.first() {
        return ExecutionTrace {
            records: Vec::new(),
            status: TerminalStatus::RuntimeError { message: format!("unbound parameter `{p}`"), statement: 0 },
        };
    }
    let mut interp = Interp { executor, resolver, records: Vec::new() };
    let mut scope: Scope = vec![Vec::new()];
    let mut status = TerminalStatus::Completed;
    for (idx, stmt) in root.body.iter().enumerate() {
        match interp.stmt(stmt, &mut scope) {
            Ok(Flow::Normal) => {}
            Ok(Flow::Return(_)) => break,
            Err(message) => {
                status = TerminalStatus::RuntimeError { message, statement: idx };
                break;
            }
        }
    }
    ExecutionTrace { records: interp.records, status }
}
