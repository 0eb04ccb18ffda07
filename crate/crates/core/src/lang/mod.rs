//! The policy language: a small deterministic DSL for parameterized
//! programs built from api-calls, component calls and glue code.
//!
//! See `docs/policy-lang.md` for the grammar.

mod ast;
mod interp;
mod parser;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

pub use ast::{AppRef, BinOp, CmpOp, Condition, Expr, FnDef, PolicyAst, Span, Stmt};
pub use interp::{ApiExecutor, ComponentResolver, ExecutionTrace, NoComponents, TerminalStatus};

use crate::model::{check_binding, Literal, ParameterBinding, Plan, Policy};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: duplicate definition of `{name}`")]
    Duplicate { line: usize, col: usize, name: String },
    #[error("{line}:{col}: use of undefined variable `{name}`")]
    UseBeforeDefine { line: usize, col: usize, name: String },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InstantiateError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unbound parameter `{0}`")]
    Unbound(String),
    #[error("binding does not match signature: {0}")]
    Mismatch(#[from] crate::model::BindingMismatch),
}

pub fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !matches!(s, "fn" | "let" | "if" | "else" | "for" | "in" | "return" | "true" | "false" | "null")
}

pub fn parse(source: &str) -> Result<PolicyAst, ParseError> {
    parser::parse_policy(source)
}

/// A function definition parsed out of a multi-function source block,
/// together with its own source text.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedFunction {
    pub def: FnDef,
    pub source: String,
}

pub fn parse_functions(source: &str) -> Result<Vec<ParsedFunction>, ParseError> {
    Ok(parser::parse_functions(source)?
        .into_iter()
        .map(|(def, span)| ParsedFunction { def, source: source[span.start..span.end].to_string() })
        .collect())
}

/// Renders a number the way the lexer reads it back.
pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Source text of a literal.
pub fn literal_source(lit: &Literal) -> String {
    match lit {
        Literal::Str(s) => quote(s),
        Literal::Num(n) => format_number(*n),
        Literal::Bool(b) => b.to_string(),
        Literal::StrList(items) => format!("[{}]", items.iter().map(|s| quote(s)).collect::<Vec<_>>().join(", ")),
    }
}

fn literal_expr(lit: &Literal) -> Expr {
    match lit {
        Literal::Str(s) => Expr::Str(s.clone()),
        Literal::Num(n) => Expr::Num(*n),
        Literal::Bool(b) => Expr::Bool(*b),
        Literal::StrList(items) => Expr::List(items.iter().map(|s| Expr::Str(s.clone())).collect()),
    }
}

/// Replaces the bound root parameters by literals, leaving the rest free.
pub fn substitute(ast: &PolicyAst, values: &BTreeMap<String, Literal>) -> PolicyAst {
    fn stmts(body: &[Stmt], values: &BTreeMap<String, Literal>) -> Vec<Stmt> {
        body.iter()
            .map(|s| match s {
                Stmt::Let { name, value } => Stmt::Let { name: name.clone(), value: expr(value, values) },
                Stmt::Call(e) => Stmt::Call(expr(e, values)),
                Stmt::Return(e) => Stmt::Return(expr(e, values)),
                Stmt::If { cond, then, otherwise } => Stmt::If {
                    cond: Condition { lhs: expr(&cond.lhs, values), op: cond.op, rhs: expr(&cond.rhs, values) },
                    then: stmts(then, values),
                    otherwise: stmts(otherwise, values),
                },
                Stmt::For { var, iter, body } => {
                    Stmt::For { var: var.clone(), iter: expr(iter, values), body: stmts(body, values) }
                }
            })
            .collect()
    }
    fn expr(e: &Expr, values: &BTreeMap<String, Literal>) -> Expr {
        match e {
            // Parameters are never shadowed, so every matching Var is a parameter reference.
            Expr::Var(name) => values.get(name).map(literal_expr).unwrap_or_else(|| e.clone()),
            Expr::List(items) => Expr::List(items.iter().map(|i| expr(i, values)).collect()),
            Expr::Field(base, f) => Expr::Field(Box::new(expr(base, values)), f.clone()),
            Expr::Binary(op, l, r) => Expr::Binary(*op, Box::new(expr(l, values)), Box::new(expr(r, values))),
            Expr::ApiCall { app, api, args } => Expr::ApiCall {
                app: match app {
                    AppRef::Static(s) => AppRef::Static(s.clone()),
                    AppRef::Dynamic(a) => AppRef::Dynamic(Box::new(expr(a, values))),
                },
                api: api.clone(),
                args: args.iter().map(|(n, a)| (n.clone(), expr(a, values))).collect(),
            },
            Expr::ComponentCall { name, args } => {
                Expr::ComponentCall { name: name.clone(), args: args.iter().map(|a| expr(a, values)).collect() }
            }
            _ => e.clone(),
        }
    }
    let root = &ast.root;
    let params = root.params.iter().filter(|p| !values.contains_key(*p)).cloned().collect();
    PolicyAst {
        root: FnDef { name: root.name.clone(), params, body: stmts(&root.body, values) },
        source_info: Default::default(),
    }
}

/// Text-level substitution: splices literals over parameter references and
/// drops bound names from the header, leaving all other text untouched.
pub fn substitute_source(source: &str, values: &BTreeMap<String, Literal>) -> Result<String, ParseError> {
    let ast = parse(source)?;
    let info = &ast.source_info;
    let mut edits: Vec<(Span, String)> = info
        .param_refs
        .iter()
        .filter_map(|(name, span)| values.get(name).map(|lit| (*span, literal_source(lit))))
        .collect();
    if ast.root.params.iter().any(|p| values.contains_key(p)) {
        let remaining: Vec<&str> =
            ast.root.params.iter().filter(|p| !values.contains_key(*p)).map(String::as_str).collect();
        edits.push((info.header_params.expect("header parsed"), remaining.join(", ")));
    }
    edits.sort_by_key(|(span, _)| span.start);
    let mut out = String::with_capacity(source.len());
    let mut cursor = 0;
    for (span, text) in edits {
        out.push_str(&source[cursor..span.start]);
        out.push_str(&text);
        cursor = span.end;
    }
    out.push_str(&source[cursor..]);
    Ok(out)
}

/// Instantiates a policy with one task's parameter binding.
pub fn instantiate(policy: &Policy, binding: &ParameterBinding) -> Result<Plan, InstantiateError> {
    let ast = parse(&policy.source)?;
    if let Some(p) = ast.root.params.iter().find(|p| !binding.values.contains_key(*p)) {
        return Err(InstantiateError::Unbound(p.clone()));
    }
    check_binding(&policy.signature, binding)?;
    Ok(Plan { task_id: binding.task_id.clone(), instantiated_source: substitute_source(&policy.source, &binding.values)? })
}

pub fn free_parameters(ast: &PolicyAst) -> BTreeSet<String> {
    ast.root.params.iter().cloned().collect()
}

/// Runs a plan. Parse failures and component cycles are reported as a
/// runtime error at statement 0 with no records.
pub fn execute(plan: &Plan, executor: &mut dyn ApiExecutor, resolver: &dyn ComponentResolver) -> ExecutionTrace {
    match parse(&plan.instantiated_source) {
        Ok(ast) => interp::run(&ast.root, executor, resolver),
        Err(e) => ExecutionTrace {
            records: Vec::new(),
            status: TerminalStatus::RuntimeError { message: format!("plan does not parse: {e}"), statement: 0 },
        },
    }
}

/// Runs an already parsed root function.
pub fn execute_ast(root: &FnDef, executor: &mut dyn ApiExecutor, resolver: &dyn ComponentResolver) -> ExecutionTrace {
    interp::run(root, executor, resolver)
}

/// Returns the component call cycle reachable from `root`, if any.
pub fn component_cycle(root: &FnDef, resolver: &dyn ComponentResolver) -> Option<Vec<String>> {
    interp::find_cycle(root, resolver)
}
