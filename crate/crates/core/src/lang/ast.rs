use std::collections::BTreeSet;

/// Byte range into the source text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FnDef {
    pub name: String,
    pub params: Vec<String>,
    pub body: Vec<Stmt>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Let { name: String, value: Expr },
    /// An api-call or component-call evaluated for its effect.
    Call(Expr),
    If { cond: Condition, then: Vec<Stmt>, otherwise: Vec<Stmt> },
    For { var: String, iter: Expr, body: Vec<Stmt> },
    Return(Expr),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub lhs: Expr,
    pub op: CmpOp,
    pub rhs: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

/// Target application of an api-call: a bare app name or a string-valued
/// expression such as a parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum AppRef {
    Static(String),
    Dynamic(Box<Expr>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Null,
    Bool(bool),
    Num(f64),
    Str(String),
    List(Vec<Expr>),
    Var(String),
    Field(Box<Expr>, String),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    ApiCall { app: AppRef, api: String, args: Vec<(String, Expr)> },
    ComponentCall { name: String, args: Vec<Expr> },
}

/// Parsed policy: a single root function.
///
/// Equality compares the tree only; source positions are ignored.
#[derive(Debug, Clone)]
pub struct PolicyAst {
    pub root: FnDef,
    pub(crate) source_info: SourceInfo,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct SourceInfo {
    /// Span strictly between the header parentheses.
    pub header_params: Option<Span>,
    /// Every reference to a root parameter, in source order.
    pub param_refs: Vec<(String, Span)>,
}

impl PartialEq for PolicyAst {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl PolicyAst {
    pub fn component_calls(&self) -> BTreeSet<&str> {
        self.root.component_calls()
    }

    pub fn api_call_count(&self) -> usize {
        let mut n = 0;
        self.root.visit_exprs(&mut |e| {
            if matches!(e, Expr::ApiCall { .. }) {
                n += 1;
            }
        });
        n
    }

    pub fn component_call_count(&self) -> usize {
        let mut n = 0;
        self.root.visit_exprs(&mut |e| {
            if matches!(e, Expr::ComponentCall { .. }) {
                n += 1;
            }
        });
        n
    }
}

impl FnDef {
    pub fn component_calls(&self) -> BTreeSet<&str> {
        let mut out = BTreeSet::new();
        self.visit_exprs(&mut |e| {
            if let Expr::ComponentCall { name, .. } = e {
                out.insert(name.as_str());
            }
        });
        out
    }

    /// Pre-order walk over every expression in the body.
    pub fn visit_exprs<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        fn stmts<'a>(body: &'a [Stmt], f: &mut impl FnMut(&'a Expr)) {
            for s in body {
                match s {
                    Stmt::Let { value, .. } => expr(value, f),
                    Stmt::Call(e) | Stmt::Return(e) => expr(e, f),
                    Stmt::If { cond, then, otherwise } => {
                        expr(&cond.lhs, f);
                        expr(&cond.rhs, f);
                        stmts(then, f);
                        stmts(otherwise, f);
                    }
                    Stmt::For { iter, body, .. } => {
                        expr(iter, f);
                        stmts(body, f);
                    }
                }
            }
        }
        fn expr<'a>(e: &'a Expr, f: &mut impl FnMut(&'a Expr)) {
            f(e);
            match e {
                Expr::List(items) => items.iter().for_each(|i| expr(i, f)),
                Expr::Field(base, _) => expr(base, f),
                Expr::Binary(_, l, r) => {
                    expr(l, f);
                    expr(r, f);
                }
                Expr::ApiCall { app, args, .. } => {
                    if let AppRef::Dynamic(a) = app {
                        expr(a, f);
                    }
                    args.iter().for_each(|(_, a)| expr(a, f));
                }
                Expr::ComponentCall { args, .. } => args.iter().for_each(|a| expr(a, f)),
                _ => {}
            }
        }
        stmts(&self.body, f);
    }
}
