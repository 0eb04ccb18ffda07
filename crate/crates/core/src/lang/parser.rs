use super::ast::*;
use super::ParseError;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Num(f64),
    Fn,
    Let,
    If,
    Else,
    For,
    In,
    Return,
    True,
    False,
    Null,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Colon,
    Semi,
    Dot,
    Assign,
    Cmp(CmpOp),
    Plus,
    Minus,
    Star,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("identifier `{s}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Num(_) => "number".into(),
            Tok::Eof => "end of input".into(),
            other => format!("{other:?}").to_lowercase(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    span: Span,
    line: usize,
    col: usize,
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut line_start) = (0usize, 1usize, 0usize);
    while i < bytes.len() {
        let c = bytes[i];
        let col = i - line_start + 1;
        let start = i;
        let syntax = |msg: String| ParseError::Syntax { line, col, msg };
        match c {
            b'\n' => {
                i += 1;
                line += 1;
                line_start = i;
                continue;
            }
            b' ' | b'\t' | b'\r' => {
                i += 1;
                continue;
            }
            b'/' if bytes.get(i + 1) == Some(&b'/') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            b'"' => {
                i += 1;
                let mut s = String::new();
                loop {
                    let Some(&b) = bytes.get(i) else {
                        return Err(syntax("unterminated string literal".into()));
                    };
                    match b {
                        b'"' => {
                            i += 1;
                            break;
                        }
                        b'\\' => {
                            let esc = bytes.get(i + 1).copied();
                            s.push(match esc {
                                Some(b'n') => '\n',
                                Some(b't') => '\t',
                                Some(b'"') => '"',
                                Some(b'\\') => '\\',
                                _ => return Err(syntax("invalid escape in string literal".into())),
                            });
                            i += 2;
                        }
                        b'\n' => return Err(syntax("newline in string literal".into())),
                        _ => {
                            let ch = src[i..].chars().next().expect("in bounds");
                            s.push(ch);
                            i += ch.len_utf8();
                        }
                    }
                }
                out.push(Token { tok: Tok::Str(s), span: Span { start, end: i }, line, col });
                continue;
            }
            b'0'..=b'9' => {
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if bytes.get(i) == Some(&b'.') && bytes.get(i + 1).is_some_and(u8::is_ascii_digit) {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let n: f64 = src[start..i].parse().map_err(|_| syntax("malformed number".into()))?;
                out.push(Token { tok: Tok::Num(n), span: Span { start, end: i }, line, col });
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &src[start..i];
                let tok = match word {
                    "fn" => Tok::Fn,
                    "let" => Tok::Let,
                    "if" => Tok::If,
                    "else" => Tok::Else,
                    "for" => Tok::For,
                    "in" => Tok::In,
                    "return" => Tok::Return,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    "null" => Tok::Null,
                    _ => Tok::Ident(word.to_string()),
                };
                out.push(Token { tok, span: Span { start, end: i }, line, col });
                continue;
            }
            _ => {}
        }
        let two = bytes.get(i + 1).copied();
        let (tok, len) = match (c, two) {
            (b'=', Some(b'=')) => (Tok::Cmp(CmpOp::Eq), 2),
            (b'!', Some(b'=')) => (Tok::Cmp(CmpOp::Ne), 2),
            (b'<', Some(b'=')) => (Tok::Cmp(CmpOp::Le), 2),
            (b'>', Some(b'=')) => (Tok::Cmp(CmpOp::Ge), 2),
            (b'<', _) => (Tok::Cmp(CmpOp::Lt), 1),
            (b'>', _) => (Tok::Cmp(CmpOp::Gt), 1),
            (b'=', _) => (Tok::Assign, 1),
            (b'(', _) => (Tok::LParen, 1),
            (b')', _) => (Tok::RParen, 1),
            (b'{', _) => (Tok::LBrace, 1),
            (b'}', _) => (Tok::RBrace, 1),
            (b'[', _) => (Tok::LBracket, 1),
            (b']', _) => (Tok::RBracket, 1),
            (b',', _) => (Tok::Comma, 1),
            (b':', _) => (Tok::Colon, 1),
            (b';', _) => (Tok::Semi, 1),
            (b'.', _) => (Tok::Dot, 1),
            (b'+', _) => (Tok::Plus, 1),
            (b'-', _) => (Tok::Minus, 1),
            (b'*', _) => (Tok::Star, 1),
            _ => {
                let ch = src[i..].chars().next().expect("in bounds");
                return Err(syntax(format!("unexpected character `{ch}`")));
            }
        };
        i += len;
        out.push(Token { tok, span: Span { start, end: i }, line, col });
    }
    let col = i - line_start + 1;
    out.push(Token { tok: Tok::Eof, span: Span { start: i, end: i }, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    /// Lexical scopes of defined variable names.
    scopes: Vec<Vec<String>>,
    root_params: Vec<String>,
    info: SourceInfo,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let idx = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[idx].tok
    }

    fn here(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        let t = self.here();
        ParseError::Syntax { line: t.line, col: t.col, msg: msg.into() }
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.error(format!("expected {what}, found {}", self.peek().describe())))
        }
    }

    fn ident(&mut self, what: &str) -> Result<(String, Token), ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => Ok((s, self.bump())),
            other => Err(self.error(format!("expected {what}, found {}", other.describe()))),
        }
    }

    fn is_defined(&self, name: &str) -> bool {
        self.scopes.iter().any(|s| s.iter().any(|n| n == name))
    }

    fn define(&mut self, name: &str, at: &Token) -> Result<(), ParseError> {
        if self.is_defined(name) {
            return Err(ParseError::Duplicate { line: at.line, col: at.col, name: name.to_string() });
        }
        self.scopes.last_mut().expect("scope open").push(name.to_string());
        Ok(())
    }

    fn function(&mut self) -> Result<FnDef, ParseError> {
        self.expect(Tok::Fn, "`fn`")?;
        let (name, _) = self.ident("function name")?;
        let open = self.expect(Tok::LParen, "`(`")?;
        self.scopes = vec![Vec::new()];
        let mut params = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let (p, tok) = self.ident("parameter name")?;
                self.define(&p, &tok)?;
                params.push(p);
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        let close = self.expect(Tok::RParen, "`)`")?;
        self.info.header_params = Some(Span { start: open.span.end, end: close.span.start });
        self.root_params = params.clone();
        let body = self.block()?;
        Ok(FnDef { name, params, body })
    }

    fn block(&mut self) -> Result<Vec<Stmt>, ParseError> {
        self.expect(Tok::LBrace, "`{`")?;
        self.scopes.push(Vec::new());
        let mut body = Vec::new();
        while !matches!(self.peek(), Tok::RBrace | Tok::Eof) {
            body.push(self.statement()?);
            while *self.peek() == Tok::Semi {
                self.bump();
            }
        }
        self.expect(Tok::RBrace, "`}`")?;
        self.scopes.pop();
        Ok(body)
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        match self.peek() {
            Tok::Let => {
                self.bump();
                let (name, tok) = self.ident("variable name")?;
                self.expect(Tok::Assign, "`=`")?;
                let value = self.expr()?;
                self.define(&name, &tok)?;
                Ok(Stmt::Let { name, value })
            }
            Tok::Return => {
                self.bump();
                Ok(Stmt::Return(self.expr()?))
            }
            Tok::If => {
                self.bump();
                let lhs = self.expr()?;
                let op = match self.peek() {
                    Tok::Cmp(op) => *op,
                    other => return Err(self.error(format!("expected comparison operator, found {}", other.describe()))),
                };
                self.bump();
                let rhs = self.expr()?;
                let then = self.block()?;
                let otherwise = if *self.peek() == Tok::Else {
                    self.bump();
                    if *self.peek() == Tok::If {
                        vec![self.statement()?]
                    } else {
                        self.block()?
                    }
                } else {
                    Vec::new()
                };
                Ok(Stmt::If { cond: Condition { lhs, op, rhs }, then, otherwise })
            }
            Tok::For => {
                self.bump();
                let (var, tok) = self.ident("loop variable")?;
                self.expect(Tok::In, "`in`")?;
                let iter = self.expr()?;
                self.scopes.push(Vec::new());
                self.define(&var, &tok)?;
                let body = self.block();
                self.scopes.pop();
                Ok(Stmt::For { var, iter, body: body? })
            }
            _ => {
                let e = self.expr()?;
                match e {
                    Expr::ApiCall { .. } | Expr::ComponentCall { .. } => Ok(Stmt::Call(e)),
                    _ => Err(self.error("expression statement must be an api-call or component-call")),
                }
            }
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.postfix()?;
        while *self.peek() == Tok::Star {
            self.bump();
            let rhs = self.postfix()?;
            lhs = Expr::Binary(BinOp::Mul, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        // A bare identifier that is not a variable, followed by `.name(`, names an app.
        if let (Tok::Ident(name), Tok::Dot, Tok::Ident(_), Tok::LParen) =
            (self.peek(), self.peek_at(1), self.peek_at(2), self.peek_at(3))
        {
            if !self.is_defined(name) {
                let app = name.clone();
                self.bump();
                self.bump();
                let e = self.api_call(AppRef::Static(app))?;
                return self.field_chain(e);
            }
        }
        let base = self.primary()?;
        self.field_chain(base)
    }

    fn field_chain(&mut self, mut e: Expr) -> Result<Expr, ParseError> {
        while *self.peek() == Tok::Dot {
            self.bump();
            let (name, _) = self.ident("field or api name")?;
            if *self.peek() == Tok::LParen {
                // `expr.api(...)`: the receiver evaluates to the app name.
                e = self.api_args(AppRef::Dynamic(Box::new(e)), name)?;
            } else {
                e = Expr::Field(Box::new(e), name);
            }
        }
        Ok(e)
    }

    fn api_call(&mut self, app: AppRef) -> Result<Expr, ParseError> {
        let (api, _) = self.ident("api name")?;
        self.api_args(app, api)
    }

    fn api_args(&mut self, app: AppRef, api: String) -> Result<Expr, ParseError> {
        self.expect(Tok::LParen, "`(`")?;
        let mut args: Vec<(String, Expr)> = Vec::new();
        if *self.peek() != Tok::RParen {
            loop {
                let (name, tok) = self.ident("argument name")?;
                self.expect(Tok::Colon, "`:` after argument name")?;
                if args.iter().any(|(n, _)| *n == name) {
                    return Err(ParseError::Duplicate { line: tok.line, col: tok.col, name });
                }
                args.push((name, self.expr()?));
                if *self.peek() == Tok::Comma {
                    self.bump();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        Ok(Expr::ApiCall { app, api, args })
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let tok = self.bump();
        match tok.tok {
            Tok::Num(n) => Ok(Expr::Num(n)),
            Tok::Minus => match self.peek().clone() {
                Tok::Num(n) => {
                    self.bump();
                    Ok(Expr::Num(-n))
                }
                _ => {
                    let inner = self.postfix()?;
                    Ok(Expr::Binary(BinOp::Sub, Box::new(Expr::Num(0.0)), Box::new(inner)))
                }
            },
            Tok::Str(s) => Ok(Expr::Str(s)),
            Tok::True => Ok(Expr::Bool(true)),
            Tok::False => Ok(Expr::Bool(false)),
            Tok::Null => Ok(Expr::Null),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::LBracket => {
                let mut items = Vec::new();
                if *self.peek() != Tok::RBracket {
                    loop {
                        items.push(self.expr()?);
                        if *self.peek() == Tok::Comma {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                }
                self.expect(Tok::RBracket, "`]`")?;
                Ok(Expr::List(items))
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    self.bump();
                    let mut args = Vec::new();
                    if *self.peek() != Tok::RParen {
                        loop {
                            args.push(self.expr()?);
                            if *self.peek() == Tok::Comma {
                                self.bump();
                            } else {
                                break;
                            }
                        }
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    return Ok(Expr::ComponentCall { name, args });
                }
                if !self.is_defined(&name) {
                    return Err(ParseError::UseBeforeDefine { line: tok.line, col: tok.col, name });
                }
                if self.root_params.contains(&name) {
                    self.info.param_refs.push((name.clone(), tok.span));
                }
                Ok(Expr::Var(name))
            }
            other => Err(ParseError::Syntax {
                line: tok.line,
                col: tok.col,
                msg: format!("expected expression, found {}", other.describe()),
            }),
        }
    }
}

fn parser(src: &str) -> Result<Parser, ParseError> {
    Ok(Parser { toks: lex(src)?, pos: 0, scopes: Vec::new(), root_params: Vec::new(), info: SourceInfo::default() })
}

pub(crate) fn parse_policy(src: &str) -> Result<PolicyAst, ParseError> {
    let mut p = parser(src)?;
    let root = p.function()?;
    if *p.peek() != Tok::Eof {
        return Err(p.error("expected end of input after the root function"));
    }
    Ok(PolicyAst { root, source_info: p.info })
}

/// Parses a sequence of function definitions, each with its own scope.
pub(crate) fn parse_functions(src: &str) -> Result<Vec<(FnDef, Span)>, ParseError> {
    let mut p = parser(src)?;
    let mut out = Vec::new();
    while *p.peek() != Tok::Eof {
        let start = p.here().span.start;
        p.root_params.clear();
        let f = p.function()?;
        let end = p.toks[p.pos.saturating_sub(1)].span.end;
        if out.iter().any(|(g, _): &(FnDef, Span)| g.name == f.name) {
            let t = &p.toks[p.pos.saturating_sub(1)];
            return Err(ParseError::Duplicate { line: t.line, col: t.col, name: f.name });
        }
        out.push((f, Span { start, end }));
    }
    Ok(out)
}
