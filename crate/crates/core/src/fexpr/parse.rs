use super::{BinOp, CmpOp, Expr, FeatureExpr, FexprError, Func, LogicOp};

/// Maximum nesting depth of a formula.
pub const MAX_DEPTH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Quoted(String),
    LParen,
    RParen,
    Comma,
    Plus,
    Minus,
    Star,
    Slash,
    Cmp(CmpOp),
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(v) => format!("number {v}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Quoted(s) => format!("column `{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Cmp(_) => "comparison".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

pub(super) const KEYWORDS: [&str; 5] = ["if", "then", "else", "and", "or"];

fn syntax(offset: usize, message: impl Into<String>) -> FexprError {
    FexprError::Syntax {
        offset,
        message: message.into(),
    }
}

pub(super) fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

pub(super) fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn lex(text: &str) -> Result<Vec<(Tok, usize)>, FexprError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            ',' => Tok::Comma,
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '<' | '>' | '=' | '!' => {
                let eq = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, eq) {
                    ('<', true) => CmpOp::Le,
                    ('<', false) => CmpOp::Lt,
                    ('>', true) => CmpOp::Ge,
                    ('>', false) => CmpOp::Gt,
                    ('=', true) => CmpOp::Eq,
                    ('!', true) => CmpOp::Ne,
                    _ => return Err(syntax(i, format!("unexpected character `{c}`"))),
                };
                i += if eq { 2 } else { 1 };
                toks.push((Tok::Cmp(op), start));
                continue;
            }
            '`' => {
                let close = text[i + 1..]
                    .find('`')
                    .ok_or_else(|| syntax(i, "unterminated quoted column"))?;
                let name = &text[i + 1..i + 1 + close];
                if name.is_empty() {
                    return Err(syntax(i, "empty column name"));
                }
                i += close + 2;
                toks.push((Tok::Quoted(name.to_string()), start));
                continue;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                    j += 1;
                }
                if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                    let mut k = j + 1;
                    if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                        k += 1;
                    }
                    if k < bytes.len() && bytes[k].is_ascii_digit() {
                        while k < bytes.len() && bytes[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let lit = &text[i..j];
                let value: f64 = lit
                    .parse()
                    .map_err(|_| syntax(i, format!("malformed number `{lit}`")))?;
                if !value.is_finite() {
                    return Err(syntax(i, format!("number `{lit}` out of range")));
                }
                i = j;
                toks.push((Tok::Num(value), start));
                continue;
            }
            c if is_ident_start(c) => {
                let mut j = i;
                while j < bytes.len() && is_ident_char(bytes[j] as char) {
                    j += 1;
                }
                let word = text[i..j].to_string();
                i = j;
                toks.push((Tok::Ident(word), start));
                continue;
            }
            _ => {
                let ch = text[i..].chars().next().unwrap_or('?');
                return Err(syntax(i, format!("unexpected character `{ch}`")));
            }
        };
        i += 1;
        toks.push((tok, start));
    }
    toks.push((Tok::Eof, text.len()));
    Ok(toks)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    nesting: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(w) if w == kw)
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), FexprError> {
        if self.is_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(syntax(
                self.offset(),
                format!("expected `{kw}`, found {}", self.peek().describe()),
            ))
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), FexprError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(syntax(
                self.offset(),
                format!("expected {}, found {}", tok.describe(), self.peek().describe()),
            ))
        }
    }

    fn enter(&mut self) -> Result<(), FexprError> {
        self.nesting += 1;
        if self.nesting > MAX_DEPTH {
            Err(FexprError::DepthExceeded)
        } else {
            Ok(())
        }
    }

    fn expr(&mut self) -> Result<Expr, FexprError> {
        self.enter()?;
        let e = self.or_expr();
        self.nesting -= 1;
        e
    }

    fn or_expr(&mut self) -> Result<Expr, FexprError> {
        let mut lhs = self.and_expr()?;
        while self.is_keyword("or") {
            self.bump();
            let rhs = self.and_expr()?;
            lhs = Expr::Logic(LogicOp::Or, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, FexprError> {
        let mut lhs = self.cmp()?;
        while self.is_keyword("and") {
            self.bump();
            let rhs = self.cmp()?;
            lhs = Expr::Logic(LogicOp::And, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn cmp(&mut self) -> Result<Expr, FexprError> {
        let lhs = self.sum()?;
        if let Tok::Cmp(op) = *self.peek() {
            self.bump();
            let rhs = self.sum()?;
            return Ok(Expr::Compare(op, Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn sum(&mut self) -> Result<Expr, FexprError> {
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

    fn term(&mut self) -> Result<Expr, FexprError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.factor()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn factor(&mut self) -> Result<Expr, FexprError> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(v) => Ok(Expr::Number(v)),
            Tok::Quoted(name) => Ok(Expr::Column(name)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Minus => {
                self.enter()?;
                let inner = self.factor();
                self.nesting -= 1;
                Ok(Expr::Neg(Box::new(inner?)))
            }
            Tok::Ident(word) if word == "if" => {
                let cond = self.expr()?;
                self.expect_keyword("then")?;
                let then = self.expr()?;
                self.expect_keyword("else")?;
                let otherwise = self.expr()?;
                Ok(Expr::If(Box::new(cond), Box::new(then), Box::new(otherwise)))
            }
            Tok::Ident(word) if KEYWORDS.contains(&word.as_str()) => {
                Err(syntax(at, format!("unexpected keyword `{word}`")))
            }
            Tok::Ident(word) => {
                if *self.peek() != Tok::LParen {
                    return Ok(Expr::Column(word));
                }
                let func = Func::from_name(&word)
                    .ok_or_else(|| syntax(at, format!("unknown function `{word}`")))?;
                self.bump();
                let mut args = vec![self.expr()?];
                while *self.peek() == Tok::Comma {
                    self.bump();
                    args.push(self.expr()?);
                }
                self.expect(Tok::RParen)?;
                let arity_ok = if func.is_variadic() { args.len() >= 2 } else { args.len() == 1 };
                if !arity_ok {
                    let want = if func.is_variadic() { "at least 2" } else { "exactly 1" };
                    return Err(syntax(
                        at,
                        format!("`{}` takes {want} argument(s), got {}", func.name(), args.len()),
                    ));
                }
                Ok(Expr::Call(func, args))
            }
            other => Err(syntax(at, format!("unexpected {}", other.describe()))),
        }
    }
}

/// Parses formula text.
pub fn parse(text: &str) -> Result<FeatureExpr, FexprError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        nesting: 0,
    };
    if *p.peek() == Tok::Eof {
        return Err(syntax(0, "empty formula"));
    }
    let ast = p.expr()?;
    if *p.peek() != Tok::Eof {
        return Err(syntax(
            p.offset(),
            format!("unexpected {} after expression", p.peek().describe()),
        ));
    }
    if ast.depth() > MAX_DEPTH {
        return Err(FexprError::DepthExceeded);
    }
    Ok(FeatureExpr {
        ast,
        source_text: text.to_string(),
    })
}
