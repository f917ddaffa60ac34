//! Rule language, one rule per line:
//!
//! ```text
//! complex <name> <= <evt>(<var>) [& <evt>(<var>)]* [& <constraint>]*
//! ```
//!
//! Constraints: `t(a) < t(b)`, `val(a) <op> <num>` with op one of
//! `< <= > >= ==`, `dist(a,b) < <num>` (metres), `samecrate(a,b)`, and
//! `span(a,b) < <num>` (seconds between the two facts).

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("syntax error at line {line}, column {column}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Eq => "==",
        }
    }

    pub fn holds(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Eq => a == b,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term {
    pub event: String,
    pub var: String,
}

/// Constraints refer to terms by index.
#[derive(Debug, Clone, PartialEq)]
pub enum Constraint {
    /// t(a) < t(b)
    Before(usize, usize),
    Value { term: usize, op: CmpOp, threshold: f64 },
    /// Euclidean distance between the terms' sensors is below the bound.
    Distance { a: usize, b: usize, max: f64 },
    SameCrate(usize, usize),
    /// |t(a) - t(b)| in seconds is below the bound.
    Span { a: usize, b: usize, max: f64 },
}

impl Constraint {
    pub fn terms(&self) -> (usize, usize) {
        match *self {
            Constraint::Before(a, b) | Constraint::SameCrate(a, b) => (a, b),
            Constraint::Distance { a, b, .. } | Constraint::Span { a, b, .. } => (a, b),
            Constraint::Value { term, .. } => (term, term),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub name: String,
    pub terms: Vec<Term>,
    pub constraints: Vec<Constraint>,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let v = |i: usize| self.terms[i].var.as_str();
        write!(f, "complex {} <=", self.name)?;
        for (i, t) in self.terms.iter().enumerate() {
            if i > 0 {
                f.write_str(" &")?;
            }
            write!(f, " {}({})", t.event, t.var)?;
        }
        for c in &self.constraints {
            match c {
                Constraint::Before(a, b) => write!(f, " & t({}) < t({})", v(*a), v(*b))?,
                Constraint::Value { term, op, threshold } => {
                    write!(f, " & val({}) {} {}", v(*term), op.symbol(), threshold)?
                }
                Constraint::Distance { a, b, max } => write!(f, " & dist({},{}) < {}", v(*a), v(*b), max)?,
                Constraint::SameCrate(a, b) => write!(f, " & samecrate({},{})", v(*a), v(*b))?,
                Constraint::Span { a, b, max } => write!(f, " & span({},{}) < {}", v(*a), v(*b), max)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Sym(&'static str),
}

struct Lexer<'a> {
    src: &'a str,
    line: usize,
    toks: Vec<(Tok, usize)>,
}

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '-'
}

impl<'a> Lexer<'a> {
    fn err(&self, column: usize, message: impl Into<String>) -> SyntaxError {
        SyntaxError { line: self.line, column, message: message.into() }
    }

    fn run(mut self) -> Result<Vec<(Tok, usize)>, SyntaxError> {
        let chars: Vec<char> = self.src.chars().collect();
        let mut i = 0;
        while i < chars.len() {
            let c = chars[i];
            let col = i + 1;
            if c.is_whitespace() {
                i += 1;
            } else if is_ident_start(c) {
                let start = i;
                while i < chars.len() && is_ident_char(chars[i]) {
                    i += 1;
                }
                self.toks.push((Tok::Ident(chars[start..i].iter().collect()), col));
            } else if c.is_ascii_digit() || c == '.' || (c == '-' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit() || *d == '.')) {
                let start = i;
                i += 1;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || matches!(chars[i], '.' | '+' | '-'))
                {
                    // an exponent sign is only part of the number right after e/E
                    if matches!(chars[i], '+' | '-') && !matches!(chars[i - 1], 'e' | 'E') {
                        break;
                    }
                    i += 1;
                }
                let text: String = chars[start..i].iter().collect();
                let n: f64 = text.parse().map_err(|_| self.err(col, format!("bad number {text:?}")))?;
                if !n.is_finite() {
                    return Err(self.err(col, format!("number {text:?} is not finite")));
                }
                self.toks.push((Tok::Num(n), col));
            } else {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                let sym = match two.as_str() {
                    "<=" if chars.get(i + 2) == Some(&'=') => None,
                    "<=" => Some("<="),
                    ">=" => Some(">="),
                    "==" => Some("=="),
                    _ => None,
                };
                if let Some(s) = sym {
                    self.toks.push((Tok::Sym(s), col));
                    i += 2;
                    continue;
                }
                let s = match c {
                    '<' => "<",
                    '>' => ">",
                    '(' => "(",
                    ')' => ")",
                    ',' => ",",
                    '&' => "&",
                    _ => return Err(self.err(col, format!("unexpected character {c:?}"))),
                };
                self.toks.push((Tok::Sym(s), col));
                i += 1;
            }
        }
        Ok(self.toks)
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    line: usize,
    end_col: usize,
}

impl Parser {
    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.1)
    }

    fn err(&self, message: impl Into<String>) -> SyntaxError {
        SyntaxError { line: self.line, column: self.col(), message: message.into() }
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn ident(&mut self, what: &str) -> Result<String, SyntaxError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err(format!("expected {what}"))),
        }
    }

    fn num(&mut self) -> Result<f64, SyntaxError> {
        match self.peek() {
            Some(Tok::Num(n)) => {
                let n = *n;
                self.pos += 1;
                Ok(n)
            }
            _ => Err(self.err("expected number")),
        }
    }

    fn sym(&mut self, s: &str) -> Result<(), SyntaxError> {
        match self.peek() {
            Some(Tok::Sym(t)) if *t == s => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected '{s}'"))),
        }
    }

    fn keyword(&mut self, k: &str) -> Result<(), SyntaxError> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == k => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected '{k}'"))),
        }
    }

    fn var(&mut self, terms: &[Term]) -> Result<usize, SyntaxError> {
        let col = self.col();
        let v = self.ident("variable")?;
        terms.iter().position(|t| t.var == v).ok_or(SyntaxError {
            line: self.line,
            column: col,
            message: format!("undeclared variable {v:?}"),
        })
    }

    fn pair(&mut self, terms: &[Term]) -> Result<(usize, usize), SyntaxError> {
        self.sym("(")?;
        let a = self.var(terms)?;
        self.sym(",")?;
        let b = self.var(terms)?;
        self.sym(")")?;
        Ok((a, b))
    }

    fn single(&mut self, terms: &[Term]) -> Result<usize, SyntaxError> {
        self.sym("(")?;
        let a = self.var(terms)?;
        self.sym(")")?;
        Ok(a)
    }

    fn less_than_bound(&mut self) -> Result<f64, SyntaxError> {
        self.sym("<")?;
        self.num()
    }

    fn constraint(&mut self, terms: &[Term]) -> Result<Constraint, SyntaxError> {
        let col = self.col();
        let head = self.ident("constraint")?;
        match head.as_str() {
            "t" => {
                let a = self.single(terms)?;
                self.sym("<")?;
                self.keyword("t")?;
                let b = self.single(terms)?;
                Ok(Constraint::Before(a, b))
            }
            "val" => {
                let term = self.single(terms)?;
                let op = match self.peek() {
                    Some(Tok::Sym("<")) => CmpOp::Lt,
                    Some(Tok::Sym("<=")) => CmpOp::Le,
                    Some(Tok::Sym(">")) => CmpOp::Gt,
                    Some(Tok::Sym(">=")) => CmpOp::Ge,
                    Some(Tok::Sym("==")) => CmpOp::Eq,
                    _ => return Err(self.err("expected comparison operator")),
                };
                self.pos += 1;
                let threshold = self.num()?;
                Ok(Constraint::Value { term, op, threshold })
            }
            "dist" => {
                let (a, b) = self.pair(terms)?;
                let max = self.less_than_bound()?;
                Ok(Constraint::Distance { a, b, max })
            }
            "span" => {
                let (a, b) = self.pair(terms)?;
                let max = self.less_than_bound()?;
                Ok(Constraint::Span { a, b, max })
            }
            "samecrate" => {
                let (a, b) = self.pair(terms)?;
                Ok(Constraint::SameCrate(a, b))
            }
            _ => Err(SyntaxError { line: self.line, column: col, message: format!("unknown constraint {head:?}") }),
        }
    }

    fn rule(&mut self) -> Result<Rule, SyntaxError> {
        self.keyword("complex")?;
        let name = self.ident("rule name")?;
        self.sym("<=")?;
        let mut terms: Vec<Term> = Vec::new();
        let mut constraints = Vec::new();
        loop {
            let is_term = matches!(
                (self.toks.get(self.pos), self.toks.get(self.pos + 3)),
                (Some((Tok::Ident(e), _)), Some((Tok::Sym(")"), _)))
                    if !matches!(e.as_str(), "t" | "val" | "dist" | "span" | "samecrate")
            );
            if is_term {
                if !constraints.is_empty() {
                    return Err(self.err("event terms must precede constraints"));
                }
                let event = self.ident("event name")?;
                self.sym("(")?;
                let col = self.col();
                let var = self.ident("variable")?;
                self.sym(")")?;
                if terms.iter().any(|t| t.var == var) {
                    return Err(SyntaxError { line: self.line, column: col, message: format!("variable {var:?} bound twice") });
                }
                terms.push(Term { event, var });
            } else if terms.is_empty() {
                return Err(self.err("rule body needs at least one event term"));
            } else {
                constraints.push(self.constraint(&terms)?);
            }
            match self.peek() {
                None => break,
                Some(Tok::Sym("&")) => self.pos += 1,
                _ => return Err(self.err("expected '&' or end of rule")),
            }
        }
        Ok(Rule { name, terms, constraints })
    }
}

fn parse_line(text: &str, line: usize) -> Result<Rule, SyntaxError> {
    let toks = Lexer { src: text, line, toks: Vec::new() }.run()?;
    let mut p = Parser { toks, pos: 0, line, end_col: text.chars().count() + 1 };
    p.rule()
}

/// Parses one rule. The text must not contain more than one rule.
pub fn parse_rule(text: &str) -> Result<Rule, SyntaxError> {
    let rules = parse_rules(text)?;
    match rules.len() {
        1 => Ok(rules.into_iter().next().unwrap()),
        0 => Err(SyntaxError { line: 1, column: 1, message: "empty rule".into() }),
        _ => Err(SyntaxError { line: 2, column: 1, message: "expected a single rule".into() }),
    }
}

/// Parses a rule file: one rule per line, blank lines and `#` comments ignored.
pub fn parse_rules(text: &str) -> Result<Vec<Rule>, SyntaxError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_line(line, i + 1)?);
    }
    Ok(out)
}
