//! A small line-oriented ontology language: namespaced concepts, an isA
//! taxonomy, relation signatures and Horn rules with numeric guards.
//!
//! ```text
//! prefix DO .
//! concept DO:Disease .
//! DO:Obesity isA DO:Disease .
//! relation isRiskFactorOf domain DO:Disease range DO:Disease .
//! axiom R3: DO:Obesity isRiskFactorOf DO:Diabetes .
//! rule EXPOSE: ?p isExposedTo ?r :- ?p livesIn ?t, ?t hasMetric ?m,
//!     ?m indicatorOfRisk ?r, value(?m) >= threshold(?r) .
//! ```
//!
//! Statements end with `.`, `#` starts a comment, variables are `?name`.
//! Bare names without a prefix live in the implicit `local` namespace.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LOCAL_NS: &str = "local";
pub const ISA: &str = "isA";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OntologyError {
    #[error("syntax error at {line}:{column}: expected {expected}, found {found}")]
    SyntaxError { line: usize, column: usize, expected: String, found: String },
    #[error("line {line}: undeclared prefix {prefix:?}")]
    UndeclaredPrefix { line: usize, prefix: String },
    #[error("rule {rule}: head variable ?{var} does not occur in the body")]
    UnboundHeadVariable { rule: String, var: String },
    #[error("isA cycle through {0}")]
    CyclicIsA(Term),
    #[error("line {line}: conflicting declaration: {message}")]
    ConflictingDeclaration { line: usize, message: String },
    #[error("unknown term {0}")]
    UnknownTerm(Term),
}

/// A namespaced concept identifier, written `NS:name`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Term {
    pub namespace: String,
    pub name: String,
}

impl Term {
    pub fn new(namespace: &str, name: &str) -> Self {
        Term { namespace: namespace.to_string(), name: name.to_string() }
    }

    /// Parses `NS:name`, or a bare `name` in the local namespace.
    pub fn parse(s: &str) -> Option<Self> {
        let (ns, name) = s.split_once(':').unwrap_or((LOCAL_NS, s));
        let ok_ns = !ns.is_empty() && ns.chars().all(|c| c.is_ascii_alphanumeric() || c == '_');
        let ok_name = !name.is_empty() && name.chars().all(is_name_char);
        (ok_ns && ok_name).then(|| Term::new(ns, name))
    }

    pub fn key(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.namespace, self.name)
    }
}

fn is_name_char(c: char) -> bool {
    c.is_alphanumeric() || matches!(c, '_' | '%' | '-')
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Arg {
    Var(String),
    Const(Term),
}

impl fmt::Display for Arg {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arg::Var(v) => write!(f, "?{v}"),
            Arg::Const(t) => write!(f, "{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Atom {
    pub subject: Arg,
    pub relation: String,
    pub object: Arg,
}

impl Atom {
    pub fn vars(&self) -> impl Iterator<Item = &str> {
        [&self.subject, &self.object].into_iter().filter_map(|a| match a {
            Arg::Var(v) => Some(v.as_str()),
            Arg::Const(_) => None,
        })
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}", self.subject, self.relation, self.object)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cmp {
    Ge,
    Gt,
    Le,
    Lt,
}

impl Cmp {
    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Cmp::Ge => lhs >= rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Le => lhs <= rhs,
            Cmp::Lt => lhs < rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Cmp::Ge => ">=",
            Cmp::Gt => ">",
            Cmp::Le => "<=",
            Cmp::Lt => "<",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum GuardRhs {
    Number(f64),
    /// Per-concept threshold of the node bound to this variable.
    Threshold(String),
}

/// `value(?var) <op> <rhs>`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Guard {
    pub var: String,
    pub op: Cmp,
    pub rhs: GuardRhs,
}

impl Guard {
    pub fn vars(&self) -> impl Iterator<Item = &str> {
        let rhs = match &self.rhs {
            GuardRhs::Threshold(v) => Some(v.as_str()),
            GuardRhs::Number(_) => None,
        };
        std::iter::once(self.var.as_str()).chain(rhs)
    }
}

impl fmt::Display for Guard {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "value(?{}) {} ", self.var, self.op.symbol())?;
        match &self.rhs {
            GuardRhs::Number(x) => write!(f, "{x:?}"),
            GuardRhs::Threshold(v) => write!(f, "threshold(?{v})"),
        }
    }
}

/// A Horn rule. Ground axioms are rules with a constant head and no body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleAxiom {
    pub id: String,
    pub head: Atom,
    pub body: Vec<Atom>,
    pub guards: Vec<Guard>,
}

impl RuleAxiom {
    pub fn is_ground_axiom(&self) -> bool {
        self.body.is_empty() && self.guards.is_empty() && self.head.vars().next().is_none()
    }

    pub fn body_vars(&self) -> BTreeSet<&str> {
        self.body.iter().flat_map(Atom::vars).collect()
    }
}

impl fmt::Display for RuleAxiom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ground_axiom() {
            return write!(f, "axiom {}: {} .", self.id, self.head);
        }
        write!(f, "rule {}: {} :-", self.id, self.head)?;
        let mut first = true;
        for a in &self.body {
            write!(f, "{}{a}", if first { " " } else { ", " })?;
            first = false;
        }
        for g in &self.guards {
            write!(f, "{}{g}", if first { " " } else { ", " })?;
            first = false;
        }
        write!(f, " .")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationDecl {
    pub name: String,
    pub domain: Term,
    pub range: Term,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Ontology {
    prefixes: BTreeSet<String>,
    concepts: BTreeSet<Term>,
    isa: BTreeSet<(Term, Term)>,
    relations: BTreeMap<String, RelationDecl>,
    rules: Vec<RuleAxiom>,
    #[serde(skip)]
    ancestors: BTreeMap<Term, BTreeSet<Term>>,
}

impl Ontology {
    pub fn prefixes(&self) -> &BTreeSet<String> {
        &self.prefixes
    }

    pub fn concepts(&self) -> &BTreeSet<Term> {
        &self.concepts
    }

    pub fn isa_edges(&self) -> &BTreeSet<(Term, Term)> {
        &self.isa
    }

    pub fn relations(&self) -> &BTreeMap<String, RelationDecl> {
        &self.relations
    }

    pub fn relation(&self, name: &str) -> Option<&RelationDecl> {
        self.relations.get(name)
    }

    /// True for declared relations and the built-in `isA`.
    pub fn has_relation(&self, name: &str) -> bool {
        name == ISA || self.relations.contains_key(name)
    }

    pub fn rules(&self) -> &[RuleAxiom] {
        &self.rules
    }

    pub fn rule(&self, id: &str) -> Option<&RuleAxiom> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn has_concept(&self, t: &Term) -> bool {
        self.concepts.contains(t)
    }

    pub fn declares_prefix(&self, ns: &str) -> bool {
        ns == LOCAL_NS || self.prefixes.contains(ns)
    }

    pub fn parents<'a>(&'a self, t: &'a Term) -> impl Iterator<Item = &'a Term> + 'a {
        self.isa.iter().filter(move |(c, _)| c == t).map(|(_, p)| p)
    }

    /// Strict ancestors of a concept (empty for unknown terms).
    pub fn ancestors(&self, t: &Term) -> impl Iterator<Item = &Term> {
        self.ancestors.get(t).into_iter().flatten()
    }

    /// Reflexive-transitive isA check that tolerates undeclared terms
    /// (an undeclared term is subsumed only by itself).
    pub fn is_subsumed(&self, descendant: &Term, ancestor: &Term) -> bool {
        descendant == ancestor || self.ancestors.get(descendant).is_some_and(|a| a.contains(ancestor))
    }

    /// Concepts subsumed by `ancestor`, including itself.
    pub fn descendants(&self, ancestor: &Term) -> BTreeSet<Term> {
        self.concepts.iter().filter(|c| self.is_subsumed(c, ancestor)).cloned().collect()
    }

    fn rebuild_closure(&mut self) -> Result<(), OntologyError> {
        let mut closure = BTreeMap::new();
        for c in &self.concepts {
            let mut seen = BTreeSet::new();
            let mut queue: VecDeque<&Term> = self.parents(c).collect();
            while let Some(p) = queue.pop_front() {
                if p == c {
                    return Err(OntologyError::CyclicIsA(c.clone()));
                }
                if seen.insert(p.clone()) {
                    queue.extend(self.parents(p));
                }
            }
            closure.insert(c.clone(), seen);
        }
        self.ancestors = closure;
        Ok(())
    }

    /// Canonical DSL text; reparsing it yields an equal ontology.
    pub fn to_dsl(&self) -> String {
        let mut s = String::new();
        for p in &self.prefixes {
            s.push_str(&format!("prefix {p} .\n"));
        }
        for c in &self.concepts {
            s.push_str(&format!("concept {c} .\n"));
        }
        for (c, p) in &self.isa {
            s.push_str(&format!("{c} isA {p} .\n"));
        }
        for r in self.relations.values() {
            s.push_str(&format!("relation {} domain {} range {} .\n", r.name, r.domain, r.range));
        }
        for r in &self.rules {
            s.push_str(&format!("{r}\n"));
        }
        s
    }
}

/// Reflexive-transitive subsumption between declared concepts.
pub fn subsumes(ont: &Ontology, ancestor: &Term, descendant: &Term) -> Result<bool, OntologyError> {
    for t in [ancestor, descendant] {
        if !ont.has_concept(t) {
            return Err(OntologyError::UnknownTerm(t.clone()));
        }
    }
    Ok(ont.is_subsumed(descendant, ancestor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DiagnosticKind {
    UndeclaredRelation,
    TypeMismatch,
    UnknownTerm,
    UnboundHeadVariable,
    UnboundGuardVariable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub rule: String,
    pub kind: DiagnosticKind,
    pub message: String,
}

/// Static checks on one rule against the ontology. Never fails; an empty
/// list means the rule is well formed.
pub fn validate_rule(ont: &Ontology, rule: &RuleAxiom) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let mut push = |kind, message: String| out.push(Diagnostic { rule: rule.id.clone(), kind, message });
    for atom in std::iter::once(&rule.head).chain(&rule.body) {
        for arg in [&atom.subject, &atom.object] {
            if let Arg::Const(t) = arg {
                if !ont.has_concept(t) {
                    push(DiagnosticKind::UnknownTerm, format!("{t} is not a declared concept"));
                }
            }
        }
        if atom.relation == ISA {
            continue;
        }
        let Some(decl) = ont.relation(&atom.relation) else {
            push(DiagnosticKind::UndeclaredRelation, format!("relation {} is not declared", atom.relation));
            continue;
        };
        if let Arg::Const(t) = &atom.subject {
            if !ont.is_subsumed(t, &decl.domain) {
                push(DiagnosticKind::TypeMismatch, format!("{t} is outside the domain {} of {}", decl.domain, decl.name));
            }
        }
        if let Arg::Const(t) = &atom.object {
            if !ont.is_subsumed(t, &decl.range) {
                push(DiagnosticKind::TypeMismatch, format!("{t} is outside the range {} of {}", decl.range, decl.name));
            }
        }
    }
    let bound = rule.body_vars();
    for v in rule.head.vars() {
        if !bound.contains(v) {
            push(DiagnosticKind::UnboundHeadVariable, format!("head variable ?{v} does not occur in the body"));
        }
    }
    for g in &rule.guards {
        for v in g.vars() {
            if !bound.contains(v) {
                push(DiagnosticKind::UnboundGuardVariable, format!("guard variable ?{v} is not bound by the body"));
            }
        }
    }
    out
}

/// Diagnostics for every rule, in rule order.
pub fn validate(ont: &Ontology) -> Vec<Diagnostic> {
    ont.rules().iter().flat_map(|r| validate_rule(ont, r)).collect()
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Word(String),
    Var(String),
    Num(f64),
    Dot,
    Comma,
    Colon,
    Implies,
    LParen,
    RParen,
    Op(Cmp),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Word(w) => write!(f, "`{w}`"),
            Tok::Var(v) => write!(f, "`?{v}`"),
            Tok::Num(n) => write!(f, "`{n}`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::Implies => f.write_str("`:-`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Op(c) => write!(f, "`{}`", c.symbol()),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(text: &str) -> Result<Vec<Spanned>, OntologyError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, column, expected: &str, found: String| OntologyError::SyntaxError {
        line,
        column,
        expected: expected.into(),
        found,
    };
    while i < chars.len() {
        let c = chars[i];
        let (sl, sc) = (line, col);
        let advance = |n: usize, i: &mut usize, col: &mut usize| {
            *i += n;
            *col += n;
        };
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(1, &mut i, &mut col),
            '#' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '.' if !chars.get(i + 1).is_some_and(char::is_ascii_digit) => {
                out.push(Spanned { tok: Tok::Dot, line: sl, column: sc });
                advance(1, &mut i, &mut col);
            }
            ',' => {
                out.push(Spanned { tok: Tok::Comma, line: sl, column: sc });
                advance(1, &mut i, &mut col);
            }
            '(' => {
                out.push(Spanned { tok: Tok::LParen, line: sl, column: sc });
                advance(1, &mut i, &mut col);
            }
            ')' => {
                out.push(Spanned { tok: Tok::RParen, line: sl, column: sc });
                advance(1, &mut i, &mut col);
            }
            ':' => {
                if chars.get(i + 1) == Some(&'-') {
                    out.push(Spanned { tok: Tok::Implies, line: sl, column: sc });
                    advance(2, &mut i, &mut col);
                } else {
                    out.push(Spanned { tok: Tok::Colon, line: sl, column: sc });
                    advance(1, &mut i, &mut col);
                }
            }
            '>' | '<' => {
                let eq = chars.get(i + 1) == Some(&'=');
                let op = match (c, eq) {
                    ('>', true) => Cmp::Ge,
                    ('>', false) => Cmp::Gt,
                    ('<', true) => Cmp::Le,
                    _ => Cmp::Lt,
                };
                out.push(Spanned { tok: Tok::Op(op), line: sl, column: sc });
                advance(if eq { 2 } else { 1 }, &mut i, &mut col);
            }
            '?' => {
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                if j == start {
                    return Err(err(sl, sc, "variable name after `?`", "nothing".into()));
                }
                out.push(Spanned { tok: Tok::Var(chars[start..j].iter().collect()), line: sl, column: sc });
                col += j - i;
                i = j;
            }
            c if c.is_ascii_digit() || ((c == '-' || c == '.') && chars.get(i + 1).is_some_and(char::is_ascii_digit)) => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_digit() || matches!(chars[j], '.' | 'e' | 'E'))
                    || (j < chars.len() && matches!(chars[j], '-' | '+') && matches!(chars[j - 1], 'e' | 'E'))
                {
                    j += 1;
                }
                // A trailing `.` terminates the statement.
                if chars[j - 1] == '.' && (j == chars.len() || !chars[j].is_ascii_digit()) {
                    j -= 1;
                }
                let s: String = chars[i..j].iter().collect();
                let v = s.parse::<f64>().map_err(|_| err(sl, sc, "number", format!("`{s}`")))?;
                out.push(Spanned { tok: Tok::Num(v), line: sl, column: sc });
                col += j - i;
                i = j;
            }
            c if is_name_char(c) => {
                let mut j = i;
                while j < chars.len() && is_name_char(chars[j]) {
                    j += 1;
                }
                // `NS:name` is one word; `ID:` followed by a space is an ID and a colon.
                if j + 1 < chars.len() && chars[j] == ':' && is_name_char(chars[j + 1]) {
                    j += 1;
                    while j < chars.len() && is_name_char(chars[j]) {
                        j += 1;
                    }
                }
                out.push(Spanned { tok: Tok::Word(chars[i..j].iter().collect()), line: sl, column: sc });
                col += j - i;
                i = j;
            }
            other => return Err(err(sl, sc, "a token", format!("`{other}`"))),
        }
    }
    out.push(Spanned { tok: Tok::Eof, line, column: col });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    ont: Ontology,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn fail<T>(&self, expected: &str) -> Result<T, OntologyError> {
        let t = self.peek();
        Err(OntologyError::SyntaxError {
            line: t.line,
            column: t.column,
            expected: expected.into(),
            found: t.tok.to_string(),
        })
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<(), OntologyError> {
        if self.peek().tok == tok {
            self.next();
            Ok(())
        } else {
            self.fail(expected)
        }
    }

    fn word(&mut self, expected: &str) -> Result<(String, usize), OntologyError> {
        match self.peek().tok.clone() {
            Tok::Word(w) => {
                let line = self.next().line;
                Ok((w, line))
            }
            _ => self.fail(expected),
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<(), OntologyError> {
        match &self.peek().tok {
            Tok::Word(w) if w == kw => {
                self.next();
                Ok(())
            }
            _ => self.fail(&format!("`{kw}`")),
        }
    }

    /// Reads a term and registers it as a concept.
    fn term(&mut self) -> Result<Term, OntologyError> {
        let (w, line) = self.word("a term such as `NS:Name`")?;
        let t = match Term::parse(&w) {
            Some(t) => t,
            None => {
                self.pos -= 1;
                return self.fail("a term such as `NS:Name`");
            }
        };
        if !self.ont.declares_prefix(&t.namespace) {
            return Err(OntologyError::UndeclaredPrefix { line, prefix: t.namespace });
        }
        self.ont.concepts.insert(t.clone());
        Ok(t)
    }

    fn relation_name(&mut self) -> Result<String, OntologyError> {
        let (w, _) = self.word("a relation name")?;
        if w.contains(':') || w.is_empty() {
            self.pos -= 1;
            return self.fail("a relation name");
        }
        Ok(w)
    }

    fn arg(&mut self) -> Result<Arg, OntologyError> {
        if let Tok::Var(v) = self.peek().tok.clone() {
            self.next();
            return Ok(Arg::Var(v));
        }
        Ok(Arg::Const(self.term()?))
    }

    fn atom(&mut self) -> Result<Atom, OntologyError> {
        let subject = self.arg()?;
        let relation = self.relation_name()?;
        let object = self.arg()?;
        Ok(Atom { subject, relation, object })
    }

    fn var_in_parens(&mut self) -> Result<String, OntologyError> {
        self.expect(Tok::LParen, "`(`")?;
        let v = match self.peek().tok.clone() {
            Tok::Var(v) => {
                self.next();
                v
            }
            _ => return self.fail("a variable"),
        };
        self.expect(Tok::RParen, "`)`")?;
        Ok(v)
    }

    fn guard(&mut self) -> Result<Guard, OntologyError> {
        self.keyword("value")?;
        let var = self.var_in_parens()?;
        let op = match self.peek().tok {
            Tok::Op(op) => {
                self.next();
                op
            }
            _ => return self.fail("a comparison (`>=`, `>`, `<=`, `<`)"),
        };
        let rhs = match self.peek().tok.clone() {
            Tok::Num(n) => {
                self.next();
                GuardRhs::Number(n)
            }
            Tok::Word(w) if w == "threshold" => {
                self.next();
                GuardRhs::Threshold(self.var_in_parens()?)
            }
            _ => return self.fail("a number or `threshold(?var)`"),
        };
        Ok(Guard { var, op, rhs })
    }

    fn rule_id(&mut self) -> Result<(String, usize), OntologyError> {
        let (id, line) = self.word("a rule identifier")?;
        if id.contains(':') {
            self.pos -= 1;
            return self.fail("a rule identifier followed by `:`");
        }
        self.expect(Tok::Colon, "`:` after the rule identifier")?;
        Ok((id, line))
    }

    fn add_rule(&mut self, rule: RuleAxiom, line: usize) -> Result<(), OntologyError> {
        let bound = rule.body_vars();
        if let Some(v) = rule.head.vars().find(|v| !bound.contains(v)) {
            return Err(OntologyError::UnboundHeadVariable { rule: rule.id.clone(), var: v.to_string() });
        }
        match self.ont.rules.iter().find(|r| r.id == rule.id) {
            Some(existing) if *existing == rule => Ok(()),
            Some(_) => Err(OntologyError::ConflictingDeclaration {
                line,
                message: format!("rule {} redefined", rule.id),
            }),
            None => {
                self.ont.rules.push(rule);
                Ok(())
            }
        }
    }

    fn statement(&mut self) -> Result<(), OntologyError> {
        let Tok::Word(w) = self.peek().tok.clone() else {
            return self.fail("a statement");
        };
        match w.as_str() {
            "prefix" => {
                self.next();
                let (ns, _) = self.word("a namespace name")?;
                if ns.contains(':') || !ns.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    self.pos -= 1;
                    return self.fail("a namespace name");
                }
                self.ont.prefixes.insert(ns);
            }
            "concept" => {
                self.next();
                self.term()?;
            }
            "relation" => {
                let line = self.next().line;
                let name = self.relation_name()?;
                self.keyword("domain")?;
                let domain = self.term()?;
                self.keyword("range")?;
                let range = self.term()?;
                let decl = RelationDecl { name: name.clone(), domain, range };
                match self.ont.relations.get(&name) {
                    Some(existing) if *existing != decl => {
                        return Err(OntologyError::ConflictingDeclaration {
                            line,
                            message: format!("relation {name} redeclared with a different signature"),
                        })
                    }
                    _ => {
                        self.ont.relations.insert(name, decl);
                    }
                }
            }
            "axiom" => {
                self.next();
                let (id, line) = self.rule_id()?;
                let subject = Arg::Const(self.term()?);
                let relation = self.relation_name()?;
                let object = Arg::Const(self.term()?);
                let rule = RuleAxiom { id, head: Atom { subject, relation, object }, body: vec![], guards: vec![] };
                self.add_rule(rule, line)?;
            }
            "rule" => {
                self.next();
                let (id, line) = self.rule_id()?;
                let head = self.atom()?;
                self.expect(Tok::Implies, "`:-`")?;
                let mut body = Vec::new();
                let mut guards = Vec::new();
                loop {
                    if matches!(&self.peek().tok, Tok::Word(w) if w == "value") {
                        guards.push(self.guard()?);
                    } else if guards.is_empty() {
                        body.push(self.atom()?);
                    } else {
                        return self.fail("a guard (guards follow all atoms)");
                    }
                    if self.peek().tok == Tok::Comma {
                        self.next();
                    } else {
                        break;
                    }
                }
                self.add_rule(RuleAxiom { id, head, body, guards }, line)?;
            }
            _ => {
                let child = self.term()?;
                self.keyword(ISA)?;
                let parent = self.term()?;
                self.ont.isa.insert((child, parent));
            }
        }
        self.expect(Tok::Dot, "`.` ending the statement")
    }
}

/// Parses ontology text. Repeated identical declarations are idempotent.
pub fn parse_ontology(text: &str) -> Result<Ontology, OntologyError> {
    let mut p = Parser { toks: lex(text)?, pos: 0, ont: Ontology::default() };
    while p.peek().tok != Tok::Eof {
        p.statement()?;
    }
    let mut ont = p.ont;
    ont.rebuild_closure()?;
    Ok(ont)
}

/// The bundled ontology fragment (DO, COPE, GISO, HIO and ACESO terms).
pub const BUNDLED_ONTOLOGY: &str = include_str!("../resources/upho.onto");

pub fn bundled() -> Ontology {
    parse_ontology(BUNDLED_ONTOLOGY).expect("bundled ontology parses")
}
