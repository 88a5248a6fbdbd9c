//! Textual query syntax.
//!
//! ```text
//! query    := '?' NAME ':' [ 'exists' NAME { ',' NAME } '.' ] branches
//! branches := branch { '|' branch }
//! branch   := '(' conj ')' | conj
//! conj     := literal { ('&' | ',') literal }
//! literal  := [ '!' ] NAME '(' NAME ',' NAME ')'
//! NAME     := bare identifier  |  "double-quoted string"
//! ```
//!
//! Bare identifiers consist of ASCII letters, digits and `_ - / ^ ~ + * @ $ %`.
//! Anything else (Freebase ids with dots, spaces, unicode) must be quoted;
//! inside quotes `\"` and `\\` are the only escapes. `¬` and `∧` are accepted
//! for `!` and `&`. Argument names that match a declared variable are
//! variables; all other names are looked up as entities.

use super::{ensure_valid, Atom, QueryGraph, Term, VarId};
use crate::error::{Error, Result};
use crate::kg::Vocab;

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Question,
    Colon,
    Dot,
    Comma,
    LParen,
    RParen,
    And,
    Or,
    Not,
    Name(String),
}

fn is_bare(c: char) -> bool {
    c.is_ascii_alphanumeric() || "_-/^~+*@$%".contains(c)
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some(&(pos, c)) = chars.peek() {
        let single = match c {
            '?' => Some(Tok::Question),
            ':' => Some(Tok::Colon),
            '.' => Some(Tok::Dot),
            ',' => Some(Tok::Comma),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '&' | '∧' => Some(Tok::And),
            '|' | '∨' => Some(Tok::Or),
            '!' | '¬' => Some(Tok::Not),
            _ => None,
        };
        if let Some(t) = single {
            chars.next();
            out.push((pos, t));
        } else if c.is_whitespace() {
            chars.next();
        } else if c == '"' {
            chars.next();
            let mut s = String::new();
            loop {
                match chars.next() {
                    Some((_, '"')) => break,
                    Some((_, '\\')) => match chars.next() {
                        Some((_, e @ ('"' | '\\'))) => s.push(e),
                        _ => return Err(Error::QuerySyntax { pos, msg: "bad escape in quoted name".into() }),
                    },
                    Some((_, ch)) => s.push(ch),
                    None => return Err(Error::QuerySyntax { pos, msg: "unterminated quoted name".into() }),
                }
            }
            out.push((pos, Tok::Name(s)));
        } else if is_bare(c) {
            let mut s = String::new();
            while let Some(&(_, ch)) = chars.peek() {
                if !is_bare(ch) {
                    break;
                }
                s.push(ch);
                chars.next();
            }
            out.push((pos, Tok::Name(s)));
        } else {
            return Err(Error::QuerySyntax { pos, msg: format!("unexpected character `{c}`") });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
    entities: &'a Vocab,
    relations: &'a Vocab,
    vars: Vec<String>,
}

impl Parser<'_> {
    fn here(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.0)
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.1)
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(Error::QuerySyntax { pos: self.here(), msg: msg.into() })
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<()> {
        if self.peek() == Some(&want) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected {what}"))
        }
    }

    fn name(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Name(n)) => {
                let n = n.clone();
                self.pos += 1;
                Ok(n)
            }
            _ => self.err("expected a name"),
        }
    }

    fn declare(&mut self, name: String) -> Result<()> {
        if self.vars.contains(&name) {
            return self.err(format!("variable `{name}` declared twice"));
        }
        self.vars.push(name);
        Ok(())
    }

    fn term(&mut self) -> Result<Term> {
        let n = self.name()?;
        if let Some(i) = self.vars.iter().position(|v| *v == n) {
            return Ok(Term::Var(i as VarId));
        }
        match self.entities.id(&n) {
            Some(e) => Ok(Term::Anchor(e)),
            None if looks_like_variable(&n) => Err(Error::FreeVariable(n)),
            None => Err(Error::UnknownEntity(n)),
        }
    }

    fn literal(&mut self) -> Result<Atom> {
        let negated = if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            true
        } else {
            false
        };
        let rel = self.name()?;
        let relation = self.relations.id(&rel).ok_or(Error::UnknownRelation(rel))?;
        self.expect(Tok::LParen, "`(`")?;
        let subject = self.term()?;
        self.expect(Tok::Comma, "`,`")?;
        let object = self.term()?;
        self.expect(Tok::RParen, "`)`")?;
        Ok(Atom { relation, subject, object, negated })
    }

    fn conj(&mut self) -> Result<Vec<Atom>> {
        let mut atoms = vec![self.literal()?];
        while matches!(self.peek(), Some(Tok::And | Tok::Comma)) {
            self.pos += 1;
            atoms.push(self.literal()?);
        }
        Ok(atoms)
    }

    fn branch(&mut self) -> Result<Vec<Atom>> {
        if self.peek() == Some(&Tok::LParen) {
            self.pos += 1;
            let atoms = self.conj()?;
            self.expect(Tok::RParen, "`)` closing the branch")?;
            Ok(atoms)
        } else {
            self.conj()
        }
    }

    fn query(&mut self) -> Result<QueryGraph> {
        self.expect(Tok::Question, "`?` before the target variable")?;
        let target = self.name()?;
        self.declare(target)?;
        self.expect(Tok::Colon, "`:`")?;
        if self.peek() == Some(&Tok::Name("exists".into())) {
            self.pos += 1;
            let v = self.name()?;
            self.declare(v)?;
            while self.peek() == Some(&Tok::Comma) {
                self.pos += 1;
                let v = self.name()?;
                self.declare(v)?;
            }
            self.expect(Tok::Dot, "`.` after the existential variables")?;
        }
        let mut disjuncts = vec![self.branch()?];
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            disjuncts.push(self.branch()?);
        }
        if self.pos != self.toks.len() {
            return self.err("unexpected trailing input");
        }
        Ok(QueryGraph { disjuncts, var_names: std::mem::take(&mut self.vars) })
    }
}

/// `T`, `V`, `V1`, `X23`: one uppercase letter and optional digits.
fn looks_like_variable(n: &str) -> bool {
    let mut cs = n.chars();
    cs.next().is_some_and(|c| c.is_ascii_uppercase()) && cs.all(|c| c.is_ascii_digit())
}

/// Parses and validates a query against the given vocabularies.
pub fn parse_query(text: &str, entities: &Vocab, relations: &Vocab) -> Result<QueryGraph> {
    let mut p = Parser { toks: tokenize(text)?, pos: 0, end: text.len(), entities, relations, vars: Vec::new() };
    let q = p.query()?;
    ensure_valid(&q)?;
    Ok(q)
}

fn push_name(out: &mut String, n: &str) {
    if !n.is_empty() && n != "exists" && n.chars().all(is_bare) {
        out.push_str(n);
    } else {
        out.push('"');
        for c in n.chars() {
            if c == '"' || c == '\\' {
                out.push('\\');
            }
            out.push(c);
        }
        out.push('"');
    }
}

/// Canonical text form; [`parse_query`] inverts it.
pub fn serialize_query(q: &QueryGraph, entities: &Vocab, relations: &Vocab) -> String {
    let mut s = String::from("?");
    push_name(&mut s, &q.var_names[0]);
    s.push_str(" : ");
    if q.num_vars() > 1 {
        s.push_str("exists ");
        for (i, v) in q.var_names[1..].iter().enumerate() {
            if i > 0 {
                s.push_str(", ");
            }
            push_name(&mut s, v);
        }
        s.push_str(" . ");
    }
    let term = |s: &mut String, t: Term| match t {
        Term::Var(v) => push_name(s, &q.var_names[v as usize]),
        Term::Anchor(e) => push_name(s, entities.name(e)),
    };
    let multi = q.disjuncts.len() > 1;
    for (d, atoms) in q.disjuncts.iter().enumerate() {
        if d > 0 {
            s.push_str(" | ");
        }
        let paren = multi && atoms.len() > 1;
        if paren {
            s.push('(');
        }
        for (i, a) in atoms.iter().enumerate() {
            if i > 0 {
                s.push_str(" & ");
            }
            if a.negated {
                s.push('!');
            }
            push_name(&mut s, relations.name(a.relation));
            s.push('(');
            term(&mut s, a.subject);
            s.push_str(", ");
            term(&mut s, a.object);
            s.push(')');
        }
        if paren {
            s.push(')');
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queries::{QueryType, ViolationKind};

    fn vocabs() -> (Vocab, Vocab) {
        let e = Vocab::from_names(["a", "b", "c", "/m/0x.y"].map(String::from).to_vec()).unwrap();
        let r = Vocab::from_names(["p", "q", "r", "r^-1"].map(String::from).to_vec()).unwrap();
        (e, r)
    }

    fn strip(s: &str) -> String {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    }

    #[test]
    fn pin_example_parses() {
        let (e, r) = vocabs();
        let q = parse_query("?T : exists V . p(a,V) & q(V,T) & !r(b,T)", &e, &r).unwrap();
        assert_eq!(q.disjuncts.len(), 1);
        let atoms = &q.disjuncts[0];
        assert_eq!(atoms[0], Atom::new(0, Term::Anchor(0), Term::Var(1)));
        assert_eq!(atoms[1], Atom::new(1, Term::Var(1), Term::Var(0)));
        assert_eq!(atoms[2], Atom::new(2, Term::Anchor(1), Term::Var(0)).negated());
        // same structure as the pin template
        let t = QueryType::Pin.template().instantiate(&[0, 1, 2], &[0, 1]);
        assert_eq!(q.disjuncts, t.disjuncts);
    }

    #[test]
    fn comma_conjunction_and_union() {
        let (e, r) = vocabs();
        let q = parse_query("?T : exists V . p(a, V), q(V, T), ¬r(b, T)", &e, &r).unwrap();
        assert_eq!(q.disjuncts[0].len(), 3);
        let u = parse_query("?T : p(a,T) | q(b,T)", &e, &r).unwrap();
        assert_eq!(u.disjuncts.len(), 2);
        assert_eq!(strip(&serialize_query(&u, &e, &r)), strip("?T : p(a,T) | q(b,T)"));
    }

    #[test]
    fn negated_sole_support_is_an_error() {
        let (e, r) = vocabs();
        match parse_query("?T : !r(b, T) ", &e, &r) {
            Err(Error::InvalidQuery(v)) => assert_eq!(v[0].kind, ViolationKind::NoPositiveSupport(0)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn resolution_errors() {
        let (e, r) = vocabs();
        assert!(matches!(parse_query("?T : p(zz, T)", &e, &r), Err(Error::UnknownEntity(n)) if n == "zz"));
        assert!(matches!(parse_query("?T : s(a, T)", &e, &r), Err(Error::UnknownRelation(_))));
        assert!(matches!(parse_query("?T : p(a, V) & q(V, T)", &e, &r), Err(Error::FreeVariable(n)) if n == "V"));
        assert!(matches!(parse_query("?T : p(a, T) &", &e, &r), Err(Error::QuerySyntax { .. })));
        assert!(matches!(
            parse_query("?T : exists V . p(V, T) & q(T, V) & p(a, V)", &e, &r),
            Err(Error::InvalidQuery(_))
        ));
    }

    #[test]
    fn quoted_names_round_trip() {
        let (e, r) = vocabs();
        let text = "?T : r^-1(\"/m/0x.y\", T)";
        let q = parse_query(text, &e, &r).unwrap();
        assert_eq!(q.disjuncts[0][0].subject, Term::Anchor(3));
        assert_eq!(serialize_query(&q, &e, &r), text);
    }

    #[test]
    fn every_template_round_trips() {
        let e = Vocab::from_names((0..4).map(|i| format!("e{i}")).collect()).unwrap();
        let r = Vocab::from_names((0..4).map(|i| format!("r{i}")).collect()).unwrap();
        for t in QueryType::ALL {
            let g = t.template().instantiate_dummy();
            let text = serialize_query(&g, &e, &r);
            let back = parse_query(&text, &e, &r).unwrap();
            assert_eq!(back, g, "{t}: {text}");
            assert_eq!(serialize_query(&back, &e, &r), text);
        }
    }
}
