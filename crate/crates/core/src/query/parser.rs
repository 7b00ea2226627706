use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::ast::{FromClause, MatchClause, ObjectsClause, Projection, QFilter, QNode, QValue, Query};
use super::QueryError;
use crate::gemd::NodeKind;
use crate::graph_store::{Direction, FilterOp, Hop};
use crate::tabular::RowFilter;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Param(String),
    Punct(char),
    Arrow { hop: Hop, direction: Direction },
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Param(p) => format!("${p}"),
            Tok::Punct(c) => format!("`{c}`"),
            Tok::Arrow { .. } => "an arrow".to_string(),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Debug, Clone)]
struct Spanned {
    tok: Tok,
    line: usize,
    col: usize,
}

const ARROWS: [(&str, Hop, Direction); 5] = [
    ("-[*]->", Hop::Reachable, Direction::Forward),
    ("<-[*]-", Hop::Reachable, Direction::Reverse),
    ("-->", Hop::Direct, Direction::Forward),
    ("<--", Hop::Direct, Direction::Reverse),
    ("->", Hop::Direct, Direction::Forward),
];

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn lex(text: &str) -> Result<Vec<Spanned>, QueryError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for k in 0..n {
            if chars[*i + k] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
        }
        *i += n;
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '#' {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let push = |out: &mut Vec<Spanned>, tok| {
            out.push(Spanned {
                tok,
                line: start_line,
                col: start_col,
            })
        };
        if c == '-' || c == '<' {
            let arrow = ARROWS.iter().find(|(lit, _, _)| {
                let lit: Vec<char> = lit.chars().collect();
                chars.len() >= i + lit.len() && chars[i..i + lit.len()] == lit[..]
            });
            let Some((lit, hop, direction)) = arrow else {
                return Err(QueryError::syntax(line, col, "an arrow such as -[*]-> or <--", &c.to_string()));
            };
            push(&mut out, Tok::Arrow {
                hop: *hop,
                direction: *direction,
            });
            advance(&mut i, &mut line, &mut col, lit.chars().count());
            continue;
        }
        if c == '"' {
            let mut value = String::new();
            advance(&mut i, &mut line, &mut col, 1);
            loop {
                let Some(&c) = chars.get(i) else {
                    return Err(QueryError::syntax(start_line, start_col, "closing `\"`", "end of input"));
                };
                match c {
                    '"' => {
                        advance(&mut i, &mut line, &mut col, 1);
                        break;
                    }
                    '\\' => match chars.get(i + 1) {
                        Some('"') => {
                            value.push('"');
                            advance(&mut i, &mut line, &mut col, 2);
                        }
                        Some('\\') => {
                            value.push('\\');
                            advance(&mut i, &mut line, &mut col, 2);
                        }
                        _ => {
                            value.push('\\');
                            advance(&mut i, &mut line, &mut col, 1);
                        }
                    },
                    _ => {
                        value.push(c);
                        advance(&mut i, &mut line, &mut col, 1);
                    }
                }
            }
            push(&mut out, Tok::Str(value));
            continue;
        }
        if c == '$' {
            let mut n = 1;
            while i + n < chars.len() && is_ident_char(chars[i + n]) {
                n += 1;
            }
            if n == 1 {
                return Err(QueryError::syntax(line, col, "a parameter name after `$`", "`$`"));
            }
            push(&mut out, Tok::Param(chars[i + 1..i + n].iter().collect()));
            advance(&mut i, &mut line, &mut col, n);
            continue;
        }
        if is_ident_char(c) {
            let mut n = 0;
            while i + n < chars.len() && is_ident_char(chars[i + n]) {
                n += 1;
            }
            push(&mut out, Tok::Ident(chars[i..i + n].iter().collect()));
            advance(&mut i, &mut line, &mut col, n);
            continue;
        }
        if "(){}:,.=~".contains(c) {
            push(&mut out, Tok::Punct(c));
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        return Err(QueryError::syntax(line, col, "a query token", &format!("`{c}`")));
    }
    out.push(Spanned { tok: Tok::Eof, line, col });
    Ok(out)
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn bump(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error(&self, expected: &str) -> QueryError {
        let t = self.peek();
        QueryError::syntax(t.line, t.col, expected, &t.tok.describe())
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s.eq_ignore_ascii_case(kw))
    }

    fn keyword(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.at_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(kw))
        }
    }

    fn punct(&mut self, c: char) -> Result<(), QueryError> {
        if self.peek().tok == Tok::Punct(c) {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&format!("`{c}`")))
        }
    }

    fn eat_punct(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Punct(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        match &self.peek().tok {
            Tok::Ident(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn string(&mut self, what: &str) -> Result<String, QueryError> {
        match &self.peek().tok {
            Tok::Str(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => Err(self.error(what)),
        }
    }

    fn op(&mut self) -> Result<FilterOp, QueryError> {
        if self.eat_punct('=') {
            Ok(FilterOp::Equals)
        } else if self.eat_punct('~') {
            Ok(FilterOp::Regex)
        } else {
            Err(self.error("`=` or `~`"))
        }
    }

    fn braced<T>(&mut self, mut item: impl FnMut(&mut Self) -> Result<T, QueryError>) -> Result<Vec<T>, QueryError> {
        let mut out = Vec::new();
        if !self.eat_punct('{') {
            return Ok(out);
        }
        if self.eat_punct('}') {
            return Ok(out);
        }
        loop {
            out.push(item(self)?);
            if self.eat_punct(',') {
                continue;
            }
            self.punct('}')?;
            return Ok(out);
        }
    }

    fn alias(&mut self, default: &str) -> Result<String, QueryError> {
        if self.at_keyword("AS") {
            self.bump();
            self.ident("a variable name")
        } else {
            Ok(default.to_string())
        }
    }

    fn from_clause(&mut self) -> Result<FromClause, QueryError> {
        self.keyword("FROM")?;
        let entity = self.ident("an entity or table name")?;
        let var = self.alias(&entity)?;
        let filters = self.braced(|p| {
            let column = p.ident("a column name")?;
            let op = p.op()?;
            let operand = p.string("a quoted string")?;
            Ok(RowFilter { column, op, operand })
        })?;
        Ok(FromClause { entity, var, filters })
    }

    fn node(&mut self) -> Result<QNode, QueryError> {
        self.punct('(')?;
        let var = self.ident("a variable name")?;
        let kind = if self.eat_punct(':') {
            let at = self.peek().clone();
            let name = self.ident("a node kind")?;
            Some(name.parse::<NodeKind>().map_err(|_| {
                QueryError::syntax(at.line, at.col, "a node kind", &format!("`{name}`"))
            })?)
        } else {
            None
        };
        let filters = self.braced(|p| {
            let attribute = p.ident("an attribute name")?;
            let op = p.op()?;
            let at = p.peek().clone();
            let value = match &at.tok {
                Tok::Str(s) => {
                    let s = s.clone();
                    p.bump();
                    QValue::Literal(s)
                }
                Tok::Param(name) if name == "sample" && op == FilterOp::Equals => {
                    p.bump();
                    QValue::Sample
                }
                Tok::Param(_) if op == FilterOp::Equals => return Err(p.error("$sample")),
                _ => return Err(p.error("a quoted string")),
            };
            Ok(QFilter { attribute, op, value })
        })?;
        self.punct(')')?;
        Ok(QNode { var, kind, filters })
    }

    fn match_clause(&mut self) -> Result<MatchClause, QueryError> {
        self.keyword("MATCH")?;
        let mut nodes = alloc::vec![self.node()?];
        let mut hops = Vec::new();
        let mut direction = None;
        while let Tok::Arrow { hop, direction: d } = self.peek().tok {
            if direction.is_some_and(|prev| prev != d) {
                return Err(self.error("an arrow in the same direction as the previous one"));
            }
            direction = Some(d);
            self.bump();
            hops.push(hop);
            nodes.push(self.node()?);
        }
        Ok(MatchClause {
            nodes,
            hops,
            direction: direction.unwrap_or(Direction::Forward),
        })
    }

    fn objects_clause(&mut self) -> Result<ObjectsClause, QueryError> {
        self.keyword("OBJECTS")?;
        let at = self.peek().clone();
        let field = self.ident("`characterization`")?;
        if field != "characterization" {
            return Err(QueryError::syntax(at.line, at.col, "`characterization`", &format!("`{field}`")));
        }
        self.punct('=')?;
        let characterization = self.string("a quoted characterization name")?;
        let var = self.alias("obj")?;
        Ok(ObjectsClause { characterization, var })
    }
}

/// Parses query text. Clauses appear in the order FROM, MATCH, OBJECTS,
/// RETURN; each of the first three is optional.
pub fn parse_query(text: &str) -> Result<Query, QueryError> {
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let from = if p.at_keyword("FROM") { Some(p.from_clause()?) } else { None };
    let graph = if p.at_keyword("MATCH") { Some(p.match_clause()?) } else { None };
    let objects = if p.at_keyword("OBJECTS") { Some(p.objects_clause()?) } else { None };
    if !p.at_keyword("RETURN") {
        let expected = match (&from, &graph, &objects) {
            (None, None, None) => "FROM, MATCH, OBJECTS or RETURN",
            (_, None, None) => "MATCH, OBJECTS or RETURN",
            (_, Some(_), None) => "an arrow, OBJECTS or RETURN",
            _ => "RETURN",
        };
        return Err(p.error(expected));
    }
    p.bump();

    let mut bound: BTreeSet<String> = BTreeSet::new();
    let mut bind = |var: &str, p: &Parser| -> Result<(), QueryError> {
        if bound.insert(var.to_string()) {
            Ok(())
        } else {
            Err(QueryError::syntax(p.peek().line, p.peek().col, &format!("a fresh variable instead of `{var}`"), var))
        }
    };
    if let Some(f) = &from {
        bind(&f.var, &p)?;
    }
    if let Some(m) = &graph {
        for n in &m.nodes {
            bind(&n.var, &p)?;
        }
    }
    if let Some(o) = &objects {
        bind(&o.var, &p)?;
    }

    let mut ret = Vec::new();
    loop {
        let at = p.peek().clone();
        let var = p.ident("a projection such as `m.name`")?;
        p.punct('.')?;
        let attr = p.ident("an attribute name")?;
        if !bound.contains(&var) {
            return Err(QueryError::syntax(at.line, at.col, "a bound variable", &format!("unbound `{var}`")));
        }
        ret.push(Projection { var, attr });
        if !p.eat_punct(',') {
            break;
        }
    }
    if p.peek().tok != Tok::Eof {
        let expected = if p.at_keyword("FROM") || p.at_keyword("MATCH") || p.at_keyword("OBJECTS") || p.at_keyword("RETURN") {
            "end of input (each clause may appear once, in the order FROM, MATCH, OBJECTS, RETURN)"
        } else {
            "`,` or end of input"
        };
        return Err(p.error(expected));
    }
    Ok(Query {
        from,
        graph,
        objects,
        ret,
    })
}
