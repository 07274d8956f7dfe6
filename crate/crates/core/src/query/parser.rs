//! Hand-written tokenizer and recursive-descent parser for the supported
//! aggregate subset. Error positions are byte offsets into the input.

use super::ast::{Aggregate, ArithOp, BoolExpr, CmpOp, Expr, Literal, Predicate, QuerySpec};
use super::QueryError;

const KEYWORDS: &[&str] = &[
    "SELECT", "FROM", "WHERE", "GROUP", "BY", "AND", "OR", "NOT", "JOIN", "INNER", "LEFT",
    "RIGHT", "FULL", "OUTER", "CROSS", "ON", "HAVING", "ORDER", "LIMIT", "DISTINCT", "UNION",
    "AS", "IN", "LIKE", "BETWEEN", "IS", "NULL", "OFFSET",
];

pub(crate) fn is_keyword(word: &str) -> bool {
    KEYWORDS.iter().any(|k| k.eq_ignore_ascii_case(word))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    QuotedIdent(String),
    Number(f64),
    Str(String),
    Sym(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    pos: usize,
}

fn tokenize(sql: &str) -> Result<Vec<Token>, QueryError> {
    let bytes = sql.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(sql[start..i].to_string()),
                pos: start,
            });
        } else if c.is_ascii_digit() || (c == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit)) {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &sql[start..i];
            let value = text.parse::<f64>().map_err(|_| QueryError::Syntax {
                pos: start,
                message: format!("invalid number '{text}'"),
            })?;
            out.push(Token {
                tok: Tok::Number(value),
                pos: start,
            });
        } else if c == b'\'' || c == b'"' {
            let quote = c;
            i += 1;
            let mut text = String::new();
            loop {
                if i >= bytes.len() {
                    return Err(QueryError::Syntax {
                        pos: start,
                        message: "unterminated quoted text".into(),
                    });
                }
                if bytes[i] == quote {
                    if bytes.get(i + 1) == Some(&quote) {
                        text.push(quote as char);
                        i += 2;
                        continue;
                    }
                    i += 1;
                    break;
                }
                let ch = sql[i..].chars().next().unwrap_or('\u{fffd}');
                text.push(ch);
                i += ch.len_utf8();
            }
            let tok = if quote == b'\'' {
                Tok::Str(text)
            } else {
                Tok::QuotedIdent(text)
            };
            out.push(Token { tok, pos: start });
        } else {
            let two = sql.get(i..i + 2).unwrap_or("");
            let sym: &'static str = match two {
                "<=" => "<=",
                ">=" => ">=",
                "<>" => "<>",
                "!=" => "!=",
                _ => match c {
                    b'(' => "(",
                    b')' => ")",
                    b',' => ",",
                    b'*' => "*",
                    b'+' => "+",
                    b'-' => "-",
                    b'/' => "/",
                    b'=' => "=",
                    b'<' => "<",
                    b'>' => ">",
                    b';' => ";",
                    b'.' => ".",
                    _ => {
                        let ch = sql[i..].chars().next().unwrap_or('?');
                        return Err(QueryError::Syntax {
                            pos: start,
                            message: format!("unexpected character '{ch}'"),
                        });
                    }
                },
            };
            i += sym.len();
            out.push(Token {
                tok: Tok::Sym(sym),
                pos: start,
            });
        }
    }
    out.push(Token {
        tok: Tok::Eof,
        pos: sql.len(),
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    at: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.at]
    }

    fn peek_at(&self, offset: usize) -> &Tok {
        &self.toks[(self.at + offset).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.at].clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn pos(&self) -> usize {
        self.peek().pos
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(w) if w.eq_ignore_ascii_case(kw))
    }

    fn eat_kw(&mut self, kw: &str) -> bool {
        if self.is_kw(kw) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), QueryError> {
        if self.eat_kw(kw) {
            Ok(())
        } else {
            Err(self.syntax(format!("expected {kw}")))
        }
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(&self.peek().tok, Tok::Sym(x) if *x == s)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.is_sym(s) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), QueryError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.syntax(format!("expected '{s}'")))
        }
    }

    fn syntax(&self, message: String) -> QueryError {
        let found = match &self.peek().tok {
            Tok::Ident(w) | Tok::QuotedIdent(w) => format!("'{w}'"),
            Tok::Number(x) => format!("number {x}"),
            Tok::Str(s) => format!("string '{s}'"),
            Tok::Sym(s) => format!("'{s}'"),
            Tok::Eof => "end of input".to_string(),
        };
        QueryError::Syntax {
            pos: self.pos(),
            message: format!("{message}, found {found}"),
        }
    }

    fn unsupported(&self, feature: &str) -> QueryError {
        QueryError::Unsupported {
            feature: feature.to_string(),
            pos: self.pos(),
        }
    }

    fn check_unsupported_keyword(&self) -> Result<(), QueryError> {
        if let Tok::Ident(w) = &self.peek().tok {
            let upper = w.to_ascii_uppercase();
            let feature = match upper.as_str() {
                "JOIN" | "INNER" | "LEFT" | "RIGHT" | "FULL" | "OUTER" | "CROSS" => "JOIN",
                "HAVING" => "HAVING",
                "ORDER" => "ORDER BY",
                "LIMIT" | "OFFSET" => "LIMIT",
                "UNION" => "UNION",
                "NOT" => "NOT",
                "IN" => "IN",
                "LIKE" => "LIKE",
                "BETWEEN" => "BETWEEN",
                "IS" => "IS NULL",
                _ => return Ok(()),
            };
            return Err(self.unsupported(feature));
        }
        Ok(())
    }

    fn ident(&mut self, what: &str) -> Result<String, QueryError> {
        match &self.peek().tok {
            Tok::Ident(w) if !is_keyword(w) => {
                let w = w.clone();
                self.bump();
                Ok(w)
            }
            Tok::QuotedIdent(w) => {
                let w = w.clone();
                self.bump();
                Ok(w)
            }
            _ => {
                self.check_unsupported_keyword()?;
                Err(self.syntax(format!("expected {what}")))
            }
        }
    }

    fn query(&mut self) -> Result<QuerySpec, QueryError> {
        self.expect_kw("SELECT")?;
        if self.is_kw("DISTINCT") {
            return Err(self.unsupported("DISTINCT"));
        }
        let mut plain_cols: Vec<(String, usize)> = Vec::new();
        let mut agg: Option<(Aggregate, Option<Expr>)> = None;
        loop {
            let item_pos = self.pos();
            if let Some(found) = self.aggregate_item()? {
                if agg.is_some() {
                    return Err(QueryError::Syntax {
                        pos: item_pos,
                        message: "only one aggregate per query is supported".into(),
                    });
                }
                agg = Some(found);
            } else {
                plain_cols.push((self.ident("column or aggregate")?, item_pos));
            }
            if self.is_kw("AS") {
                return Err(self.unsupported("AS alias"));
            }
            if !self.eat_sym(",") {
                break;
            }
        }
        let (aggregate, target) = agg.ok_or_else(|| QueryError::Syntax {
            pos: self.pos(),
            message: "query must contain one of COUNT, AVG or SUM".into(),
        })?;
        self.expect_kw("FROM")?;
        if self.is_sym("(") {
            return Err(self.unsupported("subquery"));
        }
        let table = self.ident("table name")?;
        if self.is_sym(",") {
            return Err(self.unsupported("JOIN"));
        }
        self.check_unsupported_keyword()?;
        let filter = if self.eat_kw("WHERE") {
            Some(self.or_expr()?)
        } else {
            None
        };
        let mut group_by = Vec::new();
        if self.eat_kw("GROUP") {
            self.expect_kw("BY")?;
            loop {
                group_by.push(self.ident("group-by column")?);
                if !self.eat_sym(",") {
                    break;
                }
            }
        }
        self.check_unsupported_keyword()?;
        self.eat_sym(";");
        if self.peek().tok != Tok::Eof {
            return Err(self.syntax("expected end of query".into()));
        }
        for (col, pos) in &plain_cols {
            if !group_by.iter().any(|g| g == col) {
                return Err(QueryError::Syntax {
                    pos: *pos,
                    message: format!("column '{col}' must appear in GROUP BY"),
                });
            }
        }
        Ok(QuerySpec {
            aggregate,
            target,
            table,
            filter,
            group_by,
        })
    }

    fn aggregate_item(&mut self) -> Result<Option<(Aggregate, Option<Expr>)>, QueryError> {
        let Tok::Ident(word) = &self.peek().tok else {
            return Ok(None);
        };
        if self.peek_at(1) != &Tok::Sym("(") {
            return Ok(None);
        }
        let upper = word.to_ascii_uppercase();
        let aggregate = match upper.as_str() {
            "COUNT" => Aggregate::Count,
            "AVG" => Aggregate::Avg,
            "SUM" => Aggregate::Sum,
            "MIN" | "MAX" | "MEDIAN" | "STDDEV" | "VARIANCE" | "VAR" | "STDEV" => {
                return Err(QueryError::UnsupportedAggregate {
                    name: upper,
                    pos: self.pos(),
                })
            }
            _ => return Ok(None),
        };
        self.bump();
        self.expect_sym("(")?;
        if self.is_kw("DISTINCT") {
            return Err(self.unsupported("DISTINCT"));
        }
        let target = if self.eat_sym("*") {
            if aggregate != Aggregate::Count {
                return Err(self.syntax(format!("{aggregate}(*) is not valid")));
            }
            None
        } else {
            let e = self.expr()?;
            // COUNT(expr) counts rows, as there are no NULLs
            if aggregate == Aggregate::Count {
                None
            } else {
                Some(e)
            }
        };
        self.expect_sym(")")?;
        Ok(Some((aggregate, target)))
    }

    fn expr(&mut self) -> Result<Expr, QueryError> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat_sym("+") {
                ArithOp::Add
            } else if self.eat_sym("-") {
                ArithOp::Sub
            } else {
                return Ok(lhs);
            };
            let rhs = self.term()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, QueryError> {
        let mut lhs = self.factor()?;
        loop {
            let op = if self.eat_sym("*") {
                ArithOp::Mul
            } else if self.eat_sym("/") {
                ArithOp::Div
            } else {
                return Ok(lhs);
            };
            let rhs = self.factor()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn factor(&mut self) -> Result<Expr, QueryError> {
        if self.eat_sym("-") {
            if let Tok::Number(x) = self.peek().tok {
                self.bump();
                return Ok(Expr::Number(-x));
            }
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        if self.eat_sym("(") {
            if self.is_kw("SELECT") {
                return Err(self.unsupported("subquery"));
            }
            let e = self.expr()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        match self.peek().tok.clone() {
            Tok::Number(x) => {
                self.bump();
                Ok(Expr::Number(x))
            }
            Tok::Ident(name) if !is_keyword(&name) && self.peek_at(1) == &Tok::Sym("(") => {
                self.bump();
                self.bump();
                let mut args = Vec::new();
                if !self.eat_sym(")") {
                    loop {
                        args.push(self.expr()?);
                        if !self.eat_sym(",") {
                            break;
                        }
                    }
                    self.expect_sym(")")?;
                }
                Ok(Expr::Call {
                    name: name.to_ascii_lowercase(),
                    args,
                })
            }
            _ => Ok(Expr::Column(self.ident("expression")?)),
        }
    }

    fn or_expr(&mut self) -> Result<BoolExpr, QueryError> {
        let mut lhs = self.and_expr()?;
        while self.eat_kw("OR") {
            let rhs = self.and_expr()?;
            lhs = BoolExpr::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<BoolExpr, QueryError> {
        let mut lhs = self.bool_primary()?;
        while self.eat_kw("AND") {
            let rhs = self.bool_primary()?;
            lhs = BoolExpr::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn bool_primary(&mut self) -> Result<BoolExpr, QueryError> {
        if self.eat_sym("(") {
            if self.is_kw("SELECT") {
                return Err(self.unsupported("subquery"));
            }
            let e = self.or_expr()?;
            self.expect_sym(")")?;
            return Ok(e);
        }
        self.check_unsupported_keyword()?;
        let column = self.ident("column in predicate")?;
        self.check_unsupported_keyword()?;
        let op = match &self.peek().tok {
            Tok::Sym("=") => CmpOp::Eq,
            Tok::Sym("<>") | Tok::Sym("!=") => CmpOp::Ne,
            Tok::Sym("<") => CmpOp::Lt,
            Tok::Sym("<=") => CmpOp::Le,
            Tok::Sym(">") => CmpOp::Gt,
            Tok::Sym(">=") => CmpOp::Ge,
            _ => return Err(self.syntax("expected comparison operator".into())),
        };
        self.bump();
        let value = self.literal()?;
        Ok(BoolExpr::Pred(Predicate { column, op, value }))
    }

    fn literal(&mut self) -> Result<Literal, QueryError> {
        let negative = self.eat_sym("-");
        match self.peek().tok.clone() {
            Tok::Number(x) => {
                self.bump();
                Ok(Literal::Number(if negative { -x } else { x }))
            }
            Tok::Str(s) if !negative => {
                self.bump();
                Ok(Literal::Str(s))
            }
            Tok::Sym("(") if !negative => Err(self.unsupported("subquery")),
            Tok::Ident(w) if w.eq_ignore_ascii_case("SELECT") => Err(self.unsupported("subquery")),
            _ => Err(self.syntax("expected a constant".into())),
        }
    }
}

/// Parses a query in the supported `SELECT G, AGGR(A) FROM T WHERE E GROUP BY G` shape.
pub fn parse(sql: &str) -> Result<QuerySpec, QueryError> {
    let toks = tokenize(sql)?;
    Parser { toks, at: 0 }.query()
}

/// Parses a standalone scalar expression (used for UDF bodies).
pub fn parse_expr(text: &str) -> Result<Expr, QueryError> {
    let toks = tokenize(text)?;
    let mut p = Parser { toks, at: 0 };
    let e = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.syntax("expected end of expression".into()));
    }
    Ok(e)
}
