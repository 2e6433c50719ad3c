//! Recursive-descent parser for fact and rule expressions.
//!
//! ```text
//! expr    := or ; or := and ("or" and)* ; and := not ("and" not)* ;
//! not     := "not" not | cmp ;
//! cmp     := add (("<"|"<="|">"|">="|"=="|"!="|"in") add)? ;
//! add     := mul (("+"|"-") mul)* ; mul := unary (("*"|"/") unary)* ;
//! unary   := "-" unary | atom ;
//! atom    := NUMBER | STRING | "true" | "false" | ref | call | "(" expr ")" ;
//! ref     := ("product"|"fact") "(" STRING ")" ("." IDENT)* ;
//! call    := ("count"|"sum"|"min"|"max") "(" expr ("," IDENT)? ")" ;
//! ```

use thiserror::Error;

use super::ast::{Aggregate, BinaryOp, Expr, Literal, UnaryOp};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{column}: {message}")]
    Syntax { line: usize, column: usize, message: String },
    #[error("unknown function `{name}` at {line}:{column}")]
    UnknownFunction { line: usize, column: usize, name: String },
}

impl ParseError {
    pub fn position(&self) -> (usize, usize) {
        match self {
            ParseError::Syntax { line, column, .. } | ParseError::UnknownFunction { line, column, .. } => {
                (*line, *column)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Ident(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Num(n) => format!("number {n}"),
            Tok::Str(s) => format!("string {s:?}"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::LParen => "`(`".into(),
            Tok::RParen => "`)`".into(),
            Tok::Comma => "`,`".into(),
            Tok::Dot => "`.`".into(),
            Tok::Lt => "`<`".into(),
            Tok::Le => "`<=`".into(),
            Tok::Gt => "`>`".into(),
            Tok::Ge => "`>=`".into(),
            Tok::EqEq => "`==`".into(),
            Tok::Ne => "`!=`".into(),
            Tok::Plus => "`+`".into(),
            Tok::Minus => "`-`".into(),
            Tok::Star => "`*`".into(),
            Tok::Slash => "`/`".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> ParseError {
    ParseError::Syntax { line, column, message: message.into() }
}

fn lex(src: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let (start_line, start_col) = (line, col);
        let mut push = |tok: Tok, len: usize, i: &mut usize, col: &mut usize| {
            out.push(Token { tok, line: start_line, column: start_col });
            *i += len;
            *col += len;
        };
        let next = chars.get(i + 1).copied();
        match c {
            '(' => push(Tok::LParen, 1, &mut i, &mut col),
            ')' => push(Tok::RParen, 1, &mut i, &mut col),
            ',' => push(Tok::Comma, 1, &mut i, &mut col),
            '.' if !next.is_some_and(|n| n.is_ascii_digit()) => push(Tok::Dot, 1, &mut i, &mut col),
            '+' => push(Tok::Plus, 1, &mut i, &mut col),
            '-' => push(Tok::Minus, 1, &mut i, &mut col),
            '*' => push(Tok::Star, 1, &mut i, &mut col),
            '/' => push(Tok::Slash, 1, &mut i, &mut col),
            '<' if next == Some('=') => push(Tok::Le, 2, &mut i, &mut col),
            '<' => push(Tok::Lt, 1, &mut i, &mut col),
            '>' if next == Some('=') => push(Tok::Ge, 2, &mut i, &mut col),
            '>' => push(Tok::Gt, 1, &mut i, &mut col),
            '=' if next == Some('=') => push(Tok::EqEq, 2, &mut i, &mut col),
            '!' if next == Some('=') => push(Tok::Ne, 2, &mut i, &mut col),
            '"' => {
                let mut s = String::new();
                let mut j = i + 1;
                let mut width = 1;
                loop {
                    match chars.get(j) {
                        None | Some('\n') => return Err(syntax(start_line, start_col, "unterminated string")),
                        Some('"') => {
                            j += 1;
                            width += 1;
                            break;
                        }
                        Some('\\') => {
                            let esc = match chars.get(j + 1) {
                                Some('"') => '"',
                                Some('\\') => '\\',
                                Some('n') => '\n',
                                Some('t') => '\t',
                                _ => return Err(syntax(line, col + width, "bad escape in string")),
                            };
                            s.push(esc);
                            j += 2;
                            width += 2;
                        }
                        Some(&ch) => {
                            s.push(ch);
                            j += 1;
                            width += 1;
                        }
                    }
                }
                out.push(Token { tok: Tok::Str(s), line: start_line, column: start_col });
                i = j;
                col += width;
            }
            c if c.is_ascii_digit() || c == '.' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                    j += 1;
                }
                if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                    let mut k = j + 1;
                    if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                        k += 1;
                    }
                    if k < chars.len() && chars[k].is_ascii_digit() {
                        while k < chars.len() && chars[k].is_ascii_digit() {
                            k += 1;
                        }
                        j = k;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let n: f64 = text.parse().map_err(|_| syntax(start_line, start_col, format!("bad number {text:?}")))?;
                let len = j - i;
                push(Tok::Num(n), len, &mut i, &mut col);
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let len = j - i;
                push(Tok::Ident(text), len, &mut i, &mut col);
            }
            other => return Err(syntax(start_line, start_col, format!("unexpected character {other:?}"))),
        }
    }
    out.push(Token { tok: Tok::Eof, line, column: col });
    Ok(out)
}

const KEYWORDS: &[&str] = &["and", "or", "not", "in", "true", "false"];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        &self.toks[(self.pos + ahead).min(self.toks.len() - 1)].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos < self.toks.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let t = self.peek();
        syntax(t.line, t.column, format!("expected {wanted}, found {}", t.tok.describe()))
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> Result<Token, ParseError> {
        if self.peek().tok == tok {
            Ok(self.bump())
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn close_paren(&mut self, open: &Token) -> Result<(), ParseError> {
        if self.peek().tok == Tok::RParen {
            self.bump();
            Ok(())
        } else {
            let t = self.peek();
            Err(syntax(
                t.line,
                t.column,
                format!(
                    "expected `)` to close `(` opened at {}:{}, found {}",
                    open.line,
                    open.column,
                    t.tok.describe()
                ),
            ))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or()
    }

    fn or(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and()?;
        while self.at_keyword("or") {
            self.bump();
            let rhs = self.and()?;
            lhs = Expr::binary(BinaryOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.not()?;
        while self.at_keyword("and") {
            self.bump();
            let rhs = self.not()?;
            lhs = Expr::binary(BinaryOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Expr, ParseError> {
        if self.at_keyword("not") {
            self.bump();
            let operand = self.not()?;
            return Ok(Expr::Unary { op: UnaryOp::Not, operand: Box::new(operand) });
        }
        self.cmp()
    }

    fn cmp(&mut self) -> Result<Expr, ParseError> {
        let lhs = self.add()?;
        let op = match &self.peek().tok {
            Tok::Lt => BinaryOp::Lt,
            Tok::Le => BinaryOp::Le,
            Tok::Gt => BinaryOp::Gt,
            Tok::Ge => BinaryOp::Ge,
            Tok::EqEq => BinaryOp::Eq,
            Tok::Ne => BinaryOp::Ne,
            Tok::Ident(s) if s == "in" => BinaryOp::In,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add()?;
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn add(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul()?;
        loop {
            let op = match self.peek().tok {
                Tok::Plus => BinaryOp::Add,
                Tok::Minus => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.mul()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn mul(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek().tok {
                Tok::Star => BinaryOp::Mul,
                Tok::Slash => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek().tok == Tok::Minus {
            self.bump();
            let operand = self.unary()?;
            return Ok(Expr::Unary { op: UnaryOp::Neg, operand: Box::new(operand) });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let t = self.peek().clone();
        match &t.tok {
            Tok::Num(n) => {
                self.bump();
                Ok(Expr::Literal(Literal::Number(*n)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::Literal(Literal::Str(s.clone())))
            }
            Tok::LParen => {
                let open = self.bump();
                let e = self.expr()?;
                self.close_paren(&open)?;
                Ok(e)
            }
            Tok::Ident(word) => match word.as_str() {
                "true" => {
                    self.bump();
                    Ok(Expr::boolean(true))
                }
                "false" => {
                    self.bump();
                    Ok(Expr::boolean(false))
                }
                "product" | "fact" => self.reference(),
                w => {
                    if let Some(func) = Aggregate::from_name(w) {
                        return self.call(func);
                    }
                    if *self.peek_at(1) == Tok::LParen && !KEYWORDS.contains(&w) {
                        return Err(ParseError::UnknownFunction {
                            line: t.line,
                            column: t.column,
                            name: w.to_string(),
                        });
                    }
                    Err(self.unexpected("an expression"))
                }
            },
            _ => Err(self.unexpected("an expression")),
        }
    }

    fn reference(&mut self) -> Result<Expr, ParseError> {
        let kw = self.bump();
        let open = self.expect(Tok::LParen, "`(`")?;
        let name = match self.peek().tok.clone() {
            Tok::Str(s) => {
                self.bump();
                s
            }
            _ => return Err(self.unexpected("a quoted name")),
        };
        self.close_paren(&open)?;
        let mut path = Vec::new();
        while self.peek().tok == Tok::Dot {
            self.bump();
            match self.peek().tok.clone() {
                Tok::Ident(f) => {
                    self.bump();
                    path.push(f);
                }
                _ => return Err(self.unexpected("a field name")),
            }
        }
        Ok(match kw.tok {
            Tok::Ident(ref s) if s == "product" => Expr::Product { name, path },
            _ => Expr::Fact { name, path },
        })
    }

    fn call(&mut self, func: Aggregate) -> Result<Expr, ParseError> {
        self.bump();
        let open = self.expect(Tok::LParen, "`(`")?;
        let arg = self.expr()?;
        let mut field = None;
        if self.peek().tok == Tok::Comma {
            self.bump();
            match self.peek().tok.clone() {
                Tok::Ident(f) if !KEYWORDS.contains(&f.as_str()) => {
                    self.bump();
                    field = Some(f);
                }
                _ => return Err(self.unexpected("a field name")),
            }
        }
        self.close_paren(&open)?;
        Ok(Expr::Call { func, arg: Box::new(arg), field })
    }
}

/// Parse one expression; trailing input is an error.
pub fn parse_expression(text: &str) -> Result<Expr, ParseError> {
    if text.trim().is_empty() {
        return Err(syntax(1, 1, "empty expression"));
    }
    let mut p = Parser { toks: lex(text)?, pos: 0 };
    let e = p.expr()?;
    if p.peek().tok != Tok::Eof {
        return Err(p.unexpected("end of input"));
    }
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_of(name: &str) -> Expr {
        Expr::Call { func: Aggregate::Count, arg: Box::new(Expr::product(name)), field: None }
    }

    #[test]
    fn count_comparison() {
        let e = parse_expression(r#"count(product("idle_jobs")) > 0"#).unwrap();
        assert_eq!(e, Expr::binary(BinaryOp::Gt, count_of("idle_jobs"), Expr::num(0.0)));
    }

    #[test]
    fn boolean_over_facts() {
        let e = parse_expression(r#"fact("aws_affordable") and not fact("aws_overloaded")"#).unwrap();
        assert_eq!(
            e,
            Expr::binary(BinaryOp::And, Expr::fact("aws_affordable"), Expr::negate(Expr::fact("aws_overloaded")))
        );
        assert_eq!(e.fact_refs().len(), 2);
        assert!(e.product_refs().is_empty());
    }

    #[test]
    fn unclosed_paren_is_reported() {
        let err = parse_expression(r#"sum(product("x").cost"#).unwrap_err();
        match err {
            ParseError::Syntax { line, column, message } => {
                assert_eq!((line, column), (1, 22));
                assert!(message.contains("opened at 1:4"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_function() {
        let err = parse_expression(r#"avg(product("x"), cost) > 1"#).unwrap_err();
        assert_eq!(err, ParseError::UnknownFunction { line: 1, column: 1, name: "avg".into() });
    }

    #[test]
    fn precedence_and_paths() {
        let e = parse_expression(r#"1 + 2 * 3 >= product("budget").cloud_funds_remaining or false"#).unwrap();
        let expected = Expr::binary(
            BinaryOp::Or,
            Expr::binary(
                BinaryOp::Ge,
                Expr::binary(
                    BinaryOp::Add,
                    Expr::num(1.0),
                    Expr::binary(BinaryOp::Mul, Expr::num(2.0), Expr::num(3.0)),
                ),
                Expr::Product { name: "budget".into(), path: vec!["cloud_funds_remaining".into()] },
            ),
            Expr::boolean(false),
        );
        assert_eq!(e, expected);
    }

    #[test]
    fn membership_and_aggregate_field() {
        let e = parse_expression(r#""aws" in product("resources").class_id and sum(product("plan"), slots) <= 10"#)
            .unwrap();
        assert_eq!(e.product_refs().into_iter().collect::<Vec<_>>(), vec!["plan", "resources"]);
    }

    #[test]
    fn positions_span_lines() {
        let err = parse_expression("true and\n  ) ").unwrap_err();
        assert_eq!(err.position(), (2, 3));
    }

    #[test]
    fn trailing_garbage_and_empty() {
        assert!(parse_expression("true true").is_err());
        assert!(parse_expression("   ").is_err());
        assert!(parse_expression("1 < 2 < 3").is_err());
    }

    #[test]
    fn display_reparses() {
        let src = r#"not (count(product("a"), ok) - -2.5 / 4 != min(product("b").c)) or "q\"x" in product("s")"#;
        let e = parse_expression(src).unwrap();
        assert_eq!(parse_expression(&e.to_string()).unwrap(), e);
    }
}
