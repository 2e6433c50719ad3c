use std::collections::BTreeSet;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Number(f64),
    Str(String),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Count,
    Sum,
    Min,
    Max,
}

impl Aggregate {
    pub fn from_name(s: &str) -> Option<Self> {
        Some(match s {
            "count" => Aggregate::Count,
            "sum" => Aggregate::Sum,
            "min" => Aggregate::Min,
            "max" => Aggregate::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Aggregate::Count => "count",
            Aggregate::Sum => "sum",
            Aggregate::Min => "min",
            Aggregate::Max => "max",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Or,
    And,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    In,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "or",
            BinaryOp::And => "and",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::In => "in",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge | BinaryOp::Eq | BinaryOp::Ne)
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(self, BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div)
    }
}

/// Parsed expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Literal),
    Product { name: String, path: Vec<String> },
    Fact { name: String, path: Vec<String> },
    Call { func: Aggregate, arg: Box<Expr>, field: Option<String> },
    Unary { op: UnaryOp, operand: Box<Expr> },
    Binary { op: BinaryOp, lhs: Box<Expr>, rhs: Box<Expr> },
}

impl Expr {
    pub fn num(n: f64) -> Self {
        Expr::Literal(Literal::Number(n))
    }

    pub fn boolean(b: bool) -> Self {
        Expr::Literal(Literal::Bool(b))
    }

    pub fn product(name: &str) -> Self {
        Expr::Product { name: name.to_string(), path: Vec::new() }
    }

    pub fn fact(name: &str) -> Self {
        Expr::Fact { name: name.to_string(), path: Vec::new() }
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    pub fn negate(e: Expr) -> Self {
        Expr::Unary { op: UnaryOp::Not, operand: Box::new(e) }
    }

    fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Literal(_) | Expr::Product { .. } | Expr::Fact { .. } => {}
            Expr::Call { arg, .. } => arg.walk(f),
            Expr::Unary { operand, .. } => operand.walk(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
        }
    }

    /// Names of every product referenced anywhere in the tree.
    pub fn product_refs(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Product { name, .. } = e {
                out.insert(name.clone());
            }
        });
        out
    }

    /// Names of every fact referenced anywhere in the tree.
    pub fn fact_refs(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.walk(&mut |e| {
            if let Expr::Fact { name, .. } = e {
                out.insert(name.clone());
            }
        });
        out
    }
}

fn write_str_lit(f: &mut fmt::Formatter<'_>, s: &str) -> fmt::Result {
    f.write_str("\"")?;
    for c in s.chars() {
        match c {
            '"' => f.write_str("\\\"")?,
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c => write!(f, "{c}")?,
        }
    }
    f.write_str("\"")
}

/// Fully parenthesized concrete syntax; re-parses to the same tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(Literal::Number(n)) => write!(f, "{n}"),
            Expr::Literal(Literal::Str(s)) => write_str_lit(f, s),
            Expr::Literal(Literal::Bool(b)) => write!(f, "{b}"),
            Expr::Product { name, path } | Expr::Fact { name, path } => {
                let kw = if matches!(self, Expr::Product { .. }) { "product" } else { "fact" };
                write!(f, "{kw}(")?;
                write_str_lit(f, name)?;
                f.write_str(")")?;
                for p in path {
                    write!(f, ".{p}")?;
                }
                Ok(())
            }
            Expr::Call { func, arg, field } => {
                write!(f, "{}({arg}", func.name())?;
                if let Some(field) = field {
                    write!(f, ", {field}")?;
                }
                f.write_str(")")
            }
            Expr::Unary { op: UnaryOp::Neg, operand } => write!(f, "(-{operand})"),
            Expr::Unary { op: UnaryOp::Not, operand } => write!(f, "(not {operand})"),
            Expr::Binary { op, lhs, rhs } => write!(f, "({lhs} {} {rhs})", op.symbol()),
        }
    }
}
