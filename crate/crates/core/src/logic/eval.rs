//! Expression evaluation over JSON product values, plus the abstract type
//! check used at validation time.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde_json::{Number, Value};

use super::ast::{Aggregate, BinaryOp, Expr, Literal, UnaryOp};

/// Read access to products and already-evaluated facts.
pub trait Bindings {
    fn product(&self, name: &str) -> Option<&Value>;
    fn fact(&self, name: &str) -> Option<bool>;
}

/// Bindings backed by plain maps.
#[derive(Debug, Default, Clone)]
pub struct MapBindings {
    pub products: BTreeMap<String, Value>,
    pub facts: BTreeMap<String, bool>,
}

impl Bindings for MapBindings {
    fn product(&self, name: &str) -> Option<&Value> {
        self.products.get(name)
    }

    fn fact(&self, name: &str) -> Option<bool> {
        self.facts.get(name).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalError {
    MissingProduct(String),
    UnknownFact(String),
    Type(String),
    DivisionByZero,
    NonFinite,
}

impl std::fmt::Display for EvalError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EvalError::MissingProduct(p) => write!(f, "missing product `{p}`"),
            EvalError::UnknownFact(p) => write!(f, "fact `{p}` has no value"),
            EvalError::Type(m) => write!(f, "type error: {m}"),
            EvalError::DivisionByZero => f.write_str("division by zero"),
            EvalError::NonFinite => f.write_str("arithmetic produced a non-finite number"),
        }
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "list",
        Value::Object(_) => "record",
    }
}

fn type_err(msg: String) -> EvalError {
    EvalError::Type(msg)
}

fn num_value(n: f64) -> Result<Value, EvalError> {
    Number::from_f64(n).map(Value::Number).ok_or(EvalError::NonFinite)
}

fn as_num(v: &Value, ctx: &str) -> Result<f64, EvalError> {
    v.as_f64().ok_or_else(|| type_err(format!("{ctx} expects a number, got {}", kind(v))))
}

fn as_bool(v: &Value, ctx: &str) -> Result<bool, EvalError> {
    v.as_bool().ok_or_else(|| type_err(format!("{ctx} expects a boolean, got {}", kind(v))))
}

fn field_of<'a>(v: &'a Value, field: &str) -> Result<&'a Value, EvalError> {
    match v {
        Value::Object(m) => m.get(field).ok_or_else(|| type_err(format!("record has no field `{field}`"))),
        other => Err(type_err(format!("field `{field}` requested on {}", kind(other)))),
    }
}

/// Record field access; on a list, projects the field over every element.
fn project<'a>(v: Cow<'a, Value>, field: &str) -> Result<Cow<'a, Value>, EvalError> {
    match v {
        Cow::Borrowed(Value::Array(items)) => {
            Ok(Cow::Owned(Value::Array(items.iter().map(|i| field_of(i, field).cloned()).collect::<Result<_, _>>()?)))
        }
        Cow::Borrowed(other) => field_of(other, field).map(Cow::Borrowed),
        Cow::Owned(Value::Array(items)) => {
            Ok(Cow::Owned(Value::Array(items.iter().map(|i| field_of(i, field).cloned()).collect::<Result<_, _>>()?)))
        }
        Cow::Owned(other) => field_of(&other, field).cloned().map(Cow::Owned),
    }
}

/// Equality used by `==`, `!=` and `in`: numbers compare by value, everything
/// else structurally.
fn values_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(a, b)| values_equal(a, b)),
        _ => a == b,
    }
}

fn order(a: &Value, b: &Value, op: BinaryOp) -> Result<Ordering, EvalError> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap_or(f64::NAN), y.as_f64().unwrap_or(f64::NAN));
            x.partial_cmp(&y).ok_or(EvalError::NonFinite)
        }
        (Value::String(x), Value::String(y)) => Ok(x.cmp(y)),
        _ => Err(type_err(format!("`{}` cannot order {} and {}", op.symbol(), kind(a), kind(b)))),
    }
}

fn elements(v: &Value, func: Aggregate) -> Result<&Vec<Value>, EvalError> {
    v.as_array().ok_or_else(|| type_err(format!("{}() expects a list, got {}", func.name(), kind(v))))
}

fn truthy(v: &Value) -> bool {
    !matches!(v, Value::Null | Value::Bool(false))
}

fn aggregate(func: Aggregate, list: &Value, field: Option<&str>) -> Result<Value, EvalError> {
    let items = elements(list, func)?;
    let pick = |item: &'_ Value| -> Result<Value, EvalError> {
        match field {
            Some(f) => field_of(item, f).cloned(),
            None => Ok(item.clone()),
        }
    };
    match func {
        Aggregate::Count => {
            let n = match field {
                None => items.len(),
                Some(f) => items
                    .iter()
                    .map(|i| field_of(i, f).map(truthy))
                    .collect::<Result<Vec<_>, _>>()?
                    .into_iter()
                    .filter(|b| *b)
                    .count(),
            };
            Ok(Value::from(n as u64))
        }
        Aggregate::Sum => {
            let mut total = 0.0;
            for i in items {
                total += as_num(&pick(i)?, "sum()")?;
            }
            num_value(total)
        }
        Aggregate::Min | Aggregate::Max => {
            let mut best: Option<f64> = None;
            for i in items {
                let x = as_num(&pick(i)?, func.name())?;
                best = Some(match best {
                    None => x,
                    Some(b) if func == Aggregate::Min => b.min(x),
                    Some(b) => b.max(x),
                });
            }
            best.ok_or_else(|| type_err(format!("{}() of an empty list", func.name()))).and_then(num_value)
        }
    }
}

/// Evaluate `expr` against `env`. Pure: equal inputs give equal outputs.
pub fn evaluate<'a>(expr: &Expr, env: &'a dyn Bindings) -> Result<Cow<'a, Value>, EvalError> {
    match expr {
        Expr::Literal(Literal::Number(n)) => num_value(*n).map(Cow::Owned),
        Expr::Literal(Literal::Str(s)) => Ok(Cow::Owned(Value::String(s.clone()))),
        Expr::Literal(Literal::Bool(b)) => Ok(Cow::Owned(Value::Bool(*b))),
        Expr::Product { name, path } => {
            let mut v = Cow::Borrowed(env.product(name).ok_or_else(|| EvalError::MissingProduct(name.clone()))?);
            for f in path {
                v = project(v, f)?;
            }
            Ok(v)
        }
        Expr::Fact { name, path } => {
            let b = env.fact(name).ok_or_else(|| EvalError::UnknownFact(name.clone()))?;
            if let Some(f) = path.first() {
                return Err(type_err(format!("field `{f}` requested on fact `{name}`")));
            }
            Ok(Cow::Owned(Value::Bool(b)))
        }
        Expr::Call { func, arg, field } => {
            let v = evaluate(arg, env)?;
            aggregate(*func, &v, field.as_deref()).map(Cow::Owned)
        }
        Expr::Unary { op: UnaryOp::Not, operand } => {
            let b = as_bool(&*evaluate(operand, env)?, "`not`")?;
            Ok(Cow::Owned(Value::Bool(!b)))
        }
        Expr::Unary { op: UnaryOp::Neg, operand } => {
            let n = as_num(&*evaluate(operand, env)?, "unary `-`")?;
            num_value(-n).map(Cow::Owned)
        }
        Expr::Binary { op: BinaryOp::And, lhs, rhs } => {
            if !as_bool(&*evaluate(lhs, env)?, "`and`")? {
                return Ok(Cow::Owned(Value::Bool(false)));
            }
            Ok(Cow::Owned(Value::Bool(as_bool(&*evaluate(rhs, env)?, "`and`")?)))
        }
        Expr::Binary { op: BinaryOp::Or, lhs, rhs } => {
            if as_bool(&*evaluate(lhs, env)?, "`or`")? {
                return Ok(Cow::Owned(Value::Bool(true)));
            }
            Ok(Cow::Owned(Value::Bool(as_bool(&*evaluate(rhs, env)?, "`or`")?)))
        }
        Expr::Binary { op, lhs, rhs } => {
            let a = evaluate(lhs, env)?;
            let b = evaluate(rhs, env)?;
            let out = match op {
                BinaryOp::Eq => Value::Bool(values_equal(&a, &b)),
                BinaryOp::Ne => Value::Bool(!values_equal(&a, &b)),
                BinaryOp::Lt => Value::Bool(order(&a, &b, *op)? == Ordering::Less),
                BinaryOp::Le => Value::Bool(order(&a, &b, *op)? != Ordering::Greater),
                BinaryOp::Gt => Value::Bool(order(&a, &b, *op)? == Ordering::Greater),
                BinaryOp::Ge => Value::Bool(order(&a, &b, *op)? != Ordering::Less),
                BinaryOp::In => match (&*a, &*b) {
                    (needle, Value::Array(items)) => Value::Bool(items.iter().any(|i| values_equal(needle, i))),
                    (Value::String(n), Value::String(h)) => Value::Bool(h.contains(n.as_str())),
                    (Value::String(n), Value::Object(m)) => Value::Bool(m.contains_key(n)),
                    (x, y) => return Err(type_err(format!("`in` cannot test {} in {}", kind(x), kind(y)))),
                },
                BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => {
                    let ctx = format!("`{}`", op.symbol());
                    let (x, y) = (as_num(&a, &ctx)?, as_num(&b, &ctx)?);
                    let r = match op {
                        BinaryOp::Add => x + y,
                        BinaryOp::Sub => x - y,
                        BinaryOp::Mul => x * y,
                        _ => {
                            if y == 0.0 {
                                return Err(EvalError::DivisionByZero);
                            }
                            x / y
                        }
                    };
                    num_value(r)?
                }
                BinaryOp::And | BinaryOp::Or => unreachable!("handled above"),
            };
            Ok(Cow::Owned(out))
        }
    }
}

/// Evaluate and require a boolean result.
pub fn evaluate_bool(expr: &Expr, env: &dyn Bindings) -> Result<bool, EvalError> {
    as_bool(&*evaluate(expr, env)?, "a fact or rule")
}

/// Abstract value types for static checking. `Any` covers product data whose
/// shape is only known at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ty {
    Bool,
    Num,
    Str,
    Any,
}

fn expect_ty(found: Ty, want: Ty, ctx: &str) -> Result<(), String> {
    if found == want || found == Ty::Any {
        Ok(())
    } else {
        Err(format!("{ctx} expects {want:?}, found {found:?}"))
    }
}

/// Infer the abstract type of an expression, rejecting operator misuse that
/// is visible without product data.
pub fn type_of(expr: &Expr) -> Result<Ty, String> {
    Ok(match expr {
        Expr::Literal(Literal::Number(_)) => Ty::Num,
        Expr::Literal(Literal::Str(_)) => Ty::Str,
        Expr::Literal(Literal::Bool(_)) => Ty::Bool,
        Expr::Product { .. } => Ty::Any,
        Expr::Fact { name, path } => {
            if !path.is_empty() {
                return Err(format!("fact(\"{name}\") is a boolean and has no fields"));
            }
            Ty::Bool
        }
        Expr::Call { func, arg, .. } => {
            let t = type_of(arg)?;
            if t != Ty::Any {
                return Err(format!("{}() expects a list, found {t:?}", func.name()));
            }
            Ty::Num
        }
        Expr::Unary { op: UnaryOp::Not, operand } => {
            expect_ty(type_of(operand)?, Ty::Bool, "`not`")?;
            Ty::Bool
        }
        Expr::Unary { op: UnaryOp::Neg, operand } => {
            expect_ty(type_of(operand)?, Ty::Num, "unary `-`")?;
            Ty::Num
        }
        Expr::Binary { op, lhs, rhs } => {
            let (a, b) = (type_of(lhs)?, type_of(rhs)?);
            let ctx = format!("`{}`", op.symbol());
            match op {
                BinaryOp::And | BinaryOp::Or => {
                    expect_ty(a, Ty::Bool, &ctx)?;
                    expect_ty(b, Ty::Bool, &ctx)?;
                    Ty::Bool
                }
                BinaryOp::Add | BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => {
                    expect_ty(a, Ty::Num, &ctx)?;
                    expect_ty(b, Ty::Num, &ctx)?;
                    Ty::Num
                }
                BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
                    if a == Ty::Bool || b == Ty::Bool {
                        return Err(format!("{ctx} cannot order booleans"));
                    }
                    if a != Ty::Any && b != Ty::Any && a != b {
                        return Err(format!("{ctx} compares {a:?} with {b:?}"));
                    }
                    Ty::Bool
                }
                BinaryOp::Eq | BinaryOp::Ne => {
                    if a != Ty::Any && b != Ty::Any && a != b {
                        return Err(format!("{ctx} compares {a:?} with {b:?}"));
                    }
                    Ty::Bool
                }
                BinaryOp::In => {
                    if b != Ty::Any && b != Ty::Str {
                        return Err(format!("`in` needs a list or string on the right, found {b:?}"));
                    }
                    Ty::Bool
                }
            }
        }
    })
}
