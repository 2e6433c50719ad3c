//! Facts, rules and the forward-chaining logic engine.

mod ast;
mod eval;
mod parser;
mod plan;

pub use ast::{Aggregate, BinaryOp, Expr, Literal, UnaryOp};
pub use eval::{evaluate, evaluate_bool, type_of, Bindings, EvalError, MapBindings, Ty};
pub use parser::{parse_expression, ParseError};
pub use plan::{
    infer, infer_from_map, validate, DependencyPlan, Fact, InferenceError, InferenceResult, Rule, ValidationError,
};

use crate::dataspace::{DataBlockView, DataProduct, SpaceError};

/// Product name under which each cycle's inference result is stored.
pub const INFERENCE_RESULT: &str = "inference_result";
/// Module name recorded as the producer of logic-engine outputs.
pub const LOGIC_ENGINE: &str = "logic_engine";

/// Product name of a fact's per-cycle value.
pub fn fact_product_name(fact: &str) -> String {
    format!("fact:{fact}")
}

#[derive(Debug, thiserror::Error)]
pub enum RunInferenceError {
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Run inference on a cycle's view and record the result, plus one product
/// per fact value, into that view.
pub fn run_inference(plan: &DependencyPlan, view: &DataBlockView) -> Result<InferenceResult, RunInferenceError> {
    let products = view.products();
    let lookup = |n: &str| products.get(n).map(|p| &p.value);
    let result = infer(plan, &lookup)?;
    let now = view.started_at();
    for (name, v) in &result.fact_values {
        view.record_cycle_product(DataProduct::new(fact_product_name(name), (*v).into(), LOGIC_ENGINE, now))?;
    }
    view.record_cycle_product(DataProduct::new(INFERENCE_RESULT, result.to_value(), LOGIC_ENGINE, now))?;
    Ok(result)
}
