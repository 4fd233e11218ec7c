//! Problem definitions, collocation residuals and the physics-informed loss.

mod collocation;
mod expr;
mod problem;

pub use collocation::{
    dae_loss, fdde_loss, Collocation, Evaluation, ExactTrial, FnTrial, LossConfig, PinnObjective,
    Reduction, Trial, ZeroTrial,
};
pub use expr::{
    parse_equation, parse_expr, BinOp, Expr, ExprError, Func, Scope, Slot, Tape, Taylor2,
};
pub use problem::{
    Equation, HistoryPolicy, LayerTemplate, NetworkTemplate, Problem, ProblemKind, State,
    PROBLEM_FORMAT, PROBLEM_VERSION,
};

use crate::error::{Error, Result};

const BUILTIN: [&str; 8] = [
    include_str!("../../problems/ex1.toml"),
    include_str!("../../problems/ex2.toml"),
    include_str!("../../problems/ex3.toml"),
    include_str!("../../problems/ex4.toml"),
    include_str!("../../problems/ex5.toml"),
    include_str!("../../problems/ex6.toml"),
    include_str!("../../problems/ex7.toml"),
    include_str!("../../problems/ex8.toml"),
];

/// A commented problem file describing the decaying pantograph equation.
pub const PROBLEM_TEMPLATE: &str = include_str!("../../problems/template.toml");

/// Definition document of benchmark problem `id` (1..=8).
pub fn builtin_source(id: u32) -> Result<&'static str> {
    match id {
        1..=8 => Ok(BUILTIN[id as usize - 1]),
        _ => Err(Error::UnknownExample(id)),
    }
}

/// Benchmark problem `id` (1..=8).
pub fn builtin_problem(id: u32) -> Result<Problem> {
    Problem::from_toml(builtin_source(id)?)
}
