//! Spatial relations: parsing instructions into relation specs, checking
//! them against scenes, solving them constructively, and the benchmark.

pub mod benchmark;
mod grammar;
mod predicates;
mod solver;

pub use benchmark::{
    fixture_names, fixture_scene, judge_log, run_benchmark, BenchConfig, BenchError, CellResult, EvalReport, Method, MethodSummary,
    RelationCheck, ReportFormat, Scenario, StepResult, SCENARIOS,
};
pub use grammar::{parse_relation, split_steps, GrammarError, RelationKind, RelationSpec};
pub use predicates::{check, CheckError, FrontAxis, PredicateConfig};
pub use solver::{solve_relation, solve_relations, SolveError, DEFAULT_MARGIN_PX};
