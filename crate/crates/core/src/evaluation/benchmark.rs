//! Three-scenario benchmark: every method runs the fifteen scripted
//! instructions and each step is judged by the relation predicates at its
//! step boundary.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::grammar::{parse_relation, RelationSpec};
use super::predicates::{check, PredicateConfig};
use crate::baselines::{geometric_placement, random_placement, DEFAULT_GAP_PX};
use crate::experience_store::Store;
use crate::grounding::Embedder;
use crate::hashing::mix_seed;
use crate::llm_client::ChatBackend;
use crate::reasoner::{ExecutionLog, Pipeline, ReferenceMode};
use crate::scene::{load_scene, Scene, SceneError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Geometric,
    OursNoRef,
    OursWithRef,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Random, Method::Geometric, Method::OursNoRef, Method::OursWithRef];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Geometric => "geometric",
            Method::OursNoRef => "ours_no_ref",
            Method::OursWithRef => "ours_with_ref",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Random => "Random",
            Method::Geometric => "Geometric",
            Method::OursNoRef => "Ours w/o reference",
            Method::OursWithRef => "Ours",
        }
    }

    pub fn parse(s: &str) -> Option<Method> {
        Method::ALL.into_iter().find(|m| m.as_str() == s.trim())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scenario {
    pub fixture: &'static str,
    pub title: &'static str,
    pub instructions: [&'static str; 5],
}

pub const SCENARIOS: [Scenario; 3] = [
    Scenario {
        fixture: "scene1",
        title: "Single object",
        instructions: [
            "put the eggplant on the right of the plate",
            "put the eggplant on the left of the plate",
            "put the eggplant in front of the plate",
            "put the eggplant behind the plate",
            "put the eggplant far away from the plate",
        ],
    },
    Scenario {
        fixture: "scene2",
        title: "Multiple objects",
        instructions: [
            "put the potatoes on the plate",
            "put the potatoes beside the plate",
            "put one potato to the left of the plate and the other to the right",
            "put the potatoes far away from the plate",
            "put the potatoes together",
        ],
    },
    Scenario {
        fixture: "scene3",
        title: "Sequential order",
        instructions: [
            "put the eggplant on the plate, then beside the plate",
            "put eggplant beside the plate, then beside the carrot",
            "put the eggplant beside the potato, then put the eggplant on the plate",
            "put the eggplant beside the carrot, then far away from the carrot",
            "put the eggplant on the right of the potato, then on the left of the pineapple",
        ],
    },
];

const FIXTURES: [(&str, &str); 3] = [
    ("scene1", include_str!("../../assets/scenes/scene1.json")),
    ("scene2", include_str!("../../assets/scenes/scene2.json")),
    ("scene3", include_str!("../../assets/scenes/scene3.json")),
];

pub fn fixture_names() -> impl Iterator<Item = &'static str> {
    FIXTURES.iter().map(|(n, _)| *n)
}

/// A bundled scenario scene by name.
pub fn fixture_scene(name: &str) -> Result<Scene, BenchError> {
    let (_, doc) = FIXTURES
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| BenchError::UnknownFixture(name.to_string()))?;
    Ok(load_scene(doc.as_bytes())?)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("no bundled scene named {0:?}")]
    UnknownFixture(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    pub seed: u64,
    pub gap_px: f64,
    pub predicates: PredicateConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { methods: Method::ALL.to_vec(), seed: 0, gap_px: DEFAULT_GAP_PX, predicates: PredicateConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationCheck {
    pub spec: RelationSpec,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub step_index: usize,
    pub satisfied: bool,
    pub relations: Vec<RelationCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub method: Method,
    pub scenario: String,
    pub instruction_index: usize,
    pub instruction: String,
    pub satisfied: bool,
    pub steps: Vec<StepResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    /// Success rate per scenario, in [`SCENARIOS`] order.
    pub scenarios: Vec<f64>,
    pub satisfied: usize,
    pub total: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub backend: String,
    pub seed: u64,
    pub gap_px: f64,
    pub summaries: Vec<MethodSummary>,
    pub cells: Vec<CellResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Table,
    Csv,
    Doc,
}

impl ReportFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "table" => Some(Self::Table),
            "csv" => Some(Self::Csv),
            "doc" => Some(Self::Doc),
            _ => None,
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl EvalReport {
    pub fn summary(&self, method: Method) -> Option<&MethodSummary> {
        self.summaries.iter().find(|s| s.method == method)
    }

    pub fn success_rate(&self, method: Method) -> Option<f64> {
        self.summary(method).map(|s| s.success_rate)
    }

    pub fn render(&self, format: ReportFormat) -> String {
        match format {
            ReportFormat::Table => self.to_table(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Doc => {
                let mut s = serde_json::to_string_pretty(self).expect("report serializes");
                s.push('\n');
                s
            }
        }
    }

    /// Success rates with methods as rows and scenarios plus the mean as
    /// columns, followed by the unsatisfied instructions.
    pub fn to_table(&self) -> String {
        let mut headers = vec!["Method".to_string()];
        headers.extend(SCENARIOS.iter().map(|s| s.title.to_string()));
        headers.push("Mean".to_string());
        let mut rows: Vec<Vec<String>> = Vec::new();
        for s in &self.summaries {
            let mut row = vec![s.method.label().to_string()];
            row.extend(s.scenarios.iter().map(|r| format!("{r:.2}")));
            row.push(format!("{:.2}", s.success_rate));
            rows.push(row);
        }
        let widths: Vec<usize> = (0..headers.len())
            .map(|i| rows.iter().map(|r| r[i].len()).chain([headers[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                .collect::<Vec<_>>()
                .join(" | ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "backend: {}  seed: {}  gap_px: {}", self.backend, self.seed, self.gap_px);
        let _ = writeln!(out, "{}", line(&headers));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("-|-"));
        for r in &rows {
            let _ = writeln!(out, "{}", line(r));
        }
        let failed: Vec<&CellResult> = self.cells.iter().filter(|c| !c.satisfied).collect();
        if !failed.is_empty() {
            let _ = writeln!(out, "\nunsatisfied:");
            for c in failed {
                let _ = write!(out, "  {:<18} {} #{} {}", c.method.label(), c.scenario, c.instruction_index + 1, c.instruction);
                if let Some(e) = &c.error {
                    let _ = write!(out, " ({e})");
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,scenario,instruction_index,instruction,satisfied,steps_satisfied,error\n");
        for c in &self.cells {
            let steps: Vec<&str> = c.steps.iter().map(|s| if s.satisfied { "1" } else { "0" }).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.method.as_str(),
                c.scenario,
                c.instruction_index + 1,
                csv_field(&c.instruction),
                c.satisfied,
                steps.join(""),
                csv_field(c.error.as_deref().unwrap_or(""))
            );
        }
        out
    }
}

fn group_by_step(specs: &[RelationSpec]) -> Vec<Vec<RelationSpec>> {
    let n = specs.iter().map(|s| s.step_index + 1).max().unwrap_or(0);
    (0..n).map(|k| specs.iter().filter(|s| s.step_index == k).cloned().collect()).collect()
}

fn judge(scene: &Scene, step_index: usize, specs: &[RelationSpec], cfg: &PredicateConfig) -> StepResult {
    let valid = scene.validate().is_ok();
    let relations: Vec<RelationCheck> = specs
        .iter()
        .map(|spec| RelationCheck { spec: spec.clone(), holds: valid && check(scene, spec, cfg).unwrap_or(false) })
        .collect();
    StepResult { step_index, satisfied: relations.iter().all(|r| r.holds), relations }
}

fn unsatisfied(step_index: usize, specs: &[RelationSpec]) -> StepResult {
    StepResult {
        step_index,
        satisfied: false,
        relations: specs.iter().map(|s| RelationCheck { spec: s.clone(), holds: false }).collect(),
    }
}

fn baseline_ids(method: Method, scene: &Scene, specs: &[RelationSpec]) -> Vec<String> {
    let named = |id: &String| {
        specs.iter().any(|s| {
            s.subject_ids.contains(id) || (method == Method::Geometric && s.anchor_ids.contains(id))
        })
    };
    scene.objects.iter().filter(|o| o.movable && named(&o.id)).map(|o| o.id.clone()).collect()
}

fn run_baseline(
    method: Method,
    scene: &Scene,
    steps: &[Vec<RelationSpec>],
    seeds: impl Fn(usize) -> u64,
    config: &BenchConfig,
) -> (Vec<StepResult>, Option<String>) {
    let mut current = scene.clone();
    let mut out = Vec::new();
    for (k, specs) in steps.iter().enumerate() {
        let ids = baseline_ids(method, &current, specs);
        let placements = match method {
            Method::Random => random_placement(&current, &ids, seeds(k)),
            _ => geometric_placement(&current, &ids, config.gap_px),
        };
        let next = placements.map_err(|e| e.to_string()).and_then(|p| current.apply_moves(&p).map_err(|e| e.to_string()));
        match next {
            Ok(next) => {
                current = next;
                out.push(judge(&current, k, specs, &config.predicates));
            }
            Err(e) => {
                out.extend(steps.iter().enumerate().skip(k).map(|(j, s)| unsatisfied(j, s)));
                return (out, Some(e));
            }
        }
    }
    (out, None)
}

fn judge_steps(log: &ExecutionLog, steps: &[Vec<RelationSpec>], cfg: &PredicateConfig) -> Vec<StepResult> {
    steps
        .iter()
        .enumerate()
        .map(|(k, specs)| match log.steps.get(k) {
            Some(step) => judge(&step.scene, k, specs, cfg),
            None => unsatisfied(k, specs),
        })
        .collect()
}

/// Checks each step's relations against the scene at the end of that
/// step. Steps the log never reached count as unsatisfied.
pub fn judge_log(log: &ExecutionLog, specs: &[RelationSpec], cfg: &PredicateConfig) -> Vec<StepResult> {
    judge_steps(log, &group_by_step(specs), cfg)
}

fn run_pipeline(
    pipeline: &Pipeline,
    mode: ReferenceMode,
    scene: &Scene,
    instruction: &str,
    steps: &[Vec<RelationSpec>],
    cfg: &PredicateConfig,
) -> (Vec<StepResult>, Option<String>) {
    match pipeline.execute(scene, instruction, mode) {
        Ok(log) => {
            let results = judge_steps(&log, steps, cfg);
            let error = (log.steps.len() != steps.len())
                .then(|| format!("planner produced {} steps, expected {}", log.steps.len(), steps.len()));
            (results, error)
        }
        Err(failure) => {
            let results = judge_steps(&failure.partial, steps, cfg);
            (results, Some(failure.to_string()))
        }
    }
}

/// Runs every configured method on the three scenarios. Failures inside a
/// cell are recorded as unsatisfied; only missing fixtures abort.
pub fn run_benchmark(
    config: &BenchConfig,
    llm: &dyn ChatBackend,
    embedder: &dyn Embedder,
    store: Option<&Store>,
) -> Result<EvalReport, BenchError> {
    let pipeline = Pipeline::new(llm, embedder, store);
    let scenes: Vec<Scene> = SCENARIOS.iter().map(|s| fixture_scene(s.fixture)).collect::<Result<_, _>>()?;
    let mut cells = Vec::new();
    let mut summaries = Vec::new();
    for &method in &config.methods {
        let mut per_scenario = Vec::new();
        for (si, (scenario, scene)) in SCENARIOS.iter().zip(&scenes).enumerate() {
            let mut hits = 0;
            for (ii, instruction) in scenario.instructions.iter().enumerate() {
                let (steps, error) = match parse_relation(instruction, scene) {
                    Err(e) => (Vec::new(), Some(e.to_string())),
                    Ok(specs) => {
                        let grouped = group_by_step(&specs);
                        match method {
                            Method::Random | Method::Geometric => {
                                let seeds = |k: usize| mix_seed(config.seed, &[si as u64, ii as u64, k as u64]);
                                run_baseline(method, scene, &grouped, seeds, config)
                            }
                            Method::OursNoRef | Method::OursWithRef => {
                                let mode = if method == Method::OursWithRef {
                                    ReferenceMode::WithReference
                                } else {
                                    ReferenceMode::WithoutReference
                                };
                                run_pipeline(&pipeline, mode, scene, instruction, &grouped, &config.predicates)
                            }
                        }
                    }
                };
                let satisfied = error.is_none() && !steps.is_empty() && steps.iter().all(|s| s.satisfied);
                hits += usize::from(satisfied);
                cells.push(CellResult {
                    method,
                    scenario: scenario.fixture.to_string(),
                    instruction_index: ii,
                    instruction: instruction.to_string(),
                    satisfied,
                    steps,
                    error,
                });
            }
            per_scenario.push((hits, scenario.instructions.len()));
        }
        let satisfied: usize = per_scenario.iter().map(|(h, _)| h).sum();
        let total: usize = per_scenario.iter().map(|(_, t)| t).sum();
        summaries.push(MethodSummary {
            method,
            scenarios: per_scenario.iter().map(|&(h, t)| h as f64 / t as f64).collect(),
            satisfied,
            total,
            success_rate: satisfied as f64 / total as f64,
        });
    }
    Ok(EvalReport { backend: llm.name().to_string(), seed: config.seed, gap_px: config.gap_px, summaries, cells })
}
