//! The instruction pipeline: ground, retrieve a reference, split into
//! steps, predict target poses, repair collisions, execute.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::executor::{execute_move, ExecError, Transition};
use crate::experience_store::{retrieve_reference, Experience, Store, StoreError};
use crate::geometry::normalize_angle;
use crate::grounding::{extract_relevant_objects, ground_scene, Embedder, GroundingError};
use crate::llm_client::structured::{parse_placement_records, parse_string_list};
use crate::llm_client::{data_line, ChatBackend, ChatMessage, ChatRequest, LlmError, RequestTag};
use crate::scene::{ObjectRecord, Scene};

pub use crate::scene::Placement;

pub const PROMPT_VERSION: &str = "placement.v1";
const TEMPLATE_TEXT: &str = include_str!("../prompts/placement.v1.txt");

/// Radial offsets tried around the requested center, in pixels.
pub const REPAIR_RADII: [f64; 4] = [0.0, 10.0, 20.0, 40.0];
/// Rotation offsets tried at each center, relative to the requested angle.
pub const REPAIR_ROTATIONS: [f64; 4] = [0.0, FRAC_PI_4, -FRAC_PI_4, FRAC_PI_2];
/// Unit directions E, NE, N, NW, W, SW, S, SE (N is `-y`).
const COMPASS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (0.0, -1.0),
    (-std::f64::consts::FRAC_1_SQRT_2, -std::f64::consts::FRAC_1_SQRT_2),
    (-1.0, 0.0),
    (-std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
    (0.0, 1.0),
    (std::f64::consts::FRAC_1_SQRT_2, std::f64::consts::FRAC_1_SQRT_2),
];

struct Template {
    sections: BTreeMap<String, String>,
}

impl Template {
    fn parse(text: &str) -> Self {
        let mut sections = BTreeMap::new();
        let mut name: Option<String> = None;
        let mut body = String::new();
        for line in text.lines() {
            if let Some(n) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if let Some(prev) = name.take() {
                    sections.insert(prev, body.trim().to_string());
                }
                name = Some(n.to_string());
                body.clear();
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        if let Some(prev) = name {
            sections.insert(prev, body.trim().to_string());
        }
        Self { sections }
    }

    fn section(&self, name: &str) -> &str {
        self.sections.get(name).map(String::as_str).unwrap_or("")
    }
}

static TEMPLATE: LazyLock<Template> = LazyLock::new(|| Template::parse(TEMPLATE_TEXT));

fn fill(text: &str, vars: &[(&str, String)]) -> String {
    vars.iter().fold(text.to_string(), |acc, (k, v)| acc.replace(&format!("{{{k}}}"), v))
}

/// One prompt line per object, numbers to one decimal.
pub fn object_line(o: &ObjectRecord) -> String {
    let mut line = format!(
        "- id: {} | category: {} | centroid: ({:.1}, {:.1}) | box: w={:.1} h={:.1} | rotation: {:.1} deg",
        o.id,
        o.category,
        o.bbox.cx,
        o.bbox.cy,
        o.bbox.w,
        o.bbox.h,
        o.bbox.theta.to_degrees()
    );
    if let Some(anchor) = &o.stacked_on {
        line.push_str(&format!(" | stacked_on: {anchor}"));
    }
    line
}

fn object_block(objects: &[ObjectRecord]) -> String {
    if objects.is_empty() {
        return "(none)".to_string();
    }
    objects.iter().map(object_line).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub version: String,
    pub system: String,
    pub scene: String,
    pub instruction: String,
    pub reference: Option<String>,
    pub directive: String,
    /// `DATA:` line with the instruction, scene and relevant ids.
    pub trailer: String,
}

impl PromptBundle {
    pub fn user_text(&self) -> String {
        let mut parts = vec![self.scene.as_str(), self.instruction.as_str()];
        if let Some(r) = &self.reference {
            parts.push(r);
        }
        parts.push(&self.directive);
        format!("{}\n{}", parts.join("\n\n"), self.trailer)
    }

    pub fn request(&self) -> ChatRequest {
        ChatRequest::new(
            RequestTag::Placement,
            vec![ChatMessage::system(self.system.clone()), ChatMessage::user(self.user_text())],
        )
    }
}

pub fn build_prompt(
    scene: &Scene,
    instruction: &str,
    reference: Option<&Experience>,
    relevant_ids: &[String],
) -> PromptBundle {
    let t = &*TEMPLATE;
    let relevant = if relevant_ids.is_empty() { "(none)".to_string() } else { relevant_ids.join(", ") };
    let vars = [
        ("width", scene.workspace.width_px.to_string()),
        ("height", scene.workspace.height_px.to_string()),
        ("objects", object_block(&scene.objects)),
        ("instruction", instruction.to_string()),
        ("relevant", relevant),
    ];
    let reference = reference.map(|r| {
        fill(
            t.section("reference"),
            &[
                ("reference_instruction", r.instruction.clone()),
                ("reference_objects", object_block(&r.objects)),
            ],
        )
    });
    PromptBundle {
        version: PROMPT_VERSION.to_string(),
        system: t.section("system").to_string(),
        scene: fill(t.section("scene"), &vars),
        instruction: fill(t.section("instruction"), &vars),
        reference,
        directive: t.section("directive").to_string(),
        trailer: data_line(&json!({
            "instruction": instruction,
            "scene": scene,
            "relevant": relevant_ids,
        })),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepPlan {
    pub steps: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReasonError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("reference retrieval needs an experience store")]
    NoStore,
    #[error("step planner returned no steps")]
    NoSteps,
    #[error("no placement records in reply: {0}")]
    NoPlacements(String),
    #[error("reply places unknown object {0:?}")]
    UnknownObject(String),
    #[error("reply stacks {id:?} on unknown object {anchor:?}")]
    UnknownAnchor { id: String, anchor: String },
    #[error("reply moves fixed object {0:?}")]
    Immovable(String),
    #[error("placement for {0:?} is not finite")]
    NonFinite(String),
    #[error("placement for {id:?} leaves the workspace after a corrective re-prompt")]
    OutOfBounds { id: String },
    #[error("no collision-free pose for {object:?} in the repair schedule; blocked by {blockers:?}")]
    RepairExhausted { object: String, blockers: Vec<String> },
    #[error(transparent)]
    Execution(#[from] ExecError),
}

pub fn step_request(instruction: &str) -> ChatRequest {
    let user = format!(
        "Split the instruction into the ordered steps a robot should carry out, one spatial relation per step. \
         Repeat the object being moved in every step. Reply with a JSON list of strings.\nInstruction: {instruction}\n{}",
        data_line(&json!({ "instruction": instruction }))
    );
    ChatRequest::new(
        RequestTag::StepPlanning,
        vec![ChatMessage::system("You break tabletop rearrangement instructions into steps."), ChatMessage::user(user)],
    )
}

pub fn plan_steps(instruction: &str, llm: &dyn ChatBackend) -> Result<StepPlan, ReasonError> {
    if instruction.trim().is_empty() {
        return Err(ReasonError::EmptyInstruction);
    }
    let reply = llm.complete(&step_request(instruction))?;
    let steps: Vec<String> = parse_string_list(&reply)?
        .into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if steps.is_empty() {
        return Err(ReasonError::NoSteps);
    }
    Ok(StepPlan { steps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// In scene order.
    pub placements: Vec<Placement>,
    pub prompt: PromptBundle,
    pub replies: Vec<String>,
}

fn to_placements(scene: &Scene, reply: &str, relevant_ids: &[String]) -> Result<Vec<Placement>, ReasonError> {
    let records = parse_placement_records(reply);
    if records.is_empty() {
        // an explicit empty list means nothing has to move
        return match parse_string_list(reply) {
            Ok(items) if items.is_empty() => Ok(Vec::new()),
            _ => Err(ReasonError::NoPlacements(reply.to_string())),
        };
    }
    let mut unnamed = relevant_ids.iter().filter(|id| scene.object(id).is_some_and(|o| o.movable));
    let mut out: Vec<Placement> = Vec::new();
    for r in records {
        let id = match r.id {
            Some(id) => id,
            None => match unnamed.next() {
                Some(id) => id.clone(),
                None => return Err(ReasonError::NoPlacements(reply.to_string())),
            },
        };
        let obj = scene.object(&id).ok_or_else(|| ReasonError::UnknownObject(id.clone()))?;
        if !obj.movable {
            return Err(ReasonError::Immovable(id));
        }
        if let Some(anchor) = &r.stacked_on {
            if scene.object(anchor).is_none() {
                return Err(ReasonError::UnknownAnchor { id, anchor: anchor.clone() });
            }
        }
        if out.iter().any(|p| p.object_id == id) {
            continue;
        }
        let rotation = r.rotation.map_or(obj.bbox.theta, |deg| normalize_angle(deg.to_radians()));
        let p = Placement { object_id: id.clone(), x: r.x, y: r.y, rotation, stacked_on: r.stacked_on };
        if !p.is_finite() {
            return Err(ReasonError::NonFinite(id));
        }
        out.push(p);
    }
    out.sort_by_key(|p| scene.index_of(&p.object_id));
    Ok(out)
}

fn out_of_bounds(scene: &Scene, placements: &[Placement]) -> Option<Placement> {
    let (w, h) = (scene.workspace.width(), scene.workspace.height());
    placements
        .iter()
        .find(|p| scene.object(&p.object_id).is_some_and(|o| !p.apply_to(&o.bbox).inside_bounds(w, h)))
        .cloned()
}

/// Asks the backend for target poses. A reply that puts an object outside
/// the workspace gets one corrective follow-up.
pub fn predict_placement(
    scene: &Scene,
    step_instruction: &str,
    reference: Option<&Experience>,
    relevant_ids: &[String],
    llm: &dyn ChatBackend,
) -> Result<Prediction, ReasonError> {
    let prompt = build_prompt(scene, step_instruction, reference, relevant_ids);
    let mut request = prompt.request();
    let first = llm.complete(&request)?;
    let mut placements = to_placements(scene, &first, relevant_ids)?;
    let mut replies = vec![first];
    if let Some(bad) = out_of_bounds(scene, &placements) {
        request.messages.push(ChatMessage::assistant(replies[0].clone()));
        request.messages.push(ChatMessage::user(format!(
            "The target ({:.1}, {:.1}) for {} puts it partly outside the {} x {} px workspace. \
             Reply again with every object fully inside the workspace.",
            bad.x, bad.y, bad.object_id, scene.workspace.width_px, scene.workspace.height_px
        )));
        let second = llm.complete(&request)?;
        placements = to_placements(scene, &second, relevant_ids)?;
        replies.push(second);
        if let Some(bad) = out_of_bounds(scene, &placements) {
            return Err(ReasonError::OutOfBounds { id: bad.object_id });
        }
    }
    Ok(Prediction { placements, prompt, replies })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repaired {
    pub placement: Placement,
    pub repaired: bool,
}

/// The candidate poses tried by [`validate_and_repair`], in order: for
/// each radius, each compass direction (one center at radius 0), each
/// rotation offset.
pub fn repair_schedule(placement: &Placement) -> Vec<Placement> {
    let mut out = Vec::new();
    for radius in REPAIR_RADII {
        let dirs: &[(f64, f64)] = if radius == 0.0 { &COMPASS[..1] } else { &COMPASS };
        for &(dx, dy) in dirs {
            for dr in REPAIR_ROTATIONS {
                out.push(Placement {
                    x: placement.x + radius * dx,
                    y: placement.y + radius * dy,
                    rotation: normalize_angle(placement.rotation + dr),
                    ..placement.clone()
                });
            }
        }
    }
    out
}

/// Returns the first pose in the repair schedule that the scene accepts.
/// The requested pose itself comes first and is returned unchanged.
pub fn validate_and_repair(scene: &Scene, placement: &Placement) -> Result<Repaired, ReasonError> {
    let obj = scene
        .object(&placement.object_id)
        .ok_or_else(|| ReasonError::UnknownObject(placement.object_id.clone()))?;
    if !obj.movable {
        return Err(ReasonError::Immovable(obj.id.clone()));
    }
    if !placement.is_finite() {
        return Err(ReasonError::NonFinite(obj.id.clone()));
    }
    if scene.apply_move(placement).is_ok() {
        return Ok(Repaired { placement: placement.clone(), repaired: false });
    }
    for candidate in repair_schedule(placement).into_iter().skip(1) {
        if scene.apply_move(&candidate).is_ok() {
            return Ok(Repaired { placement: candidate, repaired: true });
        }
    }
    Err(ReasonError::RepairExhausted {
        object: obj.id.clone(),
        blockers: scene.blockers(&obj.id, &placement.apply_to(&obj.bbox), placement.stacked_on.as_deref()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    #[default]
    WithReference,
    WithoutReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Extraction,
    Grounding,
    Retrieval,
    Planning,
    Prediction,
    Repair,
    Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceInfo {
    pub id: String,
    pub instruction: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub index: usize,
    pub instruction: String,
    pub prompt: PromptBundle,
    pub replies: Vec<String>,
    /// Poses actually executed, after repair.
    pub placements: Vec<Placement>,
    pub repaired: Vec<bool>,
    pub transitions: Vec<Transition>,
    /// Scene at the end of the step.
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub instruction: String,
    pub mode: ReferenceMode,
    pub categories: Vec<String>,
    pub relevant_ids: Vec<String>,
    pub reference: Option<ReferenceInfo>,
    pub steps: Vec<StepLog>,
    pub initial_scene: Scene,
}

impl ExecutionLog {
    fn new(scene: &Scene, instruction: &str, mode: ReferenceMode) -> Self {
        Self {
            instruction: instruction.to_string(),
            mode,
            categories: Vec::new(),
            relevant_ids: Vec::new(),
            reference: None,
            steps: Vec::new(),
            initial_scene: scene.clone(),
        }
    }

    pub fn final_scene(&self) -> &Scene {
        self.steps.last().map_or(&self.initial_scene, |s| &s.scene)
    }

    pub fn transitions(&self) -> Vec<Transition> {
        self.steps.iter().flat_map(|s| s.transitions.iter().cloned()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{stage:?} stage failed: {error}")]
pub struct PipelineFailure {
    pub stage: Stage,
    pub error: ReasonError,
    pub partial: Box<ExecutionLog>,
}

/// Backends and knowledge used to run instructions.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub llm: &'a dyn ChatBackend,
    pub embedder: &'a dyn Embedder,
    pub store: Option<&'a Store>,
}

impl<'a> Pipeline<'a> {
    pub fn new(llm: &'a dyn ChatBackend, embedder: &'a dyn Embedder, store: Option<&'a Store>) -> Self {
        Self { llm, embedder, store }
    }

    /// Runs an instruction against `scene`, which is not modified. Each
    /// step starts from the scene the previous step produced. A failure
    /// carries the log up to the failing stage.
    pub fn execute(&self, scene: &Scene, instruction: &str, mode: ReferenceMode) -> Result<ExecutionLog, PipelineFailure> {
        let mut log = ExecutionLog::new(scene, instruction, mode);
        macro_rules! at {
            ($stage:expr, $e:expr) => {
                match $e {
                    Ok(v) => v,
                    Err(err) => {
                        return Err(PipelineFailure { stage: $stage, error: err.into(), partial: Box::new(log) })
                    }
                }
            };
        }
        if instruction.trim().is_empty() {
            at!(Stage::Extraction, Err::<(), _>(ReasonError::EmptyInstruction));
        }
        log.categories = at!(Stage::Extraction, extract_relevant_objects(instruction, self.llm));
        let grounding = at!(Stage::Grounding, ground_scene(scene, &log.categories, self.embedder));
        log.relevant_ids = grounding.relevant_ids;

        let mut reference: Option<Experience> = None;
        if mode == ReferenceMode::WithReference {
            let store = at!(Stage::Retrieval, self.store.ok_or(ReasonError::NoStore));
            if !store.is_empty() {
                let r = at!(Stage::Retrieval, retrieve_reference(store, instruction, self.llm));
                log.reference =
                    Some(ReferenceInfo { id: r.experience.id.clone(), instruction: r.experience.instruction.clone(), score: r.score });
                reference = Some(r.experience);
            }
        }

        let plan = at!(Stage::Planning, plan_steps(instruction, self.llm));
        let mut current = scene.clone();
        for (index, step) in plan.steps.iter().enumerate() {
            let prediction = at!(
                Stage::Prediction,
                predict_placement(&current, step, reference.as_ref(), &log.relevant_ids, self.llm)
            );
            let mut executed = Vec::new();
            let mut repaired = Vec::new();
            let mut transitions = Vec::new();
            for p in &prediction.placements {
                let r = at!(Stage::Repair, validate_and_repair(&current, p));
                let (next, t) = at!(Stage::Execution, execute_move(&current, &r.placement, index, r.repaired));
                current = next;
                executed.push(r.placement);
                repaired.push(r.repaired);
                transitions.push(t);
            }
            log.steps.push(StepLog {
                index,
                instruction: step.clone(),
                prompt: prediction.prompt,
                replies: prediction.replies,
                placements: executed,
                repaired,
                transitions,
                scene: current.clone(),
            });
        }
        Ok(log)
    }
}
