//! Single-session state behind the HTTP layer. Everything here is
//! synchronous; the server funnels all mutations through one thread.

use std::sync::Arc;

use rearrange_core::baselines::{geometric_placement, random_placement};
use rearrange_core::evaluation::fixture_scene;
use rearrange_core::executor::{make_pick_plan, Transition};
use rearrange_core::experience_store::{add_experience, Source, Store};
use rearrange_core::geometry::{corners, Point2};
use rearrange_core::grounding::{extract_relevant_objects, ground_scene, make_embedder, Embedder};
use rearrange_core::llm_client::{make_backend, ChatBackend};
use rearrange_core::reasoner::{ExecutionLog, Pipeline, Placement, ReferenceInfo, ReferenceMode, Stage};
use rearrange_core::scene::Scene;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ServiceOptions, Settings, SettingsPatch};

type Backends = (Box<dyn ChatBackend>, Box<dyn Embedder>);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ServiceError {
    #[error("no pending proposal")]
    NoProposal,
    #[error("the scene changed after the proposal was made")]
    Stale,
    #[error("{message}")]
    Pipeline { stage: String, message: String },
    #[error("{0}")]
    BadRequest(String),
    #[error("no bundled scene named {0:?}")]
    UnknownFixture(String),
    #[error("{0}")]
    Store(String),
    #[error("{0}")]
    Config(String),
    #[error("the session worker has stopped")]
    Unavailable,
}

impl ServiceError {
    pub fn status(&self) -> u16 {
        match self {
            ServiceError::NoProposal | ServiceError::Stale => 409,
            ServiceError::BadRequest(_) => 400,
            ServiceError::UnknownFixture(_) => 404,
            ServiceError::Pipeline { .. } | ServiceError::Store(_) | ServiceError::Config(_) => 422,
            ServiceError::Unavailable => 503,
        }
    }

    pub fn stage(&self) -> &str {
        match self {
            ServiceError::NoProposal | ServiceError::Stale => "apply",
            ServiceError::Pipeline { stage, .. } => stage,
            ServiceError::BadRequest(_) | ServiceError::UnknownFixture(_) => "request",
            ServiceError::Store(_) => "store",
            ServiceError::Config(_) => "config",
            ServiceError::Unavailable => "service",
        }
    }

    fn pipeline(stage: Stage, message: impl ToString) -> Self {
        let stage = serde_json::to_value(stage).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        ServiceError::Pipeline { stage, message: message.to_string() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProposalMethod {
    #[default]
    Ours,
    Random,
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionRequest {
    pub text: String,
    #[serde(default)]
    pub mode: Option<ReferenceMode>,
    #[serde(default)]
    pub method: Option<ProposalMethod>,
}

/// Target pose of one move, with the outline the console draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ghost {
    pub step: usize,
    pub placement: Placement,
    pub corners: [Point2; 4],
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProposedStep {
    pub index: usize,
    pub instruction: String,
    pub placements: Vec<Placement>,
    pub repaired: Vec<bool>,
    pub transitions: Vec<Transition>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Proposal {
    pub instruction: String,
    pub method: ProposalMethod,
    pub mode: ReferenceMode,
    pub steps: Vec<ProposedStep>,
    pub placements: Vec<Ghost>,
    pub reference: Option<ReferenceInfo>,
    pub repaired: Vec<bool>,
    pub final_scene: Scene,
    #[serde(skip)]
    initial_scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Applied {
    pub instruction: String,
    pub transitions: Vec<Transition>,
    pub scene: Scene,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperienceSummary {
    pub id: String,
    pub instruction: String,
    pub created_at: String,
    pub source: Source,
}

pub fn summaries(store: &Store) -> Vec<ExperienceSummary> {
    store
        .list()
        .into_iter()
        .map(|e| ExperienceSummary {
            id: e.id,
            instruction: e.instruction,
            created_at: e.created_at.to_rfc3339(),
            source: e.source,
        })
        .collect()
}

fn ghost(scene: &Scene, step: usize, placement: &Placement, repaired: bool) -> Ghost {
    let bbox = scene.object(&placement.object_id).map(|o| placement.apply_to(&o.bbox));
    Ghost {
        step,
        placement: placement.clone(),
        corners: bbox.map(|b| corners(&b)).unwrap_or([Point2::new(placement.x, placement.y); 4]),
        repaired,
    }
}

impl Proposal {
    fn from_log(log: ExecutionLog) -> Self {
        let mut ghosts = Vec::new();
        let mut steps = Vec::with_capacity(log.steps.len());
        for s in &log.steps {
            for (p, r) in s.placements.iter().zip(&s.repaired) {
                ghosts.push(ghost(&log.initial_scene, s.index, p, *r));
            }
            steps.push(ProposedStep {
                index: s.index,
                instruction: s.instruction.clone(),
                placements: s.placements.clone(),
                repaired: s.repaired.clone(),
                transitions: s.transitions.clone(),
            });
        }
        Proposal {
            repaired: ghosts.iter().map(|g| g.repaired).collect(),
            placements: ghosts,
            instruction: log.instruction.clone(),
            method: ProposalMethod::Ours,
            mode: log.mode,
            reference: log.reference.clone(),
            final_scene: log.final_scene().clone(),
            initial_scene: log.initial_scene,
            steps,
        }
    }

    fn transitions(&self) -> Vec<Transition> {
        self.steps.iter().flat_map(|s| s.transitions.iter().cloned()).collect()
    }
}

pub struct Session {
    scene: Scene,
    pending: Option<Proposal>,
    store: Arc<Store>,
    settings: Settings,
    options: ServiceOptions,
}

impl Session {
    pub fn open(options: ServiceOptions) -> Result<Self, ServiceError> {
        let store = Store::open_or_seed(&options.store_dir).map_err(|e| ServiceError::Store(e.to_string()))?;
        let scene = fixture_scene(&options.fixture).map_err(|_| ServiceError::UnknownFixture(options.fixture.clone()))?;
        Ok(Self { scene, pending: None, store: Arc::new(store), settings: options.settings, options })
    }

    pub fn scene(&self) -> &Scene {
        &self.scene
    }

    pub fn settings(&self) -> Settings {
        self.settings
    }

    pub fn pending(&self) -> Option<&Proposal> {
        self.pending.as_ref()
    }

    pub fn store(&self) -> Arc<Store> {
        Arc::clone(&self.store)
    }

    fn backends(&self) -> Result<Backends, ServiceError> {
        let llm = make_backend(self.settings.backend, self.options.remote.as_ref(), self.options.predicates)
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        let embedder =
            make_embedder(self.settings.embedder, self.options.embed_url.as_deref(), self.options.embed_key.clone())
                .map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok((llm, embedder))
    }

    /// Plans the instruction against the current scene without changing
    /// it. A new proposal replaces any pending one.
    pub fn propose(&mut self, req: &InstructionRequest) -> Result<&Proposal, ServiceError> {
        let (llm, embedder) = self.backends()?;
        let mode = req.mode.unwrap_or(self.settings.mode);
        let proposal = match req.method.unwrap_or_default() {
            ProposalMethod::Ours => {
                let pipeline = Pipeline::new(llm.as_ref(), embedder.as_ref(), Some(&self.store));
                let log = pipeline
                    .execute(&self.scene, &req.text, mode)
                    .map_err(|f| ServiceError::pipeline(f.stage, f.error))?;
                Proposal::from_log(log)
            }
            method => self.baseline(&req.text, method, mode, llm.as_ref(), embedder.as_ref())?,
        };
        Ok(self.pending.insert(proposal))
    }

    fn baseline(
        &self,
        text: &str,
        method: ProposalMethod,
        mode: ReferenceMode,
        llm: &dyn ChatBackend,
        embedder: &dyn Embedder,
    ) -> Result<Proposal, ServiceError> {
        let categories = extract_relevant_objects(text, llm).map_err(|e| ServiceError::pipeline(Stage::Extraction, e))?;
        let grounding =
            ground_scene(&self.scene, &categories, embedder).map_err(|e| ServiceError::pipeline(Stage::Grounding, e))?;
        let ids: Vec<String> = grounding
            .relevant_ids
            .into_iter()
            .filter(|id| self.scene.object(id).is_some_and(|o| o.movable))
            .collect();
        let placements = match method {
            ProposalMethod::Random => random_placement(&self.scene, &ids, self.settings.seed),
            _ => geometric_placement(&self.scene, &ids, self.settings.gap_px),
        }
        .map_err(|e| ServiceError::pipeline(Stage::Prediction, e))?;
        let final_scene = self.scene.apply_moves(&placements).map_err(|e| ServiceError::pipeline(Stage::Execution, e))?;
        let mut transitions = Vec::with_capacity(placements.len());
        for p in &placements {
            let plan = make_pick_plan(&self.scene, p).map_err(|e| ServiceError::pipeline(Stage::Execution, e))?;
            let from = self.scene.object(&p.object_id).expect("plan checked the id").pose();
            transitions.push(Transition { step: 0, object: p.object_id.clone(), from, to: p.pose(), waypoints: plan.waypoints, repaired: false });
        }
        let ghosts: Vec<Ghost> = placements.iter().map(|p| ghost(&self.scene, 0, p, false)).collect();
        Ok(Proposal {
            instruction: text.to_string(),
            method,
            mode,
            steps: vec![ProposedStep {
                index: 0,
                instruction: text.to_string(),
                repaired: vec![false; placements.len()],
                placements,
                transitions,
            }],
            repaired: vec![false; ghosts.len()],
            placements: ghosts,
            reference: None,
            final_scene,
            initial_scene: self.scene.clone(),
        })
    }

    /// Executes the pending proposal and clears it.
    pub fn apply(&mut self) -> Result<Applied, ServiceError> {
        let proposal = self.pending.take().ok_or(ServiceError::NoProposal)?;
        if proposal.initial_scene != self.scene {
            return Err(ServiceError::Stale);
        }
        self.scene = proposal.final_scene.clone();
        Ok(Applied { instruction: proposal.instruction.clone(), transitions: proposal.transitions(), scene: self.scene.clone() })
    }

    /// Drops the pending proposal; true if there was one.
    pub fn reject(&mut self) -> bool {
        self.pending.take().is_some()
    }

    /// Stores the current scene under `instruction`.
    pub fn accept(&mut self, instruction: &str) -> Result<ExperienceSummary, ServiceError> {
        let exp = add_experience(&self.store, instruction, &self.scene, Source::Human)
            .map_err(|e| ServiceError::Store(e.to_string()))?;
        Ok(ExperienceSummary {
            id: exp.id,
            instruction: exp.instruction,
            created_at: exp.created_at.to_rfc3339(),
            source: exp.source,
        })
    }

    pub fn reset(&mut self, fixture: &str) -> Result<&Scene, ServiceError> {
        self.scene = fixture_scene(fixture).map_err(|_| ServiceError::UnknownFixture(fixture.to_string()))?;
        self.pending = None;
        Ok(&self.scene)
    }

    pub fn patch_settings(&mut self, patch: &SettingsPatch) -> Result<Settings, ServiceError> {
        let next = self.settings.patched(patch).map_err(ServiceError::BadRequest)?;
        make_backend(next.backend, self.options.remote.as_ref(), self.options.predicates)
            .map_err(|e| ServiceError::Config(e.to_string()))?;
        make_embedder(next.embedder, self.options.embed_url.as_deref(), None).map_err(|e| ServiceError::Config(e.to_string()))?;
        self.settings = next;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn session() -> (tempfile::TempDir, Session) {
        let dir = tempfile::tempdir().unwrap();
        let s = Session::open(ServiceOptions::new(dir.path())).unwrap();
        (dir, s)
    }

    fn ask(text: &str) -> InstructionRequest {
        InstructionRequest { text: text.into(), mode: None, method: None }
    }

    #[test]
    fn propose_does_not_move_anything() {
        let (_d, mut s) = session();
        let before = s.scene().clone();
        let p = s.propose(&ask("put the eggplant on the right of the plate")).unwrap().clone();
        assert_eq!(s.scene(), &before);
        assert_eq!(p.placements.len(), 1);
        assert_eq!(p.reference.as_ref().unwrap().id, "seed-02");
        assert_ne!(p.final_scene, before);
        let applied = s.apply().unwrap();
        assert_eq!(s.scene(), &p.final_scene);
        assert_eq!(applied.transitions.len(), 1);
        assert_eq!(s.apply(), Err(ServiceError::NoProposal));
    }

    #[test]
    fn baselines_as_proposals() {
        let (_d, mut s) = session();
        s.reset("scene2").unwrap();
        let geometric = |text: &str| InstructionRequest { text: text.into(), mode: None, method: Some(ProposalMethod::Geometric) };
        // the row runs through the plate, which stays put
        let err = s.propose(&geometric("put the potatoes together")).unwrap_err();
        assert_eq!((err.status(), err.stage()), (422, "execution"));
        let p = s.propose(&geometric("put the potatoes on the plate")).unwrap().clone();
        assert_eq!(p.placements.len(), 3);
        assert!(p.placements.iter().all(|g| g.placement.y == 240.0));
        assert!(p.reference.is_none());
        s.apply().unwrap();
        assert_eq!(s.scene(), &p.final_scene);
    }

    #[test]
    fn reset_clears_the_proposal() {
        let (_d, mut s) = session();
        s.propose(&ask("put the eggplant on the plate")).unwrap();
        s.reset("scene3").unwrap();
        assert!(s.pending().is_none());
        assert!(!s.reject());
        assert_eq!(s.reset("nowhere").unwrap_err(), ServiceError::UnknownFixture("nowhere".into()));
    }

    #[test]
    fn pipeline_failures_carry_their_stage() {
        let (_d, mut s) = session();
        let err = s.propose(&ask("   ")).unwrap_err();
        assert_eq!(err.status(), 422);
        assert!(!err.stage().is_empty());
    }

    #[test]
    fn settings_validation() {
        let (_d, mut s) = session();
        let bad = SettingsPatch { gap_px: Some(-1.0), ..Default::default() };
        assert_eq!(s.patch_settings(&bad).unwrap_err().status(), 400);
        let remote = SettingsPatch { backend: Some(rearrange_core::llm_client::BackendKind::Remote), ..Default::default() };
        assert_eq!(s.patch_settings(&remote).unwrap_err().stage(), "config");
        let ok = SettingsPatch { seed: Some(9), ..Default::default() };
        assert_eq!(s.patch_settings(&ok).unwrap().seed, 9);
    }
}
