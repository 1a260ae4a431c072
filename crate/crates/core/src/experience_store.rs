//! Directory-backed store of past arrangements and reference retrieval.
//!
//! Layout: one `<id>.experience` JSON document per experience plus a
//! `manifest.json` holding the ids in insertion order. Every write goes
//! through a temp file, fsync and rename.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use chrono::{DateTime, SubsecRound, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::llm_client::structured::parse_int;
use crate::llm_client::{data_line, ChatBackend, ChatMessage, ChatRequest, LlmError, RequestTag};
use crate::scene::{ObjectRecord, Scene, SceneError, Workspace};

pub const MANIFEST: &str = "manifest.json";
pub const EXTENSION: &str = "experience";

pub const SIMILARITY_QUERY: &str = "Give a similarity score between two instructions on a scale from 0 to 100.";

const BUNDLED_MANIFEST: &str = include_str!("../assets/seeds/manifest.json");
const BUNDLED_SEEDS: [(&str, &str); 10] = [
    ("seed-01", include_str!("../assets/seeds/seed-01.experience")),
    ("seed-02", include_str!("../assets/seeds/seed-02.experience")),
    ("seed-03", include_str!("../assets/seeds/seed-03.experience")),
    ("seed-04", include_str!("../assets/seeds/seed-04.experience")),
    ("seed-05", include_str!("../assets/seeds/seed-05.experience")),
    ("seed-06", include_str!("../assets/seeds/seed-06.experience")),
    ("seed-07", include_str!("../assets/seeds/seed-07.experience")),
    ("seed-08", include_str!("../assets/seeds/seed-08.experience")),
    ("seed-09", include_str!("../assets/seeds/seed-09.experience")),
    ("seed-10", include_str!("../assets/seeds/seed-10.experience")),
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StoreError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("{path}: corrupt document: {message}")]
    Corrupt { path: String, message: String },
    #[error("duplicate experience id {0:?}")]
    DuplicateId(String),
    #[error("unknown experience id {0:?}")]
    UnknownId(String),
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error("invalid arrangement: {0}")]
    InvalidObjects(#[from] SceneError),
    #[error("the store is empty")]
    Empty,
    #[error(transparent)]
    Llm(#[from] LlmError),
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Human,
    Robot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub id: String,
    pub instruction: String,
    pub workspace: Workspace,
    pub objects: Vec<ObjectRecord>,
    pub created_at: DateTime<Utc>,
    pub source: Source,
}

impl Experience {
    pub fn scene(&self) -> Result<Scene, SceneError> {
        Scene::new(self.workspace.clone(), self.objects.clone())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("experience serializes");
        out.push(b'\n');
        out
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    ids: Vec<String>,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("file");
    let tmp = dir.join(format!(".{name}.tmp"));
    let mut f = fs::File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))?;
    if let Ok(d) = fs::File::open(dir) {
        let _ = d.sync_all();
    }
    Ok(())
}

fn read_experience(dir: &Path, id: &str) -> Result<Experience, StoreError> {
    let path = dir.join(format!("{id}.{EXTENSION}"));
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let corrupt = |message: String| StoreError::Corrupt { path: path.display().to_string(), message };
    let exp: Experience = serde_json::from_slice(&bytes).map_err(|e| corrupt(e.to_string()))?;
    if exp.id != id {
        return Err(corrupt(format!("id {:?} does not match manifest entry {id:?}", exp.id)));
    }
    if exp.instruction.trim().is_empty() {
        return Err(corrupt("empty instruction".into()));
    }
    exp.scene().map_err(|e| corrupt(e.to_string()))?;
    Ok(exp)
}

/// Ordered, persistent collection of experiences. Reads share a lock;
/// writes hold it exclusively until the files are on disk.
#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    items: RwLock<Vec<Experience>>,
}

impl Store {
    /// Loads an existing store. The manifest must be present.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref().to_path_buf();
        let manifest_path = dir.join(MANIFEST);
        let bytes = fs::read(&manifest_path).map_err(|e| io_err(&manifest_path, e))?;
        let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            path: manifest_path.display().to_string(),
            message: e.to_string(),
        })?;
        let mut items: Vec<Experience> = Vec::with_capacity(manifest.ids.len());
        for id in &manifest.ids {
            if items.iter().any(|e| &e.id == id) {
                return Err(StoreError::DuplicateId(id.clone()));
            }
            items.push(read_experience(&dir, id)?);
        }
        Ok(Self { dir, items: RwLock::new(items) })
    }

    /// Loads the store at `dir`, creating an empty one if there is none.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        if !dir.join(MANIFEST).exists() {
            fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
            write_atomic(&dir.join(MANIFEST), &manifest_bytes(&[]))?;
        }
        Self::load(dir)
    }

    /// Loads the store at `dir`, writing the bundled seeds first if there
    /// is none.
    pub fn open_or_seed(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        if !dir.join(MANIFEST).exists() {
            write_bundled_seeds(dir)?;
        }
        Self::load(dir)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.items.read().expect("store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn list(&self) -> Vec<Experience> {
        self.items.read().expect("store lock").clone()
    }

    pub fn get(&self, id: &str) -> Option<Experience> {
        self.items.read().expect("store lock").iter().find(|e| e.id == id).cloned()
    }

    /// Appends a new experience and persists it before returning.
    pub fn add(
        &self,
        instruction: &str,
        workspace: Workspace,
        objects: Vec<ObjectRecord>,
        source: Source,
    ) -> Result<Experience, StoreError> {
        if instruction.trim().is_empty() {
            return Err(StoreError::EmptyInstruction);
        }
        Scene::new(workspace.clone(), objects.clone())?;
        let mut items = self.items.write().expect("store lock");
        let mut n = items.len() + 1;
        let id = loop {
            let candidate = format!("exp-{n:04}");
            if !items.iter().any(|e| e.id == candidate) {
                break candidate;
            }
            n += 1;
        };
        let exp = Experience {
            id: id.clone(),
            instruction: instruction.trim().to_string(),
            workspace,
            objects,
            created_at: Utc::now().trunc_subsecs(0),
            source,
        };
        write_atomic(&self.dir.join(format!("{id}.{EXTENSION}")), &exp.to_bytes())?;
        let mut ids: Vec<String> = items.iter().map(|e| e.id.clone()).collect();
        ids.push(id);
        write_atomic(&self.dir.join(MANIFEST), &manifest_bytes(&ids))?;
        items.push(exp.clone());
        Ok(exp)
    }

    /// All experiences as one JSON array.
    pub fn export(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(&self.list()).expect("experiences serialize");
        out.push(b'\n');
        out
    }
}

fn manifest_bytes(ids: &[String]) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(&Manifest { ids: ids.to_vec() }).expect("manifest serializes");
    out.push(b'\n');
    out
}

/// Writes the ten bundled seed arrangements and their manifest into `dir`.
pub fn write_bundled_seeds(dir: impl AsRef<Path>) -> Result<(), StoreError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    for (id, doc) in BUNDLED_SEEDS {
        write_atomic(&dir.join(format!("{id}.{EXTENSION}")), doc.as_bytes())?;
    }
    write_atomic(&dir.join(MANIFEST), BUNDLED_MANIFEST.as_bytes())
}

/// Loads a seed store directory.
pub fn seed_store(path: impl AsRef<Path>) -> Result<Store, StoreError> {
    Store::load(path)
}

pub fn add_experience(
    store: &Store,
    instruction: &str,
    scene: &Scene,
    source: Source,
) -> Result<Experience, StoreError> {
    store.add(instruction, scene.workspace.clone(), scene.objects.clone(), source)
}

pub fn similarity_request(new_instr: &str, past_instr: &str) -> ChatRequest {
    let user = format!(
        "{SIMILARITY_QUERY} Reply with the number only.\nInstruction 1: {new_instr}\nInstruction 2: {past_instr}\n{}",
        data_line(&json!({ "new_instruction": new_instr, "past_instruction": past_instr }))
    );
    ChatRequest::new(
        RequestTag::Similarity,
        vec![ChatMessage::system("You compare robot manipulation instructions."), ChatMessage::user(user)],
    )
}

/// Backend-judged similarity in `[0, 100]`.
pub fn score_similarity(new_instr: &str, past_instr: &str, llm: &dyn ChatBackend) -> Result<u8, StoreError> {
    if new_instr.trim().is_empty() || past_instr.trim().is_empty() {
        return Err(StoreError::EmptyInstruction);
    }
    let reply = llm.complete(&similarity_request(new_instr, past_instr))?;
    Ok(parse_int(&reply)?.clamp(0, 100) as u8)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    pub experience: Experience,
    pub score: u8,
    pub scores: IndexMap<String, u8>,
}

/// Scores every experience and returns the best one; ties go to the
/// earliest inserted.
pub fn retrieve_reference(store: &Store, instruction: &str, llm: &dyn ChatBackend) -> Result<Retrieval, StoreError> {
    let items = store.list();
    let mut scores = IndexMap::with_capacity(items.len());
    let mut best: Option<(usize, u8)> = None;
    for (i, exp) in items.iter().enumerate() {
        let s = score_similarity(instruction, &exp.instruction, llm)?;
        scores.insert(exp.id.clone(), s);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    let (i, score) = best.ok_or(StoreError::Empty)?;
    Ok(Retrieval { experience: items[i].clone(), score, scores })
}
