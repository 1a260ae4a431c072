//! Semantic grounding: which categories an instruction involves, and which
//! scene objects carry those categories (argmax cosine similarity between
//! object and category embeddings).

use std::time::Duration;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::hashing::{fnv1a64, unit_uniform};
use crate::llm_client::structured::parse_string_list;
use crate::llm_client::{
    data_line, ChatBackend, ChatMessage, ChatRequest, HttpTransport, LlmError, ReqwestTransport, RequestTag,
};
use crate::scene::{ObjectRecord, Scene};

/// Catch-all category appended to every extraction result.
pub const OTHERS: &str = "others";

pub const OBJECT_QUERY: &str =
    "List the objects that are directly involved in the interaction described in the instruction.";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundingError {
    #[error("instruction is empty")]
    EmptyInstruction,
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("zero-length embedding")]
    ZeroVector,
    #[error("invalid embedding: {0}")]
    InvalidEmbedding(String),
    #[error("no categories to assign")]
    NoCategories,
    #[error("embedder: {0}")]
    Embedder(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    values: Vec<f64>,
    norm: f64,
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>) -> Result<Self, GroundingError> {
        if values.len() < 2 {
            return Err(GroundingError::InvalidEmbedding(format!("dimension {} < 2", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(GroundingError::InvalidEmbedding("non-finite component".into()));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::new(self.values.iter().map(|v| v * k).collect()).expect("scaling keeps dimension")
    }
}

pub fn cosine_similarity(u: &EmbeddingVector, v: &EmbeddingVector) -> Result<f64, GroundingError> {
    if u.dim() != v.dim() {
        return Err(GroundingError::DimensionMismatch(u.dim(), v.dim()));
    }
    if u.norm == 0.0 || v.norm == 0.0 {
        return Err(GroundingError::ZeroVector);
    }
    let dot: f64 = u.values.iter().zip(&v.values).map(|(a, b)| a * b).sum();
    Ok((dot / (u.norm * v.norm)).clamp(-1.0, 1.0))
}

/// Assigns each object the category with the highest cosine similarity.
/// Ties go to the category listed first.
pub fn assign_categories(
    objects: &IndexMap<String, EmbeddingVector>,
    categories: &IndexMap<String, EmbeddingVector>,
) -> Result<IndexMap<String, String>, GroundingError> {
    if categories.is_empty() {
        return Err(GroundingError::NoCategories);
    }
    let mut out = IndexMap::with_capacity(objects.len());
    for (id, emb) in objects {
        let mut best: Option<(&String, f64)> = None;
        for (cat, cemb) in categories {
            let s = cosine_similarity(emb, cemb)?;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((cat, s));
            }
        }
        let (cat, _) = best.expect("categories nonempty");
        out.insert(id.clone(), cat.clone());
    }
    Ok(out)
}

pub trait Embedder: Send + Sync {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, GroundingError>;
    fn embed_object(&self, object: &ObjectRecord) -> Result<EmbeddingVector, GroundingError>;
}

/// Hash-seeded embeddings with no model behind them.
///
/// Every string maps to `normalize(h("others") + h(s))` where `h` is a unit
/// vector drawn from a counter-based generator keyed on the lowercase
/// string; `"others"` maps to `h("others")` itself. An object embeds as its
/// true category plus `noise` times a vector keyed on its id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedEmbedder {
    pub dim: usize,
    pub noise: f64,
}

impl Default for ScriptedEmbedder {
    fn default() -> Self {
        Self { dim: 64, noise: 0.0 }
    }
}

impl ScriptedEmbedder {
    pub fn new(dim: usize, noise: f64) -> Self {
        Self { dim, noise }
    }

    fn hashed(&self, key: &str) -> Vec<f64> {
        let seed = fnv1a64(key.as_bytes());
        let raw: Vec<f64> = (0..self.dim as u64).map(|i| unit_uniform(seed, i)).collect();
        let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        raw.into_iter().map(|v| v / n).collect()
    }

    fn text_values(&self, text: &str) -> Vec<f64> {
        let key = text.trim().to_lowercase();
        let base = self.hashed(OTHERS);
        if key == OTHERS {
            return base;
        }
        base.iter().zip(self.hashed(&key)).map(|(a, b)| a + b).collect()
    }
}

impl Embedder for ScriptedEmbedder {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, GroundingError> {
        EmbeddingVector::new(self.text_values(text))
    }

    fn embed_object(&self, object: &ObjectRecord) -> Result<EmbeddingVector, GroundingError> {
        let mut v = self.text_values(&object.category);
        if self.noise != 0.0 {
            let jitter = self.hashed(&format!("object:{}", object.id));
            for (a, b) in v.iter_mut().zip(jitter) {
                *a += self.noise * b;
            }
        }
        EmbeddingVector::new(v)
    }
}

/// Embedding service client: POSTs `{"input": [..]}` and reads
/// `{"embeddings": [[..]]}`. Objects are embedded by their category label.
pub struct RemoteEmbedder<T: HttpTransport = ReqwestTransport> {
    pub url: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    transport: T,
}

impl RemoteEmbedder<ReqwestTransport> {
    pub fn new(url: impl Into<String>, api_key: Option<String>) -> Self {
        Self::with_transport(url, api_key, ReqwestTransport::new())
    }
}

impl<T: HttpTransport> RemoteEmbedder<T> {
    pub fn with_transport(url: impl Into<String>, api_key: Option<String>, transport: T) -> Self {
        Self { url: url.into(), api_key, timeout: Duration::from_secs(60), transport }
    }

    pub fn embed_batch(&self, inputs: &[&str]) -> Result<Vec<EmbeddingVector>, GroundingError> {
        let body = serde_json::to_vec(&json!({ "input": inputs })).expect("request serializes");
        let resp = self
            .transport
            .post_json(&self.url, self.api_key.as_deref(), &body, self.timeout)
            .map_err(|e| GroundingError::Embedder(e.message))?;
        if !(200..300).contains(&resp.status) {
            return Err(GroundingError::Embedder(format!("status {}: {}", resp.status, resp.body)));
        }
        let v: Value = serde_json::from_str(&resp.body).map_err(|e| GroundingError::Embedder(e.to_string()))?;
        let rows: Vec<Vec<f64>> = v
            .get("embeddings")
            .cloned()
            .and_then(|e| serde_json::from_value(e).ok())
            .ok_or_else(|| GroundingError::Embedder(format!("no embeddings in {}", resp.body)))?;
        if rows.len() != inputs.len() {
            return Err(GroundingError::Embedder(format!("{} embeddings for {} inputs", rows.len(), inputs.len())));
        }
        rows.into_iter().map(EmbeddingVector::new).collect()
    }
}

impl<T: HttpTransport> Embedder for RemoteEmbedder<T> {
    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, GroundingError> {
        Ok(self.embed_batch(&[text])?.remove(0))
    }

    fn embed_object(&self, object: &ObjectRecord) -> Result<EmbeddingVector, GroundingError> {
        self.embed_text(&object.category)
    }
}

/// Which embedder to construct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbedderKind {
    #[default]
    Scripted,
    Remote,
}

impl EmbedderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EmbedderKind::Scripted => "scripted",
            EmbedderKind::Remote => "remote",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_lowercase().as_str() {
            "scripted" => Some(EmbedderKind::Scripted),
            "remote" => Some(EmbedderKind::Remote),
            _ => None,
        }
    }
}

/// Builds an embedder; the remote one needs the service URL.
pub fn make_embedder(
    kind: EmbedderKind,
    url: Option<&str>,
    api_key: Option<String>,
) -> Result<Box<dyn Embedder>, GroundingError> {
    match kind {
        EmbedderKind::Scripted => Ok(Box::new(ScriptedEmbedder::default())),
        EmbedderKind::Remote => match url {
            Some(u) if !u.trim().is_empty() => Ok(Box::new(RemoteEmbedder::new(u, api_key))),
            _ => Err(GroundingError::Embedder("remote embedder needs a URL".into())),
        },
    }
}

pub fn extraction_request(instruction: &str) -> ChatRequest {
    let user = format!(
        "{OBJECT_QUERY} Answer with a JSON list of lowercase category names and end the list with \"{OTHERS}\".\n\
         Instruction: {instruction}\n{}",
        data_line(&json!({ "instruction": instruction }))
    );
    ChatRequest::new(
        RequestTag::ObjectExtraction,
        vec![ChatMessage::system("You identify the objects a tabletop manipulation instruction refers to."), ChatMessage::user(user)],
    )
}

/// Categories the instruction involves, lowercased and deduplicated, with
/// `"others"` appended once at the end.
pub fn extract_relevant_objects(instruction: &str, llm: &dyn ChatBackend) -> Result<Vec<String>, GroundingError> {
    if instruction.trim().is_empty() {
        return Err(GroundingError::EmptyInstruction);
    }
    let reply = llm.complete(&extraction_request(instruction))?;
    let mut out: Vec<String> = Vec::new();
    for item in parse_string_list(&reply)? {
        let name = item.trim().to_lowercase();
        if !name.is_empty() && name != OTHERS && !out.contains(&name) {
            out.push(name);
        }
    }
    out.push(OTHERS.to_string());
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grounding {
    pub categories: Vec<String>,
    pub assignments: IndexMap<String, String>,
    /// Objects assigned a category other than `"others"`, in scene order.
    pub relevant_ids: Vec<String>,
}

pub fn ground_scene(
    scene: &Scene,
    categories: &[String],
    embedder: &dyn Embedder,
) -> Result<Grounding, GroundingError> {
    let mut cat_emb = IndexMap::new();
    for c in categories {
        cat_emb.insert(c.clone(), embedder.embed_text(c)?);
    }
    let mut obj_emb = IndexMap::new();
    for o in &scene.objects {
        obj_emb.insert(o.id.clone(), embedder.embed_object(o)?);
    }
    let assignments = assign_categories(&obj_emb, &cat_emb)?;
    let relevant_ids = assignments.iter().filter(|(_, c)| *c != OTHERS).map(|(id, _)| id.clone()).collect();
    Ok(Grounding { categories: categories.to_vec(), assignments, relevant_ids })
}
