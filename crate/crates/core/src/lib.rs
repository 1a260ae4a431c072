pub mod baselines;
pub mod evaluation;
pub mod executor;
pub mod experience_store;
pub mod geometry;
pub mod grounding;
pub mod hashing;
pub mod llm_client;
pub mod reasoner;
pub mod scene;
