//! Camera-conditioned DiT with memory tokenization and retrieval attention.

mod config;
mod network;
pub mod retrieval;

pub use config::{LatentDims, ModelConfig, RetrievalMode};
pub use network::{camera_features, inject_camera, timestep_features, Conditioning, ForwardOutput, Model};
pub use retrieval::{
    affinity, fov_overlap_select, fov_scores, local_window, multi_head, provenance, retrieval_attention,
    tokenize_memory, topk_select, MemoryKv, MemoryTokens,
};
