//! Cross-modal retrieval recall and frame-level alignment matrices.

mod alignment;
mod retrieval;

pub use alignment::{align_triple, alignment_matrix, export_heatmap, heat_color, valid_steps, SimilarityMatrix, HOT_RAMP};
pub use retrieval::{
    embed_split, evaluate_all_directions, library_from_store, load_model, recall_at_k, recall_json, recall_table,
    RecallReport, RecallSummary, RetrievalLibrary,
};
