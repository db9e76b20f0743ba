//! The model: GIN aggregation, the differentiable hierarchy construction in
//! the Poincaré ball, the log-map readout and prediction heads.

mod config;
mod construct;
mod model;

pub use config::{Arm, ModelConfig};
pub use construct::{diff_hyp_con, invert_rows, ConstructionTrace};
pub use model::{
    argmax_rows, class_embeddings, write_embeddings_csv, EmbeddingSpace, ForwardOutput, Inspection,
    Model, PreparedBatch,
};

#[cfg(test)]
mod tests;
