//! Structured kernels and the exact sum-pool decomposition.

mod config;
mod layer;
mod matrix;
mod store;

pub use config::{generate_structured_basis, StructuredConfig};
pub use layer::{
    decompose_conv_layer, decompose_linear, forward_decomposed, forward_linear, linear_cfg,
    pool_features, DecomposedConvLayer, DecomposedLayer, DecomposedLinearLayer, LayerSidecar,
    EXACT_TOLERANCE,
};
pub(crate) use config::gcd;
pub(crate) use layer::add_channel_bias;
pub use matrix::{
    extract_alpha, project, reconstruct, structure_matrix, Projection, StructureMatrix,
    PINV_RCOND,
};
pub use store::{load_layer, save_layer};
