//! Problem data, validation, the stacked population system and config files.

mod augmented;
mod config;
mod params;

pub use augmented::{build_augmented, build_augmented_at, AugmentedModel, AugmentedSystem, MAX_AUGMENTED_DIM};
pub use config::{
    config_to_json, demo_params, load_config, matrix_to_json, parse_config, parse_matrix, parse_vector, save_config,
    vector_to_json, DEMO_CONFIG,
};
pub use params::{Coef, Coefficients, ModelParams, ValidationReport};
