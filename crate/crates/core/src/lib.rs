//! Depth-assisted resize-residual GAN translation for cross-domain aerial
//! image segmentation.
//!
//! The pipeline translates annotated source-domain tiles into the style and
//! ground resolution of an unannotated target domain, using the DSM of both
//! domains as an extra constraint, then trains a segmentation model on the
//! translated tiles and scores it on target tiles.

pub mod autograd;
pub mod checkpoint;
pub mod data_model;
pub mod error;
pub mod evaluation;
pub mod ingestion;
pub mod kernels;
pub mod losses;
pub mod networks;
pub mod params;
pub mod pipeline;
pub mod segmentation_trainer;
pub mod tensor;
pub mod translation_trainer;

pub use data_model::{
    denormalize_image, normalize_image, validate_sample, DepthStats, DepthTile, DomainRole, DomainSpec, ImageTile,
    LabelTile, SampleTriple, TileOrigin,
};
pub use error::{Error, Result};
pub use losses::{LossReport, LossWeights};
pub use networks::{build_drdg, Drdg, GeneratorBundle, NetworkConfig};
pub use tensor::Tensor;
