//! Single-shot HDR imaging from one coded-exposure 8-bit capture.
//!
//! The pipeline simulates per-pixel coded capture of a radiance map
//! ([`capture`]), then recovers relative radiance by convolutional sparse
//! coding with a smooth offset channel, solved by ADMM ([`reconstruct`]).
//! Filter banks come from [`learning`]; [`baseline`] holds the patch-based
//! OMP comparison and [`metrics`] the evaluation suite.

pub mod baseline;
pub mod capture;
pub mod engine;
pub mod error;
pub mod imagery;
pub mod learning;
pub mod masks;
pub mod metrics;
pub mod raster;
pub mod reconstruct;
pub mod scenes;

pub use capture::{CaptureConfig, CodedLdrImage};
pub use engine::{FeatureMaps, FilterBank};
pub use error::{Error, Result};
pub use imagery::{LdrImage, RadianceImage};
pub use masks::{ExposureMask, MaskKind, MaskSpec};
pub use reconstruct::{reconstruct_hdr, Reconstruction, SolverConfig, SolverTrace};
