//! Runtime around the compressed convolution: the `HSTE` container format,
//! a sequential CNN executor with per-layer substitution, seed-averaged
//! evaluation reports, and the synthetic fixture generator.

pub mod container;
pub mod dataset;
pub mod error;
pub mod fixture;
pub mod io;
pub mod layers;
pub mod model;
pub mod report;
pub mod runner;

pub use container::{Container, ContainerBuilder, ContainerKind, DType, Manifest, TensorDesc};
pub use dataset::Dataset;
pub use error::{Result, RuntimeError};
pub use layers::{LayerSpec, Shape};
pub use model::{load_model, Model, Plan};
pub use report::{EvalReport, SweepRow};
pub use runner::{compare, evaluate, swap_haste, HasteSettings, LayerDelta, Mode};
