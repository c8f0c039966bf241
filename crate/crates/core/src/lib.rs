pub mod autodiff;
pub mod cloud;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod generator;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod prior;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use cloud::{Point, PointCloud};
pub use data::{Dataset, ShapeFamily};
pub use discriminator::{CriticalSet, DiscriminatorConfig, DiscriminatorParams};
pub use error::{CheckpointError, Error, Result};
pub use generator::{GeneratorConfig, GeneratorParams, LatentCode};
pub use losses::{GpConfig, StitchConfig};
pub use metrics::MetricReport;
pub use prior::{PriorKind, PriorSet};
pub use tensor::Tensor;
pub use trainer::{TrainConfig, TrainState};
