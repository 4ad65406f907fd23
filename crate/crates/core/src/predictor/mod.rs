//! Instance normalisation, the forecasting head, the optimiser and the
//! training loop.

pub mod adam;
pub mod fit;
pub mod head;
pub mod norm;

pub use adam::Adam;
pub use fit::{evaluate, fit, EpochRecord, History, TrainConfig};
pub use head::{predict, register_head};
pub use norm::{instance_normalize, NormState};
