//! Indoor sound source localization from GCC-PHAT features, a probabilistic
//! neural network over room clusters and weighted local distance refinement.

pub mod audio;
pub mod error;
pub mod features;
pub mod geometry;
pub mod harness;
pub mod metrics;
pub mod pnn;
pub mod room;
pub mod wldm;

pub use error::{Error, Result};
pub use geometry::{ClusterGrid, Doa, MicArray, RoomSpec, Vec3};
pub use pnn::PnnModel;
pub use room::{AcousticEnv, CaptureSet};
pub use wldm::{LocalizationResult, WldmConfig};
