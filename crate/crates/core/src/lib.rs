//! Cycle- and energy-level simulator of a heterogeneous accelerator for
//! spiking transformers built around token-time bundles (TTBs).

pub mod cores;
pub mod ecp;
pub mod error;
pub mod harness;
pub mod memsys;
pub mod reference;
pub mod scalar;
pub mod stratifier;
pub mod tensor;
pub mod ttb;

pub use error::{Result, SimError};
pub use scalar::Scalar;
pub use tensor::{Matrix, Tensor3};
pub use ttb::{pack_ttb, BundleShape, SpikeTensor, TtbGrid};

/// Integer currents, the simulator's native scalar.
pub type CurrentTensor = Tensor3<i32>;
pub type WeightMatrix = Matrix<i32>;
pub type Lif = reference::LifParams<i32>;
pub type LifF64 = reference::LifParams<f64>;
pub type Model = reference::ModelConfig<i32>;
