//! Normalising flows: a masked inverse autoregressive flow over the model
//! parameters and a local inverse autoregressive flow over the latent path.

mod local;
mod masked;
mod noise;
mod side;

pub use local::{softplus_bijection, FlowSample, FlowWindowVars, LocalIaf, OutputBijection};
pub use masked::MaskedIaf;
pub use noise::{log_phi, BaseNoise};
pub use side::{ConstSide, SideEncoder, SideSource};

/// Floor added to every softplus-produced scale, keeping log σ finite.
pub const SIGMA_FLOOR: f64 = 1e-6;
