// `!(x >= y)` is how NaN gets rejected along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod birman;
pub mod error;
pub mod fit;
pub mod kernels;
pub mod oscillatory;
pub mod propagator;
mod quad;
pub mod spectral;
pub mod waves;

pub use error::{Error, Result};
pub use fit::{fit_decay, DecayFit};
pub use kernels::BoundarySign;
pub use oscillatory::{IntegrationPlan, SplitPoints, TailEnvelope, Tolerance};
pub use spectral::SpectralPoint;
pub use waves::{RadialGrid, SectorOperator};
pub use birman::{Classification, Potential, Profile, Verdict};
pub use propagator::{Geometry, PropagatorSample};
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
