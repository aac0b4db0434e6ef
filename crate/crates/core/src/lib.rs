//! Risk-sensitive mean-field games on finite state and action spaces.
//!
//! A mean-field game models a large symmetric population of agents coupled
//! through the empirical distribution of their states. In the risk-sensitive
//! variant each agent minimizes an exponential utility of its discounted cost,
//!
//! ```text
//!     J(π) = E^π[ exp(λ Σ_t β^t c(x(t), a(t), μ_t)) ]
//! ```
//!
//! where `λ > 0` is the risk factor, `β ∈ (0,1)` the discount factor and
//! `μ_t` the population state distribution at time `t`. This crate provides:
//!
//! - [`model`]: the finite game model (mixture-coupled kernels and costs),
//!   its JSON file format and validation;
//! - [`dp`]: multiplicative (risk-sensitive) dynamic programming against a
//!   fixed measure flow — value tables, truncation horizons, greedy policies
//!   and an occupation-measure optimality certificate;
//! - [`mfe`]: mean-field equilibrium computation by damped fixed-point
//!   iteration on state-action measure flows, with independent residuals;
//! - [`duality`]: the zero-sum / relative-entropy reformulation used as an
//!   independent verification path for the dynamic-programming values;
//! - [`augmented`]: the cost-augmented chain whose state carries the
//!   accumulated discounted cost, propagated exactly as a finite atom measure;
//! - [`sim`]: seedable Monte-Carlo simulation of the finite `N`-agent game,
//!   convergence studies and Nash-gap estimation, with an exact joint-chain
//!   oracle at tiny `N`;
//! - [`exhaustive`]: brute-force enumeration oracles (trajectory sums,
//!   policy enumeration) used as ground truth in tests.
//!
//! All numeric code is generic over the scalar type via [`Real`]; `f64` is
//! the default type parameter everywhere and the `*32` aliases below pick
//! `f32`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign};

pub mod augmented;
pub mod dist;
pub mod dp;
pub mod duality;
pub mod exhaustive;
pub mod flow;
pub mod mfe;
pub mod model;
pub mod presets;
pub mod sim;
pub mod verify;

pub use dist::Dist;
pub use dp::{OptimalityCertificate, ValueTable};
pub use flow::{JointDist, MarkovPolicy, MeasureFlow, StateActionFlow};
pub use mfe::MfeResult;
pub use model::MfgModel;
pub use sim::{SimConfig, SimReport};

/// Scalar type the numeric core is generic over.
///
/// `f32` and `f64` satisfy the bounds; everything defaults to `f64`.
pub trait Real: Float + NumAssign + Sum + Debug + Display + Send + Sync + 'static {}

impl<T> Real for T where T: Float + NumAssign + Sum + Debug + Display + Send + Sync + 'static {}

/// Lossy conversion from an `f64` literal into the working scalar type.
pub(crate) fn real<T: Real>(x: f64) -> T {
    T::from(x).expect("f64 constant must be representable in the scalar type")
}

/// Single-precision aliases for the main domain types.
pub type Dist32 = dist::Dist<f32>;
pub type MfgModel32 = model::MfgModel<f32>;
pub type MeasureFlow32 = flow::MeasureFlow<f32>;
pub type MarkovPolicy32 = flow::MarkovPolicy<f32>;
pub type StateActionFlow32 = flow::StateActionFlow<f32>;
pub type ValueTable32 = dp::ValueTable<f32>;
pub type MfeResult32 = mfe::MfeResult<f32>;
