//! Vehicle-to-grid fleet control for an EV charging station.
//!
//! Each connected vehicle gets a marginal value function computed by backward
//! stochastic dynamic programming over a Markov model of the real-time price
//! and an SoC-dependent battery model. A threshold policy turns the value
//! function and the realized price into charge/discharge signals, and the
//! fleet layer prioritizes vehicles by elapsed session fraction so the station
//! power limit is respected.
//!
//! Module map:
//!
//! * [`price`]: Markov price model training, node lookup and sampling.
//! * [`battery`]: SoC-dependent rating/efficiency/penalty curves and SoC dynamics.
//! * [`valuation`]: marginal value update and the backward pass.
//! * [`policy`]: per-step control decision from a value function.
//! * [`fleet`]: the station simulator (LLF dispatch, UC baseline, compliance).
//! * [`metrics`]: savings, energy balances, equivalent mileage.
//! * [`io`], [`config`]: CSV loaders, run configuration and scenario presets.
//! * [`synth`]: synthetic price and session generators for tests and demos.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod battery;
pub mod config;
pub mod error;
pub mod fleet;
pub mod io;
pub mod metrics;
pub mod policy;
pub mod price;
pub mod synth;
pub mod valuation;

pub use battery::{BatteryCurves, CurvePoint, CurveResolutionPair};
pub use error::{Error, Result};
pub use fleet::{ChargingSession, FacilityConfig, Scenario, SimOptions, SimResult};
pub use policy::ControlDecision;
pub use price::{PriceMarkov, PriceSeries, TrainMode};
pub use valuation::{ValuationConfig, ValueFunction};

/// Dollars for `kwh` of energy at `price_per_mwh`.
#[inline]
pub fn energy_cost(price_per_mwh: f64, kwh: f64) -> f64 {
    price_per_mwh * kwh / 1000.0
}
