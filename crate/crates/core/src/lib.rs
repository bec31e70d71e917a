//! Multi-asset limit order book market simulator.
//!
//! A population of zero-intelligence traders submits one-unit limit orders
//! on several assets each tick; the tick's order flow is then cleared either
//! sequentially (asset by asset) or in parallel (per-trade interleaving
//! across assets) under hard budget constraints. The crate also ships an
//! exact analytic model of the buy probabilities under both regimes and the
//! statistical tests used to quantify the difference between them.

pub mod agent;
pub mod clearing;
pub mod market;

pub use clearing::{run_simulation, run_simulation_full, ClearingOutcome, SimError, SimOutput};
pub use market::{Mode, OrderBook, PriceSeries, SimConfig, TraderState};
