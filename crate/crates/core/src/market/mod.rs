//! Domain types shared by every part of the simulator: traders, orders,
//! trades, order books, price series, and the run configuration.

mod book;
mod series;

pub use book::OrderBook;
pub use series::{PriceSeries, SeriesError};

use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Order side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    Bid,
    Ask,
}

/// A one-unit limit order resting in (or headed for) a book.
///
/// `seq` is a tick-local submission counter per asset; it breaks price ties
/// FIFO and is assigned by [`OrderBook::insert_order`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Order {
    pub asset: usize,
    pub side: Side,
    pub limit_price: f64,
    pub quantity: u32,
    pub owner: u32,
    pub seq: u32,
}

/// An executed unit trade, settled at the mid-price of the matched pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trade {
    pub asset: usize,
    pub buyer: u32,
    pub seller: u32,
    pub price: f64,
    pub quantity: u32,
    pub tick: u32,
    /// Trade counter within (tick, asset), starting at 1.
    pub intra_tick_index: u32,
}

/// Cash and per-asset share holdings for one agent.
///
/// Invariants: cash never negative, shares never negative (no margin, no
/// shorting). Both are enforced by trade validation before settlement.
#[derive(Debug, Clone, PartialEq)]
pub struct TraderState {
    pub trader_id: u32,
    pub cash: f64,
    pub shares: Vec<u32>,
}

impl TraderState {
    pub fn new(trader_id: u32, cash: f64, shares_per_asset: u32, n_assets: usize) -> Self {
        Self {
            trader_id,
            cash,
            shares: vec![shares_per_asset; n_assets],
        }
    }

    /// Wealth at the given prices: cash + share holdings marked to market.
    pub fn wealth(&self, prices: &[f64]) -> f64 {
        self.cash
            + self
                .shares
                .iter()
                .zip(prices)
                .map(|(&s, &p)| f64::from(s) * p)
                .sum::<f64>()
    }
}

/// Build the initial trader population for a config.
pub fn initial_traders(config: &SimConfig) -> Vec<TraderState> {
    (0..config.n_traders)
        .map(|i| TraderState::new(i, config.initial_cash, config.initial_shares, config.n_assets))
        .collect()
}

/// Mid-price of a crossed pair of limit prices.
///
/// Panics if the pair does not cross; callers must only settle crossed books.
pub fn mid_price(bid_limit: f64, ask_limit: f64) -> f64 {
    assert!(
        bid_limit >= ask_limit,
        "mid_price on uncrossed pair: bid {bid_limit} < ask {ask_limit}"
    );
    (bid_limit + ask_limit) / 2.0
}

/// Move cash and shares between the two parties of a validated trade.
///
/// A self-trade (buyer == seller) is a legal no-op: the transfers cancel
/// exactly, so holdings are left untouched rather than round-tripped
/// through floating point.
pub fn apply_trade(traders: &mut [TraderState], trade: &Trade) {
    if trade.buyer == trade.seller {
        return;
    }
    let cost = trade.price * f64::from(trade.quantity);
    let buyer = &mut traders[trade.buyer as usize];
    debug_assert!(buyer.cash >= cost, "apply_trade on unvalidated buyer");
    buyer.cash -= cost;
    buyer.shares[trade.asset] += trade.quantity;
    let seller = &mut traders[trade.seller as usize];
    debug_assert!(
        seller.shares[trade.asset] >= trade.quantity,
        "apply_trade on unvalidated seller"
    );
    seller.cash += cost;
    seller.shares[trade.asset] -= trade.quantity;
}

/// Total cash across the population (for conservation checks).
pub fn total_cash(traders: &[TraderState]) -> f64 {
    traders.iter().map(|t| t.cash).sum()
}

/// Total shares of one asset across the population.
pub fn total_shares(traders: &[TraderState], asset: usize) -> u64 {
    traders.iter().map(|t| u64::from(t.shares[asset])).sum()
}

/// Clearing regime for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Exhaust each asset's book completely before touching the next.
    Sequential,
    /// One worker thread per asset, trades serialized per unit.
    Parallel,
    /// Single-threaded round-robin over assets, one trade attempt per pass.
    ParallelDeterministic,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Sequential => "sequential",
            Mode::Parallel => "parallel",
            Mode::ParallelDeterministic => "parallel-deterministic",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Mode::Sequential),
            "parallel" => Ok(Mode::Parallel),
            "parallel-deterministic" => Ok(Mode::ParallelDeterministic),
            other => Err(format!(
                "unknown mode `{other}` (expected sequential, parallel, or parallel-deterministic)"
            )),
        }
    }
}

/// Configuration for one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_traders: u32,
    pub n_assets: usize,
    /// Number of ticks. Zero is a legal degenerate run (empty series).
    pub horizon: u32,
    pub initial_cash: f64,
    pub initial_shares: u32,
    pub initial_price: f64,
    /// Half-width of the uniform expectation shock, in (0, 1).
    pub sigma: f64,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_traders: 10_000,
            n_assets: 5,
            horizon: 5_000,
            initial_cash: 200.0,
            initial_shares: 10,
            initial_price: 10.0,
            sigma: 0.15,
            mode: Mode::Sequential,
            seed: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid config: {field}: {message}")]
pub struct ConfigError {
    pub field: &'static str,
    pub message: String,
}

impl ConfigError {
    fn new(field: &'static str, message: impl Into<String>) -> Self {
        Self {
            field,
            message: message.into(),
        }
    }
}

impl SimConfig {
    /// Check the field ranges a run depends on. `horizon == 0` is allowed
    /// here (degenerate empty run); file-level config validation is stricter.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_traders < 1 {
            return Err(ConfigError::new("n_traders", "must be at least 1"));
        }
        if self.n_assets < 1 {
            return Err(ConfigError::new("n_assets", "must be at least 1"));
        }
        if !(self.sigma > 0.0 && self.sigma < 1.0) {
            return Err(ConfigError::new(
                "sigma",
                format!("must lie in (0, 1), got {}", self.sigma),
            ));
        }
        if !(self.initial_price > 0.0) || !self.initial_price.is_finite() {
            return Err(ConfigError::new(
                "initial_price",
                format!("must be positive and finite, got {}", self.initial_price),
            ));
        }
        if !(self.initial_cash >= 0.0) || !self.initial_cash.is_finite() {
            return Err(ConfigError::new(
                "initial_cash",
                format!("must be non-negative and finite, got {}", self.initial_cash),
            ));
        }
        Ok(())
    }
}
