//! Per-asset limit order book with strict price-time priority.
//!
//! Books live for a single tick: orders accumulate during the submission
//! phase, are consumed during clearing, and anything left is discarded by
//! [`OrderBook::reset`]. There is no modification or cancellation API.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use super::{Order, Side};

#[derive(Debug, Error, PartialEq)]
pub enum BookError {
    #[error("order for asset {order} submitted to book for asset {book}")]
    AssetMismatch { order: usize, book: usize },
    #[error("order has non-positive limit price {0}")]
    BadPrice(f64),
    #[error("order has zero quantity")]
    BadQuantity,
}

/// Heap key giving the resting order its queue position.
///
/// Bids pop highest price first, asks lowest price first; equal prices pop
/// in submission order (lowest seq). Prices are validated finite on insert,
/// so `total_cmp` agrees with numeric order.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Ranked {
    order: Order,
}

impl Eq for Ranked {}

impl Ord for Ranked {
    fn cmp(&self, other: &Self) -> Ordering {
        let by_price = match self.order.side {
            Side::Bid => self.order.limit_price.total_cmp(&other.order.limit_price),
            Side::Ask => other.order.limit_price.total_cmp(&self.order.limit_price),
        };
        // BinaryHeap is a max-heap: reverse seq so the earliest pops first.
        by_price.then_with(|| other.order.seq.cmp(&self.order.seq))
    }
}

impl PartialOrd for Ranked {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Bid and ask queues for one asset.
#[derive(Debug, Clone)]
pub struct OrderBook {
    asset: usize,
    bids: BinaryHeap<Ranked>,
    asks: BinaryHeap<Ranked>,
    next_seq: u32,
}

impl OrderBook {
    pub fn new(asset: usize) -> Self {
        Self {
            asset,
            bids: BinaryHeap::new(),
            asks: BinaryHeap::new(),
            next_seq: 0,
        }
    }

    pub fn asset(&self) -> usize {
        self.asset
    }

    /// Insert an order, assigning it the next tick-local sequence number.
    ///
    /// Rejects malformed orders (wrong asset, non-positive price, zero
    /// quantity) rather than letting them poison the priority ordering.
    pub fn insert_order(&mut self, mut order: Order) -> Result<u32, BookError> {
        if order.asset != self.asset {
            return Err(BookError::AssetMismatch {
                order: order.asset,
                book: self.asset,
            });
        }
        if !(order.limit_price > 0.0) || !order.limit_price.is_finite() {
            return Err(BookError::BadPrice(order.limit_price));
        }
        if order.quantity == 0 {
            return Err(BookError::BadQuantity);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        order.seq = seq;
        let slot = Ranked { order };
        match order.side {
            Side::Bid => self.bids.push(slot),
            Side::Ask => self.asks.push(slot),
        }
        Ok(seq)
    }

    /// Highest resting bid, if any.
    pub fn best_bid(&self) -> Option<&Order> {
        self.bids.peek().map(|r| &r.order)
    }

    /// Lowest resting ask, if any.
    pub fn best_ask(&self) -> Option<&Order> {
        self.asks.peek().map(|r| &r.order)
    }

    pub fn pop_best_bid(&mut self) -> Option<Order> {
        self.bids.pop().map(|r| r.order)
    }

    pub fn pop_best_ask(&mut self) -> Option<Order> {
        self.asks.pop().map(|r| r.order)
    }

    pub fn bid_count(&self) -> usize {
        self.bids.len()
    }

    pub fn ask_count(&self) -> usize {
        self.asks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bids.is_empty() && self.asks.is_empty()
    }

    /// Discard unfilled orders and restart the sequence counter for the next tick.
    pub fn reset(&mut self) {
        self.bids.clear();
        self.asks.clear();
        self.next_seq = 0;
    }
}
