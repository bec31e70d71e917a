//! Zero-intelligence trader behavior: the per-(trader, asset) expectation
//! draw, the order decision derived from it, and the tick-wide submission
//! phase shared by every clearing mode.
//!
//! Randomness is counter-based: the draw for (seed, tick, trader, asset) is
//! a pure function of those four values, so the submitted order flow for a
//! tick depends only on the seed, the tick number, and the previous closes —
//! never on how earlier books were cleared or on scheduling.

use crate::market::{Order, OrderBook, Side};

/// One expectation draw: the uniform shock and the price it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectationDraw {
    pub trader: u32,
    pub asset: usize,
    pub delta: f64,
    pub expected_price: f64,
}

/// SplitMix64 finalizer; bijective with strong avalanche.
#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Keyed uniform bits for one (seed, tick, trader, asset) cell.
#[inline]
pub fn draw_bits(seed: u64, tick: u32, trader: u32, asset: usize) -> u64 {
    let mut h = mix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15));
    h = mix64(h ^ u64::from(tick).wrapping_add(0xD1B5_4A32_D192_ED03));
    h = mix64(h ^ u64::from(trader).wrapping_add(0x8CB9_2BA7_2F3D_8DD7));
    h = mix64(h ^ (asset as u64).wrapping_add(0x2545_F491_4F6C_DD1D));
    h
}

/// Map 64 random bits to the open interval (0, 1).
///
/// The half-ulp offset keeps both endpoints strictly excluded, so the shock
/// below never reaches ±sigma exactly.
#[inline]
fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
}

/// Draw the expectation shock and implied price for one (trader, asset) cell.
///
/// `delta` is uniform on (-sigma, sigma); the expected price is
/// `last_close * (1 + delta)`.
pub fn draw_expectation(
    seed: u64,
    tick: u32,
    trader: u32,
    asset: usize,
    last_close: f64,
    sigma: f64,
) -> ExpectationDraw {
    debug_assert!(sigma > 0.0 && last_close > 0.0);
    let u = unit_open(draw_bits(seed, tick, trader, asset));
    let delta = sigma * (2.0 * u - 1.0);
    ExpectationDraw {
        trader,
        asset,
        delta,
        expected_price: last_close * (1.0 + delta),
    }
}

/// Turn an expectation into an order: bid when the price is expected to
/// rise, ask when it is expected to fall, nothing on exact equality. The
/// limit is the trader's expected price and the size is always one unit.
pub fn decide_order(draw: &ExpectationDraw, last_close: f64) -> Option<Order> {
    let side = if draw.expected_price > last_close {
        Side::Bid
    } else if draw.expected_price < last_close {
        Side::Ask
    } else {
        return None;
    };
    Some(Order {
        asset: draw.asset,
        side,
        limit_price: draw.expected_price,
        quantity: 1,
        owner: draw.trader,
        seq: 0, // assigned by the book on insert
    })
}

/// Run the submission phase for one tick: every trader, every asset, in
/// ascending (trader, asset) order. Returns a hash of the submitted order
/// flow so runs can prove they fed identical orders into clearing.
///
/// No budget or inventory check happens here; feasibility is enforced at
/// settlement time only.
pub fn order_phase(
    books: &mut [OrderBook],
    n_traders: u32,
    closes_prev: &[f64],
    seed: u64,
    tick: u32,
    sigma: f64,
) -> u64 {
    assert_eq!(books.len(), closes_prev.len());
    let mut hash = FLOW_HASH_SEED;
    for trader in 0..n_traders {
        for (asset, book) in books.iter_mut().enumerate() {
            let draw = draw_expectation(seed, tick, trader, asset, closes_prev[asset], sigma);
            if let Some(order) = decide_order(&draw, closes_prev[asset]) {
                let seq = book
                    .insert_order(order)
                    .expect("decide_order emits well-formed orders");
                hash = fold_order(hash, &order, seq);
            }
        }
    }
    hash
}

/// Recompute the order-flow hash for a tick without touching any book.
/// Must agree with what [`order_phase`] returned for the same inputs.
pub fn order_phase_hash(
    n_assets: usize,
    n_traders: u32,
    closes_prev: &[f64],
    seed: u64,
    tick: u32,
    sigma: f64,
) -> u64 {
    assert_eq!(n_assets, closes_prev.len());
    let mut seqs = vec![0u32; n_assets];
    let mut hash = FLOW_HASH_SEED;
    for trader in 0..n_traders {
        for (asset, close) in closes_prev.iter().enumerate() {
            let draw = draw_expectation(seed, tick, trader, asset, *close, sigma);
            if let Some(order) = decide_order(&draw, *close) {
                hash = fold_order(hash, &order, seqs[asset]);
                seqs[asset] += 1;
            }
        }
    }
    hash
}

const FLOW_HASH_SEED: u64 = 0xCBF2_9CE4_8422_2325; // FNV-1a offset basis

#[inline]
fn fold_order(mut hash: u64, order: &Order, seq: u32) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01B3;
    let side = match order.side {
        Side::Bid => 0u64,
        Side::Ask => 1u64,
    };
    for word in [
        order.asset as u64,
        side,
        order.limit_price.to_bits(),
        u64::from(order.owner),
        u64::from(seq),
    ] {
        for byte in word.to_le_bytes() {
            hash = (hash ^ u64::from(byte)).wrapping_mul(PRIME);
        }
    }
    hash
}
