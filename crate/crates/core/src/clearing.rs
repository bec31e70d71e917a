//! The two clearing regimes over one tick's submitted order flow.
//!
//! Sequential clearing exhausts each asset's book completely before moving
//! to the next asset, so trades on asset 0 drain trader cash before asset 1
//! sees any of it. Parallel clearing runs one worker per asset and
//! interleaves single-unit trades across assets, each trade executing inside
//! one market-wide critical section. `ParallelDeterministic` is the testable
//! stand-in for the parallel schedule: a fixed round-robin over assets that
//! is bit-reproducible while remaining a legal interleaving of the parallel
//! mode.
//!
//! Every unit trade follows the same pipeline in every mode:
//! match the best bid with the best ask, validate the pair against current
//! trader state (buyer cash covers the mid-price, seller holds the share),
//! then finalize: settle if valid, otherwise drop only the violating side
//! and leave the counterparty resting at its original priority.

use std::thread;

use parking_lot::Mutex;
use thiserror::Error;

use crate::agent::order_phase;
use crate::market::{
    apply_trade, initial_traders, mid_price, ConfigError, Mode, Order, OrderBook, PriceSeries,
    SimConfig, Trade, TraderState,
};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("clearing worker for asset {asset} failed: {message}")]
    Worker { asset: usize, message: String },
}

/// Result of clearing one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearingOutcome {
    /// Last executed price per asset, or the previous close carried forward.
    pub closes: Vec<f64>,
    /// Executed unit trades per asset.
    pub volumes: Vec<u32>,
    /// Executed trades in finalization order (empty unless recording).
    pub trades: Vec<Trade>,
    /// Candidate trades dropped by validation.
    pub rejected: u64,
}

/// A matched best-bid/best-ask pair, priced but not yet validated. The
/// orders still rest in the book until [`finalize_trade`] decides their fate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CandidateTrade {
    pub bid: Order,
    pub ask: Order,
    pub price: f64,
}

/// True iff both sides are non-empty and the book crosses.
pub fn exist_possible_trade(book: &OrderBook) -> bool {
    match (book.best_bid(), book.best_ask()) {
        (Some(bid), Some(ask)) => bid.limit_price >= ask.limit_price,
        _ => false,
    }
}

/// Pair the current best bid and best ask at the mid-price.
///
/// Panics if the book does not cross; callers gate on [`exist_possible_trade`].
pub fn match_one_unit(book: &OrderBook) -> CandidateTrade {
    let bid = *book.best_bid().expect("match_one_unit on empty bid side");
    let ask = *book.best_ask().expect("match_one_unit on empty ask side");
    assert!(
        bid.limit_price >= ask.limit_price,
        "match_one_unit on uncrossed book"
    );
    assert!(
        bid.quantity == 1 && ask.quantity == 1,
        "multi-unit orders are not supported"
    );
    CandidateTrade {
        bid,
        ask,
        price: mid_price(bid.limit_price, ask.limit_price),
    }
}

fn buyer_can_pay(traders: &[TraderState], cand: &CandidateTrade) -> bool {
    traders[cand.bid.owner as usize].cash >= cand.price * f64::from(cand.bid.quantity)
}

fn seller_can_deliver(traders: &[TraderState], cand: &CandidateTrade) -> bool {
    traders[cand.ask.owner as usize].shares[cand.ask.asset] >= cand.ask.quantity
}

/// Check the candidate against *current* trader state: the buyer's cash must
/// cover the settlement price (inclusive) and the seller must hold the share.
pub fn validate_trade(traders: &[TraderState], cand: &CandidateTrade) -> bool {
    buyer_can_pay(traders, cand) && seller_can_deliver(traders, cand)
}

/// Settle or reject a matched candidate.
///
/// Valid: both orders leave the book, holdings move, and the executed trade
/// is returned with intra-tick index `k`. Invalid: only the infeasible
/// side's order is removed; the counterparty was never popped, so it keeps
/// its original queue position.
pub fn finalize_trade(
    book: &mut OrderBook,
    traders: &mut [TraderState],
    cand: &CandidateTrade,
    valid: bool,
    tick: u32,
    k: u32,
) -> Option<Trade> {
    if valid {
        let bid = book.pop_best_bid().expect("bid vanished before finalize");
        let ask = book.pop_best_ask().expect("ask vanished before finalize");
        debug_assert_eq!(bid, cand.bid);
        debug_assert_eq!(ask, cand.ask);
        let trade = Trade {
            asset: book.asset(),
            buyer: bid.owner,
            seller: ask.owner,
            price: cand.price,
            quantity: 1,
            tick,
            intra_tick_index: k,
        };
        debug_assert!(
            ask.limit_price <= trade.price && trade.price <= bid.limit_price,
            "settlement price escaped the matched limits"
        );
        apply_trade(traders, &trade);
        Some(trade)
    } else {
        if !buyer_can_pay(traders, cand) {
            book.pop_best_bid();
        }
        if !seller_can_deliver(traders, cand) {
            book.pop_best_ask();
        }
        None
    }
}

/// Per-asset clearing bookkeeping: trade counter, last settlement price,
/// executed volume.
struct AssetProgress {
    k: u32,
    last_price: Option<f64>,
}

impl AssetProgress {
    fn new() -> Self {
        Self {
            k: 0,
            last_price: None,
        }
    }

    /// One match + validate + finalize on a crossing book. Returns the
    /// executed trade, or None if validation dropped the candidate.
    fn step(
        &mut self,
        book: &mut OrderBook,
        traders: &mut [TraderState],
        tick: u32,
    ) -> Option<Trade> {
        let cand = match_one_unit(book);
        let valid = validate_trade(traders, &cand);
        let executed = finalize_trade(book, traders, &cand, valid, tick, self.k + 1);
        if let Some(trade) = executed {
            self.k += 1;
            self.last_price = Some(trade.price);
        }
        executed
    }

    fn close(&self, carry: f64) -> f64 {
        self.last_price.unwrap_or(carry)
    }
}

/// Clear all books one asset at a time, in ascending index order, exhausting
/// each book before touching the next. Trader cash consumed on early assets
/// is gone by the time later assets clear.
pub fn clear_sequential(
    books: &mut [OrderBook],
    traders: &mut [TraderState],
    prev_closes: &[f64],
    tick: u32,
    record_trades: bool,
) -> ClearingOutcome {
    let n = books.len();
    let mut outcome = ClearingOutcome {
        closes: Vec::with_capacity(n),
        volumes: vec![0; n],
        trades: Vec::new(),
        rejected: 0,
    };
    for (j, book) in books.iter_mut().enumerate() {
        let mut progress = AssetProgress::new();
        while exist_possible_trade(book) {
            match progress.step(book, traders, tick) {
                Some(trade) => {
                    outcome.volumes[j] += 1;
                    if record_trades {
                        outcome.trades.push(trade);
                    }
                }
                None => outcome.rejected += 1,
            }
        }
        outcome.closes.push(progress.close(prev_closes[j]));
    }
    outcome
}

/// Single-threaded fair interleaving of the parallel schedule: round-robin
/// over assets, at most one trade attempt per asset per pass, until no book
/// crosses. Any outcome of this function is also reachable by
/// [`clear_parallel`] under some thread schedule.
pub fn clear_parallel_deterministic(
    books: &mut [OrderBook],
    traders: &mut [TraderState],
    prev_closes: &[f64],
    tick: u32,
    record_trades: bool,
) -> ClearingOutcome {
    let n = books.len();
    let mut outcome = ClearingOutcome {
        closes: Vec::with_capacity(n),
        volumes: vec![0; n],
        trades: Vec::new(),
        rejected: 0,
    };
    let mut progress: Vec<AssetProgress> = (0..n).map(|_| AssetProgress::new()).collect();
    loop {
        let mut progressed = false;
        for (j, book) in books.iter_mut().enumerate() {
            if !exist_possible_trade(book) {
                continue;
            }
            progressed = true;
            match progress[j].step(book, traders, tick) {
                Some(trade) => {
                    outcome.volumes[j] += 1;
                    if record_trades {
                        outcome.trades.push(trade);
                    }
                }
                None => outcome.rejected += 1,
            }
        }
        if !progressed {
            break;
        }
    }
    for (j, p) in progress.iter().enumerate() {
        outcome.closes.push(p.close(prev_closes[j]));
    }
    outcome
}

/// Shared state mutated only inside the market-wide critical section.
struct Ledger<'a> {
    traders: &'a mut [TraderState],
    trades: Vec<Trade>,
    rejected: u64,
}

/// Clear all books with one worker thread per asset.
///
/// Each worker owns its book exclusively and loops while the book crosses;
/// every match + validate + finalize executes inside one market-wide mutex,
/// so trades on different assets interleave at per-trade granularity and no
/// two finalizations ever touch trader state concurrently. Workers never
/// hold the lock while waiting on anything, so the schedule is
/// deadlock-free. Trade interleaving (and therefore the recorded trade
/// order) is scheduler-dependent; all conservation and feasibility
/// invariants hold regardless.
pub fn clear_parallel(
    books: &mut [OrderBook],
    traders: &mut [TraderState],
    prev_closes: &[f64],
    tick: u32,
    record_trades: bool,
) -> Result<ClearingOutcome, SimError> {
    let n = books.len();
    let shared = Mutex::new(Ledger {
        traders,
        trades: Vec::new(),
        rejected: 0,
    });

    let mut closes = vec![0.0; n];
    let mut volumes = vec![0; n];
    thread::scope(|scope| {
        let handles: Vec<_> = books
            .iter_mut()
            .map(|book| {
                let shared = &shared;
                scope.spawn(move || {
                    let mut progress = AssetProgress::new();
                    let mut volume = 0u32;
                    while exist_possible_trade(book) {
                        let mut guard = shared.lock();
                        let ledger = &mut *guard;
                        match progress.step(book, ledger.traders, tick) {
                            Some(trade) => {
                                volume += 1;
                                if record_trades {
                                    ledger.trades.push(trade);
                                }
                            }
                            None => ledger.rejected += 1,
                        }
                    }
                    (progress, volume)
                })
            })
            .collect();
        for (j, handle) in handles.into_iter().enumerate() {
            match handle.join() {
                Ok((progress, volume)) => {
                    closes[j] = progress.close(prev_closes[j]);
                    volumes[j] = volume;
                }
                Err(payload) => {
                    return Err(SimError::Worker {
                        asset: j,
                        message: panic_message(&payload),
                    })
                }
            }
        }
        Ok(())
    })?;

    let ledger = shared.into_inner();
    Ok(ClearingOutcome {
        closes,
        volumes,
        trades: ledger.trades,
        rejected: ledger.rejected,
    })
}

fn panic_message(payload: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = payload.downcast_ref::<&str>() {
        (*s).to_string()
    } else if let Some(s) = payload.downcast_ref::<String>() {
        s.clone()
    } else {
        "worker panicked".to_string()
    }
}

/// A full run plus the bookkeeping the price series does not carry.
#[derive(Debug)]
pub struct SimOutput {
    pub series: PriceSeries,
    /// Validation failures summed over the whole run.
    pub rejected: u64,
    /// Hash of the submitted order flow, one entry per tick.
    pub order_flow_hashes: Vec<u64>,
}

/// Run the configured simulation: for each tick, the shared submission
/// phase, then the configured clearing mode, then closing prices and
/// volumes appended and unfilled orders discarded.
pub fn run_simulation(config: &SimConfig) -> Result<PriceSeries, SimError> {
    run_simulation_full(config, false).map(|out| out.series)
}

/// As [`run_simulation`], optionally recording the full trade log.
pub fn run_simulation_full(config: &SimConfig, record_trades: bool) -> Result<SimOutput, SimError> {
    config.validate()?;
    let mut traders = initial_traders(config);
    let mut books: Vec<OrderBook> = (0..config.n_assets).map(OrderBook::new).collect();
    let mut series = PriceSeries::new(config.n_assets, record_trades);
    let mut prev_closes = vec![config.initial_price; config.n_assets];
    let mut hashes = Vec::with_capacity(config.horizon as usize);
    let mut rejected = 0u64;

    for tick in 1..=config.horizon {
        hashes.push(order_phase(
            &mut books,
            config.n_traders,
            &prev_closes,
            config.seed,
            tick,
            config.sigma,
        ));
        let outcome = match config.mode {
            Mode::Sequential => {
                clear_sequential(&mut books, &mut traders, &prev_closes, tick, record_trades)
            }
            Mode::ParallelDeterministic => clear_parallel_deterministic(
                &mut books,
                &mut traders,
                &prev_closes,
                tick,
                record_trades,
            ),
            Mode::Parallel => {
                clear_parallel(&mut books, &mut traders, &prev_closes, tick, record_trades)?
            }
        };
        for book in &mut books {
            book.reset();
        }
        rejected += outcome.rejected;
        prev_closes.clone_from(&outcome.closes);
        series.extend_trades(outcome.trades);
        series.push_tick(outcome.closes, outcome.volumes);
    }

    Ok(SimOutput {
        series,
        rejected,
        order_flow_hashes: hashes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::Side;

    fn order(asset: usize, side: Side, price: f64, owner: u32) -> Order {
        Order {
            asset,
            side,
            limit_price: price,
            quantity: 1,
            owner,
            seq: 0,
        }
    }

    fn book_with(asset: usize, orders: &[(Side, f64, u32)]) -> OrderBook {
        let mut book = OrderBook::new(asset);
        for &(side, price, owner) in orders {
            book.insert_order(order(asset, side, price, owner)).unwrap();
        }
        book
    }

    fn rich_traders(n: usize) -> Vec<TraderState> {
        (0..n as u32)
            .map(|i| TraderState::new(i, 1_000.0, 100, 4))
            .collect()
    }

    #[test]
    fn exist_possible_trade_checks_the_cross() {
        let crossed = book_with(0, &[(Side::Bid, 10.5, 0), (Side::Ask, 9.5, 1)]);
        assert!(exist_possible_trade(&crossed));
        let open = book_with(0, &[(Side::Bid, 9.0, 0), (Side::Ask, 9.5, 1)]);
        assert!(!exist_possible_trade(&open));
        let touching = book_with(0, &[(Side::Bid, 9.5, 0), (Side::Ask, 9.5, 1)]);
        assert!(exist_possible_trade(&touching));
        assert!(!exist_possible_trade(&book_with(0, &[(Side::Bid, 9.5, 0)])));
    }

    #[test]
    fn match_one_unit_pairs_best_with_best() {
        // Two equal bids: time priority picks seq 0.
        let book = book_with(
            0,
            &[(Side::Bid, 10.5, 0), (Side::Bid, 10.5, 1), (Side::Ask, 9.5, 2)],
        );
        let cand = match_one_unit(&book);
        assert_eq!(cand.bid.owner, 0);
        assert_eq!(cand.price, 10.0);

        let book = book_with(0, &[(Side::Bid, 10.0, 0), (Side::Ask, 10.0, 1)]);
        assert_eq!(match_one_unit(&book).price, 10.0);

        let book = book_with(
            0,
            &[
                (Side::Bid, 12.0, 0),
                (Side::Bid, 11.0, 1),
                (Side::Ask, 9.0, 2),
                (Side::Ask, 10.0, 3),
            ],
        );
        let cand = match_one_unit(&book);
        assert_eq!((cand.bid.limit_price, cand.ask.limit_price), (12.0, 9.0));
        assert_eq!(cand.price, 10.5);
    }

    #[test]
    #[should_panic(expected = "uncrossed")]
    fn match_one_unit_rejects_uncrossed_book() {
        let book = book_with(0, &[(Side::Bid, 9.0, 0), (Side::Ask, 9.5, 1)]);
        match_one_unit(&book);
    }

    #[test]
    fn validate_trade_checks_both_sides_against_current_state() {
        let book = book_with(0, &[(Side::Bid, 10.0, 0), (Side::Ask, 10.0, 1)]);
        let cand = match_one_unit(&book);

        // Boundary is inclusive: cash exactly equal to the price is enough.
        let mut traders = vec![
            TraderState::new(0, 10.0, 0, 1),
            TraderState::new(1, 0.0, 1, 1),
        ];
        assert!(validate_trade(&traders, &cand));

        traders[0].cash = 9.99;
        assert!(!validate_trade(&traders, &cand));

        traders[0].cash = 10.0;
        traders[1].shares[0] = 0;
        assert!(!validate_trade(&traders, &cand));
    }

    #[test]
    fn finalize_executes_a_valid_trade() {
        let mut book = book_with(0, &[(Side::Bid, 10.5, 0), (Side::Ask, 9.5, 1)]);
        let mut traders = rich_traders(2);
        let cand = match_one_unit(&book);
        let valid = validate_trade(&traders, &cand);
        let trade = finalize_trade(&mut book, &mut traders, &cand, valid, 1, 1).unwrap();
        assert_eq!(trade.price, 10.0);
        assert!(book.is_empty());
        assert_eq!(traders[0].cash, 990.0);
        assert_eq!(traders[0].shares[0], 101);
        assert_eq!(traders[1].cash, 1010.0);
        assert_eq!(traders[1].shares[0], 99);
    }

    #[test]
    fn insolvent_buyer_loses_only_the_bid() {
        // Hand-traced three-order book: the broke buyer's bid is dropped,
        // the ask stays at its priority and matches the next bid.
        let mut book = book_with(
            0,
            &[(Side::Bid, 10.5, 0), (Side::Bid, 10.0, 1), (Side::Ask, 9.5, 2)],
        );
        let mut traders = vec![
            TraderState::new(0, 5.0, 0, 1),   // cannot pay 10.0
            TraderState::new(1, 100.0, 0, 1), // can pay
            TraderState::new(2, 0.0, 5, 1),   // has shares to sell
        ];

        let cand = match_one_unit(&book);
        assert_eq!(cand.bid.owner, 0);
        assert_eq!(cand.price, 10.0);
        let valid = validate_trade(&traders, &cand);
        assert!(!valid);
        assert!(finalize_trade(&mut book, &mut traders, &cand, valid, 1, 1).is_none());
        assert_eq!(book.bid_count(), 1);
        assert_eq!(book.ask_count(), 1, "feasible ask must survive");
        assert_eq!(traders[0].cash, 5.0, "no state change on rejection");

        // Re-run the loop: the surviving ask matches the next bid at 9.75.
        let cand = match_one_unit(&book);
        assert_eq!(cand.bid.owner, 1);
        assert_eq!(cand.price, 9.75);
        let valid = validate_trade(&traders, &cand);
        let trade = finalize_trade(&mut book, &mut traders, &cand, valid, 1, 1).unwrap();
        assert_eq!((trade.buyer, trade.seller), (1, 2));
        assert!(book.is_empty());
    }

    #[test]
    fn doubly_infeasible_candidate_drops_both_orders() {
        let mut book = book_with(0, &[(Side::Bid, 10.5, 0), (Side::Ask, 9.5, 1)]);
        let mut traders = vec![
            TraderState::new(0, 1.0, 0, 1), // cannot pay
            TraderState::new(1, 0.0, 0, 1), // nothing to deliver
        ];
        let cand = match_one_unit(&book);
        let valid = validate_trade(&traders, &cand);
        assert!(finalize_trade(&mut book, &mut traders, &cand, valid, 1, 1).is_none());
        assert!(book.is_empty());
    }

    #[test]
    fn sequential_clearing_depletes_budgets_in_asset_order() {
        // Trader 0 can afford exactly one buy but bids on both assets:
        // asset 0 settles, the asset-1 bid then fails validation.
        let mut books = vec![
            book_with(0, &[(Side::Bid, 10.0, 0), (Side::Ask, 10.0, 1)]),
            book_with(1, &[(Side::Bid, 10.0, 0), (Side::Ask, 10.0, 2)]),
        ];
        let mut traders = vec![
            TraderState::new(0, 10.0, 0, 2),
            TraderState::new(1, 0.0, 5, 2),
            TraderState::new(2, 0.0, 5, 2),
        ];
        let outcome = clear_sequential(&mut books, &mut traders, &[9.0, 9.0], 1, true);
        assert_eq!(outcome.volumes, vec![1, 0]);
        assert_eq!(outcome.closes, vec![10.0, 9.0]);
        assert_eq!(outcome.rejected, 1);
        assert_eq!(outcome.trades.len(), 1);
        assert_eq!(outcome.trades[0].asset, 0);
        assert_eq!(traders[0].cash, 0.0);
        assert_eq!(traders[0].shares, vec![1, 0]);
    }

    #[test]
    fn no_cross_carries_closes_forward() {
        let mut books = vec![
            book_with(0, &[(Side::Bid, 9.0, 0), (Side::Ask, 9.5, 1)]),
            OrderBook::new(1),
        ];
        let mut traders = rich_traders(2);
        let outcome = clear_sequential(&mut books, &mut traders, &[10.0, 11.0], 1, true);
        assert_eq!(outcome.closes, vec![10.0, 11.0]);
        assert_eq!(outcome.volumes, vec![0, 0]);
        assert!(outcome.trades.is_empty());
        assert_eq!(outcome.rejected, 0);
    }

    #[test]
    fn round_robin_grants_the_lowest_index_the_first_slot() {
        // Hand-traced two-asset schedule: trader 0 has cash for one buy and
        // crossing bids on both assets. Pass 1 visits asset 0 first, so the
        // asset-0 buy settles and the asset-1 attempt in the same pass is
        // rejected for insufficient cash.
        let mut books = vec![
            book_with(0, &[(Side::Bid, 10.0, 0), (Side::Ask, 10.0, 1)]),
            book_with(1, &[(Side::Bid, 10.0, 0), (Side::Ask, 10.0, 2)]),
        ];
        let mut traders = vec![
            TraderState::new(0, 10.0, 0, 2),
            TraderState::new(1, 0.0, 5, 2),
            TraderState::new(2, 0.0, 5, 2),
        ];
        let outcome =
            clear_parallel_deterministic(&mut books, &mut traders, &[9.0, 9.0], 1, true);
        assert_eq!(outcome.volumes, vec![1, 0]);
        assert_eq!(outcome.rejected, 1);
        assert_eq!(outcome.trades.len(), 1);
        assert_eq!(outcome.trades[0].asset, 0);
    }

    #[test]
    fn round_robin_interleaves_across_assets() {
        // Two crossing pairs on each asset; the round-robin must alternate
        // assets rather than exhausting asset 0 first.
        let mut books = vec![
            book_with(
                0,
                &[
                    (Side::Bid, 11.0, 0),
                    (Side::Bid, 10.5, 1),
                    (Side::Ask, 9.0, 2),
                    (Side::Ask, 9.5, 3),
                ],
            ),
            book_with(
                1,
                &[
                    (Side::Bid, 11.0, 1),
                    (Side::Bid, 10.5, 2),
                    (Side::Ask, 9.0, 3),
                    (Side::Ask, 9.5, 0),
                ],
            ),
        ];
        let mut traders = rich_traders(4);
        let outcome =
            clear_parallel_deterministic(&mut books, &mut traders, &[10.0, 10.0], 1, true);
        assert_eq!(outcome.volumes, vec![2, 2]);
        let visit_order: Vec<usize> = outcome.trades.iter().map(|t| t.asset).collect();
        assert_eq!(visit_order, vec![0, 1, 0, 1]);
        assert_eq!(
            outcome.trades.iter().map(|t| t.intra_tick_index).collect::<Vec<_>>(),
            vec![1, 1, 2, 2]
        );
    }

    fn trade_multiset(trades: &[Trade]) -> Vec<(usize, u32, u32, u64)> {
        let mut set: Vec<_> = trades
            .iter()
            .map(|t| (t.asset, t.buyer, t.seller, t.price.to_bits()))
            .collect();
        set.sort_unstable();
        set
    }

    #[test]
    fn modes_agree_when_constraints_are_slack() {
        // Every trader holds plenty of cash and shares, so validation never
        // trips and the executed trade set is schedule-independent.
        let seed = 99;
        let n_traders = 30;
        let closes = [10.0, 10.0, 10.0];
        let build = || {
            let mut books: Vec<OrderBook> = (0..3).map(OrderBook::new).collect();
            order_phase(&mut books, n_traders, &closes, seed, 1, 0.15);
            books
        };
        let run = |mode: Mode| {
            let mut books = build();
            let mut traders: Vec<TraderState> = (0..n_traders)
                .map(|i| TraderState::new(i, 1_000.0, 50, 3))
                .collect();
            let outcome = match mode {
                Mode::Sequential => {
                    clear_sequential(&mut books, &mut traders, &closes, 1, true)
                }
                Mode::ParallelDeterministic => {
                    clear_parallel_deterministic(&mut books, &mut traders, &closes, 1, true)
                }
                Mode::Parallel => {
                    clear_parallel(&mut books, &mut traders, &closes, 1, true).unwrap()
                }
            };
            (trade_multiset(&outcome.trades), traders, outcome.rejected)
        };
        let (seq, seq_traders, seq_rejected) = run(Mode::Sequential);
        let (rr, rr_traders, _) = run(Mode::ParallelDeterministic);
        let (par, par_traders, _) = run(Mode::Parallel);
        assert_eq!(seq_rejected, 0);
        assert!(!seq.is_empty());
        assert_eq!(seq, rr);
        assert_eq!(seq, par);
        // Same trades in a different order: shares match exactly, cash up to
        // floating-point summation order.
        for other in [&rr_traders, &par_traders] {
            for (a, b) in seq_traders.iter().zip(other.iter()) {
                assert_eq!(a.shares, b.shares);
                assert!((a.cash - b.cash).abs() <= 1e-9 * a.cash.max(1.0));
            }
        }
    }

    #[test]
    fn single_asset_modes_coincide() {
        let run = |mode: Mode| {
            let config = SimConfig {
                n_traders: 200,
                n_assets: 1,
                horizon: 50,
                initial_cash: 50.0,
                initial_shares: 5,
                initial_price: 10.0,
                sigma: 0.15,
                mode,
                seed: 31,
            };
            run_simulation(&config).unwrap().to_csv_string()
        };
        let seq = run(Mode::Sequential);
        assert_eq!(seq, run(Mode::ParallelDeterministic));
        assert_eq!(seq, run(Mode::Parallel));
    }

    #[test]
    fn zero_horizon_yields_an_empty_series() {
        let config = SimConfig {
            horizon: 0,
            n_traders: 10,
            ..SimConfig::default()
        };
        let series = run_simulation(&config).unwrap();
        assert!(series.is_empty());
    }

    #[test]
    fn invalid_config_is_rejected_before_tick_zero() {
        let config = SimConfig {
            sigma: 0.0,
            ..SimConfig::default()
        };
        assert!(matches!(
            run_simulation(&config),
            Err(SimError::Config(e)) if e.field == "sigma"
        ));
    }

    #[test]
    fn runs_are_reproducible_per_mode() {
        for mode in [Mode::Sequential, Mode::ParallelDeterministic] {
            let config = SimConfig {
                n_traders: 300,
                n_assets: 3,
                horizon: 40,
                initial_cash: 60.0,
                initial_shares: 5,
                initial_price: 10.0,
                sigma: 0.15,
                mode,
                seed: 7,
            };
            let a = run_simulation(&config).unwrap();
            let b = run_simulation(&config).unwrap();
            assert_eq!(a.to_csv_string(), b.to_csv_string(), "mode {mode}");
        }
    }

    #[test]
    fn parallel_preserves_the_submitted_order_flow() {
        let config = SimConfig {
            n_traders: 300,
            n_assets: 3,
            horizon: 30,
            initial_cash: 60.0,
            initial_shares: 5,
            initial_price: 10.0,
            sigma: 0.15,
            mode: Mode::Parallel,
            seed: 11,
        };
        let out = run_simulation_full(&config, false).unwrap();
        // Replaying the submission phase on the recorded closes must
        // reproduce every per-tick flow hash: clearing cannot leak into
        // submission.
        let mut prev = vec![config.initial_price; config.n_assets];
        for t in 0..out.series.len() {
            let expect = crate::agent::order_phase_hash(
                config.n_assets,
                config.n_traders,
                &prev,
                config.seed,
                (t + 1) as u32,
                config.sigma,
            );
            assert_eq!(out.order_flow_hashes[t], expect, "tick {}", t + 1);
            prev = out.series.closes_at(t).to_vec();
        }
    }

    fn assert_conserved(traders: &[TraderState], initial_cash: f64, initial_shares: u32) {
        let n = traders.len() as f64;
        let cash: f64 = traders.iter().map(|t| t.cash).sum();
        let expect = n * initial_cash;
        assert!(
            (cash - expect).abs() <= 1e-9 * expect.max(1.0),
            "cash drifted: {cash} vs {expect}"
        );
        for j in 0..traders[0].shares.len() {
            let shares: u64 = traders.iter().map(|t| u64::from(t.shares[j])).sum();
            assert_eq!(shares, traders.len() as u64 * u64::from(initial_shares));
        }
        for t in traders {
            assert!(t.cash >= 0.0, "negative cash for trader {}", t.trader_id);
        }
    }

    #[test]
    fn conservation_holds_in_every_mode_at_small_scale() {
        for mode in [Mode::Sequential, Mode::ParallelDeterministic, Mode::Parallel] {
            let config = SimConfig {
                n_traders: 150,
                n_assets: 4,
                horizon: 60,
                initial_cash: 35.0,
                initial_shares: 3,
                initial_price: 10.0,
                sigma: 0.15,
                mode,
                seed: 13,
            };
            let mut traders = initial_traders(&config);
            let mut books: Vec<OrderBook> = (0..config.n_assets).map(OrderBook::new).collect();
            let mut prev = vec![config.initial_price; config.n_assets];
            for tick in 1..=config.horizon {
                order_phase(
                    &mut books,
                    config.n_traders,
                    &prev,
                    config.seed,
                    tick,
                    config.sigma,
                );
                let outcome = match mode {
                    Mode::Sequential => {
                        clear_sequential(&mut books, &mut traders, &prev, tick, false)
                    }
                    Mode::ParallelDeterministic => {
                        clear_parallel_deterministic(&mut books, &mut traders, &prev, tick, false)
                    }
                    Mode::Parallel => {
                        clear_parallel(&mut books, &mut traders, &prev, tick, false).unwrap()
                    }
                };
                for book in &mut books {
                    book.reset();
                }
                assert_conserved(&traders, config.initial_cash, config.initial_shares);
                prev = outcome.closes;
            }
        }
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            /// Conservation, non-negativity, and bounded trade prices hold
            /// for arbitrary small configurations in every mode.
            #[test]
            fn invariants_hold_for_random_configs(
                seed in 0u64..1_000_000,
                n_traders in 2u32..60,
                n_assets in 1usize..5,
                cash in 5.0f64..80.0,
                shares in 0u32..6,
                mode_pick in 0usize..3,
            ) {
                let mode = [Mode::Sequential, Mode::ParallelDeterministic, Mode::Parallel][mode_pick];
                let config = SimConfig {
                    n_traders,
                    n_assets,
                    horizon: 12,
                    initial_cash: cash,
                    initial_shares: shares,
                    initial_price: 10.0,
                    sigma: 0.15,
                    mode,
                    seed,
                };
                let out = run_simulation_full(&config, true).unwrap();
                // Terminal conservation.
                let mut traders = initial_traders(&config);
                for trade in out.series.trades().unwrap() {
                    prop_assert!(trade.price > 0.0);
                    apply_trade(&mut traders, trade);
                }
                let total: f64 = traders.iter().map(|t| t.cash).sum();
                let expect = f64::from(n_traders) * cash;
                prop_assert!((total - expect).abs() <= 1e-9 * expect.max(1.0));
                for t in &traders {
                    prop_assert!(t.cash >= 0.0);
                }
                for j in 0..n_assets {
                    let sum: u64 = traders.iter().map(|t| u64::from(t.shares[j])).sum();
                    prop_assert_eq!(sum, u64::from(n_traders) * u64::from(shares));
                }
                // Carry-forward rule on the recorded series.
                for t in 1..out.series.len() {
                    for j in 0..n_assets {
                        if out.series.volumes_at(t)[j] == 0 {
                            prop_assert_eq!(
                                out.series.closes_at(t)[j],
                                out.series.closes_at(t - 1)[j]
                            );
                        }
                    }
                }
            }
        }
    }
}
