//! Per-asset closing-price and volume trajectories, plus the optional trade
//! log, with their CSV wire formats.
//!
//! Price CSV schema (fixed): header `tick,P_1,...,P_J,V_1,...,V_J`, one row
//! per tick, 1-based tick numbers, prices printed with 6 decimal places.
//! Trade CSV schema: `tick,asset,k,buyer,seller,price,qty` with zero-based
//! asset indices and `k` the per-(tick, asset) trade counter starting at 1.

use std::io::{self, BufRead, Write};

use thiserror::Error;

use super::Trade;

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl SeriesError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        Self::Parse {
            line,
            message: message.into(),
        }
    }
}

/// Closing prices and traded volumes, one row per tick.
#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    n_assets: usize,
    closes: Vec<Vec<f64>>,
    volumes: Vec<Vec<u32>>,
    trades: Option<Vec<Trade>>,
}

impl PriceSeries {
    pub fn new(n_assets: usize, record_trades: bool) -> Self {
        Self {
            n_assets,
            closes: Vec::new(),
            volumes: Vec::new(),
            trades: record_trades.then(Vec::new),
        }
    }

    pub fn n_assets(&self) -> usize {
        self.n_assets
    }

    /// Number of recorded ticks.
    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    /// Append one tick of closes and volumes.
    ///
    /// A zero-volume asset must carry its close forward unchanged; that is
    /// checked here because every producer is required to honor it.
    pub fn push_tick(&mut self, closes: Vec<f64>, volumes: Vec<u32>) {
        assert_eq!(closes.len(), self.n_assets);
        assert_eq!(volumes.len(), self.n_assets);
        if let Some(prev) = self.closes.last() {
            for j in 0..self.n_assets {
                debug_assert!(
                    volumes[j] > 0 || closes[j] == prev[j],
                    "zero-volume close must carry forward (asset {j})"
                );
            }
        }
        self.closes.push(closes);
        self.volumes.push(volumes);
    }

    pub fn extend_trades(&mut self, trades: impl IntoIterator<Item = Trade>) {
        if let Some(log) = self.trades.as_mut() {
            log.extend(trades);
        }
    }

    pub fn closes_at(&self, tick: usize) -> &[f64] {
        &self.closes[tick]
    }

    pub fn volumes_at(&self, tick: usize) -> &[u32] {
        &self.volumes[tick]
    }

    /// One asset's close trajectory as a column.
    pub fn asset_closes(&self, asset: usize) -> Vec<f64> {
        self.closes.iter().map(|row| row[asset]).collect()
    }

    pub fn asset_volume_total(&self, asset: usize) -> u64 {
        self.volumes.iter().map(|row| u64::from(row[asset])).sum()
    }

    /// Last-tick closes, if any ticks were recorded.
    pub fn terminal_closes(&self) -> Option<&[f64]> {
        self.closes.last().map(|row| row.as_slice())
    }

    pub fn trades(&self) -> Option<&[Trade]> {
        self.trades.as_deref()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "tick")?;
        for j in 1..=self.n_assets {
            write!(w, ",P_{j}")?;
        }
        for j in 1..=self.n_assets {
            write!(w, ",V_{j}")?;
        }
        writeln!(w)?;
        for (t, (closes, volumes)) in self.closes.iter().zip(&self.volumes).enumerate() {
            write!(w, "{}", t + 1)?;
            for c in closes {
                write!(w, ",{c:.6}")?;
            }
            for v in volumes {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec cannot fail");
        String::from_utf8(buf).expect("csv output is ascii")
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, SeriesError> {
        let mut lines = r.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| SeriesError::parse(1, "empty file"))?;
        let header = header?;
        let cols: Vec<&str> = header.trim_end().split(',').collect();
        if cols.len() < 3 || cols.len() % 2 == 0 || cols[0] != "tick" {
            return Err(SeriesError::parse(
                1,
                format!("header must be tick,P_1,...,P_J,V_1,...,V_J, got `{header}`"),
            ));
        }
        let n_assets = (cols.len() - 1) / 2;
        for j in 1..=n_assets {
            if cols[j] != format!("P_{j}") || cols[n_assets + j] != format!("V_{j}") {
                return Err(SeriesError::parse(
                    1,
                    format!("unexpected column names in `{header}`"),
                ));
            }
        }
        let mut series = PriceSeries::new(n_assets, false);
        for (idx, line) in lines {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + 2 * n_assets {
                return Err(SeriesError::parse(
                    lineno,
                    format!("expected {} fields, got {}", 1 + 2 * n_assets, fields.len()),
                ));
            }
            let mut closes = Vec::with_capacity(n_assets);
            for f in &fields[1..=n_assets] {
                let v: f64 = f
                    .parse()
                    .map_err(|e| SeriesError::parse(lineno, format!("bad price `{f}`: {e}")))?;
                if !(v > 0.0) {
                    return Err(SeriesError::parse(lineno, format!("non-positive price {v}")));
                }
                closes.push(v);
            }
            let mut volumes = Vec::with_capacity(n_assets);
            for f in &fields[n_assets + 1..] {
                let v: u32 = f
                    .parse()
                    .map_err(|e| SeriesError::parse(lineno, format!("bad volume `{f}`: {e}")))?;
                volumes.push(v);
            }
            series.closes.push(closes);
            series.volumes.push(volumes);
        }
        Ok(series)
    }

    pub fn from_csv_str(s: &str) -> Result<Self, SeriesError> {
        Self::read_csv(s.as_bytes())
    }

    pub fn write_trades_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "tick,asset,k,buyer,seller,price,qty")?;
        for t in self.trades.as_deref().unwrap_or(&[]) {
            writeln!(
                w,
                "{},{},{},{},{},{:.6},{}",
                t.tick, t.asset, t.intra_tick_index, t.buyer, t.seller, t.price, t.quantity
            )?;
        }
        Ok(())
    }
}
