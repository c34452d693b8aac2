//! Raw market inputs and per-interval feature extraction.
//!
//! Two kinds of input per market: trade prints and limit-order-book
//! snapshots. Each is aggregated onto a uniform interval grid into fixed-order
//! feature vectors: 6 values for transactions, 13 for the order book.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Unix epoch seconds.
pub type Epoch = i64;

/// Number of values in a transactions feature vector.
pub const TRADE_FEATURE_DIM: usize = 6;
/// Number of values in an order-book feature vector.
pub const BOOK_FEATURE_DIM: usize = 13;
/// Depth-quantile fractions at which book slopes are measured.
pub const SLOPE_FRACS: [f64; 3] = [0.01, 0.05, 0.10];

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed row at line {0}")]
    MalformedRow(usize),
    #[error("non-monotone timestamp at line {0}")]
    NonMonotoneTimestamp(usize),
    #[error("non-positive size at line {0}")]
    NonPositiveSize(usize),
    #[error("crossed book (best bid >= best ask) at line {0}")]
    CrossedBook(usize),
    #[error("no book snapshot before the first grid interval ends")]
    NoSnapshotBeforeGridStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    BuyInitiated,
    SellInitiated,
}

/// One executed trade with the exchange-provided aggressor flag.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeRecord {
    pub timestamp: Epoch,
    pub price: f64,
    pub size: f64,
    pub side: Side,
}

/// One book snapshot. Bids are price-descending from the best bid, asks
/// price-ascending from the best ask; all sizes positive.
#[derive(Debug, Clone, PartialEq)]
pub struct BookSnapshot {
    pub timestamp: Epoch,
    pub bids: Vec<(f64, f64)>,
    pub asks: Vec<(f64, f64)>,
}

impl BookSnapshot {
    pub fn best_bid(&self) -> f64 {
        self.bids[0].0
    }

    pub fn best_ask(&self) -> f64 {
        self.asks[0].0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Market {
    /// The market whose volume is being forecast.
    Target,
    /// The other market supplying cross-market features.
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataKind {
    Transactions,
    OrderBook,
}

/// Identifies one of the S = 4 data sources (2 markets x 2 data kinds).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceId {
    pub market: Market,
    pub kind: DataKind,
}

impl SourceId {
    /// Canonical source order used everywhere a per-source vector appears:
    /// target transactions, target book, external transactions, external book.
    pub const ALL: [SourceId; 4] = [
        SourceId { market: Market::Target, kind: DataKind::Transactions },
        SourceId { market: Market::Target, kind: DataKind::OrderBook },
        SourceId { market: Market::External, kind: DataKind::Transactions },
        SourceId { market: Market::External, kind: DataKind::OrderBook },
    ];

    pub fn dim(&self) -> usize {
        match self.kind {
            DataKind::Transactions => TRADE_FEATURE_DIM,
            DataKind::OrderBook => BOOK_FEATURE_DIM,
        }
    }

    pub fn index(&self) -> usize {
        Self::ALL.iter().position(|s| s == self).expect("source in canonical list")
    }
}

impl fmt::Display for SourceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let market = match self.market {
            Market::Target => "target",
            Market::External => "external",
        };
        let kind = match self.kind {
            DataKind::Transactions => "transactions",
            DataKind::OrderBook => "order_book",
        };
        write!(f, "{market}_{kind}")
    }
}

/// Per-interval feature vector for one source.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub source: SourceId,
    pub interval_start: Epoch,
    pub values: Vec<f64>,
}

/// Uniform half-open interval grid: interval `i` is
/// `[start + i*step, start + (i+1)*step)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid {
    pub start: Epoch,
    pub step: i64,
    pub len: usize,
}

impl Grid {
    pub fn interval_start(&self, i: usize) -> Epoch {
        self.start + i as Epoch * self.step
    }

    pub fn starts(&self) -> impl Iterator<Item = Epoch> + '_ {
        (0..self.len).map(|i| self.interval_start(i))
    }

    /// Index of the interval containing `t`, or None when outside the grid.
    pub fn index_of(&self, t: Epoch) -> Option<usize> {
        if t < self.start {
            return None;
        }
        let i = ((t - self.start) / self.step) as usize;
        (i < self.len).then_some(i)
    }
}

/// Trades CSV layout: header `timestamp,price,size,side`, side `B`/`S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeCsvSchema {
    /// Timestamps in milliseconds instead of seconds.
    pub ts_millis: bool,
}

impl Default for TradeCsvSchema {
    fn default() -> Self {
        TradeCsvSchema { ts_millis: false }
    }
}

/// Book CSV layout: header `timestamp,bid_px_1,bid_sz_1,...,ask_px_D,ask_sz_D`
/// with fixed depth D per file; missing deeper levels are empty fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookCsvSchema {
    pub ts_millis: bool,
}

impl Default for BookCsvSchema {
    fn default() -> Self {
        BookCsvSchema { ts_millis: false }
    }
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize) -> Result<T, MarketDataError> {
    field.trim().parse::<T>().map_err(|_| MarketDataError::MalformedRow(line))
}

fn scale_ts(raw: i64, millis: bool) -> Epoch {
    if millis {
        raw.div_euclid(1000)
    } else {
        raw
    }
}

/// Load a trades CSV, validating per-row invariants and timestamp order.
/// Timestamps must be non-decreasing; they are verified, never re-sorted.
pub fn load_trades(path: &Path, schema: TradeCsvSchema) -> Result<Vec<TradeRecord>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| MarketDataError::Io {
            path: path.display().to_string(),
            source: match e.into_kind() {
                csv::ErrorKind::Io(io) => io,
                _ => std::io::Error::other("csv open failed"),
            },
        })?;

    let mut out = Vec::new();
    let mut prev_ts: Option<Epoch> = None;
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2; // 1-based, after the header
        let record = record.map_err(|_| MarketDataError::MalformedRow(line))?;
        if record.len() != 4 {
            return Err(MarketDataError::MalformedRow(line));
        }
        let ts_raw: i64 = parse_field(&record[0], line)?;
        let timestamp = scale_ts(ts_raw, schema.ts_millis);
        let price: f64 = parse_field(&record[1], line)?;
        let size: f64 = parse_field(&record[2], line)?;
        let side = match record[3].trim() {
            "B" => Side::BuyInitiated,
            "S" => Side::SellInitiated,
            _ => return Err(MarketDataError::MalformedRow(line)),
        };
        if !(price > 0.0) || !price.is_finite() || !size.is_finite() {
            return Err(MarketDataError::MalformedRow(line));
        }
        if !(size > 0.0) {
            return Err(MarketDataError::NonPositiveSize(line));
        }
        if let Some(prev) = prev_ts {
            if timestamp < prev {
                return Err(MarketDataError::NonMonotoneTimestamp(line));
            }
        }
        prev_ts = Some(timestamp);
        out.push(TradeRecord { timestamp, price, size, side });
    }
    Ok(out)
}

/// Load a book CSV. Depth is inferred from the header; each snapshot must
/// satisfy the ordering invariants (descending bids, ascending asks, positive
/// sizes, at least one level per side, positive spread).
pub fn load_book(path: &Path, schema: BookCsvSchema) -> Result<Vec<BookSnapshot>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| MarketDataError::Io {
            path: path.display().to_string(),
            source: match e.into_kind() {
                csv::ErrorKind::Io(io) => io,
                _ => std::io::Error::other("csv open failed"),
            },
        })?;

    let headers = reader.headers().map_err(|_| MarketDataError::MalformedRow(1))?.clone();
    let n_cols = headers.len();
    if n_cols < 5 || (n_cols - 1) % 4 != 0 {
        return Err(MarketDataError::MalformedRow(1));
    }
    let depth = (n_cols - 1) / 4;

    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|_| MarketDataError::MalformedRow(line))?;
        if record.len() != n_cols {
            return Err(MarketDataError::MalformedRow(line));
        }
        let ts_raw: i64 = parse_field(&record[0], line)?;
        let timestamp = scale_ts(ts_raw, schema.ts_millis);

        let parse_side = |offset: usize| -> Result<Vec<(f64, f64)>, MarketDataError> {
            let mut levels = Vec::new();
            for lvl in 0..depth {
                let px_field = record[offset + 2 * lvl].trim();
                let sz_field = record[offset + 2 * lvl + 1].trim();
                if px_field.is_empty() && sz_field.is_empty() {
                    continue;
                }
                let px: f64 = parse_field(px_field, line)?;
                let sz: f64 = parse_field(sz_field, line)?;
                if !px.is_finite() || !sz.is_finite() || sz <= 0.0 {
                    return Err(MarketDataError::MalformedRow(line));
                }
                levels.push((px, sz));
            }
            Ok(levels)
        };

        let bids = parse_side(1)?;
        let asks = parse_side(1 + 2 * depth)?;
        if bids.is_empty() || asks.is_empty() {
            return Err(MarketDataError::MalformedRow(line));
        }
        if !bids.windows(2).all(|w| w[0].0 > w[1].0) || !asks.windows(2).all(|w| w[0].0 < w[1].0) {
            return Err(MarketDataError::MalformedRow(line));
        }
        if bids[0].0 >= asks[0].0 {
            return Err(MarketDataError::CrossedBook(line));
        }
        out.push(BookSnapshot { timestamp, bids, asks });
    }
    Ok(out)
}

/// Aggregate trades onto the grid. Feature order per interval:
/// buy volume, sell volume, |buy - sell| volume, buy count, sell count,
/// |#buy - #sell|. Intervals with no trades yield all-zero vectors.
pub fn compute_trade_features(trades: &[TradeRecord], grid: &Grid, source: SourceId) -> Vec<FeatureVector> {
    let mut acc = vec![[0.0f64; 4]; grid.len]; // buy_vol, sell_vol, buy_cnt, sell_cnt
    for tr in trades {
        if let Some(i) = grid.index_of(tr.timestamp) {
            match tr.side {
                Side::BuyInitiated => {
                    acc[i][0] += tr.size;
                    acc[i][2] += 1.0;
                }
                Side::SellInitiated => {
                    acc[i][1] += tr.size;
                    acc[i][3] += 1.0;
                }
            }
        }
    }
    acc.iter()
        .enumerate()
        .map(|(i, a)| FeatureVector {
            source,
            interval_start: grid.interval_start(i),
            values: vec![a[0], a[1], (a[0] - a[1]).abs(), a[2], a[3], (a[2] - a[3]).abs()],
        })
        .collect()
}

fn side_slope(levels: &[(f64, f64)], frac: f64) -> f64 {
    // At least ceil(frac * n) levels counted from the best price inward.
    let n = levels.len();
    let k = ((frac * n as f64).ceil() as usize).max(1).min(n);
    levels[..k].iter().map(|&(_, sz)| sz).sum()
}

/// The 13 book features in fixed order: spread; ask volume; bid volume;
/// |ask - bid| volume; ask slope at the three depth fractions; bid slope at
/// the three; |ask slope - bid slope| at the three.
pub fn compute_book_features(snapshot: &BookSnapshot, source: SourceId, interval_start: Epoch) -> FeatureVector {
    let spread = snapshot.best_ask() - snapshot.best_bid();
    let ask_vol: f64 = snapshot.asks.iter().map(|&(_, sz)| sz).sum();
    let bid_vol: f64 = snapshot.bids.iter().map(|&(_, sz)| sz).sum();
    let mut values = Vec::with_capacity(BOOK_FEATURE_DIM);
    values.push(spread);
    values.push(ask_vol);
    values.push(bid_vol);
    values.push((ask_vol - bid_vol).abs());
    let ask_slopes: Vec<f64> = SLOPE_FRACS.iter().map(|&q| side_slope(&snapshot.asks, q)).collect();
    let bid_slopes: Vec<f64> = SLOPE_FRACS.iter().map(|&q| side_slope(&snapshot.bids, q)).collect();
    values.extend_from_slice(&ask_slopes);
    values.extend_from_slice(&bid_slopes);
    for i in 0..SLOPE_FRACS.len() {
        values.push((ask_slopes[i] - bid_slopes[i]).abs());
    }
    FeatureVector { source, interval_start, values }
}

/// Align book snapshots to the grid: interval `i` gets the last snapshot with
/// `timestamp < interval end`, carrying the previous one forward over gaps.
pub fn latest_snapshot_per_interval<'a>(
    snapshots: &'a [BookSnapshot],
    grid: &Grid,
) -> Result<Vec<&'a BookSnapshot>, MarketDataError> {
    let mut out = Vec::with_capacity(grid.len);
    let mut cursor = 0usize;
    let mut current: Option<&BookSnapshot> = None;
    for i in 0..grid.len {
        let end = grid.interval_start(i) + grid.step;
        while cursor < snapshots.len() && snapshots[cursor].timestamp < end {
            current = Some(&snapshots[cursor]);
            cursor += 1;
        }
        match current {
            Some(snap) => out.push(snap),
            None => return Err(MarketDataError::NoSnapshotBeforeGridStart),
        }
    }
    Ok(out)
}

/// Book features for every grid interval via snapshot alignment.
pub fn compute_book_feature_grid(
    snapshots: &[BookSnapshot],
    grid: &Grid,
    source: SourceId,
) -> Result<Vec<FeatureVector>, MarketDataError> {
    let aligned = latest_snapshot_per_interval(snapshots, grid)?;
    Ok(aligned
        .iter()
        .enumerate()
        .map(|(i, snap)| compute_book_features(snap, source, grid.interval_start(i)))
        .collect())
}

/// Write a feature grid as CSV: `interval_start,source,market,f_1..f_13`
/// (transactions leave f_7..f_13 empty).
pub fn write_features_csv<W: std::io::Write>(mut w: W, features: &[FeatureVector]) -> std::io::Result<()> {
    write!(w, "interval_start,source,market")?;
    for i in 1..=BOOK_FEATURE_DIM {
        write!(w, ",f_{i}")?;
    }
    writeln!(w)?;
    for fv in features {
        let kind = match fv.source.kind {
            DataKind::Transactions => "transactions",
            DataKind::OrderBook => "order_book",
        };
        let market = match fv.source.market {
            Market::Target => "target",
            Market::External => "external",
        };
        write!(w, "{},{},{}", fv.interval_start, kind, market)?;
        for i in 0..BOOK_FEATURE_DIM {
            match fv.values.get(i) {
                Some(v) => write!(w, ",{v}")?,
                None => write!(w, ",")?,
            }
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Read a feature CSV produced by [`write_features_csv`].
pub fn read_features_csv(path: &Path) -> Result<Vec<FeatureVector>, MarketDataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| MarketDataError::Io {
            path: path.display().to_string(),
            source: match e.into_kind() {
                csv::ErrorKind::Io(io) => io,
                _ => std::io::Error::other("csv open failed"),
            },
        })?;
    let mut out = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|_| MarketDataError::MalformedRow(line))?;
        if record.len() != 3 + BOOK_FEATURE_DIM {
            return Err(MarketDataError::MalformedRow(line));
        }
        let interval_start: Epoch = parse_field(&record[0], line)?;
        let kind = match record[1].trim() {
            "transactions" => DataKind::Transactions,
            "order_book" => DataKind::OrderBook,
            _ => return Err(MarketDataError::MalformedRow(line)),
        };
        let market = match record[2].trim() {
            "target" => Market::Target,
            "external" => Market::External,
            _ => return Err(MarketDataError::MalformedRow(line)),
        };
        let source = SourceId { market, kind };
        let mut values = Vec::with_capacity(source.dim());
        for i in 0..source.dim() {
            values.push(parse_field(&record[3 + i], line)?);
        }
        out.push(FeatureVector { source, interval_start, values });
    }
    Ok(out)
}
