//! Price and return panels: CSV ingestion, validation, simple returns,
//! windowed covariance and a correlated GBM generator for synthetic data.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DATE_FORMAT: &str = "%Y-%m-%d";

/// Aligned daily closing prices, `N` tickers by `T + 1` dates.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    // row-major, one row per ticker
    prices: Vec<f64>,
}

impl PricePanel {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if tickers.len() < 2 {
            return Err(Error::InvalidPanel(format!(
                "need at least 2 tickers, got {}",
                tickers.len()
            )));
        }
        if dates.len() < 3 {
            return Err(Error::InvalidPanel(format!(
                "need at least 3 price dates, got {}",
                dates.len()
            )));
        }
        if rows.len() != tickers.len() {
            return Err(Error::InvalidPanel(format!(
                "{} tickers but {} price rows",
                tickers.len(),
                rows.len()
            )));
        }
        check_dates(&dates)?;
        let mut prices = Vec::with_capacity(tickers.len() * dates.len());
        for (ticker, row) in tickers.iter().zip(&rows) {
            if row.len() != dates.len() {
                return Err(Error::InvalidPanel(format!(
                    "row for {ticker} has {} prices, expected {}",
                    row.len(),
                    dates.len()
                )));
            }
            for (date, &price) in dates.iter().zip(row) {
                if !(price.is_finite() && price > 0.0) {
                    return Err(Error::NonPositivePrice {
                        ticker: ticker.clone(),
                        date: date.format(DATE_FORMAT).to_string(),
                        price,
                    });
                }
            }
            prices.extend_from_slice(row);
        }
        Ok(Self {
            tickers,
            dates,
            prices,
        })
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// Number of price observations (`T + 1`).
    pub fn n_dates(&self) -> usize {
        self.dates.len()
    }

    pub fn row(&self, asset: usize) -> &[f64] {
        let d = self.dates.len();
        &self.prices[asset * d..(asset + 1) * d]
    }
}

/// Daily simple returns, `N` tickers by `T` days.
///
/// Day `t` holds the return from date `t` to date `t + 1` of the source
/// price panel and is labelled with the later date.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnsPanel {
    tickers: Vec<String>,
    dates: Vec<NaiveDate>,
    returns: Vec<f64>,
}

impl ReturnsPanel {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>, rows: Vec<Vec<f64>>) -> Result<Self> {
        if tickers.is_empty() || rows.len() != tickers.len() {
            return Err(Error::InvalidPanel(format!(
                "{} tickers but {} return rows",
                tickers.len(),
                rows.len()
            )));
        }
        if dates.len() < 2 {
            return Err(Error::InvalidPanel(format!(
                "need at least 2 return days, got {}",
                dates.len()
            )));
        }
        check_dates(&dates)?;
        let mut returns = Vec::with_capacity(tickers.len() * dates.len());
        for (ticker, row) in tickers.iter().zip(&rows) {
            if row.len() != dates.len() {
                return Err(Error::InvalidPanel(format!(
                    "row for {ticker} has {} returns, expected {}",
                    row.len(),
                    dates.len()
                )));
            }
            if let Some(bad) = row.iter().find(|r| !(r.is_finite() && **r > -1.0)) {
                return Err(Error::InvalidPanel(format!(
                    "return {bad} for {ticker} is not finite or not above -1"
                )));
            }
            returns.extend_from_slice(row);
        }
        Ok(Self {
            tickers,
            dates,
            returns,
        })
    }

    /// Builds a panel from bare return rows, with tickers `A0000..` and
    /// synthetic weekday dates.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let days = rows.first().map_or(0, Vec::len);
        let tickers = (0..rows.len()).map(|i| format!("A{i:04}")).collect();
        Self::new(tickers, trading_days(days), rows)
    }

    pub fn tickers(&self) -> &[String] {
        &self.tickers
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn n_assets(&self) -> usize {
        self.tickers.len()
    }

    /// Number of return days `T`.
    pub fn n_days(&self) -> usize {
        self.dates.len()
    }

    pub fn row(&self, asset: usize) -> &[f64] {
        let t = self.dates.len();
        &self.returns[asset * t..(asset + 1) * t]
    }

    /// Copy of the panel with every return multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let rows = (0..self.n_assets())
            .map(|i| self.row(i).iter().map(|r| r * factor).collect())
            .collect();
        Self::new(self.tickers.clone(), self.dates.clone(), rows)
    }
}

fn check_dates(dates: &[NaiveDate]) -> Result<()> {
    for pair in dates.windows(2) {
        if pair[1] <= pair[0] {
            return Err(Error::NonMonotoneDates {
                date: pair[1].format(DATE_FORMAT).to_string(),
            });
        }
    }
    Ok(())
}

/// Consecutive weekdays starting Monday 2000-01-03.
pub fn trading_days(n: usize) -> Vec<NaiveDate> {
    let mut day = NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        if !matches!(day.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(day);
        }
        day += Duration::days(1);
    }
    out
}

/// A contiguous block of `length` return days starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    pub start: usize,
    pub length: usize,
}

impl Window {
    pub fn new(start: usize, length: usize) -> Result<Self> {
        if length < 2 {
            return Err(Error::InvalidWindow {
                start,
                length,
                days: 0,
            });
        }
        Ok(Self { start, length })
    }

    pub fn end(&self) -> usize {
        self.start + self.length
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.start..self.end()
    }

    /// Checks the window fits inside a panel of `days` return days.
    pub fn check(&self, days: usize) -> Result<()> {
        if self.length < 2 || self.end() > days {
            return Err(Error::InvalidWindow {
                start: self.start,
                length: self.length,
                days,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvLayout {
    /// `date,<ticker1>,<ticker2>,...`
    Wide,
    /// `date,ticker,price`
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Any missing cell is an error.
    #[default]
    Strict,
    /// Keep only dates present for every ticker.
    Intersect,
}

/// Loads a daily price panel from CSV. Tickers come back sorted.
pub fn load_price_csv(path: &Path, layout: CsvLayout, alignment: Alignment) -> Result<PricePanel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_price_csv(&text, layout, alignment)
}

/// Same as [`load_price_csv`] for in-memory text.
pub fn parse_price_csv(text: &str, layout: CsvLayout, alignment: Alignment) -> Result<PricePanel> {
    match layout {
        CsvLayout::Wide => parse_wide(text, alignment),
        CsvLayout::Long => parse_long(text, alignment),
    }
}

/// Guesses the layout from the header line.
pub fn detect_layout(text: &str) -> CsvLayout {
    let header = text.lines().next().unwrap_or("");
    let cols: Vec<String> = header
        .split(',')
        .map(|c| c.trim().to_ascii_lowercase())
        .collect();
    if cols == ["date", "ticker", "price"] {
        CsvLayout::Long
    } else {
        CsvLayout::Wide
    }
}

fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

fn parse_date(field: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(field, DATE_FORMAT)
        .map_err(|e| Error::Parse(format!("bad date {field:?}: {e}")))
}

fn parse_price(field: &str, ticker: &str, date: &str) -> Result<f64> {
    let price: f64 = field
        .parse()
        .map_err(|_| Error::Parse(format!("bad price {field:?} for {ticker} on {date}")))?;
    if !(price.is_finite() && price > 0.0) {
        return Err(Error::NonPositivePrice {
            ticker: ticker.to_string(),
            date: date.to_string(),
            price,
        });
    }
    Ok(price)
}

fn parse_wide(text: &str, alignment: Alignment) -> Result<PricePanel> {
    let mut reader = csv_reader(text);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    if headers.len() < 2 || !headers[0].eq_ignore_ascii_case("date") {
        return Err(Error::Parse(
            "wide layout header must be date,<ticker>,...".into(),
        ));
    }
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();

    let mut dates: Vec<NaiveDate> = Vec::new();
    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.len() != headers.len() {
            return Err(Error::Parse(format!(
                "row has {} fields, header has {}",
                record.len(),
                headers.len()
            )));
        }
        let date = parse_date(&record[0])?;
        if let Some(prev) = dates.last() {
            if date <= *prev {
                return Err(Error::NonMonotoneDates {
                    date: record[0].to_string(),
                });
            }
        }
        let row = columns
            .iter()
            .enumerate()
            .map(|(j, ticker)| {
                let field = &record[j + 1];
                if field.is_empty() {
                    Ok(None)
                } else {
                    parse_price(field, ticker, &record[0]).map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        dates.push(date);
        cells.push(row);
    }

    // Duplicate columns are merged when they agree cell by cell.
    let mut by_ticker: BTreeMap<&str, usize> = BTreeMap::new();
    for (j, ticker) in columns.iter().enumerate() {
        if let Some(&first) = by_ticker.get(ticker.as_str()) {
            if cells.iter().any(|row| row[first] != row[j]) {
                return Err(Error::Parse(format!(
                    "duplicate column {ticker} with conflicting prices"
                )));
            }
        } else {
            by_ticker.insert(ticker, j);
        }
    }

    let keep: Vec<usize> = match alignment {
        Alignment::Strict => {
            for (date, row) in dates.iter().zip(&cells) {
                for (&ticker, &j) in &by_ticker {
                    if row[j].is_none() {
                        return Err(Error::MissingCell {
                            ticker: ticker.to_string(),
                            date: date.format(DATE_FORMAT).to_string(),
                        });
                    }
                }
            }
            (0..dates.len()).collect()
        }
        Alignment::Intersect => (0..dates.len())
            .filter(|&r| by_ticker.values().all(|&j| cells[r][j].is_some()))
            .collect(),
    };

    let tickers: Vec<String> = by_ticker.keys().map(|t| t.to_string()).collect();
    let rows = by_ticker
        .values()
        .map(|&j| {
            keep.iter()
                .map(|&r| cells[r][j].unwrap_or(f64::NAN))
                .collect()
        })
        .collect();
    let dates = keep.iter().map(|&r| dates[r]).collect();
    PricePanel::new(tickers, dates, rows)
}

fn parse_long(text: &str, alignment: Alignment) -> Result<PricePanel> {
    let mut reader = csv_reader(text);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let names: Vec<String> = headers.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names != ["date", "ticker", "price"] {
        return Err(Error::Parse(
            "long layout header must be date,ticker,price".into(),
        ));
    }

    let mut series: BTreeMap<String, BTreeMap<NaiveDate, f64>> = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        if record.len() != 3 {
            return Err(Error::Parse(format!(
                "row has {} fields, expected 3",
                record.len()
            )));
        }
        let date = parse_date(&record[0])?;
        let ticker = record[1].to_string();
        let price = parse_price(&record[2], &ticker, &record[0])?;
        let entry = series.entry(ticker.clone()).or_default();
        if let Some(prev) = entry.insert(date, price) {
            if prev != price {
                return Err(Error::Parse(format!(
                    "conflicting duplicate price for {ticker} on {}",
                    &record[0]
                )));
            }
        }
    }

    let all_dates: BTreeSet<NaiveDate> = series.values().flat_map(|s| s.keys().copied()).collect();
    let dates: Vec<NaiveDate> = match alignment {
        Alignment::Strict => {
            for (ticker, s) in &series {
                if let Some(hole) = all_dates.iter().find(|d| !s.contains_key(d)) {
                    return Err(Error::MissingCell {
                        ticker: ticker.clone(),
                        date: hole.format(DATE_FORMAT).to_string(),
                    });
                }
            }
            all_dates.into_iter().collect()
        }
        Alignment::Intersect => all_dates
            .into_iter()
            .filter(|d| series.values().all(|s| s.contains_key(d)))
            .collect(),
    };

    let tickers: Vec<String> = series.keys().cloned().collect();
    let rows = series
        .values()
        .map(|s| dates.iter().map(|d| s[d]).collect())
        .collect();
    PricePanel::new(tickers, dates, rows)
}

/// Simple returns `p[t+1] / p[t] - 1`.
pub fn compute_returns(panel: &PricePanel) -> Result<ReturnsPanel> {
    let rows = (0..panel.n_assets())
        .map(|i| panel.row(i).windows(2).map(|p| p[1] / p[0] - 1.0).collect())
        .collect();
    ReturnsPanel::new(panel.tickers().to_vec(), panel.dates()[1..].to_vec(), rows)
}

/// Parameters of the equicorrelated GBM generator. Rates are per day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmSpec {
    pub n_assets: usize,
    /// Number of price observations, i.e. return days + 1.
    pub n_days: usize,
    pub drift_range: (f64, f64),
    pub vol_range: (f64, f64),
    pub pairwise_correlation: f64,
    pub initial_price: f64,
}

impl Default for GbmSpec {
    fn default() -> Self {
        Self {
            n_assets: 100,
            n_days: 2017,
            drift_range: (-0.002, 0.003),
            vol_range: (0.015, 0.02),
            pairwise_correlation: 0.5,
            initial_price: 100.0,
        }
    }
}

impl GbmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_assets < 2 {
            return Err(Error::DegenerateSpec(format!(
                "n_assets={} (need at least 2)",
                self.n_assets
            )));
        }
        if self.n_days < 3 {
            return Err(Error::DegenerateSpec(format!(
                "n_days={} (need at least 3)",
                self.n_days
            )));
        }
        let (mu_lo, mu_hi) = self.drift_range;
        let (sd_lo, sd_hi) = self.vol_range;
        if ![mu_lo, mu_hi, sd_lo, sd_hi].iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateSpec("ranges must be finite".into()));
        }
        if mu_lo > mu_hi {
            return Err(Error::DegenerateSpec("drift range is reversed".into()));
        }
        if sd_lo < 0.0 || sd_lo > sd_hi {
            return Err(Error::DegenerateSpec(
                "volatility range must satisfy 0 <= lo <= hi".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.pairwise_correlation) {
            return Err(Error::DegenerateSpec(
                "pairwise correlation must lie in [0, 1)".into(),
            ));
        }
        if !(self.initial_price.is_finite() && self.initial_price > 0.0) {
            return Err(Error::DegenerateSpec(
                "initial price must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// A generated panel together with the per-asset parameters drawn for it.
#[derive(Debug, Clone)]
pub struct GbmPanel {
    pub panel: PricePanel,
    pub drifts: Vec<f64>,
    pub vols: Vec<f64>,
}

fn uniform_in(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Correlated GBM prices. Log-returns of asset `i` are
/// `mu_i + sigma_i * (sqrt(rho) * z_market + sqrt(1 - rho) * z_i)`.
pub fn generate_gbm(spec: &GbmSpec, seed: u64) -> Result<GbmPanel> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_assets;
    let drifts: Vec<f64> = (0..n)
        .map(|_| uniform_in(&mut rng, spec.drift_range))
        .collect();
    let vols: Vec<f64> = (0..n)
        .map(|_| uniform_in(&mut rng, spec.vol_range))
        .collect();

    let common = spec.pairwise_correlation.sqrt();
    let idio = (1.0 - spec.pairwise_correlation).sqrt();
    let mut rows = vec![Vec::with_capacity(spec.n_days); n];
    let mut level = vec![spec.initial_price; n];
    for row in rows.iter_mut() {
        row.push(spec.initial_price);
    }
    for _ in 1..spec.n_days {
        let market: f64 = rng.sample(StandardNormal);
        for i in 0..n {
            let own: f64 = rng.sample(StandardNormal);
            let log_return = drifts[i] + vols[i] * (common * market + idio * own);
            level[i] *= log_return.exp();
            rows[i].push(level[i]);
        }
    }

    let tickers = (0..n).map(|i| format!("SYN{i:04}")).collect();
    let panel = PricePanel::new(tickers, trading_days(spec.n_days), rows)?;
    Ok(GbmPanel {
        panel,
        drifts,
        vols,
    })
}

pub fn generate_gbm_panel(spec: &GbmSpec, seed: u64) -> Result<PricePanel> {
    generate_gbm(spec, seed).map(|g| g.panel)
}

/// Mean that is exact for constant input.
pub(crate) fn shifted_mean(xs: &[f64]) -> f64 {
    let pivot = xs[0];
    pivot + xs.iter().map(|x| x - pivot).sum::<f64>() / xs.len() as f64
}

/// Sample covariance (divisor `P - 1`) of the windowed returns.
pub fn covariance_matrix(panel: &ReturnsPanel, window: Window) -> Result<Vec<Vec<f64>>> {
    window.check(panel.n_days())?;
    let n = panel.n_assets();
    let centered: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let xs = &panel.row(i)[window.range()];
            let mean = shifted_mean(xs);
            xs.iter().map(|x| x - mean).collect()
        })
        .collect();
    let denom = (window.length - 1) as f64;
    let mut cov = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let c = centered[i]
                .iter()
                .zip(&centered[j])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / denom;
            cov[i][j] = c;
            cov[j][i] = c;
        }
    }
    Ok(cov)
}
