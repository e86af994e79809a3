//! The two experiments: non-overlapping annual windows with regression
//! diagnostics, and rolling windows tracking the raw optimum over time.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{shifted_mean, ReturnsPanel, Window};
use crate::portfolio::{
    fill_portfolio_series, redraw_degenerate, series_sharpe, stream_key, PortfolioSample,
    ResamplePolicy, Sampler, SamplingPlan,
};
use crate::quantile::{
    build_quantile_curve, check_quantiles, quantiles_in_place, raw_optimum, OptimaRecord,
    QuantileCurve,
};
use crate::regression::{compare_models, ols_fit, ModelComparison, RegressionFit};
use crate::DEFAULT_QUANTILES;

/// Salt for the substreams that replace zero-variance draws in the rolling
/// engine, keeping them apart from the main per-`k` streams.
const REDRAW_SALT: u64 = 0x5EED_0F2E_D2A3;

/// Windows processed together by the prefix-sum engine.
const WINDOW_BLOCK: usize = 64;

/// `floor(days / period)` consecutive windows from day 0; the remainder is
/// dropped.
pub fn annual_partition(days: usize, period: usize) -> Result<Vec<Window>> {
    if period < 2 || days < period {
        return Err(Error::TooShort { days, period });
    }
    (0..days / period)
        .map(|i| Window::new(i * period, period))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualParams {
    pub period: usize,
    pub quantiles: Vec<f64>,
    pub alpha: f64,
    /// Bonferroni hypothesis count; defaults to quantiles × windows.
    pub bonferroni_m: Option<usize>,
}

impl Default for AnnualParams {
    fn default() -> Self {
        Self {
            period: 252,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            alpha: 0.05,
            bonferroni_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualStudyRecord {
    pub year_index: usize,
    pub window: Window,
    pub q: f64,
    pub comparison: ModelComparison,
    pub optima: OptimaRecord,
}

impl AnnualStudyRecord {
    pub fn linear(&self) -> &RegressionFit {
        &self.comparison.linear
    }

    pub fn quadratic(&self) -> &RegressionFit {
        &self.comparison.quadratic
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualStudy {
    /// One curve per year; `records[i].year_index` indexes into this.
    pub curves: Vec<QuantileCurve>,
    /// Year-major, then quantile order.
    pub records: Vec<AnnualStudyRecord>,
    pub m: usize,
}

impl AnnualStudy {
    pub fn curve_of(&self, record: &AnnualStudyRecord) -> &QuantileCurve {
        &self.curves[record.year_index]
    }
}

/// Fits, model comparison and optima for each `q` of one curve.
fn analyse_curve(
    curve: &QuantileCurve,
    year_index: usize,
    alpha: f64,
    m: usize,
) -> Result<Vec<AnnualStudyRecord>> {
    let x: Vec<f64> = curve.k_values().iter().map(|&k| k as f64).collect();
    curve
        .quantiles()
        .iter()
        .map(|&q| {
            let y = curve.column(q)?;
            let linear = ols_fit(&x, &y, 1)?;
            let quadratic = ols_fit(&x, &y, 2)?;
            let comparison = compare_models(&linear, &quadratic, alpha, m)?;
            let optima = OptimaRecord::from_curve(curve, q, linear.slope())?;
            Ok(AnnualStudyRecord {
                year_index,
                window: curve.window,
                q,
                comparison,
                optima,
            })
        })
        .collect()
}

pub fn run_annual_study(
    panel: &ReturnsPanel,
    plan: &SamplingPlan,
    params: &AnnualParams,
) -> Result<AnnualStudy> {
    plan.validate(panel.n_assets())?;
    check_quantiles(&params.quantiles)?;
    let windows = annual_partition(panel.n_days(), params.period)?;
    let m = params
        .bonferroni_m
        .unwrap_or(params.quantiles.len() * windows.len());

    let mut curves = Vec::with_capacity(windows.len());
    let mut records = Vec::with_capacity(windows.len() * params.quantiles.len());
    for (year, &window) in windows.iter().enumerate() {
        let curve = build_quantile_curve(panel, window, plan, &params.quantiles)?;
        records.extend(analyse_curve(&curve, year, params.alpha, m)?);
        curves.push(curve);
    }
    Ok(AnnualStudy { curves, records, m })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingParams {
    pub period: usize,
    pub stride: usize,
    pub quantiles: Vec<f64>,
}

impl Default for RollingParams {
    fn default() -> Self {
        Self {
            period: 90,
            stride: 1,
            quantiles: DEFAULT_QUANTILES.to_vec(),
        }
    }
}

/// How the fixed-across-windows engine evaluates window Sharpe ratios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RollingEvaluation {
    /// O(1) per window from prefix sums of the portfolio returns.
    #[default]
    PrefixSums,
    /// Recompute each window's portfolio series from scratch.
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingSeries {
    pub window_starts: Vec<usize>,
    pub period: usize,
    pub stride: usize,
    pub quantiles: Vec<f64>,
    pub k_min: usize,
    pub k_max: usize,
    /// `k0[j][w]`: raw optimum for `quantiles[j]` in window `w`.
    pub k0: Vec<Vec<usize>>,
    pub curves: Vec<QuantileCurve>,
}

impl RollingSeries {
    pub fn k0_for(&self, q: f64) -> Result<&[usize]> {
        let j = self
            .quantiles
            .iter()
            .position(|&x| (x - q).abs() < 1e-12)
            .ok_or(Error::InvalidQuantile(q))?;
        Ok(&self.k0[j])
    }
}

fn rolling_windows(days: usize, period: usize, stride: usize) -> Result<Vec<Window>> {
    if stride == 0 {
        return Err(Error::Config("stride must be at least 1".into()));
    }
    if period < 2 || days < period {
        return Err(Error::TooShort { days, period });
    }
    (0..=days - period)
        .step_by(stride)
        .map(|s| Window::new(s, period))
        .collect()
}

pub fn run_rolling_study(
    panel: &ReturnsPanel,
    plan: &SamplingPlan,
    params: &RollingParams,
) -> Result<RollingSeries> {
    run_rolling_study_with(panel, plan, params, RollingEvaluation::default())
}

/// Rolling study with an explicit evaluation path. The path only matters
/// for the fixed-across-windows policy.
pub fn run_rolling_study_with(
    panel: &ReturnsPanel,
    plan: &SamplingPlan,
    params: &RollingParams,
    evaluation: RollingEvaluation,
) -> Result<RollingSeries> {
    plan.validate(panel.n_assets())?;
    check_quantiles(&params.quantiles)?;
    let windows = rolling_windows(panel.n_days(), params.period, params.stride)?;

    let curves: Vec<QuantileCurve> = match plan.resample_policy {
        ResamplePolicy::PerWindow => windows
            .iter()
            .map(|&w| build_quantile_curve(panel, w, plan, &params.quantiles))
            .collect::<Result<_>>()?,
        ResamplePolicy::FixedAcrossWindows => {
            fixed_sample_curves(panel, plan, &windows, &params.quantiles, evaluation)?
        }
    };

    let k0 = params
        .quantiles
        .iter()
        .map(|&q| curves.iter().map(|c| raw_optimum(c, q)).collect())
        .collect::<Result<_>>()?;
    Ok(RollingSeries {
        window_starts: windows.iter().map(|w| w.start).collect(),
        period: params.period,
        stride: params.stride,
        quantiles: params.quantiles.clone(),
        k_min: plan.k_min,
        k_max: plan.k_max,
        k0,
        curves,
    })
}

/// Prefix sums of one portfolio's deviations from its full-sample mean.
struct PrefixSeries {
    centre: f64,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl PrefixSeries {
    fn build(series: &[f64]) -> Self {
        let centre = shifted_mean(series);
        let mut sum = Vec::with_capacity(series.len() + 1);
        let mut sum_sq = Vec::with_capacity(series.len() + 1);
        let (mut s1, mut s2) = (0.0, 0.0);
        sum.push(s1);
        sum_sq.push(s2);
        for x in series {
            let d = x - centre;
            s1 += d;
            s2 += d * d;
            sum.push(s1);
            sum_sq.push(s2);
        }
        Self {
            centre,
            sum,
            sum_sq,
        }
    }

    /// `None` when cancellation is too severe to trust the prefix sums.
    fn sharpe(&self, window: Window) -> Option<f64> {
        let (a, b) = (window.start, window.end());
        let p = window.length as f64;
        let dev = self.sum[b] - self.sum[a];
        let dev_sq = self.sum_sq[b] - self.sum_sq[a];
        let ss = dev_sq - dev * dev / p;
        if ss.is_nan() || ss <= 1e-8 * dev_sq {
            return None;
        }
        let sd = (ss / (p - 1.0)).sqrt();
        let total = dev + p * self.centre;
        Some(total / (sd * p.sqrt()))
    }
}

/// Sharpe values of every sample in one window, with zero-variance draws
/// replaced from a window-specific substream.
fn window_sharpes(
    panel: &ReturnsPanel,
    samples: &[PortfolioSample],
    prefixes: Option<&[PrefixSeries]>,
    k: usize,
    window: Window,
    seed: u64,
    buf: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    let mut values: Vec<Option<f64>> = Vec::with_capacity(samples.len());
    for (i, sample) in samples.iter().enumerate() {
        let fast = prefixes.and_then(|p| p[i].sharpe(window));
        let v = match fast {
            Some(v) => Some(v),
            None => {
                buf.resize(window.length, 0.0);
                fill_portfolio_series(panel, sample.indices(), window.range(), buf);
                match series_sharpe(buf) {
                    Ok(v) => Some(v),
                    Err(Error::ZeroVariance) => None,
                    Err(e) => return Err(e),
                }
            }
        };
        values.push(v);
    }
    if values.iter().any(Option::is_none) {
        let mut sampler = Sampler::new(
            panel.n_assets(),
            stream_key(seed ^ REDRAW_SALT, window.start, k),
        );
        redraw_degenerate(panel, k, window, &mut sampler, &mut values)?;
    }
    Ok(values.into_iter().map(|v| v.expect("filled")).collect())
}

/// Curves for every window from one sample set per `k`.
///
/// The samples for `k` come from the same substream a single window at day 0
/// would use, so a one-window rolling run matches the annual-style curve.
fn fixed_sample_curves(
    panel: &ReturnsPanel,
    plan: &SamplingPlan,
    windows: &[Window],
    quantiles: &[f64],
    evaluation: RollingEvaluation,
) -> Result<Vec<QuantileCurve>> {
    let k_values = plan.k_values();
    let nq = quantiles.len();
    let days = panel.n_days();
    // rows[w][k_index * nq + j]
    let mut rows: Vec<Vec<f64>> = vec![vec![0.0; k_values.len() * nq]; windows.len()];

    for (ki, &k) in k_values.iter().enumerate() {
        let mut sampler = Sampler::new(panel.n_assets(), stream_key(plan.seed, 0, k));
        let samples: Vec<PortfolioSample> = (0..plan.n_samples).map(|_| sampler.draw(k)).collect();

        let prefixes: Option<Vec<PrefixSeries>> = match evaluation {
            RollingEvaluation::PrefixSums => Some(
                samples
                    .par_iter()
                    .map_init(
                        || vec![0.0; days],
                        |buf, s| {
                            fill_portfolio_series(panel, s.indices(), 0..days, buf);
                            PrefixSeries::build(buf)
                        },
                    )
                    .collect(),
            ),
            RollingEvaluation::Direct => None,
        };

        let block_results: Vec<Vec<Vec<f64>>> = windows
            .par_chunks(WINDOW_BLOCK)
            .map(|block| {
                let mut buf = Vec::new();
                block
                    .iter()
                    .map(|&w| {
                        let mut values = window_sharpes(
                            panel,
                            &samples,
                            prefixes.as_deref(),
                            k,
                            w,
                            plan.seed,
                            &mut buf,
                        )?;
                        Ok(quantiles_in_place(&mut values, quantiles))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;

        for (row, qs) in rows.iter_mut().zip(block_results.into_iter().flatten()) {
            row[ki * nq..(ki + 1) * nq].copy_from_slice(&qs);
        }
    }

    windows
        .iter()
        .zip(rows)
        .map(|(&w, flat)| {
            let per_k = flat.chunks(nq).map(<[f64]>::to_vec).collect();
            QuantileCurve::new(w, k_values.clone(), quantiles.to_vec(), per_k)
        })
        .collect()
}

/// Nonzero counts of the raw optimum across windows for quantile `q`.
pub fn k0_histogram(series: &RollingSeries, q: f64) -> Result<BTreeMap<usize, usize>> {
    let mut counts = BTreeMap::new();
    for &k in series.k0_for(q)? {
        *counts.entry(k).or_insert(0) += 1;
    }
    Ok(counts)
}
