//! Equal-weight portfolio sampling and windowed Sharpe ratios.
//!
//! The Sharpe ratio of a window is the window-total portfolio return over the
//! window-scaled daily volatility, `sum(r_p) / (s_p * sqrt(P))`, with a zero
//! risk-free rate. Any other horizon convention differs from this one by a
//! positive factor per window, which leaves every argmax and sign downstream
//! unchanged.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{ReturnsPanel, Window};

/// Redraw cap for portfolios whose window returns have zero variance.
pub const MAX_REDRAWS: usize = 100;

/// Sorted, distinct asset indices of one equally weighted portfolio.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PortfolioSample {
    indices: Vec<usize>,
}

impl PortfolioSample {
    pub fn new(mut indices: Vec<usize>, n_assets: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidPlan("empty portfolio".into()));
        }
        indices.sort_unstable();
        if indices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidPlan("duplicate asset in portfolio".into()));
        }
        if let Some(&last) = indices.last() {
            if last >= n_assets {
                return Err(Error::InvalidPlan(format!(
                    "asset index {last} out of range for {n_assets} assets"
                )));
            }
        }
        Ok(Self { indices })
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResamplePolicy {
    /// Fresh portfolios for every window.
    PerWindow,
    /// One set of portfolios per `k`, reused by every rolling window.
    #[default]
    FixedAcrossWindows,
}

impl std::str::FromStr for ResamplePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-window" => Ok(Self::PerWindow),
            "fixed-across-windows" | "fixed" => Ok(Self::FixedAcrossWindows),
            other => Err(Error::Config(format!("unknown resample policy {other:?}"))),
        }
    }
}

impl std::fmt::Display for ResamplePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PerWindow => "per-window",
            Self::FixedAcrossWindows => "fixed-across-windows",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub n_samples: usize,
    pub k_min: usize,
    pub k_max: usize,
    pub seed: u64,
    pub resample_policy: ResamplePolicy,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        Self {
            n_samples: 1000,
            k_min: 10,
            k_max: 100,
            seed: 0,
            resample_policy: ResamplePolicy::default(),
        }
    }
}

impl SamplingPlan {
    pub fn validate(&self, n_assets: usize) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidPlan("n_samples must be at least 1".into()));
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(Error::InvalidPlan(format!(
                "need 2 <= k_min <= k_max, got {}..{}",
                self.k_min, self.k_max
            )));
        }
        if self.k_max > n_assets {
            return Err(Error::KTooLarge {
                k: self.k_max,
                n: n_assets,
            });
        }
        Ok(())
    }

    pub fn k_values(&self) -> Vec<usize> {
        (self.k_min..=self.k_max).collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Substream key for the portfolios of cardinality `k` in the window
/// starting at `window_start`.
pub fn stream_key(seed: u64, window_start: usize, k: usize) -> u64 {
    let h = splitmix64(seed);
    let h = splitmix64(h ^ window_start as u64);
    splitmix64(h ^ (k as u64).rotate_left(32))
}

/// Uniform k-subsets by partial Fisher–Yates over a persistent permutation.
pub(crate) struct Sampler {
    rng: ChaCha8Rng,
    perm: Vec<usize>,
}

impl Sampler {
    pub(crate) fn new(n_assets: usize, key: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(key),
            perm: (0..n_assets).collect(),
        }
    }

    pub(crate) fn draw(&mut self, k: usize) -> PortfolioSample {
        let n = self.perm.len();
        for i in 0..k {
            let j = self.rng.random_range(i..n);
            self.perm.swap(i, j);
        }
        let mut indices = self.perm[..k].to_vec();
        indices.sort_unstable();
        PortfolioSample { indices }
    }
}

/// `n_samples` independent uniform draws from the k-subsets of `0..n_assets`.
/// Draws are i.i.d., so the same portfolio may appear more than once.
pub fn sample_portfolios(
    n_assets: usize,
    k: usize,
    n_samples: usize,
    key: u64,
) -> Result<Vec<PortfolioSample>> {
    if k > n_assets {
        return Err(Error::KTooLarge { k, n: n_assets });
    }
    if k == 0 {
        return Err(Error::InvalidPlan("k must be at least 1".into()));
    }
    let mut sampler = Sampler::new(n_assets, key);
    Ok((0..n_samples).map(|_| sampler.draw(k)).collect())
}

/// Equal-weight portfolio returns over `range`, written into `out`.
///
/// Accumulates member deviations from the first member so that a portfolio of
/// identical members reproduces their series exactly.
pub(crate) fn fill_portfolio_series(
    panel: &ReturnsPanel,
    members: &[usize],
    range: std::ops::Range<usize>,
    out: &mut [f64],
) {
    let anchor = &panel.row(members[0])[range.clone()];
    out.fill(0.0);
    for &m in &members[1..] {
        let row = &panel.row(m)[range.clone()];
        for ((acc, x), a) in out.iter_mut().zip(row).zip(anchor) {
            *acc += x - a;
        }
    }
    let k = members.len() as f64;
    for (acc, a) in out.iter_mut().zip(anchor) {
        *acc = a + *acc / k;
    }
}

fn check_sample(panel: &ReturnsPanel, sample: &PortfolioSample, window: Window) -> Result<()> {
    window.check(panel.n_days())?;
    match sample.indices.last() {
        Some(&last) if last < panel.n_assets() => Ok(()),
        Some(_) => Err(Error::KTooLarge {
            k: sample.len(),
            n: panel.n_assets(),
        }),
        None => Err(Error::InvalidPlan("empty portfolio".into())),
    }
}

pub fn portfolio_return_series(
    panel: &ReturnsPanel,
    sample: &PortfolioSample,
    window: Window,
) -> Result<Vec<f64>> {
    check_sample(panel, sample, window)?;
    let mut out = vec![0.0; window.length];
    fill_portfolio_series(panel, &sample.indices, window.range(), &mut out);
    Ok(out)
}

/// Sharpe ratio of a portfolio return series: total return over
/// `stddev * sqrt(len)`.
pub fn series_sharpe(series: &[f64]) -> Result<f64> {
    let p = series.len();
    if p < 2 {
        return Err(Error::InsufficientData(format!(
            "Sharpe ratio needs at least 2 observations, got {p}"
        )));
    }
    let pivot = series[0];
    let mean_dev = series.iter().map(|x| x - pivot).sum::<f64>() / p as f64;
    let ss: f64 = series
        .iter()
        .map(|x| {
            let d = x - pivot - mean_dev;
            d * d
        })
        .sum();
    if ss == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let sd = (ss / (p - 1) as f64).sqrt();
    let total: f64 = series.iter().sum();
    let sharpe = total / (sd * (p as f64).sqrt());
    if sharpe.is_finite() {
        Ok(sharpe)
    } else {
        Err(Error::ZeroVariance)
    }
}

pub fn sharpe_ratio(panel: &ReturnsPanel, sample: &PortfolioSample, window: Window) -> Result<f64> {
    series_sharpe(&portfolio_return_series(panel, sample, window)?)
}

fn eval_sharpe(
    panel: &ReturnsPanel,
    sample: &PortfolioSample,
    window: Window,
    buf: &mut Vec<f64>,
) -> Result<f64> {
    buf.resize(window.length, 0.0);
    fill_portfolio_series(panel, sample.indices(), window.range(), buf);
    series_sharpe(buf)
}

/// Replaces zero-variance draws by fresh ones from `sampler`, in slot order.
pub(crate) fn redraw_degenerate(
    panel: &ReturnsPanel,
    k: usize,
    window: Window,
    sampler: &mut Sampler,
    values: &mut [Option<f64>],
) -> Result<()> {
    let mut buf = Vec::with_capacity(window.length);
    for slot in values.iter_mut().filter(|v| v.is_none()) {
        let mut attempts = 0;
        while slot.is_none() {
            if attempts == MAX_REDRAWS {
                return Err(Error::SamplingExhausted {
                    k,
                    window_start: window.start,
                    attempts,
                });
            }
            attempts += 1;
            let sample = sampler.draw(k);
            match eval_sharpe(panel, &sample, window, &mut buf) {
                Ok(v) => *slot = Some(v),
                Err(Error::ZeroVariance) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(())
}

/// Sharpe ratios of `plan.n_samples` random k-portfolios over `window`.
///
/// Portfolios are drawn from the substream keyed by `(plan.seed,
/// window.start, k)`, so the output does not depend on evaluation order or
/// on the number of worker threads.
pub fn sharpe_distribution(
    panel: &ReturnsPanel,
    k: usize,
    window: Window,
    plan: &SamplingPlan,
) -> Result<Vec<f64>> {
    sharpe_distribution_keyed(
        panel,
        k,
        window,
        plan.n_samples,
        stream_key(plan.seed, window.start, k),
    )
}

pub(crate) fn sharpe_distribution_keyed(
    panel: &ReturnsPanel,
    k: usize,
    window: Window,
    n_samples: usize,
    key: u64,
) -> Result<Vec<f64>> {
    window.check(panel.n_days())?;
    if k > panel.n_assets() {
        return Err(Error::KTooLarge {
            k,
            n: panel.n_assets(),
        });
    }
    if k == 0 || n_samples == 0 {
        return Err(Error::InvalidPlan("need k >= 1 and n_samples >= 1".into()));
    }
    let mut sampler = Sampler::new(panel.n_assets(), key);
    let samples: Vec<PortfolioSample> = (0..n_samples).map(|_| sampler.draw(k)).collect();
    let mut values: Vec<Option<f64>> = samples
        .par_iter()
        .map_init(Vec::new, |buf, s| {
            match eval_sharpe(panel, s, window, buf) {
                Ok(v) => Ok(Some(v)),
                Err(Error::ZeroVariance) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    redraw_degenerate(panel, k, window, &mut sampler, &mut values)?;
    Ok(values.into_iter().map(|v| v.expect("filled")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{compute_returns, generate_gbm_panel, GbmSpec};

    fn gbm_returns(n_assets: usize, n_days: usize, seed: u64) -> ReturnsPanel {
        let spec = GbmSpec {
            n_assets,
            n_days,
            ..GbmSpec::default()
        };
        compute_returns(&generate_gbm_panel(&spec, seed).unwrap()).unwrap()
    }

    #[test]
    fn full_cardinality_has_one_combination() {
        for s in sample_portfolios(5, 5, 20, 3).unwrap() {
            assert_eq!(s.indices(), &[0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn k_above_n_rejected() {
        assert!(matches!(
            sample_portfolios(4, 5, 1, 0),
            Err(Error::KTooLarge { k: 5, n: 4 })
        ));
    }

    #[test]
    fn pairs_of_four_are_uniform() {
        let samples = sample_portfolios(4, 2, 6000, 99).unwrap();
        let mut counts = std::collections::BTreeMap::new();
        for s in &samples {
            *counts.entry(s.indices().to_vec()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for (combo, c) in counts {
            let freq = c as f64 / 6000.0;
            assert!((freq - 1.0 / 6.0).abs() < 0.03, "{combo:?}: {freq}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let a = sample_portfolios(10, 3, 50, 1234).unwrap();
        let b = sample_portfolios(10, 3, 50, 1234).unwrap();
        assert_eq!(a, b);
        assert!(a
            .iter()
            .all(|s| s.len() == 3 && s.indices().windows(2).all(|w| w[0] < w[1])));
    }

    #[test]
    fn single_member_series_is_identity() {
        let panel = gbm_returns(4, 30, 5);
        let w = Window::new(3, 10).unwrap();
        let s = PortfolioSample::new(vec![2], 4).unwrap();
        let series = portfolio_return_series(&panel, &s, w).unwrap();
        assert_eq!(series.as_slice(), &panel.row(2)[3..13]);
    }

    #[test]
    fn two_member_mean() {
        let panel = ReturnsPanel::from_rows(vec![vec![0.02, 0.00], vec![0.00, 0.04]]).unwrap();
        let s = PortfolioSample::new(vec![0, 1], 2).unwrap();
        let series = portfolio_return_series(&panel, &s, Window::new(0, 2).unwrap()).unwrap();
        assert!((series[0] - 0.01).abs() < 1e-17);
        assert!((series[1] - 0.02).abs() < 1e-17);
    }

    #[test]
    fn identical_members_reproduce_series() {
        let row = vec![0.013, -0.007, 0.021, 0.0004, -0.03];
        let panel = ReturnsPanel::from_rows(vec![row.clone(), row.clone(), row.clone()]).unwrap();
        let s = PortfolioSample::new(vec![0, 1, 2], 3).unwrap();
        let series = portfolio_return_series(&panel, &s, Window::new(0, 5).unwrap()).unwrap();
        assert_eq!(series, row);
    }

    #[test]
    fn sharpe_hand_value() {
        let s = series_sharpe(&[0.01, -0.01, 0.02, 0.00]).unwrap();
        // 0.02 / (sqrt(5e-4 / 3) * 2)
        let expected = 0.02 / ((5e-4f64 / 3.0).sqrt() * 2.0);
        assert!((s - expected).abs() < 1e-14);
        assert!((s - 0.7746).abs() < 5e-5);
    }

    #[test]
    fn zero_returns_have_zero_variance() {
        let panel = ReturnsPanel::from_rows(vec![vec![0.0; 5], vec![0.0; 5]]).unwrap();
        let s = PortfolioSample::new(vec![0, 1], 2).unwrap();
        assert!(matches!(
            sharpe_ratio(&panel, &s, Window::new(0, 5).unwrap()),
            Err(Error::ZeroVariance)
        ));
    }

    #[test]
    fn constant_nonzero_returns_have_zero_variance() {
        assert!(matches!(series_sharpe(&[0.1; 7]), Err(Error::ZeroVariance)));
    }

    #[test]
    fn sharpe_is_positive_scale_invariant() {
        let panel = gbm_returns(6, 60, 8);
        let w = Window::new(4, 50).unwrap();
        let s = PortfolioSample::new(vec![0, 3, 5], 6).unwrap();
        let base = sharpe_ratio(&panel, &s, w).unwrap();
        for c in [0.25, 0.5, 3.0] {
            let scaled = sharpe_ratio(&panel.scaled(c).unwrap(), &s, w).unwrap();
            assert!((scaled - base).abs() <= 1e-12 * base.abs().max(1.0));
        }
    }

    #[test]
    fn k_equal_n_gives_point_mass() {
        let panel = gbm_returns(6, 40, 2);
        let plan = SamplingPlan {
            n_samples: 25,
            ..SamplingPlan::default()
        };
        let values = sharpe_distribution(&panel, 6, Window::new(0, 39).unwrap(), &plan).unwrap();
        assert_eq!(values.len(), 25);
        assert!(values.iter().all(|&v| v == values[0]));
    }

    #[test]
    fn constant_panel_exhausts_redraws() {
        let panel = ReturnsPanel::from_rows(vec![vec![0.0; 10]; 4]).unwrap();
        let plan = SamplingPlan {
            n_samples: 5,
            ..SamplingPlan::default()
        };
        let err = sharpe_distribution(&panel, 2, Window::new(0, 10).unwrap(), &plan).unwrap_err();
        assert!(
            matches!(
                err,
                Error::SamplingExhausted {
                    attempts: MAX_REDRAWS,
                    ..
                }
            ),
            "{err:?}"
        );
    }

    #[test]
    fn degenerate_assets_are_redrawn() {
        // Assets 0 and 1 are flat; only portfolios containing asset 2 or 3 vary.
        let mut rows = vec![vec![0.0; 8], vec![0.0; 8]];
        rows.push(vec![0.01, -0.02, 0.03, 0.0, 0.01, -0.01, 0.02, 0.005]);
        rows.push(vec![-0.01, 0.02, 0.0, 0.01, 0.0, 0.03, -0.02, 0.01]);
        let panel = ReturnsPanel::from_rows(rows).unwrap();
        let plan = SamplingPlan {
            n_samples: 200,
            ..SamplingPlan::default()
        };
        let values = sharpe_distribution(&panel, 1, Window::new(0, 8).unwrap(), &plan).unwrap();
        assert_eq!(values.len(), 200);
        assert!(values.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn plan_validation() {
        let plan = SamplingPlan::default();
        assert!(plan.validate(370).is_ok());
        assert!(matches!(plan.validate(50), Err(Error::KTooLarge { .. })));
        let bad = SamplingPlan {
            k_min: 1,
            ..SamplingPlan::default()
        };
        assert!(bad.validate(370).is_err());
        let bad = SamplingPlan {
            n_samples: 0,
            ..SamplingPlan::default()
        };
        assert!(bad.validate(370).is_err());
    }

    #[test]
    fn distinct_keys_for_windows_and_k() {
        let a = stream_key(1, 0, 10);
        assert_ne!(a, stream_key(1, 0, 11));
        assert_ne!(a, stream_key(1, 1, 10));
        assert_ne!(a, stream_key(2, 0, 10));
    }
}
