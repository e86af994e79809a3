//! Sharpe-ratio quantile curves over randomly sampled, equally weighted
//! portfolios.
//!
//! The crate maps a portfolio cardinality `k` and a skill quantile `q` to the
//! representative Sharpe ratio obtained by drawing many `k`-stock portfolios
//! from a returns panel. On top of those curves it locates raw and penalised
//! optimal cardinalities, fits linear and quadratic trend models, and runs
//! both the annual (non-overlapping) and rolling-window studies.

pub mod error;
pub mod market_data;
pub mod portfolio;
pub mod quantile;
pub mod regression;
pub mod report;
pub mod special;
pub mod study;

pub use error::{Error, Result};
pub use market_data::{
    compute_returns, covariance_matrix, generate_gbm, generate_gbm_panel, load_price_csv,
    Alignment, CsvLayout, GbmSpec, PricePanel, ReturnsPanel, Window,
};
pub use portfolio::{
    portfolio_return_series, sample_portfolios, sharpe_distribution, sharpe_ratio, PortfolioSample,
    ResamplePolicy, SamplingPlan,
};
pub use quantile::{
    build_quantile_curve, empirical_quantile, penalized_optimum, raw_optimum, sharpe_deviation,
    OptimaRecord, QuantileCurve,
};
pub use regression::{
    compare_models, ols_fit, student_t_two_sided_p, ModelComparison, RegressionFit, Verdict,
};
pub use study::{
    annual_partition, k0_histogram, run_annual_study, run_rolling_study, run_rolling_study_with,
    AnnualParams, AnnualStudy, AnnualStudyRecord, RollingEvaluation, RollingParams, RollingSeries,
};

/// Default skill quantiles: bottom decile, median, top decile.
pub const DEFAULT_QUANTILES: [f64; 3] = [0.1, 0.5, 0.9];
