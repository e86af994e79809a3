//! Python bindings for `sharpek`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use sharpek::{
    Alignment, AnnualParams, CsvLayout, GbmSpec, PortfolioSample, RegressionFit, ResamplePolicy,
    RollingParams, SamplingPlan, Window,
};

fn to_py(err: sharpek::Error) -> PyErr {
    if err.is_io() {
        PyIOError::new_err(err.to_string())
    } else {
        PyValueError::new_err(err.to_string())
    }
}

fn window(start: usize, length: usize) -> PyResult<Window> {
    Window::new(start, length).map_err(to_py)
}

fn policy(name: &str) -> PyResult<ResamplePolicy> {
    name.parse().map_err(to_py)
}

/// Daily simple returns, one row per asset.
#[pyclass(name = "ReturnsPanel", module = "sharpek_py", frozen)]
pub struct PyReturnsPanel {
    inner: sharpek::ReturnsPanel,
}

#[pymethods]
impl PyReturnsPanel {
    /// Builds a panel from per-asset return rows.
    #[new]
    fn new(rows: Vec<Vec<f64>>) -> PyResult<Self> {
        let inner = sharpek::ReturnsPanel::from_rows(rows).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n_assets(&self) -> usize {
        self.inner.n_assets()
    }

    #[getter]
    fn n_days(&self) -> usize {
        self.inner.n_days()
    }

    #[getter]
    fn tickers(&self) -> Vec<String> {
        self.inner.tickers().to_vec()
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        self.inner.dates().iter().map(ToString::to_string).collect()
    }

    fn row(&self, asset: usize) -> PyResult<Vec<f64>> {
        if asset >= self.inner.n_assets() {
            return Err(PyValueError::new_err(format!("asset {asset} out of range")));
        }
        Ok(self.inner.row(asset).to_vec())
    }

    fn scaled(&self, factor: f64) -> PyResult<Self> {
        let inner = self.inner.scaled(factor).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "ReturnsPanel(n_assets={}, n_days={})",
            self.inner.n_assets(),
            self.inner.n_days()
        )
    }
}

/// Synthetic equicorrelated GBM panel, returned as returns.
#[pyfunction]
#[pyo3(signature = (n_assets=100, n_days=2017, drift=(-0.002, 0.003), vol=(0.015, 0.02), rho=0.5, s0=100.0, seed=0))]
fn gbm_returns(
    n_assets: usize,
    n_days: usize,
    drift: (f64, f64),
    vol: (f64, f64),
    rho: f64,
    s0: f64,
    seed: u64,
) -> PyResult<PyReturnsPanel> {
    let spec = GbmSpec {
        n_assets,
        n_days,
        drift_range: drift,
        vol_range: vol,
        pairwise_correlation: rho,
        initial_price: s0,
    };
    let prices = sharpek::generate_gbm_panel(&spec, seed).map_err(to_py)?;
    let inner = sharpek::compute_returns(&prices).map_err(to_py)?;
    Ok(PyReturnsPanel { inner })
}

/// Loads a wide or long price CSV and converts it to returns.
#[pyfunction]
#[pyo3(signature = (path, layout=None, align="strict"))]
fn load_csv(path: PathBuf, layout: Option<&str>, align: &str) -> PyResult<PyReturnsPanel> {
    let alignment = match align {
        "strict" => Alignment::Strict,
        "intersect" => Alignment::Intersect,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown alignment {other:?}"
            )))
        }
    };
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
    let layout = match layout {
        None => sharpek::market_data::detect_layout(&text),
        Some("wide") => CsvLayout::Wide,
        Some("long") => CsvLayout::Long,
        Some(other) => return Err(PyValueError::new_err(format!("unknown layout {other:?}"))),
    };
    let prices = sharpek::market_data::parse_price_csv(&text, layout, alignment).map_err(to_py)?;
    let inner = sharpek::compute_returns(&prices).map_err(to_py)?;
    Ok(PyReturnsPanel { inner })
}

#[pyfunction]
fn sharpe_ratio(
    panel: &PyReturnsPanel,
    indices: Vec<usize>,
    start: usize,
    length: usize,
) -> PyResult<f64> {
    let sample = PortfolioSample::new(indices, panel.inner.n_assets()).map_err(to_py)?;
    sharpek::sharpe_ratio(&panel.inner, &sample, window(start, length)?).map_err(to_py)
}

/// Sharpe ratios of `n_samples` random k-portfolios in one window.
#[pyfunction]
#[pyo3(signature = (panel, k, start, length, n_samples=1000, seed=0))]
fn sharpe_distribution(
    py: Python<'_>,
    panel: &PyReturnsPanel,
    k: usize,
    start: usize,
    length: usize,
    n_samples: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let plan = SamplingPlan {
        n_samples,
        k_min: k,
        k_max: k,
        seed,
        resample_policy: ResamplePolicy::PerWindow,
    };
    let w = window(start, length)?;
    py.detach(|| sharpek::sharpe_distribution(&panel.inner, k, w, &plan))
        .map_err(to_py)
}

#[pyfunction]
fn empirical_quantile(values: Vec<f64>, q: f64) -> PyResult<f64> {
    sharpek::empirical_quantile(&values, q).map_err(to_py)
}

fn curve_dict<'py>(
    py: Python<'py>,
    curve: &sharpek::QuantileCurve,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("start", curve.window.start)?;
    d.set_item("length", curve.window.length)?;
    d.set_item("k_values", curve.k_values().to_vec())?;
    d.set_item("quantiles", curve.quantiles().to_vec())?;
    let values: Vec<Vec<f64>> = (0..curve.k_values().len())
        .map(|i| curve.row(i).to_vec())
        .collect();
    d.set_item("values", values)?;
    Ok(d)
}

/// Quantile curve `k -> Q_k(q)` for one window.
#[pyfunction]
#[pyo3(signature = (panel, start, length, k_min=10, k_max=100, n_samples=1000, seed=0, quantiles=vec![0.1, 0.5, 0.9]))]
#[allow(clippy::too_many_arguments)]
fn quantile_curve<'py>(
    py: Python<'py>,
    panel: &PyReturnsPanel,
    start: usize,
    length: usize,
    k_min: usize,
    k_max: usize,
    n_samples: usize,
    seed: u64,
    quantiles: Vec<f64>,
) -> PyResult<Bound<'py, PyDict>> {
    let plan = SamplingPlan {
        n_samples,
        k_min,
        k_max,
        seed,
        resample_policy: ResamplePolicy::PerWindow,
    };
    let w = window(start, length)?;
    let curve = py
        .detach(|| sharpek::build_quantile_curve(&panel.inner, w, &plan, &quantiles))
        .map_err(to_py)?;
    curve_dict(py, &curve)
}

fn fit_dict<'py>(py: Python<'py>, fit: &RegressionFit) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("degree", fit.degree)?;
    d.set_item("coefficients", fit.coefficients.clone())?;
    d.set_item("std_errors", fit.std_errors.clone())?;
    d.set_item("p_values", fit.p_values.clone())?;
    d.set_item("rss", fit.rss)?;
    d.set_item("tss", fit.tss)?;
    d.set_item("n", fit.n)?;
    d.set_item("aic", fit.aic)?;
    d.set_item("bic", fit.bic)?;
    d.set_item("adj_r2", fit.adj_r2)?;
    d.set_item("degenerate", fit.degenerate)?;
    Ok(d)
}

/// Polynomial least squares of degree 1 or 2.
#[pyfunction]
fn ols_fit<'py>(
    py: Python<'py>,
    x: Vec<f64>,
    y: Vec<f64>,
    degree: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let fit = sharpek::ols_fit(&x, &y, degree).map_err(to_py)?;
    fit_dict(py, &fit)
}

fn comparison_dict<'py>(
    py: Python<'py>,
    cmp: &sharpek::ModelComparison,
) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("linear", fit_dict(py, &cmp.linear)?)?;
    d.set_item("quadratic", fit_dict(py, &cmp.quadratic)?)?;
    d.set_item("alpha", cmp.alpha)?;
    d.set_item("m", cmp.m)?;
    d.set_item("threshold", cmp.threshold())?;
    d.set_item("lower_aic", cmp.flags.lower_aic)?;
    d.set_item("lower_bic", cmp.flags.lower_bic)?;
    d.set_item("higher_adj_r2", cmp.flags.higher_adj_r2)?;
    d.set_item("significant_curvature", cmp.flags.significant_curvature)?;
    d.set_item("verdict", cmp.verdict.to_string())?;
    Ok(d)
}

/// Fits both models to `(x, y)` and applies the four-condition rule.
#[pyfunction]
#[pyo3(signature = (x, y, alpha=0.05, m=1))]
fn compare_models<'py>(
    py: Python<'py>,
    x: Vec<f64>,
    y: Vec<f64>,
    alpha: f64,
    m: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let lin = sharpek::ols_fit(&x, &y, 1).map_err(to_py)?;
    let quad = sharpek::ols_fit(&x, &y, 2).map_err(to_py)?;
    let cmp = sharpek::compare_models(&lin, &quad, alpha, m).map_err(to_py)?;
    comparison_dict(py, &cmp)
}

/// Annual study; returns `{"m", "records", "curves"}`.
#[pyfunction]
#[pyo3(signature = (panel, n_samples=1000, k_min=10, k_max=100, seed=0, period=252, quantiles=vec![0.1, 0.5, 0.9], alpha=0.05, m=None, resample="fixed-across-windows"))]
#[allow(clippy::too_many_arguments)]
fn annual_study<'py>(
    py: Python<'py>,
    panel: &PyReturnsPanel,
    n_samples: usize,
    k_min: usize,
    k_max: usize,
    seed: u64,
    period: usize,
    quantiles: Vec<f64>,
    alpha: f64,
    m: Option<usize>,
    resample: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let plan = SamplingPlan {
        n_samples,
        k_min,
        k_max,
        seed,
        resample_policy: policy(resample)?,
    };
    let params = AnnualParams {
        period,
        quantiles,
        alpha,
        bonferroni_m: m,
    };
    let study = py
        .detach(|| sharpek::run_annual_study(&panel.inner, &plan, &params))
        .map_err(to_py)?;

    let records = study
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("year", r.year_index)?;
            d.set_item("start", r.window.start)?;
            d.set_item("q", r.q)?;
            d.set_item("comparison", comparison_dict(py, &r.comparison)?)?;
            d.set_item("verdict", r.comparison.verdict.to_string())?;
            d.set_item("slope", r.optima.slope)?;
            d.set_item("k0", r.optima.k0)?;
            d.set_item("k_hat", r.optima.k_hat)?;
            d.set_item("delta", r.optima.delta)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    let curves = study
        .curves
        .iter()
        .map(|c| curve_dict(py, c))
        .collect::<PyResult<Vec<_>>>()?;

    let out = PyDict::new(py);
    out.set_item("m", study.m)?;
    out.set_item("records", records)?;
    out.set_item("curves", curves)?;
    Ok(out)
}

/// Rolling study; returns window starts, `k0[q][w]` and per-q histograms.
#[pyfunction]
#[pyo3(signature = (panel, n_samples=1000, k_min=10, k_max=100, seed=0, period=90, stride=1, quantiles=vec![0.1, 0.5, 0.9], resample="fixed-across-windows"))]
#[allow(clippy::too_many_arguments)]
fn rolling_study<'py>(
    py: Python<'py>,
    panel: &PyReturnsPanel,
    n_samples: usize,
    k_min: usize,
    k_max: usize,
    seed: u64,
    period: usize,
    stride: usize,
    quantiles: Vec<f64>,
    resample: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let plan = SamplingPlan {
        n_samples,
        k_min,
        k_max,
        seed,
        resample_policy: policy(resample)?,
    };
    let params = RollingParams {
        period,
        stride,
        quantiles,
    };
    let series = py
        .detach(|| sharpek::run_rolling_study(&panel.inner, &plan, &params))
        .map_err(to_py)?;

    let histograms = PyDict::new(py);
    for &q in &series.quantiles {
        let counts: BTreeMap<usize, usize> = sharpek::k0_histogram(&series, q).map_err(to_py)?;
        histograms.set_item(q, counts)?;
    }
    let out = PyDict::new(py);
    out.set_item("window_starts", series.window_starts.clone())?;
    out.set_item("quantiles", series.quantiles.clone())?;
    out.set_item("k0", series.k0.clone())?;
    out.set_item("histograms", histograms)?;
    Ok(out)
}

#[pymodule]
fn sharpek_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyReturnsPanel>()?;
    m.add_function(wrap_pyfunction!(gbm_returns, m)?)?;
    m.add_function(wrap_pyfunction!(load_csv, m)?)?;
    m.add_function(wrap_pyfunction!(sharpe_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(sharpe_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(empirical_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(quantile_curve, m)?)?;
    m.add_function(wrap_pyfunction!(ols_fit, m)?)?;
    m.add_function(wrap_pyfunction!(compare_models, m)?)?;
    m.add_function(wrap_pyfunction!(annual_study, m)?)?;
    m.add_function(wrap_pyfunction!(rolling_study, m)?)?;
    Ok(())
}
