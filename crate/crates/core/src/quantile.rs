//! Quantile curves `k -> Q_k(q)` and the optimal cardinalities read off them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{ReturnsPanel, Window};
use crate::portfolio::{sharpe_distribution, SamplingPlan};

/// Relative tolerance under which two objective values count as tied.
///
/// Curves that are flat or exactly linear in `k` are only flat up to
/// rounding; the argmax treats anything within `TIE_RTOL` of the maximum,
/// scaled by the objective's magnitude, as attaining it.
pub const TIE_RTOL: f64 = 1e-10;

/// Order-statistic quantile with linear interpolation:
/// `h = (n - 1) q`, `x[floor h] + frac(h) * (x[floor h + 1] - x[floor h])`.
pub fn empirical_quantile(values: &[f64], q: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    check_quantile(q)?;
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac > 0.0 && lo + 1 < sorted.len() {
        Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
    } else {
        Ok(sorted[lo])
    }
}

/// Several quantiles of `buf` at once by selection; reorders `buf`.
/// Bitwise equal to [`empirical_quantile`] for each `q`.
pub(crate) fn quantiles_in_place(buf: &mut [f64], quantiles: &[f64]) -> Vec<f64> {
    let n = buf.len();
    quantiles
        .iter()
        .map(|&q| {
            let h = (n - 1) as f64 * q;
            let lo = h.floor() as usize;
            let frac = h - lo as f64;
            let (_, &mut x_lo, upper) = buf.select_nth_unstable_by(lo, f64::total_cmp);
            if frac > 0.0 && !upper.is_empty() {
                let x_hi = upper.iter().copied().fold(f64::INFINITY, f64::min);
                x_lo + frac * (x_hi - x_lo)
            } else {
                x_lo
            }
        })
        .collect()
}

fn check_quantile(q: f64) -> Result<()> {
    if q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidQuantile(q))
    }
}

pub(crate) fn check_quantiles(quantiles: &[f64]) -> Result<()> {
    if quantiles.is_empty() {
        return Err(Error::EmptyInput);
    }
    for (i, &q) in quantiles.iter().enumerate() {
        check_quantile(q)?;
        if quantiles[..i].contains(&q) {
            return Err(Error::InvalidQuantile(q));
        }
    }
    Ok(())
}

/// Representative Sharpe values for one window, indexed by `(k, q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileCurve {
    pub window: Window,
    k_values: Vec<usize>,
    quantiles: Vec<f64>,
    // row-major: one row of quantile values per k
    values: Vec<f64>,
}

impl QuantileCurve {
    /// `rows[i][j]` is the value at `k_values[i]`, `quantiles[j]`.
    pub fn new(
        window: Window,
        k_values: Vec<usize>,
        quantiles: Vec<f64>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if k_values.is_empty() || k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPlan(
                "k values must be non-empty and strictly increasing".into(),
            ));
        }
        check_quantiles(&quantiles)?;
        if rows.len() != k_values.len() || rows.iter().any(|r| r.len() != quantiles.len()) {
            return Err(Error::InvalidPlan("curve value shape mismatch".into()));
        }
        let values: Vec<f64> = rows.into_iter().flatten().collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidPlan("curve values must be finite".into()));
        }
        Ok(Self {
            window,
            k_values,
            quantiles,
            values,
        })
    }

    pub fn from_fn(
        window: Window,
        k_values: Vec<usize>,
        quantiles: Vec<f64>,
        f: impl Fn(usize, f64) -> f64,
    ) -> Result<Self> {
        let rows = k_values
            .iter()
            .map(|&k| quantiles.iter().map(|&q| f(k, q)).collect())
            .collect();
        Self::new(window, k_values, quantiles, rows)
    }

    pub fn k_values(&self) -> &[usize] {
        &self.k_values
    }

    pub fn quantiles(&self) -> &[f64] {
        &self.quantiles
    }

    pub fn q_index(&self, q: f64) -> Result<usize> {
        self.quantiles
            .iter()
            .position(|&x| (x - q).abs() < 1e-12)
            .ok_or(Error::InvalidQuantile(q))
    }

    pub fn k_index(&self, k: usize) -> Result<usize> {
        self.k_values
            .binary_search(&k)
            .map_err(|_| Error::InvalidPlan(format!("k={k} is not on the curve")))
    }

    /// Quantile values at `k_values[index]`, one per quantile.
    pub fn row(&self, index: usize) -> &[f64] {
        let nq = self.quantiles.len();
        &self.values[index * nq..(index + 1) * nq]
    }

    pub fn value(&self, k: usize, q: f64) -> Result<f64> {
        Ok(self.row(self.k_index(k)?)[self.q_index(q)?])
    }

    /// The curve `k -> Q_k(q)` for one quantile.
    pub fn column(&self, q: f64) -> Result<Vec<f64>> {
        let j = self.q_index(q)?;
        Ok((0..self.k_values.len()).map(|i| self.row(i)[j]).collect())
    }
}

/// Samples Sharpe distributions for every `k` in the plan and summarises each
/// by the requested quantiles.
pub fn build_quantile_curve(
    panel: &ReturnsPanel,
    window: Window,
    plan: &SamplingPlan,
    quantiles: &[f64],
) -> Result<QuantileCurve> {
    plan.validate(panel.n_assets())?;
    check_quantiles(quantiles)?;
    window.check(panel.n_days())?;
    let k_values = plan.k_values();
    let rows = k_values
        .par_iter()
        .map(|&k| {
            let mut values = sharpe_distribution(panel, k, window, plan)?;
            Ok(quantiles_in_place(&mut values, quantiles))
        })
        .collect::<Result<Vec<_>>>()?;
    QuantileCurve::new(window, k_values, quantiles.to_vec(), rows)
}

/// Index of the first entry within tolerance of the maximum.
pub(crate) fn first_maximum(objective: &[f64], scale: f64) -> usize {
    let max = objective.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = TIE_RTOL * scale;
    objective
        .iter()
        .position(|&v| v >= max - tol)
        .expect("non-empty objective")
}

fn max_abs(xs: impl Iterator<Item = f64>) -> f64 {
    xs.fold(0.0, |m, x| m.max(x.abs()))
}

/// Raw optimum `k0`: the smallest `k` maximising the curve at `q`.
pub fn raw_optimum(curve: &QuantileCurve, q: f64) -> Result<usize> {
    let column = curve.column(q)?;
    let scale = max_abs(column.iter().copied());
    Ok(curve.k_values[first_maximum(&column, scale)])
}

/// Penalised optimum: the smallest `k` maximising `Q_k(q) - k * slope`.
/// Only defined for a positive slope.
pub fn penalized_optimum(curve: &QuantileCurve, q: f64, slope: f64) -> Result<Option<usize>> {
    let column = curve.column(q)?;
    if slope.is_nan() || slope <= 0.0 {
        return Ok(None);
    }
    let objective: Vec<f64> = column
        .iter()
        .zip(&curve.k_values)
        .map(|(v, &k)| v - k as f64 * slope)
        .collect();
    let scale =
        max_abs(column.iter().copied()) + max_abs(curve.k_values.iter().map(|&k| k as f64 * slope));
    Ok(Some(curve.k_values[first_maximum(&objective, scale)]))
}

/// Sharpe value given up by holding `k_hat` instead of `k0`; never negative.
pub fn sharpe_deviation(curve: &QuantileCurve, q: f64, k0: usize, k_hat: usize) -> Result<f64> {
    let delta = curve.value(k0, q)? - curve.value(k_hat, q)?;
    Ok(delta.max(0.0))
}

/// Optimal cardinalities for one curve and quantile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimaRecord {
    pub q: f64,
    pub k0: usize,
    pub k_hat: Option<usize>,
    pub delta: Option<f64>,
    /// Fitted linear slope of the curve in `k`.
    pub slope: f64,
}

impl OptimaRecord {
    pub fn from_curve(curve: &QuantileCurve, q: f64, slope: f64) -> Result<Self> {
        let k0 = raw_optimum(curve, q)?;
        let k_hat = penalized_optimum(curve, q, slope)?;
        let delta = k_hat
            .map(|kh| sharpe_deviation(curve, q, k0, kh))
            .transpose()?;
        Ok(Self {
            q,
            k0,
            k_hat,
            delta,
            slope,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::ols_fit;

    fn curve(f: impl Fn(usize) -> f64) -> QuantileCurve {
        QuantileCurve::from_fn(
            Window::new(0, 252).unwrap(),
            (10..=100).collect(),
            vec![0.5],
            |k, _| f(k),
        )
        .unwrap()
    }

    fn linear_slope(c: &QuantileCurve) -> f64 {
        let x: Vec<f64> = c.k_values().iter().map(|&k| k as f64).collect();
        ols_fit(&x, &c.column(0.5).unwrap(), 1)
            .unwrap()
            .coefficients[1]
    }

    #[test]
    fn quantile_examples() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(empirical_quantile(&xs, 0.5).unwrap(), 3.0);
        assert!((empirical_quantile(&xs, 0.1).unwrap() - 1.4).abs() < 1e-15);
        assert_eq!(empirical_quantile(&[2.5; 9], 0.37).unwrap(), 2.5);
        assert_eq!(
            empirical_quantile(&[5.0, 1.0, 3.0, 2.0, 4.0], 0.5).unwrap(),
            3.0
        );
    }

    #[test]
    fn quantile_errors() {
        assert!(matches!(
            empirical_quantile(&[], 0.5),
            Err(Error::EmptyInput)
        ));
        assert!(matches!(
            empirical_quantile(&[1.0], 0.0),
            Err(Error::InvalidQuantile(_))
        ));
        assert!(matches!(
            empirical_quantile(&[1.0], 1.0),
            Err(Error::InvalidQuantile(_))
        ));
    }

    #[test]
    fn raw_optimum_examples() {
        assert_eq!(raw_optimum(&curve(|k| k as f64 * 0.01), 0.5).unwrap(), 100);
        assert_eq!(raw_optimum(&curve(|_| 0.7), 0.5).unwrap(), 10);
        let c = curve(|k| -((k as f64 - 40.0).powi(2)));
        assert_eq!(raw_optimum(&c, 0.5).unwrap(), 40);
    }

    #[test]
    fn missing_quantile_is_an_error() {
        assert!(matches!(
            raw_optimum(&curve(|_| 1.0), 0.9),
            Err(Error::InvalidQuantile(_))
        ));
    }

    #[test]
    fn linear_curve_penalised_optimum_is_smallest_k() {
        for (a, b) in [(0.3, 0.004), (-1.2, 0.0173), (2.0, 1e-5)] {
            let c = curve(|k| a + b * k as f64);
            let slope = linear_slope(&c);
            assert!((slope - b).abs() < 1e-12 * b.max(1.0));
            assert_eq!(penalized_optimum(&c, 0.5, slope).unwrap(), Some(10));
        }
    }

    #[test]
    fn symmetric_quadratic_has_no_penalised_optimum() {
        let c = curve(|k| -((k as f64 - 55.0).powi(2)));
        let slope = linear_slope(&c);
        assert_eq!(slope, 0.0);
        assert_eq!(penalized_optimum(&c, 0.5, slope).unwrap(), None);
    }

    #[test]
    fn penalised_optimum_matches_scan() {
        let f = |k: usize| -((k as f64 - 40.0).powi(2)) + 0.5 * k as f64;
        let c = curve(f);
        // fitted slope is b + 2a*mean(k) = 80.5 - 110
        assert!((linear_slope(&c) + 29.5).abs() < 1e-9);
        assert_eq!(penalized_optimum(&c, 0.5, linear_slope(&c)).unwrap(), None);
        for &slope in &[0.25, 0.5, 1.0, 3.0, 29.5, 200.0] {
            let mut best = (10, f64::NEG_INFINITY);
            for k in 10..=100 {
                let v = f(k) - k as f64 * slope;
                if v > best.1 {
                    best = (k, v);
                }
            }
            assert_eq!(
                penalized_optimum(&c, 0.5, slope).unwrap(),
                Some(best.0),
                "slope={slope}"
            );
        }
    }

    #[test]
    fn deviation_examples() {
        let c = curve(|k| -((k as f64 - 40.0).powi(2)));
        assert_eq!(sharpe_deviation(&c, 0.5, 40, 40).unwrap(), 0.0);
        assert_eq!(sharpe_deviation(&c, 0.5, 40, 30).unwrap(), 100.0);
        let flat = curve(|_| 1.5);
        assert_eq!(sharpe_deviation(&flat, 0.5, 10, 77).unwrap(), 0.0);
    }

    #[test]
    fn curve_shape_checks() {
        let w = Window::new(0, 10).unwrap();
        assert!(QuantileCurve::new(w, vec![3, 2], vec![0.5], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(QuantileCurve::new(w, vec![2, 3], vec![0.5], vec![vec![1.0]]).is_err());
        assert!(QuantileCurve::new(w, vec![2], vec![1.5], vec![vec![1.0]]).is_err());
        assert!(QuantileCurve::new(w, vec![2], vec![0.5], vec![vec![f64::NAN]]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantile_monotone_in_q(
                xs in proptest::collection::vec(-10.0f64..10.0, 1..60),
                q1 in 0.001f64..0.999,
                q2 in 0.001f64..0.999,
            ) {
                let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
                prop_assert!(empirical_quantile(&xs, lo).unwrap() <= empirical_quantile(&xs, hi).unwrap());
            }

            #[test]
            fn selection_matches_sorting(
                xs in proptest::collection::vec(-10.0f64..10.0, 1..80),
            ) {
                let qs = [0.1, 0.5, 0.9, 0.33];
                let mut buf = xs.clone();
                let fast = quantiles_in_place(&mut buf, &qs);
                for (q, v) in qs.iter().zip(fast) {
                    prop_assert_eq!(v, empirical_quantile(&xs, *q).unwrap());
                }
            }

            #[test]
            fn argmax_scale_invariant(
                ys in proptest::collection::vec(-3.0f64..3.0, 91),
                c in 0.01f64..100.0,
            ) {
                let base = curve(|k| ys[k - 10]);
                let scaled = curve(|k| c * ys[k - 10]);
                prop_assert_eq!(raw_optimum(&base, 0.5).unwrap(), raw_optimum(&scaled, 0.5).unwrap());
                let s = linear_slope(&base);
                let sc = linear_slope(&scaled);
                prop_assert_eq!(
                    penalized_optimum(&base, 0.5, s).unwrap(),
                    penalized_optimum(&scaled, 0.5, sc).unwrap()
                );
            }

            #[test]
            fn deviation_nonnegative(
                ys in proptest::collection::vec(-3.0f64..3.0, 91),
                tilt in 0.0001f64..0.05,
            ) {
                let c = curve(|k| ys[k - 10] + tilt * k as f64);
                let rec = OptimaRecord::from_curve(&c, 0.5, tilt).unwrap();
                let delta = rec.delta.unwrap();
                prop_assert!(delta >= 0.0);
                let k_hat = rec.k_hat.unwrap();
                let at_max = c.value(k_hat, 0.5).unwrap() == c.value(rec.k0, 0.5).unwrap();
                prop_assert_eq!(delta == 0.0, at_max);
            }
        }
    }
}
