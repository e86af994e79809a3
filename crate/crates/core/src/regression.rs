//! Polynomial least squares (degree 1 and 2) with coefficient inference,
//! information criteria and the linear-vs-quadratic selection rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::shifted_mean;
use crate::special::beta_reg;

/// Residual sums of squares at or below this are treated as an exact fit.
pub const RSS_FLOOR: f64 = 1e-30;

/// One least-squares fit of `y` on `1, x, .., x^degree`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub degree: usize,
    /// `beta_0 .. beta_degree`, in the original (uncentred) basis.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// Two-sided t-test p-values; `None` for an exact (degenerate) fit.
    pub p_values: Option<Vec<f64>>,
    pub rss: f64,
    pub tss: f64,
    pub n: usize,
    /// Negative infinity for a degenerate fit.
    pub aic: f64,
    pub bic: f64,
    pub adj_r2: f64,
    pub degenerate: bool,
}

impl RegressionFit {
    /// Number of regression coefficients, `degree + 1`.
    pub fn n_params(&self) -> usize {
        self.degree + 1
    }

    pub fn slope(&self) -> f64 {
        self.coefficients[1]
    }

    /// Coefficient of the highest power of `x`.
    pub fn leading(&self) -> f64 {
        self.coefficients[self.degree]
    }

    pub fn leading_p_value(&self) -> Option<f64> {
        self.p_values.as_ref().map(|p| p[self.degree])
    }
}

/// Two-sided Student-t p-value `2 (1 - F_df(|t|))`, evaluated as
/// `I_{df / (df + t^2)}(df / 2, 1 / 2)`. Returns NaN for `df == 0`.
pub fn student_t_two_sided_p(t_stat: f64, df: usize) -> f64 {
    if df == 0 || t_stat.is_nan() {
        return f64::NAN;
    }
    let df = df as f64;
    let t2 = t_stat * t_stat;
    if t2.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t2);
    beta_reg(0.5 * df, 0.5, x).clamp(0.0, 1.0)
}

/// Cholesky factor of a small symmetric positive definite matrix.
fn cholesky(a: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let p = a.len();
    let mut l = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..=i {
            let s: f64 = (0..j).map(|m| l[i][m] * l[j][m]).sum();
            if i == j {
                let pivot = a[i][i] - s;
                if pivot.is_nan() || pivot <= 1e-12 * a[i][i] {
                    return Err(Error::SingularDesign);
                }
                l[i][i] = pivot.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &[Vec<f64>], b: &[f64]) -> Vec<f64> {
    let p = l.len();
    let mut z = vec![0.0; p];
    for i in 0..p {
        let s: f64 = (0..i).map(|m| l[i][m] * z[m]).sum();
        z[i] = (b[i] - s) / l[i][i];
    }
    let mut x = vec![0.0; p];
    for i in (0..p).rev() {
        let s: f64 = (i + 1..p).map(|m| l[m][i] * x[m]).sum();
        x[i] = (z[i] - s) / l[i][i];
    }
    x
}

/// Least squares via the normal equations on a centred, power-of-two scaled
/// design `z = (x - mean) / s`, mapped back to the original basis.
///
/// Centring both `x` and `y` keeps exact symmetries exact: a curve symmetric
/// about the mean of `x` gets a slope of exactly zero and a constant `y` gets
/// exactly zero non-intercept coefficients.
pub fn ols_fit(x: &[f64], y: &[f64], degree: usize) -> Result<RegressionFit> {
    if !(1..=2).contains(&degree) {
        return Err(Error::InsufficientData(format!(
            "degree must be 1 or 2, got {degree}"
        )));
    }
    let n = x.len();
    if y.len() != n {
        return Err(Error::InsufficientData(format!(
            "{n} x values but {} y values",
            y.len()
        )));
    }
    let p = degree + 1;
    if n < p + 1 {
        return Err(Error::InsufficientData(format!(
            "degree {degree} needs at least {} observations, got {n}",
            p + 1
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InsufficientData("non-finite input".into()));
    }

    let x_mean = shifted_mean(x);
    let y_mean = shifted_mean(y);
    let spread = x.iter().fold(0.0f64, |m, v| m.max((v - x_mean).abs()));
    if spread == 0.0 {
        return Err(Error::SingularDesign);
    }
    let scale = 2f64.powi(spread.log2().ceil() as i32);

    let z: Vec<f64> = x.iter().map(|v| (v - x_mean) / scale).collect();
    let yc: Vec<f64> = y.iter().map(|v| v - y_mean).collect();
    let design: Vec<Vec<f64>> = z
        .iter()
        .map(|&zi| (0..p).map(|j| zi.powi(j as i32)).collect())
        .collect();

    let mut gram = vec![vec![0.0; p]; p];
    let mut rhs = vec![0.0; p];
    for (row, &yi) in design.iter().zip(&yc) {
        for a in 0..p {
            rhs[a] += row[a] * yi;
            for b in 0..p {
                gram[a][b] += row[a] * row[b];
            }
        }
    }
    let l = cholesky(&gram)?;
    let centred_coef = cholesky_solve(&l, &rhs);
    let mut gram_inv = vec![vec![0.0; p]; p];
    for j in 0..p {
        let mut e = vec![0.0; p];
        e[j] = 1.0;
        let col = cholesky_solve(&l, &e);
        for i in 0..p {
            gram_inv[i][j] = col[i];
        }
    }

    let rss: f64 = design
        .iter()
        .zip(&yc)
        .map(|(row, yi)| {
            let fitted: f64 = row.iter().zip(&centred_coef).map(|(d, c)| d * c).sum();
            (yi - fitted).powi(2)
        })
        .sum();
    let tss: f64 = yc.iter().map(|v| v * v).sum();
    let y_energy: f64 = y.iter().map(|v| v * v).sum();
    let degenerate = rss <= RSS_FLOOR.max((64.0 * f64::EPSILON).powi(2) * y_energy);

    // beta = A c + y_mean e_0
    let mu = x_mean / scale;
    let a: Vec<Vec<f64>> = match degree {
        1 => vec![vec![1.0, -mu], vec![0.0, 1.0 / scale]],
        _ => vec![
            vec![1.0, -mu, mu * mu],
            vec![0.0, 1.0 / scale, -2.0 * mu / scale],
            vec![0.0, 0.0, 1.0 / (scale * scale)],
        ],
    };
    let mut coefficients: Vec<f64> = a
        .iter()
        .map(|row| row.iter().zip(&centred_coef).map(|(r, c)| r * c).sum())
        .collect();
    coefficients[0] += y_mean;

    let dof = n - p;
    let sigma2 = rss / dof as f64;
    let std_errors: Vec<f64> = (0..p)
        .map(|i| {
            let mut var = 0.0;
            for j in 0..p {
                for k in 0..p {
                    var += a[i][j] * gram_inv[j][k] * a[i][k];
                }
            }
            (sigma2 * var).max(0.0).sqrt()
        })
        .collect();

    let nf = n as f64;
    let (p_values, aic, bic, adj_r2) = if degenerate {
        (None, f64::NEG_INFINITY, f64::NEG_INFINITY, 1.0)
    } else {
        let p_values = coefficients
            .iter()
            .zip(&std_errors)
            .map(|(b, se)| student_t_two_sided_p(b / se, dof))
            .collect();
        // Gaussian log-likelihood without its additive constant; the error
        // variance counts as a parameter.
        let fit_term = nf * (rss / nf).ln();
        let k = (p + 1) as f64;
        let aic = fit_term + 2.0 * k;
        let bic = fit_term + nf.ln() * k;
        let adj_r2 = 1.0 - (rss / dof as f64) / (tss / (nf - 1.0));
        (Some(p_values), aic, bic, adj_r2)
    };

    Ok(RegressionFit {
        degree,
        coefficients,
        std_errors,
        p_values,
        rss,
        tss,
        n,
        aic,
        bic,
        adj_r2,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    QuadraticUnambiguous,
    LinearRetained,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::QuadraticUnambiguous => "quadratic-unambiguous",
            Self::LinearRetained => "linear-retained",
        })
    }
}

impl std::str::FromStr for Verdict {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quadratic-unambiguous" => Ok(Self::QuadraticUnambiguous),
            "linear-retained" => Ok(Self::LinearRetained),
            other => Err(Error::Parse(format!("unknown verdict {other:?}"))),
        }
    }
}

/// Which of the four conditions favour the quadratic model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionFlags {
    pub lower_aic: bool,
    pub lower_bic: bool,
    pub higher_adj_r2: bool,
    pub significant_curvature: bool,
}

impl ConditionFlags {
    pub fn all(&self) -> bool {
        self.lower_aic && self.lower_bic && self.higher_adj_r2 && self.significant_curvature
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub linear: RegressionFit,
    pub quadratic: RegressionFit,
    pub alpha: f64,
    pub m: usize,
    pub flags: ConditionFlags,
    pub verdict: Verdict,
}

impl ModelComparison {
    /// Bonferroni-corrected significance threshold `alpha / m`.
    pub fn threshold(&self) -> f64 {
        self.alpha / self.m as f64
    }
}

/// The quadratic model wins only if it has lower AIC, lower BIC, higher
/// adjusted R², and a leading coefficient with `p < alpha / m`.
pub fn compare_models(
    linear: &RegressionFit,
    quadratic: &RegressionFit,
    alpha: f64,
    m: usize,
) -> Result<ModelComparison> {
    if linear.degree != 1 || quadratic.degree != 2 {
        return Err(Error::MismatchedFits(format!(
            "expected degrees 1 and 2, got {} and {}",
            linear.degree, quadratic.degree
        )));
    }
    if linear.n != quadratic.n {
        return Err(Error::MismatchedFits(format!(
            "fits use {} and {} observations",
            linear.n, quadratic.n
        )));
    }
    if !(alpha > 0.0 && alpha < 1.0) || m == 0 {
        return Err(Error::Config(format!(
            "need 0 < alpha < 1 and m >= 1, got alpha={alpha} m={m}"
        )));
    }
    let threshold = alpha / m as f64;
    let flags = ConditionFlags {
        lower_aic: quadratic.aic < linear.aic,
        lower_bic: quadratic.bic < linear.bic,
        higher_adj_r2: quadratic.adj_r2 > linear.adj_r2,
        significant_curvature: quadratic.leading_p_value().is_some_and(|p| p < threshold),
    };
    let verdict = if flags.all() {
        Verdict::QuadraticUnambiguous
    } else {
        Verdict::LinearRetained
    };
    Ok(ModelComparison {
        linear: linear.clone(),
        quadratic: quadratic.clone(),
        alpha,
        m,
        flags,
        verdict,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn ks() -> Vec<f64> {
        (10..=100).map(|k| k as f64).collect()
    }

    #[test]
    fn exact_line() {
        let x = ks();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
        let fit = ols_fit(&x, &y, 1).unwrap();
        assert!((fit.coefficients[0] - 1.0).abs() < 1e-10);
        assert!((fit.coefficients[1] - 2.0).abs() < 1e-12);
        assert!(fit.rss < 1e-20);
        assert!(fit.degenerate);
        assert_eq!(fit.adj_r2, 1.0);
        assert_eq!(fit.aic, f64::NEG_INFINITY);
        assert_eq!(fit.bic, f64::NEG_INFINITY);
        assert!(fit.p_values.is_none());
    }

    #[test]
    fn exact_parabola() {
        let x = ks();
        let y: Vec<f64> = x.iter().map(|v| 3.0 - 0.5 * v + 0.01 * v * v).collect();
        let fit = ols_fit(&x, &y, 2).unwrap();
        for (got, want) in fit.coefficients.iter().zip([3.0, -0.5, 0.01]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
        assert!(fit.degenerate);
    }

    #[test]
    fn constant_response_has_zero_slope() {
        let x = ks();
        let fit = ols_fit(&x, &vec![0.123; x.len()], 1).unwrap();
        assert_eq!(fit.coefficients[1], 0.0);
        assert_eq!(fit.coefficients[0], 0.123);
        assert!(fit.degenerate);
    }

    /// Textbook simple regression: slope = Sxy / Sxx, intercept = ybar - slope xbar.
    #[test]
    fn noisy_line_matches_textbook_formulas() {
        let x = ks();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let noise = Normal::new(0.0, 3.0).unwrap();
        let y: Vec<f64> = x.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let fit = ols_fit(&x, &y, 1).unwrap();

        let n = x.len() as f64;
        let xbar = x.iter().sum::<f64>() / n;
        let ybar = y.iter().sum::<f64>() / n;
        let sxx: f64 = x.iter().map(|v| (v - xbar).powi(2)).sum();
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xbar) * (b - ybar)).sum();
        let slope = sxy / sxx;
        let intercept = ybar - slope * xbar;
        let rss: f64 = x
            .iter()
            .zip(&y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        let s2 = rss / (n - 2.0);
        let se_slope = (s2 / sxx).sqrt();
        let se_int = (s2 * (1.0 / n + xbar * xbar / sxx)).sqrt();
        let t_dist = statrs::distribution::StudentsT::new(0.0, 1.0, n - 2.0).unwrap();
        use statrs::distribution::ContinuousCDF;
        let p_slope = 2.0 * t_dist.sf((slope / se_slope).abs());
        let p_int = 2.0 * t_dist.sf((intercept / se_int).abs());

        let close = |a: f64, b: f64| (a - b).abs() <= 1e-8 * a.abs().max(b.abs());
        assert!(close(fit.coefficients[0], intercept));
        assert!(close(fit.coefficients[1], slope));
        assert!(close(fit.std_errors[0], se_int));
        assert!(close(fit.std_errors[1], se_slope));
        assert!(close(fit.rss, rss));
        let p = fit.p_values.unwrap();
        assert!(close(p[0], p_int), "{} vs {p_int}", p[0]);
        assert!((p[1] - p_slope).abs() <= 1e-8 * p_slope.max(1e-300) || p_slope < 1e-300);
    }

    #[test]
    fn information_criteria_formulas() {
        let x = ks();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.37).sin() + 0.01 * v).collect();
        let fit = ols_fit(&x, &y, 2).unwrap();
        let n = 91.0f64;
        let base = n * (fit.rss / n).ln();
        assert!((fit.aic - (base + 8.0)).abs() < 1e-9);
        assert!((fit.bic - (base + 4.0 * n.ln())).abs() < 1e-9);
        let adj = 1.0 - (fit.rss / 88.0) / (fit.tss / 90.0);
        assert!((fit.adj_r2 - adj).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        assert!(matches!(
            ols_fit(&[1.0; 5], &[1.0, 2.0, 3.0, 4.0, 5.0], 1),
            Err(Error::SingularDesign)
        ));
        assert!(matches!(
            ols_fit(&[1.0, 2.0, 1.0, 2.0], &[1.0, 2.0, 3.0, 4.0], 2),
            Err(Error::SingularDesign)
        ));
        assert!(matches!(
            ols_fit(&[1.0, 2.0], &[1.0, 2.0], 1),
            Err(Error::InsufficientData(_))
        ));
        assert!(ols_fit(&[1.0, 2.0, 3.0], &[1.0, 2.0], 1).is_err());
        assert!(ols_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0], 3).is_err());
    }

    #[test]
    fn t_p_values() {
        for df in [1, 2, 7, 90] {
            assert_eq!(student_t_two_sided_p(0.0, df), 1.0);
        }
        assert!((student_t_two_sided_p(1.0, 1) - 0.5).abs() < 1e-14);
        assert!((student_t_two_sided_p(-1.0, 1) - 0.5).abs() < 1e-14);
        assert!((student_t_two_sided_p(12.706, 1) - 0.05).abs() < 1e-3);
        // two-sided 5% critical values from standard tables
        assert!((student_t_two_sided_p(2.228, 10) - 0.05).abs() < 1e-3);
        assert!((student_t_two_sided_p(1.987, 89) - 0.05).abs() < 1e-3);
        assert_eq!(student_t_two_sided_p(f64::INFINITY, 5), 0.0);
        assert!(student_t_two_sided_p(1.0, 0).is_nan());
    }

    fn summary(degree: usize, aic: f64, bic: f64, adj_r2: f64, p: Option<f64>) -> RegressionFit {
        RegressionFit {
            degree,
            coefficients: vec![0.0; degree + 1],
            std_errors: vec![0.0; degree + 1],
            p_values: p.map(|p| {
                let mut v = vec![0.0; degree + 1];
                v[degree] = p;
                v
            }),
            rss: 1.0,
            tss: 2.0,
            n: 91,
            aic,
            bic,
            adj_r2,
            degenerate: false,
        }
    }

    #[test]
    fn bonferroni_rule_on_reported_rows() {
        let lin = summary(1, -524.81, -519.79, 0.92, Some(1e-30));
        let quad = summary(2, -656.06, -648.53, 0.98, Some(1e-20));
        let cmp = compare_models(&lin, &quad, 0.05, 66).unwrap();
        assert_eq!(cmp.verdict, Verdict::QuadraticUnambiguous);

        let lin = summary(1, -816.14, -811.12, 0.82, Some(1e-30));
        let quad = summary(2, -816.43, -808.89, 0.83, Some(0.14));
        let cmp = compare_models(&lin, &quad, 0.05, 66).unwrap();
        assert_eq!(cmp.verdict, Verdict::LinearRetained);
        assert!(cmp.flags.lower_aic && cmp.flags.higher_adj_r2);
        assert!(!cmp.flags.lower_bic && !cmp.flags.significant_curvature);
    }

    #[test]
    fn identical_fits_retain_linear() {
        let lin = summary(1, -100.0, -95.0, 0.5, Some(1.0));
        let quad = summary(2, -100.0, -95.0, 0.5, Some(1.0));
        let cmp = compare_models(&lin, &quad, 0.05, 66).unwrap();
        assert_eq!(cmp.verdict, Verdict::LinearRetained);
        assert_eq!(
            cmp.flags,
            ConditionFlags {
                lower_aic: false,
                lower_bic: false,
                higher_adj_r2: false,
                significant_curvature: false
            }
        );
    }

    #[test]
    fn mismatched_fits_rejected() {
        let lin = summary(1, 0.0, 0.0, 0.5, Some(0.5));
        assert!(matches!(
            compare_models(&lin, &lin, 0.05, 66),
            Err(Error::MismatchedFits(_))
        ));
        let mut quad = summary(2, 0.0, 0.0, 0.5, Some(0.5));
        quad.n = 50;
        assert!(matches!(
            compare_models(&lin, &quad, 0.05, 66),
            Err(Error::MismatchedFits(_))
        ));
    }

    #[test]
    fn concave_curve_sign_recovery() {
        let x = ks();
        let a = 2e-4;
        let noise_sd = 0.01 * a * 55.0 * 55.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, noise_sd).unwrap();
        let y: Vec<f64> = x
            .iter()
            .map(|k| 1.0 - (k - 55.0).powi(2) * a + noise.sample(&mut rng))
            .collect();
        let fit = ols_fit(&x, &y, 2).unwrap();
        assert!(fit.coefficients[2] < 0.0);
        assert!(fit.leading_p_value().unwrap() < 1e-6);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn p_value_monotone(t1 in 0.0f64..20.0, t2 in 0.0f64..20.0, df in 1usize..200) {
                let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
                let p_lo = student_t_two_sided_p(lo, df);
                let p_hi = student_t_two_sided_p(hi, df);
                prop_assert!(p_lo >= p_hi - 1e-15);
                prop_assert!((0.0..=1.0).contains(&p_lo));
            }

            #[test]
            fn aic_difference_matches_full_likelihood(
                ys in proptest::collection::vec(-1.0f64..1.0, 30),
            ) {
                let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
                let lin = ols_fit(&x, &ys, 1).unwrap();
                let quad = ols_fit(&x, &ys, 2).unwrap();
                // -2 log L with the Gaussian constant n (1 + ln 2 pi) kept
                let n = 30.0f64;
                let full = |fit: &RegressionFit, k: f64| {
                    n * (1.0 + (2.0 * std::f64::consts::PI).ln()) + n * (fit.rss / n).ln() + 2.0 * k
                };
                let ours = lin.aic - quad.aic;
                let theirs = full(&lin, 3.0) - full(&quad, 4.0);
                prop_assert!((ours - theirs).abs() < 1e-9 * (1.0 + ours.abs()));
            }
        }
    }
}
