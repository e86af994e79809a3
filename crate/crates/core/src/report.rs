//! Run configuration, study execution from a config, and the CSV / JSON
//! outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::{
    compute_returns, detect_layout, generate_gbm_panel, parse_price_csv, Alignment, CsvLayout,
    GbmSpec, ReturnsPanel,
};
use crate::portfolio::{ResamplePolicy, SamplingPlan};
use crate::study::{
    k0_histogram, run_annual_study, run_rolling_study, AnnualParams, AnnualStudy, RollingParams,
    RollingSeries,
};
use crate::DEFAULT_QUANTILES;

pub const ANNUAL_RECORDS_HEADER: &str = "year,q,AIC_lin,BIC_lin,adjR2_lin,beta1_1,AIC_quad,BIC_quad,adjR2_quad,beta2_2,p_beta2_2,verdict,k0,k_hat,delta,sharpe_k0";
pub const ROLLING_K0_HEADER: &str = "window_start,q,k0";
pub const HISTOGRAM_HEADER: &str = "q,k,count";
pub const CURVE_HEADER: &str = "k,q,value";
pub const SCATTER_HEADER: &str = "year,sharpe_k0,delta";

/// Quantile whose rows feed the Δ scatter.
const SCATTER_Q: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StudyKind {
    #[default]
    Annual,
    Rolling,
}

impl std::str::FromStr for StudyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "annual" => Ok(Self::Annual),
            "rolling" => Ok(Self::Rolling),
            other => Err(Error::Config(format!("unknown study {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    Csv {
        path: PathBuf,
        /// Detected from the header when absent.
        layout: Option<CsvLayout>,
        alignment: Alignment,
    },
    Gbm(GbmSpec),
}

impl Default for InputSource {
    fn default() -> Self {
        Self::Gbm(GbmSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub input: InputSource,
    pub study: StudyKind,
    /// Window length; 252 for annual and 90 for rolling when unset.
    pub period: Option<usize>,
    pub k_min: usize,
    pub k_max: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub stride: usize,
    pub quantiles: Vec<f64>,
    pub alpha: f64,
    pub m_override: Option<usize>,
    pub resample_policy: ResamplePolicy,
    pub output_dir: PathBuf,
    pub threads: Option<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        let plan = SamplingPlan::default();
        Self {
            input: InputSource::default(),
            study: StudyKind::default(),
            period: None,
            k_min: plan.k_min,
            k_max: plan.k_max,
            n_samples: plan.n_samples,
            seed: plan.seed,
            stride: 1,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            alpha: 0.05,
            m_override: None,
            resample_policy: plan.resample_policy,
            output_dir: PathBuf::from("out"),
            threads: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for {key}")))
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = value.split(':').collect();
    match parts.as_slice() {
        [lo, hi] => Ok((parse_num(key, lo)?, parse_num(key, hi)?)),
        [v] => {
            let v = parse_num(key, v)?;
            Ok((v, v))
        }
        _ => Err(Error::Config(format!("bad range {value:?} for {key}"))),
    }
}

/// Parses `n_assets=..,n_days=..,drift=lo:hi,vol=lo:hi,rho=..,s0=..` on top
/// of the default spec.
pub fn parse_gbm_spec(text: &str) -> Result<GbmSpec> {
    let mut spec = GbmSpec::default();
    for item in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (key, value) = item.split_once('=').ok_or_else(|| {
            Error::Config(format!("expected key=value in GBM spec, got {item:?}"))
        })?;
        match key.trim() {
            "n_assets" => spec.n_assets = parse_num(key, value)?,
            "n_days" => spec.n_days = parse_num(key, value)?,
            "drift" => spec.drift_range = parse_pair(key, value)?,
            "vol" => spec.vol_range = parse_pair(key, value)?,
            "rho" => spec.pairwise_correlation = parse_num(key, value)?,
            "s0" => spec.initial_price = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown GBM key {other:?}"))),
        }
    }
    Ok(spec)
}

impl StudyConfig {
    /// Sets one `key=value` setting, as found in config files and flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "input" => {
                let (layout, alignment) = match &self.input {
                    InputSource::Csv {
                        layout, alignment, ..
                    } => (*layout, *alignment),
                    InputSource::Gbm(_) => (None, Alignment::Strict),
                };
                self.input = InputSource::Csv {
                    path: PathBuf::from(value),
                    layout,
                    alignment,
                };
            }
            "layout" => {
                let parsed = match value {
                    "wide" => CsvLayout::Wide,
                    "long" => CsvLayout::Long,
                    other => return Err(Error::Config(format!("unknown layout {other:?}"))),
                };
                match &mut self.input {
                    InputSource::Csv { layout, .. } => *layout = Some(parsed),
                    InputSource::Gbm(_) => {
                        return Err(Error::Config("layout given without a CSV input".into()))
                    }
                }
            }
            "align" => {
                let parsed = match value {
                    "strict" => Alignment::Strict,
                    "intersect" => Alignment::Intersect,
                    other => return Err(Error::Config(format!("unknown alignment {other:?}"))),
                };
                match &mut self.input {
                    InputSource::Csv { alignment, .. } => *alignment = parsed,
                    InputSource::Gbm(_) => {
                        return Err(Error::Config("align given without a CSV input".into()))
                    }
                }
            }
            "gbm" => self.input = InputSource::Gbm(parse_gbm_spec(value)?),
            "study" => self.study = value.parse()?,
            "period" => self.period = Some(parse_num(key, value)?),
            "kmin" | "k_min" => self.k_min = parse_num(key, value)?,
            "kmax" | "k_max" => self.k_max = parse_num(key, value)?,
            "samples" | "n_samples" => self.n_samples = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "stride" => self.stride = parse_num(key, value)?,
            "quantiles" => {
                self.quantiles = value
                    .split(',')
                    .map(|q| parse_num(key, q))
                    .collect::<Result<_>>()?
            }
            "alpha" => self.alpha = parse_num(key, value)?,
            "m" | "m_override" => self.m_override = Some(parse_num(key, value)?),
            "resample" | "resample_policy" => self.resample_policy = value.parse()?,
            "out" | "output_dir" => self.output_dir = PathBuf::from(value),
            "threads" => self.threads = Some(parse_num(key, value)?),
            other => return Err(Error::Config(format!("unknown setting {other:?}"))),
        }
        Ok(())
    }

    /// Applies a plain-text `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value", lineno + 1))
            })?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::default();
        config.apply_text(&text)?;
        Ok(config)
    }

    /// Recovers the configuration echoed into a `run_meta.json`.
    pub fn from_meta(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let meta: RunMeta = serde_json::from_str(&text).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(meta.config)
    }

    pub fn period(&self) -> usize {
        self.period.unwrap_or(match self.study {
            StudyKind::Annual => 252,
            StudyKind::Rolling => 90,
        })
    }

    pub fn plan(&self) -> SamplingPlan {
        SamplingPlan {
            n_samples: self.n_samples,
            k_min: self.k_min,
            k_max: self.k_max,
            seed: self.seed,
            resample_policy: self.resample_policy,
        }
    }

    pub fn load_returns(&self) -> Result<ReturnsPanel> {
        let prices = match &self.input {
            InputSource::Csv {
                path,
                layout,
                alignment,
            } => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                let layout = layout.unwrap_or_else(|| detect_layout(&text));
                parse_price_csv(&text, layout, *alignment)?
            }
            InputSource::Gbm(spec) => generate_gbm_panel(spec, self.seed)?,
        };
        compute_returns(&prices)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub version: String,
    pub config: StudyConfig,
    pub seed: u64,
    pub n_assets: usize,
    pub n_days: usize,
    pub first_date: String,
    pub last_date: String,
    pub n_windows: usize,
    pub bonferroni_m: Option<usize>,
    pub files: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub n_windows: usize,
}

fn fmt_opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn annual_records_csv(study: &AnnualStudy) -> String {
    let mut out = String::from(ANNUAL_RECORDS_HEADER);
    out.push('\n');
    for r in &study.records {
        let lin = r.linear();
        let quad = r.quadratic();
        let sharpe_k0 = study
            .curve_of(r)
            .value(r.optima.k0, r.q)
            .expect("k0 lies on its own curve");
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.year_index,
            r.q,
            lin.aic,
            lin.bic,
            lin.adj_r2,
            lin.slope(),
            quad.aic,
            quad.bic,
            quad.adj_r2,
            quad.leading(),
            fmt_opt(quad.leading_p_value()),
            r.comparison.verdict,
            r.optima.k0,
            fmt_opt(r.optima.k_hat),
            fmt_opt(r.optima.delta),
            sharpe_k0,
        )
        .expect("write to string");
    }
    out
}

pub fn rolling_k0_csv(series: &RollingSeries) -> String {
    let mut out = String::from(ROLLING_K0_HEADER);
    out.push('\n');
    for (w, start) in series.window_starts.iter().enumerate() {
        for (j, q) in series.quantiles.iter().enumerate() {
            writeln!(out, "{start},{q},{}", series.k0[j][w]).expect("write to string");
        }
    }
    out
}

/// Every bin from `k_min` to `k_max`, zeros included.
pub fn histogram_csv(series: &RollingSeries) -> Result<String> {
    let mut out = String::from(HISTOGRAM_HEADER);
    out.push('\n');
    for &q in &series.quantiles {
        let counts = k0_histogram(series, q)?;
        for k in series.k_min..=series.k_max {
            writeln!(out, "{q},{k},{}", counts.get(&k).copied().unwrap_or(0))
                .expect("write to string");
        }
    }
    Ok(out)
}

pub fn curve_csv(curve: &crate::quantile::QuantileCurve) -> String {
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for (i, k) in curve.k_values().iter().enumerate() {
        for (q, v) in curve.quantiles().iter().zip(curve.row(i)) {
            writeln!(out, "{k},{q},{v}").expect("write to string");
        }
    }
    out
}

fn write_file(path: &Path, contents: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    files.push(path.to_path_buf());
    Ok(())
}

/// Runs the configured study and writes its outputs under `output_dir`.
pub fn cmd_run(config: &StudyConfig) -> Result<RunSummary> {
    let panel = config.load_returns()?;
    let plan = config.plan();
    plan.validate(panel.n_assets())?;

    let out_dir = &config.output_dir;
    let curves_dir = out_dir.join("curves");
    fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    let mut files = Vec::new();

    let (curves, n_windows, m) = match config.study {
        StudyKind::Annual => {
            let params = AnnualParams {
                period: config.period(),
                quantiles: config.quantiles.clone(),
                alpha: config.alpha,
                bonferroni_m: config.m_override,
            };
            let study = run_annual_study(&panel, &plan, &params)?;
            write_file(
                &out_dir.join("annual_records.csv"),
                &annual_records_csv(&study),
                &mut files,
            )?;
            let n = study.curves.len();
            (study.curves, n, Some(study.m))
        }
        StudyKind::Rolling => {
            let params = RollingParams {
                period: config.period(),
                stride: config.stride,
                quantiles: config.quantiles.clone(),
            };
            let series = run_rolling_study(&panel, &plan, &params)?;
            write_file(
                &out_dir.join("rolling_k0.csv"),
                &rolling_k0_csv(&series),
                &mut files,
            )?;
            write_file(
                &out_dir.join("k0_histogram.csv"),
                &histogram_csv(&series)?,
                &mut files,
            )?;
            let n = series.window_starts.len();
            (series.curves, n, None)
        }
    };

    for curve in &curves {
        let path = curves_dir.join(format!("window_{:05}.csv", curve.window.start));
        write_file(&path, &curve_csv(curve), &mut files)?;
    }

    let meta_path = out_dir.join("run_meta.json");
    let meta = RunMeta {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        seed: config.seed,
        n_assets: panel.n_assets(),
        n_days: panel.n_days(),
        first_date: panel.dates()[0].to_string(),
        last_date: panel.dates()[panel.n_days() - 1].to_string(),
        n_windows,
        bonferroni_m: m,
        files: files
            .iter()
            .map(|p| p.strip_prefix(out_dir).unwrap_or(p).display().to_string())
            .collect(),
    };
    let json = serde_json::to_string_pretty(&meta).map_err(|e| Error::Parse(e.to_string()))?;
    write_file(&meta_path, &json, &mut files)?;

    Ok(RunSummary {
        output_dir: out_dir.clone(),
        files,
        n_windows,
    })
}

/// `(sharpe_k0, delta)` for each `q = 0.1` record with a penalised optimum.
pub fn scatter_delta(records_csv: &str) -> Result<String> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(records_csv.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse(e.to_string()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let (year_col, q_col, k_hat_col, delta_col, sharpe_col) = (
        column("year")?,
        column("q")?,
        column("k_hat")?,
        column("delta")?,
        column("sharpe_k0")?,
    );

    let mut out = String::from(SCATTER_HEADER);
    out.push('\n');
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse(e.to_string()))?;
        let q: f64 = parse_num("q", &record[q_col])?;
        if (q - SCATTER_Q).abs() > 1e-12 || record[k_hat_col].is_empty() {
            continue;
        }
        let delta: f64 = parse_num("delta", &record[delta_col])?;
        let sharpe: f64 = parse_num("sharpe_k0", &record[sharpe_col])?;
        writeln!(out, "{},{sharpe},{delta}", &record[year_col]).expect("write to string");
    }
    Ok(out)
}

pub fn cmd_scatter_delta(records: &Path, out: &Path) -> Result<usize> {
    let text = fs::read_to_string(records).map_err(|e| Error::io(records, e))?;
    let csv = scatter_delta(&text)?;
    fs::write(out, &csv).map_err(|e| Error::io(out, e))?;
    Ok(csv.lines().count() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_and_overrides() {
        let mut c = StudyConfig::default();
        c.apply_text(
            "# demo\nstudy = rolling\nperiod=60\nseed = 9 # trailing\nquantiles=0.25,0.75\ngbm = n_assets=30,n_days=400,drift=-0.001:0.002,vol=0.01:0.02,rho=0.2\n",
        )
        .unwrap();
        assert_eq!(c.study, StudyKind::Rolling);
        assert_eq!(c.period(), 60);
        assert_eq!(c.seed, 9);
        assert_eq!(c.quantiles, vec![0.25, 0.75]);
        match &c.input {
            InputSource::Gbm(spec) => {
                assert_eq!(spec.n_assets, 30);
                assert_eq!(spec.drift_range, (-0.001, 0.002));
                assert_eq!(spec.pairwise_correlation, 0.2);
            }
            other => panic!("{other:?}"),
        }
        c.set("seed", "11").unwrap();
        assert_eq!(c.seed, 11);
    }

    #[test]
    fn default_periods() {
        let mut c = StudyConfig::default();
        assert_eq!(c.period(), 252);
        c.study = StudyKind::Rolling;
        assert_eq!(c.period(), 90);
    }

    #[test]
    fn bad_settings_rejected() {
        let mut c = StudyConfig::default();
        assert!(c.set("bogus", "1").is_err());
        assert!(c.set("seed", "x").is_err());
        assert!(c.set("layout", "wide").is_err());
        assert!(c.apply_text("no equals sign").is_err());
        assert!(parse_gbm_spec("n_assets").is_err());
    }

    #[test]
    fn scatter_requires_columns() {
        let err = scatter_delta("year,q,k_hat\n0,0.1,10\n").unwrap_err();
        assert!(matches!(err, Error::MissingColumn(ref c) if c == "delta"));
    }

    #[test]
    fn scatter_empty_subset_keeps_header() {
        let text = format!("{ANNUAL_RECORDS_HEADER}\n0,0.9,-1,-1,0.5,-0.1,-2,-2,0.6,0.1,0.001,linear-retained,10,,,1.5\n");
        assert_eq!(scatter_delta(&text).unwrap(), format!("{SCATTER_HEADER}\n"));
    }
}
