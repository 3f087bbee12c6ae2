// SPDX-License-Identifier: MIT OR Apache-2.0

//! End-to-end tests for an at-most-one-change alternative, and multiple
//! breaks by binary segmentation.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::critical::{
    self, analytic_cv, CvFamily, CvRequest, CvTable, DEFAULT_GRID, DEFAULT_L, DEFAULT_REPS,
};
use crate::cusum::{
    self, a_norm, b_norm, darling_erdos_stat, q_process, renyi_stat, renyi_window, t_of,
    t_one_minus_t, weight_at, weighted_sup, CusumProcess, StatResult,
};
use crate::error::{Error, Result};
use crate::estimators::{build_cumulants, eta_hat_sq};
use crate::hetero::{
    build_kernel, hetero_de_stat, hetero_renyi_stat, hetero_weighted_sup, qbar_process,
    HeteroKernel, G_FLOOR,
};
use crate::rca::TimeSeries;
use crate::weights::{TrimSpec, WeightSpec};

pub const DEFAULT_MIN_SEGMENT: usize = 20;
pub const MIN_TEST_N: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    WeightedSup(WeightSpec),
    DarlingErdos,
    /// `trim = None` uses `ceil((ln N)^2)` on both sides.
    Renyi {
        kappa: f64,
        trim: Option<TrimSpec>,
    },
}

impl Statistic {
    /// Power weight `(t(1-t))^kappa`, with `kappa = 1/2` mapped to Darling-Erdős
    /// and `kappa > 1/2` to Rényi with default trimming.
    pub fn for_kappa(kappa: f64) -> Result<Self> {
        if !(kappa >= 0.0 && kappa.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be >= 0, got {kappa}"
            )));
        }
        Ok(if kappa < 0.5 {
            Statistic::WeightedSup(WeightSpec::kappa(kappa)?)
        } else if kappa == 0.5 {
            Statistic::DarlingErdos
        } else {
            Statistic::Renyi { kappa, trim: None }
        })
    }

    pub fn label(&self) -> String {
        match self {
            Statistic::WeightedSup(w) => format!("weighted_sup({})", w.label()),
            Statistic::DarlingErdos => "darling_erdos".into(),
            Statistic::Renyi { kappa, .. } => format!("renyi(kappa={kappa})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Homoskedastic,
    HeteroRobust,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CvSource {
    /// Closed forms: Kolmogorov (`kappa = 0`), the Gumbel-type limit
    /// (Darling-Erdős) and the Rényi limit at `kappa = 1`.
    Analytic,
    /// Monte Carlo; Darling-Erdős uses the finite-sample law at the segment length.
    Simulated { reps: usize, grid: usize, seed: u64 },
    /// Data-driven `F_{N,L}` for the robust weighted sup.
    Fnl { l: usize, seed: u64 },
    /// As `Simulated`, persisted in a critical-value file.
    Cached {
        path: PathBuf,
        reps: usize,
        grid: usize,
        seed: u64,
    },
}

impl CvSource {
    pub fn simulated(seed: u64) -> Self {
        CvSource::Simulated {
            reps: DEFAULT_REPS,
            grid: DEFAULT_GRID,
            seed,
        }
    }

    pub fn fnl(seed: u64) -> Self {
        CvSource::Fnl { l: DEFAULT_L, seed }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestConfig {
    pub statistic: Statistic,
    pub variance_mode: VarianceMode,
    pub alpha: f64,
    pub cv_source: CvSource,
}

impl TestConfig {
    pub fn new(
        statistic: Statistic,
        variance_mode: VarianceMode,
        alpha: f64,
        cv_source: CvSource,
    ) -> Self {
        Self {
            statistic,
            variance_mode,
            alpha,
            cv_source,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "alpha must lie in (0,1), got {}",
                self.alpha
            )));
        }
        match &self.statistic {
            Statistic::WeightedSup(w) => {
                w.validate()?;
                if let Some(k) = w.kappa_value() {
                    if k >= 0.5 {
                        return Err(Error::IncompatibleConfig(format!(
                            "weighted sup needs kappa < 1/2 (got {k}); use Darling-Erdős or Rényi"
                        )));
                    }
                }
            }
            Statistic::DarlingErdos => {}
            Statistic::Renyi { kappa, trim } => {
                if !(*kappa > 0.5) {
                    return Err(Error::IncompatibleConfig(format!(
                        "Rényi needs kappa > 1/2, got {kappa}"
                    )));
                }
                if let Some(t) = trim {
                    TrimSpec::new(t.r1, t.r2)?;
                }
            }
        }
        let robust_sup = self.variance_mode == VarianceMode::HeteroRobust
            && matches!(self.statistic, Statistic::WeightedSup(_));
        let fnl = matches!(self.cv_source, CvSource::Fnl { .. });
        if robust_sup && !fnl {
            return Err(Error::IncompatibleConfig(
                "the robust weighted sup has a data-dependent limit; use the F_{N,L} source".into(),
            ));
        }
        if fnl && !robust_sup {
            return Err(Error::IncompatibleConfig(
                "the F_{N,L} source applies only to the robust weighted sup".into(),
            ));
        }
        if let CvSource::Fnl { l, .. } = self.cv_source {
            if l < 100 {
                return Err(Error::InvalidParameter(format!("need L >= 100, got {l}")));
            }
        }
        if self.cv_source == CvSource::Analytic {
            let ok = match &self.statistic {
                Statistic::WeightedSup(w) => w.kappa_value() == Some(0.0),
                Statistic::DarlingErdos => true,
                Statistic::Renyi { kappa, .. } => *kappa == 1.0,
            };
            if !ok {
                return Err(Error::IncompatibleConfig(format!(
                    "no closed-form critical value for {}; use a simulated source",
                    self.statistic.label()
                )));
            }
        }
        Ok(())
    }

    fn trim_for(&self, n: usize) -> Option<TrimSpec> {
        match &self.statistic {
            Statistic::Renyi { trim, .. } => Some(trim.unwrap_or_else(|| TrimSpec::default_for(n))),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: String,
    pub n: usize,
    pub alpha: f64,
    pub statistic_value: f64,
    pub critical_value: f64,
    pub reject: bool,
    /// Split maximising the statistic (last index of the first regime).
    pub argmax: Option<usize>,
    /// `argmax`, reported only on rejection.
    pub breakdate: Option<usize>,
    /// `breakdate / (N + 1)`.
    pub t_hat: Option<f64>,
    pub eta_hat_sq: Option<f64>,
    pub trim: Option<TrimSpec>,
    pub diagnostics: Vec<String>,
}

/// One row of plot output: the process and the rejection boundary for `|process|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlotRow {
    pub k: usize,
    pub t: f64,
    pub value: f64,
    /// `None` outside the window where the statistic looks.
    pub threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub process: String,
    pub rows: Vec<PlotRow>,
}

/// Critical values shared across calls (segments, replications).
#[derive(Debug, Default)]
pub struct CvMemo {
    values: Mutex<HashMap<String, f64>>,
}

impl CvMemo {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.values.lock().expect("memo lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Returns the memoised value for `key`, computing it with `f` on a miss.
    pub fn get_or_try(&self, key: &str, f: impl FnOnce() -> Result<f64>) -> Result<f64> {
        // the lock is not held while computing: `f` may run rayon jobs, and a
        // waiting worker can steal another job that re-enters the memo
        if let Some(v) = self.values.lock().expect("memo lock").get(key) {
            return Ok(*v);
        }
        let v = f()?;
        Ok(*self
            .values
            .lock()
            .expect("memo lock")
            .entry(key.to_string())
            .or_insert(v))
    }
}

fn critical_value(
    config: &TestConfig,
    n: usize,
    trim: Option<TrimSpec>,
    kernel: Option<&HeteroKernel>,
    memo: &CvMemo,
) -> Result<(f64, String)> {
    let family = |finite: bool| -> CvFamily {
        match &config.statistic {
            Statistic::WeightedSup(w) => CvFamily::WeightedSup(w.clone()),
            Statistic::DarlingErdos => CvFamily::DarlingErdos {
                finite_sample: finite,
                n,
            },
            Statistic::Renyi { kappa, .. } => CvFamily::Renyi {
                kappa: *kappa,
                trim: trim.expect("Rényi trim resolved"),
            },
        }
    };
    match &config.cv_source {
        CvSource::Analytic => {
            let fam = family(false);
            let key = format!("analytic|{}|{:?}|{}", fam.key(), fam.kappa(), config.alpha);
            let v = memo.get_or_try(&key, || analytic_cv(&fam, config.alpha))?;
            Ok((v, "analytic".into()))
        }
        CvSource::Simulated { reps, grid, seed } => {
            let req = CvRequest {
                family: family(true),
                alpha: config.alpha,
                reps: *reps,
                grid_points: *grid,
                seed: *seed,
            };
            let key = format!("sim|{:?}", req.cache_key());
            let v = memo.get_or_try(&key, || Ok(req.compute(None)?.0))?;
            Ok((
                v,
                format!("simulated(reps={reps}, grid={grid}, seed={seed})"),
            ))
        }
        CvSource::Cached {
            path,
            reps,
            grid,
            seed,
        } => {
            let req = CvRequest {
                family: family(true),
                alpha: config.alpha,
                reps: *reps,
                grid_points: *grid,
                seed: *seed,
            };
            let key = format!("cache|{}|{:?}", path.display(), req.cache_key());
            let v = memo.get_or_try(&key, || {
                let mut table = CvTable::load(path)?;
                let before = table.len();
                let v = table.get_or_compute(&req)?;
                if table.len() != before {
                    table.save(path)?;
                }
                Ok(v)
            })?;
            Ok((v, format!("cached({})", path.display())))
        }
        CvSource::Fnl { l, seed } => {
            let kernel = kernel.expect("kernel built for robust tests");
            let w = match &config.statistic {
                Statistic::WeightedSup(w) => w,
                _ => unreachable!("validated"),
            };
            let v = critical::hetero_fnl_cv(kernel, w, *l, config.alpha, *seed)?;
            Ok((v, format!("fnl(L={l}, seed={seed})")))
        }
    }
}

pub fn run_test(series: &TimeSeries, config: &TestConfig) -> Result<TestReport> {
    run_test_with(series, config, &CvMemo::new())
}

pub fn run_test_with(
    series: &TimeSeries,
    config: &TestConfig,
    memo: &CvMemo,
) -> Result<TestReport> {
    Ok(run_test_detailed(series, config, memo)?.0)
}

/// Runs the test and also returns the process with its rejection boundary.
pub fn run_test_detailed(
    series: &TimeSeries,
    config: &TestConfig,
    memo: &CvMemo,
) -> Result<(TestReport, PlotData)> {
    config.validate()?;
    series.require_n(MIN_TEST_N)?;
    let n = series.n();
    let table = build_cumulants(series)?;
    let trim = config.trim_for(n);
    let eta = eta_hat_sq(series, &table)?;
    let mut diagnostics = Vec::new();

    let (stat, process, kernel, eta_used): (
        StatResult,
        CusumProcess,
        Option<HeteroKernel>,
        Option<f64>,
    ) = match config.variance_mode {
        VarianceMode::Homoskedastic => {
            if eta.is_degenerate() {
                return Err(Error::DegenerateSeries(
                    "residual variance estimate is zero; the statistic cannot be standardised"
                        .into(),
                ));
            }
            let e = eta.eta();
            let q = q_process(series, &table)?;
            let s = match &config.statistic {
                Statistic::WeightedSup(w) => weighted_sup(&q, w, e)?,
                Statistic::DarlingErdos => darling_erdos_stat(&table, e)?,
                Statistic::Renyi { kappa, .. } => {
                    renyi_stat(&q, *kappa, trim.as_ref().expect("trim"), e)?
                }
            };
            (s, q, None, Some(e))
        }
        VarianceMode::HeteroRobust => {
            let kernel = build_kernel(series, &table)?;
            let q = qbar_process(series, &table, &kernel)?;
            let s = match &config.statistic {
                Statistic::WeightedSup(w) => hetero_weighted_sup(&q, w)?,
                Statistic::DarlingErdos => hetero_de_stat(&q, &kernel)?,
                Statistic::Renyi { kappa, .. } => {
                    hetero_renyi_stat(&q, &kernel, *kappa, trim.as_ref().expect("trim"))?
                }
            };
            (s, q, Some(kernel), None)
        }
    };

    if !process.degenerate_splits().is_empty() {
        diagnostics.push(format!(
            "{} split(s) with a degenerate segment contributed zero",
            process.degenerate_splits().len()
        ));
    }
    let (cv, source) = critical_value(config, n, trim, kernel.as_ref(), memo)?;
    diagnostics.push(format!("critical value source: {source}"));
    let reject = stat.value > cv;
    let breakdate = if reject { stat.argmax } else { None };
    let report = TestReport {
        statistic: config.statistic.label(),
        n,
        alpha: config.alpha,
        statistic_value: stat.value,
        critical_value: cv,
        reject,
        argmax: stat.argmax,
        breakdate,
        t_hat: breakdate.map(|k| t_of(k, n)),
        eta_hat_sq: (!eta.is_degenerate()).then_some(eta.value),
        trim,
        diagnostics,
    };
    let plot = plot_rows(config, &process, kernel.as_ref(), eta_used, trim, cv)?;
    Ok((report, plot))
}

fn plot_rows(
    config: &TestConfig,
    process: &CusumProcess,
    kernel: Option<&HeteroKernel>,
    eta: Option<f64>,
    trim: Option<TrimSpec>,
    cv: f64,
) -> Result<PlotData> {
    let n = process.n();
    let ln_n = (n as f64).ln();
    let root_n = (n as f64).sqrt();
    let window = match trim {
        Some(t) => Some(renyi_window(n, &t)?),
        None => None,
    };
    let rows = process
        .grid()
        .map(|k| {
            let tt = t_one_minus_t(k, n);
            let threshold = match (&config.statistic, kernel) {
                (Statistic::WeightedSup(w), None) => {
                    Some(cv * eta.unwrap_or(1.0) * weight_at(w, k, n))
                }
                (Statistic::WeightedSup(w), Some(_)) => Some(cv * weight_at(w, k, n)),
                (Statistic::DarlingErdos, None) => {
                    let m = eta.unwrap_or(1.0) * (cv + b_norm(ln_n)) / a_norm(ln_n);
                    Some(root_n * tt * m / ((k * (n - k)) as f64 / n as f64).sqrt())
                }
                (Statistic::DarlingErdos, Some(g)) => {
                    let gd = g.g_diag_at(k);
                    (gd > G_FLOOR).then(|| gd.sqrt() * (cv + b_norm(ln_n)) / a_norm(ln_n))
                }
                (Statistic::Renyi { kappa, .. }, None) => {
                    let t = trim.expect("trim");
                    let inside = window.as_ref().is_some_and(|w| w.contains(&k));
                    let pre = (t.r_min() as f64 / n as f64).powf(kappa - 0.5);
                    inside.then(|| cv * eta.unwrap_or(1.0) * tt.powf(*kappa) / pre)
                }
                (Statistic::Renyi { kappa, .. }, Some(g)) => {
                    let r = trim.expect("trim").r_min();
                    let (nn, m, kk) = (n as u128, (n + 1) as u128, k as u128);
                    let inside = kk * nn > r as u128 * m && kk * nn < (n - r) as u128 * m;
                    let gd = g.g_diag_at(k);
                    let pre = (r as f64 / n as f64).powf(kappa - 0.5);
                    (inside && gd > G_FLOOR).then(|| cv * gd.sqrt() * tt.powf(kappa - 0.5) / pre)
                }
            };
            PlotRow {
                k,
                t: cusum::t_of(k, n),
                value: process.value_at(k),
                threshold,
            }
        })
        .collect();
    Ok(PlotData {
        process: match kernel {
            Some(_) => "qbar".into(),
            None => "q".into(),
        },
        rows,
    })
}

/// Breaks found by binary segmentation, in chronological order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangepointSet {
    /// `(index, report)`: `index` is the last observation of the earlier regime
    /// in the full series; the report belongs to the segment where it was found.
    pub breaks: Vec<(usize, TestReport)>,
    pub min_segment: usize,
    pub notes: Vec<String>,
}

impl ChangepointSet {
    pub fn indices(&self) -> Vec<usize> {
        self.breaks.iter().map(|b| b.0).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.breaks.is_empty()
    }
}

type Found = (Vec<(usize, TestReport)>, Vec<String>);

fn segment_rec(
    series: &TimeSeries,
    start: usize,
    end: usize,
    config: &TestConfig,
    min_segment: usize,
    memo: &CvMemo,
    top: bool,
) -> Result<Found> {
    if end - start < min_segment.max(MIN_TEST_N) {
        return Ok((Vec::new(), Vec::new()));
    }
    let sub = if top {
        series.clone()
    } else {
        series.segment(start, end)?
    };
    let report = match run_test_with(&sub, config, memo) {
        Ok(r) => r,
        Err(e) if !top && (e.is_degenerate() || matches!(e, Error::SeriesTooShort { .. })) => {
            return Ok((
                Vec::new(),
                vec![format!("segment [{start}, {end}] not tested: {e}")],
            ));
        }
        Err(e) => return Err(e),
    };
    let Some(k) = report.breakdate else {
        return Ok((Vec::new(), Vec::new()));
    };
    let at = start + k;
    let (left, right) = rayon::join(
        || segment_rec(series, start, at, config, min_segment, memo, false),
        || segment_rec(series, at, end, config, min_segment, memo, false),
    );
    let (mut breaks, mut notes) = left?;
    let (rb, rn) = right?;
    breaks.push((at, report));
    breaks.extend(rb);
    notes.extend(rn);
    Ok((breaks, notes))
}

/// Tests the whole sample and, after each rejection, both sides of the
/// estimated break, until nothing is rejected or segments get shorter than
/// `min_segment`. The same `alpha` is used at every level.
pub fn binary_segmentation(
    series: &TimeSeries,
    config: &TestConfig,
    min_segment: usize,
) -> Result<ChangepointSet> {
    binary_segmentation_with(series, config, min_segment, &CvMemo::new())
}

pub fn binary_segmentation_with(
    series: &TimeSeries,
    config: &TestConfig,
    min_segment: usize,
    memo: &CvMemo,
) -> Result<ChangepointSet> {
    if min_segment < DEFAULT_MIN_SEGMENT {
        return Err(Error::InvalidParameter(format!(
            "min_segment must be >= {DEFAULT_MIN_SEGMENT}, got {min_segment}"
        )));
    }
    config.validate()?;
    series.require_n(MIN_TEST_N)?;
    let (breaks, notes) = segment_rec(series, 0, series.n(), config, min_segment, memo, true)?;
    Ok(ChangepointSet {
        breaks,
        min_segment,
        notes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rca::{simulate_rca, BreakAt, RcaParams, RcaSimSpec, RegimeBreak, RegimeSpec};

    fn kolmogorov() -> TestConfig {
        TestConfig::new(
            Statistic::for_kappa(0.0).unwrap(),
            VarianceMode::Homoskedastic,
            0.05,
            CvSource::Analytic,
        )
    }

    fn noiseless(n: usize, breaks: Vec<RegimeBreak>) -> TimeSeries {
        let params = RcaParams::new(-1.0, 0.0, 0.0).unwrap();
        simulate_rca(
            &RcaSimSpec::new(params, n, 0)
                .with_burn_in(0)
                .with_y0(1.0)
                .with_regimes(RegimeSpec { breaks }),
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(kolmogorov().validate().is_ok());
        let mut c = kolmogorov();
        c.variance_mode = VarianceMode::HeteroRobust;
        assert!(matches!(c.validate(), Err(Error::IncompatibleConfig(_))));
        c.cv_source = CvSource::fnl(1);
        assert!(c.validate().is_ok());
        let r = TestConfig::new(
            Statistic::Renyi {
                kappa: 0.5,
                trim: None,
            },
            VarianceMode::Homoskedastic,
            0.05,
            CvSource::simulated(1),
        );
        assert!(r.validate().is_err());
        let a = TestConfig::new(
            Statistic::for_kappa(0.75).unwrap(),
            VarianceMode::Homoskedastic,
            0.05,
            CvSource::Analytic,
        );
        assert!(a.validate().is_err());
        assert_eq!(Statistic::for_kappa(0.5).unwrap(), Statistic::DarlingErdos);
    }

    #[test]
    fn noiseless_break_rejected_at_true_split() {
        let n = 200;
        let s = noiseless(n, vec![RegimeBreak::beta(BreakAt::Index(n / 2), 1.0)]);
        let r = run_test(&s, &kolmogorov()).unwrap();
        assert!(r.reject);
        assert_eq!(r.breakdate, Some(n / 2));
        assert_eq!(r.t_hat, Some(100.0 / 201.0));
    }

    #[test]
    fn decision_matches_comparison() {
        let params = RcaParams::new(0.5, 0.01, 0.5).unwrap();
        for seed in 0..10 {
            let s = simulate_rca(&RcaSimSpec::new(params, 200, seed)).unwrap();
            let r = run_test(&s, &kolmogorov()).unwrap();
            assert_eq!(r.reject, r.statistic_value > r.critical_value);
            assert_eq!(r.breakdate.is_some(), r.reject);
        }
    }

    #[test]
    fn plot_rows_cover_grid() {
        let params = RcaParams::new(0.5, 0.01, 0.5).unwrap();
        let s = simulate_rca(&RcaSimSpec::new(params, 150, 4)).unwrap();
        let memo = CvMemo::new();
        let (rep, plot) = run_test_detailed(&s, &kolmogorov(), &memo).unwrap();
        assert_eq!(plot.rows.len(), 150 - 3);
        // the process crosses the boundary exactly when the test rejects
        let crosses = plot
            .rows
            .iter()
            .any(|r| r.threshold.is_some_and(|t| r.value.abs() > t));
        assert_eq!(crosses, rep.reject);
    }

    #[test]
    fn two_noiseless_breaks_segmented() {
        let n = 300;
        let s = noiseless(
            n,
            vec![
                RegimeBreak::beta(BreakAt::Index(100), 1.0),
                RegimeBreak::beta(BreakAt::Index(200), -1.0),
            ],
        );
        let set = binary_segmentation(&s, &kolmogorov(), 20).unwrap();
        assert_eq!(set.indices(), vec![100, 200], "{:#?}", set);
        assert!(binary_segmentation(&s, &kolmogorov(), 10).is_err());
    }
}
