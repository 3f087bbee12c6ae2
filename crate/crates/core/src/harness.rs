// SPDX-License-Identifier: MIT OR Apache-2.0

//! Monte Carlo size and power experiments.
//!
//! Every replication draws one path per `(beta_0, N, rep)` and runs all
//! requested `kappa` on it, so cells share random numbers across `kappa`
//! and across break sizes.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::critical::{DEFAULT_GRID, DEFAULT_L, DEFAULT_REPS};
use crate::detector::{run_test_with, CvMemo, CvSource, Statistic, TestConfig, VarianceMode};
use crate::error::{Error, Result};
use crate::rca::{
    simulate_rca, BreakAt, RcaParams, RcaSimSpec, RegimeBreak, RegimeSpec, DEFAULT_BURN_IN,
};
use crate::rng;

/// Which innovations switch to a larger variance after `N/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeteroCase {
    HomoHomo,
    HomoHet2,
    Het1Homo,
    Het1Het2,
}

impl HeteroCase {
    fn scales(self, factor: f64) -> (Option<f64>, Option<f64>) {
        match self {
            HeteroCase::HomoHomo => (None, None),
            HeteroCase::HomoHet2 => (None, Some(factor)),
            HeteroCase::Het1Homo => (Some(factor), None),
            HeteroCase::Het1Het2 => (Some(factor), Some(factor)),
        }
    }
}

/// Alternative: `beta_0 + delta` from `i >= 0.5 N` (`Mid`) or `i >= 0.9 N` (`End`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakKind {
    None,
    Mid(f64),
    End(f64),
}

impl BreakKind {
    pub fn delta(self) -> f64 {
        match self {
            BreakKind::None => 0.0,
            BreakKind::Mid(d) | BreakKind::End(d) => d,
        }
    }

    pub fn with_delta(self, delta: f64) -> Self {
        match self {
            BreakKind::None => BreakKind::None,
            BreakKind::Mid(_) => BreakKind::Mid(delta),
            BreakKind::End(_) => BreakKind::End(delta),
        }
    }

    /// Last index before the coefficient changes: first changed index is
    /// `ceil(0.5 N)` or `ceil(0.9 N)`.
    fn last_unchanged(self, n: usize) -> Option<usize> {
        match self {
            BreakKind::None => None,
            BreakKind::Mid(_) => Some(n.div_ceil(2) - 1),
            BreakKind::End(_) => Some((9 * n).div_ceil(10) - 1),
        }
    }
}

/// How each `kappa` is tested.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestPolicy {
    /// Robust tests: `F_{N,L}` below 1/2, finite-sample Darling-Erdős at 1/2,
    /// simulated Rényi limits above.
    HeteroRobust {
        l: usize,
        cv_reps: usize,
        cv_grid: usize,
    },
    /// Scalar-variance tests. With `asymptotic`, closed forms are used where
    /// they exist (Kolmogorov, Gumbel-type, Rényi at `kappa = 1`).
    Homoskedastic {
        asymptotic: bool,
        cv_reps: usize,
        cv_grid: usize,
    },
}

impl TestPolicy {
    pub fn paper_2021() -> Self {
        TestPolicy::HeteroRobust {
            l: DEFAULT_L,
            cv_reps: DEFAULT_REPS,
            cv_grid: DEFAULT_GRID,
        }
    }

    pub fn homoskedastic_asymptotic() -> Self {
        TestPolicy::Homoskedastic {
            asymptotic: true,
            cv_reps: DEFAULT_REPS,
            cv_grid: DEFAULT_GRID,
        }
    }

    /// Test configuration for `kappa`; `cv_seed` seeds simulated critical
    /// values and `rep_seed` the per-replication `F_{N,L}` paths.
    pub fn config(
        &self,
        kappa: f64,
        alpha: f64,
        cv_seed: u64,
        rep_seed: u64,
    ) -> Result<TestConfig> {
        let statistic = Statistic::for_kappa(kappa)?;
        Ok(match self {
            TestPolicy::HeteroRobust {
                l,
                cv_reps,
                cv_grid,
            } => {
                let cv_source = if kappa < 0.5 {
                    CvSource::Fnl {
                        l: *l,
                        seed: rep_seed,
                    }
                } else {
                    CvSource::Simulated {
                        reps: *cv_reps,
                        grid: *cv_grid,
                        seed: cv_seed,
                    }
                };
                TestConfig::new(statistic, VarianceMode::HeteroRobust, alpha, cv_source)
            }
            TestPolicy::Homoskedastic {
                asymptotic,
                cv_reps,
                cv_grid,
            } => {
                let closed = kappa == 0.0 || kappa == 0.5 || kappa == 1.0;
                let cv_source = if *asymptotic && closed {
                    CvSource::Analytic
                } else {
                    CvSource::Simulated {
                        reps: *cv_reps,
                        grid: *cv_grid,
                        seed: cv_seed,
                    }
                };
                TestConfig::new(statistic, VarianceMode::Homoskedastic, alpha, cv_source)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Innovation variances; `beta0` is replaced per cell.
    pub dgp: RcaParams,
    pub burn_in: usize,
    pub beta0s: Vec<f64>,
    pub n_list: Vec<usize>,
    pub kappas: Vec<f64>,
    pub break_kind: BreakKind,
    pub hetero_case: HeteroCase,
    /// Variance multiplier after `N/2` in the heteroskedastic cases.
    pub hetero_factor: f64,
    pub reps: usize,
    pub alpha: f64,
    pub seed: u64,
    pub policy: TestPolicy,
}

impl ExperimentSpec {
    /// Defaults of the reference design: `sigma1^2 = 0.01`, `sigma2^2 = 0.5`,
    /// burn-in 1000, variance factor 1.5, 2000 replications at 5%.
    pub fn paper_2021(hetero_case: HeteroCase, break_kind: BreakKind) -> Self {
        Self {
            dgp: RcaParams {
                beta0: 0.5,
                sigma1_sq: 0.01,
                sigma2_sq: 0.5,
            },
            burn_in: DEFAULT_BURN_IN,
            beta0s: vec![0.5, 0.75, 1.0, 1.05],
            n_list: vec![200, 400, 800, 1600],
            kappas: vec![0.0, 0.25, 0.45, 0.5, 0.51, 0.75, 0.85, 1.0],
            break_kind,
            hetero_case,
            hetero_factor: 1.5,
            reps: 2000,
            alpha: 0.05,
            seed: 2021,
            policy: TestPolicy::paper_2021(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.reps == 0 {
            return Err(Error::InvalidParameter("reps must be >= 1".into()));
        }
        if self.reps < 100 {
            log::warn!("{} replications: frequencies are very noisy", self.reps);
        }
        if self.kappas.iter().any(|k| !(*k >= 0.0)) {
            return Err(Error::InvalidParameter("all kappa must be >= 0".into()));
        }
        if self.beta0s.is_empty() || self.n_list.is_empty() || self.kappas.is_empty() {
            return Err(Error::InvalidParameter("empty experiment grid".into()));
        }
        if !(self.hetero_factor > 0.0) {
            return Err(Error::InvalidParameter("hetero factor must be > 0".into()));
        }
        Ok(())
    }

    /// Regime changes for one cell: the variance switch after `N/2` and the
    /// coefficient break, merged when they fall on the same index.
    pub fn regimes(&self, beta0: f64, n: usize) -> RegimeSpec {
        let mut breaks: Vec<RegimeBreak> = Vec::new();
        let (s1, s2) = self.hetero_case.scales(self.hetero_factor);
        if s1.is_some() || s2.is_some() {
            breaks.push(RegimeBreak::variance(BreakAt::Index(n / 2), s1, s2));
        }
        let delta = self.break_kind.delta();
        if delta != 0.0 {
            if let Some(m) = self.break_kind.last_unchanged(n) {
                match breaks.iter_mut().find(|b| b.at == BreakAt::Index(m)) {
                    Some(b) => b.beta = Some(beta0 + delta),
                    None => breaks.push(RegimeBreak::beta(BreakAt::Index(m), beta0 + delta)),
                }
            }
        }
        breaks.sort_by_key(|b| match b.at {
            BreakAt::Index(m) => m,
            BreakAt::Fraction(_) => 0,
        });
        RegimeSpec { breaks }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub beta0: f64,
    pub n: usize,
    pub kappa: f64,
    pub delta: f64,
    pub rejections: usize,
    pub reps: usize,
    pub frequency: f64,
    /// `1.96 sqrt(p(1-p)/reps)`.
    pub half_width: f64,
    /// Paths that overflowed and were redrawn.
    pub overflow_redraws: usize,
    /// Replications where the test could not be computed (counted as non-rejections).
    pub failures: usize,
}

impl Cell {
    /// Tolerance for comparing against a reference frequency: `max(floor, 2 half_width)`.
    pub fn tolerance(&self, floor: f64) -> f64 {
        floor.max(2.0 * self.half_width)
    }
}

pub fn half_width(p: f64, reps: usize) -> f64 {
    1.96 * (p * (1.0 - p) / reps as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionTable {
    pub cells: Vec<Cell>,
    pub reps: usize,
    pub alpha: f64,
    pub break_kind: BreakKind,
    pub hetero_case: HeteroCase,
    pub policy: TestPolicy,
}

impl RejectionTable {
    pub fn get(&self, beta0: f64, n: usize, kappa: f64, delta: f64) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.beta0 == beta0 && c.n == n && c.kappa == kappa && c.delta == delta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// One block per `delta`: rows are `kappa`, columns `beta_0` then `N`.
    pub fn to_delimited(&self) -> String {
        let mut beta0s: Vec<f64> = Vec::new();
        let mut ns: Vec<usize> = Vec::new();
        let mut kappas: Vec<f64> = Vec::new();
        let mut deltas: Vec<f64> = Vec::new();
        for c in &self.cells {
            push_unique(&mut beta0s, c.beta0);
            if !ns.contains(&c.n) {
                ns.push(c.n);
            }
            push_unique(&mut kappas, c.kappa);
            push_unique(&mut deltas, c.delta);
        }
        let mut out = String::new();
        for d in &deltas {
            writeln!(out, "# delta={d} reps={} alpha={}", self.reps, self.alpha).expect("write");
            let mut header = vec!["kappa".to_string()];
            for b in &beta0s {
                for n in &ns {
                    header.push(format!("beta={b};N={n}"));
                }
            }
            writeln!(out, "{}", header.join(",")).expect("write");
            for k in &kappas {
                let mut row = vec![k.to_string()];
                for b in &beta0s {
                    for n in &ns {
                        row.push(
                            self.get(*b, *n, *k, *d)
                                .map(|c| format!("{:.3}", c.frequency))
                                .unwrap_or_default(),
                        );
                    }
                }
                writeln!(out, "{}", row.join(",")).expect("write");
            }
        }
        out
    }
}

fn push_unique(v: &mut Vec<f64>, x: f64) {
    if !v.contains(&x) {
        v.push(x);
    }
}

const MAX_REDRAWS: u64 = 100;

struct RepOutcome {
    rejects: Vec<bool>,
    failures: Vec<bool>,
    redraws: usize,
}

fn run_cell_group(spec: &ExperimentSpec, beta0: f64, n: usize, memo: &CvMemo) -> Result<Vec<Cell>> {
    let params = RcaParams { beta0, ..spec.dgp };
    params.validate()?;
    let regimes = spec.regimes(beta0, n);
    let delta = spec.break_kind.delta();
    let one_rep = |r: usize| -> Result<RepOutcome> {
        let mut redraws = 0;
        let series = loop {
            // the path seed ignores delta and break kind: common random numbers
            let seed = rng::derive_seed(
                spec.seed,
                &[rng::tag(beta0), n as u64, r as u64, redraws as u64],
            );
            let sim = RcaSimSpec {
                params,
                regimes: regimes.clone(),
                n,
                burn_in: spec.burn_in,
                y0: 0.0,
                seed,
            };
            match simulate_rca(&sim) {
                Ok(s) => break s,
                Err(Error::Overflow { .. }) if (redraws as u64) < MAX_REDRAWS => redraws += 1,
                Err(e) => return Err(e),
            }
        };
        let mut rejects = Vec::with_capacity(spec.kappas.len());
        let mut failures = Vec::with_capacity(spec.kappas.len());
        for (j, &kappa) in spec.kappas.iter().enumerate() {
            let rep_seed = rng::derive_seed(
                spec.seed ^ 0xF1,
                &[rng::tag(beta0), n as u64, r as u64, j as u64],
            );
            let config = spec.policy.config(kappa, spec.alpha, spec.seed, rep_seed)?;
            match run_test_with(&series, &config, memo) {
                Ok(rep) => {
                    rejects.push(rep.reject);
                    failures.push(false);
                }
                Err(e) if e.is_degenerate() => {
                    rejects.push(false);
                    failures.push(true);
                }
                Err(e) => return Err(e),
            }
        }
        Ok(RepOutcome {
            rejects,
            failures,
            redraws,
        })
    };
    // the first replication runs alone so shared critical values are computed once
    let mut outcomes = vec![one_rep(0)?];
    let rest: Vec<Result<RepOutcome>> = (1..spec.reps).into_par_iter().map(one_rep).collect();
    for o in rest {
        outcomes.push(o?);
    }
    let redraws: usize = outcomes.iter().map(|o| o.redraws).sum();
    if redraws > 0 {
        log::info!("beta0={beta0} N={n}: {redraws} overflowed path(s) redrawn");
    }
    Ok(spec
        .kappas
        .iter()
        .enumerate()
        .map(|(j, &kappa)| {
            let rejections = outcomes.iter().filter(|o| o.rejects[j]).count();
            let p = rejections as f64 / spec.reps as f64;
            Cell {
                beta0,
                n,
                kappa,
                delta,
                rejections,
                reps: spec.reps,
                frequency: p,
                half_width: half_width(p, spec.reps),
                overflow_redraws: redraws,
                failures: outcomes.iter().filter(|o| o.failures[j]).count(),
            }
        })
        .collect())
}

fn run(spec: &ExperimentSpec, memo: &CvMemo) -> Result<RejectionTable> {
    spec.validate()?;
    let mut cells = Vec::new();
    for &beta0 in &spec.beta0s {
        for &n in &spec.n_list {
            cells.extend(run_cell_group(spec, beta0, n, memo)?);
        }
    }
    Ok(RejectionTable {
        cells,
        reps: spec.reps,
        alpha: spec.alpha,
        break_kind: spec.break_kind,
        hetero_case: spec.hetero_case,
        policy: spec.policy.clone(),
    })
}

/// Rejection frequencies under the null.
pub fn size_experiment(spec: &ExperimentSpec) -> Result<RejectionTable> {
    size_experiment_with(spec, &CvMemo::new())
}

pub fn size_experiment_with(spec: &ExperimentSpec, memo: &CvMemo) -> Result<RejectionTable> {
    if spec.break_kind != BreakKind::None {
        return Err(Error::IncompatibleConfig(
            "size experiments need break_kind = None".into(),
        ));
    }
    run(spec, memo)
}

/// Rejection frequencies under a mid- or end-of-sample break.
pub fn power_experiment(spec: &ExperimentSpec) -> Result<RejectionTable> {
    power_experiment_with(spec, &CvMemo::new())
}

pub fn power_experiment_with(spec: &ExperimentSpec, memo: &CvMemo) -> Result<RejectionTable> {
    if spec.break_kind == BreakKind::None {
        return Err(Error::IncompatibleConfig(
            "power experiments need a break".into(),
        ));
    }
    run(spec, memo)
}

/// Power over a grid of break sizes; one table with a block per `delta`.
pub fn power_curve(spec: &ExperimentSpec, deltas: &[f64]) -> Result<RejectionTable> {
    let memo = CvMemo::new();
    let mut out: Option<RejectionTable> = None;
    for &d in deltas {
        let s = ExperimentSpec {
            break_kind: spec.break_kind.with_delta(d),
            ..spec.clone()
        };
        let t = power_experiment_with(&s, &memo)?;
        match out.as_mut() {
            Some(o) => o.cells.extend(t.cells),
            None => out = Some(t),
        }
    }
    out.ok_or_else(|| Error::InvalidParameter("no break sizes given".into()))
}

/// Break sizes used when none are given: `0.05, 0.10, ..., 0.50`.
pub fn default_deltas() -> Vec<f64> {
    (1..=10).map(|j| j as f64 * 0.05).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(break_kind: BreakKind) -> ExperimentSpec {
        ExperimentSpec {
            beta0s: vec![0.5],
            n_list: vec![100],
            kappas: vec![0.0, 1.0],
            reps: 100,
            policy: TestPolicy::homoskedastic_asymptotic(),
            ..ExperimentSpec::paper_2021(HeteroCase::HomoHomo, break_kind)
        }
    }

    #[test]
    fn break_indices() {
        assert_eq!(BreakKind::Mid(0.1).last_unchanged(400), Some(199));
        assert_eq!(BreakKind::End(0.1).last_unchanged(400), Some(359));
        assert_eq!(BreakKind::Mid(0.1).last_unchanged(401), Some(200));
        let mut s = small(BreakKind::Mid(0.2));
        s.hetero_case = HeteroCase::Het1Het2;
        let r = s.regimes(0.5, 401);
        // variance switch after N/2 = 200 coincides with the break
        assert_eq!(r.breaks.len(), 1);
        assert_eq!(r.breaks[0].beta, Some(0.7));
        let r = s.regimes(0.5, 400);
        assert_eq!(r.breaks.len(), 2);
        assert_eq!(r.breaks[0].at, BreakAt::Index(199));
        assert!(small(BreakKind::Mid(0.0))
            .regimes(0.5, 400)
            .breaks
            .is_empty());
    }

    #[test]
    fn single_rep_frequency_is_binary() {
        let mut s = small(BreakKind::None);
        s.reps = 1;
        let t = size_experiment(&s).unwrap();
        for c in &t.cells {
            assert!(c.frequency == 0.0 || c.frequency == 1.0);
        }
    }

    #[test]
    fn zero_break_reproduces_size() {
        let size = size_experiment(&small(BreakKind::None)).unwrap();
        let power = power_experiment(&small(BreakKind::Mid(0.0))).unwrap();
        for (a, b) in size.cells.iter().zip(&power.cells) {
            assert_eq!(a.rejections, b.rejections);
        }
        assert!(size_experiment(&small(BreakKind::Mid(0.1))).is_err());
        assert!(power_experiment(&small(BreakKind::None)).is_err());
    }

    #[test]
    fn table_outputs() {
        let t = size_experiment(&small(BreakKind::None)).unwrap();
        let text = t.to_delimited();
        assert!(text.contains("kappa,beta=0.5;N=100"));
        assert_eq!(text.lines().count(), 4);
        let back = RejectionTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
    }
}
