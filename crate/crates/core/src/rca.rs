// SPDX-License-Identifier: MIT OR Apache-2.0

//! RCA(1) data generation and stationarity diagnostics.
//!
//! The process is `y_i = (beta + e1_i) * y_{i-1} + e2_i` with independent
//! Gaussian `e1 ~ N(0, sigma1_sq)` and `e2 ~ N(0, sigma2_sq)`. Regimes may
//! change the deterministic coefficient and scale either variance from a
//! given index onwards.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Magnitude beyond which a simulated path is treated as overflowed.
pub const OVERFLOW_BOUND: f64 = 1e300;

pub const DEFAULT_BURN_IN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RcaParams {
    /// Deterministic autoregressive coefficient.
    pub beta0: f64,
    /// Variance of the coefficient noise.
    pub sigma1_sq: f64,
    /// Variance of the additive noise.
    pub sigma2_sq: f64,
}

impl RcaParams {
    pub fn new(beta0: f64, sigma1_sq: f64, sigma2_sq: f64) -> Result<Self> {
        let p = Self {
            beta0,
            sigma1_sq,
            sigma2_sq,
        };
        p.validate()?;
        Ok(p)
    }

    /// Checks the model invariants. `sigma2_sq = 0` is tolerated only
    /// together with `sigma1_sq = 0`, i.e. for fully noiseless recursions.
    pub fn validate(&self) -> Result<()> {
        if !self.beta0.is_finite() {
            return Err(Error::InvalidParameter("beta0 must be finite".into()));
        }
        if !(self.sigma1_sq >= 0.0 && self.sigma1_sq.is_finite()) {
            return Err(Error::InvalidParameter(
                "sigma1_sq must be finite and >= 0".into(),
            ));
        }
        if !(self.sigma2_sq >= 0.0 && self.sigma2_sq.is_finite()) {
            return Err(Error::InvalidParameter(
                "sigma2_sq must be finite and >= 0".into(),
            ));
        }
        if self.sigma2_sq == 0.0 && self.sigma1_sq > 0.0 {
            return Err(Error::InvalidParameter(
                "sigma2_sq must be > 0 unless the recursion is noiseless".into(),
            ));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma1_sq == 0.0 && self.sigma2_sq == 0.0
    }
}

/// Where a regime change takes effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakAt {
    /// `tau` in (0,1); the new regime starts at index `floor(N tau) + 1`.
    Fraction(f64),
    /// Last index of the previous regime; the new regime starts at `m + 1`.
    Index(usize),
}

impl BreakAt {
    /// Last index of the previous regime for a sample of size `n`.
    pub fn resolve(&self, n: usize) -> Result<usize> {
        match *self {
            BreakAt::Fraction(tau) => {
                if !(tau > 0.0 && tau < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "break fraction {tau} outside (0,1)"
                    )));
                }
                Ok((n as f64 * tau).floor() as usize)
            }
            BreakAt::Index(m) => {
                if m == 0 || m >= n {
                    return Err(Error::InvalidParameter(format!(
                        "break index {m} outside [1, {})",
                        n
                    )));
                }
                Ok(m)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeBreak {
    pub at: BreakAt,
    /// New deterministic coefficient from the break on.
    pub beta: Option<f64>,
    /// Multiplier on the base `sigma1_sq`.
    pub variance_scale_1: Option<f64>,
    /// Multiplier on the base `sigma2_sq`.
    pub variance_scale_2: Option<f64>,
}

impl RegimeBreak {
    pub fn beta(at: BreakAt, beta: f64) -> Self {
        Self {
            at,
            beta: Some(beta),
            variance_scale_1: None,
            variance_scale_2: None,
        }
    }

    pub fn variance(at: BreakAt, scale_1: Option<f64>, scale_2: Option<f64>) -> Self {
        Self {
            at,
            beta: None,
            variance_scale_1: scale_1,
            variance_scale_2: scale_2,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegimeSpec {
    pub breaks: Vec<RegimeBreak>,
}

/// Per-index parameters after resolving a [`RegimeSpec`] against `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Regime {
    start: usize,
    beta: f64,
    sd1: f64,
    sd2: f64,
}

impl RegimeSpec {
    pub fn none() -> Self {
        Self::default()
    }

    fn resolve(&self, params: &RcaParams, n: usize) -> Result<Vec<Regime>> {
        let mut regimes = vec![Regime {
            start: 1,
            beta: params.beta0,
            sd1: params.sigma1_sq.sqrt(),
            sd2: params.sigma2_sq.sqrt(),
        }];
        let mut last_m = 0usize;
        for b in &self.breaks {
            if b.beta.is_none() && b.variance_scale_1.is_none() && b.variance_scale_2.is_none() {
                return Err(Error::InvalidParameter(
                    "a regime break must change at least one field".into(),
                ));
            }
            if let Some(beta) = b.beta {
                if !beta.is_finite() {
                    return Err(Error::InvalidParameter("regime beta must be finite".into()));
                }
            }
            for s in [b.variance_scale_1, b.variance_scale_2]
                .into_iter()
                .flatten()
            {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(Error::InvalidParameter(
                        "variance scales must be > 0".into(),
                    ));
                }
            }
            let m = b.at.resolve(n)?;
            if m <= last_m {
                return Err(Error::InvalidParameter(format!(
                    "regime breaks must be strictly increasing (index {m} after {last_m})"
                )));
            }
            last_m = m;
            let prev = *regimes.last().expect("non-empty");
            regimes.push(Regime {
                start: m + 1,
                beta: b.beta.unwrap_or(prev.beta),
                sd1: b
                    .variance_scale_1
                    .map_or(prev.sd1, |s| (s * params.sigma1_sq).sqrt()),
                sd2: b
                    .variance_scale_2
                    .map_or(prev.sd2, |s| (s * params.sigma2_sq).sqrt()),
            });
        }
        Ok(regimes)
    }

    /// Deterministic coefficient in force at retained index `i` (1-based).
    pub fn beta_at(&self, params: &RcaParams, n: usize, i: usize) -> Result<f64> {
        let regimes = self.resolve(params, n)?;
        Ok(regimes
            .iter()
            .rev()
            .find(|r| r.start <= i)
            .map_or(params.beta0, |r| r.beta))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcaSimSpec {
    pub params: RcaParams,
    pub regimes: RegimeSpec,
    /// Retained sample size N (the series holds N + 1 values).
    pub n: usize,
    pub burn_in: usize,
    /// Initial value before burn-in.
    pub y0: f64,
    pub seed: u64,
}

impl RcaSimSpec {
    pub fn new(params: RcaParams, n: usize, seed: u64) -> Self {
        Self {
            params,
            regimes: RegimeSpec::none(),
            n,
            burn_in: DEFAULT_BURN_IN,
            y0: 0.0,
            seed,
        }
    }

    pub fn with_regimes(mut self, regimes: RegimeSpec) -> Self {
        self.regimes = regimes;
        self
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_y0(mut self, y0: f64) -> Self {
        self.y0 = y0;
        self
    }
}

/// An observed or simulated sequence `y_0, ..., y_N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    values: Vec<f64>,
    pub label: String,
}

impl TimeSeries {
    pub fn new(values: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::SeriesTooShort {
                needed: 1,
                got: values.len().saturating_sub(1),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(Self {
            values,
            label: label.into(),
        })
    }

    /// Sample size N (number of values excluding `y_0`).
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sub-series `y_start, ..., y_end` (inclusive), with `y_start` as its initial value.
    pub fn segment(&self, start: usize, end: usize) -> Result<TimeSeries> {
        if start >= end || end > self.n() {
            return Err(Error::InvalidParameter(format!(
                "invalid segment [{start}, {end}] for n = {}",
                self.n()
            )));
        }
        Ok(TimeSeries {
            values: self.values[start..=end].to_vec(),
            label: format!("{}[{start}..={end}]", self.label),
        })
    }

    pub(crate) fn require_n(&self, needed: usize) -> Result<()> {
        if self.n() < needed {
            return Err(Error::SeriesTooShort {
                needed,
                got: self.n(),
            });
        }
        Ok(())
    }
}

/// Draws one RCA(1) path. Identical specs give bit-identical output.
pub fn simulate_rca(spec: &RcaSimSpec) -> Result<TimeSeries> {
    spec.params.validate()?;
    if spec.n < 10 {
        return Err(Error::SeriesTooShort {
            needed: 10,
            got: spec.n,
        });
    }
    if !spec.y0.is_finite() {
        return Err(Error::InvalidParameter("y0 must be finite".into()));
    }
    let regimes = spec.regimes.resolve(&spec.params, spec.n)?;
    let mut rng = rng::stream(spec.seed, &[0x5243_4131]);

    let base = regimes[0];
    let mut y = spec.y0;
    let step = |y_prev: f64, r: &Regime, rng: &mut rng::StreamRng| -> f64 {
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        (r.beta + r.sd1 * z1) * y_prev + r.sd2 * z2
    };

    for s in 0..spec.burn_in {
        y = step(y, &base, &mut rng);
        if !(y.abs() <= OVERFLOW_BOUND) {
            return Err(Error::Overflow {
                step: s + 1,
                index: None,
            });
        }
    }

    let mut values = Vec::with_capacity(spec.n + 1);
    values.push(y);
    let mut current = 0usize;
    for i in 1..=spec.n {
        while current + 1 < regimes.len() && regimes[current + 1].start <= i {
            current += 1;
        }
        y = step(y, &regimes[current], &mut rng);
        if !(y.abs() <= OVERFLOW_BOUND) {
            return Err(Error::Overflow {
                step: spec.burn_in + i,
                index: Some(i),
            });
        }
        values.push(y);
    }
    TimeSeries::new(
        values,
        format!("rca(beta0={}, seed={})", spec.params.beta0, spec.seed),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    /// Estimate of `E ln|beta0 + e1|`.
    pub value: f64,
    pub std_error: f64,
    /// Draws where `beta0 + e1` was exactly zero and the log was clipped.
    pub clipped: usize,
}

impl LyapunovEstimate {
    /// Negative exponent: the recursion has a strictly stationary solution.
    pub fn is_stationary(&self) -> bool {
        self.value < 0.0
    }
}

/// Floor applied to `ln|beta0 + e1|` when the argument is exactly zero.
const LOG_CLIP: f64 = -745.0;

/// Monte Carlo estimate of the top Lyapunov exponent `E ln|beta0 + e1|`.
pub fn estimate_lyapunov(
    params: &RcaParams,
    n_draws: usize,
    seed: u64,
) -> Result<LyapunovEstimate> {
    params.validate()?;
    if n_draws < 10_000 {
        return Err(Error::InvalidParameter("n_draws must be >= 10^4".into()));
    }
    if params.sigma1_sq == 0.0 {
        let v = params.beta0.abs().ln();
        let clipped = usize::from(v == f64::NEG_INFINITY);
        if clipped > 0 {
            log::warn!("beta0 = 0 with no coefficient noise: log clipped");
        }
        return Ok(LyapunovEstimate {
            value: v.max(LOG_CLIP),
            std_error: 0.0,
            clipped,
        });
    }
    let sd = params.sigma1_sq.sqrt();
    let mut rng = rng::stream(seed, &[0x4C59_4150]);
    let mut clipped = 0usize;
    // Welford accumulation
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 0..n_draws {
        let z: f64 = rng.sample(StandardNormal);
        let mut v = (params.beta0 + sd * z).abs().ln();
        if v == f64::NEG_INFINITY {
            clipped += 1;
            v = LOG_CLIP;
        }
        let d = v - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (v - mean);
    }
    if clipped > 0 {
        log::warn!("{clipped} zero coefficients clipped in Lyapunov estimate");
    }
    let var = m2 / (n_draws - 1) as f64;
    Ok(LyapunovEstimate {
        value: mean,
        std_error: (var / n_draws as f64).sqrt(),
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noiseless(beta0: f64) -> RcaParams {
        RcaParams::new(beta0, 0.0, 0.0).unwrap()
    }

    #[test]
    fn noiseless_geometric_recursion() {
        let spec = RcaSimSpec::new(noiseless(0.5), 10, 1)
            .with_burn_in(0)
            .with_y0(1.0);
        let s = simulate_rca(&spec).unwrap();
        assert_eq!(&s.values()[..6], &[1.0, 0.5, 0.25, 0.125, 0.0625, 0.03125]);
        assert_eq!(s.n(), 10);
    }

    #[test]
    fn noiseless_power_law_within_tolerance() {
        let spec = RcaSimSpec::new(noiseless(1.01), 200, 3)
            .with_burn_in(0)
            .with_y0(2.0);
        let s = simulate_rca(&spec).unwrap();
        for (i, &v) in s.values().iter().enumerate() {
            let exact = 2.0 * 1.01f64.powi(i as i32);
            assert!(((v - exact) / exact).abs() < 1e-12, "i={i}");
        }
    }

    #[test]
    fn regime_change_applies_after_floor_index() {
        let n = 20;
        let regimes = RegimeSpec {
            breaks: vec![RegimeBreak::beta(BreakAt::Fraction(0.5), 0.7)],
        };
        let spec = RcaSimSpec::new(noiseless(0.5), n, 0)
            .with_burn_in(0)
            .with_y0(1.0)
            .with_regimes(regimes.clone());
        let s = simulate_rca(&spec).unwrap();
        let y = s.values();
        for i in 1..=n {
            let expected = if i <= 10 { 0.5 } else { 0.7 };
            assert!((y[i] / y[i - 1] - expected).abs() < 1e-12, "i={i}");
            assert_eq!(regimes.beta_at(&spec.params, n, i).unwrap(), expected);
        }
    }

    #[test]
    fn explicit_index_break() {
        let regimes = RegimeSpec {
            breaks: vec![RegimeBreak::beta(BreakAt::Index(9), 0.7)],
        };
        let spec = RcaSimSpec::new(noiseless(0.5), 20, 0)
            .with_burn_in(0)
            .with_y0(1.0)
            .with_regimes(regimes);
        let y = simulate_rca(&spec).unwrap().values().to_vec();
        assert!((y[9] / y[8] - 0.5).abs() < 1e-12);
        assert!((y[10] / y[9] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_regimes() {
        let p = RcaParams::new(0.5, 0.01, 0.5).unwrap();
        let tie = RegimeSpec {
            breaks: vec![
                RegimeBreak::beta(BreakAt::Fraction(0.5), 0.7),
                RegimeBreak::beta(BreakAt::Index(50), 0.9),
            ],
        };
        assert!(simulate_rca(&RcaSimSpec::new(p, 100, 0).with_regimes(tie)).is_err());
        let empty = RegimeSpec {
            breaks: vec![RegimeBreak::variance(BreakAt::Fraction(0.3), None, None)],
        };
        assert!(simulate_rca(&RcaSimSpec::new(p, 100, 0).with_regimes(empty)).is_err());
        let outside = RegimeSpec {
            breaks: vec![RegimeBreak::beta(BreakAt::Fraction(1.0), 0.7)],
        };
        assert!(simulate_rca(&RcaSimSpec::new(p, 100, 0).with_regimes(outside)).is_err());
        assert!(RcaParams::new(0.5, 0.1, 0.0).is_err());
        assert!(RcaParams::new(0.5, -0.1, 1.0).is_err());
    }

    #[test]
    fn reproducible_per_seed() {
        let p = RcaParams::new(0.75, 0.01, 0.5).unwrap();
        let a = simulate_rca(&RcaSimSpec::new(p, 300, 42)).unwrap();
        let b = simulate_rca(&RcaSimSpec::new(p, 300, 42)).unwrap();
        let c = simulate_rca(&RcaSimSpec::new(p, 300, 43)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn heteroskedastic_second_half_variance() {
        // with beta0 = 0 and no coefficient noise, y_i = e2_i exactly
        let p = RcaParams::new(0.0, 0.0, 0.5).unwrap();
        let n = 40_000;
        let regimes = RegimeSpec {
            breaks: vec![RegimeBreak::variance(
                BreakAt::Fraction(0.5),
                Some(1.5),
                Some(1.5),
            )],
        };
        let s = simulate_rca(&RcaSimSpec::new(p, n, 9).with_regimes(regimes)).unwrap();
        let y = s.values();
        let var = |xs: &[f64]| xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64;
        let ratio = var(&y[n / 2 + 1..]) / var(&y[1..=n / 2]);
        // sd of the ratio is about sqrt(2/20000) * 1.5 * sqrt(2) = 0.021
        assert!((ratio - 1.5).abs() < 0.07, "ratio {ratio}");
    }

    #[test]
    fn explosive_overflow_is_reported() {
        let p = RcaParams::new(3.0, 0.01, 0.5).unwrap();
        match simulate_rca(&RcaSimSpec::new(p, 2000, 1).with_burn_in(0)) {
            Err(Error::Overflow { index: Some(i), .. }) => assert!(i > 100 && i < 2000),
            other => panic!("expected overflow, got {other:?}"),
        }
        match simulate_rca(&RcaSimSpec::new(p, 20, 1)) {
            Err(Error::Overflow { index: None, .. }) => {}
            other => panic!("expected burn-in overflow, got {other:?}"),
        }
    }

    #[test]
    fn lyapunov_degenerate_noise() {
        let est = estimate_lyapunov(&noiseless(0.5), 10_000, 0).unwrap();
        assert_eq!(est.value, 0.5f64.ln());
        assert!(est.is_stationary());
        let zero = estimate_lyapunov(&noiseless(0.0), 10_000, 0).unwrap();
        assert_eq!(zero.clipped, 1);
        assert!(zero.value.is_finite());
    }

    #[test]
    fn lyapunov_standard_normal_log() {
        // E ln|Z| = -(gamma + ln 2)/2, evaluated with 30-digit quadrature
        let oracle = -0.635_181_422_730_739_1;
        let p = RcaParams::new(0.0, 1.0, 1.0).unwrap();
        let est = estimate_lyapunov(&p, 400_000, 11).unwrap();
        assert!(
            (est.value - oracle).abs() < 3.0 * est.std_error,
            "{} vs {oracle} (se {})",
            est.value,
            est.std_error
        );
    }
}
