// SPDX-License-Identifier: MIT OR Apache-2.0

//! Weighted least squares estimates of the deterministic coefficient with
//! weights `1 + y_{i-1}^2`, evaluated at every split point from cumulative
//! sums, plus the stationarity-agnostic variance estimator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rca::TimeSeries;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Forward and backward cumulative sums of the WLS summands.
///
/// For `i = 2..=N` the summands are `d_i = y_{i-1}^2 / (1 + y_{i-1}^2)` and
/// `m_i = y_i y_{i-1} / (1 + y_{i-1}^2)`. `prefix_*[k]` sums over `i = 2..=k`
/// and `suffix_*[k]` over `i = k..=N`; both arrays have length `N + 2` with
/// empty sums at the ends. Right-hand estimates read the suffix arrays, so a
/// short right segment never suffers cancellation against the full total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumulantTable {
    prefix_den: Vec<f64>,
    prefix_num: Vec<f64>,
    suffix_den: Vec<f64>,
    suffix_num: Vec<f64>,
    n: usize,
}

pub(crate) fn wls_terms(y_prev: f64, y: f64) -> (f64, f64) {
    if y_prev.abs() > 1e100 {
        // y_prev^2 would overflow for explosive paths
        let r = 1.0 / y_prev;
        let d = 1.0 / (1.0 + r * r);
        return (d, y * r * d);
    }
    let w = 1.0 + y_prev * y_prev;
    (y_prev * y_prev / w, y * y_prev / w)
}

/// `(y - beta y_prev) y_prev / (1 + y_prev^2)` without intermediate overflow.
pub(crate) fn wls_score(y_prev: f64, y: f64, beta: f64) -> f64 {
    let r = y - beta * y_prev;
    if y_prev.abs() > 1e100 {
        let inv = 1.0 / y_prev;
        return r * inv / (1.0 + inv * inv);
    }
    r / (1.0 + y_prev * y_prev) * y_prev
}

pub fn build_cumulants(series: &TimeSeries) -> Result<CumulantTable> {
    series.require_n(4)?;
    let y = series.values();
    let n = series.n();

    let mut prefix_den = vec![0.0; n + 2];
    let mut prefix_num = vec![0.0; n + 2];
    let (mut sd, mut sm) = (CompensatedSum::default(), CompensatedSum::default());
    for i in 2..=n {
        let (d, m) = wls_terms(y[i - 1], y[i]);
        sd.add(d);
        sm.add(m);
        prefix_den[i] = sd.value();
        prefix_num[i] = sm.value();
    }
    prefix_den[n + 1] = prefix_den[n];
    prefix_num[n + 1] = prefix_num[n];

    let mut suffix_den = vec![0.0; n + 2];
    let mut suffix_num = vec![0.0; n + 2];
    let (mut sd, mut sm) = (CompensatedSum::default(), CompensatedSum::default());
    for i in (2..=n).rev() {
        let (d, m) = wls_terms(y[i - 1], y[i]);
        sd.add(d);
        sm.add(m);
        suffix_den[i] = sd.value();
        suffix_num[i] = sm.value();
    }
    suffix_den[0] = suffix_den[2];
    suffix_den[1] = suffix_den[2];
    suffix_num[0] = suffix_num[2];
    suffix_num[1] = suffix_num[2];

    Ok(CumulantTable {
        prefix_den,
        prefix_num,
        suffix_den,
        suffix_num,
        n,
    })
}

impl CumulantTable {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Sum of `d_i` over `i = 2..=k`.
    pub fn den_upto(&self, k: usize) -> f64 {
        self.prefix_den[k.min(self.n)]
    }

    pub fn num_upto(&self, k: usize) -> f64 {
        self.prefix_num[k.min(self.n)]
    }

    /// Sum of `d_i` over `i = k+1..=N`.
    pub fn den_after(&self, k: usize) -> f64 {
        self.suffix_den[(k + 1).min(self.n + 1)]
    }

    pub fn num_after(&self, k: usize) -> f64 {
        self.suffix_num[(k + 1).min(self.n + 1)]
    }

    pub fn den_total(&self) -> f64 {
        self.prefix_den[self.n]
    }

    pub fn num_total(&self) -> f64 {
        self.prefix_num[self.n]
    }

    /// WLS estimate over `i = 2..=k`.
    pub fn beta_hat_left(&self, k: usize) -> Result<f64> {
        if k < 2 || k > self.n {
            return Err(Error::InvalidParameter(format!(
                "left split {k} outside [2, {}]",
                self.n
            )));
        }
        let den = self.den_upto(k);
        if den <= 0.0 {
            return Err(Error::DegenerateSegment { start: 2, end: k });
        }
        Ok(self.num_upto(k) / den)
    }

    /// WLS estimate over `i = k+1..=N`.
    pub fn beta_hat_right(&self, k: usize) -> Result<f64> {
        if k < 1 || k >= self.n {
            return Err(Error::InvalidParameter(format!(
                "right split {k} outside [1, {}]",
                self.n - 1
            )));
        }
        let den = self.den_after(k);
        if den <= 0.0 {
            return Err(Error::DegenerateSegment {
                start: k + 1,
                end: self.n,
            });
        }
        Ok(self.num_after(k) / den)
    }

    /// Full-sample estimate `beta_hat_{N,1}`.
    pub fn beta_hat_full(&self) -> Result<f64> {
        self.beta_hat_left(self.n)
    }

    /// Left-minus-right difference at split `k`, or `None` if either side is degenerate.
    pub(crate) fn split_difference(&self, k: usize) -> Option<f64> {
        let l = self.beta_hat_left(k).ok()?;
        let r = self.beta_hat_right(k).ok()?;
        Some(l - r)
    }
}

pub fn beta_hat_left(table: &CumulantTable, k: usize) -> Result<f64> {
    table.beta_hat_left(k)
}

pub fn beta_hat_right(table: &CumulantTable, k: usize) -> Result<f64> {
    table.beta_hat_right(k)
}

/// Ratio estimator of the long-run variance of the CUSUM limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaHatSq {
    pub a_hat_1: f64,
    pub a_hat_2: f64,
    pub value: f64,
}

impl EtaHatSq {
    /// Zero residual variance: the statistic cannot be standardised.
    pub fn is_degenerate(&self) -> bool {
        !(self.value > 0.0 && self.value.is_finite())
    }

    pub fn eta(&self) -> f64 {
        self.value.sqrt()
    }
}

pub fn eta_hat_sq(series: &TimeSeries, table: &CumulantTable) -> Result<EtaHatSq> {
    let beta = table.beta_hat_full()?;
    let y = series.values();
    let n = table.n();
    let mut a1 = CompensatedSum::default();
    for i in 2..=n {
        let u = wls_score(y[i - 1], y[i], beta);
        a1.add(u * u);
    }
    let scale = (n - 1) as f64;
    let a_hat_1 = a1.value() / scale;
    let a_hat_2 = table.den_total() / scale;
    if a_hat_2 <= 0.0 {
        return Err(Error::DegenerateSeries("all lagged values are zero".into()));
    }
    Ok(EtaHatSq {
        a_hat_1,
        a_hat_2,
        value: a_hat_1 / (a_hat_2 * a_hat_2),
    })
}
