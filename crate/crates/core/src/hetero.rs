// SPDX-License-Identifier: MIT OR Apache-2.0

//! Heteroskedasticity-robust CUSUM process
//! `Qbar_N(t) = N^{1/2} c1(t) c2(t) (beta_left - beta_right)` and the
//! estimated covariance kernel `g(t, s)` of its limit.

use serde::{Deserialize, Serialize};

use crate::cusum::{
    a_norm, b_norm, check_renyi_kappa, weight_at, ArgMax, CusumProcess, Scaling, StatResult,
};
use crate::error::{Error, Result};
use crate::estimators::{wls_score, CompensatedSum, CumulantTable};
use crate::rca::TimeSeries;
use crate::weights::{TrimSpec, WeightSpec};

/// Kernel points with `g(t,t)` at or below this are left out of sups.
pub const G_FLOOR: f64 = 1e-12;

/// Estimated `c1`, `b` and the diagonal of `g` for one series.
///
/// `c1(t) = N^{-1} sum_{i=2}^{floor((N+1)t)} y_{i-1}^2/(1+y_{i-1}^2)` and
/// `b(t) = N^{-1} sum_{i=2}^{floor((N+1)t)} u_i^2` with the full-sample WLS score
/// `u_i = (y_i - beta_hat y_{i-1}) y_{i-1} / (1 + y_{i-1}^2)`. Both use the
/// same upper index, so `g(t,t)` is the variance of `Qbar` at every grid point:
/// with the full-sample estimate the scores sum to zero and
/// `Qbar(k) = c1(1) N^{-1/2} sum_{i<=k} u_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeteroKernel {
    n: usize,
    beta_full: f64,
    /// `c1` at upper summation index `j = 0..=N`.
    c1_cum: Vec<f64>,
    /// `b` at upper summation index `j = 0..=N`.
    b_cum: Vec<f64>,
    /// `u_j^2 / N` for `j = 0..=N` (zero for `j < 2`).
    b_inc: Vec<f64>,
    /// `g(t,t)` on the grid `k = 2..=N-2`.
    g_diag: Vec<f64>,
}

pub fn build_kernel(series: &TimeSeries, table: &CumulantTable) -> Result<HeteroKernel> {
    let n = table.n();
    if series.n() != n {
        return Err(Error::InvalidParameter(
            "table does not belong to this series".into(),
        ));
    }
    series.require_n(8)?;
    let beta_full = table.beta_hat_full().map_err(|_| {
        Error::DegenerateSeries("full-sample estimate undefined: all lagged values are zero".into())
    })?;
    let y = series.values();
    let nf = n as f64;

    let mut c1_cum = vec![0.0; n + 1];
    let mut b_cum = vec![0.0; n + 1];
    let mut b_inc = vec![0.0; n + 1];
    let mut bsum = CompensatedSum::default();
    for j in 2..=n {
        c1_cum[j] = table.den_upto(j) / nf;
        let u = wls_score(y[j - 1], y[j], beta_full);
        b_inc[j] = u * u / nf;
        bsum.add(b_inc[j]);
        b_cum[j] = bsum.value();
    }

    let mut kernel = HeteroKernel {
        n,
        beta_full,
        c1_cum,
        b_cum,
        b_inc,
        g_diag: Vec::new(),
    };
    kernel.g_diag = (2..=n - 2)
        .map(|k| {
            let c1 = kernel.c1_grid(k);
            let c2 = kernel.c2_grid(k);
            let b = kernel.b_grid(k);
            c2 * c2 * b + c1 * c1 * (kernel.b_total() - b)
        })
        .collect();
    Ok(kernel)
}

fn index_floor(x: f64, cap: usize) -> usize {
    if x <= 0.0 {
        0
    } else {
        // tolerate representation error at exact grid points
        ((x + 1e-9).floor() as usize).min(cap)
    }
}

impl HeteroKernel {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn beta_full(&self) -> f64 {
        self.beta_full
    }

    /// `c1(1)`.
    pub fn c1_total(&self) -> f64 {
        self.c1_cum[self.n]
    }

    /// `b(1)`.
    pub fn b_total(&self) -> f64 {
        self.b_cum[self.n]
    }

    pub fn c1(&self, t: f64) -> f64 {
        self.c1_cum[index_floor((self.n + 1) as f64 * t, self.n)]
    }

    pub fn c2(&self, t: f64) -> f64 {
        self.c1_total() - self.c1(t)
    }

    pub fn b(&self, t: f64) -> f64 {
        self.b_cum[index_floor((self.n + 1) as f64 * t, self.n)]
    }

    /// `c1(k/(N+1))`.
    pub fn c1_grid(&self, k: usize) -> f64 {
        self.c1_cum[k.min(self.n)]
    }

    pub fn c2_grid(&self, k: usize) -> f64 {
        self.c1_total() - self.c1_grid(k)
    }

    /// `b(k/(N+1))`.
    pub fn b_grid(&self, k: usize) -> f64 {
        self.b_cum[k.min(self.n)]
    }

    /// Diagonal `g(t,t)` on `k = 2..=N-2`.
    pub fn g_diag(&self) -> &[f64] {
        &self.g_diag
    }

    pub fn g_diag_at(&self, k: usize) -> f64 {
        if k < 2 || k > self.n - 2 {
            0.0
        } else {
            self.g_diag[k - 2]
        }
    }

    /// `g(t,s) = c1(1)^2 b(min(t,s)) - c1(1)(c1(t) b(s) + c1(s) b(t)) + c1(t) c1(s) b(1)`.
    pub fn g(&self, t: f64, s: f64) -> f64 {
        let cc = self.c1_total();
        let (ct, cs) = (self.c1(t), self.c1(s));
        let (bt, bs) = (self.b(t), self.b(s));
        cc * cc * self.b(t.min(s)) - cc * (ct * bs + cs * bt) + ct * cs * self.b_total()
    }

    /// Scaled score increments `u_j^2 / N`.
    pub(crate) fn b_increments(&self) -> &[f64] {
        &self.b_inc
    }
}

pub fn qbar_process(
    series: &TimeSeries,
    table: &CumulantTable,
    kernel: &HeteroKernel,
) -> Result<CusumProcess> {
    series.require_n(8)?;
    let n = table.n();
    if kernel.n() != n {
        return Err(Error::InvalidParameter(
            "kernel does not belong to this series".into(),
        ));
    }
    let root_n = (n as f64).sqrt();
    let mut values = Vec::with_capacity(n - 3);
    let mut degenerate = Vec::new();
    for k in 2..=n - 2 {
        match table.split_difference(k) {
            Some(d) => values.push(root_n * kernel.c1_grid(k) * kernel.c2_grid(k) * d),
            None => {
                degenerate.push(k);
                values.push(0.0);
            }
        }
    }
    Ok(CusumProcess::from_values(n, values, Scaling::Hetero)?.with_degenerate(degenerate))
}

fn check_pair(qbar: &CusumProcess, kernel: &HeteroKernel) -> Result<()> {
    if qbar.n() != kernel.n() {
        return Err(Error::InvalidParameter(
            "process and kernel sizes differ".into(),
        ));
    }
    Ok(())
}

/// `a(ln N) sup |Qbar(t)| / g(t,t)^{1/2} - b(ln N)` over grid points with `g > 1e-12`.
pub fn hetero_de_stat(qbar: &CusumProcess, kernel: &HeteroKernel) -> Result<StatResult> {
    check_pair(qbar, kernel)?;
    let mut best = ArgMax::new();
    let mut usable = false;
    for k in qbar.grid() {
        let g = kernel.g_diag_at(k);
        if g > G_FLOOR {
            usable = true;
            best.push(k, qbar.value_at(k).abs() / g.sqrt());
        }
    }
    if !usable {
        return Err(Error::EmptyWindow);
    }
    let ln_n = (qbar.n() as f64).ln();
    let (m, argmax) = best.finish();
    Ok(StatResult {
        value: a_norm(ln_n) * m - b_norm(ln_n),
        argmax,
    })
}

/// `(r_N/N)^{kappa-1/2} sup_{t1<t<t2} (t(1-t))^{1/2-kappa} |Qbar(t)| / g(t,t)^{1/2}`
/// with `t1 = r_N/N`, `t2 = 1 - t1`.
pub fn hetero_renyi_stat(
    qbar: &CusumProcess,
    kernel: &HeteroKernel,
    kappa: f64,
    trim: &TrimSpec,
) -> Result<StatResult> {
    check_renyi_kappa(kappa)?;
    check_pair(qbar, kernel)?;
    let n = qbar.n();
    trim.check(n)?;
    let r = trim.r_min();
    let (nn, m) = (n as u128, (n + 1) as u128);
    let mut best = ArgMax::new();
    let mut usable = false;
    for k in qbar.grid() {
        let kk = k as u128;
        // t1 < k/(N+1) < 1 - t1
        if kk * nn <= r as u128 * m || kk * nn >= (n - r) as u128 * m {
            continue;
        }
        let g = kernel.g_diag_at(k);
        if g > G_FLOOR {
            usable = true;
            let tt = crate::cusum::t_one_minus_t(k, n);
            best.push(k, tt.powf(0.5 - kappa) * qbar.value_at(k).abs() / g.sqrt());
        }
    }
    if !usable {
        return Err(Error::EmptyWindow);
    }
    let (sup, argmax) = best.finish();
    Ok(StatResult {
        value: (r as f64 / n as f64).powf(kappa - 0.5) * sup,
        argmax,
    })
}

/// `sup |Qbar(t)| / w(t)`; the nuisance kernel enters through the critical value.
pub fn hetero_weighted_sup(qbar: &CusumProcess, weight: &WeightSpec) -> Result<StatResult> {
    weight.validate()?;
    if qbar.degenerate_splits().len() >= qbar.values().len() {
        return Err(Error::DegenerateSeries(
            "no split has two usable segments".into(),
        ));
    }
    let n = qbar.n();
    let mut best = ArgMax::new();
    for k in qbar.grid() {
        best.push(k, qbar.value_at(k).abs() / weight_at(weight, k, n));
    }
    let (value, argmax) = best.finish();
    Ok(StatResult { value, argmax })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::build_cumulants;
    use crate::rca::{simulate_rca, BreakAt, RcaParams, RcaSimSpec, RegimeBreak, RegimeSpec};

    fn sample(n: usize, seed: u64) -> (TimeSeries, CumulantTable, HeteroKernel) {
        let params = RcaParams::new(0.5, 0.01, 0.5).unwrap();
        let s = simulate_rca(&RcaSimSpec::new(params, n, seed)).unwrap();
        let t = build_cumulants(&s).unwrap();
        let k = build_kernel(&s, &t).unwrap();
        (s, t, k)
    }

    #[test]
    fn kernel_boundaries() {
        let (_, _, k) = sample(100, 1);
        assert_eq!(k.c1(1.5 / 101.0), 0.0);
        assert_eq!(k.b(1.5 / 101.0), 0.0);
        assert_eq!(k.g(1.5 / 101.0, 1.5 / 101.0), 0.0);
        assert!(k.g(1.0, 1.0).abs() < 1e-15);
        assert_eq!(k.c2(1.0), 0.0);
    }

    #[test]
    fn kernel_identities() {
        let (_, _, k) = sample(300, 2);
        let cc = k.c1_total();
        for j in 2..=297 {
            assert_eq!(k.c2_grid(j), cc - k.c1_grid(j));
            assert!(k.c1_grid(j) >= k.c1_grid(j - 1));
            assert!(k.b_grid(j) >= k.b_grid(j - 1));
            assert!(k.g_diag_at(j) >= -1e-12);
            let t = j as f64 / 301.0;
            let lit = k.g(t, t);
            assert!(
                (lit - k.g_diag_at(j)).abs() < 1e-12,
                "{lit} vs {}",
                k.g_diag_at(j)
            );
            let s = (j as f64 * 0.37) % 1.0;
            assert_eq!(k.g(t, s), k.g(s, t));
        }
    }

    #[test]
    fn noiseless_break_located() {
        // |y_i| = 1 throughout, so every weight is exactly 1/2
        let params = RcaParams::new(-1.0, 0.0, 0.0).unwrap();
        let spec = RcaSimSpec::new(params, 120, 0)
            .with_burn_in(0)
            .with_y0(1.0)
            .with_regimes(RegimeSpec {
                breaks: vec![RegimeBreak::beta(BreakAt::Index(60), 1.0)],
            });
        let s = simulate_rca(&spec).unwrap();
        let t = build_cumulants(&s).unwrap();
        let k = build_kernel(&s, &t).unwrap();
        let q = qbar_process(&s, &t, &k).unwrap();
        let r = hetero_weighted_sup(&q, &WeightSpec::unweighted()).unwrap();
        assert_eq!(r.argmax, Some(60));
    }

    #[test]
    fn zero_process_statistics() {
        let (_, _, k) = sample(200, 3);
        let z = CusumProcess::from_values(200, vec![0.0; 197], Scaling::Hetero).unwrap();
        let de = hetero_de_stat(&z, &k).unwrap();
        assert!((de.value + b_norm((200f64).ln())).abs() < 1e-14);
        let trim = TrimSpec::default_for(200);
        assert_eq!(hetero_renyi_stat(&z, &k, 0.75, &trim).unwrap().value, 0.0);
    }

    #[test]
    fn degenerate_series() {
        let z = TimeSeries::new(vec![0.0; 40], "z").unwrap();
        let t = build_cumulants(&z).unwrap();
        assert!(matches!(
            build_kernel(&z, &t),
            Err(Error::DegenerateSeries(_))
        ));
    }
}
