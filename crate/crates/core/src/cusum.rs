// SPDX-License-Identifier: MIT OR Apache-2.0

//! The CUSUM process `Q_N(t) = N^{1/2} t(1-t) (beta_left - beta_right)` on
//! the grid `t = k/(N+1)`, `k = 2..=N-2`, and the statistics built from it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::CumulantTable;
use crate::rca::TimeSeries;
use crate::weights::{TrimSpec, WeightSpec};

/// Darling-Erdős norming `a(x) = (2 ln x)^{1/2}`.
pub fn a_norm(x: f64) -> f64 {
    (2.0 * x.ln()).sqrt()
}

/// Darling-Erdős centring `b(x) = 2 ln x + (1/2) ln ln x - (1/2) ln pi`.
pub fn b_norm(x: f64) -> f64 {
    2.0 * x.ln() + 0.5 * x.ln().ln() - 0.5 * std::f64::consts::PI.ln()
}

/// `t(1-t)` at `t = k/(N+1)`, symmetric in `k <-> N+1-k` bit for bit.
pub(crate) fn t_one_minus_t(k: usize, n: usize) -> f64 {
    let m = (n + 1) as f64;
    (k as f64) * ((n + 1 - k) as f64) / (m * m)
}

pub(crate) fn t_of(k: usize, n: usize) -> f64 {
    k as f64 / (n + 1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scaling {
    /// Divide by the scalar `eta_hat` when forming statistics.
    Homoskedastic,
    /// Robust process built from the estimated kernel.
    Hetero,
}

/// Values of a CUSUM-type process on the grid `k = 2..=N-2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CusumProcess {
    n: usize,
    values: Vec<f64>,
    scaling: Scaling,
    degenerate: Vec<usize>,
}

impl CusumProcess {
    /// Wraps precomputed grid values (`values[j]` belongs to `k = j + 2`).
    pub fn from_values(n: usize, values: Vec<f64>, scaling: Scaling) -> Result<Self> {
        if n < 5 || values.len() != n - 3 {
            return Err(Error::InvalidParameter(format!(
                "expected {} grid values for N = {n}, got {}",
                n.saturating_sub(3),
                values.len()
            )));
        }
        Ok(Self {
            n,
            values,
            scaling,
            degenerate: Vec::new(),
        })
    }

    pub(crate) fn with_degenerate(mut self, degenerate: Vec<usize>) -> Self {
        self.degenerate = degenerate;
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn grid(&self) -> std::ops::RangeInclusive<usize> {
        2..=self.n - 2
    }

    /// Value at split `k`; zero off the grid.
    pub fn value_at(&self, k: usize) -> f64 {
        if k < 2 || k > self.n - 2 {
            0.0
        } else {
            self.values[k - 2]
        }
    }

    /// Evaluation point `k/(N+1)`.
    pub fn t_at(&self, k: usize) -> f64 {
        t_of(k, self.n)
    }

    /// Splits where a segment had no usable observations.
    pub fn degenerate_splits(&self) -> &[usize] {
        &self.degenerate
    }

    fn all_degenerate(&self) -> bool {
        self.degenerate.len() >= self.values.len()
    }
}

/// A statistic and the split that attains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub value: f64,
    /// `None` when every candidate is zero.
    pub argmax: Option<usize>,
}

/// Running maximum with ties resolved to the first (smallest) split.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ArgMax {
    best: f64,
    at: Option<usize>,
}

impl ArgMax {
    pub(crate) fn new() -> Self {
        Self {
            best: 0.0,
            at: None,
        }
    }

    pub(crate) fn push(&mut self, k: usize, v: f64) {
        if v > self.best {
            self.best = v;
            self.at = Some(k);
        }
    }

    pub(crate) fn finish(self) -> (f64, Option<usize>) {
        (self.best, self.at)
    }
}

pub fn q_process(series: &TimeSeries, table: &CumulantTable) -> Result<CusumProcess> {
    series.require_n(8)?;
    let n = table.n();
    let root_n = (n as f64).sqrt();
    let mut values = Vec::with_capacity(n - 3);
    let mut degenerate = Vec::new();
    for k in 2..=n - 2 {
        match table.split_difference(k) {
            Some(d) => values.push(root_n * t_one_minus_t(k, n) * d),
            None => {
                degenerate.push(k);
                values.push(0.0);
            }
        }
    }
    Ok(CusumProcess {
        n,
        values,
        scaling: Scaling::Homoskedastic,
        degenerate,
    })
}

fn check_eta(eta_hat: f64) -> Result<()> {
    if !(eta_hat > 0.0 && eta_hat.is_finite()) {
        return Err(Error::DegenerateSeries(format!(
            "variance estimate must be positive, got eta = {eta_hat}"
        )));
    }
    Ok(())
}

/// `weight(t)` on the grid, using the exact symmetric `t(1-t)` for power weights.
pub(crate) fn weight_at(weight: &WeightSpec, k: usize, n: usize) -> f64 {
    match weight.kappa_value() {
        Some(0.0) => 1.0,
        Some(kappa) => t_one_minus_t(k, n).powf(kappa),
        None => weight.eval(t_of(k, n)),
    }
}

/// `sup_k |Q(k/(N+1))| / (eta_hat w(t))`.
pub fn weighted_sup(
    process: &CusumProcess,
    weight: &WeightSpec,
    eta_hat: f64,
) -> Result<StatResult> {
    check_eta(eta_hat)?;
    weight.validate()?;
    if process.all_degenerate() {
        return Err(Error::DegenerateSeries(
            "no split has two usable segments".into(),
        ));
    }
    let n = process.n;
    let mut best = ArgMax::new();
    for k in process.grid() {
        best.push(k, process.value_at(k).abs() / weight_at(weight, k, n));
    }
    let (v, at) = best.finish();
    Ok(StatResult {
        value: v / eta_hat,
        argmax: at,
    })
}

/// `a(ln N) M - b(ln N)`, strictly increasing in `M`.
pub fn darling_erdos_from_max(m: f64, n: usize) -> f64 {
    let ln_n = (n as f64).ln();
    a_norm(ln_n) * m - b_norm(ln_n)
}

/// Darling-Erdős statistic `a(ln N) M_N - b(ln N)` with
/// `M_N = eta^{-1} max_{1<k<N} (k(N-k)/N)^{1/2} |beta_left - beta_right|`.
pub fn darling_erdos_stat(table: &CumulantTable, eta_hat: f64) -> Result<StatResult> {
    check_eta(eta_hat)?;
    let n = table.n();
    if n < 20 {
        return Err(Error::SeriesTooShort { needed: 20, got: n });
    }
    let nf = n as f64;
    let mut best = ArgMax::new();
    let mut usable = false;
    for k in 2..n {
        if let Some(d) = table.split_difference(k) {
            usable = true;
            best.push(k, ((k * (n - k)) as f64 / nf).sqrt() * d.abs());
        }
    }
    if !usable {
        return Err(Error::DegenerateSeries(
            "no split has two usable segments".into(),
        ));
    }
    let (m, at) = best.finish();
    Ok(StatResult {
        value: darling_erdos_from_max(m / eta_hat, n),
        argmax: at,
    })
}

/// Grid splits with `r1/N <= k/(N+1) <= 1 - r2/N`.
pub fn renyi_window(n: usize, trim: &TrimSpec) -> Result<std::ops::RangeInclusive<usize>> {
    trim.check(n)?;
    let (n128, m128) = (n as u128, (n + 1) as u128);
    // smallest k with k N >= r1 (N+1)
    let lo = ((trim.r1 as u128 * m128).div_ceil(n128)) as usize;
    // largest k with k N <= (N - r2)(N+1)
    let hi = (((n - trim.r2) as u128 * m128) / n128) as usize;
    let lo = lo.max(2);
    let hi = hi.min(n - 2);
    if lo > hi {
        return Err(Error::EmptyWindow);
    }
    Ok(lo..=hi)
}

/// Window sup of `|Q| / (t(1-t))^kappa` without the `(r_N/N)^{kappa-1/2}` prefactor.
pub fn renyi_window_sup(process: &CusumProcess, kappa: f64, trim: &TrimSpec) -> Result<StatResult> {
    let n = process.n;
    let mut best = ArgMax::new();
    for k in renyi_window(n, trim)? {
        best.push(
            k,
            process.value_at(k).abs() / t_one_minus_t(k, n).powf(kappa),
        );
    }
    let (value, argmax) = best.finish();
    Ok(StatResult { value, argmax })
}

pub(crate) fn check_renyi_kappa(kappa: f64) -> Result<()> {
    if !(kappa > 0.5 && kappa.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "Renyi statistics need kappa > 1/2, got {kappa}"
        )));
    }
    Ok(())
}

/// `(r_N/N)^{kappa-1/2} eta^{-1} sup_{r1/N <= t <= 1-r2/N} |Q(t)| / (t(1-t))^kappa`.
pub fn renyi_stat(
    process: &CusumProcess,
    kappa: f64,
    trim: &TrimSpec,
    eta_hat: f64,
) -> Result<StatResult> {
    check_renyi_kappa(kappa)?;
    check_eta(eta_hat)?;
    let sup = renyi_window_sup(process, kappa, trim)?;
    let pre = (trim.r_min() as f64 / process.n as f64).powf(kappa - 0.5);
    Ok(StatResult {
        value: pre * sup.value / eta_hat,
        argmax: sup.argmax,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::build_cumulants;
    use crate::rca::{simulate_rca, BreakAt, RcaParams, RcaSimSpec, RegimeBreak, RegimeSpec};

    #[test]
    fn norming_constants() {
        let e = std::f64::consts::E;
        assert!((a_norm(e) - 2f64.sqrt()).abs() < 1e-15);
        assert!((b_norm(e) - (2.0 - 0.5 * std::f64::consts::PI.ln())).abs() < 1e-15);
        assert!((b_norm(e) - 1.427_64).abs() < 1e-5);
    }

    #[test]
    fn hand_process() {
        let p = CusumProcess::from_values(6, vec![0.0, 2.0, 1.0], Scaling::Homoskedastic).unwrap();
        let r = weighted_sup(&p, &WeightSpec::unweighted(), 2.0).unwrap();
        assert_eq!(r.value, 1.0);
        assert_eq!(r.argmax, Some(3));
        let z = CusumProcess::from_values(6, vec![0.0; 3], Scaling::Homoskedastic).unwrap();
        let r = weighted_sup(&z, &WeightSpec::unweighted(), 1.0).unwrap();
        assert_eq!((r.value, r.argmax), (0.0, None));
        assert_eq!(p.value_at(1), 0.0);
        assert_eq!(p.value_at(5), 0.0);
    }

    #[test]
    fn ties_go_to_smallest_split() {
        let p =
            CusumProcess::from_values(7, vec![1.0, 3.0, 3.0, 1.0], Scaling::Homoskedastic).unwrap();
        assert_eq!(
            weighted_sup(&p, &WeightSpec::unweighted(), 1.0)
                .unwrap()
                .argmax,
            Some(3)
        );
    }

    #[test]
    fn renyi_window_bounds() {
        let trim = TrimSpec::new(10, 20).unwrap();
        let w = renyi_window(100, &trim).unwrap();
        for k in w.clone() {
            let t = k as f64 / 101.0;
            assert!((0.1 - 1e-15..=0.8 + 1e-15).contains(&t));
        }
        assert!((*w.start() - 1) as f64 / 101.0 < 0.1);
        assert!((*w.end() + 1) as f64 / 101.0 > 0.8);
    }

    #[test]
    fn renyi_single_spike() {
        let n = 50;
        let mut v = vec![0.0; n - 3];
        v[20 - 2] = 4.0;
        let p = CusumProcess::from_values(n, v, Scaling::Homoskedastic).unwrap();
        let trim = TrimSpec::new(5, 5).unwrap();
        let r = renyi_stat(&p, 0.75, &trim, 2.0).unwrap();
        let t: f64 = 20.0 / 51.0;
        let expect = (5.0f64 / 50.0).powf(0.25) * 4.0 / (t * (1.0 - t)).powf(0.75) / 2.0;
        assert!((r.value - expect).abs() < 1e-12 * expect);
        assert_eq!(r.argmax, Some(20));
        let z = CusumProcess::from_values(n, vec![0.0; n - 3], Scaling::Homoskedastic).unwrap();
        assert_eq!(renyi_stat(&z, 0.51, &trim, 1.0).unwrap().value, 0.0);
        assert!(renyi_stat(&p, 0.5, &trim, 1.0).is_err());
        assert_eq!(
            renyi_window(50, &TrimSpec::new(24, 24).unwrap()).unwrap(),
            25..=26
        );
        assert!(renyi_stat(&p, 0.75, &TrimSpec::new(25, 25).unwrap(), 1.0).is_err());
    }

    #[test]
    fn noiseless_break_located_exactly() {
        let n = 200;
        let params = RcaParams::new(0.5, 0.0, 0.0).unwrap();
        let spec = RcaSimSpec::new(params, n, 1)
            .with_burn_in(0)
            .with_y0(1.0)
            .with_regimes(RegimeSpec {
                breaks: vec![RegimeBreak::beta(BreakAt::Index(100), 0.9)],
            });
        let s = simulate_rca(&spec).unwrap();
        let table = build_cumulants(&s).unwrap();
        let q = q_process(&s, &table).unwrap();
        let r = weighted_sup(&q, &WeightSpec::unweighted(), 1.0).unwrap();
        assert_eq!(r.argmax, Some(100));
        let de = darling_erdos_stat(&table, 1.0).unwrap();
        assert_eq!(de.argmax, Some(100));
    }

    #[test]
    fn de_strictly_increasing_in_max() {
        let mut prev = f64::NEG_INFINITY;
        for j in 0..100 {
            let v = darling_erdos_from_max(j as f64 * 0.1, 800);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn too_short_or_degenerate() {
        let s = TimeSeries::new(vec![1.0; 8], "s").unwrap();
        let t = build_cumulants(&s).unwrap();
        assert!(matches!(
            q_process(&s, &t),
            Err(Error::SeriesTooShort { .. })
        ));
        let z = TimeSeries::new(vec![0.0; 30], "z").unwrap();
        let tz = build_cumulants(&z).unwrap();
        let q = q_process(&z, &tz).unwrap();
        assert_eq!(q.degenerate_splits().len(), 26);
        assert!(weighted_sup(&q, &WeightSpec::unweighted(), 1.0).is_err());
        assert!(darling_erdos_stat(&tz, 1.0).is_err());
        let params = RcaParams::new(0.5, 0.01, 0.5).unwrap();
        let s = simulate_rca(&RcaSimSpec::new(params, 50, 3)).unwrap();
        let t = build_cumulants(&s).unwrap();
        let q = q_process(&s, &t).unwrap();
        assert!(weighted_sup(&q, &WeightSpec::unweighted(), 0.0).is_err());
    }
}
